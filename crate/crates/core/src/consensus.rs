//! Pairwise consensus-distance bookkeeping. Workers measure distances to
//! their neighbors each round; unconnected pairs get a shortest-path
//! estimate over the measured edges (the triangle inequality makes that an
//! upper bound), smoothed across rounds with an EMA. The ledger also
//! derives the per-worker and average upper bounds used by the controller,
//! and tracks the adaptive threshold as an EMA of average update norms.

use crate::graphtopo::Topology;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConsensusError {
    #[error("distance for pair ({0},{1}) must be finite and >= 0, got {2}")]
    BadDistance(usize, usize, f64),
    #[error("cannot record a distance from worker {0} to itself")]
    SelfPair(usize),
    #[error("observed-pair graph is disconnected; pair ({0},{1}) unreachable")]
    Disconnected(usize, usize),
    #[error("average update norm must be >= 0, got {0}")]
    NegativeNorm(f64),
}

/// Symmetric matrix of current pairwise distances plus the per-round
/// observation mask.
#[derive(Debug, Clone)]
pub struct DistanceLedger {
    n: usize,
    dist: Vec<f64>,
    observed: Vec<bool>,
    has_value: Vec<bool>,
    beta1: f64,
}

impl DistanceLedger {
    pub fn new(n: usize, beta1: f64) -> Self {
        DistanceLedger {
            n,
            dist: vec![0.0; n * n],
            observed: vec![false; n * n],
            has_value: vec![false; n * n],
            beta1,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.n + j]
    }

    /// Clears the observation mask for a new round; distances persist as
    /// history for the EMA.
    pub fn begin_round(&mut self) {
        self.observed.fill(false);
    }

    /// Records a directly measured distance. Last write wins.
    pub fn record_observed(&mut self, i: usize, j: usize, d: f64) -> Result<(), ConsensusError> {
        if i == j {
            return Err(ConsensusError::SelfPair(i));
        }
        if !d.is_finite() || d < 0.0 {
            return Err(ConsensusError::BadDistance(i, j, d));
        }
        for (a, b) in [(i, j), (j, i)] {
            self.dist[a * self.n + b] = d;
            self.observed[a * self.n + b] = true;
            self.has_value[a * self.n + b] = true;
        }
        Ok(())
    }

    /// All-pairs shortest paths over this round's observed edges.
    ///
    /// This is the raw estimate before smoothing: entry (i, j) is the
    /// cheapest chain of measured distances joining i and j, and therefore
    /// an upper bound on the true model distance.
    pub fn shortest_path_estimate(&self) -> Result<Vec<f64>, ConsensusError> {
        let n = self.n;
        let mut d = vec![f64::INFINITY; n * n];
        for i in 0..n {
            d[i * n + i] = 0.0;
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && self.observed[i * n + j] {
                    d[i * n + j] = self.dist[i * n + j];
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                let dik = d[i * n + k];
                if !dik.is_finite() {
                    continue;
                }
                for j in 0..n {
                    let through = dik + d[k * n + j];
                    if through < d[i * n + j] {
                        d[i * n + j] = through;
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                if !d[i * n + j].is_finite() {
                    return Err(ConsensusError::Disconnected(i, j));
                }
            }
        }
        Ok(d)
    }

    /// Fills every unobserved pair from the shortest-path estimate, blended
    /// with the previous round's value when one exists. Observed pairs keep
    /// their raw measurement.
    pub fn estimate_unobserved(&mut self) -> Result<(), ConsensusError> {
        let est = self.shortest_path_estimate()?;
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                if i == j || self.observed[i * n + j] {
                    continue;
                }
                let fresh = est[i * n + j];
                let blended = if self.has_value[i * n + j] {
                    (1.0 - self.beta1) * self.dist[i * n + j] + self.beta1 * fresh
                } else {
                    fresh
                };
                self.dist[i * n + j] = blended;
                self.has_value[i * n + j] = true;
            }
        }
        Ok(())
    }

    /// CSV dump: i, j, distance, observed flag. Debug aid, upper triangle
    /// only.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,distance,observed\n");
        for i in 0..self.n {
            for j in i + 1..self.n {
                out.push_str(&format!(
                    "{},{},{:.9e},{}\n",
                    i,
                    j,
                    self.distance(i, j),
                    u8::from(self.is_observed(i, j))
                ));
            }
        }
        out
    }
}

/// (1/N) sum over j of (1 - a_ij) D_ij: how far worker i can drift from the
/// average after aggregating over `topology`.
pub fn worker_bound(ledger: &DistanceLedger, topology: &Topology, i: usize) -> f64 {
    let n = ledger.n();
    let mut acc = 0.0;
    for j in 0..n {
        if j != i && !topology.has_edge(i, j) {
            acc += ledger.distance(i, j);
        }
    }
    acc / n as f64
}

/// Mean of the per-worker bounds, i.e. (1/N^2) of the double sum over
/// non-adjacent pairs.
pub fn average_bound(ledger: &DistanceLedger, topology: &Topology) -> f64 {
    let n = ledger.n();
    (0..n).map(|i| worker_bound(ledger, topology, i)).sum::<f64>() / n as f64
}

/// Adaptive ceiling on the estimated average consensus distance: an EMA of
/// the round's average local-update norm, seeded by the first observation.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdState {
    pub d_max: f64,
    pub beta2: f64,
    pub initialized: bool,
}

impl ThresholdState {
    pub fn new(beta2: f64) -> Self {
        ThresholdState {
            d_max: 0.0,
            beta2,
            initialized: false,
        }
    }

    pub fn update(&mut self, avg_update_norm: f64) -> Result<(), ConsensusError> {
        if !avg_update_norm.is_finite() || avg_update_norm < 0.0 {
            return Err(ConsensusError::NegativeNorm(avg_update_norm));
        }
        if self.initialized {
            self.d_max = (1.0 - self.beta2) * self.d_max + self.beta2 * avg_update_norm;
        } else {
            self.d_max = avg_update_norm;
            self.initialized = true;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    #[test]
    fn record_basics() {
        let mut l = DistanceLedger::new(4, 1.0);
        l.record_observed(1, 2, 0.0).unwrap();
        assert_eq!(l.distance(1, 2), 0.0);
        assert_eq!(l.distance(2, 1), 0.0);
        l.record_observed(1, 2, 5.0).unwrap();
        l.record_observed(1, 2, 3.0).unwrap();
        assert_eq!(l.distance(1, 2), 3.0, "last write wins");
        assert!(l.record_observed(1, 1, 1.0).is_err());
        assert!(l.record_observed(0, 1, -2.0).is_err());
        assert!(l.record_observed(0, 1, f64::NAN).is_err());
    }

    #[test]
    fn two_hop_chain_estimate() {
        let mut l = DistanceLedger::new(4, 1.0);
        l.record_observed(1, 2, 1.0).unwrap();
        l.record_observed(2, 3, 2.0).unwrap();
        l.record_observed(0, 1, 1.0).unwrap();
        l.estimate_unobserved().unwrap();
        assert!((l.distance(1, 3) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn observed_pairs_keep_their_measurement() {
        let mut l = DistanceLedger::new(3, 1.0);
        l.record_observed(0, 1, 1.0).unwrap();
        l.record_observed(1, 2, 2.0).unwrap();
        l.record_observed(0, 2, 10.0).unwrap();
        l.estimate_unobserved().unwrap();
        assert_eq!(l.distance(0, 2), 10.0, "no shortcut applied to observed pairs");
    }

    #[test]
    fn ema_blends_with_history() {
        // Round 1 measures (0,4) directly at 2; round 2 drops that link and
        // the unit path 0-1-2-3-4 estimates 4, blended to 3 at beta1 = 0.5.
        let mut l = DistanceLedger::new(5, 0.5);
        l.begin_round();
        for (i, j) in [(0, 1), (1, 2), (2, 3), (3, 4)] {
            l.record_observed(i, j, 1.0).unwrap();
        }
        l.record_observed(0, 4, 2.0).unwrap();
        l.estimate_unobserved().unwrap();

        l.begin_round();
        for (i, j) in [(0, 1), (1, 2), (2, 3), (3, 4)] {
            l.record_observed(i, j, 1.0).unwrap();
        }
        l.estimate_unobserved().unwrap();
        assert!((l.distance(0, 4) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn first_encounter_uses_pure_estimate() {
        let mut l = DistanceLedger::new(3, 0.25);
        l.record_observed(0, 1, 1.0).unwrap();
        l.record_observed(1, 2, 1.0).unwrap();
        l.estimate_unobserved().unwrap();
        // no history for (0,2): beta1 ignored on first encounter
        assert!((l.distance(0, 2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn disconnected_observations_error() {
        let mut l = DistanceLedger::new(4, 1.0);
        l.record_observed(0, 1, 1.0).unwrap();
        l.record_observed(2, 3, 1.0).unwrap();
        assert!(matches!(
            l.estimate_unobserved(),
            Err(ConsensusError::Disconnected(_, _))
        ));
    }

    #[test]
    fn estimates_satisfy_triangle_closure() {
        let mut rng = Rng::new(21);
        for _ in 0..25 {
            let n = 4 + rng.next_below(4);
            let mut l = DistanceLedger::new(n, 1.0);
            // random connected observation graph: a ring plus extras
            for i in 0..n {
                l.record_observed(i, (i + 1) % n, rng.range_f64(0.1, 5.0)).unwrap();
            }
            for i in 0..n {
                for j in i + 2..n {
                    if rng.next_f64() < 0.3 {
                        l.record_observed(i, j, rng.range_f64(0.1, 5.0)).unwrap();
                    }
                }
            }
            let est = l.shortest_path_estimate().unwrap();
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        assert!(
                            est[i * n + j] <= est[i * n + k] + est[k * n + j] + 1e-9,
                            "closure violated at ({i},{j},{k})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn worker_bound_cases() {
        let mut l = DistanceLedger::new(2, 1.0);
        l.record_observed(0, 1, 4.0).unwrap();
        let disconnected = Topology::empty(2);
        assert!((worker_bound(&l, &disconnected, 0) - 2.0).abs() < 1e-12);
        assert!((worker_bound(&l, &disconnected, 1) - 2.0).abs() < 1e-12);
        assert!((average_bound(&l, &disconnected) - 2.0).abs() < 1e-12);

        let full = Topology::full(2);
        assert_eq!(worker_bound(&l, &full, 0), 0.0);
        assert_eq!(average_bound(&l, &full), 0.0);
    }

    #[test]
    fn bounds_match_brute_force_on_random_instances() {
        let mut rng = Rng::new(22);
        for _ in 0..30 {
            let n = 4;
            let mut l = DistanceLedger::new(n, 1.0);
            let mut dvals = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    let d = rng.range_f64(0.0, 3.0);
                    l.record_observed(i, j, d).unwrap();
                    dvals[i][j] = d;
                    dvals[j][i] = d;
                }
            }
            let mut topo = Topology::empty(n);
            for i in 0..n {
                for j in i + 1..n {
                    if rng.next_f64() < 0.5 {
                        topo.set_edge(i, j, true);
                    }
                }
            }
            for i in 0..n {
                let mut direct = 0.0;
                for j in 0..n {
                    if j != i && !topo.has_edge(i, j) {
                        direct += dvals[i][j];
                    }
                }
                direct /= n as f64;
                assert!((worker_bound(&l, &topo, i) - direct).abs() < 1e-12);
            }
            let mean_of_worker: f64 =
                (0..n).map(|i| worker_bound(&l, &topo, i)).sum::<f64>() / n as f64;
            assert_eq!(average_bound(&l, &topo), mean_of_worker);
        }
    }

    #[test]
    fn threshold_seeding_and_ema() {
        let mut t = ThresholdState::new(0.1);
        t.update(5.0).unwrap();
        assert_eq!(t.d_max, 5.0, "first observation seeds the threshold");

        let mut t2 = ThresholdState::new(0.1);
        t2.update(1.0).unwrap();
        t2.update(2.0).unwrap();
        assert!((t2.d_max - 1.1).abs() < 1e-12);

        // constant stream converges monotonically to the constant
        let mut t3 = ThresholdState::new(0.2);
        t3.update(0.0).unwrap();
        let mut prev = t3.d_max;
        for _ in 0..50 {
            t3.update(3.0).unwrap();
            assert!(t3.d_max > prev);
            assert!(t3.d_max <= 3.0);
            prev = t3.d_max;
        }
        assert!((t3.d_max - 3.0).abs() < 0.01);

        assert!(t3.update(-1.0).is_err());
    }
}
