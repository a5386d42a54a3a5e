//! Simulated system heterogeneity and the virtual clock: per-worker
//! Gaussian compute-time draws, per-round bandwidth fluctuation, the
//! pairwise communication-time matrix and round/waiting-time accounting.

use crate::graphtopo::Topology;
use crate::numkit::Rng;

/// Stream tags keeping compute and bandwidth draws independent and a pure
/// function of (seed, round, worker).
const MU_TAG: u64 = 0x4D55;
const BW_TAG: u64 = 0x4257;
const PROFILE_TAG: u64 = 0x5052;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeterogeneityPreset {
    /// Per-iteration means uniform in [0.5, 2] x base.
    Mild,
    /// Per-iteration means uniform in [0.2, 5] x base, roughly the tenfold
    /// capability spread seen across edge hardware.
    Severe,
}

impl HeterogeneityPreset {
    pub fn mean_range(self) -> (f64, f64) {
        match self {
            HeterogeneityPreset::Mild => (0.5, 2.0),
            HeterogeneityPreset::Severe => (0.2, 5.0),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mild" => Some(HeterogeneityPreset::Mild),
            "severe" => Some(HeterogeneityPreset::Severe),
            _ => None,
        }
    }
}

/// Per-worker compute-time distribution: each round's per-iteration time is
/// Gaussian around a fixed mean with std = 0.1 x mean, clamped below at
/// 0.1 x mean.
#[derive(Debug, Clone)]
pub struct ComputeProfile {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ComputeProfile {
    pub fn from_preset(preset: HeterogeneityPreset, n: usize, base: f64, seed: u64) -> Self {
        let (lo, hi) = preset.mean_range();
        let mut rng = Rng::substream(seed, &[PROFILE_TAG]);
        let mean: Vec<f64> = (0..n).map(|_| base * rng.range_f64(lo, hi)).collect();
        let std = mean.iter().map(|m| 0.1 * m).collect();
        ComputeProfile { mean, std }
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }
}

/// Draws this round's per-iteration compute times. Deterministic per
/// (seed, round, worker), truncated below at 0.1 x mean.
pub fn sample_mu(profile: &ComputeProfile, seed: u64, round: u64) -> Vec<f64> {
    (0..profile.n())
        .map(|i| {
            let mut rng = Rng::substream(seed, &[MU_TAG, round, i as u64]);
            let draw = rng.normal(profile.mean[i], profile.std[i]);
            draw.max(0.1 * profile.mean[i])
        })
        .collect()
}

/// Link bandwidth model: each worker's per-round bandwidth is uniform in
/// [bw_min, bw_max] Mb/s and a link runs at the slower endpoint.
#[derive(Debug, Clone, Copy)]
pub struct LinkModel {
    /// Transfer size per model exchange, in bits.
    pub model_bits: f64,
    pub bw_min_mbps: f64,
    pub bw_max_mbps: f64,
}

impl LinkModel {
    /// 32-bit parameters plus a fixed 1% framing overhead.
    pub fn for_model_dim(dim: usize) -> Self {
        LinkModel {
            model_bits: 32.0 * dim as f64 * 1.01,
            bw_min_mbps: 1.0,
            bw_max_mbps: 10.0,
        }
    }

    pub fn transfer_seconds(&self, bw_mbps: f64) -> f64 {
        self.model_bits / (bw_mbps * 1e6)
    }
}

/// Per-round bandwidth draws, deterministic per (seed, round, worker).
pub fn sample_bandwidth(link: &LinkModel, n: usize, seed: u64, round: u64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let mut rng = Rng::substream(seed, &[BW_TAG, round, i as u64]);
            rng.range_f64(link.bw_min_mbps, link.bw_max_mbps)
        })
        .collect()
}

/// Symmetric pairwise communication times over a topology's edges;
/// non-edges carry +inf so they can never win a max over neighbors.
#[derive(Debug, Clone)]
pub struct BetaMatrix {
    n: usize,
    data: Vec<f64>,
}

impl BetaMatrix {
    /// Builds a matrix from `f(i, j)` evaluated on i < j and mirrored;
    /// the diagonal is +inf.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![f64::INFINITY; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        BetaMatrix { n, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Largest communication time among worker i's neighbors in `topo`
    /// (0 when i has none).
    pub fn max_over_neighbors(&self, topo: &Topology, i: usize) -> f64 {
        topo.neighbors(i)
            .map(|j| self.get(i, j))
            .fold(0.0, f64::max)
    }
}

/// Materialises the communication-time matrix for one round from per-worker
/// bandwidth draws: beta(i,j) = bits / min(bw_i, bw_j) on edges of `topo`.
pub fn beta_matrix(link: &LinkModel, topo: &Topology, bandwidth: &[f64]) -> BetaMatrix {
    let n = topo.n();
    let mut data = vec![f64::INFINITY; n * n];
    for i in 0..n {
        data[i * n + i] = f64::INFINITY;
        for j in 0..n {
            if i != j && topo.has_edge(i, j) {
                data[i * n + j] = link.transfer_seconds(bandwidth[i].min(bandwidth[j]));
            }
        }
    }
    BetaMatrix { n, data }
}

/// One round of sampled communication state.
pub fn sample_beta(
    link: &LinkModel,
    topo: &Topology,
    seed: u64,
    round: u64,
) -> (Vec<f64>, BetaMatrix) {
    let bw = sample_bandwidth(link, topo.n(), seed, round);
    let beta = beta_matrix(link, topo, &bw);
    (bw, beta)
}

/// Virtual-clock accounting for one synchronous round.
#[derive(Debug, Clone)]
pub struct RoundTiming {
    pub t_i: Vec<f64>,
    pub t_round: f64,
    pub waiting_avg: f64,
}

/// t_i = tau_i * mu_i + max over neighbors of beta(i, .); the round closes
/// when the slowest worker finishes.
pub fn round_timing(tau: &[u32], mu: &[f64], beta: &BetaMatrix, topo: &Topology) -> RoundTiming {
    let n = topo.n();
    let t_i: Vec<f64> = (0..n)
        .map(|i| tau[i] as f64 * mu[i] + beta.max_over_neighbors(topo, i))
        .collect();
    let t_round = t_i.iter().cloned().fold(0.0, f64::max);
    let waiting_avg = t_i.iter().map(|t| t_round - t).sum::<f64>() / n as f64;
    RoundTiming {
        t_i,
        t_round,
        waiting_avg,
    }
}
