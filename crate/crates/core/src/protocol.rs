//! The synchronous round loop. Each round every worker runs its local
//! updates, exchanges post-update models with its topology neighbors,
//! aggregates with uniform gossip weights and measures pairwise distances;
//! the coordinator folds the measurements into its ledger and plans the
//! next round. Three strategies share the harness: the adaptive controller,
//! fixed-frequency gossip on a static ring, and a local/gossip-alternating
//! schedule.

use crate::consensus::{average_bound, ConsensusError, DistanceLedger, ThresholdState};
use crate::control::{
    self, bootstrap_plan, greedy_search, round_clamp_tau, tau_star, ControlInputs, ControlPlan,
};
use crate::graphtopo::{mixing_plan, Topology};
use crate::learncore::{
    accuracy, local_update, GradEstimates, LearnError, Model, ModelSpec, Sample,
};
use crate::numkit::{l2_distance, l2_norm, Rng};
use crate::simnet::{
    beta_matrix, round_timing, sample_bandwidth, BetaMatrix, ComputeProfile, LinkModel,
};
use thiserror::Error;

const INIT_TAG: u64 = 0x4949;
const DATA_TAG: u64 = 0x4441;
const PROBE_TAG: u64 = 0x5042;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("model parameters became non-finite at round {0}; the learning rate is too high")]
    Diverged(u32),
    #[error("base topology must be connected")]
    DisconnectedBase,
    #[error("need at least 2 workers, got {0}")]
    TooFewWorkers(usize),
    #[error("worker {0} has an empty shard")]
    EmptyShard(usize),
    #[error("round budget exhausted")]
    BudgetExhausted,
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

/// Which round strategy drives the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    /// Adaptive frequencies and topology from the controller.
    FedHp,
    /// Static ring, one shared frequency. `None` freezes the controller's
    /// round-one closed form after a bootstrap round.
    DPsgd { tau: Option<u32> },
    /// `local_rounds` rounds of (local steps + gossip) alternating with
    /// `gossip_rounds` gossip-only rounds on the static base topology.
    LdSgd {
        local_rounds: u32,
        gossip_rounds: u32,
        tau: Option<u32>,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct HyperParams {
    pub eta0: f64,
    pub eta_decay: f64,
    pub batch_size: usize,
    /// EMA factor for smoothing estimated pairwise distances.
    pub beta1: f64,
    /// EMA factor for the adaptive distance threshold.
    pub beta2: f64,
    pub tau_cap: u32,
    pub rounds: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Cross-check gossip aggregation against the dense matrix product each
    /// round (meant for small n).
    pub check_mixing: bool,
    /// Audit the shortest-path distance estimate against ground-truth model
    /// distances each round.
    pub probe_soundness: bool,
    /// Evaluate test accuracy every this many rounds (the final round is
    /// always evaluated; other rows carry the last value forward).
    pub eval_every: u32,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            check_mixing: false,
            probe_soundness: false,
            eval_every: 1,
        }
    }
}

pub struct SimSetup {
    pub shards: Vec<Vec<Sample>>,
    pub test_set: Vec<Sample>,
    pub model_spec: ModelSpec,
    pub algorithm: Algorithm,
    pub base_topology: Topology,
    pub compute: ComputeProfile,
    pub link: LinkModel,
    pub hyper: HyperParams,
    pub seed: u64,
    pub options: SimOptions,
}

/// One worker's live state.
pub struct WorkerState {
    pub id: usize,
    pub model: Model,
    pub shard: Vec<Sample>,
    pub estimates: GradEstimates,
    /// Post-update neighbor models received this round, cleared after
    /// aggregation.
    inbox: Vec<Vec<f64>>,
    data_rng: Rng,
    probe_rng: Rng,
}

/// Coordinator bookkeeping: measurement ledger, adaptive threshold, the
/// averaged estimates and the plan for the round about to run.
pub struct CoordinatorState {
    pub ledger: DistanceLedger,
    pub threshold: ThresholdState,
    pub l_hat: f64,
    pub sigma_hat: f64,
    pub f1: Option<f64>,
    pub completed_rounds: u32,
    plan: PendingPlan,
}

struct PendingPlan {
    plan: ControlPlan,
    /// Floor-condition audit of the plan at its planning basis.
    unclamped_total: usize,
    unclamped_floor_ok: usize,
    clamped_violations: usize,
}

/// The per-round record that lands in the metrics file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    pub round: u32,
    pub t_round: f64,
    pub cum_time: f64,
    pub waiting_avg: f64,
    pub accuracy: f64,
    /// Ground-truth average consensus distance of the end-of-round models.
    pub d_true: f64,
    /// Estimated upper bound on the next round's average consensus
    /// distance (adaptive runs only; 0 otherwise).
    pub d_bound_est: f64,
    /// Adaptive distance threshold after this round (adaptive runs only).
    pub d_max: f64,
    pub tau_min: u32,
    pub tau_med: u32,
    pub tau_max: u32,
    pub links: usize,
}

/// Side-channel invariant data the metrics file does not carry.
#[derive(Debug, Clone, Copy, Default)]
pub struct RoundDiagnostics {
    pub pacing_worker: usize,
    /// Frequency of the pacing worker and the controller's predicted round
    /// time, for trace output.
    pub tau_pacing: u32,
    pub predicted_round_time: f64,
    /// Whether this round ran a frequency-fitted plan.
    pub plan_fitted: bool,
    pub unclamped_total: usize,
    pub unclamped_floor_ok: usize,
    pub clamped_violations: usize,
    /// Unobserved pairs audited against ground truth, and how many the
    /// shortest-path estimate upper-bounded.
    pub probe_pairs: usize,
    pub probe_sound: usize,
    /// ||mean_after - mean_before|| for rounds with no local updates.
    pub gossip_residual: Option<f64>,
    /// Max deviation from the dense-matrix aggregation oracle.
    pub mixing_residual: Option<f64>,
    /// The closed-form frequency computed this round, when one was.
    pub closed_form_tau: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub metrics: RoundMetrics,
    pub diagnostics: RoundDiagnostics,
}

pub struct Simulation {
    workers: Vec<WorkerState>,
    pub coordinator: CoordinatorState,
    test_set: Vec<Sample>,
    base: Topology,
    ring: Topology,
    algorithm: Algorithm,
    compute: ComputeProfile,
    link: LinkModel,
    hyper: HyperParams,
    options: SimOptions,
    seed: u64,
    clock: f64,
    /// Baseline frequency once resolved (explicit from setup, or frozen
    /// from the round-one closed form).
    fixed_tau: Option<u32>,
    /// The round-one closed-form frequency, frozen for reporting.
    pub tau_star_round1: Option<u32>,
    last_accuracy: f64,
}

impl Simulation {
    pub fn new(setup: SimSetup) -> Result<Self, SimError> {
        let n = setup.shards.len();
        if n < 2 {
            return Err(SimError::TooFewWorkers(n));
        }
        if !setup.base_topology.is_connected() || setup.base_topology.n() != n {
            return Err(SimError::DisconnectedBase);
        }
        if let Some(w) = setup.shards.iter().position(|s| s.is_empty()) {
            return Err(SimError::EmptyShard(w));
        }

        let mut init_rng = Rng::substream(setup.seed, &[INIT_TAG]);
        let shared_init = Model::init(setup.model_spec, &mut init_rng);
        let workers = setup
            .shards
            .into_iter()
            .enumerate()
            .map(|(id, shard)| WorkerState {
                id,
                model: shared_init.clone(),
                shard,
                estimates: GradEstimates::default(),
                inbox: Vec::new(),
                data_rng: Rng::substream(setup.seed, &[DATA_TAG, id as u64]),
                probe_rng: Rng::substream(setup.seed, &[PROBE_TAG, id as u64]),
            })
            .collect();

        let fixed_tau = match setup.algorithm {
            Algorithm::DPsgd { tau } => tau,
            Algorithm::LdSgd { tau, .. } => tau,
            Algorithm::FedHp => None,
        };
        let first_plan = Self::static_plan_for_round(
            &setup.algorithm,
            &setup.base_topology,
            &Topology::ring(n),
            fixed_tau,
            1,
        );

        Ok(Simulation {
            coordinator: CoordinatorState {
                ledger: DistanceLedger::new(n, setup.hyper.beta1),
                threshold: ThresholdState::new(setup.hyper.beta2),
                l_hat: 0.0,
                sigma_hat: 0.0,
                f1: None,
                completed_rounds: 0,
                plan: PendingPlan {
                    plan: first_plan,
                    unclamped_total: 0,
                    unclamped_floor_ok: 0,
                    clamped_violations: 0,
                },
            },
            workers,
            test_set: setup.test_set,
            ring: Topology::ring(n),
            base: setup.base_topology,
            algorithm: setup.algorithm,
            compute: setup.compute,
            link: setup.link,
            hyper: setup.hyper,
            options: setup.options,
            seed: setup.seed,
            clock: 0.0,
            fixed_tau,
            tau_star_round1: None,
            last_accuracy: 0.0,
        })
    }

    pub fn n(&self) -> usize {
        self.workers.len()
    }

    pub fn completed_rounds(&self) -> u32 {
        self.coordinator.completed_rounds
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }

    /// Learning rate in effect for round `h` (1-based).
    fn eta_at(&self, h: u32) -> f64 {
        self.hyper.eta0 * self.hyper.eta_decay.powi(h as i32 - 1)
    }

    /// The static per-round plan for the baselines; the adaptive strategy
    /// replaces it after every round.
    fn static_plan_for_round(
        algorithm: &Algorithm,
        base: &Topology,
        ring: &Topology,
        fixed_tau: Option<u32>,
        round: u32,
    ) -> ControlPlan {
        match algorithm {
            Algorithm::FedHp => bootstrap_plan(base, 1),
            Algorithm::DPsgd { .. } => bootstrap_plan(ring, fixed_tau.unwrap_or(1)),
            Algorithm::LdSgd {
                local_rounds,
                gossip_rounds,
                ..
            } => {
                let cycle = local_rounds + gossip_rounds;
                let pos = (round - 1) % cycle.max(1);
                let tau = if pos < *local_rounds {
                    fixed_tau.unwrap_or(1)
                } else {
                    0
                };
                let mut plan = bootstrap_plan(base, 1);
                plan.tau = vec![tau; base.n()];
                plan
            }
        }
    }

    /// Mean top-1 accuracy of all workers' models on the shared test set.
    pub fn evaluate(&self) -> Result<f64, SimError> {
        let mut acc = 0.0;
        for w in &self.workers {
            acc += accuracy(&w.model, &self.test_set)?;
        }
        Ok(acc / self.workers.len() as f64)
    }

    /// Ground-truth average consensus distance: mean over workers of the
    /// distance to the parameter average.
    pub fn true_consensus_distance(&self) -> f64 {
        let n = self.workers.len();
        let d = self.workers[0].model.params.len();
        let mut mean = vec![0.0; d];
        for w in &self.workers {
            for (m, &p) in mean.iter_mut().zip(&w.model.params) {
                *m += p;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        self.workers
            .iter()
            .map(|w| l2_distance(&mean, &w.model.params))
            .sum::<f64>()
            / n as f64
    }

    /// Runs one synchronous round and advances the virtual clock.
    pub fn run_round(&mut self) -> Result<RoundOutcome, SimError> {
        let h = self.coordinator.completed_rounds + 1;
        if h > self.hyper.rounds {
            return Err(SimError::BudgetExhausted);
        }
        let n = self.workers.len();
        let eta = self.eta_at(h);
        let plan = std::mem::replace(
            &mut self.coordinator.plan,
            PendingPlan {
                plan: bootstrap_plan(&self.base, 1),
                unclamped_total: 0,
                unclamped_floor_ok: 0,
                clamped_violations: 0,
            },
        );
        let topology = plan.plan.topology.clone();
        let tau = plan.plan.tau.clone();

        // 1. local updates
        let mut traces: Vec<Vec<f64>> = Vec::with_capacity(n);
        let gossip_only = tau.iter().all(|&t| t == 0);
        for w in self.workers.iter_mut() {
            if tau[w.id] > 0 {
                let prev = w.estimates;
                let (est, trace) = local_update(
                    &mut w.model,
                    &w.shard,
                    tau[w.id],
                    eta,
                    self.hyper.batch_size,
                    Some(&prev),
                    &mut w.data_rng,
                    &mut w.probe_rng,
                )
                .map_err(|e| match e {
                    LearnError::NonFiniteParams => SimError::Diverged(h),
                    other => SimError::Learn(other),
                })?;
                w.estimates = est;
                traces.push(trace);
            } else {
                traces.push(Vec::new());
            }
        }
        if h == 1 {
            // average first-step loss, frozen as the initial-loss estimate
            let firsts: Vec<f64> = traces.iter().filter_map(|t| t.first().copied()).collect();
            if !firsts.is_empty() {
                self.coordinator.f1 = Some(firsts.iter().sum::<f64>() / firsts.len() as f64);
            }
        }

        // 2. timing draws for this round (bandwidths are per worker, so the
        // communication matrix covers every pair; topologies restrict it)
        let mu = crate::simnet::sample_mu(&self.compute, self.seed, h as u64);
        let bw = sample_bandwidth(&self.link, n, self.seed, h as u64);
        let everyone = Topology::full(n);
        let beta = beta_matrix(&self.link, &everyone, &bw);
        let timing = round_timing(&tau, &mu, &beta, &topology);
        self.clock += timing.t_round;

        // 3. exchange post-update models and measure neighbor distances
        let snapshot: Vec<Vec<f64>> = self.workers.iter().map(|w| w.model.params.clone()).collect();
        let mean_before = column_mean(&snapshot);
        for w in self.workers.iter_mut() {
            w.inbox = topology.neighbors(w.id).map(|j| snapshot[j].clone()).collect();
        }
        let edge_distances: Vec<(usize, usize, f64)> = topology
            .edges()
            .iter()
            .map(|&(i, j)| (i, j, l2_distance(&snapshot[i], &snapshot[j])))
            .collect();

        // 4. gossip aggregation with uniform weights
        let mix = mixing_plan(&topology);
        for w in self.workers.iter_mut() {
            let mut next = snapshot[w.id].clone();
            for neighbor in &w.inbox {
                for (acc, (&xj, &xi)) in next.iter_mut().zip(neighbor.iter().zip(&snapshot[w.id]))
                {
                    *acc += mix.w * (xj - xi);
                }
            }
            w.model.params = next;
            w.inbox.clear();
        }
        for w in &self.workers {
            if w.model.params.iter().any(|p| !p.is_finite()) {
                return Err(SimError::Diverged(h));
            }
        }

        let mixing_residual = if self.options.check_mixing {
            Some(self.dense_mixing_residual(&snapshot, &mix.matrix))
        } else {
            None
        };
        let gossip_residual = if gossip_only {
            let after: Vec<Vec<f64>> =
                self.workers.iter().map(|w| w.model.params.clone()).collect();
            Some(l2_distance(&mean_before, &column_mean(&after)))
        } else {
            None
        };

        // 5. coordinator bookkeeping and planning
        let mut diagnostics = RoundDiagnostics {
            pacing_worker: plan.plan.pacing_worker,
            tau_pacing: plan.plan.tau[plan.plan.pacing_worker],
            predicted_round_time: plan.plan.predicted_round_time,
            plan_fitted: plan.plan.fitted,
            unclamped_total: plan.unclamped_total,
            unclamped_floor_ok: plan.unclamped_floor_ok,
            clamped_violations: plan.clamped_violations,
            gossip_residual,
            mixing_residual,
            ..RoundDiagnostics::default()
        };
        let mut d_bound_est = 0.0;
        let mut d_max_out = 0.0;

        match self.algorithm {
            Algorithm::FedHp => {
                let coord = &mut self.coordinator;
                coord.ledger.begin_round();
                for &(i, j, d) in &edge_distances {
                    coord.ledger.record_observed(i, j, d)?;
                }
                if self.options.probe_soundness {
                    let est = coord.ledger.shortest_path_estimate()?;
                    for i in 0..n {
                        for j in i + 1..n {
                            if !coord.ledger.is_observed(i, j) {
                                diagnostics.probe_pairs += 1;
                                let truth = l2_distance(&snapshot[i], &snapshot[j]);
                                if est[i * n + j] >= truth - 1e-9 {
                                    diagnostics.probe_sound += 1;
                                }
                            }
                        }
                    }
                }
                coord.ledger.estimate_unobserved()?;

                coord.l_hat = mean(self.workers.iter().map(|w| w.estimates.smoothness));
                coord.sigma_hat = mean(self.workers.iter().map(|w| w.estimates.sigma));
                let avg_update_norm = mean(self.workers.iter().map(|w| w.estimates.grad_norm));
                coord.threshold.update(avg_update_norm)?;
                d_bound_est = average_bound(&coord.ledger, &topology);
                d_max_out = coord.threshold.d_max;

                if h < self.hyper.rounds {
                    let inputs = ControlInputs {
                        mu: &mu,
                        beta: &beta,
                        ledger: &coord.ledger,
                        d_max: coord.threshold.d_max,
                        l_hat: coord.l_hat,
                        sigma_hat: coord.sigma_hat,
                        eta: self.hyper.eta0 * self.hyper.eta_decay.powi(h as i32),
                        rounds_remaining: self.hyper.rounds - h,
                        base_topology: &self.base,
                        f1: coord.f1.unwrap_or(1.0),
                        tau_cap: self.hyper.tau_cap,
                    };
                    let tau_next = control::closed_form_tau(&inputs);
                    diagnostics.closed_form_tau = Some(tau_next);
                    if h == 1 {
                        self.tau_star_round1 = Some(tau_next);
                    }
                    let next = greedy_search(&inputs);
                    coord.plan = audit_plan(next, &mu, &beta);
                }
            }
            Algorithm::DPsgd { .. } | Algorithm::LdSgd { .. } => {
                // metadata the baselines still track: averaged estimates for
                // the frozen closed-form default
                self.coordinator.l_hat = mean(self.workers.iter().map(|w| w.estimates.smoothness));
                self.coordinator.sigma_hat = mean(self.workers.iter().map(|w| w.estimates.sigma));
                if h == 1 && self.fixed_tau.is_none() {
                    let t = tau_star(
                        n,
                        self.coordinator.f1.unwrap_or(1.0),
                        self.coordinator.l_hat,
                        self.hyper.rounds.saturating_sub(1).max(1),
                        self.eta_at(2),
                        self.coordinator.sigma_hat,
                    );
                    let resolved = round_clamp_tau(t, self.hyper.tau_cap);
                    self.fixed_tau = Some(resolved);
                    self.tau_star_round1 = Some(resolved);
                    diagnostics.closed_form_tau = Some(resolved);
                }
                if h < self.hyper.rounds {
                    self.coordinator.plan = PendingPlan {
                        plan: Self::static_plan_for_round(
                            &self.algorithm,
                            &self.base,
                            &self.ring,
                            self.fixed_tau,
                            h + 1,
                        ),
                        unclamped_total: 0,
                        unclamped_floor_ok: 0,
                        clamped_violations: 0,
                    };
                }
            }
        }

        // 6. metrics
        self.coordinator.completed_rounds = h;
        let every = self.options.eval_every.max(1);
        let accuracy = if every == 1 || (h - 1) % every == 0 || h == self.hyper.rounds {
            let a = self.evaluate()?;
            self.last_accuracy = a;
            a
        } else {
            self.last_accuracy
        };
        let mut taus = tau.clone();
        taus.sort_unstable();
        let metrics = RoundMetrics {
            round: h,
            t_round: timing.t_round,
            cum_time: self.clock,
            waiting_avg: timing.waiting_avg,
            accuracy,
            d_true: self.true_consensus_distance(),
            d_bound_est,
            d_max: d_max_out,
            tau_min: taus[0],
            tau_med: taus[(n - 1) / 2],
            tau_max: taus[n - 1],
            links: topology.edge_count(),
        };
        Ok(RoundOutcome {
            metrics,
            diagnostics,
        })
    }

    /// Max absolute deviation between the applied aggregation and the dense
    /// matrix product of the pre-aggregation parameters with W.
    fn dense_mixing_residual(&self, snapshot: &[Vec<f64>], w: &crate::numkit::SymMatrix) -> f64 {
        let n = snapshot.len();
        let d = snapshot[0].len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for k in 0..d {
                let mut want = 0.0;
                for (j, row) in snapshot.iter().enumerate() {
                    want += w.get(i, j) * row[k];
                }
                worst = worst.max((self.workers[i].model.params[k] - want).abs());
            }
        }
        worst
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in it {
        sum += v;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn column_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= rows.len() as f64;
    }
    mean
}

/// Checks the fitted plan's floor condition at its planning basis and
/// wraps it for the round it will govern.
fn audit_plan(plan: ControlPlan, mu: &[f64], beta: &BetaMatrix) -> PendingPlan {
    let topo = &plan.topology;
    let l = plan.pacing_worker;
    let t_of = |i: usize| plan.tau[i] as f64 * mu[i] + beta.max_over_neighbors(topo, i);
    let t_l = t_of(l);
    let mut unclamped_total = 0;
    let mut unclamped_floor_ok = 0;
    let mut clamped_violations = 0;
    for i in 0..topo.n() {
        if plan.clamped[i] {
            clamped_violations += 1;
            continue;
        }
        unclamped_total += 1;
        if (t_l / t_of(i)).floor() == 1.0 {
            unclamped_floor_ok += 1;
        }
    }
    PendingPlan {
        plan,
        unclamped_total,
        unclamped_floor_ok,
        clamped_violations,
    }
}

/// Reference single-worker SGD on the pooled training data; the benchmark
/// the distributed runs are compared against.
pub fn single_worker_oracle(
    train: &[Sample],
    test: &[Sample],
    spec: ModelSpec,
    steps: u32,
    eta: f64,
    batch_size: usize,
    seed: u64,
) -> Result<f64, SimError> {
    let mut init_rng = Rng::substream(seed, &[INIT_TAG]);
    let mut model = Model::init(spec, &mut init_rng);
    let mut data_rng = Rng::substream(seed, &[DATA_TAG, 0xFFFF]);
    let mut probe_rng = Rng::substream(seed, &[PROBE_TAG, 0xFFFF]);
    let shard: Vec<Sample> = train.to_vec();
    let mut done = 0u32;
    while done < steps {
        let chunk = (steps - done).min(64);
        local_update(
            &mut model,
            &shard,
            chunk,
            eta,
            batch_size,
            None,
            &mut data_rng,
            &mut probe_rng,
        )?;
        done += chunk;
    }
    Ok(accuracy(&model, test)?)
}

/// Convenience used by tests: the norm of a parameter average.
pub fn params_mean_norm(sim: &Simulation) -> f64 {
    let rows: Vec<Vec<f64>> = sim.workers().iter().map(|w| w.model.params.clone()).collect();
    l2_norm(&column_mean(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::{generate, SyntheticSpec};
    use crate::learncore::ModelKind;
    use crate::simnet::HeterogeneityPreset;

    fn tiny_dataset(classes: usize, features: usize, per_class: usize) -> crate::dataprep::Dataset {
        generate(&SyntheticSpec {
            classes,
            features,
            samples_per_class: per_class,
            cluster_spread: 0.8,
            seed: 77,
        })
        .unwrap()
    }

    fn even_shards(train: &[Sample], n: usize) -> Vec<Vec<Sample>> {
        let mut shards = vec![Vec::new(); n];
        for (i, s) in train.iter().enumerate() {
            shards[i % n].push(s.clone());
        }
        shards
    }

    fn setup_with(
        algorithm: Algorithm,
        n: usize,
        rounds: u32,
        base: Topology,
        seed: u64,
    ) -> SimSetup {
        let ds = tiny_dataset(3, 4, 60);
        let spec = ModelSpec {
            kind: ModelKind::Softmax,
            features: 4,
            classes: 3,
        };
        SimSetup {
            shards: even_shards(&ds.train, n),
            test_set: ds.test,
            model_spec: spec,
            algorithm,
            base_topology: base,
            compute: ComputeProfile::from_preset(HeterogeneityPreset::Mild, n, 0.05, seed),
            link: LinkModel::for_model_dim(spec.dim()),
            hyper: HyperParams {
                eta0: 0.05,
                eta_decay: 1.0,
                batch_size: 8,
                beta1: 0.5,
                beta2: 0.1,
                tau_cap: 64,
                rounds,
            },
            seed,
            options: SimOptions {
                check_mixing: true,
                probe_soundness: true,
                eval_every: 1,
            },
        }
    }

    #[test]
    fn pair_reaches_consensus_after_one_round() {
        // two workers, identical shards and init: after one aggregation on
        // the 2-clique both hold the average
        let ds = tiny_dataset(2, 3, 40);
        let spec = ModelSpec {
            kind: ModelKind::Softmax,
            features: 3,
            classes: 2,
        };
        let shard: Vec<Sample> = ds.train.clone();
        let mut setup = setup_with(Algorithm::FedHp, 2, 3, Topology::full(2), 5);
        setup.shards = vec![shard.clone(), shard];
        setup.test_set = ds.test;
        setup.model_spec = spec;
        setup.link = LinkModel::for_model_dim(spec.dim());
        let mut sim = Simulation::new(setup).unwrap();
        sim.run_round().unwrap();
        let a = &sim.workers()[0].model.params;
        let b = &sim.workers()[1].model.params;
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "models differ after K2 gossip");
        }
    }

    #[test]
    fn fully_connected_aggregation_is_exact_averaging() {
        let mut sim = Simulation::new(setup_with(Algorithm::FedHp, 3, 2, Topology::full(3), 6))
            .unwrap();
        let out = sim.run_round().unwrap();
        // one-step consensus: all models coincide
        let w = sim.workers();
        for i in 1..3 {
            assert!(l2_distance(&w[0].model.params, &w[i].model.params) < 1e-10);
        }
        assert!(out.diagnostics.mixing_residual.unwrap() < 1e-9);
    }

    #[test]
    fn ring_round_matches_dense_matrix_oracle() {
        let mut sim = Simulation::new(setup_with(
            Algorithm::DPsgd { tau: Some(2) },
            4,
            2,
            Topology::full(4),
            7,
        ))
        .unwrap();
        let out = sim.run_round().unwrap();
        assert!(
            out.diagnostics.mixing_residual.unwrap() < 1e-9,
            "aggregation deviates from X * W"
        );
        // ring structure: 2 neighbors each, mixing weight 1/3
        assert_eq!(out.metrics.links, 4);
    }

    #[test]
    fn gossip_only_rounds_preserve_the_average() {
        let mut sim = Simulation::new(setup_with(
            Algorithm::LdSgd {
                local_rounds: 1,
                gossip_rounds: 2,
                tau: Some(2),
            },
            4,
            6,
            Topology::ring(4),
            8,
        ))
        .unwrap();
        let mut saw_gossip_only = 0;
        for _ in 0..6 {
            let out = sim.run_round().unwrap();
            if let Some(res) = out.diagnostics.gossip_residual {
                saw_gossip_only += 1;
                assert!(res < 1e-9, "average moved by {res} in a gossip-only round");
                assert_eq!(out.metrics.tau_max, 0);
            }
        }
        assert_eq!(saw_gossip_only, 4, "cycle 1 local + 2 gossip over 6 rounds");
    }

    #[test]
    fn alternating_with_no_gossip_rounds_equals_fixed_ring_run() {
        // LdSgd with (I1=1, I2=0) on a ring base and the same fixed tau is
        // mechanically the ring baseline
        let a = {
            let mut sim = Simulation::new(setup_with(
                Algorithm::LdSgd {
                    local_rounds: 1,
                    gossip_rounds: 0,
                    tau: Some(3),
                },
                4,
                3,
                Topology::ring(4),
                9,
            ))
            .unwrap();
            for _ in 0..3 {
                sim.run_round().unwrap();
            }
            sim.workers()
                .iter()
                .map(|w| w.model.params.clone())
                .collect::<Vec<_>>()
        };
        let b = {
            let mut sim = Simulation::new(setup_with(
                Algorithm::DPsgd { tau: Some(3) },
                4,
                3,
                Topology::ring(4),
                9,
            ))
            .unwrap();
            for _ in 0..3 {
                sim.run_round().unwrap();
            }
            sim.workers()
                .iter()
                .map(|w| w.model.params.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn alternating_trace_matches_hand_rolled_oracle() {
        // replay 3 rounds of the alternating schedule with straight-line
        // code: tau steps of SGD per active round, then uniform-weight
        // gossip on the 2-clique
        let n = 2;
        let tau = 2u32;
        let seed = 10;
        let setup = setup_with(
            Algorithm::LdSgd {
                local_rounds: 2,
                gossip_rounds: 1,
                tau: Some(tau),
            },
            n,
            3,
            Topology::full(n),
            seed,
        );
        let spec = setup.model_spec;
        let shards: Vec<Vec<Sample>> = setup.shards.clone();
        let eta = setup.hyper.eta0;
        let batch = setup.hyper.batch_size;

        let mut sim = Simulation::new(setup).unwrap();
        for _ in 0..3 {
            sim.run_round().unwrap();
        }

        // oracle replay
        let mut init_rng = Rng::substream(seed, &[INIT_TAG]);
        let shared = Model::init(spec, &mut init_rng);
        let mut models = vec![shared.clone(), shared];
        let mut data_rngs: Vec<Rng> = (0..n)
            .map(|i| Rng::substream(seed, &[DATA_TAG, i as u64]))
            .collect();
        let mut scratch = Vec::new();
        for round in 1..=3u32 {
            let active = (round - 1) % 3 < 2;
            if active {
                for i in 0..n {
                    for _ in 0..tau {
                        let idx =
                            data_rngs[i].sample_distinct(shards[i].len(), batch, &mut scratch);
                        let (_, grad) =
                            crate::learncore::loss_and_gradient_idx(&models[i], &shards[i], &idx)
                                .unwrap();
                        for (p, g) in models[i].params.iter_mut().zip(&grad) {
                            *p -= eta * g;
                        }
                    }
                }
            }
            // K2 gossip: w = 1/2
            let x0 = models[0].params.clone();
            let x1 = models[1].params.clone();
            for k in 0..x0.len() {
                models[0].params[k] = x0[k] + 0.5 * (x1[k] - x0[k]);
                models[1].params[k] = x1[k] + 0.5 * (x0[k] - x1[k]);
            }
        }
        for i in 0..n {
            assert_eq!(sim.workers()[i].model.params, models[i].params);
        }
    }

    #[test]
    fn adaptive_run_resolves_frequencies_and_stays_finite() {
        let mut sim =
            Simulation::new(setup_with(Algorithm::FedHp, 6, 10, Topology::full(6), 11)).unwrap();
        for _ in 0..10 {
            let out = sim.run_round().unwrap();
            assert!(out.metrics.accuracy.is_finite());
            if out.metrics.round >= 2 {
                assert!(out.diagnostics.plan_fitted);
                assert_eq!(
                    out.diagnostics.unclamped_floor_ok, out.diagnostics.unclamped_total,
                    "floor condition failed at planning basis"
                );
            }
            // soundness audit: every unobserved pair upper-bounded
            assert_eq!(out.diagnostics.probe_pairs, out.diagnostics.probe_sound);
        }
        assert!(sim.tau_star_round1.is_some());
    }

    #[test]
    fn baseline_resolves_default_tau_to_round_one_closed_form() {
        let mut fed =
            Simulation::new(setup_with(Algorithm::FedHp, 4, 5, Topology::full(4), 12)).unwrap();
        let mut ring = Simulation::new(setup_with(
            Algorithm::DPsgd { tau: None },
            4,
            5,
            Topology::full(4),
            12,
        ))
        .unwrap();
        fed.run_round().unwrap();
        ring.run_round().unwrap();
        assert_eq!(fed.tau_star_round1, ring.tau_star_round1);
        assert!(ring.tau_star_round1.unwrap() >= 1);
    }

    #[test]
    fn divergence_is_reported_as_such() {
        let mut setup = setup_with(Algorithm::DPsgd { tau: Some(4) }, 3, 3, Topology::full(3), 13);
        setup.hyper.eta0 = 1e308;
        let mut sim = Simulation::new(setup).unwrap();
        let mut diverged = false;
        for _ in 0..3 {
            match sim.run_round() {
                Err(SimError::Diverged(_)) => {
                    diverged = true;
                    break;
                }
                Ok(_) => {}
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(diverged);
    }

    #[test]
    fn long_small_run_stays_finite_for_all_algorithms() {
        for (alg, seed) in [
            (Algorithm::FedHp, 20),
            (Algorithm::DPsgd { tau: None }, 21),
            (
                Algorithm::LdSgd {
                    local_rounds: 4,
                    gossip_rounds: 1,
                    tau: None,
                },
                22,
            ),
        ] {
            let mut setup = setup_with(alg, 4, 200, Topology::full(4), seed);
            setup.options.check_mixing = false;
            let mut sim = Simulation::new(setup).unwrap();
            for _ in 0..200 {
                let out = sim.run_round().unwrap();
                assert!(out.metrics.accuracy.is_finite());
                assert!(out.metrics.d_true.is_finite());
            }
        }
    }

    #[test]
    fn evaluate_averages_worker_accuracies() {
        let sim =
            Simulation::new(setup_with(Algorithm::FedHp, 3, 2, Topology::full(3), 14)).unwrap();
        // identical initial models: average equals any single accuracy
        let single = accuracy(&sim.workers()[0].model, &sim.test_set).unwrap();
        assert_eq!(sim.evaluate().unwrap(), single);
    }

    #[test]
    fn random_two_class_model_sits_near_chance() {
        let ds = tiny_dataset(2, 6, 1000);
        let spec = ModelSpec {
            kind: ModelKind::Softmax,
            features: 6,
            classes: 2,
        };
        let mut rng = Rng::new(15);
        let mut hits = Vec::new();
        for _ in 0..200 {
            let model = Model {
                spec,
                params: (0..spec.dim()).map(|_| rng.normal(0.0, 1.0)).collect(),
            };
            hits.push(accuracy(&model, &ds.test).unwrap());
        }
        let mean_acc = hits.iter().sum::<f64>() / hits.len() as f64;
        assert!(
            (mean_acc - 0.5).abs() < 0.05,
            "chance-level check failed: {mean_acc}"
        );
    }
}
