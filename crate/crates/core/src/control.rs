//! The adaptive controller: given this round's measurements it chooses the
//! next round's topology and per-worker local updating frequencies.
//!
//! The frequency of the pacing worker comes from a closed form balancing
//! convergence against round count; the topology starts from the base graph
//! and greedily drops the slowest links while the estimated average
//! consensus distance stays under the adaptive threshold and the graph
//! stays connected; everyone else's frequency is then fitted so that all
//! workers finish a round at roughly the same virtual time.

use crate::consensus::{average_bound, DistanceLedger};
use crate::graphtopo::Topology;
use crate::simnet::BetaMatrix;

/// Everything the controller needs for one invocation.
#[derive(Debug)]
pub struct ControlInputs<'a> {
    /// Per-worker expected compute time of one local iteration (seconds).
    pub mu: &'a [f64],
    /// Pairwise communication times over the base topology's links.
    pub beta: &'a BetaMatrix,
    pub ledger: &'a DistanceLedger,
    pub d_max: f64,
    /// Worker-averaged smoothness estimate.
    pub l_hat: f64,
    /// Worker-averaged stochastic-gradient deviation estimate.
    pub sigma_hat: f64,
    pub eta: f64,
    pub rounds_remaining: u32,
    pub base_topology: &'a Topology,
    /// Average initial loss, measured once in round one and frozen.
    pub f1: f64,
    pub tau_cap: u32,
}

/// The plan the coordinator hands out for the next round.
#[derive(Debug, Clone)]
pub struct ControlPlan {
    pub topology: Topology,
    pub tau: Vec<u32>,
    pub pacing_worker: usize,
    /// Predicted duration of one round under this plan.
    pub predicted_round_time: f64,
    /// Workers whose frequency hit the tau >= 1 clamp; their round time
    /// exceeds the pacing worker's.
    pub clamped: Vec<bool>,
    /// False for the bootstrap plan, which assigns frequencies uniformly.
    pub fitted: bool,
}

/// Unrounded pacing frequency sqrt(N f1 / (L H eta^2 sigma^2)).
pub fn tau_star(n: usize, f1: f64, l_hat: f64, rounds: u32, eta: f64, sigma_hat: f64) -> f64 {
    let denom = l_hat * rounds as f64 * eta * eta * sigma_hat * sigma_hat;
    if denom <= 0.0 || !denom.is_finite() {
        return f64::INFINITY;
    }
    (n as f64 * f1 / denom).sqrt()
}

/// Rounds an ideal frequency to an integer in [1, cap]; degenerate values
/// fall back to the cap.
pub fn round_clamp_tau(t: f64, cap: u32) -> u32 {
    if !t.is_finite() {
        return cap.max(1);
    }
    (t.round() as i64).clamp(1, cap.max(1) as i64) as u32
}

/// The closed form rounded to an integer and clamped to [1, tau_cap];
/// degenerate denominators fall back to the cap.
pub fn closed_form_tau(inputs: &ControlInputs) -> u32 {
    round_clamp_tau(
        tau_star(
            inputs.ledger.n(),
            inputs.f1,
            inputs.l_hat,
            inputs.rounds_remaining,
            inputs.eta,
            inputs.sigma_hat,
        ),
        inputs.tau_cap,
    )
}

/// Evaluates one candidate topology at frequency `tau`: per-worker round
/// time, the pacing worker (smallest predicted total time, ties to the
/// smallest index) and its total time over the remaining rounds.
fn evaluate_with_tau(
    topology: &Topology,
    tau: u32,
    mu: &[f64],
    beta: &BetaMatrix,
    rounds_remaining: u32,
) -> (usize, f64) {
    let n = topology.n();
    let mut best = 0usize;
    let mut best_t = f64::INFINITY;
    for i in 0..n {
        let t_i = tau as f64 * mu[i] + beta.max_over_neighbors(topology, i);
        if t_i < best_t {
            best_t = t_i;
            best = i;
        }
    }
    (best, rounds_remaining as f64 * best_t)
}

/// (pacing worker, its frequency, predicted total time) for a candidate
/// topology with the closed-form frequency.
pub fn evaluate_candidate(topology: &Topology, inputs: &ControlInputs) -> (usize, u32, f64) {
    let tau = closed_form_tau(inputs);
    let (l, total) = evaluate_with_tau(topology, tau, inputs.mu, inputs.beta, inputs.rounds_remaining);
    (l, tau, total)
}

/// Fits every worker's frequency so its round time lands just below the
/// pacing worker's: tau_i = floor((t_l - max beta_i) / mu_i), clamped to 1.
/// Returns the frequencies and which clamps bound.
pub fn assign_frequencies(
    topology: &Topology,
    pacing: usize,
    tau_pacing: u32,
    mu: &[f64],
    beta: &BetaMatrix,
) -> (Vec<u32>, Vec<bool>) {
    let n = topology.n();
    let t_l = tau_pacing as f64 * mu[pacing] + beta.max_over_neighbors(topology, pacing);
    let mut tau = vec![1u32; n];
    let mut clamped = vec![false; n];
    for i in 0..n {
        if i == pacing {
            tau[i] = tau_pacing;
            continue;
        }
        let budget = t_l - beta.max_over_neighbors(topology, i);
        let fitted = (budget / mu[i]).floor();
        if fitted >= 1.0 {
            tau[i] = fitted as u32;
        } else {
            tau[i] = 1;
            clamped[i] = true;
        }
    }
    (tau, clamped)
}

/// Greedy slow-link pruning (restarting from the base topology each
/// invocation) followed by frequency assignment.
pub fn greedy_search(inputs: &ControlInputs) -> ControlPlan {
    let mut current = inputs.base_topology.clone();
    let (mut pacing, tau, mut best_total) = evaluate_candidate(&current, inputs);

    let mut step = current.n().max(1);
    let mut improving = true;
    let mut first = true;

    if current.edge_count() > 0 {
        loop {
            if !first {
                step = if improving {
                    isqrt(current.edge_count())
                } else {
                    step / 2
                };
            }
            first = false;
            if step == 0 {
                break;
            }

            let batch = slowest_feasible_links(&current, inputs, step);
            let mut candidate = current.clone();
            for &(i, j) in &batch {
                candidate.set_edge(i, j, false);
                let feasible = candidate.is_connected()
                    && average_bound(inputs.ledger, &candidate) <= inputs.d_max;
                if !feasible {
                    candidate.set_edge(i, j, true);
                }
            }

            let (cand_pacing, _, cand_total) = evaluate_candidate(&candidate, inputs);
            if cand_total < best_total {
                current = candidate;
                pacing = cand_pacing;
                best_total = cand_total;
                improving = true;
            } else {
                improving = false;
            }
            if !improving && step == 1 {
                break;
            }
        }
    }

    let (tau_all, clamped) = assign_frequencies(&current, pacing, tau, inputs.mu, inputs.beta);
    let t_l = tau as f64 * inputs.mu[pacing] + inputs.beta.max_over_neighbors(&current, pacing);
    ControlPlan {
        topology: current,
        tau: tau_all,
        pacing_worker: pacing,
        predicted_round_time: t_l,
        clamped,
        fitted: true,
    }
}

/// The round-one plan, before any measurements exist: the base topology
/// with a uniform bootstrap frequency.
pub fn bootstrap_plan(base: &Topology, tau: u32) -> ControlPlan {
    let n = base.n();
    ControlPlan {
        topology: base.clone(),
        tau: vec![tau.max(1); n],
        pacing_worker: 0,
        predicted_round_time: 0.0,
        clamped: vec![false; n],
        fitted: false,
    }
}

/// The `count` largest-beta links of `topo` whose individual removal keeps
/// the distance bound under the threshold; ties break lexicographically.
fn slowest_feasible_links(
    topo: &Topology,
    inputs: &ControlInputs,
    count: usize,
) -> Vec<(usize, usize)> {
    let mut links = topo.edges();
    links.sort_by(|&(ai, aj), &(bi, bj)| {
        let ba = inputs.beta.get(ai, aj);
        let bb = inputs.beta.get(bi, bj);
        bb.partial_cmp(&ba)
            .unwrap()
            .then_with(|| (ai, aj).cmp(&(bi, bj)))
    });
    let mut out = Vec::new();
    let mut probe = topo.clone();
    for (i, j) in links {
        if out.len() == count {
            break;
        }
        probe.set_edge(i, j, false);
        if average_bound(inputs.ledger, &probe) <= inputs.d_max {
            out.push((i, j));
        }
        probe.set_edge(i, j, true);
    }
    out
}

fn isqrt(x: usize) -> usize {
    (x as f64).sqrt().floor() as usize
}
