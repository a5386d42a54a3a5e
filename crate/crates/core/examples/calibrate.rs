//! Scratch calibration probe for picking the reference configuration.

use fedhp_core::experiment::{build_simulation, BaseTopologySpec, ExperimentConfig};
use fedhp_core::protocol::single_worker_oracle;
use fedhp_core::dataprep::{generate, SyntheticSpec};
use fedhp_core::learncore::{ModelKind, ModelSpec};
use std::time::Instant;

fn run_once(
    algorithm: &str, eta: f64, p: f64, seed: u64, rounds: u32, spread: f64,
    base: BaseTopologySpec, hidden: usize,
) -> (f64, f64, usize, u32) {
    let mut cfg = ExperimentConfig::default();
    cfg.algorithm = algorithm.into();
    cfg.model = "mlp".into();
    cfg.hidden = hidden;
    cfg.eta = eta;
    cfg.batch_size = 32;
    cfg.partition_p = p;
    cfg.seed = seed;
    cfg.rounds = rounds;
    cfg.cluster_spread = spread;
    cfg.samples_per_class = 300;
    cfg.eval_every = 50;
    cfg.base_topology = base;
    let (mut sim, _, _) = build_simulation(&cfg).unwrap();
    let mut acc = 0.0;
    let mut wait = 0.0;
    let mut clamped = 0;
    for _ in 0..rounds {
        let out = sim.run_round().unwrap();
        acc = out.metrics.accuracy;
        wait += out.metrics.waiting_avg;
        clamped += out.diagnostics.clamped_violations;
    }
    (acc, wait / rounds as f64, clamped, sim.tau_star_round1.unwrap_or(0))
}

fn main() {
    let rounds = 150u32;
    let hidden = 16;
    let spread = 2.0;
    let ds = generate(&SyntheticSpec {
        classes: 10, features: 32, samples_per_class: 300,
        cluster_spread: spread, seed: 1,
    }).unwrap();
    let spec = ModelSpec { kind: ModelKind::Mlp { hidden }, features: 32, classes: 10 };
    let oracle = single_worker_oracle(&ds.train, &ds.test, spec, 2000, 0.1, 32, 1).unwrap();
    println!("oracle(mlp,h{hidden},spread {spread}) = {oracle:.4}");
    for base in [BaseTopologySpec::Full, BaseTopologySpec::Ring] {
        for eta in [0.05, 0.02] {
            let t0 = Instant::now();
            println!("== {base:?} eta {eta}");
            for p in [0.8, 0.1] {
                for seed in [1u64, 2, 3] {
                    let (f, wf, cf, t1) = run_once("fedhp", eta, p, seed, rounds, spread, base.clone(), hidden);
                    let (d, wd, _, _) = run_once("d-psgd", eta, p, seed, rounds, spread, base.clone(), hidden);
                    let (l, _, _, _) = run_once("ld-sgd", eta, p, seed, rounds, spread, base.clone(), hidden);
                    let ord = if f >= d && f >= l { "OK " } else { "BAD" };
                    println!(
                        "  p={p} seed={seed}: fedhp {f:.4}  dpsgd {d:.4}  ldsgd {l:.4}  {ord} tau1={t1} wr={:.3} cl={cf}",
                        wf / wd
                    );
                }
            }
            println!("  ({:.1}s)", t0.elapsed().as_secs_f64());
        }
    }
}
