//! Command-line front end: `run` executes one experiment config, `compare`
//! summarises completed metrics files, `bound` evaluates the analytical
//! convergence expressions.
//!
//! Exit codes: 0 success, 1 configuration or input errors, 3 numerical
//! divergence during a run.

use clap::{Args, Parser, Subcommand};
use fedhp_core::bound::{corollary1_eta, remark2_bound, tau_threshold, BoundParams};
use fedhp_core::experiment::{compare, run_experiment, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "fedhp", version, about = "Decentralized federated learning testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a key=value config file.
    Run {
        /// Path to the config file.
        config: PathBuf,
    },
    /// Summarise two or more completed metrics files sharing a dataset.
    Compare {
        /// Metrics CSV files produced by `run`.
        files: Vec<PathBuf>,
        /// Accuracy target overriding the targets embedded in the runs.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Evaluate the convergence bound, corollary learning rate and
    /// frequency threshold for one parameter point.
    Bound(BoundArgs),
}

#[derive(Args)]
struct BoundArgs {
    /// Smoothness constant.
    #[arg(long = "L")]
    smoothness: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    zeta: f64,
    #[arg(long)]
    rho: f64,
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    tau: f64,
    /// Communication-round budget.
    #[arg(long = "H")]
    rounds: f64,
    /// Worker count.
    #[arg(long = "N")]
    workers: f64,
    /// Initial loss f(x^1).
    #[arg(long)]
    f1: f64,
    /// Optimal loss, defaults to 0.
    #[arg(long, default_value_t = 0.0)]
    f_star: f64,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match run_experiment(&cfg) {
                Ok(outcome) => {
                    let rounds = outcome.metrics.len();
                    let final_acc = outcome.metrics.last().map(|m| m.accuracy).unwrap_or(0.0);
                    println!(
                        "wrote {} ({} rounds, final accuracy {:.4})",
                        outcome.csv_path.display(),
                        rounds,
                        final_acc
                    );
                    if outcome.reached_target {
                        println!("target accuracy reached early");
                    }
                    ExitCode::SUCCESS
                }
                Err(e) if e.is_divergence() => {
                    eprintln!("run aborted: {e}");
                    ExitCode::from(EXIT_DIVERGED)
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::from(EXIT_CONFIG)
                }
            }
        }
        Command::Compare { files, target } => match compare(&files, target) {
            Ok(table) => {
                print!("{table}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("compare failed: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Bound(args) => {
            let p = BoundParams {
                smoothness: args.smoothness,
                sigma: args.sigma,
                zeta: args.zeta,
                rho: args.rho,
                eta: args.eta,
                tau: args.tau,
                rounds: args.rounds,
                workers: args.workers,
                f1: args.f1,
                f_star: args.f_star,
            };
            let mut ok = true;
            match remark2_bound(&p) {
                Ok(v) => println!("convergence_bound {v:.9e}"),
                Err(e) => {
                    println!("convergence_bound invalid: {e}");
                    ok = false;
                }
            }
            match corollary1_eta(&p) {
                Ok(v) => println!("corollary_eta {v:.9e}"),
                Err(e) => {
                    println!("corollary_eta invalid: {e}");
                    ok = false;
                }
            }
            match tau_threshold(&p) {
                Ok(v) => println!("tau_threshold {v:.9e}"),
                Err(e) => {
                    println!("tau_threshold invalid: {e}");
                    ok = false;
                }
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CONFIG)
            }
        }
    }
}
