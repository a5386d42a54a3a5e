//! Experiment orchestration: flat key=value configuration files, the
//! end-to-end runner that writes one CSV row per round, and the comparison
//! table over completed runs. A run is a pure function of its config, so
//! rerunning one produces a byte-identical file.

use crate::dataprep::{generate, partition, shards_to_csv, DataError, PartitionSpec, SyntheticSpec};
use crate::graphtopo::{Topology, TopoError};
use crate::learncore::{ModelKind, ModelSpec, Sample};
use crate::numkit::Rng;
use crate::protocol::{
    Algorithm, HyperParams, RoundDiagnostics, RoundMetrics, SimError, SimOptions, SimSetup,
    Simulation,
};
use crate::simnet::{ComputeProfile, HeterogeneityPreset, LinkModel};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_TAG: &str = "fedhp-metrics-v1";
pub const CSV_HEADER: &str =
    "round,t_round,cum_time,waiting_avg,accuracy,D_true,D_bound_est,d_max,tau_min,tau_med,tau_max,links";
/// Directory override for metrics output.
pub const OUTPUT_DIR_ENV: &str = "FEDHP_OUTPUT_DIR";

const PARTITION_TAG: u64 = 0x5054;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config line {line}: cannot parse `{text}`")]
    BadLine { line: usize, text: String },
    #[error("config key `{key}`: {reason}")]
    BadValue { key: &'static str, reason: String },
    #[error("config key `{0}` is unknown")]
    UnknownKey(String),
    #[error("config key `{0}` is required")]
    MissingKey(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Topo(#[from] TopoError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("metrics file {0}: {1}")]
    BadMetrics(PathBuf, String),
    #[error("runs disagree on `{0}`; compare needs a shared dataset and seed")]
    DatasetMismatch(&'static str),
    #[error("compare needs at least two runs")]
    TooFewRuns,
}

impl ExperimentError {
    /// True when the failure is the simulation blowing up numerically
    /// rather than a bad configuration.
    pub fn is_divergence(&self) -> bool {
        matches!(self, ExperimentError::Sim(SimError::Diverged(_)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaseTopologySpec {
    Full,
    Ring,
    EdgeList(PathBuf),
}

/// Everything a run needs, resolved against defaults.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub algorithm: String,
    pub workers: usize,
    pub rounds: u32,
    pub seed: u64,
    pub output: PathBuf,
    pub classes: usize,
    pub features: usize,
    pub samples_per_class: usize,
    pub cluster_spread: f64,
    pub dataset_seed: Option<u64>,
    pub partition_p: f64,
    pub model: String,
    pub hidden: usize,
    pub heterogeneity: String,
    pub compute_base: f64,
    pub bw_min_mbps: f64,
    pub bw_max_mbps: f64,
    pub eta: f64,
    pub eta_decay: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub tau_cap: u32,
    pub dpsgd_tau: Option<u32>,
    pub ldsgd_i1: u32,
    pub ldsgd_i2: u32,
    pub ldsgd_tau: Option<u32>,
    pub base_topology: BaseTopologySpec,
    pub target_accuracy: Option<f64>,
    pub eval_every: u32,
    pub verbose_plan: bool,
    pub dump_distances: bool,
    pub export_shards: bool,
    pub check_mixing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: "fedhp".into(),
            workers: 16,
            rounds: 150,
            seed: 1,
            output: PathBuf::from("metrics.csv"),
            classes: 10,
            features: 32,
            samples_per_class: 300,
            cluster_spread: 1.0,
            dataset_seed: None,
            partition_p: 0.6,
            model: "softmax".into(),
            hidden: 16,
            heterogeneity: "severe".into(),
            compute_base: 0.05,
            bw_min_mbps: 1.0,
            bw_max_mbps: 10.0,
            eta: 0.1,
            eta_decay: 1.0,
            batch_size: 32,
            beta1: 0.5,
            beta2: 0.1,
            tau_cap: 64,
            dpsgd_tau: None,
            ldsgd_i1: 4,
            ldsgd_i2: 1,
            ldsgd_tau: None,
            base_topology: BaseTopologySpec::Full,
            target_accuracy: None,
            eval_every: 1,
            verbose_plan: false,
            dump_distances: false,
            export_shards: false,
            check_mixing: false,
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &'static str, v: &str) -> Result<T, ExperimentError> {
    v.parse().map_err(|_| ExperimentError::BadValue {
        key,
        reason: format!("cannot parse `{v}`"),
    })
}

fn parse_bool(key: &'static str, v: &str) -> Result<bool, ExperimentError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ExperimentError::BadValue {
            key,
            reason: format!("expected true/false, got `{v}`"),
        }),
    }
}

impl ExperimentConfig {
    /// Parses the flat `key = value` format; `#` starts a comment, blank
    /// lines are skipped, later keys override earlier ones.
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ExperimentError::BadLine {
                line: lineno + 1,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            let v = value.trim();
            match key {
                "algorithm" => cfg.algorithm = v.to_string(),
                "workers" => cfg.workers = parse_as("workers", v)?,
                "rounds" => cfg.rounds = parse_as("rounds", v)?,
                "seed" => cfg.seed = parse_as("seed", v)?,
                "output" => cfg.output = PathBuf::from(v),
                "classes" => cfg.classes = parse_as("classes", v)?,
                "features" => cfg.features = parse_as("features", v)?,
                "samples_per_class" => cfg.samples_per_class = parse_as("samples_per_class", v)?,
                "cluster_spread" => cfg.cluster_spread = parse_as("cluster_spread", v)?,
                "dataset_seed" => {
                    cfg.dataset_seed = if v.is_empty() {
                        None
                    } else {
                        Some(parse_as("dataset_seed", v)?)
                    }
                }
                "partition_p" => cfg.partition_p = parse_as("partition_p", v)?,
                "model" => cfg.model = v.to_string(),
                "hidden" => cfg.hidden = parse_as("hidden", v)?,
                "heterogeneity" => cfg.heterogeneity = v.to_string(),
                "compute_base" => cfg.compute_base = parse_as("compute_base", v)?,
                "bw_min_mbps" => cfg.bw_min_mbps = parse_as("bw_min_mbps", v)?,
                "bw_max_mbps" => cfg.bw_max_mbps = parse_as("bw_max_mbps", v)?,
                "eta" => cfg.eta = parse_as("eta", v)?,
                "eta_decay" => cfg.eta_decay = parse_as("eta_decay", v)?,
                "batch_size" => cfg.batch_size = parse_as("batch_size", v)?,
                "beta1" => cfg.beta1 = parse_as("beta1", v)?,
                "beta2" => cfg.beta2 = parse_as("beta2", v)?,
                "tau_cap" => cfg.tau_cap = parse_as("tau_cap", v)?,
                "dpsgd_tau" => {
                    cfg.dpsgd_tau = if v.is_empty() {
                        None
                    } else {
                        Some(parse_as("dpsgd_tau", v)?)
                    }
                }
                "ldsgd_i1" => cfg.ldsgd_i1 = parse_as("ldsgd_i1", v)?,
                "ldsgd_i2" => cfg.ldsgd_i2 = parse_as("ldsgd_i2", v)?,
                "ldsgd_tau" => {
                    cfg.ldsgd_tau = if v.is_empty() {
                        None
                    } else {
                        Some(parse_as("ldsgd_tau", v)?)
                    }
                }
                "base_topology" => {
                    cfg.base_topology = match v {
                        "full" => BaseTopologySpec::Full,
                        "ring" => BaseTopologySpec::Ring,
                        path => BaseTopologySpec::EdgeList(PathBuf::from(path)),
                    }
                }
                "target_accuracy" => {
                    cfg.target_accuracy = if v.is_empty() {
                        None
                    } else {
                        Some(parse_as("target_accuracy", v)?)
                    }
                }
                "eval_every" => cfg.eval_every = parse_as("eval_every", v)?,
                "verbose_plan" => cfg.verbose_plan = parse_bool("verbose_plan", v)?,
                "dump_distances" => cfg.dump_distances = parse_bool("dump_distances", v)?,
                "export_shards" => cfg.export_shards = parse_bool("export_shards", v)?,
                "check_mixing" => cfg.check_mixing = parse_bool("check_mixing", v)?,
                other => return Err(ExperimentError::UnknownKey(other.to_string())),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |key, reason: String| Err(ExperimentError::BadValue { key, reason });
        if !matches!(self.algorithm.as_str(), "fedhp" | "d-psgd" | "ld-sgd") {
            return bad(
                "algorithm",
                format!("`{}` is not one of fedhp, d-psgd, ld-sgd", self.algorithm),
            );
        }
        if self.workers < 2 {
            return bad("workers", "need at least 2 workers".into());
        }
        if self.classes < 2 {
            return bad("classes", "need at least 2 classes".into());
        }
        if !(self.partition_p > 0.0 && self.partition_p <= 1.0) {
            return bad("partition_p", format!("{} outside (0, 1]", self.partition_p));
        }
        if !matches!(self.model.as_str(), "softmax" | "mlp") {
            return bad("model", format!("`{}` is not softmax or mlp", self.model));
        }
        if HeterogeneityPreset::parse(&self.heterogeneity).is_none() {
            return bad(
                "heterogeneity",
                format!("`{}` is not mild or severe", self.heterogeneity),
            );
        }
        if !(self.compute_base > 0.0) {
            return bad("compute_base", "must be positive".into());
        }
        if !(self.bw_min_mbps > 0.0 && self.bw_max_mbps >= self.bw_min_mbps) {
            return bad("bw_min_mbps", "need 0 < bw_min_mbps <= bw_max_mbps".into());
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta", "must be finite and >= 0".into());
        }
        if !(self.eta_decay > 0.0 && self.eta_decay <= 1.0) {
            return bad("eta_decay", "must be in (0, 1]".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.beta1) {
            return bad("beta1", "must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.beta2) {
            return bad("beta2", "must be in [0, 1]".into());
        }
        if self.tau_cap == 0 {
            return bad("tau_cap", "must be >= 1".into());
        }
        if self.algorithm == "ld-sgd" && self.ldsgd_i1 == 0 {
            return bad("ldsgd_i1", "must be >= 1".into());
        }
        if self.model == "mlp" && self.hidden == 0 {
            return bad("hidden", "must be >= 1 for the mlp model".into());
        }
        if let BaseTopologySpec::EdgeList(p) = &self.base_topology {
            if !p.exists() {
                return bad("base_topology", format!("file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// Output path after the environment override.
    pub fn resolved_output(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => {
                let name = self.output.file_name().unwrap_or(self.output.as_os_str());
                PathBuf::from(dir).join(name)
            }
            _ => self.output.clone(),
        }
    }

    /// The resolved config as the comment block embedded in every metrics
    /// file, keys in fixed order.
    pub fn to_block(&self) -> String {
        let opt_u32 = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
        let base = match &self.base_topology {
            BaseTopologySpec::Full => "full".to_string(),
            BaseTopologySpec::Ring => "ring".to_string(),
            BaseTopologySpec::EdgeList(p) => p.display().to_string(),
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "# {k}={v}");
        };
        kv("algorithm", self.algorithm.clone());
        kv("workers", self.workers.to_string());
        kv("rounds", self.rounds.to_string());
        kv("seed", self.seed.to_string());
        kv("output", self.output.display().to_string());
        kv("classes", self.classes.to_string());
        kv("features", self.features.to_string());
        kv("samples_per_class", self.samples_per_class.to_string());
        kv("cluster_spread", self.cluster_spread.to_string());
        kv(
            "dataset_seed",
            self.dataset_seed.map(|x| x.to_string()).unwrap_or_default(),
        );
        kv("partition_p", self.partition_p.to_string());
        kv("model", self.model.clone());
        kv("hidden", self.hidden.to_string());
        kv("heterogeneity", self.heterogeneity.clone());
        kv("compute_base", self.compute_base.to_string());
        kv("bw_min_mbps", self.bw_min_mbps.to_string());
        kv("bw_max_mbps", self.bw_max_mbps.to_string());
        kv("eta", self.eta.to_string());
        kv("eta_decay", self.eta_decay.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("tau_cap", self.tau_cap.to_string());
        kv("dpsgd_tau", opt_u32(self.dpsgd_tau));
        kv("ldsgd_i1", self.ldsgd_i1.to_string());
        kv("ldsgd_i2", self.ldsgd_i2.to_string());
        kv("ldsgd_tau", opt_u32(self.ldsgd_tau));
        kv("base_topology", base);
        kv(
            "target_accuracy",
            self.target_accuracy.map(|x| x.to_string()).unwrap_or_default(),
        );
        kv("eval_every", self.eval_every.to_string());
        kv("verbose_plan", self.verbose_plan.to_string());
        kv("dump_distances", self.dump_distances.to_string());
        kv("export_shards", self.export_shards.to_string());
        kv("check_mixing", self.check_mixing.to_string());
        s
    }

    fn algorithm_enum(&self) -> Algorithm {
        match self.algorithm.as_str() {
            "d-psgd" => Algorithm::DPsgd { tau: self.dpsgd_tau },
            "ld-sgd" => Algorithm::LdSgd {
                local_rounds: self.ldsgd_i1,
                gossip_rounds: self.ldsgd_i2,
                tau: self.ldsgd_tau,
            },
            _ => Algorithm::FedHp,
        }
    }

    fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            kind: match self.model.as_str() {
                "mlp" => ModelKind::Mlp { hidden: self.hidden },
                _ => ModelKind::Softmax,
            },
            features: self.features,
            classes: self.classes,
        }
    }
}

/// Everything a finished (or early-stopped) run hands back in memory, next
/// to the metrics file on disk.
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub csv_path: PathBuf,
    pub metrics: Vec<RoundMetrics>,
    pub diagnostics: Vec<RoundDiagnostics>,
    pub tau_star_round1: Option<u32>,
    pub reached_target: bool,
}

fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

fn metrics_row(m: &RoundMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        m.round,
        fmt_float(m.t_round),
        fmt_float(m.cum_time),
        fmt_float(m.waiting_avg),
        fmt_float(m.accuracy),
        fmt_float(m.d_true),
        fmt_float(m.d_bound_est),
        fmt_float(m.d_max),
        m.tau_min,
        m.tau_med,
        m.tau_max,
        m.links
    )
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| ExperimentError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    std::fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Builds the simulation a config describes.
pub fn build_simulation(config: &ExperimentConfig) -> Result<(Simulation, Vec<Sample>, Vec<Vec<usize>>), ExperimentError> {
    let dataset = generate(&SyntheticSpec {
        classes: config.classes,
        features: config.features,
        samples_per_class: config.samples_per_class,
        cluster_spread: config.cluster_spread,
        seed: config.dataset_seed.unwrap_or(config.seed),
    })?;
    let mut part_rng = Rng::substream(config.seed, &[PARTITION_TAG]);
    let shard_indices = partition(
        &dataset.train,
        &PartitionSpec::new(config.partition_p, config.workers),
        &mut part_rng,
    )?;
    let shards: Vec<Vec<Sample>> = shard_indices
        .iter()
        .map(|idx| idx.iter().map(|&i| dataset.train[i].clone()).collect())
        .collect();

    let base = match &config.base_topology {
        BaseTopologySpec::Full => Topology::full(config.workers),
        BaseTopologySpec::Ring => Topology::ring(config.workers),
        BaseTopologySpec::EdgeList(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
                path: path.clone(),
                source,
            })?;
            Topology::parse_edge_list(config.workers, &text)?
        }
    };

    let spec = config.model_spec();
    let preset = HeterogeneityPreset::parse(&config.heterogeneity).expect("validated");
    let mut link = LinkModel::for_model_dim(spec.dim());
    link.bw_min_mbps = config.bw_min_mbps;
    link.bw_max_mbps = config.bw_max_mbps;

    let sim = Simulation::new(SimSetup {
        shards,
        test_set: dataset.test,
        model_spec: spec,
        algorithm: config.algorithm_enum(),
        base_topology: base,
        compute: ComputeProfile::from_preset(preset, config.workers, config.compute_base, config.seed),
        link,
        hyper: HyperParams {
            eta0: config.eta,
            eta_decay: config.eta_decay,
            batch_size: config.batch_size,
            beta1: config.beta1,
            beta2: config.beta2,
            tau_cap: config.tau_cap,
            rounds: config.rounds,
        },
        seed: config.seed,
        options: SimOptions {
            check_mixing: config.check_mixing,
            probe_soundness: true,
            eval_every: config.eval_every,
        },
    })?;
    Ok((sim, dataset.train, shard_indices))
}

/// Runs a config to completion (or its early-accuracy stop) and writes the
/// metrics CSV. On divergence the rows produced so far are flushed before
/// the error propagates.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    let csv_path = config.resolved_output();
    let (mut sim, train, shard_indices) = build_simulation(config)?;

    if config.export_shards {
        let path = csv_path.with_extension("shards.csv");
        write_file(&path, &shards_to_csv(&train, &shard_indices))?;
    }

    let mut csv = String::new();
    let _ = writeln!(csv, "# schema: {SCHEMA_TAG}");
    let _ = writeln!(csv, "# config:");
    csv.push_str(&config.to_block());
    let _ = writeln!(csv, "{CSV_HEADER}");

    let mut metrics = Vec::new();
    let mut diagnostics = Vec::new();
    let mut reached_target = false;
    let mut failure: Option<ExperimentError> = None;

    for _ in 0..config.rounds {
        match sim.run_round() {
            Ok(out) => {
                let _ = writeln!(csv, "{}", metrics_row(&out.metrics));
                if config.verbose_plan {
                    let d = &out.diagnostics;
                    let _ = writeln!(
                        csv,
                        "# plan round={} links={} pacing={} tau_pacing={} predicted_t={}",
                        out.metrics.round,
                        out.metrics.links,
                        d.pacing_worker,
                        d.tau_pacing,
                        fmt_float(d.predicted_round_time)
                    );
                }
                let acc = out.metrics.accuracy;
                metrics.push(out.metrics);
                diagnostics.push(out.diagnostics);
                if let Some(target) = config.target_accuracy {
                    if acc >= target {
                        reached_target = true;
                        break;
                    }
                }
            }
            Err(e) => {
                failure = Some(e.into());
                break;
            }
        }
    }

    write_file(&csv_path, &csv)?;
    if config.dump_distances && config.algorithm == "fedhp" {
        write_file(
            &csv_path.with_extension("distances.csv"),
            &sim.coordinator.ledger.to_csv(),
        )?;
    }
    if let Some(e) = failure {
        return Err(e);
    }

    Ok(ExperimentOutcome {
        config: config.clone(),
        csv_path,
        tau_star_round1: sim.tau_star_round1,
        metrics,
        diagnostics,
        reached_target,
    })
}

/// One parsed metrics file.
struct ParsedRun {
    config: HashMap<String, String>,
    rows: Vec<Vec<String>>,
}

fn parse_metrics_file(path: &Path) -> Result<ParsedRun, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = HashMap::new();
    let mut rows = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                config.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != CSV_HEADER {
                return Err(ExperimentError::BadMetrics(
                    path.to_path_buf(),
                    format!("unexpected header `{line}`"),
                ));
            }
            saw_header = true;
            continue;
        }
        rows.push(line.split(',').map(|s| s.to_string()).collect());
    }
    if !saw_header {
        return Err(ExperimentError::BadMetrics(
            path.to_path_buf(),
            "missing header row".into(),
        ));
    }
    Ok(ParsedRun { config, rows })
}

/// Per-run summary line of `compare`.
pub struct RunSummary {
    pub algorithm: String,
    pub time_to_target: Option<f64>,
    pub target: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub mean_waiting: Option<f64>,
}

/// Compares completed metrics files sharing a dataset and seed. The target
/// accuracy comes from each run's embedded config unless overridden.
pub fn compare(paths: &[PathBuf], target_override: Option<f64>) -> Result<String, ExperimentError> {
    if paths.len() < 2 {
        return Err(ExperimentError::TooFewRuns);
    }
    let runs: Vec<ParsedRun> = paths
        .iter()
        .map(|p| parse_metrics_file(p))
        .collect::<Result<_, _>>()?;

    for key in [
        "classes",
        "features",
        "samples_per_class",
        "cluster_spread",
        "dataset_seed",
        "seed",
        "partition_p",
        "workers",
    ] {
        let first = runs[0].config.get(key);
        if runs.iter().any(|r| r.config.get(key) != first) {
            return Err(ExperimentError::DatasetMismatch(match key {
                "classes" => "classes",
                "features" => "features",
                "samples_per_class" => "samples_per_class",
                "cluster_spread" => "cluster_spread",
                "dataset_seed" => "dataset_seed",
                "seed" => "seed",
                "partition_p" => "partition_p",
                _ => "workers",
            }));
        }
    }

    let mut summaries = Vec::new();
    for run in &runs {
        let algorithm = run
            .config
            .get("algorithm")
            .cloned()
            .unwrap_or_else(|| "?".into());
        let target = target_override.or_else(|| {
            run.config
                .get("target_accuracy")
                .and_then(|v| v.parse::<f64>().ok())
        });
        let mut time_to_target = None;
        let mut final_accuracy = None;
        let mut waiting_sum = 0.0;
        for row in &run.rows {
            let acc: f64 = row[4].parse().unwrap_or(f64::NAN);
            let cum: f64 = row[2].parse().unwrap_or(f64::NAN);
            let wait: f64 = row[3].parse().unwrap_or(f64::NAN);
            waiting_sum += wait;
            final_accuracy = Some(acc);
            if time_to_target.is_none() {
                if let Some(t) = target {
                    if acc >= t {
                        time_to_target = Some(cum);
                    }
                }
            }
        }
        let mean_waiting = if run.rows.is_empty() {
            None
        } else {
            Some(waiting_sum / run.rows.len() as f64)
        };
        summaries.push(RunSummary {
            algorithm,
            time_to_target,
            target,
            final_accuracy,
            mean_waiting,
        });
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>18} {:>16} {:>16}",
        "algorithm", "time_to_target", "final_accuracy", "mean_waiting"
    );
    for s in &summaries {
        let ttt = match (s.time_to_target, s.target) {
            (Some(t), _) => fmt_float(t),
            (None, Some(_)) => "not reached".into(),
            (None, None) => "n/a".into(),
        };
        let _ = writeln!(
            out,
            "{:<10} {:>18} {:>16} {:>16}",
            s.algorithm,
            ttt,
            s.final_accuracy.map(fmt_float).unwrap_or_else(|| "n/a".into()),
            s.mean_waiting.map(fmt_float).unwrap_or_else(|| "n/a".into()),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(dir: &Path, name: &str) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.workers = 4;
        cfg.rounds = 5;
        cfg.classes = 3;
        cfg.features = 4;
        cfg.samples_per_class = 45;
        cfg.partition_p = 0.75;
        cfg.batch_size = 8;
        cfg.eta = 0.05;
        cfg.compute_base = 0.02;
        cfg.output = dir.join(name);
        cfg
    }

    #[test]
    fn parse_round_trips_defaults_and_rejects_junk() {
        let text = "\
# reference run
algorithm = d-psgd
workers = 8
rounds = 12
seed = 99
partition_p = 0.4
dpsgd_tau = 3
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.algorithm, "d-psgd");
        assert_eq!(cfg.workers, 8);
        assert_eq!(cfg.dpsgd_tau, Some(3));
        assert_eq!(cfg.batch_size, 32, "default preserved");

        assert!(matches!(
            ExperimentConfig::parse("algorithm = sgd\n"),
            Err(ExperimentError::BadValue { key: "algorithm", .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("no_such_key = 1\n"),
            Err(ExperimentError::UnknownKey(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("workers\n"),
            Err(ExperimentError::BadLine { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("partition_p = 1.5\n"),
            Err(ExperimentError::BadValue { key: "partition_p", .. })
        ));
    }

    #[test]
    fn runs_are_byte_identical_for_a_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path(), "det.csv");
        run_experiment(&cfg).unwrap();
        let first = std::fs::read(dir.path().join("det.csv")).unwrap();
        run_experiment(&cfg).unwrap();
        let second = std::fs::read(dir.path().join("det.csv")).unwrap();
        assert_eq!(first, second);
        assert!(!first.is_empty());
    }

    #[test]
    fn zero_rounds_yields_header_only_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path(), "empty.csv");
        cfg.rounds = 0;
        let out = run_experiment(&cfg).unwrap();
        assert!(out.metrics.is_empty());
        let text = std::fs::read_to_string(out.csv_path).unwrap();
        let mut data_rows = 0;
        let mut saw_header = false;
        for line in text.lines() {
            if line == CSV_HEADER {
                saw_header = true;
            } else if !line.starts_with('#') && !line.trim().is_empty() {
                data_rows += 1;
            }
        }
        assert!(saw_header);
        assert_eq!(data_rows, 0);
    }

    #[test]
    fn csv_schema_is_pinned() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path(), "schema.csv");
        cfg.rounds = 2;
        let out = run_experiment(&cfg).unwrap();
        let text = std::fs::read_to_string(out.csv_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), format!("# schema: {SCHEMA_TAG}"));
        let header = lines.find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header, CSV_HEADER);
        let row = lines.find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(row.split(',').count(), 12);
        assert!(row.starts_with("1,"));
        // floats carry 9 significant digits
        let t_round = row.split(',').nth(1).unwrap();
        assert!(t_round.contains('e'), "{t_round} should be scientific");
    }

    #[test]
    fn target_accuracy_stops_early() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path(), "early.csv");
        cfg.rounds = 50;
        cfg.target_accuracy = Some(0.05); // trivially reached
        let out = run_experiment(&cfg).unwrap();
        assert!(out.reached_target);
        assert!(out.metrics.len() < 50);
    }

    #[test]
    fn compare_reports_and_rejects_mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = small_config(dir.path(), "a.csv");
        a.algorithm = "fedhp".into();
        a.target_accuracy = Some(0.5);
        let mut b = small_config(dir.path(), "b.csv");
        b.algorithm = "d-psgd".into();
        b.target_accuracy = Some(0.5);
        run_experiment(&a).unwrap();
        run_experiment(&b).unwrap();
        let table = compare(&[dir.path().join("a.csv"), dir.path().join("b.csv")], None).unwrap();
        assert!(table.contains("fedhp"));
        assert!(table.contains("d-psgd"));

        // identical configs give identical summaries
        let t1 = compare(&[dir.path().join("a.csv"), dir.path().join("a.csv")], None).unwrap();
        let lines: Vec<&str> = t1.lines().collect();
        assert_eq!(lines[1], lines[2]);

        // a run without target accuracy reports n/a; an unreachable target
        // reports not reached
        let mut c = small_config(dir.path(), "c.csv");
        c.algorithm = "ld-sgd".into();
        run_experiment(&c).unwrap();
        let t2 = compare(&[dir.path().join("a.csv"), dir.path().join("c.csv")], None).unwrap();
        assert!(t2.contains("n/a"));
        let t3 = compare(
            &[dir.path().join("a.csv"), dir.path().join("c.csv")],
            Some(2.0),
        )
        .unwrap();
        assert!(t3.contains("not reached"));

        // different seed: dataset mismatch
        let mut d = small_config(dir.path(), "d.csv");
        d.seed = 7;
        run_experiment(&d).unwrap();
        assert!(matches!(
            compare(&[dir.path().join("a.csv"), dir.path().join("d.csv")], None),
            Err(ExperimentError::DatasetMismatch(_))
        ));
    }

    #[test]
    fn side_outputs_are_flag_gated() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path(), "flags.csv");
        cfg.rounds = 2;
        cfg.dump_distances = true;
        cfg.export_shards = true;
        run_experiment(&cfg).unwrap();
        assert!(dir.path().join("flags.distances.csv").exists());
        assert!(dir.path().join("flags.shards.csv").exists());
    }
}
