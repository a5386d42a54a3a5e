//! Synthetic classification data and the class-skew partitioner: a fraction
//! `p` of every class is split equally across that class's three-worker
//! group, the rest is dealt uniformly over all other workers.

use crate::learncore::Sample;
use crate::numkit::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("cluster spread must be positive, got {0}")]
    BadSpread(f64),
    #[error("non-IID level p={0} outside (0, 1]")]
    BadLevel(f64),
    #[error("worker count must be positive")]
    NoWorkers,
    #[error("worker {0} would receive an empty shard; grow the dataset or adjust p")]
    EmptyShard(usize),
}

/// Gaussian cluster classification task. Deterministic for a fixed seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub features: usize,
    pub samples_per_class: usize,
    pub cluster_spread: f64,
    pub seed: u64,
}

/// Train and test splits, both stratified by class.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Draws one Gaussian cluster per class around a standard-normal mean
/// vector, then splits 80/20 per class.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    if spec.classes < 2 {
        return Err(DataError::TooFewClasses(spec.classes));
    }
    if !(spec.cluster_spread > 0.0) || !spec.cluster_spread.is_finite() {
        return Err(DataError::BadSpread(spec.cluster_spread));
    }
    let mut mean_rng = Rng::substream(spec.seed, &[0xDA7A, 0]);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.features).map(|_| mean_rng.normal(0.0, 1.0)).collect())
        .collect();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mean) in means.iter().enumerate() {
        let mut rng = Rng::substream(spec.seed, &[0xDA7A, 1 + c as u64]);
        let n_test = spec.samples_per_class / 5;
        for k in 0..spec.samples_per_class {
            let features = mean
                .iter()
                .map(|&m| m + spec.cluster_spread * rng.normal(0.0, 1.0))
                .collect();
            let sample = Sample { features, label: c };
            if k < n_test {
                test.push(sample);
            } else {
                train.push(sample);
            }
        }
    }
    Ok(Dataset { train, test })
}

/// Class-skew partition parameters. `group_size` workers share the
/// concentrated fraction of each class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub level: f64,
    pub workers: usize,
    pub group_size: usize,
}

impl PartitionSpec {
    pub fn new(level: f64, workers: usize) -> Self {
        PartitionSpec {
            level,
            workers,
            group_size: 3,
        }
    }
}

/// Splits the train set into `workers` disjoint index shards.
///
/// Class `c` maps to the group {g*c, g*c+1, ..., g*c+g-1} mod N, wrapping
/// round-robin when classes outnumber groups. Within a class the
/// concentrated and remainder portions are dealt round-robin in shuffled
/// order, so shard sizes differ by at most one sample per class.
pub fn partition(
    train: &[Sample],
    spec: &PartitionSpec,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>, DataError> {
    if spec.workers == 0 {
        return Err(DataError::NoWorkers);
    }
    if !(spec.level > 0.0 && spec.level <= 1.0) {
        return Err(DataError::BadLevel(spec.level));
    }
    let n = spec.workers;
    let g = spec.group_size.max(1).min(n);

    let mut by_class: Vec<Vec<usize>> = Vec::new();
    for (idx, s) in train.iter().enumerate() {
        if s.label >= by_class.len() {
            by_class.resize(s.label + 1, Vec::new());
        }
        by_class[s.label].push(idx);
    }

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (c, class_indices) in by_class.iter().enumerate() {
        let mut pool = class_indices.clone();
        rng.shuffle(&mut pool);

        let group: Vec<usize> = (0..g).map(|k| (g * c + k) % n).collect();
        let outside: Vec<usize> = (0..n).filter(|w| !group.contains(w)).collect();

        let n_conc = (spec.level * pool.len() as f64).round() as usize;
        let n_conc = n_conc.min(pool.len());
        for (k, &idx) in pool[..n_conc].iter().enumerate() {
            shards[group[k % group.len()]].push(idx);
        }
        let rest = &pool[n_conc..];
        if outside.is_empty() {
            for (k, &idx) in rest.iter().enumerate() {
                shards[group[k % group.len()]].push(idx);
            }
        } else {
            for (k, &idx) in rest.iter().enumerate() {
                shards[outside[k % outside.len()]].push(idx);
            }
        }
    }

    if let Some(w) = shards.iter().position(|s| s.is_empty()) {
        return Err(DataError::EmptyShard(w));
    }
    Ok(shards)
}

/// Shard CSV for inspection: features..., label, worker_id.
pub fn shards_to_csv(train: &[Sample], shards: &[Vec<usize>]) -> String {
    let mut out = String::new();
    if let Some(first) = train.first() {
        for k in 0..first.features.len() {
            out.push_str(&format!("f{k},"));
        }
        out.push_str("label,worker\n");
    }
    for (w, shard) in shards.iter().enumerate() {
        for &idx in shard {
            let s = &train[idx];
            for v in &s.features {
                out.push_str(&format!("{v:.9e},"));
            }
            out.push_str(&format!("{},{}\n", s.label, w));
        }
    }
    out
}
