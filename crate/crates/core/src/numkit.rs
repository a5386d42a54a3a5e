//! Minimal dense linear algebra and deterministic randomness shared by the
//! rest of the crate: `l2` vector helpers, a symmetric matrix type with a
//! cyclic-Jacobi eigensolver, and a seeded splittable PRNG.
//!
//! Everything here is dependency-free on purpose: workers stay small
//! (N <= 128) and reproducibility across runs matters more than speed.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumError {
    #[error("matrix entry ({0},{1}) is not finite")]
    NonFinite(usize, usize),
    #[error("matrix is not symmetric at ({0},{1})")]
    NotSymmetric(usize, usize),
    #[error("vector contains a non-finite entry at index {0}")]
    NonFiniteVec(usize),
    #[error("Jacobi sweep limit reached before off-diagonal tolerance")]
    NoConvergence,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
}

/// Euclidean norm of a vector.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean distance ||a - b||.
pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn all_finite(v: &[f64]) -> Result<(), NumError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(NumError::NonFiniteVec(i)),
        None => Ok(()),
    }
}

/// Dense symmetric matrix with full row-major storage.
///
/// Symmetry is enforced at construction and preserved by `set_sym`, so the
/// eigensolver never has to re-check it.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds the matrix from `f(i, j)` evaluated on i <= j and mirrored, so
    /// the result is symmetric by construction.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, NumError> {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                if !v.is_finite() {
                    return Err(NumError::NonFinite(i, j));
                }
                m.data[i * n + j] = v;
                m.data[j * n + i] = v;
            }
        }
        Ok(m)
    }

    /// Validates an explicit row layout: square, exactly symmetric, finite.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumError> {
        let n = rows.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(NumError::DimMismatch(r.len(), n));
            }
            for (j, &v) in r.iter().enumerate() {
                if !v.is_finite() {
                    return Err(NumError::NonFinite(i, j));
                }
                if rows[j][i] != v {
                    return Err(NumError::NotSymmetric(i, j));
                }
            }
        }
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n..(i + 1) * n].copy_from_slice(&rows[i]);
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sets entry (i, j) and its mirror (j, i).
    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// All eigenvalues, sorted ascending.
    ///
    /// Cyclic Jacobi rotations to an absolute off-diagonal tolerance of
    /// 1e-10, at most 100 sweeps. Plenty for the worker counts this crate
    /// targets; no eigenvectors are accumulated because nothing needs them.
    pub fn eigenvalues(&self) -> Result<Vec<f64>, NumError> {
        const TOL: f64 = 1e-10;
        const MAX_SWEEPS: usize = 100;

        all_finite(&self.data).map_err(|_| NumError::NonFinite(0, 0))?;
        let n = self.n;
        if n == 0 {
            return Ok(vec![]);
        }
        if n == 1 {
            return Ok(vec![self.data[0]]);
        }

        let mut a = self.data.clone();
        let idx = |i: usize, j: usize| i * n + j;

        for _ in 0..MAX_SWEEPS {
            let mut off = 0.0;
            for p in 0..n - 1 {
                for q in p + 1..n {
                    off += a[idx(p, q)].abs();
                }
            }
            if off <= TOL {
                let mut eigs: Vec<f64> = (0..n).map(|i| a[idx(i, i)]).collect();
                eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
                return Ok(eigs);
            }

            for p in 0..n - 1 {
                for q in p + 1..n {
                    let apq = a[idx(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[idx(p, p)];
                    let aqq = a[idx(q, q)];
                    let diff = aqq - app;
                    // tangent of the rotation angle that annihilates a_pq
                    let t = if diff.abs() < 1e-300 {
                        1.0_f64.copysign(apq)
                    } else {
                        let theta = 0.5 * diff / apq;
                        let t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                        if theta < 0.0 {
                            -t
                        } else {
                            t
                        }
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let tau = s / (1.0 + c);
                    let h = t * apq;

                    a[idx(p, p)] = app - h;
                    a[idx(q, q)] = aqq + h;
                    a[idx(p, q)] = 0.0;
                    a[idx(q, p)] = 0.0;

                    for j in 0..n {
                        if j == p || j == q {
                            continue;
                        }
                        let ajp = a[idx(j, p)];
                        let ajq = a[idx(j, q)];
                        let np = ajp - s * (ajq + ajp * tau);
                        let nq = ajq + s * (ajp - ajq * tau);
                        a[idx(j, p)] = np;
                        a[idx(p, j)] = np;
                        a[idx(j, q)] = nq;
                        a[idx(q, j)] = nq;
                    }
                }
            }
        }
        Err(NumError::NoConvergence)
    }
}

/// Deterministic 64-bit PRNG (SplitMix64).
///
/// `next_u64` advances the state by the golden-ratio constant and scrambles
/// it with Stafford's mix13 finalizer. Identical seeds give identical
/// sequences on every platform; `stream` derives well-separated independent
/// sequences from (seed, stream id) so each worker, link and subsystem can
/// own its own generator.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng::stream(seed, 0)
    }

    /// Derives the generator for stream `stream_id` of `seed`. Two distinct
    /// ids land in far-apart regions of the sequence space.
    pub fn stream(seed: u64, stream_id: u64) -> Self {
        Rng {
            state: mix64(seed ^ mix64(stream_id.wrapping_mul(GOLDEN) ^ 0x6C62_272E_07BB_0142)),
        }
    }

    /// Folds several id components into a single stream id.
    pub fn substream(seed: u64, parts: &[u64]) -> Self {
        let mut id = 0u64;
        for &p in parts {
            id = mix64(id ^ p.wrapping_add(GOLDEN));
        }
        Rng::stream(seed, id)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n) via 128-bit multiply-shift.
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller (two uniforms per draw).
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        // u1 in (0, 1] so the log never sees zero
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        mean + std * z
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices from [0, n), uniformly, via partial shuffle.
    pub fn sample_distinct(&mut self, n: usize, k: usize, scratch: &mut Vec<usize>) -> Vec<usize> {
        debug_assert!(k <= n);
        scratch.clear();
        scratch.extend(0..n);
        for i in 0..k {
            let j = i + self.next_below(n - i);
            scratch.swap(i, j);
        }
        scratch[..k].to_vec()
    }
}
