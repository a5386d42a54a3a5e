//! Peer-to-peer topology representation and its graph/spectral machinery:
//! Laplacian, BFS connectivity, uniform-weight gossip mixing matrix and the
//! spectral gap of that matrix.

use crate::numkit::{NumError, SymMatrix};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TopoError {
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("edge endpoint {0} out of range for {1} nodes")]
    NodeOutOfRange(usize, usize),
    #[error("bad edge-list line {0}: {1}")]
    BadEdgeLine(usize, String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Undirected simple graph over `n` workers, stored as a dense boolean
/// adjacency kept symmetric with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    adj: Vec<bool>,
}

impl Topology {
    pub fn empty(n: usize) -> Self {
        Topology {
            n,
            adj: vec![false; n * n],
        }
    }

    pub fn full(n: usize) -> Self {
        let mut t = Self::empty(n);
        for i in 0..n {
            for j in 0..n {
                t.adj[i * n + j] = i != j;
            }
        }
        t
    }

    pub fn ring(n: usize) -> Self {
        let mut t = Self::empty(n);
        if n == 2 {
            t.set_edge(0, 1, true);
            return t;
        }
        for i in 0..n {
            if n > 1 {
                t.set_edge(i, (i + 1) % n, true);
            }
        }
        t
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, TopoError> {
        let mut t = Self::empty(n);
        for &(i, j) in edges {
            if i == j {
                return Err(TopoError::SelfLoop(i));
            }
            if i >= n || j >= n {
                return Err(TopoError::NodeOutOfRange(i.max(j), n));
            }
            t.set_edge(i, j, true);
        }
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j]
    }

    pub fn set_edge(&mut self, i: usize, j: usize, present: bool) {
        debug_assert_ne!(i, j);
        self.adj[i * self.n + j] = present;
        self.adj[j * self.n + i] = present;
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.has_edge(i, j)).count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.has_edge(i, j))
    }

    /// Undirected edges as (i, j) pairs with i < j.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    /// Exact BFS reachability from node 0. A single node counts as
    /// connected; the empty graph does not.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut seen = vec![false; self.n];
        let mut queue = vec![0usize];
        seen[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    reached += 1;
                    queue.push(v);
                }
            }
        }
        reached == self.n
    }

    /// L = D - A.
    pub fn laplacian(&self) -> SymMatrix {
        SymMatrix::from_fn(self.n, |i, j| {
            if i == j {
                self.degree(i) as f64
            } else if self.has_edge(i, j) {
                -1.0
            } else {
                0.0
            }
        })
        .expect("laplacian entries are finite")
    }

    /// Edge-list text format: one `i j` pair per line, 0-indexed.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for (i, j) in self.edges() {
            s.push_str(&format!("{} {}\n", i, j));
        }
        s
    }

    /// Parses the `to_edge_list` format. Blank lines and `#` comments are
    /// skipped; node count must be supplied by the caller.
    pub fn parse_edge_list(n: usize, text: &str) -> Result<Self, TopoError> {
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize, TopoError> {
                tok.and_then(|t| t.parse().ok())
                    .ok_or_else(|| TopoError::BadEdgeLine(lineno + 1, line.to_string()))
            };
            let i = parse(it.next())?;
            let j = parse(it.next())?;
            if it.next().is_some() {
                return Err(TopoError::BadEdgeLine(lineno + 1, line.to_string()));
            }
            edges.push((i, j));
        }
        Self::from_edges(n, &edges)
    }
}

/// Uniform gossip weights: every edge mixes with w = 1/(u_max + 1), which
/// keeps W = I - w L symmetric and doubly stochastic with a nonnegative
/// diagonal.
#[derive(Debug, Clone)]
pub struct MixingPlan {
    pub u_max: usize,
    pub w: f64,
    pub matrix: SymMatrix,
}

pub fn mixing_plan(t: &Topology) -> MixingPlan {
    let u_max = t.max_degree();
    let w = 1.0 / (u_max as f64 + 1.0);
    let lap = t.laplacian();
    let matrix = SymMatrix::from_fn(t.n(), |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - w * lap.get(i, j)
    })
    .expect("mixing entries are finite");
    MixingPlan { u_max, w, matrix }
}

/// `lambda2_l` is the algebraic connectivity of the Laplacian; `rho` the
/// second-largest absolute eigenvalue of the mixing matrix.
#[derive(Debug, Clone, Copy)]
pub struct SpectralSummary {
    pub lambda2_l: f64,
    pub rho: f64,
}

const EIG_ONE_TOL: f64 = 1e-8;

pub fn spectral_summary(t: &Topology) -> Result<SpectralSummary, TopoError> {
    let lap_eigs = t.laplacian().eigenvalues()?;
    let lambda2_l = if t.n() >= 2 { lap_eigs[1] } else { 0.0 };

    let w_eigs = mixing_plan(t).matrix.eigenvalues()?;
    let n = t.n();
    let rho = if n <= 1 {
        0.0
    } else if w_eigs[n - 2] > 1.0 - EIG_ONE_TOL {
        // eigenvalue 1 with multiplicity > 1: disconnected graph
        1.0
    } else {
        w_eigs[n - 2].abs().max(w_eigs[0].abs())
    };
    Ok(SpectralSummary { lambda2_l, rho })
}
