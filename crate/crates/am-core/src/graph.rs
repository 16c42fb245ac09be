//! Affinity graph over centroids, support and query vectors.
//!
//! Vertex order is always centroids first, then support, then query. Edges
//! come from k-nearest-neighbour selection (or every pair, for the complete
//! graph), never join two centroids, and carry Gaussian affinities with a
//! learnable per-pair scale `G = exp(g_raw)`. The symmetrized adjacency is
//! gated elementwise by `B` and then normalized by its degrees.
//!
//! The gate averages the two logits of each pair,
//! `B_ij = (logistic(b_raw_ij) + logistic(b_raw_ji)) / 2`, so the gated
//! matrix stays symmetric for any `b_raw`. Without that, the normalized
//! adjacency would lose its symmetry and its spectral bound of 1 as soon
//! as the optimizer moved the two logits of a pair apart.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, sqrt};
use crate::matrix::squared_distance;
use crate::{Error, Matrix, Result};

/// Initial gate logit; `logistic(9.2) ≈ 0.9999`.
pub const B_RAW_INIT: f64 = 9.2;

/// Degree floor applied before `D^{-1/2}`.
pub const DEGREE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldParams {
    /// `d x N`.
    pub centroids: Matrix,
    /// `T x T`, unconstrained; the affinity scale is `exp(g_raw)`.
    pub g_raw: Matrix,
    /// `T x T`, unconstrained; see the module docs for how it forms the gate.
    pub b_raw: Matrix,
    pub beta: f64,
    /// `None` selects the complete graph.
    pub k_neighbors: Option<usize>,
    pub tau: f64,
}

impl ManifoldParams {
    /// Centroids as given, `G = 1` and `B ≈ 1` over `t` vertices.
    pub fn new(
        centroids: Matrix,
        t: usize,
        beta: f64,
        k_neighbors: Option<usize>,
        tau: f64,
    ) -> Result<Self> {
        let p = ManifoldParams {
            centroids,
            g_raw: Matrix::zeros(t, t),
            b_raw: Matrix::filled(t, t, B_RAW_INIT),
            beta,
            k_neighbors,
            tau,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.k_neighbors == Some(0) {
            return Err(Error::Config("k must be positive".into()));
        }
        let t = self.g_raw.rows();
        if self.g_raw.cols() != t || self.b_raw.rows() != t || self.b_raw.cols() != t {
            return Err(Error::Shape("g_raw and b_raw must both be T x T".into()));
        }
        Ok(())
    }

    pub fn n_centroids(&self) -> usize {
        self.centroids.cols()
    }

    pub fn n_vertices(&self) -> usize {
        self.g_raw.rows()
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

/// Ordered vertex pairs `(i, j)`, meaning `v_i` is a neighbour of `v_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSet {
    n: usize,
    mask: Vec<bool>,
    count: usize,
}

impl EdgeSet {
    pub fn empty(n: usize) -> Self {
        EdgeSet {
            n,
            mask: vec![false; n * n],
            count: 0,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.mask[i + j * self.n]
    }

    pub fn insert(&mut self, i: usize, j: usize) {
        let slot = &mut self.mask[i + j * self.n];
        if !*slot {
            *slot = true;
            self.count += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Pairs in column-major order (grouped by `j`).
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(idx, _)| (idx % n, idx / n))
    }
}

/// `V = (C V^s V^q)`.
pub fn assemble_vertices(centroids: &Matrix, support: &Matrix, query: &Matrix) -> Result<Matrix> {
    Matrix::hcat(&[centroids, support, query])
}

/// Exactly symmetric matrix of squared distances between the columns of `v`.
pub fn pairwise_sq_distances(v: &Matrix) -> Matrix {
    let t = v.cols();
    let mut d = Matrix::zeros(t, t);
    for j in 0..t {
        for i in 0..j {
            let q = squared_distance(v.col(i), v.col(j));
            d[(i, j)] = q;
            d[(j, i)] = q;
        }
    }
    d
}

pub fn knn_edges(v: &Matrix, k: Option<usize>, n_centroids: usize) -> EdgeSet {
    knn_edges_from_distances(&pairwise_sq_distances(v), k, n_centroids)
}

/// Edge selection from a precomputed distance matrix. `k` is clamped to
/// `T - 1`; distance ties go to the lower vertex index.
pub fn knn_edges_from_distances(dist2: &Matrix, k: Option<usize>, n_centroids: usize) -> EdgeSet {
    let t = dist2.rows();
    let mut edges = EdgeSet::empty(t);
    let k = k.unwrap_or(t).min(t.saturating_sub(1));
    let mut candidates: Vec<usize> = Vec::with_capacity(t);
    for j in 0..t {
        candidates.clear();
        candidates.extend((0..t).filter(|&i| i != j));
        if k < candidates.len() {
            let col = dist2.col(j);
            candidates.select_nth_unstable_by(k, |&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
        }
        for &i in &candidates[..k] {
            if !(i < n_centroids && j < n_centroids) {
                edges.insert(i, j);
            }
        }
    }
    edges
}

/// Population standard deviation of the off-diagonal squared distances,
/// or 1.0 when that is zero.
pub fn global_sigma2(dist2: &Matrix) -> f64 {
    let t = dist2.rows();
    if t < 2 {
        return 1.0;
    }
    let pairs = (t * (t - 1) / 2) as f64;
    let mut sum = 0.0;
    for j in 0..t {
        for i in 0..j {
            sum += dist2[(i, j)];
        }
    }
    let mean = sum / pairs;
    let mut ss = 0.0;
    for j in 0..t {
        for i in 0..j {
            let e = dist2[(i, j)] - mean;
            ss += e * e;
        }
    }
    let std = sqrt(ss / pairs);
    if std > 0.0 && std.is_finite() {
        std
    } else {
        1.0
    }
}

#[derive(Debug, Clone)]
pub struct GraphState {
    pub edges: EdgeSet,
    pub dist2: Matrix,
    /// `A`, nonzero only on `edges`.
    pub affinity: Matrix,
    /// `W = (A + A^T) / 2`.
    pub adjacency: Matrix,
    /// Effective gate `B`.
    pub gate: Matrix,
    /// `W_B = W ∘ B`.
    pub gated: Matrix,
    /// Row sums of `W_B`, before flooring.
    pub degrees: Vec<f64>,
    /// `D^{-1/2} W_B D^{-1/2}`.
    pub normalized: Matrix,
    pub sigma2: f64,
}

pub fn build_graph(v: &Matrix, params: &ManifoldParams, n_centroids: usize) -> Result<GraphState> {
    build_graph_with_sigma2(v, params, n_centroids, None)
}

/// As [`build_graph`], optionally pinning the global scale instead of
/// recomputing it from `v`.
pub fn build_graph_with_sigma2(
    v: &Matrix,
    params: &ManifoldParams,
    n_centroids: usize,
    sigma2: Option<f64>,
) -> Result<GraphState> {
    let t = v.cols();
    if params.n_vertices() != t {
        return Err(Error::Shape(format!(
            "parameters cover {} vertices, graph has {}",
            params.n_vertices(),
            t
        )));
    }
    let dist2 = pairwise_sq_distances(v);
    let edges = knn_edges_from_distances(&dist2, params.k_neighbors, n_centroids);
    let sigma2 = sigma2.unwrap_or_else(|| global_sigma2(&dist2));

    let mut affinity = Matrix::zeros(t, t);
    for (i, j) in edges.iter() {
        let g = exp(params.g_raw[(i, j)]);
        let a = exp(-dist2[(i, j)] / (g * sigma2));
        if !a.is_finite() {
            return Err(Error::NonFiniteAffinity(i, j));
        }
        affinity[(i, j)] = a;
    }

    let mut adjacency = Matrix::zeros(t, t);
    let mut gate = Matrix::zeros(t, t);
    let mut gated = Matrix::zeros(t, t);
    for j in 0..t {
        for i in 0..t {
            let w = 0.5 * (affinity[(i, j)] + affinity[(j, i)]);
            let b = 0.5 * (logistic(params.b_raw[(i, j)]) + logistic(params.b_raw[(j, i)]));
            adjacency[(i, j)] = w;
            gate[(i, j)] = b;
            gated[(i, j)] = w * b;
        }
    }

    let degrees: Vec<f64> = (0..t).map(|i| (0..t).map(|j| gated[(i, j)]).sum()).collect();
    let inv_sqrt: Vec<f64> = degrees.iter().map(|&d| 1.0 / sqrt(d.max(DEGREE_FLOOR))).collect();
    let mut normalized = Matrix::zeros(t, t);
    for j in 0..t {
        for i in 0..t {
            normalized[(i, j)] = inv_sqrt[i] * gated[(i, j)] * inv_sqrt[j];
        }
    }

    Ok(GraphState {
        edges,
        dist2,
        affinity,
        adjacency,
        gate,
        gated,
        degrees,
        normalized,
        sigma2,
    })
}
