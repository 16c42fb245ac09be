//! Closed-form label propagation `Z = Y (I - β𝒲)^{-1}` and the column
//! softmax that turns manifold class similarities into probabilities.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::math::exp;
use crate::matrix::Lu;
use crate::{Error, Matrix, Result};

/// `Y = (I_N 0 0)`: one-hot rows for the centroids, zeros elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelMatrix {
    pub n_classes: usize,
    pub n_vertices: usize,
}

impl LabelMatrix {
    pub fn new(n_classes: usize, n_vertices: usize) -> Self {
        LabelMatrix {
            n_classes,
            n_vertices,
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        let mut y = Matrix::zeros(self.n_classes, self.n_vertices);
        for j in 0..self.n_classes {
            y[(j, j)] = 1.0;
        }
        y
    }
}

/// Result of a propagation; the factors of `I - β𝒲` are kept for the
/// adjoint solve.
#[derive(Debug, Clone)]
pub struct Propagation {
    /// `N x T` manifold class similarities.
    pub z: Matrix,
    pub factors: Lu,
}

/// Solves `Z (I - β𝒲) = Y` for an arbitrary `N x T` right-hand side.
pub fn label_propagate(y: &Matrix, w_norm: &Matrix, beta: f64) -> Result<Propagation> {
    let t = w_norm.rows();
    if w_norm.cols() != t || y.cols() != t {
        return Err(Error::Shape(format!(
            "labels are {}x{}, graph is {}x{}",
            y.rows(),
            y.cols(),
            w_norm.rows(),
            w_norm.cols()
        )));
    }
    let mut m = Matrix::identity(t);
    for (dst, &w) in m.as_mut_slice().iter_mut().zip(w_norm.as_slice()) {
        *dst -= beta * w;
    }
    let factors = Lu::factorize(&m)?;
    // each row z_n satisfies M^T z_n^T = y_n^T
    let mut z = Matrix::zeros(y.rows(), t);
    for n in 0..y.rows() {
        let row = y.row(n);
        let sol = if row.iter().all(|&v| v == 0.0) {
            row
        } else {
            factors.solve_transpose(&row)
        };
        for (k, v) in sol.into_iter().enumerate() {
            z[(n, k)] = v;
        }
    }
    Ok(Propagation { z, factors })
}

/// Column probabilities split into centroid, support and query blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTriplet {
    /// `N x T`, softmax of `τ z` per column.
    pub p: Matrix,
    /// `N x T`, the similarities the softmax was applied to.
    pub z: Matrix,
    pub n_support: usize,
}

impl ProbTriplet {
    pub fn n_classes(&self) -> usize {
        self.p.rows()
    }

    pub fn n_query(&self) -> usize {
        self.p.cols() - self.n_classes() - self.n_support
    }

    pub fn support_range(&self) -> core::ops::Range<usize> {
        let n = self.n_classes();
        n..n + self.n_support
    }

    pub fn query_range(&self) -> core::ops::Range<usize> {
        self.n_classes() + self.n_support..self.p.cols()
    }

    pub fn p_c(&self) -> Matrix {
        self.p.col_range(0, self.n_classes())
    }

    pub fn p_s(&self) -> Matrix {
        let r = self.support_range();
        self.p.col_range(r.start, r.end)
    }

    pub fn p_q(&self) -> Matrix {
        let r = self.query_range();
        self.p.col_range(r.start, r.end)
    }
}

/// Max-stabilized softmax of `τ z` over each column.
pub fn class_softmax(z: &Matrix, tau: f64, n_support: usize) -> Result<ProbTriplet> {
    if !z.all_finite() {
        return Err(Error::NonFinite(String::from("manifold similarities")));
    }
    if z.rows() + n_support > z.cols() {
        return Err(Error::Shape(format!(
            "{} centroids and {} support columns exceed {} vertices",
            z.rows(),
            n_support,
            z.cols()
        )));
    }
    let mut p = Matrix::zeros(z.rows(), z.cols());
    for j in 0..z.cols() {
        let col = z.col(j);
        let max = col.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let out = p.col_mut(j);
        let mut sum = 0.0;
        for (o, &v) in out.iter_mut().zip(col) {
            *o = exp(tau * (v - max));
            sum += *o;
        }
        out.iter_mut().for_each(|o| *o /= sum);
    }
    Ok(ProbTriplet {
        p,
        z: z.clone(),
        n_support,
    })
}

/// Per-column argmax; ties go to the lower class index.
pub fn predict_labels(p_q: &Matrix) -> Vec<usize> {
    (0..p_q.cols())
        .map(|j| {
            let col = p_q.col(j);
            let mut best = 0;
            for (k, &v) in col.iter().enumerate().skip(1) {
                if v > col[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
