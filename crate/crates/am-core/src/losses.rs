//! Mutual-information objectives over the support and query probabilities.
//!
//! Each term returns an entropy-like quantity with the sign stated on the
//! function; only [`total_loss`] combines them into the minimized objective:
//!
//! - balanced: `λ3·CE + λ2·H̄(P^q) − λ1·H(p̄^q)`
//! - imbalanced: `λ3·CE + λ2·H̄_α(P^q) − λ1·H_α(p̄^q)`

use alloc::format;
use alloc::vec::Vec;

use crate::math::{ln, powf};
use crate::propagate::ProbTriplet;
use crate::{Error, Matrix, Result};

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Balanced,
    Imbalanced,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Only read in imbalanced mode.
    pub alpha: f64,
    pub mode: LossMode,
}

impl LossWeights {
    /// `λ1 = λ3 = 1`, `λ2 = 10`.
    pub fn balanced() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 10.0,
            lambda3: 1.0,
            alpha: 2.0,
            mode: LossMode::Balanced,
        }
    }

    /// `λ1 = λ2 = λ3 = 1` with the given α.
    pub fn imbalanced(alpha: f64) -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            alpha,
            mode: LossMode::Imbalanced,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == LossMode::Imbalanced && (!(self.alpha > 0.0) || self.alpha == 1.0) {
            return Err(Error::Config(format!(
                "alpha must be positive and different from 1, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[inline]
fn floored_ln(p: f64) -> f64 {
    ln(p.max(LOG_FLOOR))
}

/// d/dp of `p · ln(max(p, floor))`.
#[inline]
fn xlogx_grad(p: f64) -> f64 {
    if p > LOG_FLOOR {
        ln(p) + 1.0
    } else {
        ln(LOG_FLOOR)
    }
}

fn check_labels(p_s: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != p_s.cols() {
        return Err(Error::Shape(format!(
            "{} support labels for {} support columns",
            labels.len(),
            p_s.cols()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= p_s.rows()) {
        return Err(Error::Shape(format!("label {l} outside {} classes", p_s.rows())));
    }
    Ok(())
}

/// Average cross-entropy of the support predictions against their labels.
pub fn cross_entropy_support(p_s: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(p_s, labels)?;
    let sum: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| floored_ln(p_s[(l, i)]))
        .sum();
    Ok(-sum / labels.len().max(1) as f64)
}

/// Mean Shannon entropy of the query columns, `H̄(P^q) ≥ 0`.
pub fn conditional_entropy(p_q: &Matrix) -> f64 {
    let m = p_q.cols().max(1) as f64;
    -p_q.as_slice().iter().map(|&p| p * floored_ln(p)).sum::<f64>() / m
}

/// Mean query column `p̄`.
pub fn marginal(p_q: &Matrix) -> Vec<f64> {
    let m = p_q.cols().max(1) as f64;
    let mut bar = alloc::vec![0.0; p_q.rows()];
    for j in 0..p_q.cols() {
        for (b, p) in bar.iter_mut().zip(p_q.col(j)) {
            *b += p;
        }
    }
    bar.iter_mut().for_each(|b| *b /= m);
    bar
}

/// Shannon entropy of the mean query column, `H(p̄) ≥ 0`.
pub fn marginal_entropy(p_q: &Matrix) -> f64 {
    -marginal(p_q).iter().map(|&p| p * floored_ln(p)).sum::<f64>()
}

/// `H̄_α(P^q) = −1/(α−1) · 1/M · Σ p^α`.
pub fn alpha_conditional(p_q: &Matrix, alpha: f64) -> f64 {
    let m = p_q.cols().max(1) as f64;
    let s: f64 = p_q.as_slice().iter().map(|&p| powf(p, alpha)).sum();
    -s / ((alpha - 1.0) * m)
}

/// `H_α(p̄) = −1/(α−1) · Σ p̄^α`.
pub fn alpha_marginal(p_q: &Matrix, alpha: f64) -> f64 {
    let s: f64 = marginal(p_q).iter().map(|&p| powf(p, alpha)).sum();
    -s / (alpha - 1.0)
}

/// The minimized objective for the configured mode.
pub fn total_loss(p: &ProbTriplet, labels: &[usize], w: &LossWeights) -> Result<f64> {
    w.validate()?;
    let p_s = p.p_s();
    let p_q = p.p_q();
    let ce = cross_entropy_support(&p_s, labels)?;
    Ok(match w.mode {
        LossMode::Balanced => {
            w.lambda3 * ce + w.lambda2 * conditional_entropy(&p_q) - w.lambda1 * marginal_entropy(&p_q)
        }
        LossMode::Imbalanced => {
            w.lambda3 * ce + w.lambda2 * alpha_conditional(&p_q, w.alpha)
                - w.lambda1 * alpha_marginal(&p_q, w.alpha)
        }
    })
}

/// Loss value together with `∂loss/∂P` (`N x T`, zero on centroid columns).
pub fn total_loss_with_grad(p: &ProbTriplet, labels: &[usize], w: &LossWeights) -> Result<(f64, Matrix)> {
    let value = total_loss(p, labels, w)?;
    let n = p.n_classes();
    let mut grad = Matrix::zeros(n, p.p.cols());

    let support = p.support_range();
    let l = support.len().max(1) as f64;
    for (i, &label) in labels.iter().enumerate() {
        let pv = p.p[(label, support.start + i)];
        if pv > LOG_FLOOR {
            grad[(label, support.start + i)] = -w.lambda3 / (l * pv);
        }
    }

    let query = p.query_range();
    let m = query.len().max(1) as f64;
    let p_q = p.p.col_range(query.start, query.end);
    let bar = marginal(&p_q);
    match w.mode {
        LossMode::Balanced => {
            // −λ1 H(p̄) contributes λ1 (ln p̄_j + 1) / M to every query entry of row j
            let row_term: Vec<f64> = bar.iter().map(|&b| w.lambda1 * xlogx_grad(b) / m).collect();
            for col in query.clone() {
                for (j, rt) in row_term.iter().enumerate() {
                    grad[(j, col)] = -w.lambda2 * xlogx_grad(p.p[(j, col)]) / m + rt;
                }
            }
        }
        LossMode::Imbalanced => {
            let a = w.alpha;
            let scale = a / (a - 1.0);
            let row_term: Vec<f64> = bar.iter().map(|&b| w.lambda1 * scale * powf(b, a - 1.0) / m).collect();
            for col in query.clone() {
                for (j, rt) in row_term.iter().enumerate() {
                    grad[(j, col)] = -w.lambda2 * scale * powf(p.p[(j, col)], a - 1.0) / m + rt;
                }
            }
        }
    }
    Ok((value, grad))
}
