//! Embedding sets, synthetic Gaussian data and feature pre-processing.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::math::{powf, sqrt};
use crate::{Error, Matrix, Result};

/// A labeled collection of embeddings, one example per column.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vectors: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    pub class_names: Option<Vec<String>>,
}

impl EmbeddingSet {
    pub fn new(vectors: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if vectors.rows() == 0 || vectors.cols() == 0 {
            return Err(Error::Shape(format!(
                "embedding set must be non-empty, got {}x{}",
                vectors.rows(),
                vectors.cols()
            )));
        }
        if labels.len() != vectors.cols() {
            return Err(Error::Shape(format!(
                "{} labels for {} vectors",
                labels.len(),
                vectors.cols()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Config(format!(
                "label {l} of example {i} is not below the class count {num_classes}"
            )));
        }
        if !vectors.all_finite() {
            return Err(Error::NonFinite(String::from("embedding entry")));
        }
        Ok(EmbeddingSet {
            vectors,
            labels,
            num_classes,
            class_names: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.rows()
    }

    pub fn len(&self) -> usize {
        self.vectors.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Example indices grouped by class id.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = alloc::vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub class_sep: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Isotropic Gaussian clusters with means `class_sep * e_c`.
///
/// Examples are emitted class by class. A `noise_sigma` of zero is accepted
/// and places every example exactly on its class mean.
pub fn synth_gaussian(cfg: &SynthConfig) -> Result<EmbeddingSet> {
    if cfg.num_classes == 0 || cfg.dim == 0 || cfg.per_class == 0 {
        return Err(Error::Config(String::from(
            "classes, dim and per-class count must be positive",
        )));
    }
    if cfg.num_classes > cfg.dim {
        return Err(Error::Config(format!(
            "{} one-hot class means do not fit in dimension {}",
            cfg.num_classes, cfg.dim
        )));
    }
    if !(cfg.class_sep > 0.0) || !(cfg.noise_sigma >= 0.0) {
        return Err(Error::Config(String::from(
            "class_sep must be positive and noise_sigma non-negative",
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.num_classes * cfg.per_class;
    let mut data = Vec::with_capacity(n * cfg.dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..cfg.num_classes {
        for _ in 0..cfg.per_class {
            for k in 0..cfg.dim {
                let mean = if k == c { cfg.class_sep } else { 0.0 };
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(mean + cfg.noise_sigma * z);
            }
            labels.push(c);
        }
    }
    let vectors = Matrix::from_col_major(cfg.dim, n, data)?;
    EmbeddingSet::new(vectors, labels, cfg.num_classes)
}

/// Feature pre-processing applied to the support and query columns of an
/// episode before centroids are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preprocessing {
    #[default]
    L2,
    /// Power transform, l2-normalization, centering.
    Plc,
}

impl Preprocessing {
    pub fn apply(self, vectors: &Matrix) -> Result<Matrix> {
        match self {
            Preprocessing::L2 => preprocess_l2(vectors),
            Preprocessing::Plc => preprocess_plc(vectors),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preprocessing::L2 => "l2",
            Preprocessing::Plc => "plc",
        }
    }
}

/// Scales every column to unit Euclidean norm.
pub fn preprocess_l2(vectors: &Matrix) -> Result<Matrix> {
    let mut out = vectors.clone();
    for j in 0..out.cols() {
        let col = out.col_mut(j);
        let norm = sqrt(col.iter().map(|v| v * v).sum());
        if !(norm > 0.0) {
            return Err(Error::ZeroNorm(j));
        }
        col.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

/// Signed square root, column l2-normalization, then subtraction of the
/// mean column over all columns.
pub fn preprocess_plc(vectors: &Matrix) -> Result<Matrix> {
    if !vectors.all_finite() {
        return Err(Error::NonFinite(String::from("PLC input")));
    }
    let mut powered = vectors.clone();
    for v in powered.as_mut_slice() {
        *v = v.signum() * powf(v.abs(), 0.5);
        if *v == 0.0 {
            *v = 0.0;
        }
    }
    let mut out = preprocess_l2(&powered)?;
    let (d, m) = (out.rows(), out.cols());
    let mut mean = alloc::vec![0.0; d];
    for j in 0..m {
        for (acc, v) in mean.iter_mut().zip(out.col(j)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    for j in 0..m {
        for (v, mu) in out.col_mut(j).iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    Ok(out)
}
