//! Randomized comparison of [`diff::backward`] against central differences.
//!
//! Episodes are 5-way 1-shot with between 2 and 10 queries (so at most 20
//! vertices) and cycle through the complete graph and `k = 3`, crossed with
//! the balanced loss and the alpha loss at `α = 2` and `α = 5`. All
//! parameters start away from their initial values so every path of the
//! chain rule carries signal. Coordinates whose perturbation changes the
//! kNN edge set are skipped and counted.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diff::{backward, forward, FdOracle, GradPhi, ParamCoord, TaskData, Tape};
use crate::embed::preprocess_l2;
use crate::graph::ManifoldParams;
use crate::losses::LossWeights;
use crate::solver::init_centroids;
use crate::{Matrix, Result};

/// Finite-difference formula used as the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// Three-point central difference.
    #[default]
    Central,
    /// Fourth-order five-point difference.
    FivePoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub episodes: usize,
    pub seed: u64,
    pub h: f64,
    pub stencil: Stencil,
    pub tol: f64,
    /// Largest tolerated fraction of skipped coordinates.
    pub max_skip_rate: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            episodes: 20,
            seed: 0,
            h: 1e-5,
            stencil: Stencil::Central,
            tol: 1e-4,
            max_skip_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupStats {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

impl GroupStats {
    fn record(&mut self, rel: f64) {
        self.checked += 1;
        if rel > self.max_rel_err || rel.is_nan() {
            self.max_rel_err = rel;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub centroids: GroupStats,
    pub g_raw: GroupStats,
    pub b_raw: GroupStats,
    pub tol: f64,
    pub max_skip_rate: f64,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups().iter().map(|(_, g)| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn skip_rate(&self) -> f64 {
        let (checked, skipped) = self
            .groups()
            .iter()
            .fold((0, 0), |(c, s), (_, g)| (c + g.checked, s + g.skipped));
        if checked + skipped == 0 {
            0.0
        } else {
            skipped as f64 / (checked + skipped) as f64
        }
    }

    pub fn passed(&self) -> bool {
        self.groups().iter().all(|(_, g)| g.max_rel_err < self.tol) && self.skip_rate() < self.max_skip_rate
    }

    pub fn groups(&self) -> [(&'static str, GroupStats); 3] {
        [("centroids", self.centroids), ("g_raw", self.g_raw), ("b_raw", self.b_raw)]
    }
}

/// One randomized check case: a prepared task, perturbed parameters and a loss.
#[derive(Debug, Clone)]
pub struct CheckCase {
    pub task: TaskData,
    pub params: ManifoldParams,
    pub weights: LossWeights,
}

/// The `index`-th case of the stream seeded by `seed`.
pub fn check_case(seed: u64, index: usize) -> Result<CheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let (n, d) = (5usize, 6usize);
    let m = rng.random_range(2..=10usize);
    let means: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| 2.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>())
        .collect();
    let draw = |c: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        means[c]
            .iter()
            .map(|mu| mu + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect()
    };
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| draw(c, &mut rng)).collect();
    for _ in 0..m {
        let c = rng.random_range(0..n);
        cols.push(draw(c, &mut rng));
    }
    let refs: Vec<&[f64]> = cols.iter().map(|c| &c[..]).collect();
    let all = preprocess_l2(&Matrix::from_columns(&refs))?;
    let support = all.col_range(0, n);
    let labels: Vec<usize> = (0..n).collect();
    let task = TaskData {
        query: all.col_range(n, n + m),
        support_labels: labels.clone(),
        n_classes: n,
        support,
    };

    let k = if index.is_multiple_of(2) { None } else { Some(3) };
    let weights = match (index / 2) % 3 {
        0 => LossWeights::balanced(),
        1 => LossWeights::imbalanced(2.0),
        _ => LossWeights::imbalanced(5.0),
    };
    let mut centroids = init_centroids(&task.support, &labels, n)?;
    for v in centroids.as_mut_slice() {
        *v += 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
    }
    let mut params = ManifoldParams::new(centroids, task.n_vertices(), 0.8, k, 15.0)?;
    for v in params.g_raw.as_mut_slice() {
        *v = rng.random_range(-0.5..0.5);
    }
    for v in params.b_raw.as_mut_slice() {
        *v = rng.random_range(-2.0..2.0);
    }
    Ok(CheckCase {
        task,
        params,
        weights,
    })
}

/// Runs the check with the crate's own backward pass.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    run_gradcheck_with(cfg, backward)
}

/// Runs the check against an arbitrary gradient routine.
pub fn run_gradcheck_with<F>(cfg: &GradcheckConfig, grad_fn: F) -> Result<GradcheckReport>
where
    F: Fn(&Tape, &ManifoldParams) -> Result<GradPhi>,
{
    let mut report = GradcheckReport {
        centroids: GroupStats::default(),
        g_raw: GroupStats::default(),
        b_raw: GroupStats::default(),
        tol: cfg.tol,
        max_skip_rate: cfg.max_skip_rate,
    };
    for index in 0..cfg.episodes {
        let case = check_case(cfg.seed, index)?;
        let tape = forward(&case.task, &case.params, &case.weights)?;
        let grad = grad_fn(&tape, &case.params)?;
        let oracle = FdOracle::new(&case.task, &case.params, &case.weights)?;
        for coord in ParamCoord::all(&case.params) {
            let stats = match coord {
                ParamCoord::Centroid { .. } => &mut report.centroids,
                ParamCoord::GRaw { .. } => &mut report.g_raw,
                ParamCoord::BRaw { .. } => &mut report.b_raw,
            };
            let fd = match cfg.stencil {
                Stencil::Central => oracle.derivative(coord, cfg.h)?,
                Stencil::FivePoint => oracle.derivative_five_point(coord, cfg.h)?,
            };
            if fd.edges_changed {
                stats.skipped += 1;
                continue;
            }
            let analytic = grad.get(coord);
            stats.record((analytic - fd.derivative).abs() / fd.derivative.abs().max(1e-8));
        }
    }
    Ok(report)
}
