//! The adaptation loop: pre-process, initialize centroids at the class
//! prototypes, then repeat graph construction, propagation, loss, backward
//! pass and an Adam update for a fixed number of steps.

use alloc::format;
use alloc::vec::Vec;

use crate::diff::{backward, forward, GradPhi, TaskData};
use crate::embed::Preprocessing;
use crate::episodes::Episode;
use crate::graph::ManifoldParams;
use crate::losses::LossWeights;
use crate::math::{powf, sqrt};
use crate::propagate::predict_labels;
use crate::{Error, Matrix, Result};

/// Which parameter groups the optimizer may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub learn_centroids: bool,
    pub learn_g: bool,
    pub learn_b: bool,
}

impl Ablation {
    pub const ALL: Ablation = Ablation {
        learn_centroids: true,
        learn_g: true,
        learn_b: true,
    };
    pub const FROZEN: Ablation = Ablation {
        learn_centroids: false,
        learn_g: false,
        learn_b: false,
    };

    pub fn any(&self) -> bool {
        self.learn_centroids || self.learn_g || self.learn_b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub r_steps: usize,
    pub lr: f64,
    pub loss: LossWeights,
    pub k_neighbors: Option<usize>,
    pub beta: f64,
    pub tau: f64,
    pub preprocessing: Preprocessing,
    pub ablation: Ablation,
}

impl SolverConfig {
    /// Reference settings: `r = 1000`, `lr = 1e-4`, `τ = 15`, l2
    /// pre-processing, every group learnable; `k = 20`, `β = 0.8`, `α = 2`
    /// for one shot and `k = 10`, `β = 0.9`, `α = 5` otherwise.
    pub fn defaults(k_shot: usize, balanced_loss: bool) -> Self {
        let one_shot = k_shot <= 1;
        let alpha = if one_shot { 2.0 } else { 5.0 };
        SolverConfig {
            r_steps: 1000,
            lr: 1e-4,
            loss: if balanced_loss {
                LossWeights::balanced()
            } else {
                LossWeights::imbalanced(alpha)
            },
            k_neighbors: Some(if one_shot { 20 } else { 10 }),
            beta: if one_shot { 0.8 } else { 0.9 },
            tau: 15.0,
            preprocessing: Preprocessing::L2,
            ablation: Ablation::ALL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.k_neighbors == Some(0) {
            return Err(Error::Config("k must be positive".into()));
        }
        Ok(())
    }
}

/// Class means of the support columns.
pub fn init_centroids(support: &Matrix, labels: &[usize], n_classes: usize) -> Result<Matrix> {
    if labels.len() != support.cols() {
        return Err(Error::Shape(format!(
            "{} labels for {} support columns",
            labels.len(),
            support.cols()
        )));
    }
    let mut c = Matrix::zeros(support.rows(), n_classes);
    let mut counts = alloc::vec![0usize; n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::Shape(format!("label {l} outside {n_classes} classes")));
        }
        counts[l] += 1;
        for (dst, v) in c.col_mut(l).iter_mut().zip(support.col(i)) {
            *dst += v;
        }
    }
    for (j, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::EmptyClass(j));
        }
        c.col_mut(j).iter_mut().for_each(|v| *v /= count as f64);
    }
    Ok(c)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Moments {
    first: Matrix,
    second: Matrix,
}

impl Moments {
    fn like(m: &Matrix) -> Self {
        Moments {
            first: Matrix::zeros(m.rows(), m.cols()),
            second: Matrix::zeros(m.rows(), m.cols()),
        }
    }

    fn update(&mut self, param: &mut Matrix, grad: &Matrix, lr: f64, step: i32) {
        let c1 = 1.0 - powf(ADAM_BETA1, step as f64);
        let c2 = 1.0 - powf(ADAM_BETA2, step as f64);
        let it = param
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(self.first.as_mut_slice().iter_mut().zip(self.second.as_mut_slice()));
        for ((p, &g), (m, v)) in it {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (sqrt(v_hat) + ADAM_EPS);
        }
    }
}

/// Adam moments for the three parameter groups.
#[derive(Debug, Clone)]
pub struct AdamState {
    centroids: Moments,
    g_raw: Moments,
    b_raw: Moments,
    pub step_count: u32,
}

impl AdamState {
    pub fn new(params: &ManifoldParams) -> Self {
        AdamState {
            centroids: Moments::like(&params.centroids),
            g_raw: Moments::like(&params.g_raw),
            b_raw: Moments::like(&params.b_raw),
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam step on the groups enabled in `flags`.
pub fn adam_step(params: &mut ManifoldParams, grads: &GradPhi, state: &mut AdamState, lr: f64, flags: Ablation) {
    state.step_count += 1;
    let step = state.step_count as i32;
    if flags.learn_centroids {
        state.centroids.update(&mut params.centroids, &grads.d_centroids, lr, step);
    }
    if flags.learn_g {
        state.g_raw.update(&mut params.g_raw, &grads.d_g_raw, lr, step);
    }
    if flags.learn_b {
        state.b_raw.update(&mut params.b_raw, &grads.d_b_raw, lr, step);
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// `N x M` query probabilities after the last update.
    pub p_q: Matrix,
    pub predictions: Vec<usize>,
    /// Loss before each update, one entry per step.
    pub trace: Vec<f64>,
    /// Loss at the returned parameters.
    pub final_loss: f64,
    pub params: ManifoldParams,
}

/// Applies the configured pre-processing jointly to support and query.
pub fn prepare_task(episode: &Episode, preprocessing: Preprocessing) -> Result<TaskData> {
    let l = episode.support_vectors.cols();
    let joint = Matrix::hcat(&[&episode.support_vectors, &episode.query_vectors])?;
    let processed = preprocessing.apply(&joint)?;
    Ok(TaskData {
        support: processed.col_range(0, l),
        support_labels: episode.support_labels.clone(),
        query: processed.col_range(l, processed.cols()),
        n_classes: episode.n_way(),
    })
}

/// Initial parameters for a prepared task: prototypes, `G = 1`, `B ≈ 1`.
pub fn initial_params(task: &TaskData, cfg: &SolverConfig) -> Result<ManifoldParams> {
    let centroids = init_centroids(&task.support, &task.support_labels, task.n_classes)?;
    ManifoldParams::new(centroids, task.n_vertices(), cfg.beta, cfg.k_neighbors, cfg.tau)
}

/// Runs exactly `cfg.r_steps` updates starting from `params`.
pub fn solve_task(task: &TaskData, mut params: ManifoldParams, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    if !cfg.ablation.any() {
        // Nothing moves, so every step sees the same loss.
        let tape = forward(task, &params, &cfg.loss)?;
        let p_q = tape.probs.p_q();
        return Ok(Solution {
            predictions: predict_labels(&p_q),
            p_q,
            trace: alloc::vec![tape.loss; cfg.r_steps],
            final_loss: tape.loss,
            params,
        });
    }
    let mut adam = AdamState::new(&params);
    let mut trace = Vec::with_capacity(cfg.r_steps);
    for _ in 0..cfg.r_steps {
        let tape = forward(task, &params, &cfg.loss)?;
        trace.push(tape.loss);
        let grads = backward(&tape, &params)?;
        adam_step(&mut params, &grads, &mut adam, cfg.lr, cfg.ablation);
    }
    let last = forward(task, &params, &cfg.loss)?;
    let p_q = last.probs.p_q();
    let predictions = predict_labels(&p_q);
    Ok(Solution {
        p_q,
        predictions,
        trace,
        final_loss: last.loss,
        params,
    })
}

/// Pre-processes the episode, initializes the parameters and adapts them.
pub fn solve_episode(episode: &Episode, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    let task = prepare_task(episode, cfg.preprocessing)?;
    let params = initial_params(&task, cfg)?;
    solve_task(&task, params, cfg)
}
