//! Scoring helpers and the nearest-centroid baseline.

use alloc::vec::Vec;

use crate::embed::Preprocessing;
use crate::episodes::Episode;
use crate::math::sqrt;
use crate::matrix::squared_distance;
use crate::solver::{init_centroids, prepare_task};
use crate::Result;

/// Fraction of positions where `predictions` and `truth` agree.
pub fn task_accuracy(predictions: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(predictions.len(), truth.len(), "prediction/truth length mismatch");
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

/// Mean and normal-approximation 95% interval `1.96 · s / √n`, with the
/// sample (n − 1) standard deviation. A single value has interval 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary {
                n,
                mean: 0.0,
                std: 0.0,
                ci95: 0.0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Summary {
                n,
                mean,
                std: 0.0,
                ci95: 0.0,
            };
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let std = sqrt(var);
        Summary {
            n,
            mean,
            std,
            ci95: 1.96 * std / sqrt(n as f64),
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.std / sqrt(self.n as f64)
        }
    }
}

/// Summary of the per-task differences `a − b` of two paired runs.
pub fn paired_difference(a: &[f64], b: &[f64]) -> Summary {
    assert_eq!(a.len(), b.len(), "paired runs must have equal length");
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Summary::of(&diffs)
}

/// Assigns each query to the nearest class prototype; ties go to the lower
/// class index.
pub fn baseline_nearest_centroid(episode: &Episode, preprocessing: Preprocessing) -> Result<Vec<usize>> {
    let task = prepare_task(episode, preprocessing)?;
    let centroids = init_centroids(&task.support, &task.support_labels, task.n_classes)?;
    Ok(nearest_column(&centroids, &task.query))
}

fn nearest_column(centroids: &crate::Matrix, queries: &crate::Matrix) -> Vec<usize> {
    (0..queries.cols())
        .map(|q| {
            let x = queries.col(q);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..centroids.cols() {
                let d = squared_distance(x, centroids.col(c));
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{synth_gaussian, SynthConfig};
    use crate::episodes::{sample_episode, TaskConfig};
    use crate::Matrix;

    #[test]
    fn accuracy_cases() {
        assert_eq!(task_accuracy(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(task_accuracy(&[0, 1, 0, 0], &[0, 0, 0, 0]), 0.75);
    }

    #[test]
    fn summary_cases() {
        let one = Summary::of(&[0.7]);
        assert_eq!((one.mean, one.ci95), (0.7, 0.0));
        assert_eq!(Summary::of(&[0.5; 10]).ci95, 0.0);
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s.ci95 - 1.96 * sd / 2.0).abs() < 1e-15);
        let d = paired_difference(&[1.0, 1.0], &[0.5, 0.0]);
        assert_eq!(d.mean, 0.75);
    }

    #[test]
    fn nearest_centroid_rules() {
        let c = Matrix::from_columns(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let q = Matrix::from_columns(&[&[2.0, 0.0], &[1.0, 5.0], &[0.1, 0.0], &[1.0, 0.0]]);
        assert_eq!(nearest_column(&c, &q), std::vec![1, 0, 0, 0]);
    }

    #[test]
    fn baseline_matches_brute_force_scan() {
        let set = synth_gaussian(&SynthConfig {
            num_classes: 8,
            dim: 10,
            per_class: 60,
            class_sep: 1.5,
            noise_sigma: 1.0,
            seed: 3,
        })
        .unwrap();
        for t in 0..20 {
            let ep = sample_episode(&set, &TaskConfig::imbalanced(3, 1, 6), t).unwrap();
            let pred = baseline_nearest_centroid(&ep, Preprocessing::L2).unwrap();
            let task = prepare_task(&ep, Preprocessing::L2).unwrap();
            for (q, &p) in pred.iter().enumerate() {
                let x = task.query.col(q);
                let dists: std::vec::Vec<f64> = (0..5)
                    .map(|c| {
                        let mut mean = [0.0f64; 10];
                        for (i, &l) in task.support_labels.iter().enumerate() {
                            if l == c {
                                for (k, m) in mean.iter_mut().enumerate() {
                                    *m += task.support[(k, i)] / 3.0;
                                }
                            }
                        }
                        squared_distance(x, &mean)
                    })
                    .collect();
                let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!((dists[p] - min).abs() < 1e-12);
                assert!(dists[..p].iter().all(|&d| d > dists[p]));
            }
        }
    }
}
