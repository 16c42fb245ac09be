//! N-way K-shot episode sampling with balanced or Dirichlet-distributed
//! query class proportions.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::embed::EmbeddingSet;
use crate::math::floor;
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Imbalance {
    Balanced,
    /// Query proportions drawn from a symmetric Dirichlet with this concentration.
    Dirichlet { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub m_query: usize,
    pub imbalance: Imbalance,
    pub seed: u64,
    pub num_tasks: usize,
}

impl TaskConfig {
    /// 5-way tasks with 75 queries and Dir(2) proportions.
    pub fn imbalanced(k_shot: usize, num_tasks: usize, seed: u64) -> Self {
        TaskConfig {
            n_way: 5,
            k_shot,
            m_query: 75,
            imbalance: Imbalance::Dirichlet { gamma: 2.0 },
            seed,
            num_tasks,
        }
    }

    /// 5-way tasks with 15 queries per class.
    pub fn balanced(k_shot: usize, num_tasks: usize, seed: u64) -> Self {
        TaskConfig {
            imbalance: Imbalance::Balanced,
            ..Self::imbalanced(k_shot, num_tasks, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.k_shot == 0 || self.m_query == 0 || self.num_tasks == 0 {
            return Err(Error::Config(String::from(
                "n_way, k_shot, m_query and num_tasks must be positive",
            )));
        }
        match self.imbalance {
            Imbalance::Balanced if !self.m_query.is_multiple_of(self.n_way) => Err(Error::Config(format!(
                "balanced tasks need n_way ({}) to divide m_query ({})",
                self.n_way, self.m_query
            ))),
            Imbalance::Dirichlet { gamma } if !(gamma > 0.0) || !gamma.is_finite() => {
                Err(Error::Config(format!("Dirichlet gamma must be positive, got {gamma}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support_vectors: Matrix,
    pub support_labels: Vec<usize>,
    pub query_vectors: Matrix,
    /// Only used for scoring.
    pub query_labels_hidden: Vec<usize>,
    /// Episode class index -> dataset class id.
    pub class_map: Vec<usize>,
    /// Dataset example indices, in column order.
    pub support_ids: Vec<usize>,
    pub query_ids: Vec<usize>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.class_map.len()
    }

    /// Number of queries of each episode class.
    pub fn query_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.n_way()];
        for &l in &self.query_labels_hidden {
            counts[l] += 1;
        }
        counts
    }
}

/// Deterministic generator for task `task_index` under `seed`: one ChaCha
/// stream per task, so tasks can be drawn in any order or in parallel.
pub fn task_rng(seed: u64, task_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task_index);
    rng
}

/// Draws class proportions from Dir(gamma * 1_N) by normalizing independent
/// Gamma(gamma, 1) variates.
pub fn sample_proportions<R: Rng + ?Sized>(n_way: usize, gamma: f64, rng: &mut R) -> Vec<f64> {
    let dist = Gamma::new(gamma, 1.0).expect("gamma must be positive");
    let mut draws: Vec<f64> = (0..n_way).map(|_| dist.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|x| *x /= total);
    } else {
        // every draw underflowed; fall back to the Dirichlet mean
        draws.iter_mut().for_each(|x| *x = 1.0 / n_way as f64);
    }
    draws
}

/// Largest-remainder rounding of `pi * m` to integers summing to `m`.
/// Remainder ties go to the lower class index.
pub fn proportions_to_counts(pi: &[f64], m: usize) -> Vec<usize> {
    let scaled: Vec<f64> = pi.iter().map(|p| p * m as f64).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|&s| floor(s.max(0.0)) as usize).collect();
    let mut assigned: usize = counts.iter().sum();
    while assigned > m {
        // rounding pushed the floors past m; take back from the largest
        let (i, _) = counts.iter().enumerate().max_by_key(|(_, &c)| c).unwrap();
        counts[i] -= 1;
        assigned -= 1;
    }
    let mut order: Vec<usize> = (0..pi.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - counts[a] as f64;
        let rb = scaled[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(m - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Samples episodes from one embedding set, caching the per-class index.
pub struct EpisodeSampler<'a> {
    set: &'a EmbeddingSet,
    cfg: TaskConfig,
    by_class: Vec<Vec<usize>>,
    present: Vec<usize>,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(set: &'a EmbeddingSet, cfg: &TaskConfig) -> Result<Self> {
        cfg.validate()?;
        let by_class = set.class_indices();
        let present: Vec<usize> = (0..by_class.len()).filter(|&c| !by_class[c].is_empty()).collect();
        if present.len() < cfg.n_way {
            return Err(Error::TooFewClasses {
                needed: cfg.n_way,
                found: present.len(),
            });
        }
        Ok(EpisodeSampler {
            set,
            cfg: cfg.clone(),
            by_class,
            present,
        })
    }

    pub fn config(&self) -> &TaskConfig {
        &self.cfg
    }

    pub fn sample(&self, task_index: u64) -> Result<Episode> {
        let cfg = &self.cfg;
        let mut rng = task_rng(cfg.seed, task_index);

        let chosen: Vec<usize> = index::sample(&mut rng, self.present.len(), cfg.n_way)
            .into_iter()
            .map(|i| self.present[i])
            .collect();

        let counts = match cfg.imbalance {
            Imbalance::Balanced => alloc::vec![cfg.m_query / cfg.n_way; cfg.n_way],
            Imbalance::Dirichlet { gamma } => {
                let pi = sample_proportions(cfg.n_way, gamma, &mut rng);
                proportions_to_counts(&pi, cfg.m_query)
            }
        };

        let mut support_ids = Vec::with_capacity(cfg.n_way * cfg.k_shot);
        let mut support_labels = Vec::with_capacity(cfg.n_way * cfg.k_shot);
        let mut queries: Vec<(usize, usize)> = Vec::with_capacity(cfg.m_query);
        for (j, (&class, &count)) in chosen.iter().zip(&counts).enumerate() {
            let pool = &self.by_class[class];
            let needed = cfg.k_shot + count;
            if pool.len() < needed {
                return Err(Error::InsufficientExamples {
                    class,
                    available: pool.len(),
                    needed,
                });
            }
            let picks = index::sample(&mut rng, pool.len(), needed).into_vec();
            for &p in &picks[..cfg.k_shot] {
                support_ids.push(pool[p]);
                support_labels.push(j);
            }
            for &p in &picks[cfg.k_shot..] {
                queries.push((pool[p], j));
            }
        }
        queries.shuffle(&mut rng);
        let (query_ids, query_labels_hidden): (Vec<usize>, Vec<usize>) = queries.into_iter().unzip();

        let vectors = self.set.vectors();
        Ok(Episode {
            support_vectors: vectors.select_cols(&support_ids),
            support_labels,
            query_vectors: vectors.select_cols(&query_ids),
            query_labels_hidden,
            class_map: chosen,
            support_ids,
            query_ids,
        })
    }
}

/// Samples task `task_index` of the stream described by `cfg`.
pub fn sample_episode(set: &EmbeddingSet, cfg: &TaskConfig, task_index: u64) -> Result<Episode> {
    EpisodeSampler::new(set, cfg)?.sample(task_index)
}
