//! Many-episode evaluation, the ablation grid and CSV persistence.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use am_core::embed::{EmbeddingSet, Preprocessing};
use am_core::episodes::{EpisodeSampler, Imbalance, TaskConfig};
use am_core::eval::{task_accuracy, Summary};
use am_core::losses::LossMode;
use am_core::solver::{solve_episode, Ablation, SolverConfig};
use rayon::prelude::*;

use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task_index: u64,
    pub accuracy: f64,
    pub loss_final: f64,
    pub query_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub records: Vec<TaskRecord>,
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub config_snapshot: Vec<(String, String)>,
    pub wall_time_seconds: f64,
}

impl EvalReport {
    pub fn per_task_accuracy(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.accuracy).collect()
    }

    pub fn summary(&self) -> Summary {
        Summary::of(&self.per_task_accuracy())
    }
}

/// Flat `key = value` description of both configurations, in a fixed order.
pub fn config_snapshot(task: &TaskConfig, solver: &SolverConfig) -> Vec<(String, String)> {
    let mut out = vec![
        ("ways", task.n_way.to_string()),
        ("shots", task.k_shot.to_string()),
        ("queries", task.m_query.to_string()),
        ("imbalance", imbalance_name(task.imbalance)),
        ("seed", task.seed.to_string()),
        ("tasks", task.num_tasks.to_string()),
        ("r", solver.r_steps.to_string()),
        ("lr", solver.lr.to_string()),
        ("loss", loss_name(solver)),
        ("lambda1", solver.loss.lambda1.to_string()),
        ("lambda2", solver.loss.lambda2.to_string()),
        ("lambda3", solver.loss.lambda3.to_string()),
        ("k", solver.k_neighbors.map_or("complete".to_string(), |k| k.to_string())),
        ("beta", solver.beta.to_string()),
        ("tau", solver.tau.to_string()),
        ("preprocessing", solver.preprocessing.name().to_string()),
        ("learn", learn_name(solver.ablation)),
    ];
    out.sort_by_key(|(k, _)| *k);
    out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn imbalance_name(imbalance: Imbalance) -> String {
    match imbalance {
        Imbalance::Balanced => "balanced".into(),
        Imbalance::Dirichlet { gamma } => format!("dirichlet:{gamma}"),
    }
}

pub fn loss_name(solver: &SolverConfig) -> String {
    match solver.loss.mode {
        LossMode::Balanced => "balanced".into(),
        LossMode::Imbalanced => format!("alpha:{}", solver.loss.alpha),
    }
}

/// `c,g,b` style list of the learnable groups, or `none`.
pub fn learn_name(ablation: Ablation) -> String {
    let mut parts = Vec::new();
    if ablation.learn_centroids {
        parts.push("c");
    }
    if ablation.learn_g {
        parts.push("g");
    }
    if ablation.learn_b {
        parts.push("b");
    }
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join(",")
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {threads} worker threads: {e}")))
}

/// Solves `task_cfg.num_tasks` episodes on `threads` workers.
///
/// Each episode draws from its own substream of the seed, and results are
/// gathered by task index, so the report does not depend on `threads`.
pub fn run_eval(
    set: &EmbeddingSet,
    task_cfg: &TaskConfig,
    solver_cfg: &SolverConfig,
    threads: usize,
) -> Result<EvalReport, Error> {
    solver_cfg.validate()?;
    let sampler = EpisodeSampler::new(set, task_cfg)?;
    let started = Instant::now();
    let records = pool(threads)?.install(|| {
        (0..task_cfg.num_tasks as u64)
            .into_par_iter()
            .map(|task_index| {
                let episode = sampler.sample(task_index)?;
                let solution = solve_episode(&episode, solver_cfg)?;
                Ok(TaskRecord {
                    task_index,
                    accuracy: task_accuracy(&solution.predictions, &episode.query_labels_hidden),
                    loss_final: solution.final_loss,
                    query_counts: episode.query_counts(),
                })
            })
            .collect::<Result<Vec<_>, am_core::Error>>()
    })?;
    let summary = Summary::of(&records.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    Ok(EvalReport {
        records,
        mean_accuracy: summary.mean,
        ci95: summary.ci95,
        config_snapshot: config_snapshot(task_cfg, solver_cfg),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    })
}

/// `results.csv` → `results.csv.config`.
pub fn config_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".config");
    PathBuf::from(name)
}

pub const CSV_HEADER: [&str; 4] = ["task_index", "accuracy", "loss_final", "num_queries_per_class"];

/// Writes one row per task and a summary row with `task_index = -1`, whose
/// loss column holds the mean final loss and whose last column reads
/// `ci95=<value>`. The configuration goes to the adjacent `.config` file.
///
/// Floats use the shortest representation that parses back to the same
/// value, so the numeric columns round-trip exactly.
pub fn write_report_csv(report: &EvalReport, path: &Path) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in &report.records {
        let counts: Vec<String> = r.query_counts.iter().map(|c| c.to_string()).collect();
        w.write_record([
            r.task_index.to_string(),
            r.accuracy.to_string(),
            r.loss_final.to_string(),
            counts.join(";"),
        ])?;
    }
    let n = report.records.len().max(1) as f64;
    let mean_loss = report.records.iter().map(|r| r.loss_final).sum::<f64>() / n;
    w.write_record([
        "-1".to_string(),
        report.mean_accuracy.to_string(),
        mean_loss.to_string(),
        format!("ci95={}", report.ci95),
    ])?;
    w.flush()?;

    let mut cfg = String::new();
    for (k, v) in &report.config_snapshot {
        writeln!(cfg, "{k} = {v}").unwrap();
    }
    writeln!(cfg, "wall_time_seconds = {}", report.wall_time_seconds).unwrap();
    fs::write(config_path(path), cfg)?;
    Ok(())
}

/// What [`read_report_csv`] recovers from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvReport {
    pub records: Vec<TaskRecord>,
    pub mean_accuracy: f64,
    pub ci95: f64,
}

fn bad(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {what}", path.display()))
}

pub fn read_report_csv(path: &Path) -> Result<CsvReport, Error> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(CSV_HEADER) {
        return Err(bad(path, "unexpected header"));
    }
    let mut records = Vec::new();
    let mut summary = None;
    for row in r.records() {
        let row = row?;
        if row.len() != 4 {
            return Err(bad(path, format!("row has {} fields", row.len())));
        }
        let num = |i: usize| -> Result<f64, Error> {
            row[i].parse().map_err(|_| bad(path, format!("not a number: {:?}", &row[i])))
        };
        if &row[0] == "-1" {
            let ci = row[3]
                .strip_prefix("ci95=")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(path, "summary row lacks ci95"))?;
            summary = Some((num(1)?, ci));
            continue;
        }
        let task_index = row[0].parse().map_err(|_| bad(path, format!("bad task index {:?}", &row[0])))?;
        let query_counts = if row[3].is_empty() {
            Vec::new()
        } else {
            row[3]
                .split(';')
                .map(|c| c.parse().map_err(|_| bad(path, format!("bad count {c:?}"))))
                .collect::<Result<_, _>>()?
        };
        records.push(TaskRecord {
            task_index,
            accuracy: num(1)?,
            loss_final: num(2)?,
            query_counts,
        });
    }
    let (mean_accuracy, ci95) = summary.ok_or_else(|| bad(path, "missing summary row"))?;
    Ok(CsvReport {
        records,
        mean_accuracy,
        ci95,
    })
}

/// One row of the component ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub solver: SolverConfig,
}

/// The seven cumulative variants: complete graph, then the kNN graph, then
/// learned centroids, scales and gates in turn, then PLC features. The
/// first two keep every parameter frozen.
pub fn ablation_variants(base: &SolverConfig, knn: Option<usize>) -> Vec<Variant> {
    let with = |k: Option<usize>, ablation: Ablation, preprocessing: Preprocessing| SolverConfig {
        k_neighbors: k,
        ablation,
        preprocessing,
        ..base.clone()
    };
    let learn = |c: bool, g: bool, b: bool| Ablation {
        learn_centroids: c,
        learn_g: g,
        learn_b: b,
    };
    let l2 = Preprocessing::L2;
    vec![
        Variant {
            name: "complete",
            solver: with(None, Ablation::FROZEN, l2),
        },
        Variant {
            name: "+NN_k",
            solver: with(knn, Ablation::FROZEN, l2),
        },
        Variant {
            name: "+C",
            solver: with(knn, learn(true, false, false), l2),
        },
        Variant {
            name: "+C,G",
            solver: with(knn, learn(true, true, false), l2),
        },
        Variant {
            name: "+C,B",
            solver: with(knn, learn(true, false, true), l2),
        },
        Variant {
            name: "+C,G,B",
            solver: with(knn, Ablation::ALL, l2),
        },
        Variant {
            name: "+C,G,B,PLC",
            solver: with(knn, Ablation::ALL, Preprocessing::Plc),
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub name: String,
    pub report: EvalReport,
}

/// Runs every variant on the same task stream.
pub fn run_ablation(
    set: &EmbeddingSet,
    task_cfg: &TaskConfig,
    variants: &[Variant],
    threads: usize,
) -> Result<Vec<VariantResult>, Error> {
    variants
        .iter()
        .map(|v| {
            Ok(VariantResult {
                name: v.name.to_string(),
                report: run_eval(set, task_cfg, &v.solver, threads)?,
            })
        })
        .collect()
}

pub const ABLATION_HEADER: [&str; 8] = [
    "variant",
    "task_seed",
    "num_tasks",
    "k",
    "learn",
    "preprocessing",
    "mean_accuracy",
    "ci95",
];

pub fn write_ablation_csv(results: &[VariantResult], task_cfg: &TaskConfig, path: &Path) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ABLATION_HEADER)?;
    for r in results {
        let get = |key: &str| {
            r.report
                .config_snapshot
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .unwrap_or_default()
        };
        w.write_record([
            r.name.clone(),
            task_cfg.seed.to_string(),
            r.report.records.len().to_string(),
            get("k"),
            get("learn"),
            get("preprocessing"),
            r.report.mean_accuracy.to_string(),
            r.report.ci95.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use am_core::embed::{synth_gaussian, SynthConfig};

    fn small_set() -> EmbeddingSet {
        synth_gaussian(&SynthConfig {
            num_classes: 6,
            dim: 8,
            per_class: 30,
            class_sep: 2.0,
            noise_sigma: 1.0,
            seed: 1,
        })
        .unwrap()
    }

    fn quick_solver() -> SolverConfig {
        SolverConfig {
            r_steps: 3,
            k_neighbors: Some(5),
            ..SolverConfig::defaults(1, false)
        }
    }

    fn quick_tasks(n: usize) -> TaskConfig {
        TaskConfig {
            m_query: 15,
            ..TaskConfig::imbalanced(1, n, 11)
        }
    }

    #[test]
    fn single_task_has_zero_interval() {
        let r = run_eval(&small_set(), &quick_tasks(1), &quick_solver(), 1).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.mean_accuracy, r.records[0].accuracy);
        assert_eq!(r.ci95, 0.0);
    }

    #[test]
    fn reports_are_reproducible_and_thread_independent() {
        let set = small_set();
        let a = run_eval(&set, &quick_tasks(6), &quick_solver(), 1).unwrap();
        let b = run_eval(&set, &quick_tasks(6), &quick_solver(), 3).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.config_snapshot, b.config_snapshot);
        let idx: Vec<u64> = a.records.iter().map(|r| r.task_index).collect();
        assert_eq!(idx, (0..6).collect::<Vec<_>>());
        for r in &a.records {
            assert_eq!(r.query_counts.iter().sum::<usize>(), 15);
        }
    }

    #[test]
    fn snapshot_names_every_setting() {
        let snap = config_snapshot(&quick_tasks(2), &quick_solver());
        let keys: Vec<&str> = snap.iter().map(|(k, _)| k.as_str()).collect();
        for key in ["ways", "shots", "queries", "imbalance", "seed", "tasks", "r", "lr", "loss", "k", "beta", "tau", "preprocessing", "learn"] {
            assert!(keys.contains(&key), "{key}");
        }
        let get = |k: &str| snap.iter().find(|(key, _)| key == k).unwrap().1.clone();
        assert_eq!(get("imbalance"), "dirichlet:2");
        assert_eq!(get("loss"), "alpha:2");
        assert_eq!(get("learn"), "c,g,b");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut report = run_eval(&small_set(), &quick_tasks(4), &quick_solver(), 1).unwrap();
        report.records[0].accuracy = 0.1 + 0.2;
        report.records[1].loss_final = -1.0 / 3.0;
        write_report_csv(&report, &path).unwrap();
        let back = read_report_csv(&path).unwrap();
        assert_eq!(back.records, report.records);
        assert_eq!(back.mean_accuracy, report.mean_accuracy);
        assert_eq!(back.ci95, report.ci95);
        let cfg = fs::read_to_string(config_path(&path)).unwrap();
        assert!(cfg.contains("seed = 11"));
        assert!(cfg.contains("wall_time_seconds = "));
    }

    #[test]
    fn grid_has_seven_cumulative_rows() {
        let v = ablation_variants(&quick_solver(), Some(20));
        assert_eq!(v.len(), 7);
        assert_eq!(v[0].solver.k_neighbors, None);
        assert!(!v[0].solver.ablation.any() && !v[1].solver.ablation.any());
        assert_eq!(v[2].solver.ablation, Ablation { learn_centroids: true, learn_g: false, learn_b: false });
        assert_eq!(v[6].solver.preprocessing, Preprocessing::Plc);
        assert!(v[1..].iter().all(|x| x.solver.k_neighbors == Some(20)));
    }

    #[test]
    fn ablation_rows_share_the_task_stream() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let tasks = quick_tasks(2);
        let results = run_ablation(&small_set(), &tasks, &ablation_variants(&quick_solver(), Some(5)), 1).unwrap();
        let counts: Vec<Vec<Vec<usize>>> = results
            .iter()
            .map(|r| r.report.records.iter().map(|t| t.query_counts.clone()).collect())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]));
        write_ablation_csv(&results, &tasks, &path).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 7);
        assert!(rows.iter().all(|r| &r[1] == "11"));
    }
}
