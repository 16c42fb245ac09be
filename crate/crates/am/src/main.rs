use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use am::ameb::{load_embeddings, save_embeddings, to_single_precision};
use am::config::{self, Settings};
use am::harness::{ablation_variants, run_ablation, run_eval, write_ablation_csv, write_report_csv};
use am::Error;
use am_core::diff::backward;
use am_core::embed::{synth_gaussian, SynthConfig};
use am_core::gradcheck::{run_gradcheck_with, GradcheckConfig, Stencil};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Transductive few-shot inference by adapting a label-propagation graph.
#[derive(Debug, Parser)]
#[command(name = "am", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic Gaussian embedding set in AMEB format.
    Synth(SynthArgs),
    /// Evaluate on sampled episodes and write a per-task CSV.
    Eval(EvalArgs),
    /// Run the seven-variant component ablation on one shared task stream.
    Ablate(EvalArgs),
    /// Compare the analytic gradient with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 600)]
    per_class: usize,
    /// Distance between class means.
    #[arg(long, default_value_t = 4.0)]
    sep: f64,
    /// Within-class standard deviation.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output AMEB file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// AMEB embedding file.
    #[arg(long)]
    data: Option<String>,
    /// `key = value` file; command-line flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV [default: eval.csv, or ablation.csv for ablate]
    #[arg(long)]
    out: Option<String>,
    /// Worker threads [default: available cores]
    #[arg(long, env = "AM_THREADS")]
    threads: Option<usize>,
    /// Classes per episode [default: 5]
    #[arg(long)]
    ways: Option<String>,
    /// Support examples per class [default: 1]
    #[arg(long)]
    shots: Option<String>,
    /// Queries per episode [default: 75]
    #[arg(long)]
    queries: Option<String>,
    /// Number of episodes [default: 10000]
    #[arg(long)]
    tasks: Option<String>,
    /// Task stream seed [default: 0]
    #[arg(long)]
    seed: Option<String>,
    /// `balanced` or `dirichlet:<gamma>` [default: dirichlet:2]
    #[arg(long)]
    imbalance: Option<String>,
    /// `l2` or `plc` [default: l2]
    #[arg(long)]
    preprocessing: Option<String>,
    /// `balanced` or `alpha:<alpha>` [default: alpha:2 for 1-shot, alpha:5 otherwise]
    #[arg(long)]
    loss: Option<String>,
    /// Optimization steps [default: 1000]
    #[arg(long)]
    r: Option<String>,
    /// Adam learning rate [default: 0.0001]
    #[arg(long)]
    lr: Option<String>,
    /// Neighbours per vertex, or `complete` [default: 20 for 1-shot, 10 otherwise]
    #[arg(long)]
    k: Option<String>,
    /// Propagation damping [default: 0.8 for 1-shot, 0.9 otherwise]
    #[arg(long)]
    beta: Option<String>,
    /// Softmax temperature [default: 15]
    #[arg(long)]
    tau: Option<String>,
    /// Learnable groups, `none` or a list from `c,g,b` [default: c,g,b]
    #[arg(long)]
    learn: Option<String>,
}

impl EvalArgs {
    fn cli_settings(&self) -> Settings {
        let pairs = [
            ("data", &self.data),
            ("out", &self.out),
            ("ways", &self.ways),
            ("shots", &self.shots),
            ("queries", &self.queries),
            ("tasks", &self.tasks),
            ("seed", &self.seed),
            ("imbalance", &self.imbalance),
            ("preprocessing", &self.preprocessing),
            ("loss", &self.loss),
            ("r", &self.r),
            ("lr", &self.lr),
            ("k", &self.k),
            ("beta", &self.beta),
            ("tau", &self.tau),
            ("learn", &self.learn),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }

    /// Merged settings plus the resolved thread count.
    fn settings(&self) -> Result<(Settings, usize), Error> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
                config::parse(&text)?
            }
            None => Settings::new(),
        };
        let mut merged = config::merge(&file, &self.cli_settings());
        let from_file = merged
            .remove("threads")
            .map(|t| t.parse::<usize>().map_err(|_| Error::Usage(format!("`threads`: cannot parse {t:?}"))))
            .transpose()?;
        let threads = self
            .threads
            .or(from_file)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if threads == 0 {
            return Err(Error::Usage("`threads` must be positive".into()));
        }
        Ok((merged, threads))
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StencilArg {
    Central,
    FivePoint,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Largest accepted fraction of coordinates skipped for kNN changes.
    #[arg(long, default_value_t = 0.05)]
    max_skip_rate: f64,
    #[arg(long, value_enum, default_value_t = StencilArg::Central)]
    stencil: StencilArg,
    /// Negate the gate gradient, to confirm the check can fail.
    #[arg(long, hide = true)]
    inject_sign_flip: bool,
}

fn take_path(settings: &mut Settings, key: &str) -> Option<PathBuf> {
    settings.remove(key).map(PathBuf::from)
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Error> {
    let set = synth_gaussian(&SynthConfig {
        num_classes: a.classes,
        dim: a.dim,
        per_class: a.per_class,
        class_sep: a.sep,
        noise_sigma: a.sigma,
        seed: a.seed,
    })
    .map_err(|e| Error::Usage(e.to_string()))?;
    save_embeddings(&to_single_precision(&set), &a.out)?;
    println!("wrote {} records to {}", set.len(), a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Error> {
    let (mut settings, threads) = a.settings()?;
    let data = take_path(&mut settings, "data").ok_or_else(|| Error::Usage("--data is required".into()))?;
    let out = take_path(&mut settings, "out").unwrap_or_else(|| PathBuf::from("eval.csv"));
    let (task, solver) = config::resolve(&settings)?;
    let set = load_embeddings(&data)?;
    let report = run_eval(&set, &task, &solver, threads)?;
    write_report_csv(&report, &out)?;
    println!(
        "accuracy {:.4} ± {:.4} over {} tasks ({:.1}s, {} threads) -> {}",
        report.mean_accuracy,
        report.ci95,
        report.records.len(),
        report.wall_time_seconds,
        threads,
        out.display()
    );
    Ok(())
}

fn cmd_ablate(a: &EvalArgs) -> Result<(), Error> {
    let (mut settings, threads) = a.settings()?;
    let data = take_path(&mut settings, "data").ok_or_else(|| Error::Usage("--data is required".into()))?;
    let out = take_path(&mut settings, "out").unwrap_or_else(|| PathBuf::from("ablation.csv"));
    let (task, solver) = config::resolve(&settings)?;
    let set = load_embeddings(&data)?;
    let variants = ablation_variants(&solver, solver.k_neighbors);
    let started = Instant::now();
    let results = run_ablation(&set, &task, &variants, threads)?;
    for r in &results {
        println!("{:<12} {:.4} ± {:.4}", r.name, r.report.mean_accuracy, r.report.ci95);
    }
    write_ablation_csv(&results, &task, &out)?;
    println!(
        "{} variants over {} tasks ({:.1}s) -> {}",
        results.len(),
        task.num_tasks,
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(), Error> {
    if a.h.is_nan() || a.h <= 0.0 || a.tol.is_nan() || a.tol <= 0.0 || a.episodes == 0 {
        return Err(Error::Usage("--h, --tol and --episodes must be positive".into()));
    }
    let cfg = GradcheckConfig {
        episodes: a.episodes,
        seed: a.seed,
        h: a.h,
        tol: a.tol,
        max_skip_rate: a.max_skip_rate,
        stencil: match a.stencil {
            StencilArg::Central => Stencil::Central,
            StencilArg::FivePoint => Stencil::FivePoint,
        },
    };
    let flip = a.inject_sign_flip;
    let started = Instant::now();
    let report = run_gradcheck_with(&cfg, |tape, params| {
        let mut g = backward(tape, params)?;
        if flip {
            g.d_b_raw.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
        }
        Ok(g)
    })?;
    for (name, g) in report.groups() {
        println!(
            "{name:<10} max rel err {:.3e}  checked {}  skipped {}",
            g.max_rel_err, g.checked, g.skipped
        );
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "{verdict} max rel err {:.3e} (tol {:.1e}), skip rate {:.4}, {:.1}s",
        report.max_rel_err(),
        cfg.tol,
        report.skip_rate(),
        started.elapsed().as_secs_f64()
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Numerical("gradient check failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
