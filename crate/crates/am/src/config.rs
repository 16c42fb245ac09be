//! `key = value` settings with a fixed key set.
//!
//! Values are layered: command-line flags override the config file, which
//! overrides the built-in defaults. Several defaults depend on the shot
//! count, so they are filled in only after the layers are merged.

use std::collections::BTreeMap;

use am_core::embed::Preprocessing;
use am_core::episodes::{Imbalance, TaskConfig};
use am_core::losses::LossWeights;
use am_core::solver::{Ablation, SolverConfig};

use crate::Error;

pub const KEYS: &[&str] = &[
    "data",
    "out",
    "threads",
    "ways",
    "shots",
    "queries",
    "tasks",
    "seed",
    "imbalance",
    "preprocessing",
    "loss",
    "r",
    "lr",
    "k",
    "beta",
    "tau",
    "learn",
];

pub type Settings = BTreeMap<String, String>;

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

pub fn check_key(key: &str) -> Result<(), Error> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(usage(format!("unknown config key `{key}`")))
    }
}

/// Parses config file text. `#` starts a comment; blank lines are ignored.
pub fn parse(text: &str) -> Result<Settings, Error> {
    let mut out = Settings::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected `key = value`, got {raw:?}", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        check_key(key)?;
        if value.is_empty() {
            return Err(usage(format!("config line {}: `{key}` has no value", n + 1)));
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(usage(format!("config key `{key}` given twice")));
        }
    }
    Ok(out)
}

/// `file` overlaid with `cli`.
pub fn merge(file: &Settings, cli: &Settings) -> Settings {
    let mut out = file.clone();
    out.extend(cli.iter().map(|(k, v)| (k.clone(), v.clone())));
    out
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value
        .parse()
        .map_err(|_| usage(format!("`{key}`: cannot parse {value:?}")))
}

pub fn parse_imbalance(value: &str) -> Result<Imbalance, Error> {
    if value == "balanced" {
        return Ok(Imbalance::Balanced);
    }
    match value.strip_prefix("dirichlet:") {
        Some(g) => {
            let gamma: f64 = number("imbalance", g)?;
            if gamma > 0.0 && gamma.is_finite() {
                Ok(Imbalance::Dirichlet { gamma })
            } else {
                Err(usage(format!("`imbalance`: gamma must be positive, got {g}")))
            }
        }
        None => Err(usage(format!("`imbalance`: expected balanced or dirichlet:<gamma>, got {value:?}"))),
    }
}

pub fn parse_loss(value: &str) -> Result<LossWeights, Error> {
    if value == "balanced" {
        return Ok(LossWeights::balanced());
    }
    match value.strip_prefix("alpha:") {
        Some(a) => {
            let alpha: f64 = number("loss", a)?;
            if alpha > 0.0 && alpha.is_finite() && alpha != 1.0 {
                Ok(LossWeights::imbalanced(alpha))
            } else {
                Err(usage(format!("`loss`: alpha must be positive and different from 1, got {a}")))
            }
        }
        None => Err(usage(format!("`loss`: expected balanced or alpha:<alpha>, got {value:?}"))),
    }
}

pub fn parse_k(value: &str) -> Result<Option<usize>, Error> {
    if value == "complete" {
        return Ok(None);
    }
    match number::<usize>("k", value)? {
        0 => Err(usage("`k`: must be positive or `complete`")),
        k => Ok(Some(k)),
    }
}

pub fn parse_preprocessing(value: &str) -> Result<Preprocessing, Error> {
    match value {
        "l2" => Ok(Preprocessing::L2),
        "plc" => Ok(Preprocessing::Plc),
        _ => Err(usage(format!("`preprocessing`: expected l2 or plc, got {value:?}"))),
    }
}

/// `none`, or a comma list drawn from `c`, `g`, `b`.
pub fn parse_learn(value: &str) -> Result<Ablation, Error> {
    let mut a = Ablation::FROZEN;
    if value == "none" {
        return Ok(a);
    }
    for part in value.split(',') {
        match part.trim() {
            "c" => a.learn_centroids = true,
            "g" => a.learn_g = true,
            "b" => a.learn_b = true,
            other => return Err(usage(format!("`learn`: unknown group {other:?}, expected c, g, b or none"))),
        }
    }
    Ok(a)
}

/// Built-in value of `key` for the given shot count.
pub fn default_value(key: &str, shots: usize) -> Option<String> {
    let one = shots <= 1;
    let v = match key {
        "ways" => "5",
        "shots" => "1",
        "queries" => "75",
        "tasks" => "10000",
        "seed" => "0",
        "imbalance" => "dirichlet:2",
        "preprocessing" => "l2",
        "loss" if one => "alpha:2",
        "loss" => "alpha:5",
        "r" => "1000",
        "lr" => "0.0001",
        "k" if one => "20",
        "k" => "10",
        "beta" if one => "0.8",
        "beta" => "0.9",
        "tau" => "15",
        "learn" => "c,g,b",
        _ => return None,
    };
    Some(v.to_string())
}

/// Task and solver configurations from merged settings.
pub fn resolve(settings: &Settings) -> Result<(TaskConfig, SolverConfig), Error> {
    for key in settings.keys() {
        check_key(key)?;
    }
    let shots: usize = match settings.get("shots") {
        Some(s) => number("shots", s)?,
        None => 1,
    };
    let get = |key: &str| -> String {
        settings
            .get(key)
            .cloned()
            .or_else(|| default_value(key, shots))
            .expect("every solver key has a default")
    };
    let task = TaskConfig {
        n_way: number("ways", &get("ways"))?,
        k_shot: shots,
        m_query: number("queries", &get("queries"))?,
        imbalance: parse_imbalance(&get("imbalance"))?,
        seed: number("seed", &get("seed"))?,
        num_tasks: number("tasks", &get("tasks"))?,
    };
    let solver = SolverConfig {
        r_steps: number("r", &get("r"))?,
        lr: number("lr", &get("lr"))?,
        loss: parse_loss(&get("loss"))?,
        k_neighbors: parse_k(&get("k"))?,
        beta: number("beta", &get("beta"))?,
        tau: number("tau", &get("tau"))?,
        preprocessing: parse_preprocessing(&get("preprocessing"))?,
        ablation: parse_learn(&get("learn"))?,
    };
    task.validate()?;
    solver.validate()?;
    Ok((task, solver))
}
