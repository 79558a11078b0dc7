//! Run configuration: built-in defaults, overridden by a `key = value` file,
//! overridden by command-line flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dirac_core::{Params, Tolerances};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Deliberate corruptions for negative controls of `verify`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    CorruptBubble,
}

/// Options shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub m: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub omega: Option<f64>,
    /// initial datum v(0); repeatable or comma separated
    #[arg(long = "lambda", global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub lambdas: Vec<f64>,
    /// scale parameter of the rescaled system; repeatable or comma separated
    #[arg(long = "epsilon", global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub epsilons: Vec<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tol_rel: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tol_abs: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub rmax: Option<f64>,
    /// bisection stops below this bracket width
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub lambda_tol: Option<f64>,
    /// horizon T of the convergence study
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub horizon: Option<f64>,
    /// cells per axis of the level-set grid
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
}

/// Fully resolved configuration, echoed into every result envelope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub m: f64,
    pub omega: f64,
    pub lambdas: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub tolerances: Tolerances,
    pub lambda_tol: f64,
    pub horizon: f64,
    pub resolution: usize,
    pub format: Format,
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault: Option<Fault>,
}

impl RunConfig {
    pub fn params(&self) -> Params {
        Params::new(self.m, self.omega).expect("validated at parse time")
    }
}

pub const DEFAULT_EPSILONS: [f64; 3] = [0.2, 0.1, 0.05];

const KEYS: [&str; 12] = [
    "m", "omega", "lambda", "epsilon", "tol_rel", "tol_abs", "rmax", "lambda_tol", "horizon", "resolution", "format", "out",
];

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Values read from a config file; lists accumulate over repeated keys.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct FileConfig {
    pub m: Option<f64>,
    pub omega: Option<f64>,
    pub lambdas: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub tol_rel: Option<f64>,
    pub tol_abs: Option<f64>,
    pub rmax: Option<f64>,
    pub lambda_tol: Option<f64>,
    pub horizon: Option<f64>,
    pub resolution: Option<usize>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, CliError> {
    value.parse().map_err(|_| usage(format!("line {line}: cannot parse {key} = {value:?}")))
}

fn parse_list(key: &str, value: &str, line: usize) -> Result<Vec<f64>, CliError> {
    value.split(',').map(|x| parse_num(key, x.trim(), line)).collect()
}

/// Parses `key = value` lines. `#` starts a comment; `-` and `_` are
/// interchangeable in keys. Unknown keys and repeated scalar keys are errors.
pub fn parse_config(text: &str) -> Result<FileConfig, CliError> {
    let mut cfg = FileConfig::default();
    let mut seen = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| usage(format!("line {line}: expected key = value, got {content:?}")))?;
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        if !KEYS.contains(&key.as_str()) {
            return Err(usage(format!("line {line}: unknown key {key:?}")));
        }
        if key != "lambda" && key != "epsilon" && !seen.insert(key.clone()) {
            return Err(usage(format!("line {line}: duplicate key {key:?}")));
        }
        match key.as_str() {
            "m" => cfg.m = Some(parse_num(&key, value, line)?),
            "omega" => cfg.omega = Some(parse_num(&key, value, line)?),
            "lambda" => cfg.lambdas.extend(parse_list(&key, value, line)?),
            "epsilon" => cfg.epsilons.extend(parse_list(&key, value, line)?),
            "tol_rel" => cfg.tol_rel = Some(parse_num(&key, value, line)?),
            "tol_abs" => cfg.tol_abs = Some(parse_num(&key, value, line)?),
            "rmax" => cfg.rmax = Some(parse_num(&key, value, line)?),
            "lambda_tol" => cfg.lambda_tol = Some(parse_num(&key, value, line)?),
            "horizon" => cfg.horizon = Some(parse_num(&key, value, line)?),
            "resolution" => cfg.resolution = Some(parse_num(&key, value, line)?),
            "format" => {
                cfg.format = Some(Format::from_str(value, true).map_err(|_| usage(format!("line {line}: bad format {value:?}")))?)
            }
            "out" => cfg.out = Some(PathBuf::from(value)),
            _ => unreachable!("key list checked above"),
        }
    }
    Ok(cfg)
}

fn read_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Merges flags over the config file over defaults and validates the result.
pub fn resolve(opts: &Options) -> Result<RunConfig, CliError> {
    let file = match &opts.config {
        Some(path) => read_config(path)?,
        None => FileConfig::default(),
    };
    let m = opts.m.or(file.m).unwrap_or(1.0);
    let omega = opts.omega.or(file.omega).unwrap_or(0.5);
    let p = Params::new(m, omega).map_err(|e| usage(e.to_string()))?;

    let mut tol = Tolerances::for_params(&p);
    if let Some(x) = opts.tol_rel.or(file.tol_rel) {
        tol.rel = x;
    }
    if let Some(x) = opts.tol_abs.or(file.tol_abs) {
        tol.abs = x;
    }
    if let Some(x) = opts.rmax.or(file.rmax) {
        tol.rmax = x;
    }
    tol.validate().map_err(|e| usage(e.to_string()))?;

    let lambdas = if opts.lambdas.is_empty() { file.lambdas } else { opts.lambdas.clone() };
    if let Some(l) = lambdas.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
        return Err(usage(format!("lambda must be positive, got {l}")));
    }
    let epsilons = if !opts.epsilons.is_empty() {
        opts.epsilons.clone()
    } else if !file.epsilons.is_empty() {
        file.epsilons
    } else {
        DEFAULT_EPSILONS.to_vec()
    };
    if let Some(e) = epsilons.iter().find(|&&e| !(e > 0.0 && e < 1.0)) {
        return Err(usage(format!("epsilon must lie in (0, 1), got {e}")));
    }
    let lambda_tol = opts.lambda_tol.or(file.lambda_tol).unwrap_or(1e-12);
    if !(lambda_tol > 0.0) {
        return Err(usage(format!("lambda_tol must be positive, got {lambda_tol}")));
    }
    let horizon = opts.horizon.or(file.horizon).unwrap_or(10.0);
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(usage(format!("horizon must be positive, got {horizon}")));
    }
    let resolution = opts.resolution.or(file.resolution).unwrap_or(512);
    if resolution < 2 {
        return Err(usage("resolution must be at least 2"));
    }
    Ok(RunConfig {
        m,
        omega,
        lambdas,
        epsilons,
        tolerances: tol,
        lambda_tol,
        horizon,
        resolution,
        format: opts.format.or(file.format).unwrap_or(Format::Json),
        out: opts.out.clone().or(file.out),
        fault: opts.inject_fault,
    })
}
