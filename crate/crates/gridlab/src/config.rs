//! Flat `key = value` run configuration.
//!
//! One text file controls every tunable constant in the pipeline — parameter
//! sweeps, seeds, solver knobs, evaluation and kriging settings. The format:
//! one `key = value` pair per line, `#` starts a comment, blank lines are
//! ignored, later assignments win. [`Config::to_text`] emits the full
//! documented default file; unknown keys are rejected so typos fail loudly.
//!
//! Fraction sets (`p_set`, `q_set`) accept the token `1/V` alongside plain
//! numbers: it resolves to 1/|lines| for the grid in play, i.e. a selection
//! of exactly one line.

use crate::grid::GridFormat;
use crate::profiles::{Direction, ProfileGridParams, EPS_FLOOR_MW};
use crate::setse::{SpringSolverConfig, K_MIN_DEFAULT, K_RANGE_DEFAULT};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("key {key}: cannot parse {value:?} ({want})")]
    BadValue {
        key: String,
        value: String,
        want: &'static str,
    },
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
}

/// A fraction that is either a literal or the grid-relative token `1/V`
/// (one line's worth of the edge set).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FractionToken {
    OneLine,
    Value(f64),
}

impl FractionToken {
    /// Concrete fraction for a grid with `n_lines` lines.
    pub fn resolve(self, n_lines: usize) -> f64 {
        match self {
            FractionToken::OneLine => 1.0 / n_lines.max(1) as f64,
            FractionToken::Value(v) => v,
        }
    }
}

impl fmt::Display for FractionToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FractionToken::OneLine => write!(f, "1/V"),
            FractionToken::Value(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for FractionToken {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s == "1/V" {
            return Ok(FractionToken::OneLine);
        }
        s.parse::<f64>()
            .map(FractionToken::Value)
            .map_err(|_| format!("{s:?} is neither a number nor the token 1/V"))
    }
}

impl From<FractionToken> for String {
    fn from(t: FractionToken) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for FractionToken {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// Every tunable of a run. Field defaults are the study defaults; see
/// [`Config::to_text`] for the documented file form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Experiment name; prefixes the manifest id.
    pub experiment: String,
    /// Root directory artifacts are written under.
    pub out_dir: PathBuf,
    /// Worker threads; 0 means one per available CPU.
    pub workers: usize,
    /// Master seed of the whole experiment.
    pub seed: u64,
    /// Attack runs per campaign.
    pub n_runs: usize,
    /// Grid input files.
    pub grids: Vec<PathBuf>,
    /// How grid files are laid out.
    pub grid_format: GridFormat,

    // Limit-profile generation.
    pub alpha_set: Vec<f64>,
    pub p_set: Vec<FractionToken>,
    pub f_set: Vec<f64>,
    pub q_set: Vec<FractionToken>,
    pub directions: Vec<Direction>,
    pub include_proportional: bool,
    /// Stand-in for |base flow| on zero-flow lines, in MW.
    pub eps_floor_mw: f64,

    // Spring-embedding stiffness map and solver.
    pub k_min: f64,
    pub k_range: f64,
    pub setse: SpringSolverConfig,

    // Evaluation harness.
    pub cv_repeats: u32,
    pub cv_folds: u32,
    /// Restrict regression datasets to proportionally loaded profiles.
    pub eval_proportional_only: bool,

    // Kriging.
    pub variogram_bins: usize,
    /// Raster cell size; 0 picks span/40 automatically.
    pub raster_cell_size: f64,
}

impl Default for Config {
    fn default() -> Self {
        let solver = SpringSolverConfig::default();
        Config {
            experiment: "study".into(),
            out_dir: PathBuf::from("out"),
            workers: 0,
            seed: 42,
            n_runs: 100,
            grids: Vec::new(),
            grid_format: GridFormat::CanonicalJson,
            alpha_set: vec![
                1.005, 1.025, 1.1, 1.2, 1.5, 2.0, 3.0, 5.0, 7.0, 10.0, 20.0,
            ],
            p_set: vec![
                FractionToken::OneLine,
                FractionToken::Value(0.1),
                FractionToken::Value(0.2),
                FractionToken::Value(0.3),
                FractionToken::Value(0.4),
                FractionToken::Value(0.5),
            ],
            f_set: vec![0.25, 0.5, 0.75, 0.99],
            q_set: vec![
                FractionToken::OneLine,
                FractionToken::Value(0.1),
                FractionToken::Value(0.2),
                FractionToken::Value(0.3),
                FractionToken::Value(0.4),
                FractionToken::Value(0.5),
            ],
            directions: vec![Direction::MostToLeast, Direction::LeastToMost],
            include_proportional: false,
            eps_floor_mw: EPS_FLOOR_MW,
            k_min: K_MIN_DEFAULT,
            k_range: K_RANGE_DEFAULT,
            setse: solver,
            cv_repeats: 10,
            cv_folds: 10,
            eval_proportional_only: false,
            variogram_bins: 15,
            raster_cell_size: 0.0,
        }
    }
}

fn parse_as<T: FromStr>(key: &str, value: &str, want: &'static str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        want,
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str, want: &'static str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_as(key, s, want))
        .collect()
}

impl Config {
    /// Apply one `key = value` assignment. Shared by the file parser and
    /// command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "experiment" => self.experiment = value.trim().to_string(),
            "out" => self.out_dir = PathBuf::from(value.trim()),
            "workers" => self.workers = parse_as(key, value, "non-negative integer")?,
            "seed" => self.seed = parse_as(key, value, "unsigned 64-bit integer")?,
            "n_runs" => {
                let n: usize = parse_as(key, value, "positive integer")?;
                if n == 0 {
                    return Err(ConfigError::BadValue {
                        key: key.to_string(),
                        value: value.to_string(),
                        want: "positive integer",
                    });
                }
                self.n_runs = n;
            }
            "grids" => {
                self.grids = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "grid_format" => {
                self.grid_format = match value.trim() {
                    "json" => GridFormat::CanonicalJson,
                    "csv" => GridFormat::NodeEdgeCsv,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            want: "json or csv",
                        })
                    }
                }
            }
            "alpha_set" => self.alpha_set = parse_list(key, value, "number")?,
            "p_set" => self.p_set = parse_list(key, value, "number or 1/V")?,
            "f_set" => self.f_set = parse_list(key, value, "number")?,
            "q_set" => self.q_set = parse_list(key, value, "number or 1/V")?,
            "directions" => {
                self.directions = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| match s {
                        "most_to_least" => Ok(Direction::MostToLeast),
                        "least_to_most" => Ok(Direction::LeastToMost),
                        _ => Err(ConfigError::BadValue {
                            key: key.into(),
                            value: s.into(),
                            want: "most_to_least or least_to_most",
                        }),
                    })
                    .collect::<Result<_, _>>()?
            }
            "include_proportional" => {
                self.include_proportional = parse_as(key, value, "true or false")?
            }
            "eps_floor_mw" => self.eps_floor_mw = parse_as(key, value, "positive number")?,
            "k_min" => self.k_min = parse_as(key, value, "number")?,
            "k_range" => self.k_range = parse_as(key, value, "number")?,
            "setse_dt_factor" => self.setse.dt_factor = parse_as(key, value, "number")?,
            "setse_gamma_factor" => {
                self.setse.gamma_factor = parse_as(key, value, "number")?
            }
            "setse_tol_factor" => self.setse.tol_factor = parse_as(key, value, "number")?,
            "setse_abs_tol" => {
                let v: f64 = parse_as(key, value, "number (0 disables the override)")?;
                self.setse.tolerance_abs = if v > 0.0 { Some(v) } else { None };
            }
            "setse_max_iterations" => {
                self.setse.max_iterations = parse_as(key, value, "positive integer")?
            }
            "setse_max_retunes" => {
                self.setse.max_retunes = parse_as(key, value, "non-negative integer")?
            }
            "setse_check_every" => {
                self.setse.divergence_check_every = parse_as(key, value, "positive integer")?
            }
            "setse_divergence_growth" => {
                self.setse.divergence_growth = parse_as(key, value, "number > 1")?
            }
            "cv_repeats" => self.cv_repeats = parse_as(key, value, "positive integer")?,
            "cv_folds" => self.cv_folds = parse_as(key, value, "integer >= 2")?,
            "eval_proportional_only" => {
                self.eval_proportional_only = parse_as(key, value, "true or false")?
            }
            "variogram_bins" => self.variogram_bins = parse_as(key, value, "positive integer")?,
            "raster_cell_size" => {
                self.raster_cell_size = parse_as(key, value, "number (0 = automatic)")?
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Parse a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut config = Config::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine {
                    line: idx + 1,
                    text: raw.to_string(),
                });
            };
            config.set(key.trim(), value)?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Config::parse(&text)
    }

    /// Resolved profile sweep for a grid with `n_lines` lines. Fraction
    /// tokens become concrete values and near-duplicate fractions collapse,
    /// mirroring the default study family.
    pub fn profile_params(&self, n_lines: usize) -> ProfileGridParams {
        let resolve = |tokens: &[FractionToken]| {
            let mut out: Vec<f64> = Vec::with_capacity(tokens.len());
            for t in tokens {
                let v = t.resolve(n_lines);
                if !out.iter().any(|&u| (u - v).abs() < 1e-12) {
                    out.push(v);
                }
            }
            out
        };
        ProfileGridParams {
            alphas: self.alpha_set.clone(),
            ps: resolve(&self.p_set),
            fs: self.f_set.clone(),
            qs: resolve(&self.q_set),
            directions: self.directions.clone(),
            include_proportional: self.include_proportional,
            eps_floor: self.eps_floor_mw,
        }
    }

    /// The full documented config file with this configuration's values.
    /// `Config::parse(&config.to_text())` reproduces the configuration.
    pub fn to_text(&self) -> String {
        let join_f64 = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let join_frac = |v: &[FractionToken]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let directions = self
            .directions
            .iter()
            .map(|d| match d {
                Direction::MostToLeast => "most_to_least",
                Direction::LeastToMost => "least_to_most",
            })
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "\
# Run identity and scale.
experiment = {experiment}          # experiment name; prefixes the manifest id
out = {out}                        # artifact root directory
workers = {workers}                # worker threads; 0 = one per CPU
seed = {seed}                      # master seed; all randomness derives from it
n_runs = {n_runs}                  # attack runs per campaign

# Input grids.
grids = {grids}                    # comma-separated grid files
grid_format = {grid_format}        # json (single document) or csv (nodes.csv + edges.csv dir)

# Line-limit profile sweep. Fractions accept the token 1/V = one line.
alpha_set = {alpha_set}
p_set = {p_set}                    # donor fraction of lines
f_set = {f_set}                    # fraction of each donor's excess moved
q_set = {q_set}                    # recipient fraction of lines
directions = {directions}          # donor extreme: most_to_least and/or least_to_most
include_proportional = {include_proportional}  # also emit the plain proportional profile per alpha
eps_floor_mw = {eps_floor_mw}      # |flow| stand-in on zero-flow lines, MW

# Spring-embedding stiffness map k = k_range*(1 - 1/alpha) + k_min and solver.
k_min = {k_min}
k_range = {k_range}
setse_dt_factor = {dt_factor}      # timestep = dt_factor*sqrt(1/k_max) per component
setse_gamma_factor = {gamma_factor} # drag = gamma_factor*sqrt(k_max)
setse_tol_factor = {tol_factor}    # converged when residual < tol_factor * sum |F|
setse_abs_tol = {abs_tol}          # absolute tolerance override; 0 = use tol_factor rule
setse_max_iterations = {max_iterations}
setse_max_retunes = {max_retunes}  # timestep halvings allowed on divergence
setse_check_every = {check_every}  # steps between divergence checkpoints
setse_divergence_growth = {divergence_growth} # residual growth flagging divergence

# Measure-vs-collapse evaluation.
cv_repeats = {cv_repeats}
cv_folds = {cv_folds}
eval_proportional_only = {eval_proportional_only} # regress only proportional profiles

# Kriging.
variogram_bins = {variogram_bins}  # empirical semivariogram bins (cutoff: half max distance)
raster_cell_size = {raster_cell_size} # 0 picks span/40 automatically
",
            experiment = self.experiment,
            out = self.out_dir.display(),
            workers = self.workers,
            seed = self.seed,
            n_runs = self.n_runs,
            grids = self
                .grids
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(","),
            grid_format = match self.grid_format {
                GridFormat::CanonicalJson => "json",
                GridFormat::NodeEdgeCsv => "csv",
            },
            alpha_set = join_f64(&self.alpha_set),
            p_set = join_frac(&self.p_set),
            f_set = join_f64(&self.f_set),
            q_set = join_frac(&self.q_set),
            directions = directions,
            include_proportional = self.include_proportional,
            eps_floor_mw = self.eps_floor_mw,
            k_min = self.k_min,
            k_range = self.k_range,
            dt_factor = self.setse.dt_factor,
            gamma_factor = self.setse.gamma_factor,
            tol_factor = self.setse.tol_factor,
            abs_tol = self.setse.tolerance_abs.unwrap_or(0.0),
            max_iterations = self.setse.max_iterations,
            max_retunes = self.setse.max_retunes,
            check_every = self.setse.divergence_check_every,
            divergence_growth = self.setse.divergence_growth,
            cv_repeats = self.cv_repeats,
            cv_folds = self.cv_folds,
            eval_proportional_only = self.eval_proportional_only,
            variogram_bins = self.variogram_bins,
            raster_cell_size = self.raster_cell_size,
        )
    }
}
