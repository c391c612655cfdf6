//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [grid]
//! cells = [64]
//! lengths = [10.0]
//!
//! [model]
//! lambda = [0.0, 0.0, 1.0]
//!
//! [initial]
//! kind = "noise"
//! psi = 0.0
//! amplitude = 0.05
//! theta = 1.0
//!
//! [stepper]
//! dt = 1e-3
//! scheme = "implicit"
//!
//! [run]
//! t_end = 10.0
//! snapshot_every = 1000
//! convergence_tol = 1e-8
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{ModelConfig, ModelFunctions};
use crate::diagnostics::ConvergenceCriterion;
use crate::grid::{Field, Grid};
use crate::state::State;
use crate::stepper::StepperConfig;

use super::format::Snapshot;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}line {line}, column {column}: {message}", origin(.path))]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn origin(path: &Option<PathBuf>) -> String {
    path.as_ref()
        .map(|p| format!("{}: ", p.display()))
        .unwrap_or_default()
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub cells: Vec<usize>,
    pub lengths: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            cells: vec![64],
            lengths: vec![10.0],
        }
    }
}

/// Initial data; `theta` must be positive everywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant {
        psi: f64,
        theta: f64,
    },
    /// Uniform noise of the given amplitude around constants, drawn from the run seed.
    Noise {
        psi: f64,
        amplitude: f64,
        theta: f64,
        #[serde(default)]
        theta_amplitude: f64,
    },
    /// tanh interface normal to the first axis at `center` (fraction of the length).
    Tanh {
        #[serde(default = "minus_one")]
        left: f64,
        #[serde(default = "plus_one")]
        right: f64,
        #[serde(default = "half")]
        center: f64,
        width: f64,
        theta: f64,
    },
    /// psi + amplitude·cos(πk₀x/L₀)·cos(πk₁y/L₁)
    Cosine {
        psi: f64,
        amplitude: f64,
        mode: Vec<usize>,
        theta: f64,
    },
    Snapshot {
        path: PathBuf,
    },
}

fn minus_one() -> f64 {
    -1.0
}
fn plus_one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Noise {
            psi: 0.0,
            amplitude: 0.05,
            theta: 1.0,
            theta_amplitude: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub t_end: f64,
    /// Write a snapshot every this many accepted steps; 0 writes only the final one.
    pub snapshot_every: usize,
    /// Gradient-norm tolerance for the convergence detector.
    pub convergence_tol: f64,
    pub convergence_consecutive: usize,
    /// End the run as soon as the detector fires.
    pub stop_on_convergence: bool,
    /// Declared band [1/κ*, κ*] for ϑ; leaving it is reported in the summary.
    pub kappa_band: Option<f64>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            snapshot_every: 0,
            convergence_tol: 1e-8,
            convergence_consecutive: 1,
            stop_on_convergence: false,
            kappa_band: None,
        }
    }
}

impl RunSpec {
    pub fn criterion(&self) -> ConvergenceCriterion {
        ConvergenceCriterion {
            tol: self.convergence_tol,
            consecutive: self.convergence_consecutive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub ledger: String,
    pub snapshot_prefix: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            ledger: "ledger.csv".into(),
            snapshot_prefix: "snapshot".into(),
        }
    }
}

/// Steady problem data. Unset constraint values are taken from the initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteadySpec {
    pub m0: Option<f64>,
    pub h0: Option<f64>,
    pub theta_guess: Option<f64>,
    pub mu_guess: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
    pub probe_modes: usize,
}

impl Default for SteadySpec {
    fn default() -> Self {
        Self {
            m0: None,
            h0: None,
            theta_guess: None,
            mu_guess: None,
            tol: 1e-11,
            max_iters: 60,
            probe_modes: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepSpec {
    /// One simulation per time step.
    Dt { values: Vec<f64> },
    /// One steady solve per (m0, h0) pair of the Cartesian product.
    Steady { m0: Vec<f64>, h0: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub samples: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self { samples: 20 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub model: ModelConfig,
    pub initial: InitialSpec,
    pub stepper: StepperConfig,
    pub run: RunSpec,
    pub output: OutputSpec,
    pub steady: SteadySpec,
    pub sweep: Option<SweepSpec>,
    pub verify: VerifySpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::parse(text, None)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, Some(path))
    }

    fn parse(text: &str, path: Option<&Path>) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_column(text, s.start))
                .unwrap_or((1, 1));
            ConfigError::Parse {
                path: path.map(Path::to_path_buf),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// Checks everything that can be checked without touching the filesystem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid()?;
        self.model()?;
        self.stepper
            .validate()
            .map_err(|e| invalid("stepper", e.to_string()))?;
        if !(self.run.t_end >= 0.0) || !self.run.t_end.is_finite() {
            return Err(invalid("run.t_end", "must be finite and nonnegative"));
        }
        if !(self.run.convergence_tol > 0.0) {
            return Err(invalid("run.convergence_tol", "must be positive"));
        }
        if self.run.convergence_consecutive == 0 {
            return Err(invalid("run.convergence_consecutive", "must be at least 1"));
        }
        if let Some(k) = self.run.kappa_band {
            if !(k > 1.0) {
                return Err(invalid("run.kappa_band", "must exceed 1"));
            }
        }
        if !(self.steady.tol > 0.0) {
            return Err(invalid("steady.tol", "must be positive"));
        }
        if let Some(t) = self.steady.theta_guess {
            if !(t > 0.0) {
                return Err(invalid("steady.theta_guess", "must be positive"));
            }
        }
        match &self.initial {
            InitialSpec::Constant { psi, theta } => {
                finite("initial.psi", *psi)?;
                positive_theta(*theta)?;
            }
            InitialSpec::Noise {
                psi,
                amplitude,
                theta,
                theta_amplitude,
            } => {
                finite("initial.psi", *psi)?;
                finite("initial.amplitude", *amplitude)?;
                if !(theta_amplitude.abs() < *theta) {
                    return Err(invalid(
                        "initial.theta",
                        "theta - |theta_amplitude| must be positive",
                    ));
                }
            }
            InitialSpec::Tanh {
                left,
                right,
                center,
                width,
                theta,
            } => {
                finite("initial.left", *left)?;
                finite("initial.right", *right)?;
                finite("initial.center", *center)?;
                if !(*width > 0.0) {
                    return Err(invalid("initial.width", "must be positive"));
                }
                positive_theta(*theta)?;
            }
            InitialSpec::Cosine {
                psi,
                amplitude,
                mode,
                theta,
            } => {
                finite("initial.psi", *psi)?;
                finite("initial.amplitude", *amplitude)?;
                if mode.len() != self.grid.cells.len() {
                    return Err(invalid("initial.mode", "needs one entry per grid axis"));
                }
                positive_theta(*theta)?;
            }
            InitialSpec::Snapshot { .. } => {}
        }
        match &self.sweep {
            Some(SweepSpec::Dt { values })
                if values.is_empty() || values.iter().any(|&v| !(v > 0.0)) =>
            {
                return Err(invalid("sweep.values", "needs positive time steps"));
            }
            Some(SweepSpec::Steady { m0, h0 }) if m0.is_empty() || h0.is_empty() => {
                return Err(invalid("sweep", "m0 and h0 must be nonempty"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Grid::new(&self.grid.cells, &self.grid.lengths).map_err(|e| invalid("grid", e.to_string()))
    }

    pub fn model(&self) -> Result<ModelFunctions, ConfigError> {
        self.model
            .build()
            .map_err(|e| invalid("model", e.to_string()))
    }

    /// Builds the initial state. Snapshot paths are resolved relative to `base`.
    pub fn initial_state(&self, grid: &Grid, base: &Path) -> Result<State, ConfigError> {
        let (psi, theta) = match &self.initial {
            InitialSpec::Constant { psi, theta } => {
                (Field::constant(grid, *psi), Field::constant(grid, *theta))
            }
            InitialSpec::Noise {
                psi,
                amplitude,
                theta,
                theta_amplitude,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let p: Vec<f64> = (0..grid.len())
                    .map(|_| psi + amplitude * rng.gen_range(-1.0..=1.0))
                    .collect();
                let t: Vec<f64> = (0..grid.len())
                    .map(|_| theta + theta_amplitude * rng.gen_range(-1.0..=1.0))
                    .collect();
                (Field::from_vec_unchecked(p), Field::from_vec_unchecked(t))
            }
            InitialSpec::Tanh {
                left,
                right,
                center,
                width,
                theta,
            } => {
                let x0 = center * grid.lengths()[0];
                let (mid, jump) = (0.5 * (left + right), 0.5 * (right - left));
                (
                    Field::from_fn(grid, |x| mid + jump * ((x[0] - x0) / width).tanh()),
                    Field::constant(grid, *theta),
                )
            }
            InitialSpec::Cosine {
                psi,
                amplitude,
                mode,
                theta,
            } => {
                let k = [mode[0], mode.get(1).copied().unwrap_or(0)];
                let c = grid.cosine_mode(k);
                (
                    c.map(|v| psi + amplitude * v),
                    Field::constant(grid, *theta),
                )
            }
            InitialSpec::Snapshot { path } => {
                let path = base.join(path);
                let text = fs::read_to_string(&path).map_err(|source| ConfigError::Read {
                    path: path.clone(),
                    source,
                })?;
                let snap = Snapshot::parse(&text)
                    .map_err(|e| invalid("initial.path", format!("{}: {e}", path.display())))?;
                if snap.grid != *grid {
                    return Err(invalid("initial.path", "snapshot grid differs from [grid]"));
                }
                (snap.psi, snap.theta)
            }
        };
        if !psi.is_finite() || !theta.is_finite() {
            return Err(invalid("initial", "initial data must be finite"));
        }
        State::new(grid, psi, theta).map_err(|e| invalid("initial.theta", e.to_string()))
    }
}

fn finite(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, "must be finite"))
    }
}

fn positive_theta(theta: f64) -> Result<(), ConfigError> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(invalid("initial.theta", "must be positive"))
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_valid() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = RunConfig::from_toml("seed = 1\n[grid]\ncels = [4]\n").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nonpositive_theta_is_rejected() {
        let err = RunConfig::from_toml("[initial]\nkind = \"constant\"\npsi = 0.0\ntheta = 0.0\n")
            .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref field, .. } if field == "initial.theta"));
    }

    #[test]
    fn noise_is_seeded() {
        let mut cfg = RunConfig::default();
        let g = cfg.grid().unwrap();
        let a = cfg.initial_state(&g, Path::new(".")).unwrap();
        let b = cfg.initial_state(&g, Path::new(".")).unwrap();
        assert_eq!(a, b);
        cfg.seed = 1;
        let c = cfg.initial_state(&g, Path::new(".")).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig {
            sweep: Some(SweepSpec::Dt {
                values: vec![1e-3, 5e-4],
            }),
            ..Default::default()
        };
        cfg.steady.m0 = Some(0.25);
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }
}
