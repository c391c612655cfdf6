//! Batch drivers behind the command-line subcommands. Every driver writes
//! into its own output directory and returns a serializable report.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::diagnostics::{convergence_detector, ConvergenceDecision};
use crate::exec::Execution;
use crate::state::{chemical_potential, conserved_f, energy, lagrangian_shifted};
use crate::steady::{
    hessian_min_eigenvalue, solve_steady, stability_indicator, SteadyError, SteadyOptions,
    SteadyProblem, SteadyState,
};
use crate::stepper::{run_with, RunError, RunOptions};
use crate::verify::{verify, VerifyOptions, VerifyReport};

use super::config::{ConfigError, RunConfig, SweepSpec};
use super::format::{ledger_csv, Snapshot};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("steady solve failed: {0}")]
    Steady(#[from] SteadyError),
}

impl DriverError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            DriverError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<(), DriverError> {
    fs::write(path, contents).map_err(|source| DriverError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn prepare(dir: &Path, cfg: &RunConfig) -> Result<(), DriverError> {
    fs::create_dir_all(dir).map_err(|source| DriverError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write(&dir.join("config.toml"), &cfg.to_toml())
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulateReport {
    pub steps: usize,
    pub t_final: f64,
    /// The run ended early because the detector fired.
    pub stopped_early: bool,
    pub detector: ConvergenceDecision,
    pub kappa: f64,
    pub kappa_band_violated: Option<bool>,
    pub max_identity_residual: f64,
    pub mass_drift: f64,
    pub enthalpy_drift: f64,
    pub snapshots: usize,
}

/// Integrates the configured run; writes the ledger, snapshots, the resolved
/// configuration and `summary.json` into `out`. `base` resolves relative
/// snapshot paths in the configuration.
pub fn simulate(cfg: &RunConfig, base: &Path, out: &Path) -> Result<SimulateReport, DriverError> {
    let grid = cfg.grid()?;
    let model = cfg.model()?;
    let s0 = cfg.initial_state(&grid, base)?;
    prepare(out, cfg)?;

    let prefix = &cfg.output.snapshot_prefix;
    let every = cfg.run.snapshot_every;
    let mut snapshots = 0;
    let mut io_error = None;
    let mut save = |name: String, snap: Snapshot| {
        if io_error.is_none() {
            if let Err(e) = write(&out.join(name), &snap.to_text()) {
                io_error = Some(e);
            }
        }
    };
    if every > 0 {
        save(
            format!("{prefix}_{:06}.txt", 0),
            Snapshot::new(&grid, 0.0, &s0),
        );
        snapshots += 1;
    }
    let opts = RunOptions {
        stop_on: cfg.run.stop_on_convergence.then(|| cfg.run.criterion()),
    };
    let mut k = 0;
    let summary = run_with(
        &grid,
        &s0,
        cfg.run.t_end,
        &cfg.stepper,
        &model,
        &opts,
        |t, r| {
            k += 1;
            if every > 0 && k % every == 0 {
                save(
                    format!("{prefix}_{k:06}.txt"),
                    Snapshot::new(&grid, t, &r.state),
                );
                snapshots += 1;
            }
        },
    )?;
    save(
        format!("{prefix}_final.txt"),
        Snapshot::new(&grid, summary.t_final, &summary.state),
    );
    snapshots += 1;
    if let Some(e) = io_error {
        return Err(e);
    }

    let ledger = &summary.ledger;
    write(&out.join(&cfg.output.ledger), &ledger_csv(ledger))?;
    let r0 = &ledger.rows()[0];
    let drift = |f: fn(&crate::diagnostics::LedgerRow) -> f64| {
        ledger
            .rows()
            .iter()
            .map(|r| (f(r) - f(r0)).abs())
            .fold(0.0, f64::max)
    };
    let report = SimulateReport {
        steps: summary.steps,
        t_final: summary.t_final,
        stopped_early: summary.converged && summary.t_final < cfg.run.t_end,
        detector: convergence_detector(ledger, &cfg.run.criterion()),
        kappa: ledger.kappa(),
        kappa_band_violated: cfg.run.kappa_band.map(|k| ledger.leaves_band(k)),
        max_identity_residual: ledger.max_identity_residual(),
        mass_drift: drift(|r| r.mass),
        enthalpy_drift: drift(|r| r.enthalpy),
        snapshots,
    };
    write(&out.join("summary.json"), &to_json(&report))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SteadyReport {
    pub m0: f64,
    pub h0: f64,
    pub theta_inf: f64,
    pub mu_inf: f64,
    pub residual_norm: f64,
    pub mean_value_gap: f64,
    pub psi_spread: f64,
    pub energy: f64,
    pub lagrangian: f64,
    /// Smallest Rayleigh quotient of L'' over low cosine modes.
    pub stability_indicator: f64,
    /// Smallest constrained eigenvalue of L'' on small grids.
    pub hessian_min_eigenvalue: Option<f64>,
}

/// Solves the constrained stationary problem. The initial state supplies the
/// guess and, unless set in `[steady]`, the constraint values m0 and h0.
pub fn steady(cfg: &RunConfig, base: &Path, out: &Path) -> Result<SteadyReport, DriverError> {
    let grid = cfg.grid()?;
    let model = cfg.model()?;
    let mut s0 = cfg.initial_state(&grid, base)?;
    prepare(out, cfg)?;

    let mean0 = grid.mean(&s0.psi);
    let m0 = cfg.steady.m0.unwrap_or(mean0);
    s0.psi = s0.psi.map(|v| v + (m0 - mean0));
    let h0 = cfg
        .steady
        .h0
        .unwrap_or_else(|| conserved_f(&grid, &s0, &model));
    let mu0 = chemical_potential(&grid, &s0, &model);
    let guess = SteadyState {
        psi_inf: s0.psi.clone(),
        theta_inf: cfg
            .steady
            .theta_guess
            .unwrap_or_else(|| grid.mean(&s0.theta)),
        mu_inf: cfg.steady.mu_guess.unwrap_or_else(|| grid.mean(&mu0)),
        residual_norm: f64::INFINITY,
    };
    let problem = SteadyProblem {
        grid: grid.clone(),
        model: model.clone(),
        m0,
        h0,
    };
    let opts = SteadyOptions {
        tol: cfg.steady.tol,
        max_iters: cfg.steady.max_iters,
    };
    let sol = solve_steady(&problem, &guess, &opts)?;
    let state = sol.as_state(&grid);
    write(
        &out.join("steady_snapshot.txt"),
        &Snapshot::new(&grid, f64::INFINITY, &state).to_text(),
    )?;
    let report = SteadyReport {
        m0,
        h0,
        theta_inf: sol.theta_inf,
        mu_inf: sol.mu_inf,
        residual_norm: sol.residual_norm,
        mean_value_gap: sol.mean_value_gap(&grid, &model),
        psi_spread: sol.psi_inf.spread(),
        energy: energy(&grid, &state, &model),
        lagrangian: lagrangian_shifted(&grid, &state, &model, h0),
        stability_indicator: stability_indicator(&grid, &sol, &model, cfg.steady.probe_modes),
        hessian_min_eigenvalue: hessian_min_eigenvalue(&grid, &sol, &model),
    };
    write(&out.join("steady.json"), &to_json(&report))?;
    Ok(report)
}

/// Runs the self-check suite and writes `verify.json` into `out`.
pub fn run_verify(
    cfg: &RunConfig,
    out: &Path,
    exec: Execution,
) -> Result<VerifyReport, DriverError> {
    let model = cfg.model()?;
    let report = verify(
        &model,
        &VerifyOptions {
            samples: cfg.verify.samples,
            seed: cfg.seed,
            exec,
        },
    );
    fs::create_dir_all(out).map_err(|source| DriverError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    write(&out.join("verify.json"), &(report.to_json() + "\n"))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub dir: String,
    pub seed: u64,
    pub dt: Option<f64>,
    pub m0: Option<f64>,
    pub h0: Option<f64>,
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn all_ok(&self) -> bool {
        self.points.iter().all(|p| p.ok)
    }
}

/// One independent run per sweep point, each in `out/point_NNN` with seed
/// `seed + index`. Points run concurrently under `exec`.
pub fn sweep(
    cfg: &RunConfig,
    base: &Path,
    out: &Path,
    exec: Execution,
) -> Result<SweepReport, DriverError> {
    cfg.validate()?;
    let spec = cfg.sweep.clone().ok_or_else(|| ConfigError::Invalid {
        field: "sweep".into(),
        message: "missing [sweep] section".into(),
    })?;
    let mut points: Vec<(RunConfig, SweepPoint)> = Vec::new();
    let mut push = |i: usize, dt: Option<f64>, m0: Option<f64>, h0: Option<f64>| {
        let mut c = cfg.clone();
        c.sweep = None;
        c.seed = cfg.seed.wrapping_add(i as u64);
        if let Some(dt) = dt {
            c.stepper.dt = dt;
        }
        c.steady.m0 = m0.or(c.steady.m0);
        c.steady.h0 = h0.or(c.steady.h0);
        let point = SweepPoint {
            dir: format!("point_{i:03}"),
            seed: c.seed,
            dt,
            m0,
            h0,
            ok: false,
            error: None,
        };
        points.push((c, point));
    };
    match &spec {
        SweepSpec::Dt { values } => {
            for (i, &dt) in values.iter().enumerate() {
                push(i, Some(dt), None, None);
            }
        }
        SweepSpec::Steady { m0, h0 } => {
            for (i, (&a, &b)) in m0
                .iter()
                .flat_map(|a| h0.iter().map(move |b| (a, b)))
                .enumerate()
            {
                push(i, None, Some(a), Some(b));
            }
        }
    }
    fs::create_dir_all(out).map_err(|source| DriverError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let results = exec.map(&points, |(c, p)| {
        let dir = out.join(&p.dir);
        let res = match spec {
            SweepSpec::Dt { .. } => simulate(c, base, &dir).map(|_| ()),
            SweepSpec::Steady { .. } => steady(c, base, &dir).map(|_| ()),
        };
        let mut p = p.clone();
        p.ok = res.is_ok();
        p.error = res.err().map(|e| e.to_string());
        p
    });
    let report = SweepReport { points: results };
    write(&out.join("sweep.json"), &to_json(&report))?;
    Ok(report)
}
