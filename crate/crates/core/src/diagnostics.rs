//! Run ledger: conserved quantities, energy, cumulative dissipation and the
//! residual of the integrated energy identity
//!
//! ```text
//! E(t) + ∫₀ᵗ (|∇μ|² + |∇ϑ|²) ds = E(0),
//! ```
//!
//! plus convergence detection and decay-rate fitting of L(t) − L∞.

use serde::Serialize;
use thiserror::Error;

use crate::constitutive::ModelFunctions;
use crate::grid::Grid;
use crate::state::{chemical_potential, conserved_f, energy, lagrangian_shifted, State};
use crate::stepper::StepResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("ledger time must increase: {new} after {last}")]
    NonMonotoneTime { last: f64, new: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerRow {
    pub t: f64,
    /// mean ψ
    pub mass: f64,
    /// F = ∫(λ(ψ) + b(ϑ))
    pub enthalpy: f64,
    pub energy: f64,
    /// E − ϑ̄·(F − F(0)); equals E while F is conserved
    pub lagrangian: f64,
    /// cumulative dissipation D(t)
    pub dissipation: f64,
    /// E(t) + D(t) − E(0)
    pub identity_residual: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub grad_mu: f64,
    pub grad_theta: f64,
    pub newton_iters: usize,
    /// max − min of μ (not part of the CSV layout)
    #[serde(skip)]
    pub mu_spread: f64,
}

impl LedgerRow {
    pub fn theta_spread(&self) -> f64 {
        self.theta_max - self.theta_min
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ledger {
    rows: Vec<LedgerRow>,
    energy0: f64,
    enthalpy_ref: f64,
}

impl Ledger {
    /// Starts a ledger with the row for t = 0.
    pub fn new(grid: &Grid, s0: &State, m: &ModelFunctions) -> Self {
        let energy0 = energy(grid, s0, m);
        let enthalpy_ref = conserved_f(grid, s0, m);
        let mu = chemical_potential(grid, s0, m);
        let row = LedgerRow {
            t: 0.0,
            mass: grid.mean(&s0.psi),
            enthalpy: enthalpy_ref,
            energy: energy0,
            lagrangian: energy0,
            dissipation: 0.0,
            identity_residual: 0.0,
            theta_min: s0.theta.min(),
            theta_max: s0.theta.max(),
            grad_mu: grid.grad_sq_norm(&mu).sqrt(),
            grad_theta: grid.grad_sq_norm(&s0.theta).sqrt(),
            newton_iters: 0,
            mu_spread: mu.spread(),
        };
        Self {
            rows: vec![row],
            energy0,
            enthalpy_ref,
        }
    }

    /// Builds a ledger from existing rows (used for synthetic data and reloads).
    pub fn from_rows(rows: Vec<LedgerRow>) -> Self {
        let energy0 = rows.first().map_or(0.0, |r| r.energy);
        let enthalpy_ref = rows.first().map_or(0.0, |r| r.enthalpy);
        Self {
            rows,
            energy0,
            enthalpy_ref,
        }
    }

    pub fn rows(&self) -> &[LedgerRow] {
        &self.rows
    }

    pub fn last(&self) -> &LedgerRow {
        self.rows
            .last()
            .expect("ledger always holds the initial row")
    }

    pub fn initial_energy(&self) -> f64 {
        self.energy0
    }

    pub fn enthalpy_ref(&self) -> f64 {
        self.enthalpy_ref
    }

    pub fn record(
        &mut self,
        grid: &Grid,
        t: f64,
        result: &StepResult,
        m: &ModelFunctions,
    ) -> Result<(), LedgerError> {
        let last = self.last();
        if !(t > last.t) {
            return Err(LedgerError::NonMonotoneTime {
                last: last.t,
                new: t,
            });
        }
        let s = &result.state;
        let e = energy(grid, s, m);
        let dissipation = last.dissipation + result.dissipation_increment;
        let row = LedgerRow {
            t,
            mass: grid.mean(&s.psi),
            enthalpy: conserved_f(grid, s, m),
            energy: e,
            lagrangian: lagrangian_shifted(grid, s, m, self.enthalpy_ref),
            dissipation,
            identity_residual: e + dissipation - self.energy0,
            theta_min: s.theta.min(),
            theta_max: s.theta.max(),
            grad_mu: grid.grad_sq_norm(&result.mu).sqrt(),
            grad_theta: grid.grad_sq_norm(&s.theta).sqrt(),
            newton_iters: result.newton_iters,
            mu_spread: result.mu.spread(),
        };
        self.rows.push(row);
        Ok(())
    }

    /// max over the run of max(max ϑ, 1/min ϑ)
    pub fn kappa(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.theta_max.max(1.0 / r.theta_min))
            .fold(1.0, f64::max)
    }

    /// True iff ϑ ever left [1/κ*, κ*].
    pub fn leaves_band(&self, kappa_star: f64) -> bool {
        self.rows
            .iter()
            .any(|r| r.theta_min < 1.0 / kappa_star || r.theta_max > kappa_star)
    }

    pub fn max_identity_residual(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.identity_residual.abs())
            .fold(0.0, f64::max)
    }

    /// Rows from time `from` on, stopping before L − `l_inf` first drops to `floor`.
    pub fn monitored_tail(&self, l_inf: f64, from: f64, floor: f64) -> &[LedgerRow] {
        let start = self
            .rows
            .iter()
            .position(|r| r.t >= from)
            .unwrap_or(self.rows.len());
        let len = self.rows[start..]
            .iter()
            .position(|r| r.lagrangian - l_inf <= floor)
            .unwrap_or(self.rows.len() - start);
        &self.rows[start..start + len]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvergenceCriterion {
    /// Threshold on |∇μ|₂ + |∇ϑ|₂.
    pub tol: f64,
    /// Consecutive rows that must be below `tol`.
    pub consecutive: usize,
}

impl Default for ConvergenceCriterion {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            consecutive: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceDecision {
    pub fired: bool,
    /// Row at which the criterion was first met.
    pub row: Option<usize>,
    pub mu_spread: f64,
    pub theta_spread: f64,
}

/// Fires once |∇μ|₂ + |∇ϑ|₂ < tol on the required number of consecutive rows.
pub fn convergence_detector(ledger: &Ledger, c: &ConvergenceCriterion) -> ConvergenceDecision {
    let need = c.consecutive.max(1);
    let mut run = 0;
    let mut row = None;
    for (i, r) in ledger.rows().iter().enumerate() {
        if r.grad_mu + r.grad_theta < c.tol {
            run += 1;
            if run >= need {
                row = Some(i);
                break;
            }
        } else {
            run = 0;
        }
    }
    let last = ledger.last();
    ConvergenceDecision {
        fired: row.is_some(),
        row,
        mu_spread: last.mu_spread,
        theta_spread: last.theta_spread(),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecayFitError {
    #[error("tail has {0} rows, need at least 3")]
    TooShort(usize),
    #[error("L − L∞ = {gap:e} ≤ 0 at t = {t}; the limit value is overestimated")]
    NotAboveLimit { t: f64, gap: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    /// L − L∞ ≈ C·e^{−rate·t}
    Exponential,
    /// L − L∞ ≈ C·(1 + t − t₀)^{−rate}
    Algebraic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModelFit {
    pub rate: f64,
    pub log_prefactor: f64,
    /// residual sum of squares in log space
    pub rss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityCheck {
    pub exponent: f64,
    pub nonincreasing: bool,
    /// Largest step-to-step increase of H (≤ 0 when strictly decreasing).
    pub max_increase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub monotonicity: Vec<MonotonicityCheck>,
    pub exponential: ModelFit,
    pub algebraic: ModelFit,
    pub best: DecayModel,
}

impl DecayFit {
    pub fn best_rate(&self) -> f64 {
        match self.best {
            DecayModel::Exponential => self.exponential.rate,
            DecayModel::Algebraic => self.algebraic.rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayFitOptions {
    /// Allowed per-step increase of H(t) = (L − L∞)^s.
    pub step_tol: f64,
    pub exponents: Vec<f64>,
}

impl Default for DecayFitOptions {
    fn default() -> Self {
        Self {
            step_tol: 1e-10,
            exponents: (1..=10).map(|i| 0.05 * i as f64).collect(),
        }
    }
}

/// Least squares y ≈ a + b·x; returns (a, b, rss).
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rss = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    (intercept, slope, rss)
}

/// Fits the decay of L(t) − L∞ on `tail` and checks monotonicity of
/// H(t) = (L − L∞)^s for each candidate exponent.
pub fn decay_fit(
    tail: &[LedgerRow],
    l_inf: f64,
    opts: &DecayFitOptions,
) -> Result<DecayFit, DecayFitError> {
    if tail.len() < 3 {
        return Err(DecayFitError::TooShort(tail.len()));
    }
    if let Some(r) = tail.iter().find(|r| !(r.lagrangian - l_inf > 0.0)) {
        return Err(DecayFitError::NotAboveLimit {
            t: r.t,
            gap: r.lagrangian - l_inf,
        });
    }
    let gaps: Vec<f64> = tail.iter().map(|r| r.lagrangian - l_inf).collect();
    let monotonicity = opts
        .exponents
        .iter()
        .map(|&s| {
            let max_increase = gaps
                .windows(2)
                .map(|w| w[1].powf(s) - w[0].powf(s))
                .fold(f64::NEG_INFINITY, f64::max);
            MonotonicityCheck {
                exponent: s,
                nonincreasing: max_increase <= opts.step_tol,
                max_increase,
            }
        })
        .collect();

    let y: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let t: Vec<f64> = tail.iter().map(|r| r.t).collect();
    let t0 = t[0];
    let (a, b, rss) = linear_fit(&t, &y);
    let exponential = ModelFit {
        rate: -b,
        log_prefactor: a,
        rss,
    };
    let log_t: Vec<f64> = t.iter().map(|v| (1.0 + v - t0).ln()).collect();
    let (a, b, rss) = linear_fit(&log_t, &y);
    let algebraic = ModelFit {
        rate: -b,
        log_prefactor: a,
        rss,
    };
    let best = if exponential.rss <= algebraic.rss {
        DecayModel::Exponential
    } else {
        DecayModel::Algebraic
    };
    Ok(DecayFit {
        monotonicity,
        exponential,
        algebraic,
        best,
    })
}
