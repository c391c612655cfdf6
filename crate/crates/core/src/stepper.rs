//! Time integration of the conserved Penrose-Fife system
//!
//! ```text
//! ∂ψ/∂t = Δμ,   μ = −Δψ + Φ'(ψ) − λ'(ψ)ϑ,
//! ∂(b(ϑ) + λ(ψ))/∂t = Δϑ,
//! ```
//!
//! with homogeneous Neumann conditions. The implicit scheme is backward Euler
//! solved by damped Newton on the unknowns (ψ, μ, ϑ) interleaved per cell.
//! Every update is a Δ_h image plus a local term, so mass and enthalpy are
//! conserved up to the nonlinear residual.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::ModelFunctions;
use crate::diagnostics::{convergence_detector, ConvergenceCriterion, Ledger};
use crate::grid::{Field, Grid};
use crate::linalg::{max_norm, BandedLu, BandedMatrix, LinalgError};
use crate::state::{chemical_potential, State};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Backward Euler on the full coupled system.
    #[default]
    Implicit,
    /// Linear implicit part, explicit Φ' and λ coupling; one solve per equation.
    Imex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepperConfig {
    pub dt: f64,
    pub scheme: Scheme,
    /// Max-norm tolerance on the Newton residual.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// Relative residual above which a linear solve gets one refinement sweep.
    pub linear_tol: f64,
    /// How often `run` may halve dt for a step whose Newton solve fails.
    pub max_dt_halvings: usize,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scheme: Scheme::Implicit,
            newton_tol: 1e-10,
            max_newton_iters: 25,
            linear_tol: 1e-12,
            max_dt_halvings: 4,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<(), StepError> {
        let ok = self.dt.is_finite()
            && self.dt > 0.0
            && self.newton_tol > 0.0
            && self.linear_tol > 0.0
            && self.max_newton_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(StepError::InvalidConfig)
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("Newton did not converge: residual {residual:e} after {iters} iterations")]
    NewtonDiverged { iters: usize, residual: f64 },
    #[error("theta left (0, ∞): {value} at cell {cell}")]
    PositivityLost { cell: usize, value: f64 },
    #[error("non-finite values in the step")]
    NonFinite,
    #[error("invalid stepper configuration (dt and tolerances must be positive)")]
    InvalidConfig,
    #[error(transparent)]
    Linear(#[from] LinalgError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: State,
    /// μ at the new time level.
    pub mu: Field,
    pub dt: f64,
    pub newton_iters: usize,
    pub residual_norm: f64,
    /// dt·(|∇μ⁺|² + |∇ϑ⁺|²)
    pub dissipation_increment: f64,
}

const MAX_HALVINGS: usize = 8;

/// A chord step with a stale Jacobian is kept only if it shrinks the residual
/// at least this much.
const CHORD_CONTRACTION: f64 = 0.1;

pub fn step(
    grid: &Grid,
    s: &State,
    cfg: &StepperConfig,
    m: &ModelFunctions,
) -> Result<StepResult, StepError> {
    cfg.validate()?;
    match cfg.scheme {
        Scheme::Implicit => implicit_step(grid, s, cfg, m),
        Scheme::Imex => imex_step(grid, s, cfg, m),
    }
}

/// A factored matrix kept together with the original for refinement.
struct Factored {
    a: BandedMatrix,
    lu: BandedLu,
}

impl Factored {
    fn new(a: BandedMatrix) -> Result<Self, StepError> {
        let lu = a.clone().factor()?;
        Ok(Self { a, lu })
    }

    /// Solves `a x = rhs`, refining once if the relative residual exceeds `tol`.
    /// Returns the solution and the final linear residual.
    fn solve(&self, rhs: &[f64], tol: f64) -> (Vec<f64>, f64) {
        let mut x = rhs.to_vec();
        self.lu.solve_in_place(&mut x);
        let residual = |x: &[f64]| -> Vec<f64> {
            self.a
                .mul_vec(x)
                .iter()
                .zip(rhs)
                .map(|(ax, b)| b - ax)
                .collect()
        };
        let mut r = residual(&x);
        let scale = max_norm(rhs).max(f64::MIN_POSITIVE);
        if max_norm(&r) > tol * scale {
            let mut dx = r.clone();
            self.lu.solve_in_place(&mut dx);
            x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            r = residual(&x);
        }
        (x, max_norm(&r))
    }
}

fn solve_refined(a: BandedMatrix, rhs: &[f64], tol: f64) -> Result<(Vec<f64>, f64), StepError> {
    Ok(Factored::new(a)?.solve(rhs, tol))
}

struct ImplicitSystem<'a> {
    grid: &'a Grid,
    m: &'a ModelFunctions,
    dt: f64,
    psi_old: &'a [f64],
    /// b(ϑ) + λ(ψ) at the old level
    enthalpy_old: Vec<f64>,
}

impl ImplicitSystem<'_> {
    const VARS: usize = 3;

    fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.grid.len();
        let (mut psi, mut mu, mut theta) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for c in 0..n {
            psi[c] = x[3 * c];
            mu[c] = x[3 * c + 1];
            theta[c] = x[3 * c + 2];
        }
        (psi, mu, theta)
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let (psi, mu, theta) = self.split(x);
        let mut lap_psi = vec![0.0; n];
        let mut lap_mu = vec![0.0; n];
        let mut lap_theta = vec![0.0; n];
        self.grid.laplacian_into(&psi, &mut lap_psi);
        self.grid.laplacian_into(&mu, &mut lap_mu);
        self.grid.laplacian_into(&theta, &mut lap_theta);
        let m = self.m;
        let mut r = vec![0.0; 3 * n];
        for c in 0..n {
            let (p, t) = (psi[c], theta[c]);
            r[3 * c] = (p - self.psi_old[c]) / self.dt - lap_mu[c];
            r[3 * c + 1] = mu[c] + lap_psi[c] - m.phi.d1(p) + m.lambda.d1(p) * t;
            r[3 * c + 2] =
                (m.b.b(t) + m.lambda.value(p) - self.enthalpy_old[c]) / self.dt - lap_theta[c];
        }
        r
    }

    fn jacobian(&self, x: &[f64]) -> Result<BandedMatrix, LinalgError> {
        let g = self.grid;
        let m = self.m;
        let band = 3 * g.stencil_bandwidth() + 2;
        let mut j = BandedMatrix::zeros(3 * g.len(), band, band);
        for c in 0..g.len() {
            let (p, t) = (x[3 * c], x[3 * c + 2]);
            let (rp, rm, rt) = (3 * c, 3 * c + 1, 3 * c + 2);
            let (cp, cm, ct) = (3 * c, 3 * c + 1, 3 * c + 2);
            j.add(rp, cp, 1.0 / self.dt)?;
            j.add(rm, cm, 1.0)?;
            j.add(rm, cp, -(m.phi.d2(p) - m.lambda.d2(p) * t))?;
            j.add(rm, ct, m.lambda.d1(p))?;
            j.add(rt, ct, m.b.db(t) / self.dt)?;
            j.add(rt, cp, m.lambda.d1(p) / self.dt)?;
            let mut diag = 0.0;
            for (nb, w) in g.neighbors(c) {
                diag += w;
                j.add(rp, 3 * nb + 1, -w)?;
                j.add(rm, 3 * nb, w)?;
                j.add(rt, 3 * nb + 2, -w)?;
            }
            j.add(rp, cm, diag)?;
            j.add(rm, cp, -diag)?;
            j.add(rt, ct, diag)?;
        }
        Ok(j)
    }
}

fn first_nonpositive(theta: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    theta.enumerate().find(|&(_, v)| !(v > 0.0))
}

fn implicit_step(
    grid: &Grid,
    s: &State,
    cfg: &StepperConfig,
    m: &ModelFunctions,
) -> Result<StepResult, StepError> {
    let n = grid.len();
    let sys = ImplicitSystem {
        grid,
        m,
        dt: cfg.dt,
        psi_old: &s.psi,
        enthalpy_old: (0..n)
            .map(|c| m.b.b(s.theta[c]) + m.lambda.value(s.psi[c]))
            .collect(),
    };
    let mu0 = chemical_potential(grid, s, m);
    let mut x = vec![0.0; ImplicitSystem::VARS * n];
    for c in 0..n {
        x[3 * c] = s.psi[c];
        x[3 * c + 1] = mu0[c];
        x[3 * c + 2] = s.theta[c];
    }
    let mut r = sys.residual(&x);
    let mut norm = max_norm(&r);
    if !norm.is_finite() {
        return Err(StepError::NonFinite);
    }
    let mut iters = 0;
    // the last factored Jacobian, reused for chord steps while they contract fast
    let mut jac: Option<Factored> = None;
    while norm > cfg.newton_tol {
        if iters == cfg.max_newton_iters {
            return Err(StepError::NewtonDiverged {
                iters,
                residual: norm,
            });
        }
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        iters += 1;

        if let Some(f) = &jac {
            let (dx, _) = f.solve(&rhs, cfg.linear_tol);
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            if first_nonpositive((0..n).map(|c| trial[3 * c + 2])).is_none() {
                let rt = sys.residual(&trial);
                let nt = max_norm(&rt);
                if nt <= CHORD_CONTRACTION * norm {
                    x = trial;
                    r = rt;
                    norm = nt;
                    continue;
                }
            }
        }

        let f = Factored::new(sys.jacobian(&x)?)?;
        let (dx, _) = f.solve(&rhs, cfg.linear_tol);
        jac = Some(f);

        let mut alpha = 1.0;
        let mut accepted = None;
        let mut last_bad = None;
        for halving in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + alpha * b).collect();
            if let Some((cell, value)) = first_nonpositive((0..n).map(|c| trial[3 * c + 2])) {
                last_bad = Some(StepError::PositivityLost { cell, value });
            } else {
                let rt = sys.residual(&trial);
                let nt = max_norm(&rt);
                if nt.is_finite() && (nt < norm || halving == MAX_HALVINGS) {
                    accepted = Some((trial, rt, nt));
                    break;
                }
                if !nt.is_finite() {
                    last_bad = Some(StepError::NonFinite);
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((xn, rn, nn)) => {
                x = xn;
                r = rn;
                norm = nn;
            }
            None => return Err(last_bad.unwrap_or(StepError::NonFinite)),
        }
    }

    let (psi, mu, theta) = sys.split(&x);
    finish(grid, psi, mu, theta, cfg.dt, iters, norm)
}

fn finish(
    grid: &Grid,
    psi: Vec<f64>,
    mu: Vec<f64>,
    theta: Vec<f64>,
    dt: f64,
    newton_iters: usize,
    residual_norm: f64,
) -> Result<StepResult, StepError> {
    if let Some((cell, value)) = first_nonpositive(theta.iter().cloned()) {
        return Err(StepError::PositivityLost { cell, value });
    }
    if !(psi.iter().chain(&mu).all(|v| v.is_finite())) {
        return Err(StepError::NonFinite);
    }
    let dissipation_increment = dt * (grid.grad_sq_norm(&mu) + grid.grad_sq_norm(&theta));
    Ok(StepResult {
        state: State {
            psi: Field::from_vec_unchecked(psi),
            theta: Field::from_vec_unchecked(theta),
        },
        mu: Field::from_vec_unchecked(mu),
        dt,
        newton_iters,
        residual_norm,
        dissipation_increment,
    })
}

/// Semi-implicit step. The ψ equation treats the biharmonic part implicitly
/// and Φ'(ψ) − λ'(ψ)ϑ at the old level. The heat equation is linearised in
/// the enthalpy w = b(ϑ) + λ(ψ): w⁺ = w + dt·Δϑ*, with ϑ* solving the
/// linearised implicit equation, and ϑ⁺ = b⁻¹(w⁺ − λ(ψ⁺)). Both updates are
/// Δ_h images, so mass and enthalpy stay conserved.
fn imex_step(
    grid: &Grid,
    s: &State,
    cfg: &StepperConfig,
    m: &ModelFunctions,
) -> Result<StepResult, StepError> {
    let n = grid.len();
    let dt = cfg.dt;
    let bw = grid.stencil_bandwidth();

    // (ψ⁺, μ⁺) interleaved
    let band = 2 * bw + 1;
    let mut a = BandedMatrix::zeros(2 * n, band, band);
    let mut rhs = vec![0.0; 2 * n];
    for c in 0..n {
        let (rp, rm) = (2 * c, 2 * c + 1);
        a.add(rp, rp, 1.0 / dt)?;
        a.add(rm, rm, 1.0)?;
        let mut diag = 0.0;
        for (nb, w) in grid.neighbors(c) {
            diag += w;
            a.add(rp, 2 * nb + 1, -w)?;
            a.add(rm, 2 * nb, w)?;
        }
        a.add(rp, rm, diag)?;
        a.add(rm, rp, -diag)?;
        let (p, t) = (s.psi[c], s.theta[c]);
        rhs[rp] = p / dt;
        rhs[rm] = m.phi.d1(p) - m.lambda.d1(p) * t;
    }
    let (x, res_psi) = solve_refined(a, &rhs, cfg.linear_tol)?;
    let psi: Vec<f64> = (0..n).map(|c| x[2 * c]).collect();
    let mu: Vec<f64> = (0..n).map(|c| x[2 * c + 1]).collect();

    // linearised heat equation for ϑ*
    let mut h = BandedMatrix::zeros(n, bw, bw);
    let mut rhs = vec![0.0; n];
    for c in 0..n {
        let t = s.theta[c];
        let db = m.b.db(t);
        let mut diag = 0.0;
        for (nb, w) in grid.neighbors(c) {
            diag += w;
            h.add(c, nb, -w)?;
        }
        h.add(c, c, db / dt + diag)?;
        rhs[c] = db * t / dt - (m.lambda.value(psi[c]) - m.lambda.value(s.psi[c])) / dt;
    }
    let (theta_star, res_theta) = solve_refined(h, &rhs, cfg.linear_tol)?;
    let mut lap = vec![0.0; n];
    grid.laplacian_into(&theta_star, &mut lap);
    let mut theta = vec![0.0; n];
    for c in 0..n {
        let w_new = m.b.b(s.theta[c]) + m.lambda.value(s.psi[c]) + dt * lap[c];
        theta[c] =
            m.b.inverse(w_new - m.lambda.value(psi[c]))
                .ok_or(StepError::PositivityLost {
                    cell: c,
                    value: theta_star[c],
                })?;
    }
    finish(grid, psi, mu, theta, dt, 0, res_psi.max(res_theta))
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("step failed at t = {time}: {source}")]
pub struct RunError {
    pub time: f64,
    pub source: StepError,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Stop early once the ledger's convergence detector fires.
    pub stop_on: Option<ConvergenceCriterion>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub state: State,
    pub ledger: Ledger,
    pub t_final: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Integrates to `t_end`, recording a ledger row per accepted step.
pub fn run(
    grid: &Grid,
    s0: &State,
    t_end: f64,
    cfg: &StepperConfig,
    m: &ModelFunctions,
    observer: impl FnMut(f64, &StepResult),
) -> Result<RunSummary, RunError> {
    run_with(grid, s0, t_end, cfg, m, &RunOptions::default(), observer)
}

pub fn run_with(
    grid: &Grid,
    s0: &State,
    t_end: f64,
    cfg: &StepperConfig,
    m: &ModelFunctions,
    opts: &RunOptions,
    mut observer: impl FnMut(f64, &StepResult),
) -> Result<RunSummary, RunError> {
    cfg.validate()
        .map_err(|source| RunError { time: 0.0, source })?;
    let mut ledger = Ledger::new(grid, s0, m);
    let mut state = s0.clone();
    let mut t = 0.0;
    let mut steps = 0;
    let mut converged = opts
        .stop_on
        .is_some_and(|c| convergence_detector(&ledger, &c).fired);
    if !(t_end > 0.0) || converged {
        return Ok(RunSummary {
            state,
            ledger,
            t_final: t,
            steps,
            converged,
        });
    }
    let n_steps = ((t_end / cfg.dt) - 1e-9).ceil().max(1.0) as usize;
    for k in 1..=n_steps {
        let t_next = if k == n_steps {
            t_end
        } else {
            k as f64 * cfg.dt
        };
        let results = advance(grid, &state, t_next - t, cfg, m, cfg.max_dt_halvings)
            .map_err(|source| RunError { time: t, source })?;
        for r in results {
            t += r.dt;
            if k == n_steps {
                t = t.min(t_end);
            }
            ledger
                .record(grid, t, &r, m)
                .expect("run produces increasing times");
            observer(t, &r);
            state = r.state;
            steps += 1;
        }
        t = t_next;
        if let Some(c) = &opts.stop_on {
            if convergence_detector(&ledger, c).fired {
                converged = true;
                break;
            }
        }
    }
    Ok(RunSummary {
        state,
        ledger,
        t_final: t,
        steps,
        converged,
    })
}

/// One macro step of length `dt`, split in halves when Newton fails.
fn advance(
    grid: &Grid,
    s: &State,
    dt: f64,
    cfg: &StepperConfig,
    m: &ModelFunctions,
    halvings_left: usize,
) -> Result<Vec<StepResult>, StepError> {
    let sub = StepperConfig { dt, ..cfg.clone() };
    match step(grid, s, &sub, m) {
        Ok(r) => Ok(vec![r]),
        Err(StepError::NewtonDiverged { .. }) if halvings_left > 0 => {
            let mut first = advance(grid, s, 0.5 * dt, cfg, m, halvings_left - 1)?;
            let mid = first.last().expect("nonempty").state.clone();
            first.extend(advance(grid, &mid, 0.5 * dt, cfg, m, halvings_left - 1)?);
            Ok(first)
        }
        Err(e) => Err(e),
    }
}
