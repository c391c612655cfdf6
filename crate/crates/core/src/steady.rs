//! Constrained stationary problem
//!
//! ```text
//! −Δψ∞ + Φ'(ψ∞) − λ'(ψ∞)ϑ∞ = μ∞,   ∂_νψ∞ = 0,
//! mean(ψ∞) = m0,   ∫(λ(ψ∞) + b(ϑ∞)) = h0,
//! ```
//!
//! with constant ϑ∞ and μ∞, solved by Newton on the bordered system for
//! (ψ∞, ϑ∞, μ∞).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::constitutive::ModelFunctions;
use crate::grid::{Field, Grid};
use crate::linalg::{max_norm, BandedMatrix, LinalgError};
use crate::state::{lagrangian_hessian_action, Direction, State};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteadyError {
    #[error("Newton did not converge: residual {residual:e} after {iters} iterations")]
    NewtonDiverged { iters: usize, residual: f64 },
    #[error("no positive theta satisfies b(theta) = {target} near the guess")]
    ConstraintInfeasible { target: f64 },
    #[error("guess does not match the grid or has theta <= 0")]
    InvalidGuess,
    #[error("singular bordered Jacobian")]
    Singular,
}

#[derive(Clone, Debug)]
pub struct SteadyProblem {
    pub grid: Grid,
    pub model: ModelFunctions,
    /// prescribed mean of ψ
    pub m0: f64,
    /// prescribed ∫(λ(ψ) + b(ϑ))
    pub h0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SteadyState {
    pub psi_inf: Field,
    pub theta_inf: f64,
    pub mu_inf: f64,
    pub residual_norm: f64,
}

impl SteadyState {
    /// Constant guess ψ ≡ m0.
    pub fn constant_guess(grid: &Grid, m0: f64, theta: f64, mu: f64) -> Self {
        Self {
            psi_inf: Field::constant(grid, m0),
            theta_inf: theta,
            mu_inf: mu,
            residual_norm: f64::INFINITY,
        }
    }

    pub fn as_state(&self, grid: &Grid) -> State {
        State {
            psi: self.psi_inf.clone(),
            theta: Field::constant(grid, self.theta_inf),
        }
    }

    /// |μ∞ − mean(Φ'(ψ∞) − λ'(ψ∞)ϑ∞)|
    pub fn mean_value_gap(&self, grid: &Grid, m: &ModelFunctions) -> f64 {
        let avg: Vec<f64> = self
            .psi_inf
            .iter()
            .map(|&p| m.phi.d1(p) - m.lambda.d1(p) * self.theta_inf)
            .collect();
        (self.mu_inf - grid.mean(&avg)).abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyOptions {
    /// Max-norm tolerance on all residuals (cell equations and constraints).
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iters: 60,
        }
    }
}

struct Bordered<'a> {
    p: &'a SteadyProblem,
}

impl Bordered<'_> {
    fn residual(&self, psi: &[f64], theta: f64, mu: f64) -> Vec<f64> {
        let g = &self.p.grid;
        let m = &self.p.model;
        let n = g.len();
        let mut r = vec![0.0; n + 2];
        g.laplacian_into(psi, &mut r[..n]);
        for c in 0..n {
            r[c] = -r[c] + m.phi.d1(psi[c]) - m.lambda.d1(psi[c]) * theta - mu;
        }
        r[n] = g.mean(psi) - self.p.m0;
        let lam: Vec<f64> = psi.iter().map(|&p| m.lambda.value(p)).collect();
        r[n + 1] = g.mean(&lam) + m.b.b(theta) - self.p.h0 / g.volume();
        r
    }

    /// Newton direction for the bordered Jacobian
    /// ```text
    /// [ A   −λ'  −1 ] [δψ]   [−G ]
    /// [ wᵀ   0    0 ] [δϑ] = [−c₁]
    /// [ wλ' b'    0 ] [δμ]   [−c₂]
    /// ```
    /// with A = −Δ_h + diag(Φ'' − λ''ϑ) and w = 1/N.
    fn direction(&self, psi: &[f64], theta: f64, r: &[f64]) -> Result<Vec<f64>, SteadyError> {
        match self.schur_direction(psi, theta, r) {
            Ok(d) => Ok(d),
            Err(_) => self.dense_direction(psi, theta, r),
        }
    }

    fn schur_direction(&self, psi: &[f64], theta: f64, r: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let g = &self.p.grid;
        let m = &self.p.model;
        let n = g.len();
        let bw = g.stencil_bandwidth();
        let mut a = BandedMatrix::zeros(n, bw, bw);
        for c in 0..n {
            let mut diag = m.phi.d2(psi[c]) - m.lambda.d2(psi[c]) * theta;
            for (nb, w) in g.neighbors(c) {
                diag += w;
                a.add(c, nb, -w)?;
            }
            a.add(c, c, diag)?;
        }
        let lu = a.factor()?;
        let w = 1.0 / n as f64;
        // A⁻¹ applied to f = −G and to the two border columns
        let mut x_f: Vec<f64> = r[..n].iter().map(|v| -v).collect();
        lu.solve_in_place(&mut x_f);
        let mut x_u: Vec<f64> = psi.iter().map(|&p| -m.lambda.d1(p)).collect();
        lu.solve_in_place(&mut x_u);
        let mut x_v = vec![-1.0; n];
        lu.solve_in_place(&mut x_v);

        let dlam: Vec<f64> = psi.iter().map(|&p| m.lambda.d1(p) * w).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let sum_w = |a: &[f64]| a.iter().sum::<f64>() * w;
        // S = D − C A⁻¹ B
        let db = m.b.db(theta);
        let s = [
            [-sum_w(&x_u), -sum_w(&x_v)],
            [db - dot(&dlam, &x_u), -dot(&dlam, &x_v)],
        ];
        let rhs = [-r[n] - sum_w(&x_f), -r[n + 1] - dot(&dlam, &x_f)];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let scale = s.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(det.abs() > 1e-13 * scale * scale) {
            return Err(LinalgError::Singular(n));
        }
        let d_theta = (rhs[0] * s[1][1] - s[0][1] * rhs[1]) / det;
        let d_mu = (s[0][0] * rhs[1] - s[1][0] * rhs[0]) / det;
        let mut d: Vec<f64> = (0..n)
            .map(|c| x_f[c] - x_u[c] * d_theta - x_v[c] * d_mu)
            .collect();
        d.push(d_theta);
        d.push(d_mu);
        Ok(d)
    }

    fn dense_direction(&self, psi: &[f64], theta: f64, r: &[f64]) -> Result<Vec<f64>, SteadyError> {
        let g = &self.p.grid;
        let m = &self.p.model;
        let n = g.len();
        let w = 1.0 / n as f64;
        let mut j = DMatrix::<f64>::zeros(n + 2, n + 2);
        for c in 0..n {
            let mut diag = m.phi.d2(psi[c]) - m.lambda.d2(psi[c]) * theta;
            g.for_each_neighbor(c, |nb, wt| {
                diag += wt;
                j[(c, nb)] -= wt;
            });
            j[(c, c)] += diag;
            j[(c, n)] = -m.lambda.d1(psi[c]);
            j[(c, n + 1)] = -1.0;
            j[(n, c)] = w;
            j[(n + 1, c)] = m.lambda.d1(psi[c]) * w;
        }
        j[(n + 1, n)] = m.b.db(theta);
        let rhs = DVector::from_iterator(n + 2, r.iter().map(|v| -v));
        j.lu()
            .solve(&rhs)
            .map(|d| d.iter().cloned().collect())
            .ok_or(SteadyError::Singular)
    }
}

pub fn solve_steady(
    p: &SteadyProblem,
    guess: &SteadyState,
    opts: &SteadyOptions,
) -> Result<SteadyState, SteadyError> {
    let g = &p.grid;
    let m = &p.model;
    let n = g.len();
    if guess.psi_inf.len() != n || !(guess.theta_inf > 0.0) {
        return Err(SteadyError::InvalidGuess);
    }
    let lam: Vec<f64> = guess.psi_inf.iter().map(|&v| m.lambda.value(v)).collect();
    let target = p.h0 / g.volume() - g.mean(&lam);
    if m.b.inverse(target).is_none() {
        return Err(SteadyError::ConstraintInfeasible { target });
    }

    let sys = Bordered { p };
    let mut psi = guess.psi_inf.to_vec();
    let mut theta = guess.theta_inf;
    let mut mu = guess.mu_inf;
    let mut r = sys.residual(&psi, theta, mu);
    let mut norm = max_norm(&r);
    let mut iters = 0;
    // a couple of extra sweeps after reaching tol push the residual to round-off
    let mut polish = 2;
    loop {
        if norm <= opts.tol {
            if polish == 0 {
                break;
            }
            polish -= 1;
        }
        if iters == opts.max_iters {
            if norm <= opts.tol {
                break;
            }
            return Err(SteadyError::NewtonDiverged {
                iters,
                residual: norm,
            });
        }
        let d = sys.direction(&psi, theta, &r)?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=8 {
            let t_trial = theta + alpha * d[n];
            if t_trial > 0.0 {
                let p_trial: Vec<f64> = psi.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
                let mu_trial = mu + alpha * d[n + 1];
                let rt = sys.residual(&p_trial, t_trial, mu_trial);
                let nt = max_norm(&rt);
                if nt.is_finite() && nt < norm {
                    psi = p_trial;
                    theta = t_trial;
                    mu = mu_trial;
                    r = rt;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        iters += 1;
        if !accepted {
            if norm <= opts.tol {
                break;
            }
            if !(theta + d[n] / 256.0 > 0.0) {
                return Err(SteadyError::ConstraintInfeasible { target });
            }
            return Err(SteadyError::NewtonDiverged {
                iters,
                residual: norm,
            });
        }
    }
    Ok(SteadyState {
        psi_inf: Field::new(g, psi).map_err(|_| SteadyError::InvalidGuess)?,
        theta_inf: theta,
        mu_inf: mu,
        residual_norm: norm,
    })
}

/// Probe directions (h, 0) and (0, k) built from the lowest mean-free cosine
/// modes of the grid, with total wavenumber up to `max_mode`.
fn probe_modes(grid: &Grid, max_mode: usize) -> Vec<[usize; 2]> {
    let n = grid.cells_per_axis();
    let mut modes = Vec::new();
    if grid.dim() == 1 {
        for k in 1..n[0].min(max_mode.saturating_add(1)) {
            modes.push([k, 0]);
        }
    } else {
        for k0 in 0..n[0] {
            for k1 in 0..n[1] {
                if (1..=max_mode).contains(&(k0 + k1)) {
                    modes.push([k0, k1]);
                }
            }
        }
    }
    modes
}

fn rayleigh(grid: &Grid, state: &State, m: &ModelFunctions, h: &[f64], k: &[f64]) -> f64 {
    let d = Direction { h, k };
    lagrangian_hessian_action(grid, state, m, d, d) / (grid.inner(h, h) + grid.inner(k, k))
}

/// Smallest Rayleigh quotient of the L'' quadratic form over a finite set of
/// mean-free probe directions. Negative values flag a descent direction; this
/// is a heuristic, not a stability proof.
pub fn stability_indicator(
    grid: &Grid,
    s: &SteadyState,
    m: &ModelFunctions,
    max_mode: usize,
) -> f64 {
    let state = s.as_state(grid);
    let zero = vec![0.0; grid.len()];
    probe_modes(grid, max_mode)
        .into_iter()
        .flat_map(|k| {
            let mode = grid.cosine_mode(k);
            [
                rayleigh(grid, &state, m, &mode, &zero),
                rayleigh(grid, &state, m, &zero, &mode),
            ]
        })
        .fold(f64::INFINITY, f64::min)
}

/// Largest grid size for which the full constrained eigensolve is offered.
pub const EIGEN_MAX_CELLS: usize = 256;

/// Smallest eigenvalue of L'' restricted to mean-free (h, k), via a dense
/// eigensolve in the orthogonal cosine basis. `None` above `EIGEN_MAX_CELLS`.
pub fn hessian_min_eigenvalue(grid: &Grid, s: &SteadyState, m: &ModelFunctions) -> Option<f64> {
    if grid.len() > EIGEN_MAX_CELLS {
        return None;
    }
    let state = s.as_state(grid);
    let n = grid.len();
    let zero = vec![0.0; n];
    let modes = probe_modes(grid, usize::MAX);
    let basis: Vec<Vec<f64>> = modes
        .iter()
        .map(|&k| {
            let f = grid.cosine_mode(k);
            let norm = grid.inner(&f, &f).sqrt();
            f.iter().map(|v| v / norm).collect()
        })
        .collect();
    let dirs: Vec<(&[f64], &[f64])> = basis
        .iter()
        .map(|b| (b.as_slice(), zero.as_slice()))
        .chain(basis.iter().map(|b| (zero.as_slice(), b.as_slice())))
        .collect();
    let size = dirs.len();
    let mut q = DMatrix::<f64>::zeros(size, size);
    for i in 0..size {
        for j in i..size {
            let v = lagrangian_hessian_action(
                grid,
                &state,
                m,
                Direction {
                    h: dirs[i].0,
                    k: dirs[i].1,
                },
                Direction {
                    h: dirs[j].0,
                    k: dirs[j].1,
                },
            );
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
    SymmetricEigen::new(q)
        .eigenvalues
        .iter()
        .cloned()
        .reduce(f64::min)
}
