//! The simulated pair (ψ, ϑ), the chemical potential, and the functionals
//! E, F and L = E − ϑ̄·F with their first and second variations.
//!
//! Variations are returned as Riesz representatives in the quadrature inner
//! product: ⟨L', (h, k)⟩ = ∫ d_psi·h + ∫ d_theta·k.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::ModelFunctions;
use crate::grid::{Field, Grid, GridError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("theta must be positive, found {value} at cell {index}")]
    NonPositiveTheta { index: usize, value: f64 },
}

/// Order parameter ψ and inverse temperature ϑ = 1/θ on one grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub psi: Field,
    pub theta: Field,
}

impl State {
    pub fn new(grid: &Grid, psi: Field, theta: Field) -> Result<Self, StateError> {
        let psi = Field::new(grid, psi.into_vec())?;
        let theta = Field::new(grid, theta.into_vec())?;
        if let Some((index, &value)) = theta.iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(StateError::NonPositiveTheta { index, value });
        }
        Ok(Self { psi, theta })
    }

    pub fn constant(grid: &Grid, psi: f64, theta: f64) -> Result<Self, StateError> {
        Self::new(
            grid,
            Field::constant(grid, psi),
            Field::constant(grid, theta),
        )
    }

    /// max(max ϑ, 1/min ϑ)
    pub fn kappa(&self) -> f64 {
        self.theta.max().max(1.0 / self.theta.min())
    }
}

/// Riesz representative of a first variation.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalGradient {
    pub d_psi: Field,
    pub d_theta: Field,
}

impl FunctionalGradient {
    /// ⟨gradient, (h, k)⟩ in the quadrature inner product.
    pub fn apply(&self, grid: &Grid, h: &[f64], k: &[f64]) -> f64 {
        grid.inner(&self.d_psi, h) + grid.inner(&self.d_theta, k)
    }

    /// Quadrature norm after removing the mean of the ψ component; the mean-free
    /// projection matches the admissible ψ directions.
    pub fn projected_norm(&self, grid: &Grid) -> f64 {
        let m = grid.mean(&self.d_psi);
        let centred: Vec<f64> = self.d_psi.iter().map(|v| v - m).collect();
        (grid.inner(&centred, &centred) + grid.inner(&self.d_theta, &self.d_theta)).sqrt()
    }
}

/// μ = −Δψ + Φ'(ψ) − λ'(ψ)ϑ.
pub fn chemical_potential(grid: &Grid, s: &State, m: &ModelFunctions) -> Field {
    let mut mu = vec![0.0; grid.len()];
    chemical_potential_into(grid, &s.psi, &s.theta, m, &mut mu);
    Field::from_vec_unchecked(mu)
}

pub(crate) fn chemical_potential_into(
    grid: &Grid,
    psi: &[f64],
    theta: &[f64],
    m: &ModelFunctions,
    out: &mut [f64],
) {
    grid.laplacian_into(psi, out);
    for ((o, &p), &t) in out.iter_mut().zip(psi).zip(theta) {
        *o = -*o + m.phi.d1(p) - m.lambda.d1(p) * t;
    }
}

/// E = ½|∇ψ|² + ∫Φ(ψ) + ∫β(ϑ).
pub fn energy(grid: &Grid, s: &State, m: &ModelFunctions) -> f64 {
    let bulk: f64 = s.psi.iter().map(|&p| m.phi.value(p)).sum::<f64>()
        + s.theta.iter().map(|&t| m.b.beta(t)).sum::<f64>();
    0.5 * grid.grad_sq_norm(&s.psi) + bulk * grid.cell_volume()
}

/// F = ∫(λ(ψ) + b(ϑ)), the conserved enthalpy.
pub fn conserved_f(grid: &Grid, s: &State, m: &ModelFunctions) -> f64 {
    s.psi
        .iter()
        .zip(s.theta.iter())
        .map(|(&p, &t)| m.lambda.value(p) + m.b.b(t))
        .sum::<f64>()
        * grid.cell_volume()
}

/// L = E − ϑ̄·F.
pub fn lagrangian(grid: &Grid, s: &State, m: &ModelFunctions) -> f64 {
    lagrangian_shifted(grid, s, m, 0.0)
}

/// L with λ shifted by a constant so that F vanishes at `enthalpy_ref`:
/// E − ϑ̄·(F − enthalpy_ref). On a trajectory with F ≡ enthalpy_ref this is E.
pub fn lagrangian_shifted(grid: &Grid, s: &State, m: &ModelFunctions, enthalpy_ref: f64) -> f64 {
    energy(grid, s, m) - grid.mean(&s.theta) * (conserved_f(grid, s, m) - enthalpy_ref)
}

/// Riesz representative of L':
/// d_psi = −Δψ + Φ'(ψ) − ϑ̄λ'(ψ), d_theta = β'(ϑ) − F/|Ω| − ϑ̄b'(ϑ).
pub fn lagrangian_gradient(grid: &Grid, s: &State, m: &ModelFunctions) -> FunctionalGradient {
    lagrangian_gradient_shifted(grid, s, m, 0.0)
}

pub fn lagrangian_gradient_shifted(
    grid: &Grid,
    s: &State,
    m: &ModelFunctions,
    enthalpy_ref: f64,
) -> FunctionalGradient {
    let theta_bar = grid.mean(&s.theta);
    let f_per_volume = (conserved_f(grid, s, m) - enthalpy_ref) / grid.volume();
    let mut d_psi = vec![0.0; grid.len()];
    grid.laplacian_into(&s.psi, &mut d_psi);
    for (d, &p) in d_psi.iter_mut().zip(s.psi.iter()) {
        *d = -*d + m.phi.d1(p) - theta_bar * m.lambda.d1(p);
    }
    let d_theta = s
        .theta
        .iter()
        .map(|&t| m.b.beta_prime(t) - f_per_volume - theta_bar * m.b.db(t))
        .collect();
    FunctionalGradient {
        d_psi: Field::from_vec_unchecked(d_psi),
        d_theta: Field::from_vec_unchecked(d_theta),
    }
}

/// A variation direction (h, k).
#[derive(Clone, Copy, Debug)]
pub struct Direction<'a> {
    pub h: &'a [f64],
    pub k: &'a [f64],
}

/// ⟨F', (h, k)⟩ = ∫λ'(ψ)h + ∫b'(ϑ)k.
fn f_first(grid: &Grid, s: &State, m: &ModelFunctions, d: Direction) -> f64 {
    let sum: f64 = (0..grid.len())
        .map(|i| m.lambda.d1(s.psi[i]) * d.h[i] + m.b.db(s.theta[i]) * d.k[i])
        .sum();
    sum * grid.cell_volume()
}

/// ⟨L''(h₁,k₁), (h₂,k₂)⟩ = ⟨E''⟩ − k̄₁⟨F',(h₂,k₂)⟩ − k̄₂⟨F',(h₁,k₁)⟩ − ϑ̄⟨F''⟩.
pub fn lagrangian_hessian_action(
    grid: &Grid,
    s: &State,
    m: &ModelFunctions,
    first: Direction,
    second: Direction,
) -> f64 {
    let theta_bar = grid.mean(&s.theta);
    let pointwise: f64 = (0..grid.len())
        .map(|i| {
            let (p, t) = (s.psi[i], s.theta[i]);
            let hh = first.h[i] * second.h[i];
            let kk = first.k[i] * second.k[i];
            (m.phi.d2(p) - theta_bar * m.lambda.d2(p)) * hh
                + (m.b.beta_second(t) - theta_bar * m.b.d2b(t)) * kk
        })
        .sum::<f64>()
        * grid.cell_volume();
    let e_grad = grid.grad_inner(first.h, second.h);
    let coupling = grid.mean(first.k) * f_first(grid, s, m, second)
        + grid.mean(second.k) * f_first(grid, s, m, first);
    e_grad + pointwise - coupling
}
