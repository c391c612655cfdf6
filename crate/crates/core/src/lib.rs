//! Simulator and steady-state solver for the conserved Penrose-Fife
//! phase-field system
//!
//! ```text
//! ∂ψ/∂t = Δμ,               μ = −Δψ + Φ'(ψ) − λ'(ψ)ϑ,
//! ∂(b(ϑ) + λ(ψ))/∂t = Δϑ,   ∂_νμ = ∂_νψ = ∂_νϑ = 0,
//! ```
//!
//! where ψ is the order parameter and ϑ = 1/θ the inverse temperature.
//! Besides integrating the flow the crate checks its structure: conservation
//! of mean ψ and of the enthalpy ∫(b(ϑ) + λ(ψ)), the energy-dissipation
//! identity, the first and second variations of the Lagrangian
//! L = E − ϑ̄·F, and convergence to constant-potential equilibria.

// `!(x > 0.0)` is used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod constitutive;
pub mod diagnostics;
pub mod exec;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod state;
pub mod steady;
pub mod stepper;
pub mod verify;

pub use constitutive::{make_default_model, ModelConfig, ModelFunctions};
pub use diagnostics::{convergence_detector, decay_fit, ConvergenceCriterion, Ledger, LedgerRow};
pub use exec::Execution;
pub use grid::{Field, Grid};
pub use io::{RunConfig, Snapshot};
pub use state::State;
pub use steady::{solve_steady, SteadyOptions, SteadyProblem, SteadyState};
pub use stepper::{run, run_with, step, RunOptions, Scheme, StepResult, StepperConfig};
pub use verify::{verify, VerifyOptions, VerifyReport};
