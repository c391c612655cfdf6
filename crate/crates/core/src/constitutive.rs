//! Model functions: the bulk potential Φ, the coupling λ and the thermal law
//! b, with the derived β (β' = s·b') and a = 1/b'.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("coupling λ must be a polynomial of degree at most 2, got {0} coefficients")]
    CouplingDegree(usize),
    #[error("polynomial potential must have even degree 2 or 4 with positive leading coefficient")]
    PotentialShape,
    #[error("polynomial potential needs `phi_coefficients`")]
    MissingCoefficients,
    #[error("empty or invalid {0} range")]
    EmptyRange(&'static str),
    #[error("temperature range must lie in (0, ∞)")]
    NonPositiveTheta,
}

/// A scalar function on ℝ with three derivatives.
pub trait Potential: Send + Sync + fmt::Debug {
    fn value(&self, s: f64) -> f64;
    fn d1(&self, s: f64) -> f64;
    fn d2(&self, s: f64) -> f64;
    fn d3(&self, s: f64) -> f64;
}

/// The thermal law b on (0, ∞) together with the antiderivative β of s·b'(s).
pub trait Thermal: Send + Sync + fmt::Debug {
    fn b(&self, s: f64) -> f64;
    fn db(&self, s: f64) -> f64;
    fn d2b(&self, s: f64) -> f64;
    /// β with β' = s·b', normalised by β(1) = 0.
    fn beta(&self, s: f64) -> f64;

    fn beta_prime(&self, s: f64) -> f64 {
        s * self.db(s)
    }

    fn beta_second(&self, s: f64) -> f64 {
        self.db(s) + s * self.d2b(s)
    }

    fn a(&self, s: f64) -> f64 {
        1.0 / self.db(s)
    }

    /// Solves b(s) = y for s > 0, if a root exists.
    fn inverse(&self, y: f64) -> Option<f64> {
        bisect_increasing(|s| self.b(s), y)
    }
}

/// Root of an increasing function on (0, ∞) by bracketing and bisection.
fn bisect_increasing(f: impl Fn(f64) -> f64, y: f64) -> Option<f64> {
    if !y.is_finite() {
        return None;
    }
    let (mut lo, mut hi) = (1.0, 1.0);
    let mut tries = 0;
    while f(lo) > y {
        lo *= 0.5;
        tries += 1;
        if tries > 200 || lo == 0.0 {
            return None;
        }
    }
    tries = 0;
    while f(hi) < y {
        hi *= 2.0;
        tries += 1;
        if tries > 200 || !hi.is_finite() {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Φ(s) = (s² − 1)².
#[derive(Clone, Copy, Debug, Default)]
pub struct DoubleWell;

impl Potential for DoubleWell {
    fn value(&self, s: f64) -> f64 {
        let q = s * s - 1.0;
        q * q
    }
    fn d1(&self, s: f64) -> f64 {
        4.0 * s * (s * s - 1.0)
    }
    fn d2(&self, s: f64) -> f64 {
        12.0 * s * s - 4.0
    }
    fn d3(&self, s: f64) -> f64 {
        24.0 * s
    }
}

/// Σ cₖ sᵏ with coefficients in increasing degree.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Degree ignoring trailing zero coefficients.
    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    fn derivative_eval(&self, order: usize, s: f64) -> f64 {
        // Horner on the order-th derivative coefficients
        let mut acc = 0.0;
        for k in (order..self.coeffs.len()).rev() {
            let falling: f64 = (k + 1 - order..=k).map(|j| j as f64).product();
            acc = acc * s + self.coeffs[k] * falling;
        }
        acc
    }
}

impl Potential for Polynomial {
    fn value(&self, s: f64) -> f64 {
        self.derivative_eval(0, s)
    }
    fn d1(&self, s: f64) -> f64 {
        self.derivative_eval(1, s)
    }
    fn d2(&self, s: f64) -> f64 {
        self.derivative_eval(2, s)
    }
    fn d3(&self, s: f64) -> f64 {
        self.derivative_eval(3, s)
    }
}

/// b(s) = −1/s, the law for ϑ = 1/θ with internal energy θ − λ(ψ).
#[derive(Clone, Copy, Debug, Default)]
pub struct InverseLaw;

impl Thermal for InverseLaw {
    fn b(&self, s: f64) -> f64 {
        -1.0 / s
    }
    fn db(&self, s: f64) -> f64 {
        1.0 / (s * s)
    }
    fn d2b(&self, s: f64) -> f64 {
        -2.0 / (s * s * s)
    }
    fn beta(&self, s: f64) -> f64 {
        s.ln()
    }
    fn beta_prime(&self, s: f64) -> f64 {
        1.0 / s
    }
    fn beta_second(&self, s: f64) -> f64 {
        -1.0 / (s * s)
    }
    fn a(&self, s: f64) -> f64 {
        s * s
    }
    fn inverse(&self, y: f64) -> Option<f64> {
        (y < 0.0 && y.is_finite()).then(|| -1.0 / y)
    }
}

/// b(s) = ln s, so β(s) = s − 1.
#[derive(Clone, Copy, Debug, Default)]
pub struct LogLaw;

impl Thermal for LogLaw {
    fn b(&self, s: f64) -> f64 {
        s.ln()
    }
    fn db(&self, s: f64) -> f64 {
        1.0 / s
    }
    fn d2b(&self, s: f64) -> f64 {
        -1.0 / (s * s)
    }
    fn beta(&self, s: f64) -> f64 {
        s - 1.0
    }
    fn inverse(&self, y: f64) -> Option<f64> {
        let s = y.exp();
        (s > 0.0 && s.is_finite()).then_some(s)
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Potential assembled from user closures.
#[derive(Clone)]
pub struct CustomPotential {
    pub name: String,
    pub value: ScalarFn,
    pub d1: ScalarFn,
    pub d2: ScalarFn,
    pub d3: ScalarFn,
}

impl fmt::Debug for CustomPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomPotential({})", self.name)
    }
}

impl Potential for CustomPotential {
    fn value(&self, s: f64) -> f64 {
        (self.value)(s)
    }
    fn d1(&self, s: f64) -> f64 {
        (self.d1)(s)
    }
    fn d2(&self, s: f64) -> f64 {
        (self.d2)(s)
    }
    fn d3(&self, s: f64) -> f64 {
        (self.d3)(s)
    }
}

/// Thermal law assembled from user closures; β must be supplied as well.
#[derive(Clone)]
pub struct CustomThermal {
    pub name: String,
    pub b: ScalarFn,
    pub db: ScalarFn,
    pub d2b: ScalarFn,
    pub beta: ScalarFn,
}

impl fmt::Debug for CustomThermal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomThermal({})", self.name)
    }
}

impl Thermal for CustomThermal {
    fn b(&self, s: f64) -> f64 {
        (self.b)(s)
    }
    fn db(&self, s: f64) -> f64 {
        (self.db)(s)
    }
    fn d2b(&self, s: f64) -> f64 {
        (self.d2b)(s)
    }
    fn beta(&self, s: f64) -> f64 {
        (self.beta)(s)
    }
}

/// The constitutive triple (Φ, λ, b).
#[derive(Clone, Debug)]
pub struct ModelFunctions {
    pub phi: Arc<dyn Potential>,
    pub lambda: Arc<dyn Potential>,
    pub b: Arc<dyn Thermal>,
}

impl ModelFunctions {
    pub fn new(
        phi: impl Potential + 'static,
        lambda: impl Potential + 'static,
        b: impl Thermal + 'static,
    ) -> Self {
        Self {
            phi: Arc::new(phi),
            lambda: Arc::new(lambda),
            b: Arc::new(b),
        }
    }
}

/// Double well, λ(s) = λ₀ + λ₁s + λ₂s², b(s) = −1/s.
pub fn make_default_model(lambda: [f64; 3]) -> ModelFunctions {
    ModelFunctions::new(DoubleWell, Polynomial::new(lambda.to_vec()), InverseLaw)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    #[default]
    DoubleWell,
    Polynomial,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermalKind {
    /// b(s) = −1/s
    #[default]
    Inverse,
    /// b(s) = ln s
    Log,
}

/// Model selection as it appears in a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub phi: PotentialKind,
    pub phi_coefficients: Option<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub b: ThermalKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            phi: PotentialKind::DoubleWell,
            phi_coefficients: None,
            lambda: vec![0.0, 0.0, 1.0],
            b: ThermalKind::Inverse,
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelFunctions, ModelError> {
        let lambda = Polynomial::new(self.lambda.clone());
        if self.lambda.is_empty() || lambda.degree() > 2 {
            return Err(ModelError::CouplingDegree(self.lambda.len()));
        }
        let phi: Arc<dyn Potential> = match self.phi {
            PotentialKind::DoubleWell => Arc::new(DoubleWell),
            PotentialKind::Polynomial => {
                let c = self
                    .phi_coefficients
                    .clone()
                    .ok_or(ModelError::MissingCoefficients)?;
                let p = Polynomial::new(c);
                // bounded below with Φ''' growing slower than |s|³
                let deg = p.degree();
                if !(deg == 2 || deg == 4) || p.coefficients()[deg] <= 0.0 {
                    return Err(ModelError::PotentialShape);
                }
                Arc::new(p)
            }
        };
        let b: Arc<dyn Thermal> = match self.b {
            ThermalKind::Inverse => Arc::new(InverseLaw),
            ThermalKind::Log => Arc::new(LogLaw),
        };
        Ok(ModelFunctions {
            phi,
            lambda: Arc::new(lambda),
            b,
        })
    }
}

/// Outcome of one sampled hypothesis check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Smallest margin found (negative means violated).
    pub worst_margin: f64,
    /// Sample point where the worst margin occurred.
    pub witness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub checks: Vec<CheckOutcome>,
    /// max(max b', 1/min b') over the temperature range.
    pub sigma: f64,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// User-side constants of the lower-bound hypothesis on Φ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowerBoundParams {
    pub eta: f64,
    pub c1: f64,
    /// Smallest nontrivial Neumann eigenvalue of the domain.
    pub lambda1: f64,
}

const HYPOTHESIS_SAMPLES: usize = 2001;

fn samples(lo: f64, hi: f64) -> impl Iterator<Item = f64> {
    let n = HYPOTHESIS_SAMPLES;
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

fn worst<F: Fn(f64) -> f64>(lo: f64, hi: f64, f: F) -> (f64, f64) {
    samples(lo, hi)
        .map(|s| (f(s), s))
        .fold((f64::INFINITY, lo), |a, b| if b.0 < a.0 { b } else { a })
}

fn sup_abs<F: Fn(f64) -> f64>(lo: f64, hi: f64, f: F) -> (f64, f64) {
    samples(lo, hi)
        .map(|s| (f(s).abs(), s))
        .fold((0.0, lo), |a, b| if b.0 > a.0 { b } else { a })
}

/// Sampled check of the structural hypotheses on (Φ, λ, b).
///
/// Boundedness of λ'' and λ''' is judged by sampling on the ψ range widened
/// by factors 1, 2, 4 and 8 about its midpoint; any growth flags a failure.
pub fn check_hypotheses(
    m: &ModelFunctions,
    psi_range: (f64, f64),
    theta_range: (f64, f64),
    lower: LowerBoundParams,
) -> Result<HypothesisReport, ModelError> {
    let valid = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 < r.1;
    if !valid(psi_range) {
        return Err(ModelError::EmptyRange("psi"));
    }
    if !valid(theta_range) {
        return Err(ModelError::EmptyRange("theta"));
    }
    if theta_range.0 <= 0.0 {
        return Err(ModelError::NonPositiveTheta);
    }
    let mut checks = Vec::new();

    let (margin, witness) = worst(psi_range.0, psi_range.1, |s| {
        m.phi.value(s) + 0.5 * lower.eta * s * s + lower.c1
    });
    checks.push(CheckOutcome {
        name: "phi_lower_bound".into(),
        passed: margin >= 0.0,
        worst_margin: margin,
        witness,
    });
    checks.push(CheckOutcome {
        name: "eta_below_lambda1".into(),
        passed: lower.eta < lower.lambda1,
        worst_margin: lower.lambda1 - lower.eta,
        witness: lower.eta,
    });

    let mid = 0.5 * (psi_range.0 + psi_range.1);
    let half = 0.5 * (psi_range.1 - psi_range.0);
    for (name, order) in [("lambda_d2_bounded", 2usize), ("lambda_d3_bounded", 3)] {
        let eval = |s: f64| match order {
            2 => m.lambda.d2(s),
            _ => m.lambda.d3(s),
        };
        let (base, _) = sup_abs(psi_range.0, psi_range.1, eval);
        let (wide, witness) = sup_abs(mid - 8.0 * half, mid + 8.0 * half, eval);
        let growth = wide - base;
        checks.push(CheckOutcome {
            name: name.into(),
            passed: growth <= 1e-9 * (1.0 + base),
            worst_margin: -growth,
            witness,
        });
    }

    let (min_db, witness) = worst(theta_range.0, theta_range.1, |s| m.b.db(s));
    let (max_db, _) = sup_abs(theta_range.0, theta_range.1, |s| m.b.db(s));
    checks.push(CheckOutcome {
        name: "b_prime_positive".into(),
        passed: min_db > 0.0,
        worst_margin: min_db,
        witness,
    });
    let sigma = if min_db > 0.0 {
        max_db.max(1.0 / min_db)
    } else {
        f64::INFINITY
    };
    Ok(HypothesisReport { checks, sigma })
}
