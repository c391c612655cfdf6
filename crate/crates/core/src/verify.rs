//! Self-check suite: operator algebra, derivative and variation consistency,
//! conservation, the dissipation identity under refinement, and steady-state
//! cross-checks. Sampled checks draw from a per-sample seeded generator, so
//! the report does not depend on the execution mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::constitutive::ModelFunctions;
use crate::exec::Execution;
use crate::grid::{Field, Grid};
use crate::state::{
    conserved_f, lagrangian, lagrangian_gradient, lagrangian_hessian_action, Direction, State,
};
use crate::steady::{solve_steady, SteadyOptions, SteadyProblem, SteadyState};
use crate::stepper::{run, step, Scheme, StepperConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    pub samples: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            samples: 20,
            seed: 0,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst measured value; compared against `tolerance` (or reported as-is).
    pub measured: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
    pub warnings: Vec<String>,
}

impl VerifyReport {
    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

const CHECKS: [&str; 10] = [
    "operator_algebra",
    "derivative_consistency",
    "gradient_fd",
    "hessian_fd",
    "hessian_second_difference",
    "hessian_symmetry",
    "conservation",
    "dissipation_refinement",
    "steady_constant_branch",
    "steady_fixed_point",
];

fn below(name: &str, measured: f64, tolerance: f64, samples: usize, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        // NaN fails
        passed: measured <= tolerance,
        measured,
        tolerance,
        samples,
        detail,
    }
}

fn worst(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, |a: f64, b| {
        if b.is_nan() || a.is_nan() {
            f64::NAN
        } else {
            a.max(b)
        }
    })
}

fn sample_rng(seed: u64, stream: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(i as u128 * (1 << 20));
    rng
}

fn random_values(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Runs every check against `model`.
pub fn verify(model: &ModelFunctions, opts: &VerifyOptions) -> VerifyReport {
    if opts.samples == 0 {
        let checks = CHECKS
            .iter()
            .map(|&name| CheckResult {
                name: name.into(),
                passed: true,
                measured: 0.0,
                tolerance: 0.0,
                samples: 0,
                detail: "skipped: 0 samples".into(),
            })
            .collect();
        return VerifyReport {
            passed: true,
            checks,
            warnings: vec!["0 samples requested: every check passed vacuously".into()],
        };
    }
    let checks = vec![
        operator_algebra(opts),
        derivative_consistency(model, opts),
        gradient_fd(model, opts),
        hessian_fd(model, opts),
        hessian_second_difference(model, opts),
        hessian_symmetry(model, opts),
        conservation(model),
        dissipation_refinement(model),
        steady_constant_branch(model, opts),
        steady_fixed_point(model),
    ];
    VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
        warnings: Vec::new(),
    }
}

/// Relative defects of the discrete operator identities on one pair of
/// random fields: (|∫Δf|/‖f‖, |⟨Δf,g⟩ − ⟨f,Δg⟩|/(‖f‖‖g‖), |∥∇f∥² − ⟨−Δf,f⟩|/∥∇f∥²).
pub fn operator_defects(grid: &Grid, f: &[f64], g: &[f64]) -> [f64; 3] {
    let n = grid.len();
    let (mut lf, mut lg) = (vec![0.0; n], vec![0.0; n]);
    grid.laplacian_into(f, &mut lf);
    grid.laplacian_into(g, &mut lg);
    let nf = grid.inner(f, f).sqrt();
    let ng = grid.inner(g, g).sqrt();
    let zero_sum = grid.integrate(&lf).abs() / nf;
    let symmetry = (grid.inner(&lf, g) - grid.inner(f, &lg)).abs() / (nf * ng);
    let gs = grid.grad_sq_norm(f);
    let by_parts = (gs + grid.inner(&lf, f)).abs() / gs;
    [zero_sum, symmetry, by_parts]
}

/// The grids used by the operator check: unit spacing, 1D n = 64 and 2D 32×32.
pub fn operator_grids() -> [Grid; 2] {
    [
        Grid::interval(64, 64.0).expect("valid grid"),
        Grid::rectangle([32, 32], [32.0, 32.0]).expect("valid grid"),
    ]
}

fn operator_algebra(opts: &VerifyOptions) -> CheckResult {
    let grids = operator_grids();
    let per_sample = opts.exec.map_range(opts.samples, |i| {
        let mut rng = sample_rng(opts.seed, 1, i);
        let mut out = [0.0f64; 3];
        for g in &grids {
            let f = random_values(&mut rng, g.len(), -1.0, 1.0);
            let h = random_values(&mut rng, g.len(), -1.0, 1.0);
            for (o, d) in out.iter_mut().zip(operator_defects(g, &f, &h)) {
                *o = o.max(d);
            }
        }
        out
    });
    let w = [0, 1, 2].map(|j| worst(per_sample.iter().map(|d| d[j])));
    below(
        "operator_algebra",
        worst(w),
        1e-12,
        opts.samples,
        format!(
            "zero sum {:e}, symmetry {:e}, by parts {:e}",
            w[0], w[1], w[2]
        ),
    )
}

fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn derivative_consistency(m: &ModelFunctions, opts: &VerifyOptions) -> CheckResult {
    let per_sample = opts.exec.map_range(opts.samples, |i| {
        let mut rng = sample_rng(opts.seed, 2, i);
        let s: f64 = rng.gen_range(-2.0..2.0);
        let t: f64 = rng.gen_range(0.2..3.0);
        let (hs, ht) = (1e-5, 1e-5 * t);
        let (phi, lam, b) = (&m.phi, &m.lambda, &m.b);
        worst([
            rel(central(|x| phi.value(x), s, hs), phi.d1(s)),
            rel(central(|x| phi.d1(x), s, hs), phi.d2(s)),
            rel(central(|x| phi.d2(x), s, hs), phi.d3(s)),
            rel(central(|x| lam.value(x), s, hs), lam.d1(s)),
            rel(central(|x| lam.d1(x), s, hs), lam.d2(s)),
            rel(central(|x| lam.d2(x), s, hs), lam.d3(s)),
            rel(central(|x| b.b(x), t, ht), b.db(t)),
            rel(central(|x| b.db(x), t, ht), b.d2b(t)),
            rel(central(|x| b.beta(x), t, ht), b.beta_prime(t)),
            rel(central(|x| b.beta_prime(x), t, ht), b.beta_second(t)),
            rel(b.beta_prime(t), t * b.db(t)),
        ])
    });
    below(
        "derivative_consistency",
        worst(per_sample),
        1e-6,
        opts.samples,
        "central differences of Φ, λ, b, β against their derivatives".into(),
    )
}

/// A random state with ψ ∈ [−1.2, 1.2] and ϑ ∈ [0.5, 2], and two random directions.
pub struct VariationSample {
    pub grid: Grid,
    pub state: State,
    pub d1: (Vec<f64>, Vec<f64>),
    pub d2: (Vec<f64>, Vec<f64>),
}

pub fn variation_sample(seed: u64, i: usize) -> VariationSample {
    let mut rng = sample_rng(seed, 3, i);
    let grid = if i.is_multiple_of(2) {
        Grid::interval(12, 3.0).expect("valid grid")
    } else {
        Grid::rectangle([5, 4], [2.0, 1.5]).expect("valid grid")
    };
    let n = grid.len();
    let psi = random_values(&mut rng, n, -1.2, 1.2);
    let theta = random_values(&mut rng, n, 0.5, 2.0);
    let mut dir = || {
        (
            random_values(&mut rng, n, -1.0, 1.0),
            random_values(&mut rng, n, -0.2, 0.2),
        )
    };
    let d1 = dir();
    let d2 = dir();
    let state = State {
        psi: Field::from_vec_unchecked(psi),
        theta: Field::from_vec_unchecked(theta),
    };
    VariationSample {
        grid,
        state,
        d1,
        d2,
    }
}

fn shifted(s: &State, d: &(Vec<f64>, Vec<f64>), eps: f64) -> State {
    State {
        psi: Field::from_vec_unchecked(s.psi.iter().zip(&d.0).map(|(a, b)| a + eps * b).collect()),
        theta: Field::from_vec_unchecked(
            s.theta.iter().zip(&d.1).map(|(a, b)| a + eps * b).collect(),
        ),
    }
}

fn dir(d: &(Vec<f64>, Vec<f64>)) -> Direction<'_> {
    Direction { h: &d.0, k: &d.1 }
}

fn euclid(d: &(Vec<f64>, Vec<f64>)) -> f64 {
    d.0.iter().chain(&d.1).map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean norm of the coefficient vector j ↦ L''(d, e_j).
fn hessian_row_norm(grid: &Grid, s: &State, m: &ModelFunctions, d: &(Vec<f64>, Vec<f64>)) -> f64 {
    let n = grid.len();
    let mut e = (vec![0.0; n], vec![0.0; n]);
    let mut sum = 0.0;
    for j in 0..2 * n {
        let slot = if j < n { &mut e.0[j] } else { &mut e.1[j - n] };
        *slot = 1.0;
        let v = lagrangian_hessian_action(grid, s, m, dir(d), dir(&e));
        sum += v * v;
        let slot = if j < n { &mut e.0[j] } else { &mut e.1[j - n] };
        *slot = 0.0;
    }
    sum.sqrt()
}

/// |difference quotient of L along d − ⟨L', d⟩| / (‖L'‖‖d‖), ε = 1e−5.
pub fn gradient_defect(m: &ModelFunctions, x: &VariationSample) -> f64 {
    let (g, s) = (&x.grid, &x.state);
    let eps = 1e-5;
    let fd = (lagrangian(g, &shifted(s, &x.d1, eps), m)
        - lagrangian(g, &shifted(s, &x.d1, -eps), m))
        / (2.0 * eps);
    let grad = lagrangian_gradient(g, s, m);
    let an = grad.apply(g, &x.d1.0, &x.d1.1);
    let vol = g.cell_volume();
    let gnorm = grad
        .d_psi
        .iter()
        .chain(grad.d_theta.iter())
        .map(|v| (v * vol).powi(2))
        .sum::<f64>()
        .sqrt();
    (fd - an).abs() / (gnorm * euclid(&x.d1))
}

/// |difference quotient of ⟨L', d₁⟩ along d₂ − L''(d₁, d₂)| / (‖L''d₁‖‖d₂‖), ε = 1e−5.
pub fn hessian_defect(m: &ModelFunctions, x: &VariationSample) -> f64 {
    let (g, s) = (&x.grid, &x.state);
    let eps = 1e-5;
    let apply = |st: &State| lagrangian_gradient(g, st, m).apply(g, &x.d1.0, &x.d1.1);
    let fd = (apply(&shifted(s, &x.d2, eps)) - apply(&shifted(s, &x.d2, -eps))) / (2.0 * eps);
    let an = lagrangian_hessian_action(g, s, m, dir(&x.d1), dir(&x.d2));
    (fd - an).abs() / (hessian_row_norm(g, s, m, &x.d1) * euclid(&x.d2))
}

/// |second difference of L along d₁ − L''(d₁, d₁)| / (‖L''d₁‖‖d₁‖), ε = 1e−4.
pub fn second_difference_defect(m: &ModelFunctions, x: &VariationSample) -> f64 {
    let (g, s) = (&x.grid, &x.state);
    let eps = 1e-4;
    let fd = (lagrangian(g, &shifted(s, &x.d1, eps), m) - 2.0 * lagrangian(g, s, m)
        + lagrangian(g, &shifted(s, &x.d1, -eps), m))
        / (eps * eps);
    let an = lagrangian_hessian_action(g, s, m, dir(&x.d1), dir(&x.d1));
    (fd - an).abs() / (hessian_row_norm(g, s, m, &x.d1) * euclid(&x.d1))
}

/// |L''(d₁, d₂) − L''(d₂, d₁)| / (‖L''d₁‖‖d₂‖).
pub fn symmetry_defect(m: &ModelFunctions, x: &VariationSample) -> f64 {
    let (g, s) = (&x.grid, &x.state);
    let a = lagrangian_hessian_action(g, s, m, dir(&x.d1), dir(&x.d2));
    let b = lagrangian_hessian_action(g, s, m, dir(&x.d2), dir(&x.d1));
    (a - b).abs() / (hessian_row_norm(g, s, m, &x.d1) * euclid(&x.d2))
}

fn sampled(
    name: &str,
    tol: f64,
    opts: &VerifyOptions,
    detail: &str,
    f: impl Fn(&VariationSample) -> f64 + Sync,
) -> CheckResult {
    let per_sample = opts
        .exec
        .map_range(opts.samples, |i| f(&variation_sample(opts.seed, i)));
    below(name, worst(per_sample), tol, opts.samples, detail.into())
}

fn gradient_fd(m: &ModelFunctions, opts: &VerifyOptions) -> CheckResult {
    sampled(
        "gradient_fd",
        1e-6,
        opts,
        "L' against central differences of L",
        |x| gradient_defect(m, x),
    )
}

fn hessian_fd(m: &ModelFunctions, opts: &VerifyOptions) -> CheckResult {
    sampled(
        "hessian_fd",
        1e-4,
        opts,
        "L'' against central differences of L'",
        |x| hessian_defect(m, x),
    )
}

fn hessian_second_difference(m: &ModelFunctions, opts: &VerifyOptions) -> CheckResult {
    sampled(
        "hessian_second_difference",
        1e-4,
        opts,
        "L''(d, d) against second differences of L",
        |x| second_difference_defect(m, x),
    )
}

fn hessian_symmetry(m: &ModelFunctions, opts: &VerifyOptions) -> CheckResult {
    sampled(
        "hessian_symmetry",
        1e-12,
        opts,
        "L''(d1, d2) = L''(d2, d1)",
        |x| symmetry_defect(m, x),
    )
}

fn noisy_state(grid: &Grid, seed: u64, psi: f64, theta: f64) -> State {
    let mut rng = sample_rng(seed, 4, 0);
    let n = grid.len();
    State {
        psi: Field::from_vec_unchecked(
            random_values(&mut rng, n, -0.05, 0.05)
                .iter()
                .map(|v| psi + v)
                .collect(),
        ),
        theta: Field::from_vec_unchecked(
            random_values(&mut rng, n, -0.05, 0.05)
                .iter()
                .map(|v| theta + v)
                .collect(),
        ),
    }
}

fn conservation(m: &ModelFunctions) -> CheckResult {
    let mut mass = 0.0f64;
    let mut enthalpy = 0.0f64;
    let mut failures = Vec::new();
    let cases = [
        (
            Grid::interval(32, 6.0).expect("valid grid"),
            Scheme::Implicit,
            100,
        ),
        (
            Grid::interval(32, 6.0).expect("valid grid"),
            Scheme::Imex,
            100,
        ),
        (
            Grid::rectangle([10, 10], [4.0, 4.0]).expect("valid grid"),
            Scheme::Implicit,
            20,
        ),
    ];
    for (g, scheme, steps) in cases {
        let s0 = noisy_state(&g, 0, 0.0, 1.0);
        let cfg = StepperConfig {
            dt: 1e-3,
            scheme,
            ..Default::default()
        };
        match run(&g, &s0, steps as f64 * cfg.dt, &cfg, m, |_, _| {}) {
            Ok(out) => {
                let r0 = &out.ledger.rows()[0];
                for r in out.ledger.rows() {
                    mass = mass.max((r.mass - r0.mass).abs());
                    enthalpy = enthalpy.max((r.enthalpy - r0.enthalpy).abs());
                }
            }
            Err(e) => failures.push(format!("{scheme:?} on {:?}: {e}", g.cells_per_axis())),
        }
    }
    let passed = failures.is_empty() && mass <= 1e-11 && enthalpy <= 1e-9;
    CheckResult {
        name: "conservation".into(),
        passed,
        measured: mass.max(enthalpy),
        tolerance: 1e-9,
        samples: 3,
        detail: if failures.is_empty() {
            format!("max |Δ mean ψ| {mass:e} (tol 1e-11), max |ΔF| {enthalpy:e} (tol 1e-9)")
        } else {
            failures.join("; ")
        },
    }
}

/// Max identity residual |E + D − E(0)| up to `t_end` for each time step.
pub fn identity_residuals(
    grid: &Grid,
    s0: &State,
    m: &ModelFunctions,
    t_end: f64,
    dts: &[f64],
) -> Result<Vec<f64>, String> {
    dts.iter()
        .map(|&dt| {
            let cfg = StepperConfig {
                dt,
                ..Default::default()
            };
            run(grid, s0, t_end, &cfg, m, |_, _| {})
                .map(|out| out.ledger.max_identity_residual())
                .map_err(|e| e.to_string())
        })
        .collect()
}

/// Smallest observed order log₂(r_k / r_{k+1}) for successive halvings.
pub fn observed_order(residuals: &[f64]) -> f64 {
    residuals
        .windows(2)
        .map(|w| (w[0] / w[1]).log2())
        .fold(f64::INFINITY, f64::min)
}

fn dissipation_refinement(m: &ModelFunctions) -> CheckResult {
    let g = Grid::interval(32, 4.0).expect("valid grid");
    let s0 = State {
        psi: g.cosine_mode([1, 0]).map(|v| 0.1 + 0.4 * v),
        theta: Field::constant(&g, 1.0),
    };
    match identity_residuals(&g, &s0, m, 0.2, &[4e-3, 2e-3, 1e-3]) {
        Ok(r) => {
            let order = observed_order(&r);
            CheckResult {
                name: "dissipation_refinement".into(),
                passed: order >= 0.9,
                measured: order,
                tolerance: 0.9,
                samples: r.len(),
                detail: format!("residuals {r:?}; order must be at least 0.9"),
            }
        }
        Err(e) => CheckResult {
            name: "dissipation_refinement".into(),
            passed: false,
            measured: f64::NAN,
            tolerance: 0.9,
            samples: 0,
            detail: e,
        },
    }
}

/// Solves b(ϑ) = y by bisection, independently of the model's own inverse.
pub fn scalar_root(f: impl Fn(f64) -> f64, y: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..2000 {
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
    0.5 * (lo + hi)
}

/// (m0, ϑ, h0) with h0 = |Ω|(λ(m0) + b(ϑ)), so the constant branch is feasible.
pub fn constant_branch_sample(
    grid: &Grid,
    m: &ModelFunctions,
    seed: u64,
    i: usize,
) -> (f64, f64, f64) {
    let mut rng = sample_rng(seed, 5, i);
    let m0: f64 = rng.gen_range(-0.9..0.9);
    let theta: f64 = rng.gen_range(0.3..3.0);
    (
        m0,
        theta,
        grid.volume() * (m.lambda.value(m0) + m.b.b(theta)),
    )
}

fn steady_constant_branch(m: &ModelFunctions, opts: &VerifyOptions) -> CheckResult {
    let g = Grid::interval(16, 2.0).expect("valid grid");
    let per_sample = opts.exec.map_range(opts.samples, |i| {
        let (m0, _, h0) = constant_branch_sample(&g, m, opts.seed, i);
        let p = SteadyProblem {
            grid: g.clone(),
            model: m.clone(),
            m0,
            h0,
        };
        let guess = SteadyState::constant_guess(&g, m0, 1.0, 0.0);
        match solve_steady(&p, &guess, &SteadyOptions::default()) {
            Ok(sol) => {
                let y = h0 / g.volume() - m.lambda.value(m0);
                let theta = scalar_root(|t| m.b.b(t), y, 1e-12, 1e12);
                let mu = m.phi.d1(m0) - m.lambda.d1(m0) * theta;
                let psi_err = sol
                    .psi_inf
                    .iter()
                    .map(|v| (v - m0).abs())
                    .fold(0.0, f64::max);
                worst([
                    (sol.theta_inf - theta).abs() / theta,
                    (sol.mu_inf - mu).abs() / mu.abs().max(1.0),
                    psi_err / m0.abs().max(1.0),
                    sol.mean_value_gap(&g, m) / sol.mu_inf.abs().max(1.0),
                ])
            }
            Err(_) => f64::INFINITY,
        }
    });
    below(
        "steady_constant_branch",
        worst(per_sample),
        1e-12,
        opts.samples,
        "solve_steady against a bisection root of b(ϑ) = h0/|Ω| − λ(m0)".into(),
    )
}

fn steady_fixed_point(m: &ModelFunctions) -> CheckResult {
    let g = Grid::interval(32, 4.0).expect("valid grid");
    let guess_state = State {
        psi: g.cosine_mode([1, 0]).map(|v| 0.8 * v),
        theta: Field::constant(&g, 1.0),
    };
    let p = SteadyProblem {
        grid: g.clone(),
        model: m.clone(),
        m0: 0.0,
        h0: conserved_f(&g, &guess_state, m),
    };
    let guess = SteadyState {
        psi_inf: guess_state.psi.clone(),
        theta_inf: 1.0,
        mu_inf: 0.0,
        residual_norm: f64::INFINITY,
    };
    let fail = |detail: String| CheckResult {
        name: "steady_fixed_point".into(),
        passed: false,
        measured: f64::NAN,
        tolerance: 1e-9,
        samples: 1,
        detail,
    };
    let sol = match solve_steady(&p, &guess, &SteadyOptions::default()) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string()),
    };
    let s = sol.as_state(&g);
    let cfg = StepperConfig {
        dt: 1e-2,
        ..Default::default()
    };
    match step(&g, &s, &cfg, m) {
        Ok(r) => {
            let moved = r
                .state
                .psi
                .max_abs_diff(&s.psi)
                .max(r.state.theta.max_abs_diff(&s.theta))
                .max(
                    r.mu.iter()
                        .map(|v| (v - sol.mu_inf).abs())
                        .fold(0.0, f64::max),
                );
            below(
                "steady_fixed_point",
                moved,
                1e-9,
                1,
                format!(
                    "change of (ψ, ϑ, μ) over one implicit step from a steady state with ψ spread {:e}",
                    sol.psi_inf.spread()
                ),
            )
        }
        Err(e) => fail(e.to_string()),
    }
}
