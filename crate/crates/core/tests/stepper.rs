mod common;

use pfsim::stepper::StepError;
use pfsim::*;

fn model() -> ModelFunctions {
    make_default_model([0.0, 0.0, 1.0])
}

fn cosine_state(g: &Grid, amp: f64, theta: f64) -> State {
    let l = g.lengths()[0];
    let psi = Field::from_fn(g, |x| 0.1 + amp * (std::f64::consts::PI * x[0] / l).cos());
    let theta = Field::from_fn(g, |x| {
        theta + 0.1 * (2.0 * std::f64::consts::PI * x[0] / l).cos()
    });
    State::new(g, psi, theta).unwrap()
}

#[test]
fn implicit_step_matches_dense_oracle() {
    for (n, length, dt) in [(6, 1.5, 1e-2), (12, 3.0, 5e-3), (20, 2.0, 1e-3)] {
        let g = Grid::interval(n, length).unwrap();
        let s = cosine_state(&g, 0.4, 1.2);
        let cfg = StepperConfig {
            dt,
            newton_tol: 1e-12,
            ..Default::default()
        };
        let r = step(&g, &s, &cfg, &model()).unwrap();
        let (psi, theta, mu) =
            common::dense_newton_step(s.psi.values(), s.theta.values(), length, dt);
        let scale = 1.0
            + psi
                .iter()
                .chain(&theta)
                .map(|v| v.abs())
                .fold(0.0, f64::max);
        let diff = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        assert!(diff(r.state.psi.values(), &psi) <= 1e-10 * scale);
        assert!(diff(r.state.theta.values(), &theta) <= 1e-10 * scale);
        assert!(diff(r.mu.values(), &mu) <= 1e-8 * scale);
        assert!(r.residual_norm <= 1e-12);
    }
}

#[test]
fn implicit_scheme_is_first_order_in_time() {
    let g = Grid::interval(32, 2.0).unwrap();
    let s0 = cosine_state(&g, 0.3, 1.0);
    let m = model();
    let solve = |dt: f64| {
        let cfg = StepperConfig {
            dt,
            ..Default::default()
        };
        run(&g, &s0, 0.1, &cfg, &m, |_, _| {}).unwrap().state
    };
    let reference = solve(1.25e-4);
    let errs: Vec<f64> = [4e-3, 2e-3, 1e-3]
        .iter()
        .map(|&dt| {
            let s = solve(dt);
            s.psi
                .max_abs_diff(&reference.psi)
                .max(s.theta.max_abs_diff(&reference.theta))
        })
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((0.8..1.3).contains(&order), "{errs:?}");
    }
}

#[test]
fn both_schemes_conserve_mass_and_enthalpy() {
    let g = Grid::rectangle([8, 6], [2.0, 1.5]).unwrap();
    let m = model();
    let s0 = State::new(
        &g,
        Field::from_fn(&g, |x| 0.2 * (3.0 * x[0]).sin() * (2.0 * x[1]).cos()),
        Field::from_fn(&g, |x| 1.0 + 0.2 * x[0] * x[1]),
    )
    .unwrap();
    for scheme in [Scheme::Implicit, Scheme::Imex] {
        let cfg = StepperConfig {
            dt: 2e-3,
            scheme,
            ..Default::default()
        };
        let summary = run(&g, &s0, 0.1, &cfg, &m, |_, _| {}).unwrap();
        let rows = summary.ledger.rows();
        let (first, last) = (&rows[0], summary.ledger.last());
        assert!((last.mass - first.mass).abs() <= 1e-12, "{scheme:?}");
        assert!(
            (last.enthalpy - first.enthalpy).abs() <= 1e-10 * first.enthalpy.abs(),
            "{scheme:?}"
        );
        assert!(rows
            .windows(2)
            .all(|w| w[1].dissipation >= w[0].dissipation));
    }
}

#[test]
fn invalid_config_and_newton_failure_are_reported() {
    let g = Grid::interval(8, 1.0).unwrap();
    let s = cosine_state(&g, 0.3, 1.0);
    let bad = StepperConfig {
        dt: -1.0,
        ..Default::default()
    };
    assert_eq!(step(&g, &s, &bad, &model()), Err(StepError::InvalidConfig));

    let starved = StepperConfig {
        dt: 10.0,
        max_newton_iters: 1,
        newton_tol: 1e-14,
        ..Default::default()
    };
    let noisy = State::new(
        &g,
        Field::new(&g, vec![0.9, -0.9, 0.8, -0.8, 0.9, -0.9, 0.7, -0.7]).unwrap(),
        Field::constant(&g, 0.3),
    )
    .unwrap();
    match step(&g, &noisy, &starved, &model()) {
        Err(StepError::NewtonDiverged { iters, residual }) => {
            assert_eq!(iters, 1);
            assert!(residual > 1e-14);
        }
        other => panic!("expected a Newton failure, got {other:?}"),
    }
}
