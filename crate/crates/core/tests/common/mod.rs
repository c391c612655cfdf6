#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pfsim::diagnostics::LedgerRow;

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Dense 1D Neumann Laplacian with mirror ghosts, assembled by hand.
pub fn dense_laplacian_1d(n: usize, length: f64) -> DMatrix<f64> {
    let h2 = (length / n as f64).powi(2);
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        if i > 0 {
            d[(i, i - 1)] = 1.0 / h2;
            d[(i, i)] -= 1.0 / h2;
        }
        if i + 1 < n {
            d[(i, i + 1)] = 1.0 / h2;
            d[(i, i)] -= 1.0 / h2;
        }
    }
    d
}

// Φ = (s² − 1)², λ = s², b = −1/s written out independently of the library.
fn phi1(s: f64) -> f64 {
    4.0 * s * (s * s - 1.0)
}
fn phi2(s: f64) -> f64 {
    12.0 * s * s - 4.0
}
fn b(s: f64) -> f64 {
    -1.0 / s
}
fn b1(s: f64) -> f64 {
    1.0 / (s * s)
}

/// One backward Euler step of the (ψ, ϑ) system with μ eliminated, solved
/// by undamped dense Newton to round-off. Returns (ψ, ϑ, μ).
pub fn dense_newton_step(
    psi_old: &[f64],
    theta_old: &[f64],
    length: f64,
    dt: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = psi_old.len();
    let d = dense_laplacian_1d(n, length);
    let po = DVector::from_column_slice(psi_old);
    let to = DVector::from_column_slice(theta_old);
    let h_old = DVector::from_fn(n, |i, _| b(to[i]) + po[i] * po[i]);
    let mu_of = |p: &DVector<f64>, t: &DVector<f64>| {
        -&d * p + DVector::from_fn(n, |i, _| phi1(p[i]) - 2.0 * p[i] * t[i])
    };
    let residual = |p: &DVector<f64>, t: &DVector<f64>| {
        let r1 = (p - &po) / dt - &d * mu_of(p, t);
        let r2 = (DVector::from_fn(n, |i, _| b(t[i]) + p[i] * p[i]) - &h_old) / dt - &d * t;
        let mut r = DVector::zeros(2 * n);
        r.rows_mut(0, n).copy_from(&r1);
        r.rows_mut(n, n).copy_from(&r2);
        r
    };
    let (mut p, mut t) = (po.clone(), to.clone());
    let mut best = f64::INFINITY;
    for _ in 0..60 {
        let r = residual(&p, &t);
        let norm = r.amax();
        if norm >= best && norm < 1e-12 {
            break;
        }
        best = best.min(norm);
        let dmu_dpsi =
            -&d + DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| phi2(p[i]) - 2.0 * t[i]));
        let dmu_dtheta = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| -2.0 * p[i]));
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        let eye = DMatrix::<f64>::identity(n, n);
        j.view_mut((0, 0), (n, n))
            .copy_from(&(&eye / dt - &d * dmu_dpsi));
        j.view_mut((0, n), (n, n)).copy_from(&(-&d * dmu_dtheta));
        j.view_mut((n, 0), (n, n))
            .copy_from(&DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| {
                2.0 * p[i] / dt
            })));
        j.view_mut((n, n), (n, n))
            .copy_from(&(DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| b1(t[i]) / dt)) - &d));
        let dx = j.lu().solve(&(-r)).expect("oracle Jacobian is nonsingular");
        p += dx.rows(0, n);
        t += dx.rows(n, n);
    }
    let mu = mu_of(&p, &t);
    (
        p.as_slice().to_vec(),
        t.as_slice().to_vec(),
        mu.as_slice().to_vec(),
    )
}

/// Root of an increasing function by plain bisection on [lo, hi].
pub fn bisect(f: impl Fn(f64) -> f64, y: f64, mut lo: f64, mut hi: f64) -> f64 {
    while hi - lo > 0.0 {
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

/// Ledger rows carrying only a time and a Lagrangian value.
pub fn synthetic_rows(
    times: impl IntoIterator<Item = f64>,
    l: impl Fn(f64) -> f64,
) -> Vec<LedgerRow> {
    times
        .into_iter()
        .map(|t| LedgerRow {
            t,
            mass: 0.0,
            enthalpy: 0.0,
            energy: l(t),
            lagrangian: l(t),
            dissipation: 0.0,
            identity_residual: 0.0,
            theta_min: 1.0,
            theta_max: 1.0,
            grad_mu: 1.0,
            grad_theta: 1.0,
            newton_iters: 0,
            mu_spread: 0.0,
        })
        .collect()
}
