use nalgebra::{DMatrix, SymmetricEigen};
use pfsim::exec::Execution;
use pfsim::grid::{Field, Grid, GridError};
use proptest::prelude::*;

fn grid_and_fields() -> impl Strategy<Value = (Grid, Vec<f64>, Vec<f64>)> {
    let one_d = (1usize..40, 0.1f64..20.0).prop_map(|(n, l)| Grid::interval(n, l).unwrap());
    let two_d = (1usize..12, 1usize..12, 0.1f64..10.0, 0.1f64..10.0)
        .prop_map(|(a, b, x, y)| Grid::rectangle([a, b], [x, y]).unwrap());
    prop_oneof![one_d, two_d].prop_flat_map(|g| {
        let n = g.len();
        (
            Just(g),
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

fn lap(g: &Grid, f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    g.laplacian_into(f, &mut out);
    out
}

/// Scale of the stencil entries, used to make round-off bounds relative.
fn stencil_scale(g: &Grid) -> f64 {
    (0..g.dim()).map(|a| g.spacing(a).powi(-2)).sum::<f64>()
}

proptest! {
    #[test]
    fn laplacian_integrates_to_zero((g, f, _) in grid_and_fields()) {
        let sum = g.integrate(&lap(&g, &f));
        let bound = 1e-13 * stencil_scale(&g) * g.volume() * f.iter().map(|v| v.abs()).fold(1.0, f64::max);
        prop_assert!(sum.abs() <= bound, "{sum} > {bound}");
    }

    #[test]
    fn laplacian_is_symmetric((g, f, h) in grid_and_fields()) {
        let a = g.inner(&lap(&g, &f), &h);
        let b = g.inner(&f, &lap(&g, &h));
        let scale = stencil_scale(&g) * g.inner(&f, &f).sqrt() * g.inner(&h, &h).sqrt();
        prop_assert!((a - b).abs() <= 1e-13 * scale.max(1e-300));
    }

    #[test]
    fn summation_by_parts((g, f, _) in grid_and_fields()) {
        let gs = g.grad_sq_norm(&f);
        prop_assert!(gs >= 0.0);
        let by_parts = -g.inner(&lap(&g, &f), &f);
        prop_assert!((gs - by_parts).abs() <= 1e-12 * gs.max(1e-300) + 1e-300);
    }

    #[test]
    fn grad_inner_is_bilinear_and_symmetric((g, f, h) in grid_and_fields()) {
        let a = g.grad_inner(&f, &h);
        prop_assert_eq!(a, g.grad_inner(&h, &f));
        let two_f: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        prop_assert!((g.grad_inner(&two_f, &h) - 2.0 * a).abs() <= 1e-12 * (a.abs() + 1.0) * stencil_scale(&g));
    }

    #[test]
    fn constants_are_in_the_kernel((g, _, _) in grid_and_fields(), c in -5.0f64..5.0) {
        let f = Field::constant(&g, c);
        prop_assert!(lap(&g, &f).iter().all(|&v| v == 0.0));
        prop_assert_eq!(g.grad_sq_norm(&f), 0.0);
        prop_assert!((g.integrate(&f) - c * g.volume()).abs() <= 1e-12 * (c.abs() * g.volume() + 1.0));
    }

    #[test]
    fn sequential_and_parallel_agree((g, f, _) in grid_and_fields()) {
        let mut a = vec![0.0; f.len()];
        let mut b = vec![0.0; f.len()];
        g.laplacian_into_with(Execution::Sequential, &f, &mut a);
        g.laplacian_into_with(Execution::Parallel, &f, &mut b);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn three_cell_hat() {
    let g = Grid::interval(3, 3.0).unwrap();
    let f = Field::new(&g, vec![0.0, 1.0, 0.0]).unwrap();
    assert_eq!(g.neumann_laplacian(&f).unwrap().values(), &[1.0, -2.0, 1.0]);
    assert_eq!(g.grad_sq_norm(&f), 2.0);
    let g = Grid::interval(3, 1.0).unwrap();
    assert!((g.integrate(&f) - 1.0 / 3.0).abs() < 1e-16);
}

#[test]
fn first_eigenvalue_converges_to_continuum() {
    let length = 2.5;
    let mut errs = Vec::new();
    for n in [8, 16, 32, 64] {
        let g = Grid::interval(n, length).unwrap();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for (i, j, v) in g.laplacian_entries() {
            a[(i, j)] -= v;
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().cloned().collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0].abs() < 1e-10);
        errs.push((ev[1] - (std::f64::consts::PI / length).powi(2)).abs());
    }
    for w in errs.windows(2) {
        // second order: each halving of h divides the error by about four
        assert!(w[0] / w[1] > 3.5, "{errs:?}");
    }
}

#[test]
fn mismatched_and_nonfinite_fields_are_rejected() {
    let g = Grid::interval(4, 1.0).unwrap();
    assert!(matches!(
        Field::new(&g, vec![0.0; 3]),
        Err(GridError::Mismatch {
            expected: 4,
            found: 3
        })
    ));
    assert!(matches!(
        Field::new(&g, vec![0.0, f64::NAN, 0.0, 0.0]),
        Err(GridError::NonFinite { index: 1 })
    ));
    let other = Field::zeros(&Grid::interval(5, 1.0).unwrap());
    assert!(g.neumann_laplacian(&other).is_err());
}
