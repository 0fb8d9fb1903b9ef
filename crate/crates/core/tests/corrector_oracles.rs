//! Correctors against dense direct solves and closed forms.

use dynrcm::corrector::{
    covariance_estimate, curl_defect, harmonic_residual, random_periodic_field, solve_poisson_time_periodic, solve_static_corrector, DEFAULT_TOL,
};
use dynrcm::{ConductanceField, TorusLattice};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense `𝓛` built from the neighbour sum, independent of the library
/// generator.
fn dense_generator(lat: &TorusLattice, w: &[f64]) -> DMatrix<f64> {
    let n = lat.num_vertices();
    let mut m = DMatrix::zeros(n, n);
    for x in 0..n {
        for j in 0..lat.dim() {
            let up = lat.neighbor(x, j, true);
            let down = lat.neighbor(x, j, false);
            let w_up = w[lat.edge(x, j)];
            let w_down = w[lat.edge(down, j)];
            m[(x, up)] += w_up;
            m[(x, x)] -= w_up;
            m[(x, down)] += w_down;
            m[(x, x)] -= w_down;
        }
    }
    m
}

fn coordinate_drift(lat: &TorusLattice, w: &[f64], j: usize) -> DVector<f64> {
    DVector::from_iterator(
        lat.num_vertices(),
        (0..lat.num_vertices()).map(|x| w[lat.edge(x, j)] - w[lat.edge(lat.neighbor(x, j, false), j)]),
    )
}

fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.clone().svd(true, true).solve(b, 1e-11).unwrap()
}

#[test]
fn periodic_solver_matches_dense_system() {
    let lat = TorusLattice::new(2, 4).unwrap();
    let omega = random_periodic_field(&lat, 2, 0.1, 0.5, 2.0, 11).unwrap();
    let sol = solve_poisson_time_periodic(&omega, None, DEFAULT_TOL).unwrap();
    assert_eq!(sol.slices(), 2);
    let nv = lat.num_vertices();
    let slices = sol.slices();
    let dt = sol.meta.dt;
    // stored slice k solves (s_k − s_{k−1})/Δt + 𝓛_k s_k = 𝓛_k Π^j, cyclically
    let size = slices * nv;
    let mut a = DMatrix::zeros(size, size);
    for k in 0..slices {
        let gen = dense_generator(&lat, omega.weights(k));
        let prev = (k + slices - 1) % slices;
        for x in 0..nv {
            a[(k * nv + x, k * nv + x)] += 1.0 / dt;
            a[(k * nv + x, prev * nv + x)] -= 1.0 / dt;
            for y in 0..nv {
                a[(k * nv + x, k * nv + y)] += gen[(x, y)];
            }
        }
    }
    for j in 0..2 {
        let mut b = DVector::zeros(size);
        for k in 0..slices {
            b.rows_mut(k * nv, nv).copy_from(&coordinate_drift(&lat, omega.weights(k), j));
        }
        // the minimum-norm solution has zero total mass, hence zero mass per slice
        let exact = pinv_solve(&a, &b);
        let err = exact.iter().zip(&sol.chi[j].values).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(err <= 1e-10, "coordinate {j}: max error {err:e}");
    }
    assert!(harmonic_residual(&sol, &omega).unwrap() <= 1e-10);
}

#[test]
fn static_solver_matches_pseudo_inverse() {
    let lat = TorusLattice::new(2, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w: Vec<f64> = (0..lat.num_edges()).map(|_| rng.random_range(0.2..5.0)).collect();
    let omega = ConductanceField::time_constant(lat.clone(), w.clone()).unwrap();
    let sol = solve_static_corrector(&omega, DEFAULT_TOL).unwrap();
    let gen = dense_generator(&lat, &w);
    for j in 0..2 {
        let exact = pinv_solve(&gen, &coordinate_drift(&lat, &w, j));
        let err = exact.iter().zip(&sol.chi[j].values).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(err <= 1e-9, "coordinate {j}: max error {err:e}");
    }
    assert!(sol.meta.residual <= 1e-10);
    // χ is a gradient field: zero circulation around plaquettes
    assert!(curl_defect(&sol) <= 1e-9);
}

/// Conductances depending only on the first coordinate: the first corrector
/// has constant flux `H(1 − ∇₁χ¹) ≡ a_i(1 − ∇₁χ¹)` with `H` the harmonic mean,
/// and the second corrector vanishes.
#[test]
fn striped_field_reduces_to_one_dimension() {
    let side = 12;
    let lat = TorusLattice::new(2, side).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let a: Vec<f64> = (0..side).map(|_| rng.random_range(0.3..4.0)).collect();
    let b: Vec<f64> = (0..side).map(|_| rng.random_range(0.3..4.0)).collect();
    let mut w = vec![0.0; lat.num_edges()];
    for x in 0..lat.num_vertices() {
        let i = lat.coord(x, 0);
        w[lat.edge(x, 0)] = a[i];
        w[lat.edge(x, 1)] = b[i];
    }
    let omega = ConductanceField::time_constant(lat.clone(), w).unwrap();
    let sol = solve_static_corrector(&omega, DEFAULT_TOL).unwrap();
    let harmonic = side as f64 / a.iter().map(|v| 1.0 / v).sum::<f64>();
    // χ¹(i) = Σ_{m<i} (1 − H/a_m) up to a constant, then centred
    let mut profile = vec![0.0; side];
    for i in 1..side {
        profile[i] = profile[i - 1] + 1.0 - harmonic / a[i - 1];
    }
    let shift = profile.iter().sum::<f64>() / side as f64;
    for x in 0..lat.num_vertices() {
        let want = profile[lat.coord(x, 0)] - shift;
        assert!((sol.value(0, 0, x) - want).abs() <= 1e-9, "χ¹ at {x}: {} vs {want}", sol.value(0, 0, x));
        assert!(sol.value(1, 0, x).abs() <= 1e-12);
    }
    let cov = covariance_estimate(&sol, &omega).unwrap();
    let arith_b = b.iter().sum::<f64>() / side as f64;
    assert!((cov[0][0] - 2.0 * harmonic).abs() <= 1e-9, "{} vs {}", cov[0][0], 2.0 * harmonic);
    assert!((cov[1][1] - 2.0 * arith_b).abs() <= 1e-9);
    assert!(cov[0][1].abs() <= 1e-9 && cov[1][0].abs() <= 1e-9);
}

#[test]
fn spatially_constant_dynamics_have_zero_corrector() {
    let lat = TorusLattice::new(2, 8).unwrap();
    let levels = [0.5, 1.7, 3.0, 1.1];
    let values: Vec<f64> = levels.iter().flat_map(|&c| std::iter::repeat_n(c, lat.num_edges())).collect();
    let omega = ConductanceField::from_intervals(lat, 0.0, 0.25, true, values).unwrap();
    let sol = solve_poisson_time_periodic(&omega, None, DEFAULT_TOL).unwrap();
    assert!(sol.max_abs() <= 1e-12);
    let cov = covariance_estimate(&sol, &omega).unwrap();
    // time average of 2c over substeps of equal length
    let mean = 2.0 * levels.iter().sum::<f64>() / levels.len() as f64;
    assert!((cov[0][0] - mean).abs() <= 1e-12 && (cov[1][1] - mean).abs() <= 1e-12);
    assert!(cov[0][1].abs() <= 1e-12);
}

#[test]
fn constant_conductance_scales_covariance() {
    for c in [0.3, 1.0, 2.5] {
        let lat = TorusLattice::new(2, 8).unwrap();
        let omega = ConductanceField::constant(lat, c).unwrap();
        let sol = solve_static_corrector(&omega, DEFAULT_TOL).unwrap();
        assert_eq!(sol.max_abs(), 0.0);
        assert_eq!(covariance_estimate(&sol, &omega).unwrap(), vec![vec![2.0 * c, 0.0], vec![0.0, 2.0 * c]]);
    }
}
