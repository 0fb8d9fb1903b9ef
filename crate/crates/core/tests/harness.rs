//! Environment-process, martingale and QFCLT harness checks.

use dynrcm::corrector::{martingale_check, solve_corrector, MartingaleOptions, DEFAULT_TOL};
use dynrcm::environment::{sample_environment, EnvironmentModel, Law};
use dynrcm::qfclt::{environment_process_check, run_qfclt, ExperimentConfig, LocalFunctional};
use dynrcm::TorusLattice;

fn uniform_static() -> EnvironmentModel {
    EnvironmentModel::StaticErgodic { law: Law::Uniform { low: 1.0, high: 2.0 } }
}

#[test]
fn environment_seen_from_the_walker_is_stationary() {
    let lat = TorusLattice::new(2, 32).unwrap();
    let omega = sample_environment(&uniform_static(), &lat, 1.0, 1.0, true, 7).unwrap();
    let r = environment_process_check(&omega, 10_000, &[1.0, 5.0, 10.0], LocalFunctional::ForwardConductance, 3).unwrap();
    assert!(r.pass, "{r:?}");
    // a time-constant field has a time-constant prediction
    assert!(r.predicted.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn refreshed_environment_tracks_the_space_average() {
    let lat = TorusLattice::new(2, 24).unwrap();
    let model = EnvironmentModel::TimeRefresh { law: Law::TwoPoint { low: 0.5, high: 3.0, p_high: 0.3 }, rate: 0.4 };
    let omega = sample_environment(&model, &lat, 12.0, 0.5, false, 5).unwrap();
    let r = environment_process_check(&omega, 10_000, &[1.0, 5.0, 10.0], LocalFunctional::Mu, 9).unwrap();
    assert!(r.pass, "{r:?}");
}

fn martingale_options(time_tilt: f64) -> MartingaleOptions {
    MartingaleOptions {
        n_paths: 4000,
        t_grid: vec![0.0, 2.0, 4.0, 8.0],
        start: 0,
        direction: vec![0.6, 0.8],
        time_tilt,
    }
}

#[test]
fn harmonic_coordinates_give_martingales() {
    let lat = TorusLattice::new(2, 16).unwrap();
    let model = EnvironmentModel::ProductSeparable {
        space: Law::Uniform { low: 1.0, high: 2.0 },
        time: Law::Uniform { low: 0.5, high: 1.5 },
    };
    let omega = sample_environment(&model, &lat, 4.0, 1.0, true, 4).unwrap();
    let sol = solve_corrector(&omega, DEFAULT_TOL).unwrap();
    let r = martingale_check(&sol, &omega, &martingale_options(0.0), 21).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(r.qv_relative_error <= 0.05);
}

#[test]
fn tilted_corrector_fails_the_martingale_check() {
    let lat = TorusLattice::new(2, 16).unwrap();
    let omega = sample_environment(&uniform_static(), &lat, 1.0, 1.0, true, 4).unwrap();
    let sol = solve_corrector(&omega, DEFAULT_TOL).unwrap();
    let r = martingale_check(&sol, &omega, &martingale_options(0.3), 21).unwrap();
    assert!(!r.pass);
}

fn small_config(model: EnvironmentModel) -> ExperimentConfig {
    ExperimentConfig {
        model,
        env_seed: 3,
        walk_seed: 4,
        dim: 2,
        side: 32,
        dt: 1.0,
        intervals: 1,
        periodic: true,
        n_list: vec![4, 8],
        walkers: 1500,
        horizon: 1.0,
        level: 0.01,
        permutations: 99,
        energy_samples: 300,
        control_paths: 50,
        covariance_tolerance: 0.15,
        jump_budget: 1e9,
    }
}

#[test]
fn qfclt_reports_are_reproducible() {
    let c = small_config(uniform_static());
    let a = serde_json::to_string(&run_qfclt(&c).unwrap()).unwrap();
    let b = serde_json::to_string(&run_qfclt(&c).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn qfclt_on_a_static_field_agrees_with_the_formula() {
    let r = run_qfclt(&small_config(uniform_static())).unwrap();
    let formula = r.formula_covariance.clone().unwrap();
    // effective diffusivity of conductances in [1, 2] lies between the
    // harmonic and arithmetic means
    for i in 0..2 {
        assert!(formula[i][i] > 2.0 / 2f64.ln() * 0.99 && formula[i][i] < 3.0 * 1.001, "{formula:?}");
    }
    assert!(r.formula_min_eigenvalue.unwrap() > 0.0);
    assert_eq!(r.scales.len(), 2);
    for s in &r.scales {
        assert!(s.ks_pass && s.energy_pass, "n = {}", s.n);
        assert!(s.formula_distance.unwrap() < 0.15, "n = {}: {:?}", s.n, s.formula_distance);
    }
    assert!(r.consistency.iter().all(|c| c.pass));
}
