//! The inequality checks on random instances and solved correctors.

use dynrcm::corpus::{corpus_member, spacetime_member};
use dynrcm::corrector::{solve_corrector, DEFAULT_TOL};
use dynrcm::environment::{sample_environment, EnvironmentModel, Law};
use dynrcm::moser::{
    appendix_inequality_suite, build_cutoffs, energy_estimate_check, interpolation_suite, iteration_constants, maximal_ratio,
    poincare_check, scaled_corrector, sobolev_check, MoserParams,
};
use dynrcm::{SpaceTimeCylinder, TorusLattice};

#[test]
fn interpolation_holds_on_random_instances() {
    let suite = interpolation_suite(1000, 77).unwrap();
    assert_eq!(suite.trials, 1000);
    assert_eq!(suite.violations, 0, "worst ratio {}", suite.worst_ratio);
    assert!(suite.worst_ratio.is_finite() && suite.worst_ratio > 0.1);
    assert_eq!(suite, interpolation_suite(1000, 77).unwrap());
}

#[test]
fn appendix_suite_has_no_violations() {
    let report = appendix_inequality_suite(200_000, 9);
    for s in &report.stats {
        assert_eq!(s.trials, 200_000, "{}", s.name);
        assert_eq!(s.violations, 0, "{}: worst sample {:?}", s.name, s.worst_sample);
    }
    assert!(report.passes());
    assert_eq!(report, appendix_inequality_suite(200_000, 9));
}

#[test]
fn poincare_ratio_is_bounded_on_the_corpus() {
    let lat = TorusLattice::new(2, 48).unwrap();
    let x0 = lat.index(&[20, 30]);
    for i in 0..50 {
        let (shape, u) = corpus_member(&lat, x0, 16, false, 3, i).unwrap();
        let s = poincare_check(&u, &lat, x0, 16.0).unwrap();
        assert!(s.ratio.is_finite() && s.ratio < 1.0, "{shape:?}: {}", s.ratio);
        // adding a constant changes neither side
        let shifted: Vec<f64> = u.iter().map(|v| v + 2.5).collect();
        let t = poincare_check(&shifted, &lat, x0, 16.0).unwrap();
        assert!((t.lhs - s.lhs).abs() <= 1e-9 * s.lhs.max(1.0) && (t.rhs - s.rhs).abs() <= 1e-9 * s.rhs.max(1.0));
    }
}

#[test]
fn sobolev_ratio_is_finite_and_scale_free() {
    let lat = TorusLattice::new(2, 32).unwrap();
    let model = EnvironmentModel::StaticErgodic { law: Law::Uniform { low: 1.0, high: 2.0 } };
    let omega = sample_environment(&model, &lat, 1.0, 1.0, true, 1).unwrap();
    let q = SpaceTimeCylinder::new(0.0, 8.0, lat.index(&[16, 16]), 1.0).unwrap();
    for i in 0..10 {
        let (_, u) = spacetime_member(&lat, &q, 4.0, true, 5, i).unwrap();
        let s = sobolev_check(&u, &omega, &q, 4.0, f64::INFINITY).unwrap();
        assert!(s.ratio.is_finite() && s.ratio > 0.0);
        // both sides are quadratic in u
        let mut v = u.clone();
        v.values.iter_mut().for_each(|x| *x *= 3.0);
        let t = sobolev_check(&v, &omega, &q, 4.0, f64::INFINITY).unwrap();
        assert!((t.ratio - s.ratio).abs() <= 1e-10 * s.ratio);
    }
}

#[test]
fn energy_terms_are_finite_for_solved_correctors() {
    let lat = TorusLattice::new(2, 32).unwrap();
    let model = EnvironmentModel::ProductSeparable {
        space: Law::Uniform { low: 1.0, high: 2.0 },
        time: Law::Uniform { low: 0.5, high: 1.5 },
    };
    let omega = sample_environment(&model, &lat, 4.0, 1.0, true, 2).unwrap();
    let sol = solve_corrector(&omega, DEFAULT_TOL).unwrap();
    let params = MoserParams::lattice_default(2);
    let n = 8.0;
    let consts = iteration_constants(&params, n).unwrap();
    for k in 0..=consts.k_stop.min(1) {
        let cut = build_cutoffs(k, &params, n, &lat, 0, 0.0).unwrap();
        for j in 0..2 {
            let e = energy_estimate_check(&sol, &omega, j, &cut, consts.alpha_k[k], params.p, params.p_prime, 1e-8).unwrap();
            assert!(e.lhs().is_finite() && e.rhs().is_finite() && e.c2.is_finite());
            assert!(e.lhs() > 0.0 && e.rhs() > 0.0);
        }
    }
}

/// A corrupted corrector with one tall spike inside the inner cylinder has a
/// maximal ratio well above anything seen on clean instances.
#[test]
fn spiked_corrector_breaks_the_maximal_bound() {
    let params = MoserParams::lattice_default(2);
    let model = EnvironmentModel::StaticErgodic { law: Law::Uniform { low: 1.0, high: 2.0 } };
    let n = 16.0;
    let lat = TorusLattice::new(2, 64).unwrap();
    let mut clean_max: f64 = 0.0;
    let mut last = None;
    for seed in 1..=3 {
        let omega = sample_environment(&model, &lat, 1.0, 1.0, true, seed).unwrap();
        let sol = solve_corrector(&omega, DEFAULT_TOL).unwrap();
        let u = scaled_corrector(&sol, 0, n);
        let m = maximal_ratio(&u, &omega, n, 0, 0.0, &params, 1.0).unwrap();
        assert!(m.ratio.is_finite());
        clean_max = clean_max.max(m.ratio);
        last = Some((omega, u));
    }
    let (omega, mut u) = last.unwrap();
    let spot = lat.index(&[2, 3]);
    let peak = 50.0 * u.values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    u.values[spot] = peak;
    let spiked = maximal_ratio(&u, &omega, n, 0, 0.0, &params, 1.0).unwrap();
    assert!(spiked.ratio > 5.0 * clean_max, "spiked {} vs clean {}", spiked.ratio, clean_max);
}
