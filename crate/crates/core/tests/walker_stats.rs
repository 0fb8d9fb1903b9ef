//! Statistical oracles for the walk simulators.

use dynrcm::environment::{sample_environment, EnvironmentModel, Law};
use dynrcm::rng::{stream, walker_rng};
use dynrcm::stats::{chi_square_gof, energy_distance_test, ks_test, poisson_bins};
use dynrcm::walker::{displacements_at, ensemble, run_vsrw, simulate_slowed_to_clock, simulate_vsrw, time_change_compose};
use dynrcm::{ConductanceField, TorusLattice};

fn unit(l: usize) -> ConductanceField {
    ConductanceField::constant(TorusLattice::new(2, l).unwrap(), 1.0).unwrap()
}

#[test]
fn unit_field_holding_times_are_exponential_with_rate_four() {
    let omega = unit(16);
    let mut rng = stream(21, &[]);
    let path = simulate_vsrw(&omega, 0.0, 0, 6000.0, &mut rng).unwrap();
    let holds: Vec<f64> = path.jump_times.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(holds.len() > 20_000);
    let mean = holds.iter().sum::<f64>() / holds.len() as f64;
    assert!((mean - 0.25).abs() <= 0.01 * 0.25, "mean holding time {mean}");
    let ks = ks_test(&holds, |x| 1.0 - (-4.0 * x).exp());
    assert!(ks.passes(0.01), "KS p = {}", ks.p_value);
}

#[test]
fn unit_field_jump_counts_are_poisson() {
    let omega = unit(16);
    let t = 2.0;
    let counts = ensemble(5000, 8, |_, rng| {
        let mut c = 0u64;
        run_vsrw(&omega, 0.0, 0, t, rng, |_| c += 1).unwrap();
        c
    });
    let kmax = 18;
    let mut observed = vec![0u64; kmax + 1];
    for c in counts {
        observed[(c as usize).min(kmax)] += 1;
    }
    let expected = poisson_bins(4.0 * t, kmax);
    let gof = chi_square_gof(&observed, &expected, 0).unwrap();
    assert!(gof.passes(0.01), "chi-square p = {}", gof.p_value);
}

#[test]
fn exits_follow_the_conductances() {
    let lat = TorusLattice::new(2, 8).unwrap();
    let model = EnvironmentModel::StaticErgodic { law: Law::Uniform { low: 0.2, high: 3.0 } };
    let omega = sample_environment(&model, &lat, 1.0, 1.0, true, 4).unwrap();
    let x = lat.index(&[3, 3]);
    let w = omega.weights(0);
    // neighbours in the order (+e1, −e1, +e2, −e2)
    let rates: Vec<f64> = (0..2)
        .flat_map(|j| [w[lat.edge(x, j)], w[lat.edge(lat.neighbor(x, j, false), j)]])
        .collect();
    let total: f64 = rates.iter().sum();
    let mut observed = vec![0u64; 4];
    for id in 0..8000 {
        let mut rng = walker_rng(17, id);
        let mut first = None;
        run_vsrw(&omega, 0.0, x, 50.0, &mut rng, |j| {
            if first.is_none() {
                first = Some(2 * j.axis + usize::from(!j.forward));
            }
        })
        .unwrap();
        observed[first.unwrap()] += 1;
    }
    let probs: Vec<f64> = rates.iter().map(|r| r / total).collect();
    let gof = chi_square_gof(&observed, &probs, 0).unwrap();
    assert!(gof.passes(0.01), "chi-square p = {}", gof.p_value);
}

/// The walk in `τ_{s,z}ω` from `(0, x)` and the walk in `ω` from `(s, x+z)`,
/// driven by the same stream, make the same moves at the same offsets.
#[test]
fn shifted_environment_couples_exactly() {
    let lat = TorusLattice::new(2, 10).unwrap();
    let model = EnvironmentModel::TimeRefresh { law: Law::Uniform { low: 0.3, high: 2.5 }, rate: 0.8 };
    let omega = sample_environment(&model, &lat, 8.0, 0.5, true, 6).unwrap();
    let z = lat.index(&[4, 7]);
    let s = 1.5;
    let shifted = omega.shift(s, z).unwrap();
    for id in 0..20 {
        let x = (id as usize * 13) % lat.num_vertices();
        let a = simulate_vsrw(&shifted, 0.0, x, 6.0, &mut walker_rng(2, id)).unwrap();
        let b = simulate_vsrw(&omega, s, lat.translate(x, z), s + 6.0, &mut walker_rng(2, id)).unwrap();
        assert_eq!(a.positions.len(), b.positions.len());
        for (p, q) in a.positions.iter().zip(&b.positions) {
            assert_eq!(lat.translate(*p, z), *q);
        }
        for (p, q) in a.jump_times.iter().zip(&b.jump_times) {
            assert!((p + s - q).abs() <= 1e-9);
        }
    }
}

#[test]
fn time_changed_slow_walk_has_the_same_marginal() {
    let lat = TorusLattice::new(2, 32).unwrap();
    let model = EnvironmentModel::TimeRefresh { law: Law::Uniform { low: 0.5, high: 3.0 }, rate: 0.5 };
    let omega = sample_environment(&model, &lat, 6.0, 0.5, false, 12).unwrap();
    let x = lat.index(&[16, 16]);
    let t = 5.0;
    let paths = 3000;
    let direct: Vec<Vec<f64>> = ensemble(paths, 40, |_, rng| {
        displacements_at(&omega, 0.0, x, &[t], rng).unwrap()[0].iter().map(|&c| c as f64).collect()
    });
    let composed: Vec<Vec<f64>> = ensemble(paths, 41, |_, rng| {
        let y = simulate_slowed_to_clock(&omega, 0.0, x, t, rng).unwrap();
        let path = time_change_compose(&y);
        let end = path.position_at(t).unwrap();
        (0..2)
            .map(|j| {
                let mut d = lat.coord(end, j) as f64 - 16.0;
                if d > 16.0 {
                    d -= 32.0;
                } else if d < -16.0 {
                    d += 32.0;
                }
                d
            })
            .collect()
    });
    let test = energy_distance_test(&direct, &composed, 199, 3);
    assert!(test.passes(0.01), "energy distance p = {}", test.p_value);
}

#[test]
fn windows_outside_a_finite_field_are_rejected() {
    let lat = TorusLattice::new(2, 8).unwrap();
    let model = EnvironmentModel::TimeRefresh { law: Law::Constant { value: 1.0 }, rate: 1.0 };
    let omega = sample_environment(&model, &lat, 4.0, 1.0, false, 0).unwrap();
    let mut rng = stream(0, &[]);
    assert!(simulate_vsrw(&omega, 0.0, 0, 4.0, &mut rng).is_ok());
    assert!(simulate_vsrw(&omega, 0.0, 0, 4.5, &mut rng).is_err());
    assert!(simulate_vsrw(&omega, -1.0, 0, 2.0, &mut rng).is_err());
}
