use dynrcm::environment::{moment_condition_check, sample_environment, EnvironmentModel, Law, MomentExponents};
use dynrcm::lattice::TorusLattice;
use dynrcm::moser::{build_cutoffs, tilde_pow, MoserParams};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

prop_compose! {
    fn instance()(dim in 2usize..=3, half in 2usize..=4)
        (side in Just(2 * half), dim in Just(dim),
         f in prop::collection::vec(-5.0f64..5.0, (2 * half).pow(dim as u32)),
         g in prop::collection::vec(-5.0f64..5.0, (2 * half).pow(dim as u32)),
         field in prop::collection::vec(-5.0f64..5.0, dim * (2 * half).pow(dim as u32)),
         omega in prop::collection::vec(0.01f64..10.0, dim * (2 * half).pow(dim as u32)))
        -> (TorusLattice, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)
    {
        (TorusLattice::new(dim, side).unwrap(), f, g, field, omega)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_and_divergence_are_adjoint((lat, f, _g, field, _w) in instance()) {
        let lhs: f64 = lat.grad(&f).iter().zip(&field).map(|(a, b)| a * b).sum();
        let rhs: f64 = f.iter().zip(&lat.div(&field)).map(|(a, b)| a * b).sum();
        prop_assert!(close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn generator_is_minus_divergence_of_flux((lat, f, _g, _field, w) in instance()) {
        let lf = lat.generator_apply(&w, &f).unwrap();
        let flux: Vec<f64> = lat.grad(&f).iter().zip(&w).map(|(a, b)| a * b).collect();
        let minus_div = lat.div(&flux);
        for (a, b) in lf.iter().zip(&minus_div) {
            prop_assert!(close(*a, -*b, 1e-12), "{a} vs {}", -b);
        }
    }

    #[test]
    fn generator_conserves_mass((lat, f, _g, _field, w) in instance()) {
        let lf = lat.generator_apply(&w, &f).unwrap();
        let scale: f64 = lf.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!(lf.iter().sum::<f64>().abs() <= 1e-12 * scale);
    }

    #[test]
    fn dirichlet_form_is_symmetric_and_matches_generator((lat, f, g, _field, w) in instance()) {
        let efg = lat.dirichlet_form(&w, &f, &g).unwrap();
        let egf = lat.dirichlet_form(&w, &g, &f).unwrap();
        let via_gen: f64 = -f.iter().zip(&lat.generator_apply(&w, &g).unwrap()).map(|(a, b)| a * b).sum::<f64>();
        prop_assert!(close(efg, egf, 1e-12));
        prop_assert!(close(efg, via_gen, 1e-12), "{efg} vs {via_gen}");
        prop_assert!(lat.dirichlet_form(&w, &f, &f).unwrap() >= 0.0);
    }

    #[test]
    fn signed_powers_square_and_are_odd(a in -1e3f64..1e3, alpha in 0.05f64..6.0) {
        let t = tilde_pow(a, alpha);
        prop_assert_eq!(tilde_pow(-a, alpha), -t);
        prop_assert!(close(t * t, tilde_pow(a, 2.0 * alpha).abs(), 1e-12));
        prop_assert!(close(tilde_pow(t, 1.0 / alpha), a, 1e-10));
    }

    #[test]
    fn shifts_compose(s1 in -6i64..6, s2 in -6i64..6, z1 in 0usize..64, z2 in 0usize..64, periodic: bool, seed in 0u64..1000) {
        let lat = TorusLattice::new(2, 8).unwrap();
        let model = EnvironmentModel::TimeRefresh { law: Law::Uniform { low: 0.5, high: 2.0 }, rate: 0.7 };
        let dt = 0.5;
        let omega = sample_environment(&model, &lat, 30.0, dt, periodic, seed).unwrap();
        let (a, b) = (s1 as f64 * dt, s2 as f64 * dt);
        let composed = omega.shift(a, z1).unwrap().shift(b, z2).unwrap();
        let direct = omega.shift(a + b, lat.translate(z1, z2)).unwrap();
        prop_assert!(composed.same_values(&direct));
        let back = omega.shift(a, z1).unwrap().shift(-a, lat.negate(z1)).unwrap();
        prop_assert!(back.same_values(&omega));
    }

    #[test]
    fn cutoffs_satisfy_their_invariants(k in 0usize..4, m in 1usize..=2, seed in 0usize..1000) {
        let n = 16 * m;
        let params = MoserParams::lattice_default(2);
        let lat = TorusLattice::new(2, 2 * n + 4).unwrap();
        let x0 = seed % lat.num_vertices();
        let c = build_cutoffs(k, &params, n as f64, &lat, x0, 3.0).unwrap();
        prop_assert!(c.check(&lat).is_ok());
        prop_assert!(c.eta.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(c.zeta(c.zeta_one() - 1.0) == 1.0 && c.zeta(c.zeta_zero() + 1.0) == 0.0);
    }

    #[test]
    fn dyadic_radii_telescope(sigma in 0.55f64..1.0, frac in 0.0f64..0.9, k in 0usize..30) {
        let params = MoserParams { sigma, sigma_prime: 0.5 + frac * (sigma - 0.5), ..MoserParams::lattice_default(2) };
        let (s, s1) = (params.sigma_k(k), params.sigma_k(k + 1));
        prop_assert!(close(s - s1, params.tau_k(k), 1e-12));
        prop_assert!(close(params.tau_k(k), (params.sigma - params.sigma_prime) * 2f64.powi(-(k as i32) - 1), 1e-12));
        prop_assert!(s1 < s && s1 > params.sigma_prime);
    }

    #[test]
    fn moment_condition_is_monotone(
        p in 1.01f64..50.0, pp in 1.01f64..50.0, q in 1.01f64..50.0, qp in 1.01f64..50.0,
        which in 0usize..4, bump in 0.0f64..20.0, d in 1usize..=4,
    ) {
        let e = MomentExponents { p, p_prime: pp, q, q_prime: qp, d };
        let mut bigger = e;
        match which {
            0 => bigger.p += bump,
            1 => bigger.p_prime += bump,
            2 => bigger.q += bump,
            _ => bigger.q_prime += bump,
        }
        let (a, b) = (moment_condition_check(&e).unwrap(), moment_condition_check(&bigger).unwrap());
        prop_assert!(b.margin >= a.margin - 1e-15);
        prop_assert!(!a.holds || b.holds);
    }
}
