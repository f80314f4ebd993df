use std::f64::consts::TAU;

use proptest::prelude::*;

use stochastic_hamiltonian::averaging::{analytic_ergodic_moment, torus_average, ActionAngleChart};
use stochastic_hamiltonian::cli::{ExperimentConfig, ExperimentKind};
use stochastic_hamiltonian::diagnostics::exact_linear_oscillator;
use stochastic_hamiltonian::ensemble::Ensemble;
use stochastic_hamiltonian::field::{fd_gradient, FnField, Polynomial};
use stochastic_hamiltonian::hamiltonian::{
    apply_j, harmonic_family, linear_oscillator, symplectic_form, SystemSpec,
};
use stochastic_hamiltonian::levy::{
    characteristic_exponent_real, sample_noise_path, JumpDistribution, JumpSpec, LevyTriplet,
};
use stochastic_hamiltonian::marcus::{
    integrate, marcus_jump_map, IntegratorConfig, Trajectory, DEFAULT_JUMP_SUBSTEPS,
};
use stochastic_hamiltonian::rng::StreamId;

fn distribution() -> impl Strategy<Value = JumpDistribution> {
    prop_oneof![
        (-2.0..0.0f64, 0.1..2.0f64)
            .prop_map(|(low, w)| JumpDistribution::Uniform { low, high: low + w }),
        (-1.0..1.0f64, 0.1..1.5f64)
            .prop_map(|(mean, std_dev)| JumpDistribution::Normal { mean, std_dev }),
        (0.05..1.0f64).prop_map(|scale| JumpDistribution::Laplace { scale }),
        (0.05..1.5f64).prop_map(|size| JumpDistribution::Symmetric { size }),
        (0.05..1.0f64).prop_map(|scale| JumpDistribution::Cauchy { scale }),
    ]
}

fn jump_spec(dim: usize) -> impl Strategy<Value = JumpSpec> {
    prop_oneof![
        Just(JumpSpec::None),
        (0.1..5.0f64, distribution()).prop_map(|(rate, d)| JumpSpec::compound_poisson(rate, d)),
        prop::collection::vec(
            (prop::collection::vec(-1.5..1.5f64, dim), 0.1..4.0f64),
            1..4
        )
        .prop_map(JumpSpec::atoms),
    ]
}

/// Random polynomial in `2n` variables of total degree at most `deg`.
fn polynomial(n: usize, deg: u32) -> impl Strategy<Value = Polynomial> {
    let m = 2 * n;
    prop::collection::vec((prop::collection::vec(0..=deg, m), -1.0..1.0f64), 1..6).prop_map(
        move |terms| {
            let terms: Vec<(Vec<u32>, f64)> = terms
                .into_iter()
                .map(|(mut e, c)| {
                    while e.iter().sum::<u32>() > deg {
                        let i = e.iter().position(|&v| v > 0).unwrap();
                        e[i] -= 1;
                    }
                    (e, c)
                })
                .collect();
            Polynomial::new(m, terms).unwrap()
        },
    )
}

fn point(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5..1.5f64, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn characteristic_exponent_real_part_is_nonpositive(
        spec in jump_spec(2),
        u in prop::collection::vec(-10.0..10.0f64, 2),
    ) {
        prop_assert!(characteristic_exponent_real(&spec, &u) <= 1e-14);
    }

    #[test]
    fn noise_paths_are_reproducible(seed in any::<u64>(), path in 0u64..1000, spec in jump_spec(1)) {
        let t = LevyTriplet::standard(1, spec);
        let a = sample_noise_path(&t, 1.0, 0.05, StreamId::new(seed, path)).unwrap();
        let b = sample_noise_path(&t, 1.0, 0.05, StreamId::new(seed, path)).unwrap();
        prop_assert_eq!(&a, &b);
        let c = sample_noise_path(&t, 1.0, 0.05, StreamId::new(seed, path + 1)).unwrap();
        prop_assert_ne!(a.increment(0), c.increment(0));
    }

    #[test]
    fn rescaling_keeps_jump_sizes(seed in any::<u64>(), eps in 0.01..1.0f64) {
        let t = LevyTriplet::standard(2, JumpSpec::compound_poisson(4.0, JumpDistribution::Normal { mean: 0.0, std_dev: 1.0 }));
        let a = sample_noise_path(&t, 2.0, 0.01, StreamId::new(seed, 0)).unwrap();
        let b = a.time_rescaled(eps).unwrap();
        prop_assert_eq!(a.jumps().len(), b.jumps().len());
        for (x, y) in a.jumps().iter().zip(b.jumps()) {
            prop_assert_eq!(x.size, y.size);
            prop_assert!((y.time - eps * x.time).abs() <= 1e-12 * x.time.max(1.0));
        }
        prop_assert!((b.horizon() - eps * a.horizon()).abs() < 1e-12);
    }

    #[test]
    fn symplectic_form_of_fields_is_the_bracket(f in polynomial(2, 3), g in polynomial(2, 3), x in point(4)) {
        let sys = SystemSpec::Polynomial { n: 2, hamiltonians: vec![f, g] }.build().unwrap();
        let vf = sys.vector_field(0, &x).unwrap();
        let vg = sys.vector_field(1, &x).unwrap();
        let omega = symplectic_form(&vf, &vg).unwrap();
        let bracket = sys.poisson_bracket(0, 1, &x).unwrap();
        let scale = omega.abs().max(bracket.abs()).max(1.0);
        prop_assert!((omega - bracket).abs() <= 1e-10 * scale, "{} vs {}", omega, bracket);
    }

    #[test]
    fn hamiltonian_fields_are_tangent_to_level_sets(h in polynomial(2, 4), x in point(4)) {
        let sys = SystemSpec::Polynomial { n: 2, hamiltonians: vec![h.clone()] }.build().unwrap();
        let v = sys.vector_field(0, &x).unwrap();
        let g = fd_gradient(&h, &x, 1e-6);
        let dh: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        let scale = g.iter().map(|a| a * a).sum::<f64>().max(1.0);
        prop_assert!(dh.abs() <= 1e-7 * scale);
        prop_assert!(sys.poisson_bracket(0, 0, &x).unwrap().abs() <= 1e-12 * scale);
    }

    #[test]
    fn vector_field_is_j_times_gradient(h in polynomial(1, 4), x in point(2)) {
        let sys = SystemSpec::Polynomial { n: 1, hamiltonians: vec![h.clone()] }.build().unwrap();
        let v = sys.vector_field(0, &x).unwrap();
        let mut jg = vec![0.0; 2];
        let steps = [1e-2, 5e-3];
        let errs: Vec<f64> = steps
            .iter()
            .map(|&s| {
                apply_j(&fd_gradient(&h, &x, s), &mut jg);
                jg.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .collect();
        // central differences: the error falls like h² until roundoff
        prop_assert!(errs[1] <= 0.3 * errs[0] + 1e-9, "{:?}", errs);
    }

    #[test]
    fn jump_map_conserves_a_quadratic_hamiltonian(h in polynomial(2, 2), x in point(4), dz in -1.0..1.0f64) {
        let sys = SystemSpec::Polynomial { n: 2, hamiltonians: vec![h] }.build().unwrap();
        let y = marcus_jump_map(&sys.field(0).unwrap(), &x, dz, DEFAULT_JUMP_SUBSTEPS).unwrap();
        let (a, b) = (sys.energy(0, &x).unwrap(), sys.energy(0, &y).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{} -> {}", a, b);
    }

    #[test]
    fn jump_map_is_fourth_order_in_substeps(h in polynomial(2, 3), x in point(4), dz in -1.0..1.0f64) {
        let sys = SystemSpec::Polynomial { n: 2, hamiltonians: vec![h] }.build().unwrap();
        let field = sys.field(0).unwrap();
        let run = |substeps| marcus_jump_map(&field, &x, dz, substeps).ok().filter(|y| y.iter().all(|v| v.abs() < 10.0));
        // cubic Hamiltonians can escape to infinity within a unit flow time
        let (Some(exact), Some(coarse), Some(fine)) = (run(4096), run(32), run(64)) else { return Ok(()) };
        let err = |y: &[f64]| y.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let floor = 1e-11 * exact.iter().fold(1.0, |m: f64, v| m.max(v.abs()));
        prop_assert!(err(&fine) <= err(&coarse) / 8.0 + floor, "{} then {}", err(&coarse), err(&fine));
    }

    #[test]
    fn linear_jump_maps_compose(
        m in prop::collection::vec(-1.0..1.0f64, 9),
        x in point(3),
        a in -1.0..1.0f64,
        b in -1.0..1.0f64,
    ) {
        let f = FnField::linear(3, m);
        let whole = marcus_jump_map(&f, &x, a + b, DEFAULT_JUMP_SUBSTEPS).unwrap();
        let half = marcus_jump_map(&f, &x, a, DEFAULT_JUMP_SUBSTEPS).unwrap();
        let split = marcus_jump_map(&f, &half, b, DEFAULT_JUMP_SUBSTEPS).unwrap();
        for (u, v) in whole.iter().zip(&split) {
            prop_assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0));
        }
    }

    #[test]
    fn torus_average_is_exact_on_trig_polynomials(
        coeffs in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..6),
        k in prop::collection::vec((0i32..8, 0i32..8), 6),
        c0 in -2.0..2.0f64,
    ) {
        let terms: Vec<_> = coeffs.iter().zip(&k).collect();
        let g = |t: &[f64]| -> f64 {
            c0 + terms
                .iter()
                .map(|((a, b), (k1, k2))| {
                    let phase = *k1 as f64 * t[0] - *k2 as f64 * t[1];
                    if *k1 == 0 && *k2 == 0 { 0.0 } else { a * phase.cos() + b * phase.sin() }
                })
                .sum::<f64>()
        };
        prop_assert!((torus_average(2, 9, g) - c0).abs() <= 1e-12);
    }

    #[test]
    fn action_angle_chart_preserves_integrals(
        w in prop::collection::vec(0.3..3.0f64, 2),
        theta in prop::collection::vec(0.0..TAU, 2),
        actions in prop::collection::vec(0.01..3.0f64, 2),
    ) {
        let chart = ActionAngleChart::new(w.clone(), 1e-6).unwrap();
        let sys = harmonic_family(&w).unwrap();
        let x = chart.from_action_angle(&theta, &actions).unwrap();
        let h = sys.first_integrals(&x);
        let hc = chart.integrals(&actions);
        for (a, b) in h.iter().zip(&hc) {
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-3));
        }
        let (t2, i2) = chart.to_action_angle(&x).unwrap();
        for (a, b) in t2.iter().zip(&theta) {
            let d = (a - b).rem_euclid(TAU);
            prop_assert!(d.min(TAU - d) <= 1e-9);
        }
        for (a, b) in i2.iter().zip(&actions) {
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn ergodic_variance_is_nonnegative(
        spec in jump_spec(2),
        u in prop::collection::vec(0.2..3.0f64, 2),
        t in 0.05..500.0f64,
    ) {
        let (mean, second) = analytic_ergodic_moment(&u, t, &spec).unwrap();
        prop_assert!((0.0..=1.0).contains(&mean));
        prop_assert!(second - mean * mean >= -1e-12, "{} {}", mean, second);
    }

    #[test]
    fn first_integrals_survive_jumps(seed in any::<u64>(), x0 in point(4)) {
        let sys = harmonic_family(&[1.0, 1.7]).unwrap();
        let t = LevyTriplet::standard(2, JumpSpec::compound_poisson(6.0, JumpDistribution::Normal { mean: 0.0, std_dev: 1.0 }));
        let noise = sample_noise_path(&t, 2.0, 0.01, StreamId::new(seed, 0)).unwrap();
        let traj = integrate(&sys, &noise, &x0, &IntegratorConfig::converged_midpoint(0.01)).unwrap();
        let h0 = sys.first_integrals(&x0);
        let scale = h0.iter().fold(1.0f64, |a, h| a.max(h.abs()));
        for x in traj.states() {
            for (a, b) in sys.first_integrals(x).iter().zip(&h0) {
                prop_assert!((a - b).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn refining_at_jumps_does_not_move_the_endpoint(seed in any::<u64>()) {
        let sys = linear_oscillator(0.8).unwrap();
        let t = LevyTriplet::standard(1, JumpSpec::compound_poisson(5.0, JumpDistribution::Uniform { low: -1.0, high: 1.0 }));
        let noise = sample_noise_path(&t, 1.0, 0.01, StreamId::new(seed, 0)).unwrap();
        let cfg = IntegratorConfig::new(0.01);
        let a = integrate(&sys, &noise, &[1.0, 0.0], &cfg).unwrap();
        let b = integrate(&sys, &noise.refine_at_jumps(), &[1.0, 0.0], &cfg).unwrap();
        for (u, v) in a.final_state().iter().zip(b.final_state()) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn integrator_tracks_the_exact_oscillator(seed in any::<u64>()) {
        let t = LevyTriplet::standard(1, JumpSpec::atoms([(vec![0.5], 4.0)]));
        let noise = sample_noise_path(&t, 2.0, 2e-3, StreamId::new(seed, 0)).unwrap();
        let exact = exact_linear_oscillator(&noise, [1.0, 0.0], 1.0, None).unwrap();
        let sys = linear_oscillator(1.0).unwrap();
        let num = integrate(&sys, &noise, &[1.0, 0.0], &IntegratorConfig::new(2e-3)).unwrap();
        let err = exact.final_state().iter().zip(num.final_state()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-3, "{}", err);
    }

    #[test]
    fn trajectories_round_trip_through_both_formats(seed in any::<u64>()) {
        let sys = linear_oscillator(1.0).unwrap();
        let t = LevyTriplet::standard(1, JumpSpec::atoms([(vec![0.3], 3.0)]));
        let noise = sample_noise_path(&t, 0.5, 0.01, StreamId::new(seed, 3)).unwrap();
        let traj = integrate(&sys, &noise, &[0.2, -0.7], &IntegratorConfig::new(0.01)).unwrap();
        let mut bin = Vec::new();
        traj.write_binary(&mut bin).unwrap();
        prop_assert_eq!(Trajectory::read_binary(bin.as_slice()).unwrap(), traj.clone());
        let mut csv = Vec::new();
        traj.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        for (line, i) in text.lines().skip(1).zip(0..) {
            let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            prop_assert_eq!(cols[0], traj.times()[i]);
            prop_assert_eq!(&cols[1..3], traj.state(i));
        }
    }

    #[test]
    fn ensemble_order_does_not_depend_on_threads(n in 1usize..64, threads in 1usize..9) {
        let f = |i: u64| Ok(i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let serial = Ensemble::serial().map(n, f).unwrap();
        let pooled = Ensemble::new(Some(threads)).map(n, f).unwrap();
        prop_assert_eq!(serial, pooled);
    }

    #[test]
    fn resolved_configs_are_fixed_points(kind in 0usize..6, seed in any::<u64>(), paths in 1usize..50) {
        let mut c = ExperimentConfig::builtin(ExperimentKind::ALL[kind]);
        c.seed = Some(seed);
        c.paths = Some(paths);
        let r = c.resolve().unwrap();
        let text = r.to_toml();
        let back = ExperimentConfig::from_toml_str(&text, "resolved").unwrap();
        prop_assert_eq!(back.resolve().unwrap(), r);
    }
}
