use std::f64::consts::TAU;
use std::sync::Arc;

use periodic_sde::dissipativity::{
    check_drift_conditions, check_generator_bound, contraction_report, two_point_generator,
};
use periodic_sde::integrate::{integrate_pair_steps, integrate_steps};
use periodic_sde::models::{build_cubic_scalar, build_linear_periodic, build_poly_model, quadratic_lyapunov, PolyTerm};
use periodic_sde::pullback::{
    initial_condition_gap, pullback_sequence, pullback_window, random_periodic_path, sup_gap,
    verify_random_periodicity,
};
use periodic_sde::scalar::same_bits;
use periodic_sde::*;
use proptest::prelude::*;

fn cubic() -> SdeModel {
    build_cubic_scalar(&CubicScalarSpec { gamma: 0.5, delta: 1.0 }).unwrap()
}

fn linear() -> SdeModel {
    build_linear_periodic(&LinearPeriodicSpec::new(TrigPoly::with_sine(1.0, 0.5), 1.0)).unwrap()
}

fn grid(steps: usize) -> GridSpec {
    GridSpec::from_period(TAU, steps).unwrap()
}

fn anti() -> SdeModel {
    let term = |c: f64, p: u32| PolyTerm {
        coef: TrigPoly::constant(c),
        powers: vec![p],
    };
    build_poly_model(&PolyModelSpec {
        dim: 1,
        noise_dim: 1,
        period: TAU,
        drift: vec![vec![term(1.0, 1)]],
        diffusion: vec![vec![vec![term(1.0, 0)]]],
    })
    .unwrap()
}

#[test]
fn pair_components_match_standalone_runs() {
    let model = cubic();
    let path = NoisePath::new(3, 1, grid(256));
    let (a, b) = integrate_pair_steps(&model, &path, -100, 300, &[1.5], &[-0.5], Scheme::Euler).unwrap();
    let sa = integrate_steps(&model, &path, -100, 300, &[1.5], Scheme::Euler).unwrap();
    let sb = integrate_steps(&model, &path, -100, 300, &[-0.5], Scheme::Euler).unwrap();
    assert_eq!(a.states, sa.states);
    assert_eq!(b.states, sb.states);
}

#[test]
fn linear_pair_gap_is_the_euler_product() {
    let model = linear();
    let g = grid(256);
    let path = NoisePath::new(4, 1, g);
    let (a, b) = integrate_pair_steps(&model, &path, 0, 256, &[1.0], &[0.0], Scheme::Euler).unwrap();
    let alpha = TrigPoly::with_sine(1.0, 0.5);
    let product: f64 = (0..256).map(|k| 1.0 - alpha.value(g.phase_time(k)) * g.dt()).product();
    let gap = a.final_state()[0] - b.final_state()[0];
    assert!((gap - product).abs() <= 1e-12, "{gap} vs {product}");
}

#[test]
fn deterministic_pullback_has_slope_two_pi() {
    let model = build_linear_periodic(&LinearPeriodicSpec::constant(1.0, 0.0, TAU)).unwrap();
    let g = grid(20_000);
    let path = NoisePath::new(1, 1, g);
    let (_, report) = pullback_sequence(&model, &path, 0, &[1.0], 4, Scheme::Euler).unwrap();
    let slope = report.slope.unwrap();
    // The Euler factor per period is (1 − dt)^Nτ, not e^{−2π}.
    let euler = g.steps_per_period() as f64 * (1.0 - g.dt()).ln();
    assert!((slope - euler).abs() < 1e-9, "{slope} vs {euler}");
    assert!((slope + TAU).abs() < 2e-2);
}

#[test]
fn pullback_matches_the_linear_oracle() {
    let model = linear();
    let g = GridSpec::with_approx_dt(TAU, 1e-3).unwrap();
    let spec = LinearPeriodicSpec::new(TrigPoly::with_sine(1.0, 0.5), 1.0);
    let oracle = LinearOracle::new(spec, 64).unwrap();
    let path = NoisePath::new(6, 1, g);
    let s = random_periodic_path(&model, &path, 0, &[0.0], &PullbackParams::new(1e-12, 60)).unwrap();
    for j in (0..s.len()).step_by(500) {
        let exact = oracle.linear_rps_exact(&path, j as i64, 5.0 * TAU).unwrap();
        assert!((s.state(j)[0] - exact).abs() <= 5.0 * g.dt(), "node {j}");
    }
}

#[test]
fn limit_does_not_depend_on_the_start() {
    let model = cubic();
    let path = NoisePath::new(9, 1, grid(628));
    let s = random_periodic_path(&model, &path, 0, &[0.0], &PullbackParams::new(1e-10, 40)).unwrap();
    let gap = initial_condition_gap(&model, &path, 0, &[3.0], &[-3.0], s.n_used, Scheme::Euler).unwrap();
    assert!(gap <= 2.0 * s.tol, "{gap}");
    let deeper = pullback_window(&model, &path, 0, s.n_used + 1, &[0.0], Scheme::Euler).unwrap();
    assert!(sup_gap(&deeper.states, &s.states, 1) <= s.last_gap);
}

#[test]
fn periodicity_identities_hold() {
    let model = cubic();
    let path = NoisePath::new(10, 1, grid(628));
    let s = random_periodic_path(&model, &path, 100, &[0.0], &PullbackParams::new(1e-8, 40)).unwrap();
    let r = verify_random_periodicity(&model, &path, &s).unwrap();
    assert_eq!(r.shift_residual, 0.0);
    assert!(r.flow_residual <= 1e-7 && r.pass());

    let quiet = build_linear_periodic(&LinearPeriodicSpec::constant(1.0, 0.0, TAU)).unwrap();
    let s = random_periodic_path(&quiet, &path, 0, &[1.0], &PullbackParams::new(1e-12, 60)).unwrap();
    let r = verify_random_periodicity(&quiet, &path, &s).unwrap();
    assert!(r.flow_residual <= 1e-12 && r.shift_residual == 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gaps_decrease_above_the_floor(seed: u64, x0 in -3.0f64..3.0) {
        let model = cubic();
        let path = NoisePath::new(seed, 1, grid(256));
        let (_, report) = pullback_sequence(&model, &path, 0, &[x0], 6, Scheme::Euler).unwrap();
        let floor = 10.0 * f64::EPSILON;
        for w in report.gaps.windows(2) {
            if w[0] > floor && w[1] > floor {
                prop_assert!(w[1] < w[0]);
            }
        }
    }

    #[test]
    fn shift_rebuild_is_bit_exact(seed: u64, phase in 0i64..128) {
        let model = cubic();
        let g = grid(128);
        let path = NoisePath::new(seed, 1, g);
        let params = PullbackParams::new(1e-9, 60);
        let a = random_periodic_path(&model, &path.shift(128), phase, &[0.0], &params).unwrap();
        let b = random_periodic_path(&model, &path, phase + 128, &[0.0], &params).unwrap();
        prop_assert!(a.states.iter().zip(&b.states).all(|(x, y)| same_bits(*x, *y)));
    }

    #[test]
    fn quadratic_generator_matches_the_specialized_formula(t in 0.0f64..TAU, x in -4.0f64..4.0, y in -4.0f64..4.0) {
        let lyap = quadratic_lyapunov(2.0).unwrap();
        for model in [cubic(), linear(), anti()] {
            let general = two_point_generator(&model, &lyap, t, &[x], &[y]).unwrap();
            let df = model.drift(t, &[x])[0] - model.drift(t, &[y])[0];
            let ds = model.diffusion(t, &[x])[0] - model.diffusion(t, &[y])[0];
            let special = 2.0 * (x - y) * df + ds * ds;
            prop_assert!((general - special).abs() <= 1e-10 * (1.0 + special.abs()));
        }
    }
}

#[test]
fn generator_examples() {
    let lyap = quadratic_lyapunov(2.0).unwrap();
    let unit = build_linear_periodic(&LinearPeriodicSpec::constant(1.0, 1.0, TAU)).unwrap();
    assert_eq!(two_point_generator(&unit, &lyap, 0.0, &[2.0], &[0.0]).unwrap(), -8.0);
    assert_eq!(two_point_generator(&cubic(), &lyap, 0.0, &[1.0], &[0.0]).unwrap(), -4.0);
    assert_eq!(two_point_generator(&cubic(), &lyap, 1.0, &[0.3], &[0.3]).unwrap(), 0.0);
}

#[test]
fn generator_bounds() {
    let sample = SampleSpec::new(5.0, 100, 100);
    let gamma = 0.5;
    let cubic_lyap = quadratic_lyapunov(2.0)
        .unwrap()
        .with_lambda(Arc::new(move |t: f64| 2.0 * (-1.0 + gamma * t.sin())));
    let r = check_generator_bound(&cubic(), &cubic_lyap, &sample).unwrap();
    assert!(r.pass && r.samples >= 10_000, "{r:?}");

    let anti_lyap = quadratic_lyapunov(2.0).unwrap().with_lambda(Arc::new(|_| -1.0));
    assert!(!check_generator_bound(&anti(), &anti_lyap, &sample).unwrap().pass);

    let linear_lyap = quadratic_lyapunov(2.0)
        .unwrap()
        .with_lambda(Arc::new(|t: f64| -2.0 * (1.0 + 0.5 * t.sin())));
    let r = check_generator_bound(&linear(), &linear_lyap, &sample).unwrap();
    assert!(r.max_violation <= 1e-12, "{}", r.max_violation);
}

#[test]
fn drift_conditions_and_contraction_agree() {
    let sample = SampleSpec::new(5.0, 128, 64);
    let cond = check_drift_conditions(&linear(), &sample).unwrap();
    for (&t, &b) in cond.times.iter().zip(&cond.beta) {
        assert!((b + 1.0 + 0.5 * t.sin()).abs() <= 1e-9);
    }
    let cond = check_drift_conditions(&cubic(), &sample).unwrap();
    for (&t, &b) in cond.times.iter().zip(&cond.beta) {
        assert!(b <= -1.0 + 0.5 * t.sin() + 1e-6);
    }
    let bound = cond.integral_beta / (2.0 * TAU) + 0.1;
    let g = grid(628);
    for seed in 0..10 {
        let r = contraction_report(&cubic(), &NoisePath::new(seed, 1, g), 0, 20, &[2.0], &[-2.0], Scheme::Euler).unwrap();
        assert!(r.slope.unwrap() <= bound, "seed {seed}");
    }
    assert!(contraction_report(&cubic(), &NoisePath::new(0, 1, g), 0, 2, &[1.0], &[1.0], Scheme::Euler).is_err());
}
