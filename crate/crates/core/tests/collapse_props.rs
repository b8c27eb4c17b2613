use distlab::collapse::{
    case1_closed_form, case1_threshold, case2_discrete, case2_modified_ode, case2_step, classify_stationary,
    detect_collapse_case1, energy, landscape_flow, landscape_state_at, Case1Outcome, Case2Outcome, Discriminator,
    Stationarity, ToyGameState, Transport1DState,
};
use distlab::interpolant::rk4;
use distlab::GridDensity;
use proptest::prelude::*;

fn case1_rk4(a0: f64, c: f64, t: f64, steps: usize) -> (f64, f64) {
    let f = |x: &[f64], _| {
        let (da, db) = ToyGameState { a: x[0], b: x[1], c, phi: Discriminator::Abs }.field();
        Ok(vec![da, db])
    };
    let x = rk4(f, &[a0, 0.0], 0.0, t, steps).unwrap();
    (x[0], x[1])
}

fn bumpy_target() -> GridDensity {
    GridDensity::from_fn(1, 64, |x| 1.0 + 0.8 * (std::f64::consts::TAU * x[0]).cos()).unwrap()
}

proptest! {
    #[test]
    fn case1_closed_form_matches_rk4(a0 in 0.2f64..4.0, c in 0.0f64..0.95, t in 0.0f64..15.0) {
        // the linear dynamics hold only while a > 0
        let first_zero = match detect_collapse_case1(a0, c, t).unwrap() {
            Case1Outcome::Collapsed { t } => t,
            Case1Outcome::Survived { .. } => f64::INFINITY,
        };
        prop_assume!(t < first_zero);
        let (a, b) = case1_closed_form(a0, c, t);
        let (ar, br) = case1_rk4(a0, c, t, 2000);
        prop_assert!((a - ar).abs() <= 1e-6 && (b - br).abs() <= 1e-6);
    }

    #[test]
    fn case1_threshold_separates_outcomes(c in 0.0f64..0.6, rel in 0.001f64..0.5) {
        let thr = case1_threshold(c);
        let period = 2.0 * std::f64::consts::PI / (1.0 - c * c).sqrt();
        let above = detect_collapse_case1(thr * (1.0 + rel), c, 50.0 * period).unwrap();
        let below = detect_collapse_case1(1.0 + (thr - 1.0) * (1.0 - rel), c, 50.0 * period).unwrap();
        // the first minimum of a sits at t = 2π/√(1−c²)
        let collapsed_in_time = matches!(above, Case1Outcome::Collapsed { t } if t <= period + 1e-3);
        let survived = matches!(below, Case1Outcome::Survived { .. });
        prop_assert!(collapsed_in_time);
        prop_assert!(survived);
    }

    #[test]
    fn case2_energy_grows_in_every_window(gamma in 0.02f64..0.2, frac in 0.0f64..1.0) {
        let c = frac * (1.0f64 / 17.0).min(gamma / 144.0);
        let run = case2_discrete(2.5, 0.0, c, gamma, 20_000, 100).unwrap();
        let h = run.log.column("H").unwrap();
        for w in h.windows(2) {
            prop_assert!(w[1] >= w[0], "H decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn landscape_flow_preserves_order_and_composition(
        raw in prop::collection::vec(0usize..40, 64..200),
        scale in 0.1f64..3.0,
    ) {
        let mut g: Vec<f64> = raw.iter().map(|k| *k as f64 * scale / 40.0).collect();
        g.sort_by(f64::total_cmp);
        let state = Transport1DState::new(g.clone(), bumpy_target()).unwrap();
        let m0 = state.conditional_mean_map();
        for t in [0.1, 1.0, 5.0] {
            let s = landscape_state_at(&state, &m0, t);
            for i in 1..g.len() {
                if g[i - 1] < g[i] {
                    prop_assert!(s.g[i - 1] < s.g[i]);
                }
            }
            let mt = s.conditional_mean_map();
            let drift = mt.iter().zip(&m0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(drift <= 1e-6, "drift {drift}");
        }
    }
}

#[test]
fn derivative_of_b_at_zero_fixes_the_prefactor() {
    // ḃ₀ = (a₀ − 1)/2 forces the (a₀ − 1)/√(1−c²) prefactor
    for (a0, c) in [(2.0, 0.3), (5.0, 0.0), (0.5, 0.7)] {
        let h = 1e-6;
        let (_, b) = case1_closed_form(a0, c, h);
        assert!((b / h - (a0 - 1.0) / 2.0).abs() < 1e-5);
        let s: f64 = (1.0 - c * c).sqrt();
        let with_a0 = a0 / s * (-c * h / 2.0).exp() * (s / 2.0 * h).sin();
        assert!((with_a0 / h - (a0 - 1.0) / 2.0).abs() > 0.4);
    }
}

#[test]
fn discrete_step_follows_modified_equation_to_second_order() {
    let (a, b, c) = (1.8, -0.3, 0.05);
    let err = |gamma: f64| {
        let (ad, bd) = case2_step(a, b, c, gamma);
        let f = |x: &[f64], _| {
            let (da, db) = case2_modified_ode(x[0], x[1], c, gamma);
            Ok(vec![da, db])
        };
        let x = rk4(f, &[a, b], 0.0, gamma, 100).unwrap();
        ((x[0] - ad).powi(2) + (x[1] - bd).powi(2)).sqrt()
    };
    let (e1, e2) = (err(0.04), err(0.02));
    // local error O(γ³)
    assert!(e2 < e1 / 6.0, "{e1} -> {e2}");
}

#[test]
fn case2_underflow_and_damped_convergence() {
    let gamma = 0.1;
    let run = case2_discrete(2.5, 0.0, gamma / 144.0, gamma, 1_000_000, 100).unwrap();
    assert!(matches!(run.outcome, Case2Outcome::Collapsed { .. }));
    assert!(run.final_state.0 < 1e-8);
    let damped = case2_discrete(2.5, 0.0, 0.05, gamma, 100_000, 1000).unwrap();
    let (a, b) = damped.final_state;
    assert!(((a - 1.0).powi(2) + b * b).sqrt() < 0.2);
    assert!(energy(a, b) < energy(2.5, 0.0));
}

#[test]
fn closed_form_landscape_matches_explicit_euler() {
    let target = bumpy_target();
    let init = Transport1DState::from_fn(1024, |z| 0.5 * z * z + 0.2, target.clone()).unwrap();
    let m0 = init.conditional_mean_map();
    let mut g = init.g.clone();
    let dt = 1e-3;
    for _ in 0..1000 {
        let s = Transport1DState::new(g.clone(), target.clone()).unwrap();
        let m = s.conditional_mean_map();
        for (gi, mi) in g.iter_mut().zip(&m) {
            *gi += dt * (mi - *gi);
        }
    }
    let closed = landscape_state_at(&init, &m0, 1.0);
    let gap = g.iter().zip(&closed.g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-3, "{gap}");
}

#[test]
fn landscape_closed_forms() {
    let target = GridDensity::uniform(1, 64).unwrap();
    let atom = Transport1DState::from_fn(4096, |_| 0.3, target.clone()).unwrap();
    let log = landscape_flow(&atom, 0.5, 20.0).unwrap();
    assert!((log.last("w2").unwrap() - 1.0 / 12f64.sqrt()).abs() < 1e-3);
    let limit = Transport1DState::new(atom.conditional_mean_map(), target.clone()).unwrap();
    assert_eq!(classify_stationary(&limit), Stationarity::GeneralizedSaddle);

    let stretch = Transport1DState::from_fn(4096, |z| 2.0 * z, target).unwrap();
    assert_eq!(classify_stationary(&stretch), Stationarity::NotStationary);
    let log = landscape_flow(&stretch, 0.25, 8.0).unwrap();
    for (t, w) in log.time().iter().zip(log.column("w2").unwrap()) {
        assert!((w - (-t).exp() / 3f64.sqrt()).abs() < 1e-3, "t = {t}");
    }
    let limit = Transport1DState::new(stretch.conditional_mean_map(), stretch.target.clone()).unwrap();
    assert_eq!(classify_stationary(&limit), Stationarity::GlobalMin);
}
