use std::sync::Arc;

use distlab::interpolant::{
    interpolant_loss, interpolant_loss_grad, train_interpolant, transport_particles, GaussianVelocity,
    InterpolantBatch, InterpolantProblem, InterpolantTrainConfig, Law, VelocityField,
};
use distlab::metrics::w2_1d;
use distlab::{Activation, FeatureBank, FeatureLaw, GaussianMeasure, TimeVelocityField};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn problem(mu: f64, var: f64) -> InterpolantProblem {
    InterpolantProblem::new(GaussianMeasure::standard(1), Law::Gaussian(GaussianMeasure::scalar(mu, var).unwrap())).unwrap()
}

fn exact(mu: f64, var: f64) -> GaussianVelocity {
    GaussianVelocity::new(GaussianMeasure::standard(1), GaussianMeasure::scalar(mu, var).unwrap()).unwrap()
}

fn random_field(seed: u64, scale: f64) -> TimeVelocityField {
    let bank = Arc::new(FeatureBank::draw(2, 128, Activation::Relu, FeatureLaw::L1Sphere, seed).unwrap());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let coeffs = DMatrix::from_fn(128, 1, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        scale * z
    });
    TimeVelocityField::new(distlab::RfmFunction::new(bank, coeffs).unwrap()).unwrap()
}

#[test]
fn excess_loss_is_half_the_squared_field_error() {
    let prob = problem(2.0, 0.25);
    let vstar = exact(2.0, 0.25);
    let delta = |x: &[f64], tau: f64| 0.3 * (x[0]).cos() * (1.0 + tau);
    let perturbed = |x: &[f64], tau: f64| vec![vstar.eval(x, tau)[0] + delta(x, tau)];
    let n = 200_000;
    let gap = interpolant_loss(&perturbed, &prob, n, 11).unwrap() - interpolant_loss(&vstar, &prob, n, 11).unwrap();
    // ½‖V − V*‖² under the law of (x_τ, τ), on the same draws
    let mut rng = distlab::rng::stream(11, distlab::rng::MONTE_CARLO);
    let batch = InterpolantBatch::draw(&prob, n, &mut rng);
    let half_sq: f64 = batch.inputs.iter().map(|z| 0.5 * delta(&z[..1], z[1]).powi(2)).sum::<f64>() / n as f64;
    assert!((gap - half_sq).abs() <= 0.1 * half_sq, "gap {gap}, ½‖δ‖² {half_sq}");
}

#[test]
fn coefficient_gradient_matches_finite_differences() {
    let prob = problem(2.0, 0.25);
    let field = random_field(3, 0.5);
    let (_, g) = interpolant_loss_grad(&field, &prob, 512, 4).unwrap();
    let m = 128.0;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    for _ in 0..5 {
        let d = DMatrix::from_fn(128, 1, |_, _| StandardNormal.sample(&mut rng));
        let eps = 1e-4;
        let at = |s: f64| {
            let mut f = field.clone();
            *f.inner_mut().coeffs_mut() += &d * s;
            interpolant_loss(&f, &prob, 512, 4).unwrap()
        };
        let fd = (at(eps) - at(-eps)) / (2.0 * eps);
        let analytic = g.dot(&d) / m;
        assert!((fd - analytic).abs() <= 1e-4 * analytic.abs(), "fd {fd}, analytic {analytic}");
    }
}

#[test]
fn w2_of_pushforwards_is_bounded_by_endpoint_rms() {
    let vstar = exact(2.0, 0.25);
    let other = random_field(8, 2.0);
    let start = GaussianMeasure::standard(1).sample(2000, 5).unwrap();
    let a = transport_particles(&vstar, &start, 40).unwrap();
    let b = transport_particles(&other, &start, 40).unwrap();
    let rms = (a.points().iter().zip(b.points()).map(|(x, y)| (x[0] - y[0]).powi(2)).sum::<f64>() / 2000.0).sqrt();
    let w2 = w2_1d(&a, &b);
    assert!(w2 > 0.0 && w2 <= rms + 1e-12, "w2 {w2}, rms {rms}");
}

#[test]
fn exact_velocity_transports_to_the_target() {
    let (mu, var) = (2.0, 0.25);
    let start = GaussianMeasure::standard(1).sample(10_000, 21).unwrap();
    let pushed = transport_particles(&exact(mu, var), &start, 100).unwrap();
    let direct = GaussianMeasure::scalar(mu, var).unwrap().sample(10_000, 22).unwrap();
    assert!(w2_1d(&pushed, &direct) <= 0.03);
}

/// With `x₀, x₁ ~ N(0,1)` independent the regression target is
/// `V*(x,τ) = (2τ−1)x / ((1−τ)² + τ²)`, which is not zero off `τ = ½`.
/// Training must approach it and the flow must keep `N(0,1)` in place.
#[test]
fn equal_base_and_target_learns_the_nonzero_velocity() {
    let prob = problem(0.0, 1.0);
    let vstar = exact(0.0, 1.0);
    for (x, tau) in [(1.0f64, 0.2f64), (-0.5, 0.9)] {
        let closed = (2.0 * tau - 1.0) * x / ((1.0 - tau).powi(2) + tau * tau);
        assert!((vstar.eval(&[x], tau)[0] - closed).abs() < 1e-12);
    }
    let bank = Arc::new(FeatureBank::draw(2, 1024, Activation::Relu, FeatureLaw::L1Sphere, 1).unwrap());
    let cfg = InterpolantTrainConfig {
        batch: 256,
        dt: 2.0,
        horizon: 4000.0,
        log_every: 100,
        seed: 1,
    };
    let (field, _) = train_interpolant(&prob, bank, &cfg).unwrap();
    let mut rng = distlab::rng::stream(7, distlab::rng::MONTE_CARLO);
    let batch = InterpolantBatch::draw(&prob, 20_000, &mut rng);
    let (mut err, mut size) = (0.0, 0.0);
    for z in &batch.inputs {
        let w = vstar.eval(&z[..1], z[1])[0];
        err += (field.velocity(&z[..1], z[1]).unwrap()[0] - w).powi(2);
        size += w * w;
    }
    // ‖V*‖²_{L²(M)} = 2 − π/2
    assert!((size / 20_000.0 - (2.0 - std::f64::consts::FRAC_PI_2)).abs() < 0.03);
    assert!(err.sqrt() < 0.5 * size.sqrt(), "rms error {}", (err / 20_000.0).sqrt());
    let start = GaussianMeasure::standard(1).sample(2000, 3).unwrap();
    let out = transport_particles(&field, &start, 50).unwrap();
    assert!(out.mean()[0].abs() < 0.05);
    assert!((out.variance()[0].sqrt() - 1.0).abs() < 0.05);
}
