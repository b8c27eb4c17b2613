//! Fixed-generator models: stochastic-interpolant flow matching and
//! score-based diffusion.
//!
//! The interpolant `X_τ = (1−τ)X₀ + τX₁` between independent `X₀ ~ base` and
//! `X₁ ~ target` has the velocity `V*(x,τ) = E[X₁ − X₀ | X_τ = x]`, and the flow
//! `dx/dτ = V*(x,τ)` carries the base onto the target. `V*` is the minimizer
//! of the regression loss `E ½‖V(X_τ,τ) − (X₁−X₀)‖²`.
//!
//! The diffusion side uses the variance-preserving process
//! `dX = −(β/2)X dτ + √β dW` and generates by integrating the reverse-time SDE
//! or ODE driven by a score `s ≈ ∇ log P_τ`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::{GaussianMeasure, ParticleMeasure};
use crate::rfm::{Activation, FeatureBank, FeatureLaw, RfmFunction, TimeVelocityField};
use crate::rng::{self, Rng};
use crate::trajectory::TrajectoryLog;

/// Smallest diffusion time sampled by [`score_matching_loss`].
pub const TAU_MIN: f64 = 1e-3;

/// A time-dependent vector field `(x, τ) ↦ V(x, τ)`.
pub trait VelocityField: Sync {
    fn velocity(&self, x: &[f64], tau: f64) -> Result<Vec<f64>>;
}

impl VelocityField for TimeVelocityField {
    fn velocity(&self, x: &[f64], tau: f64) -> Result<Vec<f64>> {
        self.evaluate(x, tau)
    }
}

impl<F> VelocityField for F
where
    F: Fn(&[f64], f64) -> Vec<f64> + Sync,
{
    fn velocity(&self, x: &[f64], tau: f64) -> Result<Vec<f64>> {
        Ok(self(x, tau))
    }
}

/// Target law of a generative problem.
#[derive(Debug, Clone, PartialEq)]
pub enum Law {
    Gaussian(GaussianMeasure),
    Particles(ParticleMeasure),
}

impl Law {
    pub fn dim(&self) -> usize {
        match self {
            Law::Gaussian(g) => g.dim(),
            Law::Particles(p) => p.dim(),
        }
    }

    pub(crate) fn draw(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            Law::Gaussian(g) => g.draw(rng),
            Law::Particles(p) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (x, w) in p.points().iter().zip(p.weights()) {
                    acc += w;
                    if u < acc {
                        return x.clone();
                    }
                }
                p.points()[p.len() - 1].clone()
            }
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<ParticleMeasure> {
        if n == 0 {
            return Err(invalid("sample size must be at least 1"));
        }
        let mut rng = rng::stream(seed, rng::SAMPLE);
        ParticleMeasure::equal_weight((0..n).map(|_| self.draw(&mut rng)).collect())
    }
}

/// Product coupling of a Gaussian base and a target.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolantProblem {
    pub base: GaussianMeasure,
    pub target: Law,
}

impl InterpolantProblem {
    pub fn new(base: GaussianMeasure, target: Law) -> Result<Self> {
        if base.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                got: target.dim(),
            });
        }
        Ok(Self { base, target })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }
}

/// Closed-form `V*` for a Gaussian base and a Gaussian target with diagonal
/// covariances, coordinate by coordinate:
/// `V*(x,τ) = (μ₁−μ₀) + (τσ₁² − (1−τ)σ₀²)/((1−τ)²σ₀² + τ²σ₁²) · (x − m_τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianVelocity {
    base: GaussianMeasure,
    target: GaussianMeasure,
}

impl GaussianVelocity {
    pub fn new(base: GaussianMeasure, target: GaussianMeasure) -> Result<Self> {
        if base.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                got: target.dim(),
            });
        }
        Ok(Self { base, target })
    }

    pub fn eval(&self, x: &[f64], tau: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let (m0, v0) = (self.base.mean()[k], self.base.variance()[k]);
                let (m1, v1) = (self.target.mean()[k], self.target.variance()[k]);
                let m_tau = (1.0 - tau) * m0 + tau * m1;
                let v_tau = (1.0 - tau).powi(2) * v0 + tau * tau * v1;
                (m1 - m0) + (tau * v1 - (1.0 - tau) * v0) / v_tau * (x[k] - m_tau)
            })
            .collect()
    }
}

impl VelocityField for GaussianVelocity {
    fn velocity(&self, x: &[f64], tau: f64) -> Result<Vec<f64>> {
        if x.len() != self.base.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.base.dim(),
                got: x.len(),
            });
        }
        Ok(self.eval(x, tau))
    }
}

/// Monte-Carlo estimate of `V*(x, τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct McVelocity {
    pub value: Vec<f64>,
    /// Effective sample size `(Σw)²/Σw²` of the importance weights.
    pub n_eff: f64,
}

/// Self-normalized importance estimate of `E[X₁ − X₀ | X_τ = x]`.
///
/// Given `X_τ = x` and `X₁ = x₁`, the base point is pinned to
/// `x₀ = (x − τx₁)/(1−τ)`, so the conditional law of `X₁` has density
/// proportional to `p₀(x₀(x₁))` against the target. Draws of `x₁` from the
/// target are weighted by that base density.
pub fn target_velocity_mc(
    prob: &InterpolantProblem,
    x: &[f64],
    tau: f64,
    n_mc: usize,
    seed: u64,
) -> Result<McVelocity> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(invalid("τ must lie in (0,1)"));
    }
    if n_mc == 0 {
        return Err(invalid("n_mc must be at least 1"));
    }
    if x.len() != prob.dim() {
        return Err(Error::DimensionMismatch {
            expected: prob.dim(),
            got: x.len(),
        });
    }
    let mut rng = rng::stream(seed, rng::MONTE_CARLO);
    let draws: Vec<(Vec<f64>, f64)> = (0..n_mc)
        .map(|_| {
            let x1 = prob.target.draw(&mut rng);
            let x0: Vec<f64> = x
                .iter()
                .zip(&x1)
                .map(|(xi, x1i)| (xi - tau * x1i) / (1.0 - tau))
                .collect();
            let lw = prob.base.log_density(&x0);
            (x1, lw)
        })
        .collect();
    let lmax = draws.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
    if !lmax.is_finite() {
        return Err(Error::UnsupportedPoint);
    }
    let weights: Vec<f64> = draws.iter().map(|d| (d.1 - lmax).exp()).collect();
    let total: f64 = weights.iter().sum();
    let total_sq: f64 = weights.iter().map(|w| w * w).sum();
    let mut value = vec![0.0; x.len()];
    for ((x1, _), w) in draws.iter().zip(&weights) {
        for (k, v) in value.iter_mut().enumerate() {
            *v += w * (x1[k] - x[k]) / (1.0 - tau);
        }
    }
    value.iter_mut().for_each(|v| *v /= total);
    Ok(McVelocity {
        value,
        n_eff: total * total / total_sq,
    })
}

/// Regression samples `z = (x_τ, τ)` with targets `x₁ − x₀`.
#[derive(Debug, Clone)]
pub struct InterpolantBatch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl InterpolantBatch {
    pub fn draw(prob: &InterpolantProblem, n: usize, rng: &mut Rng) -> Self {
        let mut inputs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let tau: f64 = rng.random();
            let x0 = prob.base.draw(rng);
            let x1 = prob.target.draw(rng);
            let mut z: Vec<f64> = x0
                .iter()
                .zip(&x1)
                .map(|(a, b)| (1.0 - tau) * a + tau * b)
                .collect();
            z.push(tau);
            inputs.push(z);
            targets.push(x1.iter().zip(&x0).map(|(b, a)| b - a).collect());
        }
        Self { inputs, targets }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// `½ mean ‖V(z) − target‖²` for any field.
    pub fn loss_of(&self, v: &dyn VelocityField) -> Result<f64> {
        let mut total = 0.0;
        for (z, y) in self.inputs.iter().zip(&self.targets) {
            let (x, tau) = z.split_at(z.len() - 1);
            let vx = v.velocity(x, tau[0])?;
            total += 0.5 * vx.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        Ok(total / self.len() as f64)
    }

    /// Loss and coefficient gradient `G = Φᵀ R / n` of an RFM field, where `R`
    /// holds the residuals `V(z_i) − target_i`.
    pub fn loss_and_grad(&self, v: &TimeVelocityField) -> Result<(f64, DMatrix<f64>)> {
        let phi = v.inner().bank().feature_matrix(&self.inputs)?;
        let mut resid = v.inner().evaluate_features(&phi);
        for (i, y) in self.targets.iter().enumerate() {
            for (k, yk) in y.iter().enumerate() {
                resid[(i, k)] -= yk;
            }
        }
        let n = self.len() as f64;
        let loss = 0.5 * resid.norm_squared() / n;
        let grad = phi.tr_mul(&resid) / n;
        Ok((loss, grad))
    }
}

/// Monte-Carlo interpolant regression loss with `n_mc` draws of `(τ, x₀, x₁)`.
pub fn interpolant_loss(
    v: &dyn VelocityField,
    prob: &InterpolantProblem,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if n_mc == 0 {
        return Err(invalid("n_mc must be at least 1"));
    }
    let mut rng = rng::stream(seed, rng::MONTE_CARLO);
    InterpolantBatch::draw(prob, n_mc, &mut rng).loss_of(v)
}

/// Coefficient gradient of [`interpolant_loss`] for an RFM field, on the same
/// Monte-Carlo draws.
pub fn interpolant_loss_grad(
    v: &TimeVelocityField,
    prob: &InterpolantProblem,
    n_mc: usize,
    seed: u64,
) -> Result<(f64, DMatrix<f64>)> {
    let mut rng = rng::stream(seed, rng::MONTE_CARLO);
    InterpolantBatch::draw(prob, n_mc, &mut rng).loss_and_grad(v)
}

#[derive(Debug, Clone)]
pub struct InterpolantTrainConfig {
    pub batch: usize,
    pub dt: f64,
    pub horizon: f64,
    pub log_every: usize,
    pub seed: u64,
}

/// Stochastic gradient flow on the interpolant loss from `V ≡ 0` with a fresh
/// minibatch per step. Logs `t, loss, param_norm`.
pub fn train_interpolant(
    prob: &InterpolantProblem,
    bank: Arc<FeatureBank>,
    cfg: &InterpolantTrainConfig,
) -> Result<(TimeVelocityField, TrajectoryLog)> {
    if bank.d_in() != prob.dim() + 1 {
        return Err(Error::DimensionMismatch {
            expected: prob.dim() + 1,
            got: bank.d_in(),
        });
    }
    if cfg.batch == 0 || !(cfg.dt > 0.0) || cfg.log_every == 0 {
        return Err(invalid("need batch ≥ 1, dt > 0 and log_every ≥ 1"));
    }
    let mut field = TimeVelocityField::zeros(bank)?;
    let mut log = TrajectoryLog::new(&["t", "loss", "param_norm"]);
    let mut rng = rng::stream(cfg.seed, rng::MINIBATCH);
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    for step in 0..steps {
        let batch = InterpolantBatch::draw(prob, cfg.batch, &mut rng);
        let (loss, grad) = batch.loss_and_grad(&field)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss at step {step}")));
        }
        if step % cfg.log_every == 0 {
            log.push(&[step as f64 * cfg.dt, loss, field.parameter_norm()]);
        }
        field.inner_mut().apply_gradient(&grad, cfg.dt)?;
    }
    let batch = InterpolantBatch::draw(prob, cfg.batch, &mut rng);
    let (loss, _) = batch.loss_and_grad(&field)?;
    log.push(&[steps as f64 * cfg.dt, loss, field.parameter_norm()]);
    Ok((field, log))
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xi, yi)| yi + a * xi).collect()
}

/// Classical RK4 for `dx/dτ = f(x, τ)` from `tau0` to `tau1` in `steps` steps.
pub fn rk4<F>(f: F, x0: &[f64], tau0: f64, tau1: f64, steps: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>>,
{
    let h = (tau1 - tau0) / steps as f64;
    let mut x = x0.to_vec();
    for i in 0..steps {
        let t = tau0 + i as f64 * h;
        let k1 = f(&x, t)?;
        let k2 = f(&axpy(h / 2.0, &k1, &x), t + h / 2.0)?;
        let k3 = f(&axpy(h / 2.0, &k2, &x), t + h / 2.0)?;
        let k4 = f(&axpy(h, &k3, &x), t + h)?;
        for k in 0..x.len() {
            x[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp(t + h));
        }
    }
    Ok(x)
}

/// RK4 solution of `dx/dτ = V(x, τ)` from `τ = 0` to `τ = 1`.
pub fn flow_transport(v: &dyn VelocityField, x0: &[f64], steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(invalid("steps must be at least 1"));
    }
    rk4(|x, t| v.velocity(x, t), x0, 0.0, 1.0, steps)
}

/// [`flow_transport`] applied to every particle, in parallel.
pub fn transport_particles(
    v: &dyn VelocityField,
    start: &ParticleMeasure,
    steps: usize,
) -> Result<ParticleMeasure> {
    let points = start
        .points()
        .par_iter()
        .map(|x| flow_transport(v, x, steps))
        .collect::<Result<Vec<_>>>()?;
    ParticleMeasure::new(points, start.weights().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSchedule {
    Constant(f64),
    /// `β` interpolates linearly from `beta0` at `τ = 0` to `beta1` at `τ = T`.
    Linear { beta0: f64, beta1: f64 },
}

/// Noise schedule `β_τ` on `[0, T]` with `B(τ) = ∫₀^τ β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionSchedule {
    pub beta: BetaSchedule,
    pub horizon: f64,
}

impl DiffusionSchedule {
    pub fn new(beta: BetaSchedule, horizon: f64) -> Result<Self> {
        let ok = match beta {
            BetaSchedule::Constant(b) => b > 0.0,
            BetaSchedule::Linear { beta0, beta1 } => beta0 > 0.0 && beta1 > 0.0,
        };
        if !ok || !(horizon > 0.0) {
            return Err(invalid("β must be positive and T > 0"));
        }
        Ok(Self { beta, horizon })
    }

    pub fn constant(beta: f64, horizon: f64) -> Result<Self> {
        Self::new(BetaSchedule::Constant(beta), horizon)
    }

    pub fn beta_at(&self, tau: f64) -> f64 {
        match self.beta {
            BetaSchedule::Constant(b) => b,
            BetaSchedule::Linear { beta0, beta1 } => beta0 + (beta1 - beta0) * tau / self.horizon,
        }
    }

    pub fn big_b(&self, tau: f64) -> f64 {
        match self.beta {
            BetaSchedule::Constant(b) => b * tau,
            BetaSchedule::Linear { beta0, beta1 } => {
                beta0 * tau + (beta1 - beta0) * tau * tau / (2.0 * self.horizon)
            }
        }
    }
}

/// Law of `X_τ` given `X₀ = x0`: `N(e^{−B/2} x0, (1 − e^{−B}) I)`.
pub fn diffusion_forward_law(sched: &DiffusionSchedule, x0: &[f64], tau: f64) -> Result<GaussianMeasure> {
    if !(0.0..=sched.horizon).contains(&tau) {
        return Err(invalid("τ outside [0, T]"));
    }
    let b = sched.big_b(tau);
    let mean = x0.iter().map(|x| (-b / 2.0).exp() * x).collect();
    let var = vec![-(-b).exp_m1(); x0.len()];
    Ok(GaussianMeasure::degenerate_allowed(mean, var))
}

/// Euler–Maruyama paths of `dX = −(β/2)X dτ + √β dW` from `x0` to `tau`.
pub fn simulate_forward(
    sched: &DiffusionSchedule,
    x0: &[f64],
    tau: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<ParticleMeasure> {
    if n_paths == 0 || !(dt > 0.0) {
        return Err(invalid("need n_paths ≥ 1 and dt > 0"));
    }
    let steps = (tau / dt).round() as usize;
    let h = tau / steps.max(1) as f64;
    let mut rng = rng::stream(seed, rng::SDE);
    let points = (0..n_paths)
        .map(|_| {
            let mut x = x0.to_vec();
            for i in 0..steps {
                let beta = sched.beta_at(i as f64 * h);
                for xk in x.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *xk += -0.5 * beta * *xk * h + (beta * h).sqrt() * z;
                }
            }
            x
        })
        .collect();
    ParticleMeasure::equal_weight(points)
}

/// Exact score of the diffused law of a Gaussian target:
/// `P_τ = N(e^{−B/2}μ, e^{−B}σ² + 1 − e^{−B})`, `s = −(x − m_τ)/v_τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScore {
    pub target: GaussianMeasure,
    pub schedule: DiffusionSchedule,
}

impl GaussianScore {
    pub fn marginal(&self, tau: f64) -> GaussianMeasure {
        let b = self.schedule.big_b(tau);
        let mean = self.target.mean().iter().map(|m| (-b / 2.0).exp() * m).collect();
        let var = self
            .target
            .variance()
            .iter()
            .map(|v| (-b).exp() * v - (-b).exp_m1())
            .collect();
        GaussianMeasure::degenerate_allowed(mean, var)
    }
}

impl VelocityField for GaussianScore {
    fn velocity(&self, x: &[f64], tau: f64) -> Result<Vec<f64>> {
        let p = self.marginal(tau);
        Ok(x.iter()
            .zip(p.mean())
            .zip(p.variance())
            .map(|((xi, m), v)| -(xi - m) / v)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReverseMode {
    Sde,
    Ode,
}

/// Integrate the reverse-time dynamics from `τ = T` to `0`, starting from
/// `X_T ~ N(0, I)` in `dim` dimensions.
///
/// SDE (Euler–Maruyama): `dX = −(β/2)(X + 2s) dτ + √β dW̄`.
/// ODE (RK4): `dX/dτ = −(β/2)(X + s)`.
pub fn reverse_generate(
    sched: &DiffusionSchedule,
    score: &dyn VelocityField,
    mode: ReverseMode,
    dim: usize,
    n: usize,
    steps: usize,
    seed: u64,
) -> Result<ParticleMeasure> {
    if steps == 0 || n == 0 {
        return Err(invalid("steps and n must be at least 1"));
    }
    let start = GaussianMeasure::standard(dim).sample(n, seed)?;
    let t_end = sched.horizon;
    let h = t_end / steps as f64;
    let points: Vec<Vec<f64>> = match mode {
        ReverseMode::Ode => start
            .points()
            .par_iter()
            .map(|x| {
                rk4(
                    |x, t| {
                        let s = score.velocity(x, t)?;
                        let beta = sched.beta_at(t);
                        Ok(x.iter().zip(&s).map(|(xi, si)| -0.5 * beta * (xi + si)).collect())
                    },
                    x,
                    t_end,
                    0.0,
                    steps,
                )
            })
            .collect::<Result<_>>()?,
        ReverseMode::Sde => {
            let mut rng = rng::stream(seed, rng::SDE);
            let mut out = Vec::with_capacity(n);
            for x in start.points() {
                let mut x = x.clone();
                for i in 0..steps {
                    let t = t_end - i as f64 * h;
                    let beta = sched.beta_at(t);
                    let s = score.velocity(&x, t)?;
                    for (xk, sk) in x.iter_mut().zip(&s) {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *xk += 0.5 * beta * (*xk + 2.0 * sk) * h + (beta * h).sqrt() * z;
                    }
                    if x.iter().any(|v| !v.is_finite()) {
                        return Err(Error::BlowUp(t - h));
                    }
                }
                out.push(x);
            }
            out
        }
    };
    ParticleMeasure::new(points, start.weights().to_vec())
}

/// Monte-Carlo denoising score-matching loss
/// `E (λ_τ/2) ‖s(e^{−B/2}x₀ + √(1−e^{−B}) ω, τ) + ω/√(1−e^{−B})‖²`
/// with `τ ~ U[τ_min, T]`, `x₀ ~ target`, `ω ~ N(0, I)`.
pub fn score_matching_loss(
    score: &dyn VelocityField,
    target: &Law,
    sched: &DiffusionSchedule,
    lambda: &dyn Fn(f64) -> f64,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if n_mc == 0 {
        return Err(invalid("n_mc must be at least 1"));
    }
    let mut rng = rng::stream(seed, rng::MONTE_CARLO);
    let mut total = 0.0;
    for _ in 0..n_mc {
        let tau = TAU_MIN + (sched.horizon - TAU_MIN) * rng.random::<f64>();
        let x0 = target.draw(&mut rng);
        let b = sched.big_b(tau);
        let sd = (-(-b).exp_m1()).sqrt();
        let omega: Vec<f64> = (0..x0.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x: Vec<f64> = x0
            .iter()
            .zip(&omega)
            .map(|(a, w)| (-b / 2.0).exp() * a + sd * w)
            .collect();
        let s = score.velocity(&x, tau)?;
        let r: f64 = s.iter().zip(&omega).map(|(si, w)| (si + w / sd).powi(2)).sum();
        total += 0.5 * lambda(tau) * r;
    }
    Ok(total / n_mc as f64)
}

/// JSON header stored next to a serialized field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub d: usize,
    pub m: usize,
    pub activation: String,
    pub law: String,
    pub seed: u64,
}

/// Write `field.json`, `bank.csv` and `coeffs.csv` into `dir`.
pub fn save_field(field: &TimeVelocityField, seed: u64, dir: &Path) -> Result<()> {
    let bank = field.inner().bank();
    let header = FieldHeader {
        d: field.dim(),
        m: bank.m(),
        activation: bank.activation().to_string(),
        law: bank.law().to_string(),
        seed,
    };
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&header).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(dir.join("field.json"), json)?;
    std::fs::write(dir.join("bank.csv"), bank.to_csv())?;
    std::fs::write(dir.join("coeffs.csv"), field.inner().coeffs_to_csv())?;
    Ok(())
}

pub fn load_field(dir: &Path) -> Result<(TimeVelocityField, FieldHeader)> {
    let header: FieldHeader = serde_json::from_str(&std::fs::read_to_string(dir.join("field.json"))?)
        .map_err(|e| Error::Parse(e.to_string()))?;
    let activation: Activation = header.activation.parse()?;
    let law: FeatureLaw = header.law.parse()?;
    let bank = FeatureBank::from_csv(&std::fs::read_to_string(dir.join("bank.csv"))?, activation, law)?;
    if bank.m() != header.m || bank.d_in() != header.d + 1 {
        return Err(Error::Parse("header does not match the bank".into()));
    }
    let inner = RfmFunction::from_coeffs_csv(
        Arc::new(bank),
        &std::fs::read_to_string(dir.join("coeffs.csv"))?,
    )?;
    Ok((TimeVelocityField::new(inner)?, header))
}
