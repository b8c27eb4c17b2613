//! Bias-potential model: `P_V = e^{−V} base / Z` trained by gradient flow on
//!
//! ```text
//! L(V) = ∫ V dP* + ln ∫ e^{−V} dbase.
//! ```
//!
//! The first variation of `L` is the signed measure `P* − P_V`, so the
//! coefficient gradient of an RFM potential is `∫ σ_j dP* − ∫ σ_j dP_V`.
//! With a particle target the same formulas give the empirical loss.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::measures::{GridDensity, ParticleMeasure, Quadrature};
use crate::metrics::kl;
use crate::rfm::{FeatureBank, RfmFunction};
use crate::rng;
use crate::trajectory::TrajectoryLog;

pub const LOG_COLUMNS: [&str; 4] = ["t", "loss", "kl", "param_norm"];

/// `ln Σ_i e^{−v_i} μ_i`, shifted by the minimum of `v` to avoid overflow.
fn log_partition(v: &[f64], base_mass: &[f64]) -> f64 {
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = v
        .iter()
        .zip(base_mass)
        .map(|(vi, mu)| mu * (vmin - vi).exp())
        .sum();
    s.ln() - vmin
}

/// Boltzmann density for potential values given at the base cells.
pub fn density_from_values(v: &[f64], base: &GridDensity) -> Result<GridDensity> {
    if v.len() != base.num_cells() {
        return Err(Error::DimensionMismatch {
            expected: base.num_cells(),
            got: v.len(),
        });
    }
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    let values = v
        .iter()
        .zip(base.values())
        .map(|(vi, b)| b * (vmin - vi).exp())
        .collect();
    GridDensity::new(base.dim(), base.cells_per_axis(), values)?.normalize()
}

/// `e^{−V} base / Z` on the base grid.
pub fn density_of(v: &RfmFunction, base: &GridDensity) -> Result<GridDensity> {
    let vals = v.evaluate_many(&base.cell_centers())?;
    density_from_values(vals.column(0).as_slice(), base)
}

/// `∫ V dP* + ln ∫ e^{−V} dbase`; `target` is a grid (population loss) or a
/// particle set (empirical loss) in quadrature form.
pub fn bp_loss(v: &RfmFunction, target: &Quadrature, base: &GridDensity) -> Result<f64> {
    let vt = v.evaluate_many(&target.points)?;
    let first: f64 = vt
        .column(0)
        .iter()
        .zip(&target.weights)
        .map(|(a, w)| a * w)
        .sum();
    let vb = v.evaluate_many(&base.cell_centers())?;
    Ok(first + log_partition(vb.column(0).as_slice(), &base.masses()))
}

/// First variation `P* − P_V` as a signed measure: target nodes with positive
/// weights, base cells with the negated Boltzmann masses.
pub fn bp_grad_field(v: &RfmFunction, target: &Quadrature, base: &GridDensity) -> Result<Quadrature> {
    let pv = density_of(v, base)?;
    Ok(target.minus(&Quadrature::from(&pv)))
}

/// Coefficient gradient `G_j = ∫ σ_j d(P* − P_V)`.
pub fn bp_coeff_grad(v: &RfmFunction, target: &Quadrature, base: &GridDensity) -> Result<DMatrix<f64>> {
    let field = bp_grad_field(v, target, base)?;
    let phi = v.bank().feature_matrix(&field.points)?;
    Ok(phi.tr_mul(&DMatrix::from_column_slice(field.len(), 1, &field.weights)))
}

/// Potential together with its Boltzmann density.
#[derive(Debug, Clone)]
pub struct BoltzmannState {
    pub potential: RfmFunction,
    pub base: GridDensity,
    pub density: GridDensity,
}

impl BoltzmannState {
    pub fn new(potential: RfmFunction, base: GridDensity) -> Result<Self> {
        let density = density_of(&potential, &base)?;
        Ok(Self {
            potential,
            base,
            density,
        })
    }
}

/// How a planted potential is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlantMode {
    /// I.i.d. standard normal coefficients.
    Iid,
    /// Coefficients `a_j ∝ Σ_i h(x_i) σ_j(x_i)` for a random smooth `h` made of
    /// `modes` cosines with amplitudes decaying like `1/k`.
    Smooth { modes: usize },
}

/// Draw `V* = f_{a*}` with `parameter_norm(V*) = norm`.
pub fn planted_potential(
    bank: Arc<FeatureBank>,
    base: &GridDensity,
    norm: f64,
    mode: PlantMode,
    seed: u64,
) -> Result<RfmFunction> {
    if !(norm >= 0.0) {
        return Err(invalid("planted norm must be nonnegative"));
    }
    let mut rng = rng::stream(seed, rng::PLANT);
    let m = bank.m();
    let coeffs = match mode {
        PlantMode::Iid => DMatrix::from_fn(m, 1, |_, _| StandardNormal.sample(&mut rng)),
        PlantMode::Smooth { modes } => {
            let d = base.dim();
            let waves: Vec<(Vec<f64>, f64, f64)> = (1..=modes.max(1))
                .map(|k| {
                    let dir: Vec<f64> = match d {
                        1 => vec![1.0],
                        _ => [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]]
                            [rng.random_range(0..4)]
                        .to_vec(),
                    };
                    let amp: f64 = StandardNormal.sample(&mut rng);
                    let phase = rng.random::<f64>() * std::f64::consts::TAU;
                    let freq = dir.iter().map(|v| v * k as f64).collect();
                    (freq, amp / k as f64, phase)
                })
                .collect();
            let centers = base.cell_centers();
            let h: Vec<f64> = centers
                .iter()
                .map(|x| {
                    waves
                        .iter()
                        .map(|(f, a, p)| {
                            let arg: f64 = f.iter().zip(x).map(|(fi, xi)| fi * xi).sum();
                            a * (std::f64::consts::TAU * arg + p).cos()
                        })
                        .sum()
                })
                .collect();
            let phi = bank.feature_matrix(&centers)?;
            phi.tr_mul(&DMatrix::from_column_slice(h.len(), 1, &h))
        }
    };
    let mut f = RfmFunction::new(bank, coeffs)?;
    let current = f.parameter_norm();
    if current > 0.0 {
        *f.coeffs_mut() *= norm / current;
    }
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    None,
    /// Project the coefficients onto the ball `parameter_norm ≤ R` after each step.
    Ivanov(f64),
    /// Add `(λ/√n)·parameter_norm` to the loss, handled by a proximal step.
    Tikhonov { lambda: f64, n: usize },
}

#[derive(Debug, Clone)]
pub struct BpConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Log every this many steps; the initial state is always logged.
    pub log_every: usize,
    pub regularization: Regularization,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            dt: 1.0,
            horizon: 100.0,
            log_every: 1,
            regularization: Regularization::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// The run stopped early; the log holds everything up to the failure.
    Diverged(String),
}

#[derive(Debug, Clone)]
pub struct BpRun {
    pub potential: RfmFunction,
    pub log: TrajectoryLog,
    pub status: RunStatus,
}

/// Largest `k(x,x)` over the base cells. Gradient descent is stable for
/// `dt ≤ 1 / max_kernel_diagonal`.
pub fn max_kernel_diagonal(bank: &FeatureBank, base: &GridDensity) -> Result<f64> {
    let phi = bank.feature_matrix(&base.cell_centers())?;
    Ok(phi
        .row_iter()
        .map(|r| r.norm_squared() / bank.m() as f64)
        .fold(0.0, f64::max))
}

/// Gradient flow from `V ≡ 0`, logging `t, loss, kl, param_norm`.
///
/// `reference` is the grid density against which `KL(P*‖P_V)` is reported;
/// without one the `kl` column is NaN.
pub fn train_bp(
    target: &Quadrature,
    base: &GridDensity,
    bank: Arc<FeatureBank>,
    reference: Option<&GridDensity>,
    cfg: &BpConfig,
) -> Result<BpRun> {
    if !(cfg.dt > 0.0) || !(cfg.horizon >= 0.0) || cfg.log_every == 0 {
        return Err(invalid("need dt > 0, horizon ≥ 0 and log_every ≥ 1"));
    }
    match cfg.regularization {
        Regularization::Ivanov(r) if !(r > 0.0) => return Err(invalid("Ivanov radius must be positive")),
        Regularization::Tikhonov { lambda, n } if !(lambda > 0.0) || n == 0 => {
            return Err(invalid("Tikhonov needs λ > 0 and n ≥ 1"))
        }
        _ => {}
    }
    if let Some(r) = reference {
        if !r.same_grid(base) {
            return Err(invalid("reference density must live on the base grid"));
        }
    }
    let m = bank.m() as f64;
    let phi_base = bank.feature_matrix(&base.cell_centers())?;
    let phi_target = bank.feature_matrix(&target.points)?;
    let target_embed = phi_target.tr_mul(&DVector::from_column_slice(&target.weights));
    let base_mass = base.masses();
    let mut f = RfmFunction::zeros(bank, 1);
    let mut log = TrajectoryLog::new(&LOG_COLUMNS);
    let steps = (cfg.horizon / cfg.dt).round() as usize;

    let penalty = |a: &DMatrix<f64>| match cfg.regularization {
        Regularization::Tikhonov { lambda, n } => lambda / (n as f64).sqrt() * (a.norm_squared() / m).sqrt(),
        _ => 0.0,
    };

    for step in 0..=steps {
        let v = &phi_base * f.coeffs().column(0) / m;
        let lz = log_partition(v.as_slice(), &base_mass);
        let loss = target_embed.dot(&f.coeffs().column(0)) / m + lz + penalty(f.coeffs());
        if !loss.is_finite() {
            return Ok(BpRun {
                potential: f,
                log,
                status: RunStatus::Diverged(format!("non-finite loss at step {step}")),
            });
        }
        if step % cfg.log_every == 0 || step == steps {
            let kl_value = match reference {
                Some(r) => kl(r, &density_from_values(v.as_slice(), base)?)?.value,
                None => f64::NAN,
            };
            log.push(&[step as f64 * cfg.dt, loss, kl_value, f.parameter_norm()]);
        }
        if step == steps {
            break;
        }
        let pv: DVector<f64> = DVector::from_iterator(
            v.len(),
            v.iter().zip(&base_mass).map(|(vi, mu)| mu * (-vi - lz).exp()),
        );
        let grad = &target_embed - phi_base.tr_mul(&pv);
        if let Err(e) = f.apply_gradient(&DMatrix::from_column_slice(grad.len(), 1, grad.as_slice()), cfg.dt) {
            return Ok(BpRun {
                potential: f,
                log,
                status: RunStatus::Diverged(e.to_string()),
            });
        }
        match cfg.regularization {
            Regularization::None => {}
            Regularization::Ivanov(r) => {
                let norm = f.parameter_norm();
                if norm > r {
                    *f.coeffs_mut() *= r / norm;
                }
            }
            Regularization::Tikhonov { lambda, n } => {
                // proximal step for dt·(λ/√n)·‖a‖
                let norm = f.parameter_norm();
                let shrink = cfg.dt * lambda / (n as f64).sqrt();
                let scale = if norm > shrink { 1.0 - shrink / norm } else { 0.0 };
                *f.coeffs_mut() *= scale;
            }
        }
    }
    Ok(BpRun {
        potential: f,
        log,
        status: RunStatus::Completed,
    })
}

/// Regularized training on an empirical target.
pub fn train_bp_regularized(
    target: &ParticleMeasure,
    base: &GridDensity,
    bank: Arc<FeatureBank>,
    reference: Option<&GridDensity>,
    regularization: Regularization,
    dt: f64,
    horizon: f64,
) -> Result<BpRun> {
    let cfg = BpConfig {
        dt,
        horizon,
        log_every: 1,
        regularization,
    };
    train_bp(&Quadrature::from(target), base, bank, reference, &cfg)
}

/// Early-stopping summary of one empirical run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRecord {
    pub n: usize,
    pub seed: u64,
    pub t_star: f64,
    pub kl_min: f64,
    pub kl_final: f64,
}

impl SweepRecord {
    pub fn from_log(n: usize, seed: u64, log: &TrajectoryLog) -> Result<Self> {
        let (i, kl_min) = log.argmin("kl")?;
        Ok(Self {
            n,
            seed,
            t_star: log.time()[i],
            kl_min,
            kl_final: log.last("kl")?,
        })
    }
}

/// Train on `n` samples of `target` for every `n` in `sizes` and every
/// replica seed, in parallel. Records come back ordered by `(n, replica)`.
pub fn early_stopping_sweep(
    target: &GridDensity,
    bank: Arc<FeatureBank>,
    sizes: &[usize],
    replicas: usize,
    cfg: &BpConfig,
    seed: u64,
) -> Result<Vec<SweepRecord>> {
    let base = GridDensity::uniform(target.dim(), target.cells_per_axis())?;
    let jobs: Vec<(usize, u64)> = sizes
        .iter()
        .flat_map(|n| (0..replicas as u64).map(move |r| (*n, r)))
        .collect();
    jobs.par_iter()
        .map(|(n, r)| {
            let s = rng::child_seed(seed, *r * 1_000_003 + *n as u64);
            let sample = target.sample(*n, s)?;
            let run = train_bp(&Quadrature::from(&sample), &base, bank.clone(), Some(target), cfg)?;
            if let RunStatus::Diverged(msg) = run.status {
                return Err(Error::Diverged(msg));
            }
            SweepRecord::from_log(*n, s, &run.log)
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
