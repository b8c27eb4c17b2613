//! Density-represented generator trained against a fixed RKHS discriminator.
//!
//! The generator is a density `P ∈ L²([0,1]^d)` on a grid, and the loss is
//! `½‖P − P*‖²` in the kernel's dual norm (the MMD). Its gradient flow is the
//! linear equation `dP/dt = −K(P − P*)` with `K` the kernel integral operator,
//! solved here both by Euler steps and exactly through the eigendecomposition
//! of `K`. Iterates may leave the probability simplex; test errors are taken
//! after projecting back onto it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::measures::{GridDensity, ParticleMeasure, Quadrature};
use crate::metrics::w2_1d;
use crate::potential::{log_log_slope, median};
use crate::rfm::FeatureBank;
use crate::rng;
use crate::trajectory::TrajectoryLog;

pub const LOG_COLUMNS: [&str; 4] = ["t", "mmd2", "w2", "w2_empirical"];

/// Signed density values on the grid of a target.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityIterate {
    dim: usize,
    cells_per_axis: usize,
    values: DVector<f64>,
}

impl DensityIterate {
    pub fn new(like: &GridDensity, values: DVector<f64>) -> Result<Self> {
        if values.len() != like.num_cells() {
            return Err(Error::DimensionMismatch {
                expected: like.num_cells(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("non-finite density iterate".into()));
        }
        Ok(Self {
            dim: like.dim(),
            cells_per_axis: like.cells_per_axis(),
            values,
        })
    }

    pub fn from_grid(g: &GridDensity) -> Self {
        Self {
            dim: g.dim(),
            cells_per_axis: g.cells_per_axis(),
            values: DVector::from_column_slice(g.values()),
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn cell_volume(&self) -> f64 {
        (self.cells_per_axis as f64).powi(-(self.dim as i32))
    }

    /// Mass-weighted `L²` distance.
    pub fn l2_distance(&self, other: &Self) -> f64 {
        ((&self.values - &other.values).norm_squared() * self.cell_volume()).sqrt()
    }
}

/// Euclidean projection, in the mass-weighted `L²` norm, onto densities:
/// `q = max(p − θ, 0)` with `θ` chosen so `Σ q·vol = 1`.
pub fn project_simplex(p: &DensityIterate) -> GridDensity {
    let vol = p.cell_volume();
    let target = 1.0 / vol;
    let mut sorted: Vec<f64> = p.values.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    let mut theta = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        prefix += v;
        let candidate = (prefix - target) / (k + 1) as f64;
        if k + 1 == sorted.len() || sorted[k + 1] <= candidate {
            theta = candidate;
            break;
        }
    }
    let values = p.values.iter().map(|v| (v - theta).max(0.0)).collect();
    GridDensity::new(p.dim, p.cells_per_axis, values).expect("projection is a valid density")
}

/// The linear flow `dP/dt = −(K P − b)` on a grid, where `K_ij = k(x_i,x_j)·vol`
/// and `b = K P*` for a grid target or `b_i = ∫ k(x_i, y) dP*^(n)(y)` for a
/// particle target.
#[derive(Debug, Clone)]
pub struct MmdFlow {
    shape: GridDensity,
    k: DMatrix<f64>,
    b: DVector<f64>,
    eigen: SymmetricEigen<f64, nalgebra::Dyn>,
}

impl MmdFlow {
    fn build(bank: &FeatureBank, shape: &GridDensity, target: &Quadrature) -> Result<Self> {
        let centers = shape.cell_centers();
        let phi = bank.feature_matrix(&centers)?;
        let m = bank.m() as f64;
        let mut k = crate::rfm::gram_from_features(&phi);
        k *= shape.cell_volume();
        let phi_t = bank.feature_matrix(&target.points)?;
        let embed = phi_t.tr_mul(&DVector::from_column_slice(&target.weights));
        let b = &phi * embed / m;
        let eigen = SymmetricEigen::new(k.clone());
        Ok(Self {
            shape: shape.clone(),
            k,
            b,
            eigen,
        })
    }

    /// Population flow towards a grid target.
    pub fn population(bank: &FeatureBank, target: &GridDensity) -> Result<Self> {
        Self::build(bank, target, &Quadrature::from(target))
    }

    /// Flow towards the particle target, evaluated by exact summation over the
    /// particles; the generator lives on `grid`.
    pub fn empirical(bank: &FeatureBank, grid: &GridDensity, target: &ParticleMeasure) -> Result<Self> {
        if target.dim() != grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.dim(),
                got: target.dim(),
            });
        }
        Self::build(bank, grid, &Quadrature::from(target))
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigen.eigenvalues
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigen.eigenvalues.max()
    }

    /// `dt · λ_max < 2` is required for Euler stability.
    pub fn euler(&self, p0: &DensityIterate, dt: f64, horizon: f64, record_every: usize) -> Result<Vec<(f64, DensityIterate)>> {
        if !(dt > 0.0) || record_every == 0 {
            return Err(invalid("need dt > 0 and record_every ≥ 1"));
        }
        if dt * self.max_eigenvalue() >= 2.0 {
            return Err(invalid(format!(
                "dt = {dt} is unstable for λ_max = {}",
                self.max_eigenvalue()
            )));
        }
        let steps = (horizon / dt).round() as usize;
        let mut p = p0.values.clone();
        let bound = 1e6 * (1.0 + p.norm());
        let mut out = vec![(0.0, p0.clone())];
        for step in 1..=steps {
            let grad = &self.k * &p - &self.b;
            p -= grad * dt;
            if !(p.norm() < bound) {
                return Err(Error::Diverged(format!("density norm blew up at step {step}")));
            }
            if step % record_every == 0 || step == steps {
                out.push((step as f64 * dt, DensityIterate::new(&self.shape, p.clone())?));
            }
        }
        Ok(out)
    }

    /// Exact solution `P_t = U e^{−Λt} Uᵀ P₀ + U ((1 − e^{−Λt})/Λ) Uᵀ b`.
    pub fn spectral(&self, p0: &DensityIterate, t: f64) -> DensityIterate {
        let u = &self.eigen.eigenvectors;
        let c0 = u.tr_mul(&p0.values);
        let cb = u.tr_mul(&self.b);
        let coeffs = DVector::from_iterator(
            c0.len(),
            self.eigen.eigenvalues.iter().enumerate().map(|(i, lam)| {
                let lam = lam.max(0.0);
                let decay = (-lam * t).exp();
                let gain = if lam * t < 1e-12 { t } else { -(-lam * t).exp_m1() / lam };
                decay * c0[i] + gain * cb[i]
            }),
        );
        DensityIterate {
            dim: self.shape.dim(),
            cells_per_axis: self.shape.cells_per_axis(),
            values: u * coeffs,
        }
    }
}

/// `½ ∬ k d(P−Q) d(P−Q)` for grid iterates.
pub fn mmd2_iterates(flow: &MmdFlow, p: &DensityIterate, q: &DensityIterate) -> f64 {
    let d = &p.values - &q.values;
    0.5 * p.cell_volume() * d.dot(&(&flow.k * &d))
}

/// Log-spaced times from `t_min` to `t_max` inclusive, preceded by `t = 0`.
pub fn log_times(t_min: f64, t_max: f64, count: usize) -> Vec<f64> {
    let mut ts = vec![0.0];
    let (a, b) = (t_min.ln(), t_max.ln());
    ts.extend((0..count).map(|i| (a + (b - a) * i as f64 / (count.max(2) - 1) as f64).exp()));
    ts
}

/// Population and empirical runs from the uniform density, evaluated exactly
/// at `times`. Logs `t, mmd2, w2, w2_empirical` where `w2` is
/// `W2(P*, Π(P_t))` and `w2_empirical` uses the flow towards `n` samples.
pub fn mmd_gan_experiment(
    target: &GridDensity,
    n: usize,
    bank: &FeatureBank,
    times: &[f64],
    seed: u64,
) -> Result<TrajectoryLog> {
    if target.dim() != 1 {
        return Err(invalid("the W2 test error needs a 1-D target"));
    }
    let sample = target.sample(n, seed)?;
    let pop = MmdFlow::population(bank, target)?;
    let emp = MmdFlow::empirical(bank, target, &sample)?;
    let p0 = DensityIterate::from_grid(&GridDensity::uniform(1, target.cells_per_axis())?);
    let star = DensityIterate::from_grid(target);
    let mut log = TrajectoryLog::new(&LOG_COLUMNS);
    for t in times {
        let p = pop.spectral(&p0, *t);
        let q = emp.spectral(&p0, *t);
        log.push(&[
            *t,
            mmd2_iterates(&pop, &p, &star),
            w2_1d(target, &project_simplex(&p)),
            w2_1d(target, &project_simplex(&q)),
        ]);
    }
    Ok(log)
}

/// Strict interior minimum, with the last value above the minimum by at least
/// the relative `margin`.
pub fn is_u_shaped(values: &[f64], margin: f64) -> bool {
    let Some((i, min)) = values
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
    else {
        return false;
    };
    let last = values[values.len() - 1];
    i > 0 && i + 1 < values.len() && values[0] > min && last >= min * (1.0 + margin)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MmdSweepRecord {
    pub n: usize,
    pub seed: u64,
    pub t_star: f64,
    pub w2_min: f64,
    pub w2_final: f64,
}

/// Minimum empirical W2 for every `n` and replica, and the log-log slope of
/// the per-`n` medians.
pub fn mmd_sweep(
    target: &GridDensity,
    bank: Arc<FeatureBank>,
    sizes: &[usize],
    replicas: usize,
    times: &[f64],
    seed: u64,
) -> Result<(Vec<MmdSweepRecord>, f64)> {
    let jobs: Vec<(usize, u64)> = sizes
        .iter()
        .flat_map(|n| (0..replicas as u64).map(move |r| (*n, r)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|(n, r)| {
            let s = rng::child_seed(seed, *r * 1_000_003 + *n as u64);
            let log = mmd_gan_experiment(target, *n, &bank, times, s)?;
            let (i, w2_min) = log.argmin("w2_empirical")?;
            Ok(MmdSweepRecord {
                n: *n,
                seed: s,
                t_star: log.time()[i],
                w2_min,
                w2_final: log.last("w2_empirical")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let medians: Vec<f64> = sizes
        .iter()
        .map(|n| {
            let v: Vec<f64> = records.iter().filter(|r| r.n == *n).map(|r| r.w2_min).collect();
            median(&v)
        })
        .collect();
    let xs: Vec<f64> = sizes.iter().map(|n| *n as f64).collect();
    Ok((records, log_log_slope(&xs, &medians)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rfm::{Activation, FeatureLaw};

    fn bank(m: usize) -> FeatureBank {
        FeatureBank::draw(1, m, Activation::Relu, FeatureLaw::L1Sphere, 3).unwrap()
    }

    fn iterate(values: &[f64]) -> DensityIterate {
        let g = GridDensity::uniform(1, values.len()).unwrap();
        DensityIterate::new(&g, DVector::from_column_slice(values)).unwrap()
    }

    #[test]
    fn projection_examples() {
        let valid = iterate(&[1.5, 0.5]);
        assert_eq!(project_simplex(&valid).values(), &[1.5, 0.5]);
        assert_eq!(project_simplex(&iterate(&[3.0, 1.0])).values(), &[2.0, 0.0]);
        let p = project_simplex(&iterate(&[-4.0, 0.2, 7.0, 1.0]));
        assert!(p.is_normalized());
        assert!(p.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn target_is_a_fixed_point() {
        let b = bank(256);
        let target = GridDensity::from_fn(1, 16, |x| 1.0 + 0.5 * x[0]).unwrap();
        let flow = MmdFlow::population(&b, &target).unwrap();
        let star = DensityIterate::from_grid(&target);
        let path = flow.euler(&star, 1.0, 10.0, 5).unwrap();
        for (_, p) in &path {
            assert!(p.l2_distance(&star) < 1e-12);
        }
        assert!(flow.spectral(&star, 50.0).l2_distance(&star) < 1e-12);
    }

    #[test]
    fn euler_rejects_unstable_steps() {
        let target = GridDensity::uniform(1, 8).unwrap();
        let flow = MmdFlow::population(&bank(64), &target).unwrap();
        let dt = 2.5 / flow.max_eigenvalue();
        assert!(flow.euler(&DensityIterate::from_grid(&target), dt, 10.0, 1).is_err());
    }

    #[test]
    fn decay_bounded_by_smallest_eigenvalue() {
        // few cells and many features give a strictly positive definite K
        let b = bank(512);
        let target = GridDensity::from_fn(1, 4, |x| 1.0 + x[0]).unwrap();
        let flow = MmdFlow::population(&b, &target).unwrap();
        let lam_min = flow.eigenvalues().min();
        assert!(lam_min > 0.0);
        let p0 = DensityIterate::from_grid(&GridDensity::uniform(1, 4).unwrap());
        let star = DensityIterate::from_grid(&target);
        let d0 = p0.l2_distance(&star);
        for t in [1.0, 10.0, 100.0] {
            let d = flow.spectral(&p0, t).l2_distance(&star);
            assert!(d <= (-lam_min * t).exp() * d0 * (1.0 + 1e-6), "t {t}");
        }
    }

    #[test]
    fn u_shape_detection() {
        assert!(is_u_shaped(&[3.0, 1.0, 2.0], 0.1));
        assert!(!is_u_shaped(&[3.0, 2.0, 1.0], 0.1));
        assert!(!is_u_shaped(&[1.0, 2.0, 3.0], 0.1));
        assert!(!is_u_shaped(&[3.0, 1.0, 1.05], 0.1));
    }

    #[test]
    fn log_times_endpoints() {
        let ts = log_times(1.0, 1000.0, 4);
        assert_eq!(ts.len(), 5);
        assert_eq!(ts[0], 0.0);
        assert!((ts[2] - 10.0).abs() < 1e-12 && (ts[4] - 1000.0).abs() < 1e-9);
    }
}
