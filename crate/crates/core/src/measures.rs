//! Probability measures on `R^d`: piecewise-constant grid densities on the unit
//! cube, weighted particle sets, and diagonal Gaussians.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::rfm::pairwise_sum;
use crate::rng;

const NORMALIZATION_TOL: f64 = 1e-12;

/// Density values on a regular grid over `[0,1]^dim`, constant on each
/// half-open cell. Cells are indexed row-major, the first axis varying slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    dim: usize,
    cells_per_axis: usize,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(dim: usize, cells_per_axis: usize, values: Vec<f64>) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(invalid(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if cells_per_axis == 0 {
            return Err(invalid("grid needs at least one cell per axis"));
        }
        let expected = cells_per_axis.pow(dim as u32);
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(invalid(format!("density value {v} at cell {i}")));
        }
        Ok(Self {
            dim,
            cells_per_axis,
            values,
        })
    }

    /// Uniform probability density on `[0,1]^dim`.
    pub fn uniform(dim: usize, cells_per_axis: usize) -> Result<Self> {
        Self::new(dim, cells_per_axis, vec![1.0; cells_per_axis.pow(dim as u32)])
    }

    /// Evaluate `f` at every cell center and normalize.
    pub fn from_fn(
        dim: usize,
        cells_per_axis: usize,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let shape = Self::uniform(dim, cells_per_axis)?;
        let values = (0..shape.num_cells())
            .map(|i| f(&shape.cell_center(i)))
            .collect();
        Self::new(dim, cells_per_axis, values)?.normalize()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn num_cells(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_volume(&self) -> f64 {
        (self.cells_per_axis as f64).powi(-(self.dim as i32))
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.cells_per_axis as f64
    }

    /// Per-axis cell indices of a flat cell index.
    pub fn cell_coords(&self, index: usize) -> Vec<usize> {
        let n = self.cells_per_axis;
        match self.dim {
            1 => vec![index],
            _ => vec![index / n, index % n],
        }
    }

    pub fn cell_lower(&self, index: usize) -> Vec<f64> {
        let h = self.cell_width();
        self.cell_coords(index)
            .into_iter()
            .map(|c| c as f64 * h)
            .collect()
    }

    pub fn cell_center(&self, index: usize) -> Vec<f64> {
        let h = self.cell_width();
        self.cell_coords(index)
            .into_iter()
            .map(|c| (c as f64 + 0.5) * h)
            .collect()
    }

    pub fn cell_centers(&self) -> Vec<Vec<f64>> {
        (0..self.num_cells()).map(|i| self.cell_center(i)).collect()
    }

    /// Probability mass of each cell, `value * cell_volume`.
    pub fn masses(&self) -> Vec<f64> {
        let vol = self.cell_volume();
        self.values.iter().map(|v| v * vol).collect()
    }

    pub fn total_mass(&self) -> f64 {
        pairwise_sum(&self.values) * self.cell_volume()
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.dim == other.dim && self.cells_per_axis == other.cells_per_axis
    }

    /// Rescale so the density integrates to one.
    pub fn normalize(&self) -> Result<Self> {
        let total = self.total_mass();
        if total <= 0.0 {
            return Err(Error::DegenerateDensity);
        }
        Ok(Self {
            dim: self.dim,
            cells_per_axis: self.cells_per_axis,
            values: self.values.iter().map(|v| v / total).collect(),
        })
    }

    pub fn is_normalized(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= NORMALIZATION_TOL
    }

    /// Draw a cell by its mass, then a uniform point inside it.
    pub fn sample(&self, n: usize, seed: u64) -> Result<ParticleMeasure> {
        if n == 0 {
            return Err(invalid("sample size must be at least 1"));
        }
        let cumulative: Vec<f64> = self
            .values
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        let total = *cumulative.last().unwrap_or(&0.0);
        if total <= 0.0 {
            return Err(Error::DegenerateDensity);
        }
        let h = self.cell_width();
        let mut rng = rng::stream(seed, rng::SAMPLE);
        let points = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * total;
                let cell = cumulative
                    .partition_point(|c| *c <= u)
                    .min(self.num_cells() - 1);
                self.cell_lower(cell)
                    .into_iter()
                    .map(|lo| lo + h * rng.random::<f64>())
                    .collect()
            })
            .collect();
        ParticleMeasure::equal_weight(points)
    }

    /// Index of the cell containing `x`; points outside the cube are clamped.
    pub fn cell_of(&self, x: &[f64]) -> usize {
        let n = self.cells_per_axis;
        let axis = |v: f64| ((v * n as f64).floor().max(0.0) as usize).min(n - 1);
        match self.dim {
            1 => axis(x[0]),
            _ => axis(x[0]) * n + axis(x[1]),
        }
    }

    /// CSV with header `cell_index,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell_index,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        out
    }

    pub fn from_csv(dim: usize, text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (line_no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let (Some(i), Some(v), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(Error::Parse(format!("line {}: expected 2 fields", line_no + 1)));
            };
            let i: usize = i.trim().parse().map_err(|e| Error::Parse(format!("{e}")))?;
            let v: f64 = v.trim().parse().map_err(|e| Error::Parse(format!("{e}")))?;
            rows.push((i, v));
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(k, r)| r.0 != k) {
            return Err(Error::Parse("cell indices are not 0..n".into()));
        }
        let n = rows.len();
        let per_axis = match dim {
            1 => n,
            2 => (n as f64).sqrt().round() as usize,
            _ => return Err(invalid("grid dimension must be 1 or 2")),
        };
        Self::new(dim, per_axis, rows.into_iter().map(|r| r.1).collect())
    }
}

/// Weighted point set. Weights are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl ParticleMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("particle measure needs at least one point"));
        }
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        let dim = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("particle weights must be finite and nonnegative"));
        }
        let total = pairwise_sum(&weights);
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(invalid(format!("particle weights sum to {total}, not 1")));
        }
        Ok(Self {
            dim,
            points,
            weights,
        })
    }

    pub fn equal_weight(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n as f64; n])
    }

    /// Equal-weight measure on scalars.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Self::equal_weight(xs.iter().map(|x| vec![*x]).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// First coordinate of every point.
    pub fn scalars(&self) -> Vec<f64> {
        self.points.iter().map(|p| p[0]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for (mi, pi) in m.iter_mut().zip(p) {
                *mi += w * pi;
            }
        }
        m
    }

    /// Per-coordinate variance under the weights.
    pub fn variance(&self) -> Vec<f64> {
        let m = self.mean();
        let mut v = vec![0.0; self.dim];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for ((vi, pi), mi) in v.iter_mut().zip(p).zip(&m) {
                *vi += w * (pi - mi).powi(2);
            }
        }
        v
    }

    /// CSV with header `x0[,x1],weight`.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<String> = (0..self.dim).map(|k| format!("x{k}")).collect();
        header.push("weight".into());
        let mut out = header.join(",");
        out.push('\n');
        for (p, w) in self.points.iter().zip(&self.weights) {
            let mut row: Vec<String> = p.iter().map(|x| x.to_string()).collect();
            row.push(w.to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty csv".into()))?;
        let cols = header.split(',').count();
        if cols < 2 {
            return Err(Error::Parse("expected x0..,weight columns".into()));
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<core::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("{e}")))?;
            if vals.len() != cols {
                return Err(Error::Parse(format!("expected {cols} fields")));
            }
            weights.push(vals[cols - 1]);
            points.push(vals[..cols - 1].to_vec());
        }
        Self::new(points, weights)
    }
}

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl GaussianMeasure {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: variance.len(),
            });
        }
        if variance.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("covariance entries must be positive"));
        }
        Ok(Self { mean, variance })
    }

    /// Laws concentrated on the mean (variance zero) are allowed here; they
    /// arise as the forward diffusion law at time zero.
    pub(crate) fn degenerate_allowed(mean: Vec<f64>, variance: Vec<f64>) -> Self {
        debug_assert!(variance.iter().all(|v| *v >= 0.0));
        Self { mean, variance }
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
        }
    }

    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![mean], vec![variance])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        x.iter()
            .zip(&self.mean)
            .zip(&self.variance)
            .map(|((x, m), v)| -0.5 * ((x - m).powi(2) / v + v.ln() + ln_2pi))
            .sum()
    }

    pub(crate) fn draw(&self, rng: &mut rng::Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect()
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<ParticleMeasure> {
        if n == 0 {
            return Err(invalid("sample size must be at least 1"));
        }
        let mut rng = rng::stream(seed, rng::SAMPLE);
        let points = (0..n).map(|_| self.draw(&mut rng)).collect();
        ParticleMeasure::equal_weight(points)
    }
}

/// Measures that can produce equal-weight samples.
pub trait Sample {
    fn dim(&self) -> usize;
    fn sample(&self, n: usize, seed: u64) -> Result<ParticleMeasure>;
}

impl Sample for GridDensity {
    fn dim(&self) -> usize {
        self.dim
    }
    fn sample(&self, n: usize, seed: u64) -> Result<ParticleMeasure> {
        GridDensity::sample(self, n, seed)
    }
}

impl Sample for GaussianMeasure {
    fn dim(&self) -> usize {
        self.mean.len()
    }
    fn sample(&self, n: usize, seed: u64) -> Result<ParticleMeasure> {
        GaussianMeasure::sample(self, n, seed)
    }
}

/// Particles `map(x_i)` for `x_i` drawn from `base`.
pub fn pushforward_empirical<S, F>(base: &S, map: F, n: usize, seed: u64) -> Result<ParticleMeasure>
where
    S: Sample + ?Sized,
    F: Fn(&[f64]) -> Vec<f64>,
{
    let draws = base.sample(n, seed)?;
    ParticleMeasure::new(
        draws.points.iter().map(|p| map(p)).collect(),
        draws.weights,
    )
}

/// Nodes and (possibly signed) weights of a discrete measure: the cells of a
/// grid at their centers with their masses, or a particle set.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// The signed measure `self - other`.
    pub fn minus(&self, other: &Quadrature) -> Quadrature {
        let mut points = self.points.clone();
        points.extend(other.points.iter().cloned());
        let mut weights = self.weights.clone();
        weights.extend(other.weights.iter().map(|w| -w));
        Quadrature { points, weights }
    }
}

impl From<&GridDensity> for Quadrature {
    fn from(g: &GridDensity) -> Self {
        Quadrature {
            points: g.cell_centers(),
            weights: g.masses(),
        }
    }
}

impl From<&ParticleMeasure> for Quadrature {
    fn from(p: &ParticleMeasure) -> Self {
        Quadrature {
            points: p.points.clone(),
            weights: p.weights.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn grid1(values: &[f64]) -> GridDensity {
        GridDensity::new(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let u = grid1(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(u.cell_volume(), 0.25);
        assert_eq!(u.normalize().unwrap().values(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(
            grid1(&[2.0, 2.0, 2.0, 2.0]).normalize().unwrap().values(),
            &[1.0, 1.0, 1.0, 1.0]
        );
        let n = grid1(&[3.0, 1.0]).normalize().unwrap();
        assert!(close(n.values()[0], 1.5, 1e-15) && close(n.values()[1], 0.5, 1e-15));
        assert!(n.is_normalized());
    }

    #[test]
    fn normalize_rejects_zero_density() {
        let err = grid1(&[0.0, 0.0]).normalize().unwrap_err();
        assert_eq!(err.to_string(), "degenerate density");
    }

    #[test]
    fn grid_rejects_negative_values() {
        assert!(GridDensity::new(1, 2, vec![1.0, -0.1]).is_err());
        assert!(GridDensity::new(3, 2, vec![1.0; 8]).is_err());
    }

    #[test]
    fn two_dimensional_cell_layout() {
        let g = GridDensity::uniform(2, 4).unwrap();
        assert_eq!(g.num_cells(), 16);
        assert_eq!(g.cell_center(5), vec![0.375, 0.375]);
        assert_eq!(g.cell_center(7), vec![0.375, 0.875]);
        assert_eq!(g.cell_of(&[0.375, 0.875]), 7);
        assert!(close(g.total_mass(), 1.0, 1e-15));
    }

    #[test]
    fn gaussian_sample_mean_within_clt_bound() {
        let g = GaussianMeasure::standard(1);
        let s = g.sample(100_000, 11).unwrap();
        assert!(s.mean()[0].abs() < 0.02, "mean {}", s.mean()[0]);
        assert!(s.weights().iter().all(|w| *w == 1e-5));
    }

    #[test]
    fn uniform_grid_cell_counts_within_five_sigma() {
        let g = GridDensity::uniform(1, 8).unwrap();
        let n = 100_000;
        let s = g.sample(n, 3).unwrap();
        let mut counts = vec![0usize; 8];
        for p in s.points() {
            assert!((0.0..1.0).contains(&p[0]));
            counts[g.cell_of(p)] += 1;
        }
        let expected = n as f64 / 8.0;
        let sd = (n as f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 5.0 * sd, "count {c}");
        }
    }

    #[test]
    fn grid_sampling_passes_chi_square() {
        // 16 cells, 15 dof: 99th percentile of chi^2_15 is 30.578
        let g = GridDensity::from_fn(1, 16, |x| 1.0 + x[0] * x[0] * 3.0).unwrap();
        let n = 100_000;
        let s = g.sample(n, 21).unwrap();
        let mut counts = vec![0.0; 16];
        for p in s.points() {
            counts[g.cell_of(p)] += 1.0;
        }
        let chi2: f64 = counts
            .iter()
            .zip(g.masses())
            .map(|(c, m)| (c - n as f64 * m).powi(2) / (n as f64 * m))
            .sum();
        assert!(chi2 < 30.578, "chi2 = {chi2}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = GridDensity::from_fn(2, 8, |x| 1.0 + x[0]).unwrap();
        assert_eq!(g.sample(3, 5).unwrap(), g.sample(3, 5).unwrap());
        let n = GaussianMeasure::standard(2);
        assert_eq!(n.sample(3, 5).unwrap(), n.sample(3, 5).unwrap());
        assert!(g.sample(0, 5).is_err());
        assert!(n.sample(0, 5).is_err());
    }

    #[test]
    fn pushforward_examples() {
        let base = GaussianMeasure::standard(1);
        let n = 100_000;
        let id = pushforward_empirical(&base, |x| x.to_vec(), n, 4).unwrap();
        assert_eq!(id, base.sample(n, 4).unwrap());
        let shifted = pushforward_empirical(&base, |x| vec![x[0] + 3.0], n, 4).unwrap();
        let bound = 3.0 / (n as f64).sqrt();
        assert!((shifted.mean()[0] - 3.0).abs() < bound);
        let doubled = pushforward_empirical(&base, |x| vec![2.0 * x[0]], n, 4).unwrap();
        assert!((doubled.variance()[0] - 4.0).abs() < 0.08);
    }

    #[test]
    fn particle_weights_must_sum_to_one() {
        assert!(ParticleMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.4]).is_err());
        let p = ParticleMeasure::equal_weight(vec![vec![0.0]; 4]).unwrap();
        assert!(p.weights().iter().all(|w| *w == 0.25));
    }

    #[test]
    fn csv_formats() {
        let g = grid1(&[1.5, 0.5]);
        assert_eq!(g.to_csv(), "cell_index,value\n0,1.5\n1,0.5\n");
        assert_eq!(GridDensity::from_csv(1, &g.to_csv()).unwrap(), g);
        let p = ParticleMeasure::new(vec![vec![0.25, 1.0], vec![2.0, -1.0]], vec![0.5, 0.5])
            .unwrap();
        assert_eq!(p.to_csv(), "x0,x1,weight\n0.25,1,0.5\n2,-1,0.5\n");
        assert_eq!(ParticleMeasure::from_csv(&p.to_csv()).unwrap(), p);
    }
}
