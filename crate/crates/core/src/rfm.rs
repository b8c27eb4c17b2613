//! Random feature models.
//!
//! A [`FeatureBank`] holds `m` frozen features `(w_j, b_j)` drawn from a law
//! `ρ`; an [`RfmFunction`] adds a trainable coefficient matrix and evaluates
//!
//! ```text
//! f_a(x) = (1/m) Σ_j a_j σ(w_j·x + b_j).
//! ```
//!
//! Coefficients live in `L²(ρ_m)`, the space with inner product
//! `(1/m) Σ_j a_j·a'_j`. Gradient flow in that space moves `f` by the kernel
//! `k(x,x') = (1/m) Σ_j σ_j(x) σ_j(x')`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::measures::Quadrature;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            _ => Err(invalid(format!("unknown activation {s:?}"))),
        }
    }
}

/// Law of the features `(w, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureLaw {
    /// Uniform on the unit ℓ¹ sphere of `R^(d_in+1)`.
    L1Sphere,
    /// Independent `N(0, 1/(d_in+1))` entries.
    Gaussian,
}

impl fmt::Display for FeatureLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureLaw::L1Sphere => "l1_sphere",
            FeatureLaw::Gaussian => "gaussian",
        })
    }
}

impl FromStr for FeatureLaw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1_sphere" => Ok(FeatureLaw::L1Sphere),
            "gaussian" => Ok(FeatureLaw::Gaussian),
            _ => Err(invalid(format!("unknown feature law {s:?}"))),
        }
    }
}

/// Sum in a fixed balanced-tree order so results do not depend on how the
/// work was split.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        xs.iter().sum()
    } else {
        let (l, r) = xs.split_at(xs.len() / 2);
        pairwise_sum(l) + pairwise_sum(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    d_in: usize,
    activation: Activation,
    law: FeatureLaw,
    /// `m × d_in`, one feature per row.
    w: DMatrix<f64>,
    b: DVector<f64>,
}

impl FeatureBank {
    pub fn draw(
        d_in: usize,
        m: usize,
        activation: Activation,
        law: FeatureLaw,
        seed: u64,
    ) -> Result<Self> {
        if m == 0 {
            return Err(invalid("feature count must be at least 1"));
        }
        if d_in == 0 {
            return Err(invalid("input dimension must be at least 1"));
        }
        let mut rng = rng::stream(seed, rng::BANK);
        let mut w = DMatrix::zeros(m, d_in);
        let mut b = DVector::zeros(m);
        let mut v = vec![0.0; d_in + 1];
        for j in 0..m {
            match law {
                FeatureLaw::L1Sphere => {
                    for vi in v.iter_mut() {
                        let e: f64 = Exp1.sample(&mut rng);
                        *vi = e;
                    }
                    let total: f64 = v.iter().sum();
                    for vi in v.iter_mut() {
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        *vi *= sign / total;
                    }
                }
                FeatureLaw::Gaussian => {
                    let scale = 1.0 / ((d_in + 1) as f64).sqrt();
                    for vi in v.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *vi = scale * z;
                    }
                }
            }
            for k in 0..d_in {
                w[(j, k)] = v[k];
            }
            b[j] = v[d_in];
        }
        Ok(Self {
            d_in,
            activation,
            law,
            w,
            b,
        })
    }

    /// Bank from explicit features.
    pub fn from_parts(
        activation: Activation,
        law: FeatureLaw,
        w: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self> {
        if w.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: w.nrows(),
                got: b.len(),
            });
        }
        if w.nrows() == 0 || w.ncols() == 0 {
            return Err(invalid("empty feature bank"));
        }
        Ok(Self {
            d_in: w.ncols(),
            activation,
            law,
            w,
            b,
        })
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn law(&self) -> FeatureLaw {
        self.law
    }

    pub fn weight(&self, j: usize) -> Vec<f64> {
        self.w.row(j).iter().copied().collect()
    }

    pub fn bias(&self, j: usize) -> f64 {
        self.b[j]
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.d_in,
                got: x.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn feature_unchecked(&self, j: usize, x: &[f64]) -> f64 {
        let mut z = self.b[j];
        for (k, xk) in x.iter().enumerate() {
            z += self.w[(j, k)] * xk;
        }
        self.activation.apply(z)
    }

    /// `σ(w_j·x + b_j)` for every feature.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok((0..self.m()).map(|j| self.feature_unchecked(j, x)).collect())
    }

    /// `n × m` matrix of feature values at `points`.
    pub fn feature_matrix(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        for p in points {
            self.check_dim(p)?;
        }
        let m = self.m();
        let rows: Vec<Vec<f64>> = points
            .par_iter()
            .map(|x| (0..m).map(|j| self.feature_unchecked(j, x)).collect())
            .collect();
        Ok(DMatrix::from_fn(points.len(), m, |i, j| rows[i][j]))
    }

    pub fn kernel(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let fx = self.features(x)?;
        let fy = self.features(y)?;
        let prods: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a * b).collect();
        Ok(pairwise_sum(&prods) / self.m() as f64)
    }

    /// Kernel matrix `k(x_i, x_j)`.
    pub fn gram(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let phi = self.feature_matrix(points)?;
        Ok(gram_from_features(&phi))
    }

    /// Quadrature of the integral operator `K f(x) = ∫ k(x,x') f(x') dμ(x')`:
    /// entry `(i, j)` is `k(x_i, x_j) μ_j`.
    pub fn gram_operator(&self, support: &Quadrature) -> Result<DMatrix<f64>> {
        if support.is_empty() {
            return Err(invalid("empty support"));
        }
        let mut k = self.gram(&support.points)?;
        for (j, mu) in support.weights.iter().enumerate() {
            k.column_mut(j).scale_mut(*mu);
        }
        Ok(k)
    }

    /// CSV with header `j,w0,..,b`.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["j".to_string()];
        header.extend((0..self.d_in).map(|k| format!("w{k}")));
        header.push("b".into());
        let mut out = header.join(",");
        out.push('\n');
        for j in 0..self.m() {
            let mut row = vec![j.to_string()];
            row.extend(self.w.row(j).iter().map(|v| v.to_string()));
            row.push(self.b[j].to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, activation: Activation, law: FeatureLaw) -> Result<Self> {
        let rows = parse_indexed_rows(text)?;
        let width = rows.first().map_or(0, |r| r.len());
        if width < 2 {
            return Err(Error::Parse("bank csv needs w and b columns".into()));
        }
        let d_in = width - 1;
        let w = DMatrix::from_fn(rows.len(), d_in, |i, k| rows[i][k]);
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r[d_in]));
        Self::from_parts(activation, law, w, b)
    }
}

/// `(1/m) Φ Φᵀ`.
pub fn gram_from_features(phi: &DMatrix<f64>) -> DMatrix<f64> {
    let m = phi.ncols() as f64;
    let mut k = phi * phi.transpose();
    k /= m;
    k
}

/// Rows of a CSV whose first column is the row index `0..n`.
fn parse_indexed_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().skip(1).filter(|l| !l.trim().is_empty()).enumerate() {
        let mut fields = line.split(',');
        let j: usize = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("{e}")))?;
        if j != i {
            return Err(Error::Parse(format!("row {i} has index {j}")));
        }
        let vals = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<core::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("{e}")))?;
        if rows.first().is_some_and(|r: &Vec<f64>| r.len() != vals.len()) {
            return Err(Error::Parse(format!("row {i} has the wrong width")));
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::Parse("no rows".into()));
    }
    Ok(rows)
}

/// `f_a(x) = (1/m) Σ_j a_j σ(w_j·x + b_j)` with `a` an `m × k` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RfmFunction {
    bank: Arc<FeatureBank>,
    coeffs: DMatrix<f64>,
}

impl RfmFunction {
    pub fn zeros(bank: Arc<FeatureBank>, out_dim: usize) -> Self {
        let m = bank.m();
        Self {
            bank,
            coeffs: DMatrix::zeros(m, out_dim),
        }
    }

    pub fn new(bank: Arc<FeatureBank>, coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.nrows() != bank.m() {
            return Err(Error::DimensionMismatch {
                expected: bank.m(),
                got: coeffs.nrows(),
            });
        }
        Ok(Self { bank, coeffs })
    }

    pub fn bank(&self) -> &Arc<FeatureBank> {
        &self.bank
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.coeffs
    }

    pub fn out_dim(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let phi = self.bank.features(x)?;
        let m = self.bank.m() as f64;
        let mut terms = vec![0.0; phi.len()];
        Ok((0..self.out_dim())
            .map(|c| {
                for (j, t) in terms.iter_mut().enumerate() {
                    *t = self.coeffs[(j, c)] * phi[j];
                }
                pairwise_sum(&terms) / m
            })
            .collect())
    }

    /// `n × k` matrix of values at `points`.
    pub fn evaluate_many(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let phi = self.bank.feature_matrix(points)?;
        Ok(self.evaluate_features(&phi))
    }

    /// Values given a precomputed feature matrix.
    pub fn evaluate_features(&self, phi: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = phi * &self.coeffs;
        out /= self.bank.m() as f64;
        out
    }

    /// `sqrt((1/m) Σ_j ‖a_j‖²)`, the coefficient norm in `L²(ρ_m)`.
    pub fn parameter_norm(&self) -> f64 {
        (self.coeffs.norm_squared() / self.bank.m() as f64).sqrt()
    }

    /// One Euler step of gradient flow: `a_j ← a_j − dt ∫ ∇_f L(x) σ_j(x) dμ(x)`
    /// with `grad(x) = ∇_f L(x)` and `μ` the quadrature `support`.
    pub fn gradient_step(
        &mut self,
        grad: impl Fn(&[f64]) -> Vec<f64>,
        support: &Quadrature,
        dt: f64,
    ) -> Result<()> {
        if !(dt > 0.0) {
            return Err(invalid("dt must be positive"));
        }
        let k = self.out_dim();
        let mut g = DMatrix::zeros(support.len(), k);
        for (i, (x, mu)) in support.points.iter().zip(&support.weights).enumerate() {
            let v = grad(x);
            if v.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: v.len(),
                });
            }
            for c in 0..k {
                g[(i, c)] = mu * v[c];
            }
        }
        let phi = self.bank.feature_matrix(&support.points)?;
        self.apply_gradient(&phi.tr_mul(&g), dt)
    }

    /// `a ← a − dt·G` for a coefficient gradient `G` already assembled.
    pub fn apply_gradient(&mut self, coeff_grad: &DMatrix<f64>, dt: f64) -> Result<()> {
        if coeff_grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
        self.coeffs -= coeff_grad * dt;
        Ok(())
    }

    /// CSV with header `j,a0,..`.
    pub fn coeffs_to_csv(&self) -> String {
        let mut header = vec!["j".to_string()];
        header.extend((0..self.out_dim()).map(|c| format!("a{c}")));
        let mut out = header.join(",");
        out.push('\n');
        for j in 0..self.coeffs.nrows() {
            let mut row = vec![j.to_string()];
            row.extend(self.coeffs.row(j).iter().map(|v| v.to_string()));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_coeffs_csv(bank: Arc<FeatureBank>, text: &str) -> Result<Self> {
        let rows = parse_indexed_rows(text)?;
        let k = rows[0].len();
        Self::new(bank, DMatrix::from_fn(rows.len(), k, |j, c| rows[j][c]))
    }
}

/// Velocity field `V(x, τ)` on `R^d × [0,1]`: an RFM from `R^(d+1)` to `R^d`
/// whose last input coordinate is `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVelocityField {
    inner: RfmFunction,
}

impl TimeVelocityField {
    pub fn new(inner: RfmFunction) -> Result<Self> {
        let d_in = inner.bank().d_in();
        if d_in < 2 || inner.out_dim() != d_in - 1 {
            return Err(Error::DimensionMismatch {
                expected: d_in.saturating_sub(1),
                got: inner.out_dim(),
            });
        }
        Ok(Self { inner })
    }

    pub fn zeros(bank: Arc<FeatureBank>) -> Result<Self> {
        let d = bank.d_in().saturating_sub(1);
        Self::new(RfmFunction::zeros(bank, d))
    }

    pub fn dim(&self) -> usize {
        self.inner.out_dim()
    }

    pub fn inner(&self) -> &RfmFunction {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut RfmFunction {
        &mut self.inner
    }

    pub fn into_inner(self) -> RfmFunction {
        self.inner
    }

    pub fn evaluate(&self, x: &[f64], tau: f64) -> Result<Vec<f64>> {
        let mut z = x.to_vec();
        z.push(tau);
        self.inner.evaluate(&z)
    }

    pub fn parameter_norm(&self) -> f64 {
        self.inner.parameter_norm()
    }

    /// `exp(parameter_norm)`, which bounds the Lipschitz growth of the flow.
    pub fn flow_norm(&self) -> f64 {
        self.parameter_norm().exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn relu_bank(d: usize, m: usize, seed: u64) -> Arc<FeatureBank> {
        Arc::new(FeatureBank::draw(d, m, Activation::Relu, FeatureLaw::L1Sphere, seed).unwrap())
    }

    #[test]
    fn l1_sphere_features_have_unit_norm() {
        let bank = relu_bank(2, 500, 1);
        for j in 0..bank.m() {
            let n: f64 = bank.weight(j).iter().map(|v| v.abs()).sum::<f64>() + bank.bias(j).abs();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_law_second_moment() {
        let bank = FeatureBank::draw(2, 100_000, Activation::Sigmoid, FeatureLaw::Gaussian, 2)
            .unwrap();
        let mean: f64 = (0..bank.m())
            .map(|j| bank.weight(j).iter().map(|v| v * v).sum::<f64>() + bank.bias(j).powi(2))
            .sum::<f64>()
            / bank.m() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn draw_is_deterministic_and_validates() {
        assert_eq!(relu_bank(1, 10, 4), relu_bank(1, 10, 4));
        assert_ne!(relu_bank(1, 10, 4), relu_bank(1, 10, 5));
        assert!(FeatureBank::draw(1, 0, Activation::Relu, FeatureLaw::L1Sphere, 0).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let bank = relu_bank(2, 64, 3);
        let zero = RfmFunction::zeros(bank.clone(), 2);
        assert_eq!(zero.evaluate(&[0.3, -0.2]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            zero.evaluate(&[0.3]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));

        let single = FeatureBank::from_parts(
            Activation::Sigmoid,
            FeatureLaw::Gaussian,
            DMatrix::zeros(1, 1),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let f = RfmFunction::new(Arc::new(single), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let e = std::f64::consts::E;
        assert!((f.evaluate(&[5.0]).unwrap()[0] - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn evaluate_matches_direct_sum() {
        let bank = relu_bank(2, 300, 8);
        let mut rng = rng::stream(8, rng::PLANT);
        let coeffs = DMatrix::from_fn(300, 2, |_, _| rng.random::<f64>() - 0.5);
        let f = RfmFunction::new(bank.clone(), coeffs.clone()).unwrap();
        let x = [0.4, -1.3];
        let mut direct = [0.0; 2];
        for j in 0..300 {
            let w = bank.weight(j);
            let s = (w[0] * x[0] + w[1] * x[1] + bank.bias(j)).max(0.0);
            direct[0] += coeffs[(j, 0)] * s;
            direct[1] += coeffs[(j, 1)] * s;
        }
        let got = f.evaluate(&x).unwrap();
        for c in 0..2 {
            assert!((got[c] - direct[c] / 300.0).abs() < 1e-12);
        }
        let many = f.evaluate_many(&[x.to_vec()]).unwrap();
        assert!((many[(0, 1)] - got[1]).abs() < 1e-12);
    }

    #[test]
    fn gram_is_symmetric_psd() {
        let bank = relu_bank(2, 256, 9);
        let mut rng = rng::stream(9, rng::SAMPLE);
        let pts: Vec<Vec<f64>> = (0..10)
            .map(|_| vec![rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0])
            .collect();
        let k = bank.gram(&pts).unwrap();
        for i in 0..10 {
            assert!(k[(i, i)] >= 0.0);
            for j in 0..10 {
                assert!((k[(i, j)] - k[(j, i)]).abs() < 1e-15);
            }
        }
        let min = SymmetricEigen::new(k).eigenvalues.min();
        assert!(min >= -1e-10, "min eigenvalue {min}");
        let direct = bank.kernel(&pts[2], &pts[5]).unwrap();
        let via_gram = bank.gram(&pts).unwrap()[(2, 5)];
        assert!((direct - via_gram).abs() < 1e-14);
    }

    #[test]
    fn gram_operator_examples() {
        // w = 0, b = 1 under ReLU gives the constant kernel 1
        let bank = FeatureBank::from_parts(
            Activation::Relu,
            FeatureLaw::L1Sphere,
            DMatrix::zeros(1, 1),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let g = crate::measures::GridDensity::uniform(1, 2).unwrap();
        let k = bank.gram_operator(&Quadrature::from(&g)).unwrap();
        assert_eq!(k, DMatrix::from_element(2, 2, 0.5));

        let bank = relu_bank(1, 128, 10);
        let g = crate::measures::GridDensity::from_fn(1, 16, |x| 1.0 + x[0]).unwrap();
        let q = Quadrature::from(&g);
        let k = bank.gram_operator(&q).unwrap();
        let ones = DVector::from_element(16, 1.0);
        let applied = &k * ones;
        for i in 0..16 {
            let embed: f64 = (0..16)
                .map(|j| bank.kernel(&q.points[i], &q.points[j]).unwrap() * q.weights[j])
                .sum();
            assert!((applied[i] - embed).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_norm_examples() {
        let bank = relu_bank(1, 16, 11);
        assert_eq!(RfmFunction::zeros(bank.clone(), 1).parameter_norm(), 0.0);
        let ones = RfmFunction::new(bank.clone(), DMatrix::from_element(16, 1, 1.0)).unwrap();
        assert!((ones.parameter_norm() - 1.0).abs() < 1e-15);
        let scaled = RfmFunction::new(bank, DMatrix::from_element(16, 1, -3.0)).unwrap();
        assert!((scaled.parameter_norm() - 3.0).abs() < 1e-15);
    }

    fn l2_norm_sq(f: &RfmFunction, q: &Quadrature) -> f64 {
        let v = f.evaluate_many(&q.points).unwrap();
        q.weights.iter().enumerate().map(|(i, w)| w * v[(i, 0)].powi(2)).sum()
    }

    #[test]
    fn gradient_step_examples() {
        let bank = relu_bank(1, 256, 12);
        let g = crate::measures::GridDensity::uniform(1, 32).unwrap();
        let q = Quadrature::from(&g);
        let mut rng = rng::stream(12, rng::PLANT);
        let coeffs = DMatrix::from_fn(256, 1, |_, _| rng.random::<f64>() - 0.3);
        let f0 = RfmFunction::new(bank, coeffs).unwrap();

        let mut same = f0.clone();
        same.gradient_step(|_| vec![0.0], &q, 0.1).unwrap();
        assert_eq!(same, f0);

        // L(f) = ½‖f‖², ∇L = f
        let mut f1 = f0.clone();
        let snapshot = f0.clone();
        f1.gradient_step(|x| snapshot.evaluate(x).unwrap(), &q, 0.1).unwrap();
        assert!(l2_norm_sq(&f1, &q) < l2_norm_sq(&f0, &q));

        // Richardson: two half steps vs one full step differ by O(dt²)
        let gap = |dt: f64| {
            let mut full = f0.clone();
            let s = f0.clone();
            full.gradient_step(|x| s.evaluate(x).unwrap(), &q, dt).unwrap();
            let mut half = f0.clone();
            for _ in 0..2 {
                let s = half.clone();
                half.gradient_step(|x| s.evaluate(x).unwrap(), &q, dt / 2.0).unwrap();
            }
            (full.coeffs() - half.coeffs()).norm()
        };
        let ratio = gap(0.2) / gap(0.1);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");

        let mut bad = f0.clone();
        let err = bad.gradient_step(|_| vec![f64::NAN], &q, 0.1).unwrap_err();
        assert!(err.to_string().starts_with("diverged"));
    }

    #[test]
    fn kernel_converges_as_m_doubles() {
        let x = [0.3];
        let y = [0.7];
        let k: Vec<f64> = [1024, 2048, 4096, 8192]
            .iter()
            .map(|m| relu_bank(1, *m, 13).kernel(&x, &y).unwrap())
            .collect();
        for (i, m) in [1024.0f64, 2048.0, 4096.0].iter().enumerate() {
            assert!((k[i + 1] - k[i]).abs() < 3.0 / m.sqrt());
        }
    }

    #[test]
    fn csv_round_trip() {
        let bank = relu_bank(2, 5, 14);
        let back = FeatureBank::from_csv(&bank.to_csv(), Activation::Relu, FeatureLaw::L1Sphere)
            .unwrap();
        assert_eq!(&back, bank.as_ref());
        let f = RfmFunction::new(bank.clone(), DMatrix::from_fn(5, 2, |j, c| (j * 2 + c) as f64))
            .unwrap();
        assert!(f.coeffs_to_csv().starts_with("j,a0,a1\n0,0,1\n"));
        assert_eq!(RfmFunction::from_coeffs_csv(bank, &f.coeffs_to_csv()).unwrap(), f);
    }

    #[test]
    fn time_velocity_field_shapes() {
        let bank = relu_bank(2, 8, 15);
        let v = TimeVelocityField::zeros(bank.clone()).unwrap();
        assert_eq!(v.dim(), 1);
        assert_eq!(v.evaluate(&[0.1], 0.5).unwrap(), vec![0.0]);
        assert_eq!(v.flow_norm(), 1.0);
        assert!(TimeVelocityField::new(RfmFunction::zeros(bank, 2)).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }
}

/// Gradient flow of `L(f) = ½ ∫ (f − f*)² dμ` over a quadrature `μ`, starting
/// from `f = 0`. In function values at the nodes the flow is `ḟ = −KW(f − f*)`
/// with `K` the kernel matrix and `W` the node weights.
#[derive(Debug, Clone)]
pub struct KernelRegression {
    model: RfmFunction,
    support: Quadrature,
    phi: DMatrix<f64>,
    target: DVector<f64>,
    sqrt_w: DVector<f64>,
    eigen: nalgebra::SymmetricEigen<f64, nalgebra::Dyn>,
}

impl KernelRegression {
    pub fn new(bank: Arc<FeatureBank>, support: Quadrature, target: &[f64]) -> Result<Self> {
        if target.len() != support.len() {
            return Err(Error::DimensionMismatch {
                expected: support.len(),
                got: target.len(),
            });
        }
        let phi = bank.feature_matrix(&support.points)?;
        let sqrt_w = DVector::from_iterator(support.len(), support.weights.iter().map(|w| w.sqrt()));
        let mut s = gram_from_features(&phi);
        for i in 0..s.nrows() {
            for j in 0..s.ncols() {
                s[(i, j)] *= sqrt_w[i] * sqrt_w[j];
            }
        }
        Ok(Self {
            model: RfmFunction::zeros(bank, 1),
            support,
            phi,
            target: DVector::from_column_slice(target),
            sqrt_w,
            eigen: s.symmetric_eigen(),
        })
    }

    pub fn model(&self) -> &RfmFunction {
        &self.model
    }

    /// Current values at the nodes.
    pub fn values(&self) -> DVector<f64> {
        self.model.evaluate_features(&self.phi).column(0).into_owned()
    }

    pub fn loss_of(&self, values: &DVector<f64>) -> f64 {
        let r = values - &self.target;
        0.5 * r
            .iter()
            .zip(&self.support.weights)
            .map(|(r, w)| w * r * r)
            .sum::<f64>()
    }

    pub fn loss(&self) -> f64 {
        self.loss_of(&self.values())
    }

    /// One Euler step in coefficient space.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let r = self.values() - &self.target;
        let g = DMatrix::from_iterator(
            r.len(),
            1,
            r.iter().zip(&self.support.weights).map(|(r, w)| r * w),
        );
        self.model.apply_gradient(&self.phi.tr_mul(&g), dt)
    }

    /// Exact node values at time `t`: in the eigenbasis of `W^½ K W^½`,
    /// mode `i` of `W^½ f` is `(1 − e^{−λ_i t})` times the same mode of `W^½ f*`.
    pub fn spectral_values(&self, t: f64) -> DVector<f64> {
        let u = &self.eigen.eigenvectors;
        let wf = self.target.component_mul(&self.sqrt_w);
        let mut c = u.tr_mul(&wf);
        for (ci, l) in c.iter_mut().zip(self.eigen.eigenvalues.iter()) {
            *ci *= -(-l.max(0.0) * t).exp_m1();
        }
        (u * c).component_div(&self.sqrt_w)
    }
}
