//! Test errors: KL divergence between grid densities, 2-Wasserstein distances,
//! and the MMD of a random feature kernel.

use crate::error::{invalid, Error, Result};
use crate::measures::{GridDensity, ParticleMeasure, Quadrature};
use crate::rfm::{pairwise_sum, FeatureBank};

/// Largest problem accepted by [`w2_exact_small`].
pub const EXACT_MATCHING_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kl {
    pub value: f64,
    /// `p` puts mass where `q` has none; `value` is then `+∞`.
    pub support_violation: bool,
}

/// `KL(p‖q) = Σ_i mass_p(i) log(p_i / q_i)` with `0 log 0 = 0`.
pub fn kl(p: &GridDensity, q: &GridDensity) -> Result<Kl> {
    if !p.same_grid(q) {
        return Err(invalid("kl needs densities on the same grid"));
    }
    let vol = p.cell_volume();
    let mut terms = Vec::with_capacity(p.num_cells());
    for (pi, qi) in p.values().iter().zip(q.values()) {
        if *pi == 0.0 {
            continue;
        }
        if *qi == 0.0 {
            return Ok(Kl {
                value: f64::INFINITY,
                support_violation: true,
            });
        }
        terms.push(pi * vol * (pi / qi).ln());
    }
    Ok(Kl {
        value: pairwise_sum(&terms),
        support_violation: false,
    })
}

/// One piece of a quantile function: linear from `x0` at `u0` to `x1` at `u1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantilePiece {
    pub u0: f64,
    pub u1: f64,
    pub x0: f64,
    pub x1: f64,
}

impl QuantilePiece {
    fn at(&self, u: f64) -> f64 {
        if self.u1 == self.u0 {
            self.x0
        } else {
            self.x0 + (self.x1 - self.x0) * (u - self.u0) / (self.u1 - self.u0)
        }
    }
}

/// One-dimensional laws with a piecewise-linear quantile function.
pub trait Quantile1d {
    /// Pieces covering `[0, 1]` in order.
    fn quantile_pieces(&self) -> Vec<QuantilePiece>;

    fn quantile(&self, u: f64) -> f64 {
        let pieces = self.quantile_pieces();
        let i = pieces.partition_point(|p| p.u1 < u).min(pieces.len() - 1);
        pieces[i].at(u)
    }
}

fn close_pieces(mut pieces: Vec<QuantilePiece>) -> Vec<QuantilePiece> {
    if let Some(last) = pieces.last_mut() {
        last.u1 = 1.0;
    }
    pieces
}

impl Quantile1d for ParticleMeasure {
    fn quantile_pieces(&self) -> Vec<QuantilePiece> {
        let mut pts: Vec<(f64, f64)> = self
            .points()
            .iter()
            .zip(self.weights())
            .filter(|(_, w)| **w > 0.0)
            .map(|(p, w)| (p[0], *w))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut u = 0.0;
        close_pieces(
            pts.into_iter()
                .map(|(x, w)| {
                    let piece = QuantilePiece {
                        u0: u,
                        u1: u + w,
                        x0: x,
                        x1: x,
                    };
                    u += w;
                    piece
                })
                .collect(),
        )
    }
}

impl Quantile1d for GridDensity {
    fn quantile_pieces(&self) -> Vec<QuantilePiece> {
        assert_eq!(self.dim(), 1, "quantiles need a 1-D grid");
        let h = self.cell_width();
        let total = self.total_mass();
        let mut u = 0.0;
        let mut pieces = Vec::new();
        for (i, mass) in self.masses().into_iter().enumerate() {
            if mass <= 0.0 {
                continue;
            }
            let w = mass / total;
            pieces.push(QuantilePiece {
                u0: u,
                u1: u + w,
                x0: i as f64 * h,
                x1: (i + 1) as f64 * h,
            });
            u += w;
        }
        close_pieces(pieces)
    }
}

/// `W2` between 1-D laws via the quantile coupling
/// `sqrt(∫₀¹ |F_a⁻¹(u) − F_b⁻¹(u)|² du)`, integrated exactly.
pub fn w2_1d<A: Quantile1d + ?Sized, B: Quantile1d + ?Sized>(a: &A, b: &B) -> f64 {
    let pa = a.quantile_pieces();
    let pb = b.quantile_pieces();
    if pa.is_empty() || pb.is_empty() {
        return f64::NAN;
    }
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut terms = Vec::with_capacity(pa.len() + pb.len());
    while i < pa.len() && j < pb.len() {
        let v = pa[i].u1.min(pb[j].u1);
        if v > u {
            let d0 = pa[i].at(u) - pb[j].at(u);
            let d1 = pa[i].at(v) - pb[j].at(v);
            terms.push((v - u) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0);
            u = v;
        }
        if pa[i].u1 <= v {
            i += 1;
        }
        if pb[j].u1 <= v {
            j += 1;
        }
    }
    pairwise_sum(&terms).max(0.0).sqrt()
}

/// Minimum-cost perfect matching for a square cost matrix, `O(n³)`.
/// Returns the column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based potentials over rows (u) and columns (v); column 0 is virtual
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Exact `W2` between equal-weight point sets of the same size, by optimal
/// assignment on squared Euclidean cost.
pub fn w2_exact_small(a: &ParticleMeasure, b: &ParticleMeasure) -> Result<f64> {
    let n = a.len();
    if n > EXACT_MATCHING_CAP {
        return Err(Error::SizeCap {
            n,
            cap: EXACT_MATCHING_CAP,
        });
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let equal = |p: &ParticleMeasure| p.weights().iter().all(|w| (w - 1.0 / n as f64).abs() < 1e-12);
    if !equal(a) || !equal(b) {
        return Err(invalid("exact matching needs equal weights"));
    }
    let cost: Vec<Vec<f64>> = a
        .points()
        .iter()
        .map(|x| b.points().iter().map(|y| sq_dist(x, y)).collect())
        .collect();
    let assignment = hungarian(&cost);
    let terms: Vec<f64> = assignment
        .iter()
        .enumerate()
        .map(|(i, j)| cost[i][*j])
        .collect();
    Ok((pairwise_sum(&terms) / n as f64).sqrt())
}

/// `½ ∬ k d(a−b) d(a−b)` for the bank's kernel.
///
/// The kernel is a feature average, so the double sum factors through the
/// feature mean embeddings: `½ (1/m) Σ_j (∫ σ_j d(a−b))²`.
pub fn mmd2(a: &Quadrature, b: &Quadrature, bank: &FeatureBank) -> Result<f64> {
    mmd2_signed(&a.minus(b), bank)
}

/// `½ ∬ k dμ dμ` for a signed measure `μ`.
pub fn mmd2_signed(mu: &Quadrature, bank: &FeatureBank) -> Result<f64> {
    let phi = bank.feature_matrix(&mu.points)?;
    let c = nalgebra::DVector::from_column_slice(&mu.weights);
    let embed = phi.tr_mul(&c);
    Ok(0.5 * embed.norm_squared() / bank.m() as f64)
}
