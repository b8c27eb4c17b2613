//! Mode-collapse toy games and one-dimensional Wasserstein landscape flows.
//!
//! The games pit a generator `G(x) = a x` against a discriminator
//! `D(x) = b φ(x)` with base and target `U[0,1]` and loss
//! `∫ D d(G#P − P*) + (c/2) b²`. Mode collapse is the event `a = 0`.
//!
//! The landscape flow moves a generator `G: [0,1] → R` toward the conditional
//! mean `m ∘ G` of the optimal transport plan between `G#U[0,1]` and `P*`.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::measures::{GridDensity, ParticleMeasure};
use crate::metrics::{w2_1d, Quantile1d, QuantilePiece};
use crate::trajectory::TrajectoryLog;

/// Dense sampling step for [`detect_collapse_case1`].
pub const CASE1_SCAN_STEP: f64 = 1e-3;
/// Case two stops once `a` falls to this level.
pub const UNDERFLOW_LEVEL: f64 = 1e-12;
/// Nodes closer than this are treated as one atom.
pub const ATOM_TOL: f64 = 1e-9;
/// Default number of base nodes for landscape flows.
pub const LANDSCAPE_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discriminator {
    /// `φ(x) = |x|` (case one).
    Abs,
    /// `φ(x) = x²/2` (case two).
    HalfSquare,
}

/// Parameters of a toy game.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyGameState {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub phi: Discriminator,
}

impl ToyGameState {
    /// Continuous gradient descent-ascent field `(da/dt, db/dt)` on `a > 0`.
    pub fn field(&self) -> (f64, f64) {
        let (a, b, c) = (self.a, self.b, self.c);
        match self.phi {
            Discriminator::Abs => (-b / 2.0, (a - 1.0) / 2.0 - c * b),
            Discriminator::HalfSquare => (-a * b / 3.0, (a * a - 1.0) / 6.0 - c * b),
        }
    }

    pub fn collapsed(&self) -> bool {
        self.a <= 0.0
    }
}

/// Case one solution from `(a0, 0)`, valid until `a` first reaches zero:
///
/// ```text
/// a_t = 1 + (a0−1) e^{−ct/2} (cos ωt + c/√(1−c²) sin ωt)
/// b_t = (a0−1)/√(1−c²) e^{−ct/2} sin ωt,        ω = √(1−c²)/2.
/// ```
pub fn case1_closed_form(a0: f64, c: f64, t: f64) -> (f64, f64) {
    let s = (1.0 - c * c).sqrt();
    let w = s / 2.0;
    let decay = (-c * t / 2.0).exp();
    let a = 1.0 + (a0 - 1.0) * decay * ((w * t).cos() + c / s * (w * t).sin());
    let b = (a0 - 1.0) / s * decay * (w * t).sin();
    (a, b)
}

/// Smallest `a0` for which case one collapses within one period.
pub fn case1_threshold(c: f64) -> f64 {
    1.0 + (c * std::f64::consts::PI / (1.0 - c * c).sqrt()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Case1Outcome {
    Collapsed { t: f64 },
    Survived { min_a: f64 },
}

/// First time `a_t ≤ 0`: a uniform scan of the closed form up to `horizon`,
/// with the sign change then refined by bisection.
pub fn detect_collapse_case1(a0: f64, c: f64, horizon: f64) -> Result<Case1Outcome> {
    if !(a0 > 0.0) || !(0.0..1.0).contains(&c) || !(horizon >= 0.0) {
        return Err(invalid("need a0 > 0, c ∈ [0,1) and horizon ≥ 0"));
    }
    let steps = (horizon / CASE1_SCAN_STEP).ceil() as usize;
    let mut min_a = a0;
    let mut prev = 0.0;
    for k in 0..=steps {
        let t = (k as f64 * CASE1_SCAN_STEP).min(horizon);
        let (a, _) = case1_closed_form(a0, c, t);
        if a <= 0.0 {
            let (mut lo, mut hi) = (prev, t);
            while hi - lo > 1e-14 * hi.max(1.0) {
                let mid = 0.5 * (lo + hi);
                if case1_closed_form(a0, c, mid).0 <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(Case1Outcome::Collapsed { t: hi });
        }
        min_a = min_a.min(a);
        prev = t;
    }
    Ok(Case1Outcome::Survived { min_a })
}

/// `H(a,b) = b²/2 + (a²−1)/4 − ln(a)/2`, minimized at `(1, 0)` with value 0.
pub fn energy(a: f64, b: f64) -> f64 {
    b * b / 2.0 + (a * a - 1.0) / 4.0 - a.ln() / 2.0
}

/// Modified equation of the case two discrete map, accurate to `O(γ²)`.
pub fn case2_modified_ode(a: f64, b: f64, c: f64, gamma: f64) -> (f64, f64) {
    let da = -a * b / 3.0
        + gamma * (-a * b * b / 18.0 + a * (a * a - 1.0) / 36.0 - c * a * b / 6.0);
    let db = (a * a - 1.0) / 6.0 - c * b
        + gamma * (a * a * b / 18.0 + c * (a * a - 1.0) / 12.0 - c * c * b / 2.0);
    (da, db)
}

/// Closed expression for `dH/dt` along the modified equation.
pub fn case2_energy_rate(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    -c * b * b
        + gamma
            * ((a * a + 1.0) * b * b / 36.0 + (a * a - 1.0).powi(2) / 72.0 - c * c * b * b / 2.0)
}

/// One step of the discrete case two dynamics.
pub fn case2_step(a: f64, b: f64, c: f64, gamma: f64) -> (f64, f64) {
    (
        a - gamma * a * b / 3.0,
        b + gamma * ((a * a - 1.0) / 6.0 - c * b),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Case2Outcome {
    /// `a` reached the underflow level at this step.
    Collapsed { step: usize },
    Running,
}

#[derive(Debug, Clone)]
pub struct Case2Run {
    /// Columns `t, a, b, H` with `t = kγ`.
    pub log: TrajectoryLog,
    pub outcome: Case2Outcome,
    pub final_state: (f64, f64),
    pub steps: usize,
}

/// Iterate the discrete map from `(a0, b0)` until `a ≤ 1e-12` or `max_steps`.
/// Every `log_every`-th step is logged, along with the final one.
pub fn case2_discrete(
    a0: f64,
    b0: f64,
    c: f64,
    gamma: f64,
    max_steps: usize,
    log_every: usize,
) -> Result<Case2Run> {
    if !(a0 > 0.0) || !(gamma > 0.0) || !(c >= 0.0) || log_every == 0 {
        return Err(invalid("need a0 > 0, γ > 0, c ≥ 0 and log_every ≥ 1"));
    }
    let mut log = TrajectoryLog::new(&["t", "a", "b", "H"]);
    let (mut a, mut b) = (a0, b0);
    log.push(&[0.0, a, b, energy(a, b)]);
    for k in 1..=max_steps {
        (a, b) = case2_step(a, b, c, gamma);
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::Diverged(format!("non-finite state at step {k}")));
        }
        let collapsed = a <= UNDERFLOW_LEVEL;
        if k % log_every == 0 || k == max_steps || collapsed {
            let h = if a > 0.0 { energy(a, b) } else { f64::INFINITY };
            log.push(&[k as f64 * gamma, a, b, h]);
        }
        if collapsed {
            return Ok(Case2Run {
                log,
                outcome: Case2Outcome::Collapsed { step: k },
                final_state: (a, b),
                steps: k,
            });
        }
    }
    Ok(Case2Run {
        log,
        outcome: Case2Outcome::Running,
        final_state: (a, b),
        steps: max_steps,
    })
}

/// One row of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub a0: f64,
    pub c: f64,
    pub gamma: Option<f64>,
    pub outcome: String,
    pub t_collapse: Option<f64>,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut out = String::from("a0,c,gamma,outcome,t_collapse\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.a0,
            r.c,
            opt(r.gamma),
            r.outcome,
            opt(r.t_collapse)
        ));
    }
    out
}

/// Case one outcome for every `(a0, c)` pair.
pub fn case1_sweep(a0s: &[f64], cs: &[f64], horizon: f64) -> Result<Vec<SweepRow>> {
    use rayon::prelude::*;
    let cells: Vec<(f64, f64)> = a0s
        .iter()
        .flat_map(|a| cs.iter().map(move |c| (*a, *c)))
        .collect();
    cells
        .par_iter()
        .map(|(a0, c)| {
            let out = detect_collapse_case1(*a0, *c, horizon)?;
            Ok(match out {
                Case1Outcome::Collapsed { t } => SweepRow {
                    a0: *a0,
                    c: *c,
                    gamma: None,
                    outcome: "collapsed".into(),
                    t_collapse: Some(t),
                },
                Case1Outcome::Survived { .. } => SweepRow {
                    a0: *a0,
                    c: *c,
                    gamma: None,
                    outcome: "survived".into(),
                    t_collapse: None,
                },
            })
        })
        .collect()
}

/// Generator values at uniform nodes `z_i = (i + ½)/N` of `U[0,1]`, with a
/// 1-D target law.
#[derive(Debug, Clone, PartialEq)]
pub struct Transport1DState {
    pub g: Vec<f64>,
    pub target: GridDensity,
}

/// Stationarity class of a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stationarity {
    GlobalMin,
    GeneralizedSaddle,
    NotStationary,
}

impl std::fmt::Display for Stationarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stationarity::GlobalMin => "global_min",
            Stationarity::GeneralizedSaddle => "generalized_saddle",
            Stationarity::NotStationary => "not_stationary",
        })
    }
}

/// `N ∫_{u0}^{u1} F⁻¹(u) du / (u1 − u0)` over piecewise-linear quantiles.
fn quantile_mean(pieces: &[QuantilePiece], u0: f64, u1: f64) -> f64 {
    let mut total = 0.0;
    for p in pieces {
        let lo = p.u0.max(u0);
        let hi = p.u1.min(u1);
        if hi <= lo {
            continue;
        }
        let at = |u: f64| {
            if p.u1 == p.u0 {
                p.x0
            } else {
                p.x0 + (p.x1 - p.x0) * (u - p.u0) / (p.u1 - p.u0)
            }
        };
        total += (hi - lo) * (at(lo) + at(hi)) / 2.0;
    }
    total / (u1 - u0)
}

impl Transport1DState {
    pub fn new(g: Vec<f64>, target: GridDensity) -> Result<Self> {
        if g.is_empty() {
            return Err(invalid("need at least one node"));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("non-finite generator value".into()));
        }
        if target.dim() != 1 {
            return Err(invalid("landscape target must be 1-D"));
        }
        Ok(Self { g, target })
    }

    /// `G(z_i) = f(z_i)` on `n` nodes.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64, target: GridDensity) -> Result<Self> {
        Self::new((0..n).map(|i| f(node(i, n))).collect(), target)
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// `G#U[0,1]` as equal-weight particles.
    pub fn pushforward(&self) -> ParticleMeasure {
        ParticleMeasure::from_scalars(&self.g).expect("nonempty node set")
    }

    /// Node indices grouped into atoms (runs of sorted values within
    /// [`ATOM_TOL`]), in increasing order of value.
    pub fn atoms(&self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.g.len()).collect();
        order.sort_by(|i, j| self.g[*i].total_cmp(&self.g[*j]).then(i.cmp(j)));
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in order {
            match groups.last_mut() {
                Some(grp) if self.g[i] - self.g[*grp.last().unwrap()] <= ATOM_TOL => grp.push(i),
                _ => groups.push(vec![i]),
            }
        }
        groups
    }

    /// Conditional mean of the optimal plan from `G#U` to the target, at each
    /// node. A node of rank `r` that is not part of an atom is sent to
    /// `F*⁻¹((r + ½)/N)`; an atom covering ranks `r..r+k` is sent to the mean
    /// of `F*⁻¹` over `[r/N, (r+k)/N]`.
    pub fn conditional_mean_map(&self) -> Vec<f64> {
        let n = self.g.len() as f64;
        let pieces = self.target.quantile_pieces();
        let mut out = vec![0.0; self.g.len()];
        let mut rank = 0usize;
        for grp in self.atoms() {
            let value = if grp.len() == 1 {
                self.target.quantile((rank as f64 + 0.5) / n)
            } else {
                quantile_mean(&pieces, rank as f64 / n, (rank + grp.len()) as f64 / n)
            };
            for i in &grp {
                out[*i] = value;
            }
            rank += grp.len();
        }
        out
    }

    pub fn w2_to_target(&self) -> f64 {
        w2_1d(&self.target, &self.pushforward())
    }
}

fn node(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

/// Root-mean-square over nodes.
fn rms(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Classify a generator by whether `m ∘ G = G` and whether `G#U` has atoms.
pub fn classify_stationary(state: &Transport1DState) -> Stationarity {
    let m = state.conditional_mean_map();
    let gap = rms(m.iter().zip(&state.g).map(|(a, b)| a - b));
    if gap > 1e-9 {
        Stationarity::NotStationary
    } else if state.atoms().iter().any(|grp| grp.len() > 1) {
        Stationarity::GeneralizedSaddle
    } else {
        Stationarity::GlobalMin
    }
}

/// `G_t = e^{−t} G₀ + (1 − e^{−t}) m₀∘G₀`.
pub fn landscape_state_at(init: &Transport1DState, m0: &[f64], t: f64) -> Transport1DState {
    let e = (-t).exp();
    Transport1DState {
        g: init
            .g
            .iter()
            .zip(m0)
            .map(|(g, m)| e * g + (1.0 - e) * m)
            .collect(),
        target: init.target.clone(),
    }
}

/// Closed-form landscape trajectory logged at `t = k·dt` up to `horizon`.
/// Columns: `t, w2, invariance` where `invariance` is the `L∞` distance
/// between `m_t∘G_t` recomputed at `t` and `m₀∘G₀`.
pub fn landscape_flow(init: &Transport1DState, dt: f64, horizon: f64) -> Result<TrajectoryLog> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(invalid("need dt > 0 and horizon ≥ 0"));
    }
    let m0 = init.conditional_mean_map();
    let mut log = TrajectoryLog::new(&["t", "w2", "invariance"]);
    let steps = (horizon / dt).round() as usize;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let state = landscape_state_at(init, &m0, t);
        if state.g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!("non-finite generator at t = {t}")));
        }
        let mt = state.conditional_mean_map();
        let drift = mt
            .iter()
            .zip(&m0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        log.push(&[t, state.w2_to_target(), drift]);
    }
    Ok(log)
}
