//! Losses, the δ-inflated ball oracle `ℓ^δ`, the grid `Δ_K`, and the
//! periodic counterexample family.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::measure::{self, euclidean, TransportCost};

/// A loss `ℓ(x, ξ)` for scalar decisions. Implementations may supply exact
/// ball maxima and extrema; otherwise the oracle enumerates the event set.
pub trait Loss: Send + Sync {
    fn eval(&self, x: f64, xi: &[f64]) -> f64;

    /// `sup {ℓ(x, ξ′) : ξ′ ∈ Σ, ‖ξ′ − ξ‖ ≤ radius}` when known in closed form.
    fn ball_sup(&self, _x: f64, _xi: &[f64], _radius: f64, _domain: &EventSet) -> Option<f64> {
        None
    }

    /// `sup_Σ ℓ(x, ·)` when known in closed form.
    fn sup(&self, _x: f64, _domain: &EventSet) -> Option<f64> {
        None
    }

    /// `inf_Σ ℓ(x, ·)` when known in closed form.
    fn inf(&self, _x: f64, _domain: &EventSet) -> Option<f64> {
        None
    }
}

struct FnLoss<F>(F);

impl<F: Fn(f64, &[f64]) -> f64 + Send + Sync> Loss for FnLoss<F> {
    fn eval(&self, x: f64, xi: &[f64]) -> f64 {
        (self.0)(x, xi)
    }
}

/// The event set Σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum EventSet {
    /// A finite list of points.
    Points(Vec<Vec<f64>>),
    /// An axis-aligned box evaluated on a uniform grid with `resolution`
    /// points per axis.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        #[serde(default = "default_resolution")]
        resolution: usize,
    },
}

fn default_resolution() -> usize {
    2001
}

const MAX_GRID_POINTS: usize = 4_000_000;

impl EventSet {
    pub fn interval(lo: f64, hi: f64) -> Self {
        EventSet::Box {
            lo: vec![lo],
            hi: vec![hi],
            resolution: default_resolution(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EventSet::Points(p) => p.first().map(|v| v.len()).unwrap_or(0),
            EventSet::Box { lo, .. } => lo.len(),
        }
    }

    /// Materialized evaluation points.
    pub fn points(&self) -> Result<Vec<Vec<f64>>> {
        match self {
            EventSet::Points(p) => {
                if p.is_empty() {
                    return Err(Error::Config("empty event set".into()));
                }
                Ok(p.clone())
            }
            EventSet::Box { lo, hi, resolution } => {
                let d = lo.len();
                if d == 0 || d != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
                    return Err(Error::Config("box event set needs matching lo ≤ hi vectors".into()));
                }
                if *resolution < 2 {
                    return Err(Error::Config("box resolution must be at least 2".into()));
                }
                let total = (*resolution as f64).powi(d as i32);
                if total > MAX_GRID_POINTS as f64 {
                    return Err(Error::Resource(format!("box grid with {total} points exceeds {MAX_GRID_POINTS}")));
                }
                let r = *resolution;
                let mut out = Vec::with_capacity(total as usize);
                let mut idx = vec![0usize; d];
                loop {
                    out.push(
                        (0..d)
                            .map(|k| lo[k] + (hi[k] - lo[k]) * idx[k] as f64 / (r - 1) as f64)
                            .collect(),
                    );
                    let mut k = 0;
                    while k < d {
                        idx[k] += 1;
                        if idx[k] < r {
                            break;
                        }
                        idx[k] = 0;
                        k += 1;
                    }
                    if k == d {
                        break;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Euclidean diameter (exact for boxes).
    pub fn diameter(&self) -> Result<f64> {
        match self {
            EventSet::Points(p) => Ok(measure::diameter(p).0),
            EventSet::Box { lo, hi, .. } => Ok(euclidean(lo, hi)),
        }
    }
}

/// A loss bound to an event set, with the ball oracle `ℓ^δ` and `ℓ^∞`.
#[derive(Clone)]
pub struct LossOracle {
    loss: Arc<dyn Loss>,
    domain: EventSet,
    grid: Arc<Vec<Vec<f64>>>,
    diam: f64,
}

impl std::fmt::Debug for LossOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LossOracle")
            .field("domain", &self.domain)
            .field("diam", &self.diam)
            .finish()
    }
}

impl LossOracle {
    pub fn new(loss: Arc<dyn Loss>, domain: EventSet) -> Result<Self> {
        let grid = domain.points()?;
        let diam = domain.diameter()?;
        Ok(LossOracle {
            loss,
            domain,
            grid: Arc::new(grid),
            diam,
        })
    }

    pub fn from_fn(f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static, domain: EventSet) -> Result<Self> {
        Self::new(Arc::new(FnLoss(f)), domain)
    }

    pub fn domain(&self) -> &EventSet {
        &self.domain
    }

    pub fn grid(&self) -> &[Vec<f64>] {
        &self.grid
    }

    /// Euclidean diameter of Σ.
    pub fn diameter(&self) -> f64 {
        self.diam
    }

    /// Diameter of Σ measured by `cost`.
    pub fn cost_diameter(&self, cost: &TransportCost) -> f64 {
        match cost {
            TransportCost::Euclidean => self.diam,
            TransportCost::LpIndicator { cutoff } => {
                if self.diam > *cutoff {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn eval(&self, x: f64, xi: &[f64]) -> f64 {
        self.loss.eval(x, xi)
    }

    /// `ℓ^∞(x) = sup_Σ ℓ(x, ·)`.
    pub fn sup_loss(&self, x: f64) -> f64 {
        if let Some(v) = self.loss.sup(x, &self.domain) {
            return v;
        }
        self.grid
            .iter()
            .map(|p| self.loss.eval(x, p))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `inf_Σ ℓ(x, ·)`.
    pub fn inf_loss(&self, x: f64) -> f64 {
        if let Some(v) = self.loss.inf(x, &self.domain) {
            return v;
        }
        self.grid
            .iter()
            .map(|p| self.loss.eval(x, p))
            .fold(f64::INFINITY, f64::min)
    }

    fn euclidean_ball_sup(&self, x: f64, xi: &[f64], radius: f64) -> f64 {
        let own = self.loss.eval(x, xi);
        if let Some(v) = self.loss.ball_sup(x, xi, radius, &self.domain) {
            return v.max(own);
        }
        self.grid
            .iter()
            .filter(|p| euclidean(p, xi) <= radius)
            .map(|p| self.loss.eval(x, p))
            .fold(own, f64::max)
    }

    /// `ℓ^δ(x, ξ) = sup {ℓ(x, ξ′) : ξ′ ∈ Σ, d(ξ, ξ′) ≤ δ}`; `ξ` itself is
    /// always admissible.
    pub fn inflate(&self, x: f64, xi: &[f64], delta: f64, cost: &TransportCost) -> f64 {
        match cost {
            TransportCost::Euclidean => self.euclidean_ball_sup(x, xi, delta),
            TransportCost::LpIndicator { cutoff } => {
                if delta >= 1.0 {
                    self.sup_loss(x).max(self.loss.eval(x, xi))
                } else {
                    self.euclidean_ball_sup(x, xi, *cutoff)
                }
            }
        }
    }

    /// `ℓ^δ(x, ξ)` for every `δ` in the sorted slice `deltas`, sharing one
    /// pass over the event set.
    pub fn inflation_profile(&self, x: f64, xi: &[f64], deltas: &[f64], cost: &TransportCost) -> Vec<f64> {
        let sup = self.sup_loss(x);
        let own = self.loss.eval(x, xi);
        match cost {
            TransportCost::LpIndicator { cutoff } => {
                let ball = self.euclidean_ball_sup(x, xi, *cutoff);
                deltas
                    .iter()
                    .map(|&d| if d >= 1.0 { sup.max(own) } else { ball })
                    .collect()
            }
            TransportCost::Euclidean => {
                if self.loss.ball_sup(x, xi, 0.0, &self.domain).is_some() {
                    return deltas.iter().map(|&d| self.euclidean_ball_sup(x, xi, d)).collect();
                }
                let mut pairs: Vec<(f64, f64)> = self
                    .grid
                    .iter()
                    .map(|p| (euclidean(p, xi), self.loss.eval(x, p)))
                    .collect();
                pairs.push((0.0, own));
                pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                let mut run = f64::NEG_INFINITY;
                for p in pairs.iter_mut() {
                    run = run.max(p.1);
                    p.1 = run;
                }
                deltas
                    .iter()
                    .map(|&d| {
                        let k = pairs.partition_point(|p| p.0 <= d);
                        if k == 0 {
                            own
                        } else {
                            pairs[k - 1].1
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Brute-force `ℓ^δ` by enumeration of the event set.
pub fn inflate_bruteforce(loss: &LossOracle, x: f64, xi: &[f64], delta: f64, cost: &TransportCost) -> f64 {
    loss.grid()
        .iter()
        .filter(|p| cost.eval(xi, p) <= delta)
        .map(|p| loss.eval(x, p))
        .fold(loss.eval(x, xi), f64::max)
}

/// The grid `Δ_K = {εk/K} ∪ {ε(diam/ε)^{k/K}}`, `k = 0..K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaGrid {
    pub epsilon: f64,
    pub k: usize,
    pub diam: f64,
    pub values: Vec<f64>,
}

impl DeltaGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(diam/ε)^{1/K} + 1/K`.
    pub fn sandwich_factor(&self) -> f64 {
        sandwich_factor(self.epsilon, self.k, self.diam)
    }
}

pub fn sandwich_factor(epsilon: f64, k: usize, diam: f64) -> f64 {
    (diam / epsilon).powf(1.0 / k as f64) + 1.0 / k as f64
}

pub fn delta_grid(epsilon: f64, k: usize, diam: f64) -> Result<DeltaGrid> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("Δ_K needs ε > 0, got {epsilon}")));
    }
    if k == 0 {
        return Err(Error::Config("Δ_K needs K ≥ 1".into()));
    }
    if epsilon > diam {
        return Err(Error::Config(format!("Δ_K needs ε ≤ diam, got ε = {epsilon} > {diam}")));
    }
    let kf = k as f64;
    let mut values: Vec<f64> = (0..=k).map(|i| epsilon * i as f64 / kf).collect();
    let ratio = diam / epsilon;
    for i in 1..=k {
        values.push(if i == k { diam } else { epsilon * ratio.powf(i as f64 / kf) });
    }
    values[k] = epsilon;
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    Ok(DeltaGrid {
        epsilon,
        k,
        diam,
        values,
    })
}

/// `ℓ_γ(x, ξ) = max_{δ ∈ grid} ℓ^δ(x, ξ) − γδ`.
pub fn moreau_yosida(loss: &LossOracle, x: f64, xi: &[f64], gamma: f64, deltas: &[f64], cost: &TransportCost) -> f64 {
    loss.inflation_profile(x, xi, deltas, cost)
        .iter()
        .zip(deltas)
        .map(|(l, d)| l - gamma * d)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// The periodic function `g_r` and the loss `ℓ_r(x, ξ) = x²·g_r(ξ/x)`.
///
/// On one period `[0, T]`, `T = π + π/x_r`, `g_r` equals `sin` on `[0, π]`
/// and `x_r·sin(x_r(y + π/x_r − π))` on `(π, T]`, so it peaks at 1, bottoms
/// out at `−x_r` and integrates to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CounterexampleLoss {
    pub r: f64,
    pub x_r: f64,
    pub period: f64,
}

/// Builds `ℓ_r` with the default `x_r = e^r`.
pub fn counterexample_loss(r: f64) -> Result<CounterexampleLoss> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Config(format!("counterexample needs r > 0, got {r}")));
    }
    CounterexampleLoss::with_x_r(r, r.exp())
}

impl CounterexampleLoss {
    pub fn with_x_r(r: f64, x_r: f64) -> Result<Self> {
        if !(r > 0.0) || !(x_r > 0.0) || !x_r.is_finite() {
            return Err(Error::Config(format!("invalid counterexample parameters r={r}, x_r={x_r}")));
        }
        Ok(CounterexampleLoss {
            r,
            x_r,
            period: PI + PI / x_r,
        })
    }

    /// Whether `x_r` exceeds `e^r − 1`, the threshold of the first construction.
    pub fn above_threshold(&self) -> bool {
        self.x_r > self.r.exp_m1()
    }

    pub fn g(&self, y: f64) -> f64 {
        let t = self.period;
        let u = y - (y / t).floor() * t;
        let u = if u >= t { u - t } else { u };
        if u <= PI {
            u.sin()
        } else {
            self.x_r * (self.x_r * (u + PI / self.x_r - PI)).sin()
        }
    }

    /// Maximum of `g` over `[a, b]`.
    pub fn g_max(&self, a: f64, b: f64) -> f64 {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let t = self.period;
        if b - a >= t {
            return 1.0;
        }
        let first = ((a - PI / 2.0) / t).ceil();
        if first * t + PI / 2.0 <= b {
            return 1.0;
        }
        self.g(a).max(self.g(b))
    }

    /// Minimum of `g` over `[a, b]`.
    pub fn g_min(&self, a: f64, b: f64) -> f64 {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let t = self.period;
        if b - a >= t {
            return -self.x_r;
        }
        let off = PI + PI / (2.0 * self.x_r);
        let first = ((a - off) / t).ceil();
        if first * t + off <= b {
            return -self.x_r;
        }
        self.g(a).min(self.g(b))
    }

    /// `ℓ_r(x, ξ)`.
    pub fn ell(&self, x: f64, xi: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else {
            x * x * self.g(xi / x)
        }
    }

    /// Loss oracle on Σ = `[lo, hi]` with exact ball maxima.
    pub fn oracle(&self, lo: f64, hi: f64) -> Result<LossOracle> {
        LossOracle::new(Arc::new(*self), EventSet::interval(lo, hi))
    }

    fn range_extreme(&self, x: f64, a: f64, b: f64, max: bool) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        let (u, v) = (a / x, b / x);
        let g = if max { self.g_max(u, v) } else { self.g_min(u, v) };
        x * x * g
    }
}

fn interval_of(domain: &EventSet) -> Option<(f64, f64)> {
    match domain {
        EventSet::Box { lo, hi, .. } if lo.len() == 1 => Some((lo[0], hi[0])),
        _ => None,
    }
}

impl Loss for CounterexampleLoss {
    fn eval(&self, x: f64, xi: &[f64]) -> f64 {
        self.ell(x, xi[0])
    }

    fn ball_sup(&self, x: f64, xi: &[f64], radius: f64, domain: &EventSet) -> Option<f64> {
        let (lo, hi) = interval_of(domain)?;
        let a = (xi[0] - radius).max(lo);
        let b = (xi[0] + radius).min(hi);
        if a > b {
            return Some(self.ell(x, xi[0]));
        }
        Some(self.range_extreme(x, a, b, true))
    }

    fn sup(&self, x: f64, domain: &EventSet) -> Option<f64> {
        let (lo, hi) = interval_of(domain)?;
        Some(self.range_extreme(x, lo, hi, true))
    }

    fn inf(&self, x: f64, domain: &EventSet) -> Option<f64> {
        let (lo, hi) = interval_of(domain)?;
        Some(self.range_extreme(x, lo, hi, false))
    }
}

/// Affine piece `a + b·x + ⟨c, ξ⟩ + x·⟨e, ξ⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffinePiece {
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub c: Vec<f64>,
    #[serde(default)]
    pub e: Vec<f64>,
}

impl AffinePiece {
    pub fn eval(&self, x: f64, xi: &[f64]) -> f64 {
        let dot = |v: &[f64]| v.iter().zip(xi).map(|(p, q)| p * q).sum::<f64>();
        self.a + self.b * x + dot(&self.c) + x * dot(&self.e)
    }
}

/// Loss families selectable from configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LossSpec {
    Linear(AffinePiece),
    PiecewiseMax {
        pieces: Vec<AffinePiece>,
    },
    Counterexample {
        r: f64,
        #[serde(default)]
        x_r: Option<f64>,
    },
    Expression {
        expr: String,
    },
}

struct PiecewiseMax(Vec<AffinePiece>);

impl Loss for PiecewiseMax {
    fn eval(&self, x: f64, xi: &[f64]) -> f64 {
        self.0.iter().map(|p| p.eval(x, xi)).fold(f64::NEG_INFINITY, f64::max)
    }
}

struct ExprLoss(Expr);

impl Loss for ExprLoss {
    fn eval(&self, x: f64, xi: &[f64]) -> f64 {
        self.0.eval(x, xi)
    }
}

impl LossSpec {
    pub fn build(&self, domain: EventSet) -> Result<LossOracle> {
        let dim = domain.dim();
        let check = |p: &AffinePiece| -> Result<()> {
            if p.c.len() > dim || p.e.len() > dim {
                return Err(Error::Config(format!("affine coefficients longer than dimension {dim}")));
            }
            Ok(())
        };
        match self {
            LossSpec::Linear(p) => {
                check(p)?;
                LossOracle::new(Arc::new(PiecewiseMax(vec![p.clone()])), domain)
            }
            LossSpec::PiecewiseMax { pieces } => {
                if pieces.is_empty() {
                    return Err(Error::Config("piecewise-max loss needs at least one piece".into()));
                }
                pieces.iter().try_for_each(check)?;
                LossOracle::new(Arc::new(PiecewiseMax(pieces.clone())), domain)
            }
            LossSpec::Counterexample { r, x_r } => {
                let c = match x_r {
                    Some(v) => CounterexampleLoss::with_x_r(*r, *v)?,
                    None => counterexample_loss(*r)?,
                };
                if dim != 1 {
                    return Err(Error::Config("counterexample loss is one-dimensional".into()));
                }
                LossOracle::new(Arc::new(c), domain)
            }
            LossSpec::Expression { expr } => {
                let e = Expr::parse(expr)?;
                if e.dim_needed() > dim {
                    return Err(Error::Config(format!(
                        "expression uses xi{} but the event set has dimension {dim}",
                        e.dim_needed() - 1
                    )));
                }
                LossOracle::new(Arc::new(ExprLoss(e)), domain)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid() -> EventSet {
        EventSet::Points((0..=100).map(|i| vec![i as f64 / 100.0]).collect())
    }

    #[test]
    fn inflate_examples() {
        let l = LossOracle::from_fn(|_, xi| xi[0], unit_grid()).unwrap();
        let e = TransportCost::Euclidean;
        assert!((l.inflate(0.0, &[0.5], 0.2, &e) - 0.7).abs() < 1e-12);
        assert_eq!(l.inflate(0.0, &[0.5], 0.0, &e), 0.5);
        let two = LossOracle::from_fn(|_, xi| 5.0 * xi[0], EventSet::Points(vec![vec![0.0], vec![1.0]])).unwrap();
        assert_eq!(two.inflate(0.0, &[0.0], 1.0, &e), 5.0);
        assert_eq!(inflate_bruteforce(&two, 0.0, &[0.0], 1.0, &e), 5.0);
    }

    #[test]
    fn profile_matches_pointwise() {
        let l = LossOracle::from_fn(|x, xi| (3.0 * xi[0]).sin() + x, unit_grid()).unwrap();
        let g = delta_grid(0.1, 8, 1.0).unwrap();
        for cost in [TransportCost::Euclidean, TransportCost::LpIndicator { cutoff: 0.1 }] {
            let prof = l.inflation_profile(0.3, &[0.42], &g.values, &cost);
            for (d, v) in g.values.iter().zip(&prof) {
                assert_eq!(*v, l.inflate(0.3, &[0.42], *d, &cost));
                assert_eq!(*v, inflate_bruteforce(&l, 0.3, &[0.42], *d, &cost));
            }
        }
    }

    #[test]
    fn delta_grid_examples() {
        assert_eq!(delta_grid(1.0, 1, 4.0).unwrap().values, vec![0.0, 1.0, 4.0]);
        let g = delta_grid(2.0, 2, 2.0).unwrap();
        assert_eq!(g.values, vec![0.0, 1.0, 2.0]);
        assert_eq!(g.len(), 3);
        let g = delta_grid(1.0, 2, 4.0).unwrap();
        assert_eq!(g.values.len(), 5);
        for (a, b) in g.values.iter().zip([0.0, 0.5, 1.0, 2.0, 4.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(delta_grid(3.0, 2, 2.0).is_err());
        assert!(delta_grid(0.0, 2, 2.0).is_err());
        assert_eq!(delta_grid(0.1, 16, 1.0).unwrap().len(), 33);
    }

    #[test]
    fn moreau_yosida_examples() {
        let l = LossOracle::from_fn(|_, xi| xi[0], unit_grid()).unwrap();
        let e = TransportCost::Euclidean;
        assert!((moreau_yosida(&l, 0.0, &[0.0], 0.5, &[0.0, 0.5, 1.0], &e) - 0.5).abs() < 1e-12);
        let g = delta_grid(0.1, 8, 1.0).unwrap();
        assert_eq!(moreau_yosida(&l, 0.0, &[0.2], 0.0, &g.values, &e), l.sup_loss(0.0));
        assert_eq!(moreau_yosida(&l, 0.0, &[0.2], 1e6, &g.values, &e), l.eval(0.0, &[0.2]));
    }

    #[test]
    fn counterexample_shape() {
        let c = counterexample_loss(0.3).unwrap();
        assert!(c.above_threshold());
        assert_eq!(c.g(0.0), 0.0);
        assert!((c.g(PI / 2.0) - 1.0).abs() < 1e-15);
        let n = 2_000_000;
        let mut mn = f64::INFINITY;
        for i in 0..=n {
            mn = mn.min(c.g(c.period * i as f64 / n as f64));
        }
        assert!((mn + c.x_r).abs() < 1e-6);
        let unit = CounterexampleLoss::with_x_r(0.3, 1.0).unwrap();
        for &y in &[-3.0, 0.7, 4.0, 11.0] {
            assert!((unit.g(y) - y.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn counterexample_interval_extremes_match_scan() {
        let c = counterexample_loss(0.3).unwrap();
        let scan = |a: f64, b: f64| {
            let n = 20_000;
            (0..=n)
                .map(|i| c.g(a + (b - a) * i as f64 / n as f64))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        for &(a, b) in &[(0.2, 1.0), (2.0, 3.5), (3.3, 4.0), (-1.0, 0.3), (5.0, 5.01), (-7.3, -6.0)] {
            let (lo, hi) = scan(a, b);
            assert!((c.g_max(a, b) - hi).abs() < 1e-6, "max on [{a},{b}]");
            assert!((c.g_min(a, b) - lo).abs() < 1e-6, "min on [{a},{b}]");
        }
    }

    #[test]
    fn counterexample_oracle_sup_is_x_squared_on_full_periods() {
        let c = counterexample_loss(0.3).unwrap();
        let o = c.oracle(-1.0, 1.0).unwrap();
        for k in [1usize, 3, 50] {
            let x = 1.0 / (c.period * k as f64);
            assert!((o.sup_loss(x) - x * x).abs() < 1e-18);
            assert!((o.inf_loss(x) + x * x * c.x_r).abs() < 1e-15);
        }
    }

    #[test]
    fn config_families() {
        let dom = EventSet::Points(vec![vec![0.0], vec![1.0]]);
        let lin: LossSpec = serde_json::from_str(r#"{"kind":"linear","a":1,"c":[2]}"#).unwrap();
        assert_eq!(lin.build(dom.clone()).unwrap().eval(0.0, &[1.0]), 3.0);
        let pm: LossSpec = serde_json::from_str(
            r#"{"kind":"piecewise-max","pieces":[{"c":[1]},{"a":0.5,"c":[-1]}]}"#,
        )
        .unwrap();
        let o = pm.build(dom.clone()).unwrap();
        assert_eq!(o.eval(0.0, &[0.0]), 0.5);
        assert_eq!(o.eval(0.0, &[1.0]), 1.0);
        let ex: LossSpec = serde_json::from_str(r#"{"kind":"expression","expr":"x*xi"}"#).unwrap();
        assert_eq!(ex.build(dom.clone()).unwrap().eval(2.0, &[1.0]), 2.0);
        let bad: LossSpec = serde_json::from_str(r#"{"kind":"expression","expr":"xi1"}"#).unwrap();
        assert!(bad.build(dom).is_err());
        assert!(serde_json::from_str::<LossSpec>(r#"{"kind":"linear","zzz":1}"#).is_err());
    }
}
