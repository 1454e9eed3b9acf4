//! Finitely supported distributions and the distances between them.

use serde::{Deserialize, Deserializer, Serialize};

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::loss::LossOracle;
use crate::transport;

/// Support points closer than this in sup-norm are the same atom.
pub const MERGE_TOL: f64 = 1e-12;

/// A probability vector on finitely many points of ℝ^d.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDistribution {
    dim: usize,
    support: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDistribution {
    dim: usize,
    support: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl<'de> Deserialize<'de> for DiscreteDistribution {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawDistribution::deserialize(d)?;
        DiscreteDistribution::with_dim(raw.dim, raw.support, raw.weights).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn same_point(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= MERGE_TOL)
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl DiscreteDistribution {
    /// Builds a distribution, merging duplicate atoms. Weights off from 1 by
    /// less than 1e−9 are renormalized; larger deviations are rejected.
    pub fn new(support: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = support.first().map(|p| p.len()).unwrap_or(0);
        Self::with_dim(dim, support, weights)
    }

    fn with_dim(dim: usize, support: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::Input("distribution with empty support".into()));
        }
        if support.len() != weights.len() {
            return Err(Error::Input(format!(
                "{} support points but {} weights",
                support.len(),
                weights.len()
            )));
        }
        if dim == 0 || dim > 8 {
            return Err(Error::Input(format!("dimension {dim} outside 1..=8")));
        }
        if support.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Input(format!("support points must be finite vectors of length {dim}")));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Input("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() >= 1e-9 {
            return Err(Error::Input(format!("weights sum to {total}, expected 1")));
        }
        let mut pts: Vec<Vec<f64>> = Vec::with_capacity(support.len());
        let mut ws: Vec<f64> = Vec::with_capacity(support.len());
        for (p, w) in support.into_iter().zip(weights) {
            match pts.iter().position(|q| same_point(q, &p)) {
                Some(k) => ws[k] += w,
                None => {
                    pts.push(p);
                    ws.push(w);
                }
            }
        }
        let total: f64 = ws.iter().sum();
        ws.iter_mut().for_each(|w| *w /= total);
        Ok(DiscreteDistribution {
            dim,
            support: pts,
            weights: ws,
        })
    }

    /// Convenience constructor for one-dimensional supports.
    pub fn on_line(points: &[f64], weights: &[f64]) -> Result<Self> {
        Self::new(points.iter().map(|p| vec![*p]).collect(), weights.to_vec())
    }

    pub fn point_mass(point: Vec<f64>) -> Self {
        DiscreteDistribution {
            dim: point.len(),
            support: vec![point],
            weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Weight assigned to `point` (zero when it is not an atom).
    pub fn mass_at(&self, point: &[f64]) -> f64 {
        self.support
            .iter()
            .position(|q| same_point(q, point))
            .map(|k| self.weights[k])
            .unwrap_or(0.0)
    }

    /// Atoms with zero weight removed.
    pub fn pruned(&self) -> Self {
        let (support, weights): (Vec<_>, Vec<_>) = self
            .support
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(p, w)| (p.clone(), *w))
            .unzip();
        DiscreteDistribution {
            dim: self.dim,
            support,
            weights,
        }
    }

    /// `(1−θ)·self + θ·other`.
    pub fn mix(&self, other: &Self, theta: f64) -> Result<Self> {
        let mut support = self.support.clone();
        support.extend(other.support.iter().cloned());
        let mut weights: Vec<f64> = self.weights.iter().map(|w| (1.0 - theta) * w).collect();
        weights.extend(other.weights.iter().map(|w| theta * w));
        Self::new(support, weights)
    }
}

/// Empirical distribution of a sample, duplicates merged.
pub fn empirical(samples: &[Vec<f64>]) -> Result<DiscreteDistribution> {
    if samples.is_empty() {
        return Err(Error::Input("empirical distribution of an empty sample".into()));
    }
    let n = samples.len() as f64;
    DiscreteDistribution::new(samples.to_vec(), vec![1.0 / n; samples.len()])
}

/// `E_P[ℓ(x, ξ)]`.
pub fn expectation(p: &DiscreteDistribution, loss: &LossOracle, x: f64) -> f64 {
    p.support()
        .iter()
        .zip(p.weights())
        .map(|(xi, w)| w * loss.eval(x, xi))
        .sum()
}

/// `D_f(P′, P) = Σ_ξ f(P(ξ)/P′(ξ)) P′(ξ)` over the union of supports.
pub fn f_divergence(spec: &DivergenceSpec, p_prime: &DiscreteDistribution, p: &DiscreteDistribution) -> f64 {
    let mut total = 0.0;
    for (xi, &wp) in p_prime.support().iter().zip(p_prime.weights()) {
        if wp == 0.0 {
            continue;
        }
        total += spec.atom_term(wp, p.mass_at(xi));
        if total.is_infinite() {
            return total;
        }
    }
    for (xi, &w) in p.support().iter().zip(p.weights()) {
        if p_prime.mass_at(xi) == 0.0 {
            total += spec.atom_term(0.0, w);
            if total.is_infinite() {
                return total;
            }
        }
    }
    total
}

/// Transport costs on ℝ^d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TransportCost {
    /// `d(ξ, ξ′) = ‖ξ − ξ′‖₂`
    Euclidean,
    /// `d(ξ, ξ′) = 1{‖ξ − ξ′‖₂ > cutoff}`
    LpIndicator { cutoff: f64 },
}

impl TransportCost {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d = euclidean(a, b);
        match self {
            TransportCost::Euclidean => d,
            TransportCost::LpIndicator { cutoff } => {
                if d > *cutoff {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Largest cost between points of `points`.
    pub fn diameter(&self, points: &[Vec<f64>]) -> f64 {
        let (d, _, _) = diameter(points);
        match self {
            TransportCost::Euclidean => d,
            TransportCost::LpIndicator { cutoff } => {
                if d > *cutoff {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Optimal transport cost between `p_prime` and `p`.
pub fn wasserstein(cost: &TransportCost, p_prime: &DiscreteDistribution, p: &DiscreteDistribution) -> Result<f64> {
    check_dims(p_prime, p)?;
    let plan = transport::solve(p_prime.weights(), p.weights(), |i, j| {
        cost.eval(&p_prime.support()[i], &p.support()[j])
    })?;
    Ok(plan.cost.max(0.0))
}

/// Closed-form `W₁` on the real line, `∫ |F′ − F|`. Used to cross-check the
/// coupling solver.
pub fn wasserstein_1d(p_prime: &DiscreteDistribution, p: &DiscreteDistribution) -> Result<f64> {
    check_dims(p_prime, p)?;
    if p.dim() != 1 {
        return Err(Error::Input("wasserstein_1d needs one-dimensional supports".into()));
    }
    let mut events: Vec<(f64, f64)> = p_prime
        .support()
        .iter()
        .zip(p_prime.weights())
        .map(|(x, w)| (x[0], *w))
        .chain(p.support().iter().zip(p.weights()).map(|(x, w)| (x[0], -*w)))
        .collect();
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for k in 0..events.len() {
        cdf_gap += events[k].1;
        if k + 1 < events.len() {
            total += cdf_gap.abs() * (events[k + 1].0 - events[k].0);
        }
    }
    Ok(total)
}

fn check_dims(a: &DiscreteDistribution, b: &DiscreteDistribution) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Input(format!("dimension mismatch {} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Mass that must travel farther than `eps` in the best coupling.
fn overflow_mass(p_prime: &DiscreteDistribution, p: &DiscreteDistribution, dist: &[f64], eps: f64) -> Result<f64> {
    let m = p.len();
    let plan = transport::solve(p_prime.weights(), p.weights(), |i, j| {
        if dist[i * m + j] > eps {
            1.0
        } else {
            0.0
        }
    })?;
    Ok(plan.cost.max(0.0))
}

/// Lévy–Prokhorov distance: the least `ε ≥ 0` admitting a coupling that moves
/// at most `ε` mass farther than `ε`.
///
/// The overflow mass `w(ε)` is a nonincreasing step function that only jumps
/// at pairwise distances, so the least feasible `ε` is either one of those
/// distances or the constant overflow on the step just below it. Bisection
/// over the sorted distances locates the step where `w(ε) ≤ ε` first holds.
pub fn lp_metric(p_prime: &DiscreteDistribution, p: &DiscreteDistribution) -> Result<f64> {
    check_dims(p_prime, p)?;
    let n = p_prime.len();
    let m = p.len();
    if n.saturating_mul(m) > transport::MAX_ARCS {
        return Err(Error::Resource(format!("coupling of size {n}×{m} exceeds limits")));
    }
    let mut dist = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            dist[i * m + j] = euclidean(&p_prime.support()[i], &p.support()[j]);
        }
    }
    let mut levels: Vec<f64> = dist.iter().copied().filter(|d| *d < 1.0).collect();
    levels.push(0.0);
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    let overflow_at = |k: usize| overflow_mass(p_prime, p, &dist, levels[k]);
    // smallest k with w(levels[k]) ≤ levels[k]
    let (mut lo, mut hi) = (0usize, levels.len());
    let mut iterations = 0;
    while lo < hi && iterations < 60 {
        iterations += 1;
        let mid = (lo + hi) / 2;
        let w = overflow_at(mid)?;
        if w <= levels[mid] {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut best = 1.0f64;
    if lo < levels.len() {
        best = best.min(levels[lo]);
    }
    if lo > 0 {
        let w = overflow_at(lo - 1)?;
        best = best.min(w.max(levels[lo - 1]));
    }
    Ok(best.clamp(0.0, 1.0))
}

/// Smoothing applied to the first argument of a smoothed divergence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "epsilon", rename_all = "kebab-case")]
pub enum Smoothing {
    Wasserstein(f64),
    Lp(f64),
}

impl Smoothing {
    pub fn epsilon(&self) -> f64 {
        match self {
            Smoothing::Wasserstein(e) | Smoothing::Lp(e) => *e,
        }
    }

    fn distance(&self, a: &DiscreteDistribution, b: &DiscreteDistribution) -> Result<f64> {
        match self {
            Smoothing::Wasserstein(_) => wasserstein(&TransportCost::Euclidean, a, b),
            Smoothing::Lp(_) => lp_metric(a, b),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmoothedDivergence {
    /// Upper bound on `inf { D_f(Q, P) : dist(P′, Q) ≤ ε }`; `+∞` when no
    /// candidate on the grid is within reach.
    pub value: f64,
    pub minimizer: Option<DiscreteDistribution>,
    pub candidates: usize,
    pub diagnostic: Option<String>,
}

/// Grid upper bound for `D^ε_f(P′, P)`. Candidates `Q` are all weight vectors
/// on `q_grid` whose coordinates are multiples of a step chosen from the grid
/// size, together with the mixtures `(1−θ)P′ + θP`.
pub fn smoothed_divergence(
    spec: &DivergenceSpec,
    smoothing: Smoothing,
    p_prime: &DiscreteDistribution,
    p: &DiscreteDistribution,
    q_grid: Option<&[Vec<f64>]>,
) -> Result<SmoothedDivergence> {
    let eps = smoothing.epsilon();
    if !(eps >= 0.0) {
        return Err(Error::Config(format!("smoothing radius must be nonnegative, got {eps}")));
    }
    check_dims(p_prime, p)?;
    if eps == 0.0 {
        return Ok(SmoothedDivergence {
            value: f_divergence(spec, p_prime, p),
            minimizer: Some(p_prime.clone()),
            candidates: 1,
            diagnostic: None,
        });
    }
    let grid: Vec<Vec<f64>> = match q_grid {
        Some(g) => g.to_vec(),
        None => {
            let mut g: Vec<Vec<f64>> = p_prime.support().to_vec();
            for x in p.support() {
                if !g.iter().any(|q| same_point(q, x)) {
                    g.push(x.clone());
                }
            }
            g
        }
    };
    let mut best = f64::INFINITY;
    let mut best_q = None;
    let mut count = 0usize;
    let mut consider = |q: DiscreteDistribution, best: &mut f64, best_q: &mut Option<DiscreteDistribution>| -> Result<()> {
        count += 1;
        let d = f_divergence(spec, &q, p);
        if d < *best && smoothing.distance(p_prime, &q)? <= eps + 1e-12 {
            *best = d;
            *best_q = Some(q);
        }
        Ok(())
    };
    for k in 0..=100 {
        let theta = k as f64 / 100.0;
        consider(p_prime.mix(p, theta)?, &mut best, &mut best_q)?;
    }
    let m = grid.len();
    let steps = simplex_steps(m, 20_000);
    for w in SimplexLattice::new(m, steps) {
        let q = DiscreteDistribution::new(grid.clone(), w)?;
        consider(q, &mut best, &mut best_q)?;
    }
    let diagnostic = if best.is_infinite() {
        Some(format!("no grid candidate within {eps} of P′"))
    } else {
        None
    };
    Ok(SmoothedDivergence {
        value: best,
        minimizer: best_q,
        candidates: count,
        diagnostic,
    })
}

// Largest lattice resolution with at most `budget` points on the m-simplex.
fn simplex_steps(m: usize, budget: usize) -> usize {
    let mut steps = 1usize;
    while steps < 1000 && binomial(steps + 1 + m - 1, m - 1) <= budget as f64 {
        steps += 1;
    }
    steps
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let mut v = 1.0f64;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

/// All weight vectors on the `m`-simplex with coordinates in `{0, 1/s, …, 1}`.
pub struct SimplexLattice {
    m: usize,
    steps: usize,
    counts: Vec<usize>,
    done: bool,
}

impl SimplexLattice {
    pub fn new(m: usize, steps: usize) -> Self {
        let mut counts = vec![0; m];
        if m > 0 {
            counts[m - 1] = steps;
        }
        SimplexLattice {
            m,
            steps,
            counts,
            done: m == 0,
        }
    }
}

impl Iterator for SimplexLattice {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        if self.done {
            return None;
        }
        let s = self.steps as f64;
        let out = self.counts.iter().map(|c| *c as f64 / s).collect();
        // advance: odometer over the first m−1 coordinates, last takes the rest
        let m = self.m;
        if m == 1 {
            self.done = true;
            return Some(out);
        }
        let mut used: usize = self.counts[..m - 1].iter().sum();
        let mut i = 0;
        loop {
            if i == m - 1 {
                self.done = true;
                break;
            }
            if used < self.steps {
                self.counts[i] += 1;
                used += 1;
                self.counts[m - 1] = self.steps - used;
                break;
            }
            used -= self.counts[i];
            self.counts[i] = 0;
            i += 1;
        }
        Some(out)
    }
}

/// Largest pairwise Euclidean distance and the indices attaining it.
pub fn diameter(points: &[Vec<f64>]) -> (f64, usize, usize) {
    let mut best = (0.0, 0, 0);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = euclidean(&points[i], &points[j]);
            if d > best.0 {
                best = (d, i, j);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::builtin;

    fn line(p: &[f64], w: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::on_line(p, w).unwrap()
    }

    #[test]
    fn empirical_merges_duplicates() {
        let p = empirical(&[vec![0.0], vec![0.0], vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.weights(), &[0.5, 0.5]);
        let p = empirical(&[vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.weights().iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));
        assert!(empirical(&[]).is_err());
    }

    #[test]
    fn weights_renormalized_or_rejected() {
        let p = line(&[0.0, 1.0], &[0.5, 0.5 + 5e-10]);
        assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(DiscreteDistribution::on_line(&[0.0, 1.0], &[0.5, 0.6]).is_err());
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let p = line(&[0.0, 2.0], &[0.25, 0.75]);
        let s = serde_json::to_string(&p).unwrap();
        let q: DiscreteDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        let bad = r#"{"dim":1,"support":[[0]],"weights":[1],"extra":3}"#;
        assert!(serde_json::from_str::<DiscreteDistribution>(bad).is_err());
    }

    #[test]
    fn kl_divergence_examples() {
        let kl = builtin("kl").unwrap();
        let p = line(&[0.0, 1.0], &[0.5, 0.5]);
        let a = DiscreteDistribution::point_mass(vec![0.0]);
        assert_eq!(f_divergence(&kl, &p, &p), 0.0);
        assert!((f_divergence(&kl, &a, &p) - 2f64.ln()).abs() < 1e-15);
        assert!(f_divergence(&kl, &p, &a).is_infinite());
    }

    #[test]
    fn wasserstein_examples() {
        let e = TransportCost::Euclidean;
        let d0 = DiscreteDistribution::point_mass(vec![0.0]);
        let d1 = DiscreteDistribution::point_mass(vec![1.0]);
        assert_eq!(wasserstein(&e, &d0, &d1).unwrap(), 1.0);
        let p = line(&[0.0, 1.0], &[0.5, 0.5]);
        assert_eq!(wasserstein(&e, &p, &p).unwrap(), 0.0);
        assert!((wasserstein(&e, &p, &d0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lp_metric_examples() {
        let p = line(&[0.0, 1.0], &[0.5, 0.5]);
        assert_eq!(lp_metric(&p, &p).unwrap(), 0.0);
        let a = DiscreteDistribution::point_mass(vec![0.0]);
        let b = DiscreteDistribution::point_mass(vec![0.3]);
        assert!((lp_metric(&a, &b).unwrap() - 0.3).abs() < 1e-15);
        let c = DiscreteDistribution::point_mass(vec![5.0]);
        assert_eq!(lp_metric(&a, &c).unwrap(), 1.0);
    }

    #[test]
    fn lp_metric_matches_fine_bisection() {
        // reference: plain bisection on ε with the overflow check
        let p = line(&[0.0, 0.4, 1.0], &[0.2, 0.5, 0.3]);
        let q = line(&[0.1, 0.45, 2.0], &[0.6, 0.3, 0.1]);
        let n = p.len();
        let m = q.len();
        let mut dist = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                dist[i * m + j] = euclidean(&p.support()[i], &q.support()[j]);
            }
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if overflow_mass(&p, &q, &dist, mid).unwrap() <= mid {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((lp_metric(&p, &q).unwrap() - hi).abs() < 1e-9);
    }

    #[test]
    fn diameter_examples() {
        assert_eq!(diameter(&[vec![0.0]]).0, 0.0);
        assert_eq!(diameter(&[vec![-1.0], vec![1.0]]).0, 2.0);
        let (d, i, j) = diameter(&[vec![0.0, 0.0], vec![3.0, 4.0]]);
        assert_eq!(d, 5.0);
        assert_eq!((i, j), (0, 1));
    }

    #[test]
    fn simplex_lattice_cardinality() {
        for (m, s) in [(1usize, 5usize), (2, 10), (3, 7), (4, 6)] {
            let pts: Vec<Vec<f64>> = SimplexLattice::new(m, s).collect();
            assert_eq!(pts.len() as f64, binomial(s + m - 1, m - 1));
            assert!(pts.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn smoothed_divergence_examples() {
        let kl = builtin("kl").unwrap();
        let pp = line(&[0.0, 1.0], &[0.3, 0.7]);
        let p = line(&[0.0, 1.0], &[0.6, 0.4]);
        let s0 = smoothed_divergence(&kl, Smoothing::Wasserstein(0.0), &pp, &p, None).unwrap();
        assert_eq!(s0.value, f_divergence(&kl, &pp, &p));
        let s1 = smoothed_divergence(&kl, Smoothing::Lp(1.0), &pp, &p, None).unwrap();
        assert_eq!(s1.value, 0.0);
        let d0 = DiscreteDistribution::point_mass(vec![0.0]);
        let half = line(&[0.0, 1.0], &[0.5, 0.5]);
        let grid = vec![vec![0.0], vec![0.1], vec![1.0]];
        let s = smoothed_divergence(&kl, Smoothing::Wasserstein(0.1), &d0, &half, Some(&grid)).unwrap();
        assert!(s.value <= 2f64.ln() + 1e-12);
        assert!(s.value < 2f64.ln() - 1e-3);
    }
}
