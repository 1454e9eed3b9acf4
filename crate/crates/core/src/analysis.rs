//! Radius calibration, efficiency-loss estimates and finite-sample
//! large-deviation bounds.

use rayon::prelude::*;
use serde::Serialize;

use crate::divergence::{builtin, Builtin, DivergenceSpec};
use crate::error::{Error, Result};
use crate::measure::{self, DiscreteDistribution, Smoothing, TransportCost};

/// Divergence values above this are treated as `+∞`.
pub const DIVERGENCE_CAP: f64 = 1e6;

/// Default number of multistarts for the joint-range search.
pub const DEFAULT_STARTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadiusMethod {
    JointRange4atom,
    ClosedForm,
    Diverges,
}

#[derive(Debug, Clone, Serialize)]
pub struct RadiusCurve {
    pub name: String,
    pub r_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub method: RadiusMethod,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub n: usize,
    pub r: f64,
    pub epsilon: Option<f64>,
    /// `|Σ|` or the covering number, whichever enters the prefactor.
    pub cardinality: f64,
    /// Natural log of the unclamped bound.
    pub log_value: f64,
    pub value: f64,
    pub clamped: f64,
}

impl BoundReport {
    fn from_log(n: usize, r: f64, epsilon: Option<f64>, cardinality: f64, log_value: f64) -> Self {
        let value = log_value.exp();
        BoundReport {
            n,
            r,
            epsilon,
            cardinality,
            log_value,
            value,
            clamped: value.min(1.0),
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut v = 0.0;
    while i > 0 {
        v += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    v
}

const PRIMES: [u64; 9] = [2, 3, 5, 7, 11, 13, 17, 19, 23];

/// Point `i` of the Halton sequence in `dim ≤ 9` dimensions.
fn halton(i: usize, dim: usize) -> Vec<f64> {
    (0..dim).map(|k| radical_inverse(i as u64 + 1, PRIMES[k])).collect()
}

/// Maps three uniforms to a point of the 4-simplex.
fn simplex4(u: &[f64]) -> [f64; 4] {
    let e: Vec<f64> = u.iter().map(|t| -(1.0 - t.clamp(0.0, 1.0 - 1e-12)).ln() + 1e-3).collect();
    let last = 0.5;
    let s: f64 = e.iter().sum::<f64>() + last;
    [e[0] / s, e[1] / s, e[2] / s, last / s]
}

fn div4(spec: &DivergenceSpec, p_hat: &[f64], p: &[f64]) -> f64 {
    p_hat.iter().zip(p).map(|(&a, &b)| spec.atom_term(a, b)).sum()
}

/// First-improvement pattern search over pairwise mass transfers inside
/// each of the simplex blocks of `x`.
fn transfer_search<F: Fn(&[f64]) -> f64>(f: F, mut x: Vec<f64>, blocks: &[(usize, usize)], step0: f64, min_step: f64) -> (Vec<f64>, f64) {
    let mut fx = f(&x);
    let mut step = step0;
    let mut moves = Vec::new();
    for &(start, len) in blocks {
        for i in start..start + len {
            for j in start..start + len {
                if i != j {
                    moves.push((i, j));
                }
            }
        }
    }
    let mut trial = x.clone();
    while step >= min_step {
        let mut improved = false;
        for &(i, j) in &moves {
            let t = step.min(x[i]);
            if t <= 0.0 {
                continue;
            }
            trial.copy_from_slice(&x);
            trial[i] -= t;
            trial[j] += t;
            let ft = f(&trial);
            if ft > fx {
                x.copy_from_slice(&trial);
                fx = ft;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Families on which Burg and Pearson χ² blow up while the KL constraint
/// stays satisfied. Returns the largest divergence found on a log-spaced
/// `t` grid in `[1e−8, 0.5]` subject to `KL ≤ r`.
fn divergent_family(spec: &DivergenceSpec, r: f64) -> Option<f64> {
    let kl = builtin("kl").unwrap();
    let kind = spec.builtin_kind()?;
    let mut best: Option<f64> = None;
    for i in 0..=400 {
        let t = (1e-8f64.ln() + (0.5f64.ln() - 1e-8f64.ln()) * i as f64 / 400.0).exp();
        let (p_hat, p) = match kind {
            Builtin::Burg => {
                let a = (-1.0 / (t * t)).exp();
                ([a, 1.0 - a, 0.0, 0.0], [t, 1.0 - t, 0.0, 0.0])
            }
            Builtin::PearsonChi2 => {
                let t3 = t * t * t;
                ([t, 1.0 - t, 0.0, 0.0], [t3, 1.0 - t3, 0.0, 0.0])
            }
            _ => return None,
        };
        if div4(&kl, &p_hat, &p) <= r {
            let v = div4(spec, &p_hat, &p);
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
    }
    best
}

/// Largest value of the divergence-specific constructions, or `None` when the
/// divergence has none.
pub fn divergent_construction_value(spec: &DivergenceSpec, r: f64) -> Option<f64> {
    divergent_family(spec, r)
}

/// Multistart local search for `sup D_f(P̂, P)` subject to `KL(P̂, P) ≤ r`
/// over pairs of 4-atom distributions. `seeds` are extra feasible starting
/// pairs (flattened `[P̂, P]`).
fn joint_range_search(spec: &DivergenceSpec, r: f64, starts: usize, seeds: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let kl = builtin("kl").unwrap();
    let objective = |z: &[f64]| -> f64 {
        let (a, b) = z.split_at(4);
        if a.iter().chain(b).any(|&t| t < 0.0) {
            return f64::NEG_INFINITY;
        }
        let c = div4(&kl, a, b);
        if !(c <= r) {
            return f64::NEG_INFINITY;
        }
        let v = div4(spec, a, b);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut initial: Vec<Vec<f64>> = seeds.to_vec();
    for i in 0..starts {
        let u = halton(i, 6);
        let p_hat = simplex4(&u[..3]);
        let p = simplex4(&u[3..]);
        let mut z: Vec<f64> = p_hat.iter().chain(p.iter()).copied().collect();
        if objective(&z) == f64::NEG_INFINITY {
            z = p_hat.iter().chain(p_hat.iter()).copied().collect();
        }
        initial.push(z);
    }
    let blocks = [(0, 4), (4, 4)];
    let results: Vec<(Vec<f64>, f64)> = initial
        .into_par_iter()
        .map(|z| transfer_search(objective, z, &blocks, 0.1, 1e-10))
        .collect();
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for (z, v) in results {
        if v > best.1 {
            best = (z, v);
        }
    }
    best
}

/// `R_D(r)` for a single radius: `+∞` for Burg and Pearson χ² when their
/// constructions exceed [`DIVERGENCE_CAP`], otherwise the joint-range search
/// with `refinement` multistarts.
pub fn radius_joint_range(spec: &DivergenceSpec, r: f64, refinement: usize) -> Result<f64> {
    let curve = radius_curve(spec, &[r], refinement)?;
    Ok(curve.values[0])
}

/// `R_D` on a grid of radii. The optimum at each radius seeds the next one,
/// so the returned values are nondecreasing along ascending grids.
pub fn radius_curve(spec: &DivergenceSpec, r_grid: &[f64], refinement: usize) -> Result<RadiusCurve> {
    if r_grid.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::Config("radii must be ≥ 0".into()));
    }
    let mut order: Vec<usize> = (0..r_grid.len()).collect();
    order.sort_by(|&a, &b| r_grid[a].partial_cmp(&r_grid[b]).unwrap());
    let mut values = vec![0.0; r_grid.len()];
    let mut method = RadiusMethod::JointRange4atom;
    if spec.builtin_kind() == Some(Builtin::Kl) {
        method = RadiusMethod::ClosedForm;
        values.copy_from_slice(r_grid);
    } else {
        let mut seeds: Vec<Vec<f64>> = Vec::new();
        let mut prev = 0.0f64;
        for &i in &order {
            let r = r_grid[i];
            if r == 0.0 {
                values[i] = 0.0;
                continue;
            }
            if let Some(v) = divergent_family(spec, r) {
                if v > DIVERGENCE_CAP {
                    method = RadiusMethod::Diverges;
                    values[i] = f64::INFINITY;
                    prev = f64::INFINITY;
                    continue;
                }
            }
            let (z, v) = joint_range_search(spec, r, refinement, &seeds);
            let v = v.max(prev);
            if !z.is_empty() {
                seeds = vec![z];
            }
            values[i] = v;
            prev = v;
        }
    }
    Ok(RadiusCurve {
        name: spec.name().to_string(),
        r_grid: r_grid.to_vec(),
        values,
        method,
    })
}

/// Approximate smoothed radius `R^ε_D(r)`: the same multistart search over
/// triples `(P̂, Q, P)` on the four `points`, with `dist(P̂, Q) ≤ ε` and
/// `KL(Q, P) ≤ r`. Every returned value is attained by a feasible triple, so
/// it is a lower bound on the supremum over these atoms.
pub fn smoothed_radius(spec: &DivergenceSpec, r: f64, smoothing: Smoothing, points: &[f64; 4], refinement: usize) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::Config("radius must be ≥ 0".into()));
    }
    let eps = smoothing.epsilon();
    if !(eps >= 0.0) {
        return Err(Error::Config("smoothing radius must be ≥ 0".into()));
    }
    let kl = builtin("kl").unwrap();
    let support: Vec<Vec<f64>> = points.iter().map(|p| vec![*p]).collect();
    let distance = |a: &[f64], b: &[f64]| -> f64 {
        let da = DiscreteDistribution::new(support.clone(), a.to_vec());
        let db = DiscreteDistribution::new(support.clone(), b.to_vec());
        match (da, db) {
            (Ok(da), Ok(db)) => match smoothing {
                Smoothing::Wasserstein(_) => measure::wasserstein(&TransportCost::Euclidean, &da, &db).unwrap_or(f64::INFINITY),
                Smoothing::Lp(_) => measure::lp_metric(&da, &db).unwrap_or(f64::INFINITY),
            },
            _ => f64::INFINITY,
        }
    };
    let objective = |z: &[f64]| -> f64 {
        if z.iter().any(|&t| t < 0.0) {
            return f64::NEG_INFINITY;
        }
        let (p_hat, rest) = z.split_at(4);
        let (q, p) = rest.split_at(4);
        if !(div4(&kl, q, p) <= r) {
            return f64::NEG_INFINITY;
        }
        let v = div4(spec, p_hat, p);
        if v.is_nan() || distance(p_hat, q) > eps + 1e-12 {
            return f64::NEG_INFINITY;
        }
        v.min(DIVERGENCE_CAP * 10.0)
    };
    let blocks = [(0, 4), (4, 4), (8, 4)];
    let mut starts = Vec::with_capacity(refinement);
    for i in 0..refinement.max(1) {
        let u = halton(i, 9);
        let p_hat = simplex4(&u[..3]);
        let p = simplex4(&u[3..6]);
        let mut z: Vec<f64> = p_hat.iter().chain(p_hat.iter()).chain(p.iter()).copied().collect();
        if objective(&z) == f64::NEG_INFINITY {
            z = p_hat.iter().chain(p_hat.iter()).chain(p_hat.iter()).copied().collect();
        }
        starts.push(z);
    }
    let best = starts
        .into_par_iter()
        .map(|z| transfer_search(objective, z, &blocks, 0.1, 1e-7).1)
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(if best > DIVERGENCE_CAP { f64::INFINITY } else { best })
}

/// `diam·(1 − e^{−r})`.
pub fn wasserstein_radius_lower_bound(diam: f64, r: f64) -> Result<f64> {
    if !(diam >= 0.0) || !(r >= 0.0) {
        return Err(Error::Config("diameter and radius must be ≥ 0".into()));
    }
    Ok(-diam * (-r).exp_m1())
}

/// `(diam·e^{−r}, diam·(1 − e^{−r})·e^{−r})`: efficiency-loss lower bounds of
/// the whole-simplex and Wasserstein ambiguity sets against the KL ball.
pub fn efficiency_loss_lower_bounds(diam: f64, r: f64) -> Result<(f64, f64)> {
    let w = wasserstein_radius_lower_bound(diam, r)?;
    let e = (-r).exp();
    Ok((diam * e, w * e))
}

/// Pompeiu–Hausdorff distance between two finite families under the
/// transport cost. Finite samples give a lower bound on the distance
/// between the underlying sets.
pub fn hausdorff_efficiency(a1: &[DiscreteDistribution], a2: &[DiscreteDistribution], cost: &TransportCost) -> Result<f64> {
    if a1.is_empty() || a2.is_empty() {
        return Err(Error::Input("Hausdorff distance needs two nonempty families".into()));
    }
    let mut dist = vec![vec![0.0; a2.len()]; a1.len()];
    for (i, p) in a1.iter().enumerate() {
        for (j, q) in a2.iter().enumerate() {
            dist[i][j] = measure::wasserstein(cost, p, q)?;
        }
    }
    let forward = dist
        .iter()
        .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    let backward = (0..a2.len())
        .map(|j| dist.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    Ok(forward.max(backward))
}

/// `(N + 1)^{|Σ|}·e^{−rN}`.
pub fn finite_sanov_bound(n: usize, cardinality: usize, r: f64) -> Result<BoundReport> {
    if n == 0 || cardinality == 0 || !(r >= 0.0) {
        return Err(Error::Config("finite Sanov bound needs N ≥ 1, |Σ| ≥ 1 and r ≥ 0".into()));
    }
    let log_value = cardinality as f64 * ((n + 1) as f64).ln() - r * n as f64;
    Ok(BoundReport::from_log(n, r, None, cardinality as f64, log_value))
}

/// `⌈(2·diam·√d/ε)^d⌉`, and 1 for a single point.
pub fn covering_number_bound(diam: f64, d: usize, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("covering scale must be > 0, got {epsilon}")));
    }
    if !(diam >= 0.0) || d == 0 {
        return Err(Error::Config("covering number needs diam ≥ 0 and d ≥ 1".into()));
    }
    if diam == 0.0 {
        return Ok(1.0);
    }
    let v = (2.0 * diam * (d as f64).sqrt() / epsilon).powi(d as i32);
    Ok((v - 1e-9).ceil().max(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothingMetric {
    Lp,
    Wasserstein,
}

/// Finite-sample bound for the smoothed KL predictor: `(8/ε)^{C(ε/2)}·e^{−rN}`
/// under LP smoothing and `(8(diam+1)/ε)^{C(ε/(2(diam+1)))}·e^{−rN}` under
/// Wasserstein smoothing, evaluated in log space.
pub fn smoothed_sanov_bound(n: usize, r: f64, epsilon: f64, diam: f64, d: usize, metric: SmoothingMetric) -> Result<BoundReport> {
    if n == 0 || !(r >= 0.0) {
        return Err(Error::Config("smoothed Sanov bound needs N ≥ 1 and r ≥ 0".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("smoothing level must be > 0, got {epsilon}")));
    }
    let (prefactor, scale) = match metric {
        SmoothingMetric::Lp => (8.0 / epsilon, epsilon / 2.0),
        SmoothingMetric::Wasserstein => (8.0 * (diam + 1.0) / epsilon, epsilon / (2.0 * (diam + 1.0))),
    };
    let cover = covering_number_bound(diam, d, scale)?;
    let log_value = cover * prefactor.ln() - r * n as f64;
    Ok(BoundReport::from_log(n, r, Some(epsilon), cover, log_value))
}
