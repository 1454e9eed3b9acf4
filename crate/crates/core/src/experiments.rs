//! Monte-Carlo harness for feasibility experiments.
//!
//! Replication `i` draws from a ChaCha stream keyed by `(seed, i)`; sample
//! sizes in a run share the stream prefix, and every predictor sees the same
//! draws. Discrete truths are memoized by their count vector, so each
//! distinct empirical distribution is solved once. Results are reduced in
//! replication order and do not depend on the worker count.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::analysis::{self, SmoothingMetric};
use crate::divergence;
use crate::error::{Error, Result};
use crate::loss::{counterexample_loss, CounterexampleLoss, EventSet, LossOracle, LossSpec};
use crate::measure::{DiscreteDistribution, TransportCost};
use crate::predictor::{self, PredictorConfig, PredictorKind, DEFAULT_K, DEFAULT_SOLVER_TOL};

/// Absolute tolerance of the quadrature for `c(x, P)`.
pub const QUADRATURE_TOL: f64 = 1e-8;

/// Default scan length of the counterexample search.
pub const DEFAULT_K_MAX: usize = 5000;

/// Confidence level of the reported intervals.
pub const CONFIDENCE: f64 = 0.95;

fn stream(seed: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64);
    rng
}

/// Exact two-sided Clopper–Pearson interval for `k` successes in `n` trials.
pub fn clopper_pearson(k: usize, n: usize, confidence: f64) -> (f64, f64) {
    let alpha = 1.0 - confidence;
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(kf, nf - kf + 1.0).map_or(0.0, |b| b.inverse_cdf(alpha / 2.0))
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new(kf + 1.0, nf - kf).map_or(1.0, |b| b.inverse_cdf(1.0 - alpha / 2.0))
    };
    (lo, hi)
}

/// Frequency with its interval. The radius is the half-width of the interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Frequency {
    pub count: usize,
    pub replications: usize,
    pub frequency: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub ci_radius: f64,
}

impl Frequency {
    pub fn new(count: usize, replications: usize) -> Self {
        let (ci_lo, ci_hi) = clopper_pearson(count, replications, CONFIDENCE);
        Frequency {
            count,
            replications,
            frequency: count as f64 / replications as f64,
            ci_lo,
            ci_hi,
            ci_radius: 0.5 * (ci_hi - ci_lo),
        }
    }
}

/// CSV float: 17 significant digits, empty for NaN, `inf`/`-inf` for infinities.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

// ---------------------------------------------------------------- truths

/// The sampling distribution of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrueDistribution {
    Discrete { points: Vec<Vec<f64>>, weights: Vec<f64> },
    UniformInterval { lo: f64, hi: f64 },
}

impl TrueDistribution {
    fn validate(&self) -> Result<()> {
        match self {
            TrueDistribution::Discrete { points, weights } => {
                if points.is_empty() || points.len() != weights.len() {
                    return Err(Error::Config("discrete truth needs matching nonempty points and weights".into()));
                }
                DiscreteDistribution::new(points.clone(), weights.clone())?;
                Ok(())
            }
            TrueDistribution::UniformInterval { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::Config(format!("uniform truth needs lo < hi, got [{lo}, {hi}]")));
                }
                Ok(())
            }
        }
    }

    fn default_domain(&self) -> EventSet {
        match self {
            TrueDistribution::Discrete { points, .. } => EventSet::Points(points.clone()),
            TrueDistribution::UniformInterval { lo, hi } => EventSet::interval(*lo, *hi),
        }
    }

    fn cumulative(weights: &[f64]) -> Vec<f64> {
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect()
    }
}

fn draw_index(cum: &[f64], u: f64) -> usize {
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
}

/// Adaptive Simpson on `[a, b]` with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> Result<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if !delta.is_finite() {
            return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
        }
        if delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(Error::Quadrature(format!("recursion limit on [{a}, {b}], residual {delta:e}")));
        }
        Ok(rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)? + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `E_U ℓ_r(x, ξ)` for `ξ` uniform on `[lo, hi]`. The integrand has period
/// `x·T`; one period is integrated piecewise (the pieces are smooth) and
/// replicated, the remainder is integrated directly.
pub fn counterexample_true_cost(ce: &CounterexampleLoss, x: f64, lo: f64, hi: f64) -> Result<f64> {
    if x == 0.0 {
        return Ok(0.0);
    }
    let len = hi - lo;
    let period = x.abs() * ce.period;
    let f = |xi: f64| ce.ell(x, xi);
    // g has kinks at multiples of T and at T·m + π
    let piecewise = |a: f64, b: f64, tol: f64| -> Result<f64> {
        let mut cuts = vec![a, b];
        let scale = x.abs();
        let first = (a / period).floor() as i64 - 1;
        let last = (b / period).ceil() as i64 + 1;
        for m in first..=last {
            for off in [0.0, PI * scale] {
                let c = m as f64 * period + off;
                if c > a && c < b {
                    cuts.push(c);
                }
            }
        }
        cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let pieces = (cuts.len() - 1) as f64;
        let mut total = 0.0;
        for w in cuts.windows(2) {
            if w[1] > w[0] {
                total += adaptive_simpson(&f, w[0], w[1], tol / pieces)?;
            }
        }
        Ok(total)
    };
    let start = (lo / period).ceil() * period;
    if start >= hi {
        return Ok(piecewise(lo, hi, QUADRATURE_TOL)? / len);
    }
    let whole = ((hi - start) / period).floor();
    let one = if whole >= 1.0 { piecewise(start, start + period, QUADRATURE_TOL / (2.0 * whole))? } else { 0.0 };
    let head = piecewise(lo, start, QUADRATURE_TOL / 4.0)?;
    let tail = piecewise(start + whole * period, hi, QUADRATURE_TOL / 4.0)?;
    let body = one * whole;
    Ok((head + body + tail) / len)
}

/// `c(x, P)`: exact for discrete truths, quadrature for uniform ones.
fn true_cost(loss: &LossOracle, spec: &LossSpec, x: f64, truth: &TrueDistribution) -> Result<f64> {
    match truth {
        TrueDistribution::Discrete { points, weights } => {
            let total: f64 = weights.iter().sum();
            Ok(points.iter().zip(weights).map(|(p, w)| w / total * loss.eval(x, p)).sum())
        }
        TrueDistribution::UniformInterval { lo, hi } => {
            if let LossSpec::Counterexample { r, x_r } = spec {
                let ce = match x_r {
                    Some(v) => CounterexampleLoss::with_x_r(*r, *v)?,
                    None => counterexample_loss(*r)?,
                };
                return counterexample_true_cost(&ce, x, *lo, *hi);
            }
            let f = |xi: f64| loss.eval(x, &[xi]);
            let pieces = 64;
            let h = (hi - lo) / pieces as f64;
            let mut total = 0.0;
            for i in 0..pieces {
                let a = lo + h * i as f64;
                total += adaptive_simpson(&f, a, a + h, QUADRATURE_TOL / pieces as f64)?;
            }
            Ok(total / (hi - lo))
        }
    }
}

/// Short name of a predictor configuration, used as a CSV key.
pub fn predictor_label(cfg: &PredictorConfig) -> String {
    let cost = match cfg.cost {
        TransportCost::Euclidean => "euclidean".to_string(),
        TransportCost::LpIndicator { cutoff } => format!("lp({cutoff})"),
    };
    match cfg.kind {
        PredictorKind::Saa => "saa".into(),
        PredictorKind::FDro | PredictorKind::EmpiricalFDro => format!("{}/{}/r={}", cfg.kind.name(), cfg.divergence, cfg.r),
        PredictorKind::OtDro => format!("{}/{}/eps={}/K={}", cfg.kind.name(), cost, cfg.epsilon, cfg.k),
        _ => format!("{}/{}/{}/r={}/eps={}/K={}", cfg.kind.name(), cfg.divergence, cost, cfg.r, cfg.epsilon, cfg.k),
    }
}

fn predictor_values(cfg: &PredictorConfig, loss: &LossOracle, grid: &[f64], p_hat: &DiscreteDistribution) -> Result<Vec<f64>> {
    grid.iter().map(|&x| predictor::evaluate(cfg, loss, x, p_hat).map(|s| s.value)).collect()
}

/// Finite-sample bound attached to a predictor row, when one applies.
fn predictor_bound(cfg: &PredictorConfig, truth: &TrueDistribution, domain: &EventSet, n: usize) -> Result<Option<f64>> {
    if cfg.divergence != "kl" {
        return Ok(None);
    }
    match (cfg.kind, truth) {
        (PredictorKind::FDro, TrueDistribution::Discrete { points, .. }) => {
            Ok(Some(analysis::finite_sanov_bound(n, points.len(), cfg.r)?.clamped))
        }
        (PredictorKind::SmoothedFD, _) if cfg.epsilon > 0.0 => {
            let metric = match cfg.cost {
                TransportCost::Euclidean => SmoothingMetric::Wasserstein,
                TransportCost::LpIndicator { .. } => SmoothingMetric::Lp,
            };
            let b = analysis::smoothed_sanov_bound(n, cfg.r, cfg.epsilon, domain.diameter()?, domain.dim(), metric)?;
            Ok(Some(b.clamped))
        }
        _ => Ok(None),
    }
}

// ---------------------------------------------------------- feasibility

fn default_margin() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub seed: u64,
    pub replications: usize,
    #[serde(rename = "N", alias = "n")]
    pub n: Vec<usize>,
    pub true_distribution: TrueDistribution,
    pub loss: LossSpec,
    /// Event set used for `ℓ^∞` and inflations; defaults to the support of
    /// the truth.
    #[serde(default)]
    pub domain: Option<EventSet>,
    pub decision_grid: Vec<f64>,
    pub predictors: Vec<PredictorConfig>,
    /// Violation margin δ: the event is `c(x, P) > ĉ(x, P_N) + δ`.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be ≥ 1".into()));
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return Err(Error::Config("N must be a nonempty list of positive sizes".into()));
        }
        if self.decision_grid.is_empty() {
            return Err(Error::Config("decision_grid is empty".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config("margin must be ≥ 0".into()));
        }
        self.true_distribution.validate()?;
        for p in &self.predictors {
            p.validate()?;
        }
        Ok(())
    }

    fn domain(&self) -> EventSet {
        self.domain.clone().unwrap_or_else(|| self.true_distribution.default_domain())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub n: usize,
    pub predictor: String,
    pub violations: Frequency,
    /// `log(frequency)/N`.
    pub rate_estimate: f64,
    /// Clamped finite-sample bound, when one applies.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct McResult {
    pub rows: Vec<McRow>,
    pub distinct_samples: Vec<usize>,
    pub wall_time_s: f64,
}

impl McResult {
    pub fn csv(&self) -> String {
        let mut s = String::from("N,predictor,violations,replications,frequency,ci_lo,ci_hi,ci_radius,rate_estimate,bound\n");
        for r in &self.rows {
            let v = &r.violations;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.predictor,
                v.count,
                v.replications,
                format_float(v.frequency),
                format_float(v.ci_lo),
                format_float(v.ci_hi),
                format_float(v.ci_radius),
                format_float(r.rate_estimate),
                r.bound.map_or(String::new(), format_float)
            );
        }
        s
    }
}

/// Samples of replication `rep`: count vectors for discrete truths, raw
/// points otherwise.
enum Draw {
    Counts(Vec<usize>),
    Points(Vec<f64>),
}

fn draw(truth: &TrueDistribution, cum: &[f64], seed: u64, rep: usize, n: usize) -> Draw {
    let mut rng = stream(seed, rep);
    match truth {
        TrueDistribution::Discrete { .. } => {
            let mut counts = vec![0usize; cum.len()];
            for _ in 0..n {
                counts[draw_index(cum, rng.random::<f64>())] += 1;
            }
            Draw::Counts(counts)
        }
        TrueDistribution::UniformInterval { lo, hi } => {
            Draw::Points((0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect())
        }
    }
}

fn empirical_from_counts(points: &[Vec<f64>], counts: &[usize]) -> Result<DiscreteDistribution> {
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for (p, &c) in points.iter().zip(counts) {
        if c > 0 {
            support.push(p.clone());
            weights.push(c as f64);
        }
    }
    let total: f64 = weights.iter().sum();
    DiscreteDistribution::new(support, weights.iter().map(|w| w / total).collect())
}

/// Empirical distributions of every replication at size `n`, deduplicated.
/// Returns the distinct distributions and, per replication, its index.
fn sample_layer(truth: &TrueDistribution, seed: u64, replications: usize, n: usize) -> Result<(Vec<DiscreteDistribution>, Vec<usize>)> {
    let cum = match truth {
        TrueDistribution::Discrete { weights, .. } => TrueDistribution::cumulative(weights),
        TrueDistribution::UniformInterval { .. } => Vec::new(),
    };
    let draws: Vec<Draw> = (0..replications).into_par_iter().map(|rep| draw(truth, &cum, seed, rep, n)).collect();
    match truth {
        TrueDistribution::Discrete { points, .. } => {
            let mut keys: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
            let mut index = Vec::with_capacity(replications);
            for d in &draws {
                if let Draw::Counts(c) = d {
                    let next = keys.len();
                    index.push(*keys.entry(c.clone()).or_insert(next));
                }
            }
            let mut unique = vec![Vec::new(); keys.len()];
            for (k, i) in keys {
                unique[i] = k;
            }
            let dists = unique.iter().map(|c| empirical_from_counts(points, c)).collect::<Result<Vec<_>>>()?;
            Ok((dists, index))
        }
        TrueDistribution::UniformInterval { .. } => {
            let dists = draws
                .into_iter()
                .map(|d| match d {
                    Draw::Points(p) => {
                        let pts: Vec<f64> = p;
                        DiscreteDistribution::on_line(&pts, &vec![1.0 / pts.len() as f64; pts.len()])
                    }
                    Draw::Counts(_) => unreachable!(),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((dists, (0..replications).collect()))
        }
    }
}

/// Uniform-violation frequencies `P(∃x: c(x, P) > ĉ(x, P_N) + δ)` per sample
/// size and predictor.
pub fn feasibility_mc(cfg: &McConfig) -> Result<McResult> {
    cfg.validate()?;
    let start = Instant::now();
    let domain = cfg.domain();
    let loss = cfg.loss.build(domain.clone())?;
    let truth_costs: Vec<f64> = cfg
        .decision_grid
        .iter()
        .map(|&x| true_cost(&loss, &cfg.loss, x, &cfg.true_distribution))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut distinct = Vec::new();
    for &n in &cfg.n {
        let (dists, index) = sample_layer(&cfg.true_distribution, cfg.seed, cfg.replications, n)?;
        distinct.push(dists.len());
        // violated[d][p]
        let violated: Vec<Vec<bool>> = dists
            .par_iter()
            .map(|p_n| {
                cfg.predictors
                    .iter()
                    .map(|pc| {
                        for (&x, &c) in cfg.decision_grid.iter().zip(&truth_costs) {
                            let v = predictor::evaluate(pc, &loss, x, p_n)?.value;
                            if c > v + cfg.margin {
                                return Ok(true);
                            }
                        }
                        Ok(false)
                    })
                    .collect::<Result<Vec<bool>>>()
            })
            .collect::<Result<_>>()?;
        for (j, pc) in cfg.predictors.iter().enumerate() {
            let count = index.iter().filter(|&&i| violated[i][j]).count();
            let f = Frequency::new(count, cfg.replications);
            rows.push(McRow {
                n,
                predictor: predictor_label(pc),
                rate_estimate: f.frequency.ln() / n as f64,
                violations: f,
                bound: predictor_bound(pc, &cfg.true_distribution, &domain, n)?,
            });
        }
    }
    Ok(McResult {
        rows,
        distinct_samples: distinct,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------- curse

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurseConfig {
    pub seed: u64,
    pub replications: usize,
    #[serde(rename = "N", alias = "n")]
    pub n: Vec<usize>,
    pub true_distribution: TrueDistribution,
    pub loss: LossSpec,
    #[serde(default)]
    pub domain: Option<EventSet>,
    pub decision_grid: Vec<f64>,
    /// DRO predictors compared against SAA, which is always included.
    #[serde(default)]
    pub predictors: Vec<PredictorConfig>,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurseRow {
    pub n: usize,
    pub predictor: String,
    /// `inf_x c(x, P) > inf_x ĉ(x, P_N) + δ`
    pub value_event: Frequency,
    /// `c(x̂, P) > ĉ(x̂, P_N) + δ` at the minimizer `x̂` of `ĉ`.
    pub solution_event: Frequency,
    /// `∃x: c(x, P) > ĉ(x, P_N) + δ`
    pub uniform_event: Frequency,
    /// Streams where the value event held but the solution event did not.
    pub ordering_violations: usize,
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurseResult {
    pub rows: Vec<CurseRow>,
    pub wall_time_s: f64,
}

impl CurseResult {
    pub fn csv(&self) -> String {
        let mut s = String::from(
            "N,predictor,replications,value_count,value_frequency,solution_count,solution_frequency,uniform_count,uniform_frequency,uniform_ci_radius,ordering_violations,bound\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.predictor,
                r.value_event.replications,
                r.value_event.count,
                format_float(r.value_event.frequency),
                r.solution_event.count,
                format_float(r.solution_event.frequency),
                r.uniform_event.count,
                format_float(r.uniform_event.frequency),
                format_float(r.uniform_event.ci_radius),
                r.ordering_violations,
                r.bound.map_or(String::new(), format_float)
            );
        }
        s
    }
}

/// Value-level and solution-level optimism of SAA and each predictor on
/// common random streams.
pub fn optimizers_curse_run(cfg: &CurseConfig) -> Result<CurseResult> {
    let mut predictors = vec![PredictorConfig::new(PredictorKind::Saa)];
    predictors.extend(cfg.predictors.iter().cloned());
    let mc = McConfig {
        seed: cfg.seed,
        replications: cfg.replications,
        n: cfg.n.clone(),
        true_distribution: cfg.true_distribution.clone(),
        loss: cfg.loss.clone(),
        domain: cfg.domain.clone(),
        decision_grid: cfg.decision_grid.clone(),
        predictors: predictors.clone(),
        margin: cfg.margin,
    };
    mc.validate()?;
    if !matches!(cfg.true_distribution, TrueDistribution::Discrete { .. }) {
        return Err(Error::Config("the optimizer's-curse run needs a discrete truth".into()));
    }
    let start = Instant::now();
    let domain = mc.domain();
    let loss = cfg.loss.build(domain.clone())?;
    let truth: Vec<f64> = cfg
        .decision_grid
        .iter()
        .map(|&x| true_cost(&loss, &cfg.loss, x, &cfg.true_distribution))
        .collect::<Result<_>>()?;
    let true_min = truth.iter().copied().fold(f64::INFINITY, f64::min);
    let mut rows = Vec::new();
    for &n in &cfg.n {
        let (dists, index) = sample_layer(&cfg.true_distribution, cfg.seed, cfg.replications, n)?;
        // events[d][p] = (value, solution, uniform)
        let events: Vec<Vec<(bool, bool, bool)>> = dists
            .par_iter()
            .map(|p_n| {
                predictors
                    .iter()
                    .map(|pc| {
                        let vals = predictor_values(pc, &loss, &cfg.decision_grid, p_n)?;
                        let (mut best, mut arg) = (f64::INFINITY, 0);
                        for (i, &v) in vals.iter().enumerate() {
                            if v < best {
                                best = v;
                                arg = i;
                            }
                        }
                        let value = true_min > best + cfg.margin;
                        let solution = truth[arg] > vals[arg] + cfg.margin;
                        let uniform = truth.iter().zip(&vals).any(|(c, v)| *c > v + cfg.margin);
                        Ok((value, solution, uniform))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        for (j, pc) in predictors.iter().enumerate() {
            let mut counts = (0, 0, 0, 0);
            for &i in &index {
                let (v, s, u) = events[i][j];
                counts.0 += v as usize;
                counts.1 += s as usize;
                counts.2 += u as usize;
                counts.3 += (v && !s) as usize;
            }
            rows.push(CurseRow {
                n,
                predictor: predictor_label(pc),
                value_event: Frequency::new(counts.0, cfg.replications),
                solution_event: Frequency::new(counts.1, cfg.replications),
                uniform_event: Frequency::new(counts.2, cfg.replications),
                ordering_violations: counts.3,
                bound: predictor_bound(pc, &cfg.true_distribution, &domain, n)?,
            });
        }
    }
    Ok(CurseResult {
        rows,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------- counterexample

fn default_k_max() -> usize {
    DEFAULT_K_MAX
}
fn default_smoothing_eps() -> f64 {
    0.05
}
fn default_k() -> usize {
    DEFAULT_K
}
fn default_tol() -> f64 {
    DEFAULT_SOLVER_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub seed: u64,
    pub replications: usize,
    #[serde(rename = "N", alias = "n")]
    pub n: usize,
    pub r: f64,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    /// Amplitude of the negative lobe; `e^r` when absent.
    #[serde(default)]
    pub x_r: Option<f64>,
    /// LP smoothing level of the comparison predictor.
    #[serde(default = "default_smoothing_eps")]
    pub epsilon: f64,
    #[serde(default = "default_k", rename = "K", alias = "k")]
    pub k: usize,
    #[serde(default = "default_tol")]
    pub solver_tol: f64,
}

impl CounterexampleConfig {
    pub fn new(seed: u64, replications: usize, n: usize, r: f64, k_max: usize) -> Self {
        CounterexampleConfig {
            seed,
            replications,
            n,
            r,
            k_max,
            x_r: None,
            epsilon: default_smoothing_eps(),
            k: DEFAULT_K,
            solver_tol: DEFAULT_SOLVER_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleRep {
    pub replication: usize,
    /// Smallest `k ≤ k_max` with `c(x_k, P) > ĉ_KL(x_k, P_N)`.
    pub kl_first_k: Option<usize>,
    /// The same for the LP-smoothed predictor.
    pub smoothed_first_k: Option<usize>,
    /// With `x_r = 1` and `r < log 2`: whether the true cost at the scanned
    /// minimizer of `ĉ_KL` exceeds its predicted value, and whether the true
    /// minimum exceeds the predicted minimum. With `c ≡ 0` both reduce to a
    /// negative predicted minimum on the grid.
    pub open_question: Option<bool>,
    pub failed_bound: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleResult {
    pub k_max: usize,
    pub replications: Vec<CounterexampleRep>,
    pub kl: Frequency,
    pub smoothed: Frequency,
    /// Clamped smoothed-Sanov bound for the LP-smoothed predictor.
    pub smoothed_bound: f64,
    pub wall_time_s: f64,
}

impl CounterexampleResult {
    /// KL found-rate had the scan stopped at `k`.
    pub fn kl_found_at(&self, k: usize) -> Frequency {
        let c = self.replications.iter().filter(|r| r.kl_first_k.is_some_and(|f| f <= k)).count();
        Frequency::new(c, self.replications.len())
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("predictor,k_max,found,replications,frequency,ci_lo,ci_hi,ci_radius,bound\n");
        for (name, f, b) in [("kl-dro", &self.kl, f64::NAN), ("smoothed-kl-lp", &self.smoothed, self.smoothed_bound)] {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                name,
                self.k_max,
                f.count,
                f.replications,
                format_float(f.frequency),
                format_float(f.ci_lo),
                format_float(f.ci_hi),
                format_float(f.ci_radius),
                format_float(b)
            );
        }
        s
    }

    pub fn replications_csv(&self) -> String {
        let mut s = String::from("replication,kl_first_k,smoothed_first_k,open_question,failed_bound\n");
        let opt = |v: Option<usize>| v.map_or(String::new(), |k| k.to_string());
        let optb = |v: Option<bool>| v.map_or(String::new(), |b| b.to_string());
        for r in &self.replications {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.replication,
                opt(r.kl_first_k),
                opt(r.smoothed_first_k),
                optb(r.open_question),
                optb(r.failed_bound)
            );
        }
        s
    }
}

/// Scans `x_k = 1/(T·k)` for `k = 1..k_max` on each replication and records
/// the first decision at which each predictor under-covers the true cost.
pub fn counterexample_run(cfg: &CounterexampleConfig) -> Result<CounterexampleResult> {
    if cfg.replications == 0 || cfg.n == 0 || cfg.k_max == 0 {
        return Err(Error::Config("replications, N and k_max must be ≥ 1".into()));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(Error::Config("smoothing level must be > 0".into()));
    }
    let start = Instant::now();
    let ce = match cfg.x_r {
        Some(v) => CounterexampleLoss::with_x_r(cfg.r, v)?,
        None => counterexample_loss(cfg.r)?,
    };
    let (lo, hi) = (-1.0, 1.0);
    let loss = ce.oracle(lo, hi)?;
    let kl = divergence::builtin("kl")?;
    let cost = TransportCost::LpIndicator { cutoff: cfg.epsilon };
    let xs: Vec<f64> = (1..=cfg.k_max).map(|k| 1.0 / (ce.period * k as f64)).collect();
    let truth: Vec<f64> = xs.par_iter().map(|&x| counterexample_true_cost(&ce, x, lo, hi)).collect::<Result<_>>()?;
    let keep = (-cfg.r).exp();
    let second_part = (ce.x_r - 1.0).abs() < 1e-15 && cfg.r < std::f64::consts::LN_2;
    let sup = |x: f64| loss.sup_loss(x);
    let reps: Vec<CounterexampleRep> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| -> Result<CounterexampleRep> {
            let mut rng = stream(cfg.seed, rep);
            let pts: Vec<f64> = (0..cfg.n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
            let p_n = DiscreteDistribution::on_line(&pts, &vec![1.0 / pts.len() as f64; pts.len()])?;
            let mut kl_first = None;
            let mut sm_first = None;
            for (k, (&x, &c)) in xs.iter().zip(&truth).enumerate() {
                let s = loss.sup_loss(x);
                if kl_first.is_none() {
                    let mean = predictor::saa(&loss, x, &p_n);
                    // moving mass 1 − e^{−r} to the supremum is always feasible
                    if c > keep * mean + (1.0 - keep) * s {
                        let v = predictor::kl_dro_with_continuum_sup(&loss, x, &p_n, cfg.r, Some(&sup), cfg.solver_tol)?.value;
                        if c > v {
                            kl_first = Some(k + 1);
                        }
                    }
                }
                if sm_first.is_none() {
                    let inflated: f64 = p_n
                        .support()
                        .iter()
                        .zip(p_n.weights())
                        .map(|(p, w)| w * loss.inflate(x, p, 0.0, &cost))
                        .sum();
                    if c > keep * inflated + (1.0 - keep) * s {
                        let v = predictor::smoothed_f_d(&loss, x, &p_n, &kl, &cost, cfg.r, cfg.epsilon, cfg.k, cfg.solver_tol)?.value;
                        if c > v {
                            sm_first = Some(k + 1);
                        }
                    }
                }
                if kl_first.is_some() && sm_first.is_some() {
                    break;
                }
            }
            let (open_question, failed_bound) = if second_part {
                (Some(kl_first.is_some()), Some(kl_first.is_some()))
            } else {
                (None, None)
            };
            Ok(CounterexampleRep {
                replication: rep,
                kl_first_k: kl_first,
                smoothed_first_k: sm_first,
                open_question,
                failed_bound,
            })
        })
        .collect::<Result<_>>()?;
    let n_reps = reps.len();
    let kl_count = reps.iter().filter(|r| r.kl_first_k.is_some()).count();
    let sm_count = reps.iter().filter(|r| r.smoothed_first_k.is_some()).count();
    let bound = analysis::smoothed_sanov_bound(cfg.n, cfg.r, cfg.epsilon, hi - lo, 1, SmoothingMetric::Lp)?;
    Ok(CounterexampleResult {
        k_max: cfg.k_max,
        replications: reps,
        kl: Frequency::new(kl_count, n_reps),
        smoothed: Frequency::new(sm_count, n_reps),
        smoothed_bound: bound.clamped,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------- empirical

fn default_r() -> f64 {
    0.3
}
fn default_divergence() -> String {
    "kl".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalConfig {
    pub seed: u64,
    pub replications: usize,
    /// Probability of the high-loss atom.
    pub c: f64,
    #[serde(rename = "N", alias = "n")]
    pub n: Vec<usize>,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_divergence")]
    pub divergence: String,
    #[serde(default = "default_tol")]
    pub solver_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalRow {
    pub n: usize,
    pub predictor: String,
    pub disappointments: Frequency,
    /// `(1 − c)^N`.
    pub floor: f64,
    /// Binomial standard deviation of a frequency at the floor.
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalResult {
    pub rows: Vec<EmpiricalRow>,
    pub wall_time_s: f64,
}

impl EmpiricalResult {
    pub fn csv(&self) -> String {
        let mut s = String::from("N,predictor,disappointments,replications,frequency,ci_lo,ci_hi,ci_radius,floor,sigma\n");
        for r in &self.rows {
            let d = &r.disappointments;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.predictor,
                d.count,
                d.replications,
                format_float(d.frequency),
                format_float(d.ci_lo),
                format_float(d.ci_hi),
                format_float(d.ci_radius),
                format_float(r.floor),
                format_float(r.sigma)
            );
        }
        s
    }
}

/// Two-point truth `(1 − c)·δ_a + c·δ_b` with `ℓ(a) = 0 < ℓ(b) = 1`:
/// disappointment frequencies of the empirical predictor and of the matched
/// f-divergence predictor on the same streams.
pub fn empirical_infeasibility_run(cfg: &EmpiricalConfig) -> Result<EmpiricalResult> {
    if !(cfg.c > 0.0 && cfg.c <= 1.0) {
        return Err(Error::Config(format!("c must lie in (0, 1], got {}", cfg.c)));
    }
    let mut empirical = PredictorConfig::new(PredictorKind::EmpiricalFDro);
    empirical.divergence = cfg.divergence.clone();
    empirical.r = cfg.r;
    empirical.solver_tol = cfg.solver_tol;
    let mut matched = empirical.clone();
    matched.kind = PredictorKind::FDro;
    let mc = McConfig {
        seed: cfg.seed,
        replications: cfg.replications,
        n: cfg.n.clone(),
        true_distribution: TrueDistribution::Discrete {
            points: vec![vec![0.0], vec![1.0]],
            weights: vec![1.0 - cfg.c, cfg.c],
        },
        loss: LossSpec::Linear(crate::loss::AffinePiece {
            a: 0.0,
            b: 0.0,
            c: vec![1.0],
            e: vec![],
        }),
        domain: None,
        decision_grid: vec![0.0],
        predictors: vec![empirical, matched],
        margin: 0.0,
    };
    let res = feasibility_mc(&mc)?;
    let rows = res
        .rows
        .into_iter()
        .map(|r| {
            let floor = (1.0 - cfg.c).powi(r.n as i32);
            EmpiricalRow {
                n: r.n,
                predictor: r.predictor,
                sigma: (floor * (1.0 - floor) / cfg.replications as f64).sqrt(),
                floor,
                disappointments: r.violations,
            }
        })
        .collect();
    Ok(EmpiricalResult {
        rows,
        wall_time_s: res.wall_time_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clopper_pearson_reference() {
        // 95% interval for 5/20, beta quantiles from scipy
        let (lo, hi) = clopper_pearson(5, 20, 0.95);
        assert!((lo - 0.08657146910143461).abs() < 1e-9, "{lo}");
        assert!((hi - 0.49104587170795744).abs() < 1e-9, "{hi}");
        assert_eq!(clopper_pearson(0, 10, 0.95).0, 0.0);
        assert_eq!(clopper_pearson(10, 10, 0.95).1, 1.0);
    }

    #[test]
    fn simpson_integrates_sine() {
        let v = adaptive_simpson(&|t: f64| t.sin(), 0.0, PI, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-11);
    }

    #[test]
    fn counterexample_cost_vanishes_on_the_scan() {
        let ce = counterexample_loss(0.3).unwrap();
        for k in [1usize, 2, 7, 100, 4999] {
            let x = 1.0 / (ce.period * k as f64);
            let c = counterexample_true_cost(&ce, x, -1.0, 1.0).unwrap();
            assert!(c.abs() < 1e-8, "k={k}: {c}");
        }
        // off the scan the cost is generally nonzero; compare with a brute-force Riemann sum
        let x = 0.37;
        let c = counterexample_true_cost(&ce, x, -1.0, 1.0).unwrap();
        let n = 2_000_000;
        let riemann: f64 = (0..n).map(|i| ce.ell(x, -1.0 + 2.0 * (i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64;
        assert!((c - riemann).abs() < 1e-8, "{c} vs {riemann}");
        let ce1 = CounterexampleLoss::with_x_r(0.3, 1.0).unwrap();
        for x in [0.05, 0.3, 0.9] {
            assert!(counterexample_true_cost(&ce1, x, -1.0, 1.0).unwrap().abs() < 1e-8);
        }
    }

    fn three_point(seed: u64, reps: usize, r: f64) -> McConfig {
        let mut kl = PredictorConfig::new(PredictorKind::FDro);
        kl.r = r;
        McConfig {
            seed,
            replications: reps,
            n: vec![10, 20],
            true_distribution: TrueDistribution::Discrete {
                points: vec![vec![0.0], vec![1.0], vec![2.0]],
                weights: vec![0.2, 0.5, 0.3],
            },
            loss: LossSpec::Expression { expr: "(xi - x)^2".into() },
            domain: None,
            decision_grid: (0..=10).map(|i| i as f64 * 0.2).collect(),
            predictors: vec![PredictorConfig::new(PredictorKind::Saa), kl],
            margin: 0.0,
        }
    }

    #[test]
    fn mc_is_deterministic_and_huge_radius_never_fails() {
        let a = feasibility_mc(&three_point(7, 300, 50.0)).unwrap();
        let b = feasibility_mc(&three_point(7, 300, 50.0)).unwrap();
        assert_eq!(a.csv(), b.csv());
        for row in a.rows.iter().filter(|r| r.predictor.starts_with("f-dro")) {
            assert_eq!(row.violations.count, 0);
        }
        let saa = a.rows.iter().find(|r| r.predictor == "saa").unwrap();
        assert!(saa.violations.frequency > 0.2);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = three_point(11, 200, 0.3);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| feasibility_mc(&cfg).unwrap());
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| feasibility_mc(&cfg).unwrap());
        assert_eq!(one.csv(), four.csv());
    }

    #[test]
    fn curse_ordering_holds_per_stream() {
        let mut kl = PredictorConfig::new(PredictorKind::FDro);
        kl.r = 0.2;
        let cfg = CurseConfig {
            seed: 3,
            replications: 400,
            n: vec![20],
            true_distribution: TrueDistribution::Discrete {
                points: vec![vec![0.0], vec![1.0]],
                weights: vec![0.5, 0.5],
            },
            loss: LossSpec::Expression { expr: "(xi - x)^2".into() },
            domain: None,
            decision_grid: (0..=10).map(|i| i as f64 * 0.1).collect(),
            predictors: vec![kl],
            margin: 0.0,
        };
        let res = optimizers_curse_run(&cfg).unwrap();
        for row in &res.rows {
            assert_eq!(row.ordering_violations, 0);
            assert!(row.value_event.count <= row.solution_event.count);
            assert!(row.solution_event.count <= row.uniform_event.count);
        }
        let saa = &res.rows[0];
        assert!(saa.solution_event.frequency > 0.1 && saa.solution_event.frequency < 0.9);
        assert!(res.rows[1].uniform_event.frequency <= res.rows[1].bound.unwrap() + res.rows[1].uniform_event.ci_radius);
    }

    #[test]
    fn constant_loss_never_disappoints() {
        let mut cfg = three_point(5, 100, 0.3);
        cfg.loss = LossSpec::Expression { expr: "1".into() };
        let res = feasibility_mc(&cfg).unwrap();
        assert!(res.rows.iter().all(|r| r.violations.count == 0));
    }

    #[test]
    fn empirical_run_certain_atom() {
        let cfg = EmpiricalConfig {
            seed: 1,
            replications: 200,
            c: 1.0,
            n: vec![5],
            r: 0.3,
            divergence: "kl".into(),
            solver_tol: DEFAULT_SOLVER_TOL,
        };
        let res = empirical_infeasibility_run(&cfg).unwrap();
        assert!(res.rows.iter().all(|r| r.disappointments.count == 0));
    }

    #[test]
    fn counterexample_small_run() {
        let cfg = CounterexampleConfig::new(2, 8, 20, 0.3, 200);
        let a = counterexample_run(&cfg).unwrap();
        let b = counterexample_run(&cfg).unwrap();
        assert_eq!(a.replications_csv(), b.replications_csv());
        assert!(a.kl_found_at(100).count <= a.kl_found_at(200).count);
    }
}
