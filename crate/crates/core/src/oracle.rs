//! Brute-force primal solvers on small finite supports. They share no code
//! with the dual solvers in `predictor` and exist to certify them.
//!
//! The f-divergence primal is a concave maximization over weight vectors.
//! Two coordinates (the worst and the best loss) are resolved exactly by a
//! one-dimensional convex root search; the remaining ones are scanned on a
//! simplex lattice and then polished by a compass search.

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::loss::LossOracle;
use crate::lp::{LinearProgram, Relation};
use crate::measure::{binomial, DiscreteDistribution, SimplexLattice, TransportCost};
use crate::optim::{bisect_last_true, golden_min};
use crate::predictor;
use crate::transport;

/// Largest number of atoms per layer accepted by the grid oracles.
pub const MAX_ORACLE_ATOMS: usize = 4;

/// Evaluation budget of one local refinement.
const MAX_POLLS: usize = 50_000;
/// Largest LP accepted by [`primal_ot_dro`] (number of coupling variables).
pub const MAX_LP_VARIABLES: usize = 20_000;

/// Weight vectors on the `atoms`-simplex with coordinates in `hℤ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexGrid {
    pub atoms: usize,
    pub resolution: f64,
    steps: usize,
}

impl SimplexGrid {
    pub fn new(atoms: usize, resolution: f64) -> Result<Self> {
        if atoms == 0 {
            return Err(Error::Config("simplex grid needs at least one atom".into()));
        }
        if !(resolution > 0.0 && resolution <= 1.0) {
            return Err(Error::Config(format!("grid step must lie in (0, 1], got {resolution}")));
        }
        let steps = (1.0 / resolution).round() as usize;
        if ((steps as f64) * resolution - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("1/h must be an integer, got h = {resolution}")));
        }
        Ok(SimplexGrid {
            atoms,
            resolution,
            steps,
        })
    }

    /// `C(1/h + n − 1, n − 1)`.
    pub fn cardinality(&self) -> f64 {
        binomial(self.steps + self.atoms - 1, self.atoms - 1)
    }

    pub fn points(&self) -> SimplexLattice {
        SimplexLattice::new(self.atoms, self.steps)
    }
}

/// Pattern search for a maximum. `f` returns `−∞` outside the domain. The
/// step is halved whenever no direction improves.
fn compass_max<F: FnMut(&[f64]) -> f64>(mut f: F, x0: Vec<f64>, dirs: &[Vec<f64>], step0: f64, min_step: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let mut x = x0;
    let mut fx = f(&x);
    let mut step = step0;
    let mut trial = vec![0.0; x.len()];
    let mut evals = 0;
    while step >= min_step && evals < max_evals {
        let mut improved = false;
        for d in dirs {
            for (t, (xi, di)) in trial.iter_mut().zip(x.iter().zip(d)) {
                *t = xi + step * di;
            }
            let ft = f(&trial);
            evals += 1;
            if ft > fx {
                x.copy_from_slice(&trial);
                fx = ft;
                improved = true;
                step = (2.0 * step).min(step0);
                break;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Axis directions `±e_i` and transfer directions `±(e_i − e_j)`.
fn poll_directions(k: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..k {
        for s in [1.0, -1.0] {
            let mut d = vec![0.0; k];
            d[i] = s;
            dirs.push(d);
        }
    }
    for i in 0..k {
        for j in i + 1..k {
            for s in [1.0, -1.0] {
                let mut d = vec![0.0; k];
                d[i] = s;
                d[j] = -s;
                dirs.push(d);
            }
        }
    }
    dirs
}

/// Primal `sup {Σ q_k v_k : q ∈ Δ, Σ term_k(q_k) ≤ r}` where the terms are
/// `w_k f(q_k / w_k)` for atoms and `q·f^∞` for the escape coordinate.
struct FPrimal<'a> {
    spec: &'a DivergenceSpec,
    /// Reference weights; `None` marks the escape coordinate.
    w: Vec<Option<f64>>,
    v: Vec<f64>,
    r: f64,
}

impl FPrimal<'_> {
    fn term(&self, k: usize, q: f64) -> f64 {
        match self.w[k] {
            Some(w) => self.spec.atom_term(w, q),
            None => q * self.spec.f_inf(),
        }
    }

    /// Optimal mass on `a` when the coordinates in `rest` are fixed to `y`
    /// and the remaining mass is split between `a` (larger loss) and `b`.
    fn pair_split(&self, a: usize, b: usize, rest: &[usize], y: &[f64]) -> Option<(f64, f64)> {
        if y.iter().any(|&t| t < 0.0) {
            return None;
        }
        let m = 1.0 - y.iter().sum::<f64>();
        if m < -1e-15 {
            return None;
        }
        let m = m.max(0.0);
        let mut base_div = 0.0;
        let mut base_val = 0.0;
        for (&k, &q) in rest.iter().zip(y) {
            base_div += self.term(k, q);
            base_val += q * self.v[k];
        }
        if !(base_div <= self.r) {
            return None;
        }
        let div = |t: f64| base_div + self.term(a, t) + self.term(b, m - t);
        let t = if div(m) <= self.r {
            m
        } else {
            let (t0, d0) = golden_min(div, 0.0, m, 120, 1e-13);
            if !(d0 <= self.r) {
                return None;
            }
            bisect_last_true(|t| div(t) <= self.r, t0, m, 80)
        };
        Some((base_val + t * self.v[a] + (m - t) * self.v[b], t))
    }

    /// Value of the largest feasible mixture `(1 - θ) P̂ + θ q`.
    fn radial_value(&self, q: &[f64]) -> f64 {
        if q.iter().any(|&t| t < 0.0) {
            return f64::NEG_INFINITY;
        }
        let p = |theta: f64, k: usize| (1.0 - theta) * self.w[k].unwrap_or(0.0) + theta * q[k];
        let div = |theta: f64| (0..q.len()).map(|k| self.term(k, p(theta, k))).sum::<f64>();
        let theta = if div(1.0) <= self.r { 1.0 } else { bisect_last_true(|t| div(t) <= self.r, 0.0, 1.0, 100) };
        (0..q.len()).map(|k| p(theta, k) * self.v[k]).sum()
    }

    fn solve(&self, h: f64) -> Result<f64> {
        let n = self.v.len();
        if n == 1 {
            return Ok(self.v[0]);
        }
        let a = (0..n).fold(0, |i, j| if self.v[j] > self.v[i] || (self.v[j] == self.v[i] && self.w[i].is_none()) { j } else { i });
        let b = (0..n).filter(|&j| j != a).fold(usize::MAX, |i, j| if i == usize::MAX || self.v[j] < self.v[i] { j } else { i });
        let rest: Vec<usize> = (0..n).filter(|&j| j != a && j != b).collect();
        let k = rest.len();
        // P = P̂ is always feasible
        let reference: Vec<f64> = rest.iter().map(|&j| self.w[j].unwrap_or(0.0)).collect();
        let mut best_y = reference.clone();
        let mut best = self.pair_split(a, b, &rest, &reference);
        if k > 0 {
            let grid = SimplexGrid::new(k + 1, h)?;
            for p in grid.points() {
                let y = &p[..k];
                if let Some(s) = self.pair_split(a, b, &rest, y) {
                    if best.is_none_or(|b| s.0 > b.0) {
                        best = Some(s);
                        best_y = y.to_vec();
                    }
                }
            }
        }
        let Some((grid_best, t)) = best else {
            return Err(Error::Input("no feasible primal point".into()));
        };
        if k == 0 {
            return Ok(grid_best);
        }
        let mut q = vec![0.0; n];
        for (&j, &y) in rest.iter().zip(&best_y) {
            q[j] = y;
        }
        q[a] = t;
        q[b] = (1.0 - best_y.iter().sum::<f64>()).max(0.0) - t;
        let dirs: Vec<Vec<f64>> = poll_directions(n).into_iter().filter(|d| d.iter().sum::<f64>().abs() < 1e-12).collect();
        let (_, v) = compass_max(|q| self.radial_value(q), q, &dirs, h, 1e-12, MAX_POLLS);
        Ok(v.max(grid_best))
    }
}

fn f_primal_value(spec: &DivergenceSpec, weights: &[f64], values: &[f64], sup: f64, r: f64, h: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::Input(format!("no feasible primal point for r = {r}")));
    }
    if r == 0.0 {
        return Ok(weights.iter().zip(values).map(|(w, v)| w * v).sum());
    }
    let mut w: Vec<Option<f64>> = Vec::new();
    let mut v = Vec::new();
    for (&wi, &vi) in weights.iter().zip(values) {
        if wi > 0.0 {
            w.push(Some(wi));
            v.push(vi);
        }
    }
    if spec.f_inf().is_finite() {
        w.push(None);
        v.push(sup);
    }
    FPrimal { spec, w, v, r }.solve(h)
}

fn check_atoms(p: &DiscreteDistribution, what: &str) -> Result<()> {
    let n = p.weights().iter().filter(|w| **w > 0.0).count();
    if n > MAX_ORACLE_ATOMS {
        return Err(Error::Config(format!("{what} has {n} atoms; oracles handle at most {MAX_ORACLE_ATOMS}")));
    }
    Ok(())
}

/// `sup {E_P ℓ(x, ·) : D_f(P̂, P) ≤ r}` by grid search with step `h` on the
/// free coordinates followed by compass refinement. Mass outside the
/// support of `P̂` is represented by one escape coordinate carrying
/// `ℓ^∞(x)` at divergence rate `f^∞` (absent when `f^∞ = +∞`).
pub fn primal_f_dro(
    loss: &LossOracle,
    x: f64,
    p_hat: &DiscreteDistribution,
    spec: &DivergenceSpec,
    r: f64,
    h: f64,
) -> Result<f64> {
    check_atoms(p_hat, "P̂")?;
    let values: Vec<f64> = p_hat.support().iter().map(|p| loss.eval(x, p)).collect();
    f_primal_value(spec, p_hat.weights(), &values, loss.sup_loss(x), r, h)
}

/// The same primal without the escape coordinate (worst cases supported on
/// the atoms of `P̂`).
pub fn primal_f_dro_on_support(
    loss: &LossOracle,
    x: f64,
    p_hat: &DiscreteDistribution,
    spec: &DivergenceSpec,
    r: f64,
    h: f64,
) -> Result<f64> {
    check_atoms(p_hat, "P̂")?;
    let mut w = Vec::new();
    let mut v = Vec::new();
    for (p, &wi) in p_hat.support().iter().zip(p_hat.weights()) {
        if wi > 0.0 {
            w.push(Some(wi));
            v.push(loss.eval(x, p));
        }
    }
    if r == 0.0 {
        return Ok(w.iter().zip(&v).map(|(a, b)| a.unwrap() * b).sum());
    }
    FPrimal { spec, w, v, r }.solve(h)
}

/// `sup {E_P ℓ(x, ·) : W_d(P̂, P) ≤ ε}` over `P` supported on the atoms of
/// `P̂` and `candidates` (the event set's points when `None`), solved as one
/// LP over couplings.
pub fn primal_ot_dro(
    loss: &LossOracle,
    x: f64,
    p_hat: &DiscreteDistribution,
    cost: &TransportCost,
    epsilon: f64,
    candidates: Option<&[Vec<f64>]>,
) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return Err(Error::Config(format!("transport budget must be ≥ 0, got {epsilon}")));
    }
    let mut targets: Vec<Vec<f64>> = p_hat.support().to_vec();
    for c in candidates.unwrap_or(loss.grid()) {
        if !targets.iter().any(|t| t.iter().zip(c).all(|(a, b)| (a - b).abs() <= 1e-12)) {
            targets.push(c.clone());
        }
    }
    let atoms: Vec<(&Vec<f64>, f64)> = p_hat.support().iter().zip(p_hat.weights().iter().copied()).filter(|(_, w)| *w > 0.0).collect();
    let (n, m) = (atoms.len(), targets.len());
    if n * m > MAX_LP_VARIABLES.min(transport::MAX_ARCS) {
        return Err(Error::Resource(format!("coupling LP with {n}×{m} variables exceeds {MAX_LP_VARIABLES}")));
    }
    let lvals: Vec<f64> = targets.iter().map(|t| loss.eval(x, t)).collect();
    let mut obj = Vec::with_capacity(n * m);
    for _ in 0..n {
        obj.extend_from_slice(&lvals);
    }
    let mut lp = LinearProgram::maximize(obj);
    for (i, (_, w)) in atoms.iter().enumerate() {
        let mut row = vec![0.0; n * m];
        row[i * m..(i + 1) * m].iter_mut().for_each(|c| *c = 1.0);
        lp.constraint(row, Relation::Eq, *w);
    }
    let mut budget = Vec::with_capacity(n * m);
    for (p, _) in &atoms {
        for t in &targets {
            budget.push(cost.eval(p, t));
        }
    }
    lp.constraint(budget, Relation::Le, epsilon);
    Ok(lp.solve()?.value)
}

/// `sup {E_P ℓ : ∃Q on q_grid, dist(P̂, Q) ≤ ε, D_f(Q, P) ≤ r}`: a grid over
/// `Q` with step `h`, compass refinement, and [`primal_f_dro`] inside.
#[allow(clippy::too_many_arguments)]
pub fn primal_smoothed(
    loss: &LossOracle,
    x: f64,
    p_hat: &DiscreteDistribution,
    spec: &DivergenceSpec,
    cost: &TransportCost,
    r: f64,
    epsilon: f64,
    q_grid: &[Vec<f64>],
    h: f64,
) -> Result<f64> {
    check_atoms(p_hat, "P̂")?;
    if epsilon == 0.0 {
        return primal_f_dro(loss, x, p_hat, spec, r, h.min(1e-2));
    }
    let mut grid: Vec<Vec<f64>> = p_hat.support().to_vec();
    for q in q_grid {
        if !grid.iter().any(|t| t.iter().zip(q).all(|(a, b)| (a - b).abs() <= 1e-12)) {
            grid.push(q.clone());
        }
    }
    let m = grid.len();
    if m > MAX_ORACLE_ATOMS {
        return Err(Error::Config(format!("Q grid has {m} points; oracles handle at most {MAX_ORACLE_ATOMS}")));
    }
    let values: Vec<f64> = grid.iter().map(|p| loss.eval(x, p)).collect();
    let sup = loss.sup_loss(x);
    let reference: Vec<f64> = grid.iter().map(|p| p_hat.mass_at(p)).collect();
    let within = |q: &[f64]| -> bool {
        if q.iter().any(|&t| t < -1e-15) {
            return false;
        }
        let qc: Vec<f64> = q.iter().map(|t| t.max(0.0)).collect();
        let total: f64 = qc.iter().sum();
        match transport::solve(p_hat.weights(), &qc.iter().map(|t| t / total).collect::<Vec<_>>(), |i, j| {
            cost.eval(&p_hat.support()[i], &grid[j])
        }) {
            Ok(plan) => plan.cost <= epsilon + 1e-12,
            Err(_) => false,
        }
    };
    let value_at = |q: &[f64], step: f64| -> f64 {
        if !within(q) {
            return f64::NEG_INFINITY;
        }
        let qc: Vec<f64> = q.iter().map(|t| t.max(0.0)).collect();
        f_primal_value(spec, &qc, &values, sup, r, step).unwrap_or(f64::NEG_INFINITY)
    };
    let coarse = 0.05f64.max(h);
    let mut best_q = reference.clone();
    let mut best = value_at(&reference, coarse);
    for q in SimplexGrid::new(m, h)?.points() {
        let v = value_at(&q, coarse);
        if v > best {
            best = v;
            best_q = q;
        }
    }
    // polish in the full space; the transfer directions keep Σq = 1
    let dirs: Vec<Vec<f64>> = poll_directions(m).into_iter().filter(|d| d.iter().sum::<f64>().abs() < 0.5).collect();
    let fine = 1e-2;
    let (_, v) = compass_max(|q| value_at(q, fine), best_q, &dirs, h, 1e-7, usize::MAX);
    Ok(v.max(best))
}

/// The smoothed empirical predictor with LP smoothing at level `ε`:
/// `sup {c̃_{f,r}(x, Q) : LP(P̂, Q) ≤ ε}` where `c̃` is the empirical
/// f-divergence predictor.
///
/// The search runs over `Q = Σ_i (w_i − t_i) δ_{b_i} + (Σ t_i) δ_{σ*}` with
/// `b_i` the worst point of Σ within distance `ε` of atom `i`, `σ*` a global
/// worst point, and `0 ≤ t_i ≤ w_i`, `Σ t_i ≤ ε`.
pub fn empirical_restricted_lp(
    loss: &LossOracle,
    x: f64,
    p_hat: &DiscreteDistribution,
    spec: &DivergenceSpec,
    r: f64,
    epsilon: f64,
    solver_tol: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("LP smoothing level must be > 0, got {epsilon}")));
    }
    let domain = loss.grid();
    let argmax = |pts: &mut dyn Iterator<Item = &Vec<f64>>| -> Vec<f64> {
        let mut best: Option<(&Vec<f64>, f64)> = None;
        for p in pts {
            let v = loss.eval(x, p);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((p, v));
            }
        }
        best.unwrap().0.clone()
    };
    let atoms: Vec<(Vec<f64>, f64)> = p_hat
        .support()
        .iter()
        .zip(p_hat.weights())
        .filter(|(_, w)| **w > 0.0)
        .map(|(p, w)| (p.clone(), *w))
        .collect();
    let sigma = argmax(&mut domain.iter());
    let b: Vec<Vec<f64>> = atoms
        .iter()
        .map(|(p, _)| {
            let near = domain
                .iter()
                .filter(|q| q.iter().zip(p).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt() <= epsilon);
            argmax(&mut near.chain(std::iter::once(p)))
        })
        .collect();
    let n = atoms.len();
    let q_of = |t: &[f64]| -> Option<DiscreteDistribution> {
        let mut support = Vec::with_capacity(n + 1);
        let mut weights = Vec::with_capacity(n + 1);
        let mut moved = 0.0;
        for i in 0..n {
            let ti = t[i];
            if ti < 0.0 || ti > atoms[i].1 {
                return None;
            }
            moved += ti;
            support.push(b[i].clone());
            weights.push(atoms[i].1 - ti);
        }
        if moved > epsilon + 1e-15 {
            return None;
        }
        support.push(sigma.clone());
        weights.push(moved);
        DiscreteDistribution::new(support, weights).ok()
    };
    let objective = |t: &[f64]| -> f64 {
        match q_of(t) {
            Some(q) => predictor::empirical_f_dro(loss, x, &q, spec, r, solver_tol).map_or(f64::NEG_INFINITY, |s| s.value),
            None => f64::NEG_INFINITY,
        }
    };
    let dirs = poll_directions(n);
    let mut starts: Vec<Vec<f64>> = vec![vec![0.0; n]];
    // greedy fills in order of increasing loss at b_i
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| loss.eval(x, &b[i]).partial_cmp(&loss.eval(x, &b[j])).unwrap());
    let mut greedy = vec![0.0; n];
    let mut left = epsilon;
    for &i in &order {
        let take = atoms[i].1.min(left);
        greedy[i] = take;
        left -= take;
    }
    starts.push(greedy);
    for i in 0..n {
        let mut t = vec![0.0; n];
        t[i] = atoms[i].1.min(epsilon);
        starts.push(t);
    }
    let mut best = f64::NEG_INFINITY;
    for s in starts {
        let (_, v) = compass_max(&objective, s, &dirs, epsilon.min(0.5) / 2.0, 1e-9, usize::MAX);
        best = best.max(v);
    }
    Ok(best)
}
