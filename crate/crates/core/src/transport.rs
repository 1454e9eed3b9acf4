//! Exact balanced transportation problem by successive shortest paths.
//!
//! Sources carry the masses of the first distribution, sinks those of the
//! second. Every source–sink arc is uncapacitated; reverse residual arcs carry
//! the current flow. Dijkstra with node potentials keeps reduced costs
//! nonnegative, so each augmentation follows a cheapest residual path.

use crate::error::{Error, Result};

/// Maximum number of arcs (`n·m`) accepted by the coupling solvers.
pub const MAX_ARCS: usize = 1_000_000;

const MASS_EPS: f64 = 1e-15;

#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub cost: f64,
    /// Row-major `n × m` coupling.
    pub flow: Vec<f64>,
    pub augmentations: usize,
}

/// Solves `min Σ c_ij γ_ij` over couplings of `supply` and `demand`.
/// `cost(i, j)` must be nonnegative. Total masses must agree up to 1e−9.
pub fn solve<C: Fn(usize, usize) -> f64>(supply: &[f64], demand: &[f64], cost: C) -> Result<TransportPlan> {
    let n = supply.len();
    let m = demand.len();
    if n == 0 || m == 0 {
        return Err(Error::Input("transport problem with an empty side".into()));
    }
    if n.saturating_mul(m) > MAX_ARCS {
        return Err(Error::Resource(format!("coupling of size {n}×{m} exceeds {MAX_ARCS} arcs")));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total_s - total_d).abs() > 1e-9 {
        return Err(Error::Input(format!("unbalanced transport: {total_s} vs {total_d}")));
    }
    let c: Vec<f64> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| cost(i, j))
        .collect();
    if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Input("transport costs must be finite and nonnegative".into()));
    }
    // scale so that both sides sum to the same value exactly
    let mut sup: Vec<f64> = supply.to_vec();
    let mut dem: Vec<f64> = demand.iter().map(|d| d * total_s / total_d).collect();
    let mut flow = vec![0.0; n * m];
    // potentials: sources 0..n, sinks n..n+m
    let mut pot = vec![0.0; n + m];
    let mut dist = vec![0.0; n + m];
    let mut done = vec![false; n + m];
    let mut parent = vec![usize::MAX; n + m];
    let mut augmentations = 0usize;
    let tiny = MASS_EPS * total_s.max(1.0);

    loop {
        let remaining: f64 = sup.iter().filter(|&&s| s > tiny).sum();
        if remaining <= tiny * (n as f64) {
            break;
        }
        // multi-source Dijkstra on the residual graph
        for v in 0..n + m {
            dist[v] = f64::INFINITY;
            done[v] = false;
            parent[v] = usize::MAX;
        }
        for i in 0..n {
            if sup[i] > tiny {
                dist[i] = 0.0;
            }
        }
        let mut target = usize::MAX;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..n + m {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= n && dem[u - n] > tiny {
                target = u;
                break;
            }
            if u < n {
                let i = u;
                for j in 0..m {
                    let v = n + j;
                    if done[v] {
                        continue;
                    }
                    let rc = (c[i * m + j] + pot[i] - pot[v]).max(0.0);
                    let nd = dist[u] + rc;
                    if nd < dist[v] {
                        dist[v] = nd;
                        parent[v] = i;
                    }
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if done[i] || flow[i * m + j] <= tiny {
                        continue;
                    }
                    let rc = (-c[i * m + j] + pot[u] - pot[i]).max(0.0);
                    let nd = dist[u] + rc;
                    if nd < dist[i] {
                        dist[i] = nd;
                        parent[i] = u;
                    }
                }
            }
        }
        if target == usize::MAX {
            return Err(Error::Solver("transport: no augmenting path with supply left".into()));
        }
        let dt = dist[target];
        for v in 0..n + m {
            pot[v] += if done[v] { dist[v] } else { dt };
        }
        // bottleneck along the path
        let mut amount = dem[target - n];
        let mut v = target;
        let mut source = usize::MAX;
        while v != usize::MAX {
            if v >= n {
                let i = parent[v];
                v = i;
            } else {
                let p = parent[v];
                if p == usize::MAX {
                    source = v;
                    break;
                }
                let j = p - n;
                amount = amount.min(flow[v * m + j]);
                v = p;
            }
        }
        amount = amount.min(sup[source]);
        // apply
        let mut v = target;
        while v != source {
            if v >= n {
                let i = parent[v];
                flow[i * m + (v - n)] += amount;
                v = i;
            } else {
                let p = parent[v];
                let j = p - n;
                flow[v * m + j] -= amount;
                if flow[v * m + j] < tiny {
                    flow[v * m + j] = 0.0;
                }
                v = p;
            }
        }
        sup[source] -= amount;
        dem[target - n] -= amount;
        augmentations += 1;
        if augmentations > 50 * (n + m) * (n + m) + 1000 {
            return Err(Error::Solver("transport: augmentation limit reached".into()));
        }
    }
    let cost = flow.iter().zip(&c).map(|(f, c)| f * c).sum();
    Ok(TransportPlan {
        cost,
        flow,
        augmentations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{LinearProgram, Relation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn via_simplex(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
        let (n, m) = (a.len(), b.len());
        let mut lp = LinearProgram::maximize(c.iter().map(|v| -v).collect());
        for i in 0..n {
            let mut row = vec![0.0; n * m];
            row[i * m..(i + 1) * m].iter_mut().for_each(|v| *v = 1.0);
            lp.constraint(row, Relation::Eq, a[i]);
        }
        for j in 0..m {
            let mut row = vec![0.0; n * m];
            (0..n).for_each(|i| row[i * m + j] = 1.0);
            lp.constraint(row, Relation::Eq, b[j]);
        }
        -lp.solve().unwrap().value
    }

    fn simplex_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }

    #[test]
    fn agrees_with_simplex_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..60 {
            let n = rng.random_range(1..6);
            let m = rng.random_range(1..6);
            let a = simplex_point(&mut rng, n);
            let b = simplex_point(&mut rng, m);
            let indicator = rng.random_bool(0.3);
            let c: Vec<f64> = (0..n * m)
                .map(|_| if indicator { rng.random_range(0..2) as f64 } else { rng.random::<f64>() * 3.0 })
                .collect();
            let plan = solve(&a, &b, |i, j| c[i * m + j]).unwrap();
            let reference = via_simplex(&a, &b, &c);
            assert!((plan.cost - reference).abs() < 1e-10, "{} vs {}", plan.cost, reference);
            for i in 0..n {
                let row: f64 = plan.flow[i * m..(i + 1) * m].iter().sum();
                assert!((row - a[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn point_masses() {
        let p = solve(&[1.0], &[1.0], |_, _| 2.5).unwrap();
        assert_eq!(p.cost, 2.5);
        let p = solve(&[0.5, 0.5], &[1.0], |i, _| i as f64).unwrap();
        assert!((p.cost - 0.5).abs() < 1e-15);
    }

    #[test]
    fn size_cap_is_resource_error() {
        let a = vec![1.0 / 1001.0; 1001];
        let b = vec![1.0 / 1000.0; 1000];
        assert!(matches!(solve(&a, &b, |_, _| 0.0), Err(Error::Resource(_))));
    }
}
