//! Dense two-phase primal simplex for the small linear programs of the
//! oracle module. Bland's rule (lowest index) is used for both the entering
//! and leaving variable, which rules out cycling on degenerate vertices.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// `maximize c·x` subject to rows `a·x (≤|=|≥) b` and `x ≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    rows: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub value: f64,
    pub x: Vec<f64>,
    pub pivots: usize,
}

impl LinearProgram {
    pub fn maximize(objective: Vec<f64>) -> Self {
        LinearProgram {
            objective,
            rows: Vec::new(),
        }
    }

    pub fn constraint(&mut self, coef: Vec<f64>, rel: Relation, rhs: f64) {
        assert_eq!(coef.len(), self.objective.len());
        self.rows.push((coef, rel, rhs));
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let n = self.objective.len();
        let m = self.rows.len();
        // columns: structural n, one slack per inequality, one artificial per row
        let n_slack = self.rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_cols = n + n_slack + m;
        let width = n_cols + 1;
        let mut t = vec![0.0; (m + 1) * width];
        let mut basis = vec![0usize; m];
        let mut slack_col = n;
        for (i, (coef, rel, rhs)) in self.rows.iter().enumerate() {
            let row = &mut t[i * width..(i + 1) * width];
            row[..n].copy_from_slice(coef);
            match rel {
                Relation::Le => {
                    row[slack_col] = 1.0;
                    slack_col += 1;
                }
                Relation::Ge => {
                    row[slack_col] = -1.0;
                    slack_col += 1;
                }
                Relation::Eq => {}
            }
            row[n_cols] = *rhs;
            if *rhs < 0.0 {
                for v in row.iter_mut() {
                    *v = -*v;
                }
            }
            row[n + n_slack + i] = 1.0;
            basis[i] = n + n_slack + i;
        }
        let art_start = n + n_slack;
        let mut pivots = 0usize;

        // phase 1: maximize −Σ artificials
        {
            let obj = m * width;
            for j in 0..width {
                let mut s = 0.0;
                for i in 0..m {
                    s += t[i * width + j];
                }
                t[obj + j] = if (art_start..n_cols).contains(&j) { 0.0 } else { -s };
            }
            run_simplex(&mut t, &mut basis, m, width, n_cols, &mut pivots)?;
            let infeas = -t[obj + n_cols];
            if infeas > 1e-9 {
                return Err(Error::Input(format!("linear program infeasible (phase-1 residual {infeas:.3e})")));
            }
            // drive remaining artificials out of the basis
            for i in 0..m {
                if basis[i] >= art_start {
                    if let Some(j) = (0..art_start).find(|&j| t[i * width + j].abs() > 1e-9) {
                        pivot(&mut t, &mut basis, m, width, i, j);
                        pivots += 1;
                    }
                }
            }
        }

        // phase 2 on the original objective; artificial columns are frozen at zero
        let obj = m * width;
        for j in 0..width {
            t[obj + j] = 0.0;
        }
        for j in 0..n {
            t[obj + j] = -self.objective[j];
        }
        for i in 0..m {
            let b = basis[i];
            let cb = if b < n { self.objective[b] } else { 0.0 };
            if cb != 0.0 {
                for j in 0..width {
                    t[obj + j] += cb * t[i * width + j];
                }
            }
        }
        for i in 0..=m {
            for j in art_start..n_cols {
                if !basis.contains(&j) {
                    t[i * width + j] = 0.0;
                }
            }
        }
        run_simplex(&mut t, &mut basis, m, width, art_start, &mut pivots)?;

        let mut x = vec![0.0; n];
        for i in 0..m {
            if basis[i] < n {
                x[basis[i]] = t[i * width + n_cols].max(0.0);
            }
        }
        let value = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpSolution { value, x, pivots })
    }
}

fn pivot(t: &mut [f64], basis: &mut [usize], m: usize, width: usize, r: usize, c: usize) {
    let p = t[r * width + c];
    for j in 0..width {
        t[r * width + j] /= p;
    }
    for i in 0..=m {
        if i == r {
            continue;
        }
        let factor = t[i * width + c];
        if factor != 0.0 {
            for j in 0..width {
                t[i * width + j] -= factor * t[r * width + j];
            }
        }
    }
    basis[r] = c;
}

// Entering columns are restricted to indices below `n_enter`.
fn run_simplex(
    t: &mut [f64],
    basis: &mut [usize],
    m: usize,
    width: usize,
    n_enter: usize,
    pivots: &mut usize,
) -> Result<()> {
    let obj = m * width;
    let rhs = width - 1;
    let limit = 50_000 + 100 * width * (m + 1);
    for _ in 0..limit {
        let enter = (0..n_enter).find(|&j| t[obj + j] < -PIVOT_EPS);
        let Some(c) = enter else {
            return Ok(());
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = t[i * width + c];
            if a > PIVOT_EPS {
                let ratio = t[i * width + rhs].max(0.0) / a;
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-15 || (ratio <= lr + 1e-15 && basis[i] < basis[li]) {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((r, _)) = leave else {
            return Err(Error::Input("linear program unbounded".into()));
        };
        pivot(t, basis, m, width, r, c);
        *pivots += 1;
    }
    Err(Error::Solver("simplex pivot limit reached".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → 36 at (2, 6)
        let mut lp = LinearProgram::maximize(vec![3.0, 5.0]);
        lp.constraint(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.constraint(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.constraint(vec![3.0, 2.0], Relation::Le, 18.0);
        let s = lp.solve().unwrap();
        assert!((s.value - 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + y (as max −x − y), x + y ≥ 2, x − y = 1 → 2 at (1.5, 0.5)
        let mut lp = LinearProgram::maximize(vec![-1.0, -1.0]);
        lp.constraint(vec![1.0, 1.0], Relation::Ge, 2.0);
        lp.constraint(vec![1.0, -1.0], Relation::Eq, 1.0);
        let s = lp.solve().unwrap();
        assert!((s.value + 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_detected() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.constraint(vec![1.0], Relation::Le, 1.0);
        lp.constraint(vec![1.0], Relation::Ge, 2.0);
        assert!(lp.solve().is_err());
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::maximize(vec![1.0, 2.0]);
        lp.constraint(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.constraint(vec![2.0, 2.0], Relation::Eq, 2.0);
        let s = lp.solve().unwrap();
        assert!((s.value - 2.0).abs() < 1e-12);
    }
}
