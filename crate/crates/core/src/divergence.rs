//! f-divergence generators, their conjugates and the built-in catalogue.
//!
//! Every generator `f` is convex on `[0, ∞)` with `f(1) = 0`. The conjugate is
//! taken over the nonnegative half-line, `f*(s) = sup_{t ≥ 0} (s·t − f(t))`,
//! and `f^∞ = lim_{u→∞} f(u)/u` is the recession constant. Infinite values are
//! plain `f64::INFINITY`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

const LN_2: f64 = std::f64::consts::LN_2;

/// Closed-form generators. `Neyman` and `LeCamAdjoint` only appear as adjoints
/// of Pearson χ² and Le Cam; they are not part of the named catalogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Kl,
    Burg,
    PearsonChi2,
    TotalVariation,
    SquaredHellinger,
    LeCam,
    JensenShannon,
    Neyman,
    LeCamAdjoint,
}

/// Names accepted by [`builtin`], in catalogue order.
pub const CATALOGUE: [&str; 7] = [
    "kl",
    "burg",
    "pearson-chi2",
    "total-variation",
    "squared-hellinger",
    "le-cam",
    "jensen-shannon",
];

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Generator {
    Builtin(Builtin),
    Custom {
        f: ScalarFn,
        f_star: ScalarFn,
    },
}

/// A named f-divergence generator with everything the duals need.
#[derive(Clone)]
pub struct DivergenceSpec {
    name: String,
    generator: Generator,
    f_at_zero: f64,
    f_inf: f64,
}

impl fmt::Debug for DivergenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DivergenceSpec")
            .field("name", &self.name)
            .field("f_at_zero", &self.f_at_zero)
            .field("f_inf", &self.f_inf)
            .finish()
    }
}

/// Looks up a catalogue divergence by name. Short aliases (`tv`, `hellinger`,
/// `chi2`, `js`, `lecam`) are accepted as well.
pub fn builtin(name: &str) -> Result<DivergenceSpec> {
    let kind = match name.trim().to_ascii_lowercase().as_str() {
        "kl" => Builtin::Kl,
        "burg" => Builtin::Burg,
        "pearson-chi2" | "pearson" | "chi2" => Builtin::PearsonChi2,
        "total-variation" | "tv" => Builtin::TotalVariation,
        "squared-hellinger" | "hellinger" => Builtin::SquaredHellinger,
        "le-cam" | "lecam" => Builtin::LeCam,
        "jensen-shannon" | "js" => Builtin::JensenShannon,
        other => {
            return Err(Error::Config(format!(
                "unknown divergence '{other}', expected one of {}",
                CATALOGUE.join(", ")
            )))
        }
    };
    Ok(DivergenceSpec::from_builtin(kind))
}

/// All seven catalogue entries.
pub fn catalogue() -> Vec<DivergenceSpec> {
    CATALOGUE.iter().map(|n| builtin(n).unwrap()).collect()
}

impl DivergenceSpec {
    pub fn from_builtin(kind: Builtin) -> Self {
        let (name, f_at_zero, f_inf) = match kind {
            Builtin::Kl => ("kl", f64::INFINITY, 1.0),
            Builtin::Burg => ("burg", 1.0, f64::INFINITY),
            Builtin::PearsonChi2 => ("pearson-chi2", f64::INFINITY, 1.0),
            Builtin::TotalVariation => ("total-variation", 0.5, 0.5),
            Builtin::SquaredHellinger => ("squared-hellinger", 1.0, 1.0),
            Builtin::LeCam => ("le-cam", 1.0, 0.0),
            Builtin::JensenShannon => ("jensen-shannon", LN_2, LN_2),
            Builtin::Neyman => ("neyman-chi2", 1.0, f64::INFINITY),
            Builtin::LeCamAdjoint => ("le-cam-adjoint", 0.0, 1.0),
        };
        DivergenceSpec {
            name: name.to_string(),
            generator: Generator::Builtin(kind),
            f_at_zero,
            f_inf,
        }
    }

    /// A user generator. Both `f` and its conjugate must be supplied; the
    /// recession constant and `f(0)` are taken as given.
    pub fn custom(
        name: &str,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f_star: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f_at_zero: f64,
        f_inf: f64,
    ) -> Result<Self> {
        if f(1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("custom divergence '{name}': f(1) must be 0")));
        }
        if f_inf.is_nan() || f_at_zero.is_nan() {
            return Err(Error::Config(format!("custom divergence '{name}': NaN constants")));
        }
        Ok(DivergenceSpec {
            name: name.to_string(),
            generator: Generator::Custom {
                f: Arc::new(f),
                f_star: Arc::new(f_star),
            },
            f_at_zero,
            f_inf,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn builtin_kind(&self) -> Option<Builtin> {
        match self.generator {
            Generator::Builtin(b) => Some(b),
            Generator::Custom { .. } => None,
        }
    }

    /// `f(0)`, possibly `+∞`.
    pub fn f_at_zero(&self) -> f64 {
        self.f_at_zero
    }

    /// Recession constant `f^∞`, possibly `+∞`.
    pub fn f_inf(&self) -> f64 {
        self.f_inf
    }

    pub fn f(&self, t: f64) -> f64 {
        if t.is_nan() || t < 0.0 {
            return f64::INFINITY;
        }
        if t == 0.0 {
            return self.f_at_zero;
        }
        if t.is_infinite() {
            return f64::INFINITY;
        }
        match &self.generator {
            Generator::Custom { f, .. } => f(t),
            Generator::Builtin(b) => match b {
                Builtin::Kl => -t.ln() + t - 1.0,
                Builtin::Burg => t * t.ln() - t + 1.0,
                Builtin::PearsonChi2 => (t - 1.0) * (t - 1.0) / t,
                Builtin::TotalVariation => 0.5 * (t - 1.0).abs(),
                Builtin::SquaredHellinger => {
                    let d = 1.0 - t.sqrt();
                    d * d
                }
                Builtin::LeCam => (1.0 - t) / (t + 1.0),
                Builtin::JensenShannon => {
                    t * (2.0 * t / (t + 1.0)).ln() + (2.0 / (t + 1.0)).ln()
                }
                Builtin::Neyman => (t - 1.0) * (t - 1.0),
                Builtin::LeCamAdjoint => t * (t - 1.0) / (t + 1.0),
            },
        }
    }

    /// Convex conjugate over `t ≥ 0`.
    pub fn f_star(&self, s: f64) -> f64 {
        if s.is_nan() {
            return f64::NAN;
        }
        if s == f64::NEG_INFINITY {
            return -self.sup_neg_f_at_infinity_slope();
        }
        if s > self.f_inf {
            return f64::INFINITY;
        }
        match &self.generator {
            Generator::Custom { f_star, .. } => f_star(s),
            Generator::Builtin(b) => match b {
                Builtin::Kl => {
                    if s < 1.0 {
                        -(-s).ln_1p()
                    } else {
                        f64::INFINITY
                    }
                }
                Builtin::Burg => s.exp_m1(),
                Builtin::PearsonChi2 => {
                    if s <= 1.0 {
                        2.0 - 2.0 * (1.0 - s).sqrt()
                    } else {
                        f64::INFINITY
                    }
                }
                Builtin::TotalVariation => {
                    if s < -0.5 {
                        -0.5
                    } else {
                        s
                    }
                }
                Builtin::SquaredHellinger => {
                    if s < 1.0 {
                        s / (1.0 - s)
                    } else {
                        f64::INFINITY
                    }
                }
                Builtin::LeCam => {
                    if s < -2.0 {
                        -1.0
                    } else {
                        1.0 - s - 2.0 * (-2.0 * s).sqrt()
                    }
                }
                Builtin::JensenShannon => {
                    if s < LN_2 {
                        -(2.0 - s.exp()).ln()
                    } else {
                        f64::INFINITY
                    }
                }
                Builtin::Neyman => {
                    if s < -2.0 {
                        -1.0
                    } else {
                        s + 0.25 * s * s
                    }
                }
                Builtin::LeCamAdjoint => {
                    if s < -1.0 {
                        0.0
                    } else if s < 1.0 {
                        3.0 - s - 2.0 * (2.0 * (1.0 - s)).sqrt()
                    } else {
                        2.0
                    }
                }
            },
        }
    }

    // f*(−∞) = −f(0) for every generator that is finite somewhere.
    fn sup_neg_f_at_infinity_slope(&self) -> f64 {
        self.f_at_zero
    }

    /// A maximizer `t ≥ 0` of `s·t − f(t)`, i.e. a subgradient of `f*` at `s`.
    /// `None` for custom generators and where the supremum is not attained.
    pub fn f_star_argmax(&self, s: f64) -> Option<f64> {
        if s.is_nan() || s > self.f_inf {
            return None;
        }
        let b = self.builtin_kind()?;
        let t = match b {
            Builtin::Kl => {
                if s >= 1.0 {
                    return None;
                }
                1.0 / (1.0 - s)
            }
            Builtin::Burg => s.exp(),
            Builtin::PearsonChi2 => {
                if s >= 1.0 {
                    return None;
                }
                1.0 / (1.0 - s).sqrt()
            }
            Builtin::TotalVariation => {
                if s < -0.5 {
                    0.0
                } else {
                    1.0
                }
            }
            Builtin::SquaredHellinger => {
                if s >= 1.0 {
                    return None;
                }
                1.0 / ((1.0 - s) * (1.0 - s))
            }
            Builtin::LeCam => {
                if s >= 0.0 {
                    return None;
                }
                if s <= -2.0 {
                    0.0
                } else {
                    (-2.0 / s).sqrt() - 1.0
                }
            }
            Builtin::JensenShannon => {
                if s >= LN_2 {
                    return None;
                }
                let e = s.exp();
                e / (2.0 - e)
            }
            Builtin::Neyman => (1.0 + 0.5 * s).max(0.0),
            Builtin::LeCamAdjoint => {
                if s >= 1.0 {
                    return None;
                }
                if s <= -1.0 {
                    0.0
                } else {
                    (2.0 / (1.0 - s)).sqrt() - 1.0
                }
            }
        };
        Some(t)
    }

    /// `λ f*(η/λ) = sup_{t≥0} (η t − λ f(t))`, with the `λ = 0` limit
    /// `0` for `η ≤ 0` and `+∞` otherwise, and `+∞` for `λ < 0`.
    pub fn perspective(&self, eta: f64, lambda: f64) -> f64 {
        if lambda < 0.0 || lambda.is_nan() || eta.is_nan() {
            return f64::INFINITY;
        }
        if lambda == 0.0 {
            return if eta <= 0.0 { 0.0 } else { f64::INFINITY };
        }
        let v = self.f_star(eta / lambda);
        if v.is_infinite() {
            v
        } else {
            lambda * v
        }
    }

    /// The adjoint generator `f°(t) = t·f(1/t)`, so that
    /// `D_f(P′, P) = D_{f°}(P, P′)`.
    pub fn adjoint(&self) -> Option<DivergenceSpec> {
        let b = self.builtin_kind()?;
        let a = match b {
            Builtin::Kl => Builtin::Burg,
            Builtin::Burg => Builtin::Kl,
            Builtin::PearsonChi2 => Builtin::Neyman,
            Builtin::Neyman => Builtin::PearsonChi2,
            Builtin::TotalVariation => Builtin::TotalVariation,
            Builtin::SquaredHellinger => Builtin::SquaredHellinger,
            Builtin::JensenShannon => Builtin::JensenShannon,
            Builtin::LeCam => Builtin::LeCamAdjoint,
            Builtin::LeCamAdjoint => Builtin::LeCam,
        };
        Some(DivergenceSpec::from_builtin(a))
    }

    /// `P′·f(P/P′)` for a single atom with the zero-mass conventions
    /// `0·f(0/0) = 0` and `0·f(p/0) = p·f^∞`.
    pub fn atom_term(&self, p_prime: f64, p: f64) -> f64 {
        if p_prime <= 0.0 {
            if p <= 0.0 {
                0.0
            } else if self.f_inf.is_infinite() {
                f64::INFINITY
            } else {
                p * self.f_inf
            }
        } else {
            let v = self.f(p / p_prime);
            if v.is_infinite() {
                v
            } else {
                p_prime * v
            }
        }
    }
}

/// Result of [`conjugate_check`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConjugateReport {
    pub divergence: String,
    pub max_gap: f64,
    pub worst_s: f64,
    pub gaps: Vec<(f64, f64)>,
    pub failures: Vec<f64>,
}

impl ConjugateReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.failures.is_empty() && self.max_gap <= tol
    }
}

/// Grid maximization of `s·t − f(t)` over `t ∈ {0, 1} ∪ logspace(1e−9, 1e6, 2000)`,
/// refined by a golden-section search in the bracket around the best grid node.
pub fn grid_conjugate(spec: &DivergenceSpec, s: f64) -> f64 {
    let n = 2000usize;
    let (lo, hi) = (1e-9f64.ln(), 1e6f64.ln());
    let mut ts: Vec<f64> = (0..n)
        .map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp())
        .collect();
    ts.push(0.0);
    ts.push(1.0);
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let obj = |t: f64| {
        let ft = spec.f(t);
        if ft.is_infinite() {
            f64::NEG_INFINITY
        } else {
            s * t - ft
        }
    };
    let mut best_i = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, &t) in ts.iter().enumerate() {
        let v = obj(t);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let a = ts[best_i.saturating_sub(1)];
    let b = ts[(best_i + 1).min(ts.len() - 1)];
    let (_, v) = crate::optim::golden_max(obj, a, b, 200, 0.0);
    best.max(v)
}

/// Compares `f*` against the grid oracle on `s_grid`. Values of `s` above
/// `f^∞` are reported as failures.
pub fn conjugate_check(spec: &DivergenceSpec, s_grid: &[f64]) -> ConjugateReport {
    let mut report = ConjugateReport {
        divergence: spec.name().to_string(),
        max_gap: 0.0,
        worst_s: f64::NAN,
        gaps: Vec::with_capacity(s_grid.len()),
        failures: Vec::new(),
    };
    for &s in s_grid {
        if !(s <= spec.f_inf()) {
            report.failures.push(s);
            continue;
        }
        let exact = spec.f_star(s);
        let oracle = grid_conjugate(spec, s);
        let gap = if exact.is_finite() && oracle.is_finite() {
            (exact - oracle).abs()
        } else if exact == oracle {
            0.0
        } else {
            f64::INFINITY
        };
        if gap > report.max_gap || report.worst_s.is_nan() {
            report.max_gap = report.max_gap.max(gap);
            report.worst_s = s;
        }
        report.gaps.push((s, gap));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kl_table_row() {
        let kl = builtin("kl").unwrap();
        assert_eq!(kl.f(1.0), 0.0);
        assert_eq!(kl.f_star(0.0), 0.0);
        assert_eq!(kl.f_inf(), 1.0);
        assert!(kl.f_at_zero().is_infinite());
        assert_relative_eq!(kl.f_star(0.5), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn burg_conjugate_at_zero() {
        assert_eq!(builtin("burg").unwrap().f_star(0.0), 0.0);
    }

    #[test]
    fn tv_above_recession_is_infinite() {
        let tv = builtin("total-variation").unwrap();
        assert!(tv.f_star(0.75).is_infinite());
        assert_eq!(tv.f_star(-1.0), -0.5);
    }

    #[test]
    fn hellinger_half() {
        let h = builtin("squared-hellinger").unwrap();
        assert_relative_eq!(h.f_star(0.5), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn unknown_name_is_config_error() {
        assert!(matches!(builtin("renyi"), Err(Error::Config(_))));
    }

    #[test]
    fn perspective_limits() {
        let kl = builtin("kl").unwrap();
        assert_eq!(kl.perspective(0.0, 1.0), 0.0);
        assert!(kl.perspective(1.0, 0.0).is_infinite());
        assert_eq!(kl.perspective(-1.0, 0.0), 0.0);
        assert!(kl.perspective(0.0, -1.0).is_infinite());
    }

    #[test]
    fn perspective_matches_grid() {
        // oracle: max of 0.5 t − 2 f(t) over a fine grid of [0, 100]
        let kl = builtin("kl").unwrap();
        let mut best = f64::NEG_INFINITY;
        for i in 1..=1_000_000 {
            let t = i as f64 * 1e-4;
            best = best.max(0.5 * t - 2.0 * kl.f(t));
        }
        assert!((kl.perspective(0.5, 2.0) - best).abs() < 1e-7);
        assert_relative_eq!(kl.perspective(0.5, 2.0), 0.575_364_144_903_561_8, epsilon = 1e-12);
    }

    #[test]
    fn table_examples_pass_grid_check() {
        let r = conjugate_check(&builtin("kl").unwrap(), &[-1.0, 0.0, 0.5, 0.9]);
        assert!(r.passed(1e-6), "{r:?}");
        let r = conjugate_check(&builtin("squared-hellinger").unwrap(), &[0.0, 0.5]);
        assert!(r.passed(1e-6), "{r:?}");
        let r = conjugate_check(&builtin("total-variation").unwrap(), &[-1.0, 0.4]);
        assert!(r.passed(1e-6), "{r:?}");
    }

    #[test]
    fn le_cam_recession_and_conjugate_branches() {
        let lc = builtin("le-cam").unwrap();
        // f(u)/u → 0
        assert!((lc.f(1e9) / 1e9).abs() < 1e-8);
        assert_eq!(lc.f_star(-3.0), -1.0);
        assert!(lc.f_star(0.1).is_infinite());
        let r = conjugate_check(&lc, &[-4.0, -2.0, -1.0, -0.5, -0.05]);
        assert!(r.passed(1e-6), "{r:?}");
    }

    #[test]
    fn adjoints_satisfy_definition() {
        for spec in catalogue() {
            let adj = spec.adjoint().unwrap();
            for &t in &[0.01, 0.3, 1.0, 2.5, 40.0] {
                let lhs = adj.f(t);
                let rhs = t * spec.f(1.0 / t);
                assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()), "{} t={t}", spec.name());
            }
            assert_eq!(adj.f_at_zero(), spec.f_inf(), "{}", spec.name());
            assert_eq!(adj.f_inf(), spec.f_at_zero(), "{}", spec.name());
            let s: Vec<f64> = (0..10).map(|i| -3.0 + 0.25 * i as f64).filter(|s| *s < adj.f_inf() - 0.05).collect();
            assert!(conjugate_check(&adj, &s).passed(1e-6), "{}", adj.name());
        }
    }

    #[test]
    fn argmax_attains_conjugate() {
        for spec in catalogue() {
            for &s in &[-2.5, -0.7, -0.1, 0.05, 0.2] {
                if s >= spec.f_inf() {
                    continue;
                }
                if let Some(t) = spec.f_star_argmax(s) {
                    let v = s * t - spec.f(t);
                    assert!((v - spec.f_star(s)).abs() < 1e-12, "{} s={s}", spec.name());
                }
            }
        }
    }
}
