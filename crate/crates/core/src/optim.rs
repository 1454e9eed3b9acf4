//! One-dimensional search primitives shared by the dual solvers.
//!
//! All routines tolerate `+∞` objective values (they compare as larger than
//! any finite value), which is how infeasible dual points are represented.

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization on `[a, b]`. Returns the best point seen,
/// including the two endpoints.
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, max_iter: usize, xtol: f64) -> (f64, f64) {
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let fa = f(a);
    let fb = f(b);
    let mut best = if fb < fa { (b, fb) } else { (a, fa) };
    if b - a <= 0.0 {
        return best;
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if b - a <= xtol * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Golden-section maximization on `[a, b]`.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, max_iter: usize, xtol: f64) -> (f64, f64) {
    let (x, v) = golden_min(|t| -f(t), a, b, max_iter, xtol);
    (x, -v)
}

/// Minimizes a convex function over `[lo, ∞)` (or all of ℝ when `lo` is
/// `None`), starting from a finite point `start`. The bracket is grown
/// geometrically until the function stops decreasing, then refined by golden
/// section.
pub fn convex_min<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: Option<f64>,
    start: f64,
    scale: f64,
    max_iter: usize,
    xtol: f64,
) -> (f64, f64) {
    let scale = if scale.is_finite() && scale > 0.0 { scale } else { 1.0 };
    let x0 = match lo {
        Some(l) => start.max(l),
        None => start,
    };
    let f0 = f(x0);
    let mut right = x0 + scale;
    let fr = f(right);
    let left;
    if fr < f0 {
        let mut prev = x0;
        let mut cur = right;
        let mut fcur = fr;
        let mut step = 2.0 * scale;
        loop {
            let next = cur + step;
            let fnext = f(next);
            if fnext < fcur && step < 1e300 {
                prev = cur;
                cur = next;
                fcur = fnext;
                step *= 2.0;
            } else {
                right = next;
                break;
            }
        }
        left = prev;
    } else {
        let mut cur = x0;
        let mut fcur = f0;
        let mut step = scale;
        loop {
            let mut next = cur - step;
            let clipped = matches!(lo, Some(l) if next <= l);
            if clipped {
                next = lo.unwrap();
            }
            let fnext = f(next);
            if fnext < fcur && !clipped && step < 1e300 {
                right = cur;
                cur = next;
                fcur = fnext;
                step *= 2.0;
            } else {
                left = next;
                break;
            }
        }
    }
    golden_min(f, left, right, max_iter, xtol)
}

/// Bisection for the largest `t ∈ [a, b]` with `pred(t)` true, assuming
/// `pred(a)` holds and the predicate is monotone (true then false).
pub fn bisect_last_true<P: FnMut(f64) -> bool>(mut pred: P, a: f64, b: f64, iters: usize) -> f64 {
    if pred(b) {
        return b;
    }
    let (mut lo, mut hi) = (a, b);
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, v) = golden_min(|t| (t - 0.3) * (t - 0.3) + 1.0, -2.0, 5.0, 200, 1e-14);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn golden_handles_infinite_region() {
        let f = |t: f64| if t < 1.0 { f64::INFINITY } else { (t - 1.5).abs() };
        let (x, _) = golden_min(f, 0.0, 4.0, 200, 1e-14);
        assert!((x - 1.5).abs() < 1e-9);
    }

    #[test]
    fn convex_min_expands_both_ways() {
        let (x, _) = convex_min(|t| (t - 1234.5).powi(2), None, 0.0, 1.0, 300, 1e-15);
        assert!((x - 1234.5).abs() < 1e-5);
        let (x, _) = convex_min(|t| (t + 77.0).powi(2), None, 0.0, 1.0, 300, 1e-15);
        assert!((x + 77.0).abs() < 1e-5);
        let (x, v) = convex_min(|t| t, Some(-3.0), 0.0, 1.0, 300, 1e-15);
        assert_eq!(x, -3.0);
        assert_eq!(v, -3.0);
    }

    #[test]
    fn bisect_boundary() {
        let t = bisect_last_true(|t| t * t <= 2.0, 0.0, 4.0, 200);
        assert!((t - 2f64.sqrt()).abs() < 1e-14);
    }
}
