use crate::error::{Error, Result};

const MAX_NEWTON: usize = 60;
const MAX_BISECT: usize = 200;

/// Scalar Newton iteration; falls back to bisection on `bracket` when a step
/// leaves the bracket or stops reducing `|f|`.
///
/// Returns `x` with `|f(x)| <= tol`.
pub fn newton_scalar<F, D>(f: F, df: D, x0: f64, tol: f64, bracket: Option<(f64, f64)>) -> Result<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut x = x0;
    let mut fx = f(x);
    let mut history = vec![fx.abs()];
    for _ in 0..MAX_NEWTON {
        if fx.abs() <= tol {
            return Ok(x);
        }
        let d = df(x);
        let candidate = x - fx / d;
        let inside = bracket.is_none_or(|(lo, hi)| candidate >= lo.min(hi) && candidate <= lo.max(hi));
        if !d.is_finite() || d == 0.0 || !candidate.is_finite() || !inside {
            break;
        }
        let fc = f(candidate);
        if fc.abs() >= fx.abs() && fc.abs() > tol {
            // stalled
            x = candidate;
            fx = fc;
            history.push(fx.abs());
            if history.len() > 3 && history[history.len() - 1] >= history[history.len() - 3] {
                break;
            }
            continue;
        }
        x = candidate;
        fx = fc;
        history.push(fx.abs());
    }
    if fx.abs() <= tol {
        return Ok(x);
    }
    match bracket {
        Some((lo, hi)) => bisect(&f, lo, hi, tol),
        None => Err(Error::NewtonDiverged { history }),
    }
}

/// Bisection on a sign-changing bracket; stops when `|f(mid)| <= tol` or the
/// bracket collapses to adjacent floats.
pub fn bisect<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = (lo.min(hi), lo.max(hi));
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo.abs() <= tol {
        return Ok(lo);
    }
    if fhi.abs() <= tol {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::input(format!(
            "bracket [{lo}, {hi}] does not change sign ({flo:.3e}, {fhi:.3e})"
        )));
    }
    for _ in 0..MAX_BISECT {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= tol || mid == lo || mid == hi {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_root_sqrt3_from_bracket() {
        let f = |v: f64| v * v * v / 3.0 - v;
        let df = |v: f64| v * v - 1.0;
        let root = newton_scalar(f, df, 1.0, 1e-14, Some((1.0, 2.0))).unwrap();
        assert!((root - 3f64.sqrt()).abs() <= 1e-12, "{root}");
    }

    #[test]
    fn shifted_monotone_cubic_agrees_with_bisection() {
        let f = |v: f64| v * v * v / 3.0 + 2.0 * v - 1.0;
        let oracle = bisect(f, 0.0, 1.0, 0.0).unwrap();
        let root = newton_scalar(f, |v| v * v + 2.0, 0.0, 1e-15, None).unwrap();
        assert!((root - oracle).abs() < 1e-14);
    }

    #[test]
    fn linear_function_takes_one_step() {
        let calls = std::cell::Cell::new(0);
        let f = |x: f64| {
            calls.set(calls.get() + 1);
            3.0 * x - 6.0
        };
        let root = newton_scalar(f, |_| 3.0, 10.0, 1e-12, None).unwrap();
        assert_eq!(root, 2.0);
        // initial evaluation plus the single Newton step
        assert_eq!(calls.get(), 2);
    }

    #[test]
    fn divergence_without_bracket_is_an_error() {
        // atan has a root at 0 but Newton overshoots from |x0| > 1.39
        let res = newton_scalar(f64::atan, |x| 1.0 / (1.0 + x * x), 3.0, 1e-12, None);
        assert!(matches!(res, Err(Error::NewtonDiverged { .. })));
        let rescued = newton_scalar(f64::atan, |x| 1.0 / (1.0 + x * x), 3.0, 1e-12, Some((-5.0, 4.0))).unwrap();
        assert!(rescued.abs() < 1e-12);
    }
}
