//! Scalar root finding on a sign-changing bracket.

/// Illinois (modified regula falsi) on `[lo, hi]`.
///
/// `f(lo)` and `f(hi)` must have opposite signs (or one of them be zero).
/// Stops once `|f| <= ftol` or the bracket is narrower than
/// `xtol * (1 + |x|)` or than a few ulps of `x`. Returns the iterate with
/// the smallest residual and `None` if `max_iter` runs out first.
pub(crate) fn illinois<F>(mut f: F, lo: f64, hi: f64, xtol: f64, ftol: f64, max_iter: usize) -> Option<f64>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    debug_assert!(fa.signum() != fb.signum(), "bracket does not change sign: f({a})={fa}, f({b})={fb}");

    let mut best = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
    let mut side = 0i8;
    let mut width = b - a;
    let mut stalled = 0;
    for _ in 0..max_iter {
        let mut c = (a * fb - b * fa) / (fb - fa);
        if stalled >= 2 || !(c > a && c < b) {
            c = 0.5 * (a + b);
            stalled = 0;
        }
        let fc = f(c);
        if fc.abs() < best.1.abs() {
            best = (c, fc);
        }
        if fc.abs() <= ftol {
            return Some(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        let new_width = b - a;
        if new_width <= xtol * (1.0 + c.abs()) || new_width <= 4.0 * f64::EPSILON * c.abs() {
            return Some(best.0);
        }
        if new_width > 0.5 * width {
            stalled += 1;
        } else {
            stalled = 0;
        }
        width = new_width;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_simple_roots() {
        let r = illinois(|x| x * x - 2.0, 0.0, 2.0, 1e-15, 1e-15, 200).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);

        let r = illinois(|x| (-x).exp() - 0.25, 0.0, 50.0, 1e-15, 1e-16, 200).unwrap();
        assert!((r - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn decreasing_functions_work() {
        let r = illinois(|x| 1.0 / x - 3.0, 1e-6, 10.0, 1e-15, 1e-14, 200).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn endpoint_roots_are_returned() {
        assert_eq!(illinois(|x| x, 0.0, 1.0, 1e-12, 1e-12, 10), Some(0.0));
    }

    #[test]
    fn tolerance_below_resolution_still_terminates() {
        // near -11.4 adjacent doubles are 1.8e-15 apart
        let r = illinois(|t| (t + 11.4).powi(3) * 1e3, -20.0, 0.0, 1e-16, 0.0, 200).unwrap();
        assert!((r + 11.4).abs() < 1e-5);
    }
}
