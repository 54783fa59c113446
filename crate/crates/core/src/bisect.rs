/// Result of a bracketed bisection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bisection {
    pub root: f64,
    pub iterations: usize,
    pub width: f64,
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
///
/// Stops when the bracket is narrower than `width_tol` or after `max_iter`
/// halvings. The caller guarantees `f(lo)` and `f(hi)` have opposite signs
/// (or one of them is zero).
pub fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, width_tol: f64, max_iter: usize) -> Bisection {
    let mut flo = f(lo);
    let mut iterations = 0;
    while hi - lo > width_tol && iterations < max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        iterations += 1;
        if fm == 0.0 {
            return Bisection { root: mid, iterations, width: 0.0 };
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Bisection { root: 0.5 * (lo + hi), iterations, width: hi - lo }
}
