//! Bracketed root finding for monotone scalar maps.

use crate::error::{Error, Result};

/// Solves `f(x) = target` for a monotone `f` by Brent's method (bisection
/// safeguarded inverse quadratic / secant steps). The bracket `[lo, hi]` is
/// widened geometrically, within `[min_x, max_x]`, until it straddles the
/// target.
#[allow(clippy::too_many_arguments)]
pub fn solve_monotone<F>(
    mut f: F,
    target: f64,
    mut lo: f64,
    mut hi: f64,
    min_x: f64,
    max_x: f64,
    x_tol: f64,
    what: &str,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut g = |x: f64| -> Result<f64> { Ok(f(x)? - target) };
    let mut glo = g(lo)?;
    let mut ghi = g(hi)?;
    let mut widenings = 0;
    while glo.signum() == ghi.signum() && glo != 0.0 && ghi != 0.0 {
        // Decide which end to move from the direction of the map.
        let increasing = ghi > glo;
        let move_hi = (increasing && ghi < 0.0) || (!increasing && ghi > 0.0);
        let width = hi - lo;
        if move_hi {
            if hi >= max_x {
                break;
            }
            lo = hi;
            glo = ghi;
            hi = (hi + 2.0 * width).min(max_x);
            ghi = g(hi)?;
        } else {
            if lo <= min_x {
                break;
            }
            hi = lo;
            ghi = glo;
            lo = (lo - 2.0 * width).max(min_x);
            glo = g(lo)?;
        }
        widenings += 1;
        if widenings > 60 {
            break;
        }
    }
    if glo == 0.0 {
        return Ok(lo);
    }
    if ghi == 0.0 {
        return Ok(hi);
    }
    if glo.signum() == ghi.signum() {
        return Err(Error::Bracket {
            what: what.to_string(),
            lo,
            hi,
            f_lo: glo + target,
            f_hi: ghi + target,
        });
    }
    brent(g, lo, hi, glo, ghi, x_tol, what)
}

fn brent<F>(mut g: F, a0: f64, b0: f64, fa0: f64, fb0: f64, tol: f64, what: &str) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b, mut fa, mut fb) = (a0, b0, fa0, fb0);
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1 * xm.signum() };
        fb = g(b)?;
    }
    Err(Error::Convergence { what: what.to_string(), iterations: 200, last_change: (c - b).abs() })
}
