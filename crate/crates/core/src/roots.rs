//! Bracketed scalar root finding (Brent's method).

/// Find a root of `f` in `[xa, xb]`, which must bracket a sign change.
///
/// Follows the classic inverse-quadratic/secant/bisection scheme; returns
/// `None` if the interval does not bracket a root. Tolerances follow the
/// scipy convention: the interval is shrunk until its half-width is below
/// `xtol + rtol * |x|`.
pub(crate) fn brent<F>(f: F, xa: f64, xb: f64, xtol: f64, rtol: f64, max_iter: usize) -> Option<f64>
where
    F: Fn(f64) -> f64,
{
    let mut xpre = xa;
    let mut xcur = xb;
    let mut fpre = f(xpre);
    let mut fcur = f(xcur);

    if fpre == 0.0 {
        return Some(xpre);
    }
    if fcur == 0.0 {
        return Some(xcur);
    }
    if fpre * fcur > 0.0 {
        return None;
    }

    let mut xblk = 0.0;
    let mut fblk = 0.0;
    let mut spre = 0.0;
    let mut scur = 0.0;

    for _ in 0..max_iter {
        if fpre * fcur < 0.0 {
            xblk = xpre;
            fblk = fpre;
            spre = xcur - xpre;
            scur = spre;
        }
        if fblk.abs() < fcur.abs() {
            xpre = xcur;
            xcur = xblk;
            xblk = xpre;
            fpre = fcur;
            fcur = fblk;
            fblk = fpre;
        }

        let delta = (xtol + rtol * xcur.abs()) / 2.0;
        let sbis = (xblk - xcur) / 2.0;
        if fcur == 0.0 || sbis.abs() < delta {
            return Some(xcur);
        }

        if spre.abs() > delta && fcur.abs() < fpre.abs() {
            let stry = if xpre == xblk {
                // secant
                -fcur * (xcur - xpre) / (fcur - fpre)
            } else {
                // inverse quadratic interpolation
                let dpre = (fpre - fcur) / (xpre - xcur);
                let dblk = (fblk - fcur) / (xblk - xcur);
                -fcur * (fblk * dblk - fpre * dpre) / (dblk * dpre * (fblk - fpre))
            };
            if 2.0 * stry.abs() < spre.abs().min(3.0 * sbis.abs() - delta) {
                spre = scur;
                scur = stry;
            } else {
                spre = sbis;
                scur = sbis;
            }
        } else {
            spre = sbis;
            scur = sbis;
        }

        xpre = xcur;
        fpre = fcur;
        if scur.abs() > delta {
            xcur += scur;
        } else {
            xcur += if sbis > 0.0 { delta } else { -delta };
        }
        fcur = f(xcur);
    }
    Some(xcur)
}

/// Bracket the root of an increasing function on the positive axis by
/// growing or shrinking from `guess` in factors of 4, staying in `[min, max]`.
pub(crate) fn expand_bracket<F>(f: F, guess: f64, min: f64, max: f64) -> Option<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    debug_assert!(guess > 0.0 && min > 0.0 && min <= max);
    let g = guess.clamp(min, max);
    let fg = f(g);
    if fg == 0.0 {
        return Some((g, g));
    }
    if fg > 0.0 {
        let mut lo = g;
        for _ in 0..600 {
            lo /= 4.0;
            if lo < min {
                return None;
            }
            if f(lo) <= 0.0 {
                return Some((lo, g));
            }
        }
    } else {
        let mut hi = g;
        for _ in 0..600 {
            hi *= 4.0;
            if hi > max {
                return None;
            }
            if f(hi) >= 0.0 {
                return Some((g, hi));
            }
        }
    }
    None
}
