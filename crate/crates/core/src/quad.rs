//! Adaptive Simpson quadrature.

const MAX_DEPTH: u32 = 40;

/// `∫_a^b f` to relative tolerance `rtol`, with `atol` as an absolute
/// floor for integrals near zero. Errors from `f` are passed through.
pub fn adaptive_simpson<E>(
    f: &mut dyn FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    rtol: f64,
    atol: f64,
) -> Result<f64, E> {
    if a == b {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a)?, f(m)?, f(b)?);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // A coarse first pass fixes the scale used by the relative tolerance.
    let scale = whole.abs();
    let tol = (rtol * scale).max(atol);
    recurse(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn recurse<E>(
    f: &mut dyn FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, E> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm)?, f(rm)?);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    Ok(recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Composite Simpson rule on an odd number of equally spaced samples.
pub fn simpson_uniform(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "need an odd number of samples");
    let mut odd = Vec::with_capacity(n / 2);
    let mut even = Vec::with_capacity(n / 2);
    for (k, v) in values.iter().enumerate().take(n - 1).skip(1) {
        if k % 2 == 1 {
            odd.push(*v);
        } else {
            even.push(*v);
        }
    }
    let s = values[0]
        + values[n - 1]
        + 4.0 * crate::stats::pairwise_sum(&odd)
        + 2.0 * crate::stats::pairwise_sum(&even);
    s * h / 3.0
}
