//! C-style `%.<p>g` formatting of floats.

/// Formats `v` like C's `printf("%.*g", precision, v)`. Non-finite values
/// print as `nan`, `inf` or `-inf`.
pub fn format_g(v: f64, precision: usize) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let p = precision.max(1);
    // Rounded scientific form decides the exponent, as C does.
    let sci = format!("{:.*e}", p - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa), sign, exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `exp(y)` in `%.12g` style without overflow or underflow: the power of
/// ten is taken from `y / ln 10` directly.
pub fn format_exp(y: f64) -> String {
    if y.abs() < 700.0 {
        return format_g(y.exp(), 12);
    }
    let ln10 = std::f64::consts::LN_10;
    let mut k = (y / ln10).floor();
    let mut m = (y - k * ln10).exp();
    // Round the mantissa first so 9.9999999999995 carries into the exponent.
    let rounded: f64 = format!("{m:.11}").parse().expect("decimal");
    if rounded >= 10.0 {
        m /= 10.0;
        k += 1.0;
    }
    let sign = if k < 0.0 { '-' } else { '+' };
    format!("{}e{}{:02}", trim_zeros(&format!("{m:.11}")), sign, k.abs() as i64)
}
