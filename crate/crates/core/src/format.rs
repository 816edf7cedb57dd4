//! Fixed-precision number formatting for every file the engine writes.

/// Significant digits used in all numeric output.
pub const SIG_DIGITS: usize = 12;

/// Formats like C's `%.{sig}g`: fixed notation for moderate exponents,
/// scientific otherwise, trailing zeros dropped.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sig = sig.max(1);
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= sig as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

/// [`fmt_sig`] at [`SIG_DIGITS`].
pub fn fmt12(x: f64) -> String {
    fmt_sig(x, SIG_DIGITS)
}

/// Rounds to `sig` significant digits.
pub fn round_sig(x: f64, sig: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", sig.max(1) - 1, x)
        .parse()
        .expect("round-trip of formatted float")
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
