//! Text serialization of reals with 9 significant digits.

/// Formats `v` with 9 significant digits in the shortest scientific form,
/// e.g. `0.5 -> "5e-1"`, `0.123456789 -> "1.23456789e-1"`.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{v:.8e}");
    let (mantissa, exp) = s.split_once('e').expect("scientific format");
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    if exp == "0" {
        mantissa.to_string()
    } else {
        format!("{mantissa}e{exp}")
    }
}

/// Rounds `v` to the nearest double of its 9-significant-digit decimal, so
/// that `fmt_sig9` followed by parsing returns exactly the same value.
pub fn quantize9(v: f64) -> f64 {
    fmt_sig9(v).parse().unwrap_or(v)
}
