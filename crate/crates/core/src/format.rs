//! Number formatting shared by every text artifact.

/// Formats `x` the way C's `printf("%.9g", x)` does.
pub fn g9(x: f64) -> String {
    general(x, 9)
}

/// `%.<precision>g` formatting.
pub fn general(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let p = precision.max(1);
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // Round to p significant digits first; the exponent of the rounded value
    // decides between fixed and scientific notation.
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -4 || exp >= p as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Joins values with single spaces using [`g9`].
pub fn join_g9<I: IntoIterator<Item = f64>>(values: I) -> String {
    values.into_iter().map(g9).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        assert_eq!(g9(0.0), "0");
        assert_eq!(g9(1.0), "1");
        assert_eq!(g9(0.1), "0.1");
        assert_eq!(g9(1.2000000000000002), "1.2");
        assert_eq!(g9(-4.5), "-4.5");
        assert_eq!(g9(2.75), "2.75");
        assert_eq!(g9(123456789.0), "123456789");
        assert_eq!(g9(1234567890.0), "1.23456789e+09");
        assert_eq!(g9(0.0001), "0.0001");
        assert_eq!(g9(0.00001), "1e-05");
        assert_eq!(g9(std::f64::consts::PI), "3.14159265");
        assert_eq!(g9(-1.0 / 3.0), "-0.333333333");
        assert_eq!(g9(999999999.5), "1e+09");
    }
}
