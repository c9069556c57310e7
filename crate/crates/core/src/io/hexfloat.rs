//! Exact text encoding of `f64` values as C99-style hexadecimal floats.

use crate::error::{Error, Result};

/// Formats `x` as a hexfloat such as `0x1.8p+1` or `-0x1.999999999999ap-4`.
///
/// Non-finite values are written as `inf`, `-inf` or `nan`; [`parse`] rejects them.
pub fn format(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    if mant == 0 {
        return format!("{sign}0x{lead}p{e:+}");
    }
    let digits = format!("{mant:013x}");
    let digits = digits.trim_end_matches('0');
    format!("{sign}0x{lead}.{digits}p{e:+}")
}

/// Parses a hexfloat produced by [`format`] (or any finite C99 hexfloat).
pub fn parse(s: &str) -> Result<f64> {
    let bad = || Error::Format(format!("invalid hexfloat `{s}`"));
    let t = s.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let body = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")).ok_or_else(bad)?;
    let (mant_str, exp_str) = body.split_once(['p', 'P']).ok_or_else(bad)?;
    let exp: i64 = exp_str.parse().map_err(|_| bad())?;
    let (int_part, frac_part) = mant_str.split_once('.').unwrap_or((mant_str, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    let mut m: u128 = 0;
    let mut shift: i64 = 0;
    for (i, c) in int_part.chars().chain(frac_part.chars()).enumerate() {
        let d = c.to_digit(16).ok_or_else(bad)? as u128;
        if m >> 120 != 0 {
            // Excess precision: keep the magnitude, drop the digit.
            if i < int_part.len() {
                shift += 4;
            }
            continue;
        }
        m = (m << 4) | d;
        if i >= int_part.len() {
            shift -= 4;
        }
    }
    let v = ldexp(m as f64, exp + shift);
    if !v.is_finite() {
        return Err(bad());
    }
    Ok(if neg { -v } else { v })
}

fn ldexp(mut m: f64, mut e: i64) -> f64 {
    let step = 2f64.powi(600);
    let inv = 2f64.powi(-600);
    while e > 600 {
        m *= step;
        e -= 600;
    }
    while e < -600 {
        m *= inv;
        e += 600;
    }
    m * 2f64.powi(e as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_values() {
        assert_eq!(format(1.0), "0x1p+0");
        assert_eq!(format(3.0), "0x1.8p+1");
        assert_eq!(format(-0.0), "-0x0p+0");
        assert_eq!(format(0.1), "0x1.999999999999ap-4");
        assert_eq!(parse("0x1.8p+1").unwrap(), 3.0);
        assert_eq!(parse("0x1.999999999999ap-4").unwrap(), 0.1);
        assert!(parse("nan").is_err());
        assert!(parse("0x1.8").is_err());
        assert!(parse("1.5").is_err());
    }

    #[test]
    fn extremes_round_trip() {
        for x in [f64::MIN_POSITIVE, f64::MAX, f64::MIN, 5e-324, -5e-324, 2.2250738585072009e-308, 1e-310] {
            assert_eq!(parse(&format(x)).unwrap().to_bits(), x.to_bits(), "{x}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_bits(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            prop_assert_eq!(parse(&format(x)).unwrap().to_bits(), bits);
        }
    }
}
