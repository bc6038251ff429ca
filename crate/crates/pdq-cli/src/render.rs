//! Text rendering of exact values.

use num::{BigInt, BigRational, Signed, Zero};

/// Reduced `num/den`.
pub fn rational(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Decimal rendering with 12 significant digits, rounded half away from zero.
pub fn decimal(r: &BigRational) -> String {
    const DIGITS: i64 = 12;
    if r.is_zero() {
        return "0".to_string();
    }
    let neg = r.is_negative();
    let a = r.abs();
    // exponent e with 10^e <= a < 10^(e+1)
    let mut e: i64 = (a.numer().to_string().len() as i64) - (a.denom().to_string().len() as i64);
    while pow10(e) > a {
        e -= 1;
    }
    while pow10(e + 1) <= a {
        e += 1;
    }
    // scaled = round(a * 10^(DIGITS-1-e))
    let shift = DIGITS - 1 - e;
    let scaled = &a * pow10(shift);
    let half = BigRational::new(1.into(), 2.into());
    let mut int = (scaled + half).floor().to_integer();
    let mut shift = shift;
    if int.to_string().len() as i64 > DIGITS {
        // rounding carried into a new digit
        int /= 10;
        shift -= 1;
    }
    let digits = int.to_string();
    let mut out = if shift <= 0 {
        format!("{digits}{}", "0".repeat((-shift) as usize))
    } else if (shift as usize) < digits.len() {
        let (i, f) = digits.split_at(digits.len() - shift as usize);
        format!("{i}.{f}")
    } else {
        format!("0.{}{digits}", "0".repeat(shift as usize - digits.len()))
    };
    if out.contains('.') {
        while out.ends_with('0') {
            out.pop();
        }
        if out.ends_with('.') {
            out.pop();
        }
    }
    if neg {
        out.insert(0, '-');
    }
    out
}

fn pow10(e: i64) -> BigRational {
    let p = num::pow(BigInt::from(10), e.unsigned_abs() as usize);
    if e >= 0 {
        BigRational::from_integer(p)
    } else {
        BigRational::new(1.into(), p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn renders_rationals() {
        assert_eq!(rational(&r(6, 16)), "3/8");
        assert_eq!(rational(&r(1, 1)), "1/1");
        assert_eq!(decimal(&r(3, 8)), "0.375");
        assert_eq!(decimal(&r(1, 3)), "0.333333333333");
        assert_eq!(decimal(&r(2, 3)), "0.666666666667");
        assert_eq!(decimal(&r(1, 1)), "1");
        assert_eq!(decimal(&r(0, 1)), "0");
        assert_eq!(decimal(&r(-1, 7)), "-0.142857142857");
        assert_eq!(decimal(&r(1, 3_000_000)), "0.000000333333333333");
        assert_eq!(decimal(&r(123_456_789_012_345, 1)), "123456789012000");
        assert_eq!(decimal(&r(9_999_999_999_999, 10_000_000_000_000)), "1");
    }
}
