//! Exact rational arithmetic for model rates and timesteps.
//!
//! Rates in model files are decimal strings; we keep them as exact
//! numerator/denominator pairs until probability evaluation, so that
//! serialization round-trips and golden files stay deterministic.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rational {
    num: i128,
    den: i128, // always > 0, gcd(num, den) == 1
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.abs()
}

impl Rational {
    pub fn new(num: i128, den: i128) -> Self {
        assert!(den != 0, "zero denominator");
        let sign = if den < 0 { -1 } else { 1 };
        let g = gcd(num, den).max(1);
        Rational {
            num: sign * num / g,
            den: sign * den / g,
        }
    }

    pub fn from_int(n: i128) -> Self {
        Rational { num: n, den: 1 }
    }

    pub fn zero() -> Self {
        Rational { num: 0, den: 1 }
    }

    pub fn num(&self) -> i128 {
        self.num
    }

    pub fn den(&self) -> i128 {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_positive(&self) -> bool {
        self.num > 0
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    /// Parses a plain decimal string such as `10`, `0.3` or `.5`.
    pub fn parse_decimal(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.is_empty() {
            return None;
        }
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return None;
        }
        if frac_part.len() > 30 {
            return None;
        }
        let mut num: i128 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().ok()?
        };
        let mut den: i128 = 1;
        for c in frac_part.chars() {
            num = num.checked_mul(10)?.checked_add((c as u8 - b'0') as i128)?;
            den = den.checked_mul(10)?;
        }
        Some(Rational::new(num, den))
    }

    /// Renders as a decimal string when the denominator is of the form
    /// 2^a * 5^b; otherwise falls back to `num/den`.
    pub fn to_decimal_string(&self) -> String {
        let mut d = self.den;
        let mut twos = 0u32;
        let mut fives = 0u32;
        while d % 2 == 0 {
            d /= 2;
            twos += 1;
        }
        while d % 5 == 0 {
            d /= 5;
            fives += 1;
        }
        if d != 1 {
            return format!("{}/{}", self.num, self.den);
        }
        // scale to denominator 10^k
        let k = twos.max(fives);
        let mut scaled = self.num;
        for _ in 0..(k - twos) {
            scaled *= 2;
        }
        for _ in 0..(k - fives) {
            scaled *= 5;
        }
        if k == 0 {
            return scaled.to_string();
        }
        let pow10 = 10i128.pow(k);
        let int = scaled / pow10;
        let frac = (scaled % pow10).abs();
        let frac_str = format!("{:0width$}", frac, width = k as usize);
        let frac_str = frac_str.trim_end_matches('0');
        if frac_str.is_empty() {
            int.to_string()
        } else {
            format!("{}.{}", int, frac_str)
        }
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_decimal_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print_round_trip() {
        for s in ["0.2", "0.3", "1", "10", "0.04166666666666666", "0.000925"] {
            let r = Rational::parse_decimal(s).unwrap();
            assert_eq!(r.to_decimal_string(), s);
        }
    }

    #[test]
    fn reduces() {
        let r = Rational::new(5, 10);
        assert_eq!((r.num(), r.den()), (1, 2));
        assert_eq!(r.to_decimal_string(), "0.5");
    }

    #[test]
    fn rejects_garbage() {
        assert!(Rational::parse_decimal("").is_none());
        assert!(Rational::parse_decimal(".").is_none());
        assert!(Rational::parse_decimal("1.2.3").is_none());
        assert!(Rational::parse_decimal("-1").is_none());
    }

    #[test]
    fn non_decadic_denominator_falls_back() {
        let r = Rational::new(1, 3);
        assert_eq!(r.to_decimal_string(), "1/3");
    }
}
