//! Base-2 log-domain arithmetic.
//!
//! Posterior tail masses decay like `2^-Θ(t)` and leave the range of `f64`
//! within a few thousand channel uses, so masses are carried as `log2` values.
//! `f64::NEG_INFINITY` stands for a zero mass.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};

pub const LOG2_ZERO: f64 = f64::NEG_INFINITY;

/// `log2(2^a + 2^b)`.
pub fn log2_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == LOG2_ZERO {
        return hi;
    }
    hi + (lo - hi).exp2().ln_1p() / std::f64::consts::LN_2
}

/// `log2(sum_i 2^{x_i})`, stable for arbitrarily negative inputs.
pub fn log2_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(LOG2_ZERO, f64::max);
    if max == LOG2_ZERO {
        return LOG2_ZERO;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp2()).sum();
    max + sum.log2()
}

/// `log2(1 - 2^a)` for `a <= 0`.
pub fn log2_one_minus(a: f64) -> f64 {
    if a == LOG2_ZERO {
        return 0.0;
    }
    if a >= 0.0 {
        return LOG2_ZERO;
    }
    if a < -1.0 {
        (-a.exp2()).ln_1p() / std::f64::consts::LN_2
    } else {
        (-(a * std::f64::consts::LN_2).exp_m1()).log2()
    }
}

/// `log2(x)` of an arbitrary-precision integer (`-inf` for zero).
pub fn log2_biguint(x: &BigUint) -> f64 {
    if x.is_zero() {
        return LOG2_ZERO;
    }
    let (m, e) = split_biguint(x);
    m.log2() + e as f64
}

/// Splits `x` into `(mantissa, exponent)` with `x ≈ mantissa * 2^exponent`
/// and the mantissa holding the top 64 bits.
fn split_biguint(x: &BigUint) -> (f64, i64) {
    let shift = x.bits().saturating_sub(64);
    let top = (x >> shift).to_u64().expect("top 64 bits");
    (top as f64, shift as i64)
}

/// `num / den` for arbitrary-precision integers, accurate to `f64` rounding.
pub fn ratio(num: &BigUint, den: &BigUint) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    let (mn, en) = split_biguint(num);
    let (md, ed) = split_biguint(den);
    mn / md * ((en - ed) as f64).exp2()
}

/// `num / 2^level` as the nearest `f64`.
pub fn ratio_pow2(num: &BigUint, level: u64) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    let (m, e) = split_biguint(num);
    m * ((e - level as i64) as f64).exp2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    #[test]
    fn add_and_sum() {
        assert!((log2_add(-1.0, -1.0) - 0.0).abs() < 1e-15);
        assert_eq!(log2_add(LOG2_ZERO, -3.0), -3.0);
        assert!((log2_sum_exp([-2.0, -2.0, -1.0]) - 0.0).abs() < 1e-15);
        assert_eq!(log2_sum_exp(Vec::<f64>::new()), LOG2_ZERO);
        // far below the f64 range
        assert!((log2_add(-5000.0, -5000.0) + 4999.0).abs() < 1e-12);
    }

    #[test]
    fn one_minus() {
        assert!((log2_one_minus(-1.0) + 1.0).abs() < 1e-15);
        assert!((log2_one_minus((0.75f64).log2()) - (0.25f64).log2()).abs() < 1e-14);
        assert!((log2_one_minus(-60.0) + (2f64.powi(-60)) / std::f64::consts::LN_2).abs() < 1e-30);
        assert_eq!(log2_one_minus(0.0), LOG2_ZERO);
    }

    #[test]
    fn big_integer_logs() {
        let x = BigUint::one() << 3000u32;
        assert_eq!(log2_biguint(&x), 3000.0);
        let y = (BigUint::one() << 3000u32) * 3u32;
        assert!((log2_biguint(&y) - (3000.0 + 3f64.log2())).abs() < 1e-12);
        let r = ratio(&(BigUint::one() << 2000u32), &y);
        assert!((r / (2f64.powi(-1000) / 3.0) - 1.0).abs() < 1e-15);
        assert_eq!(ratio(&BigUint::from(3u32), &BigUint::from(4u32)), 0.75);
        assert_eq!(ratio_pow2(&BigUint::from(3u32), 2), 0.75);
        assert_eq!(ratio_pow2(&(BigUint::one() << 1999u32), 2000), 0.5);
    }
}
