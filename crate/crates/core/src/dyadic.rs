//! Exact dyadic rationals `k / 2^level` on the unit interval.
//!
//! Bin edges, thresholds and message prefixes are all dyadic, and their
//! level grows linearly with the number of arrived bits, so positions are
//! kept as arbitrary-precision integers. Values are stored in lowest terms
//! (odd numerator, or zero at level 0), which makes the derived equality
//! exact.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct DyadicPoint {
    numerator: BigUint,
    level: u64,
}

impl DyadicPoint {
    /// Builds `numerator / 2^level`, rejecting values above one.
    pub fn new(numerator: BigUint, level: u64) -> Result<Self> {
        if numerator.bits() > level + 1 || (numerator.bits() == level + 1 && !is_power_of_two(&numerator)) {
            return Err(Error::Domain(format!(
                "dyadic point {numerator}/2^{level} lies outside [0, 1]"
            )));
        }
        Ok(Self::reduced(numerator, level))
    }

    /// `index / 2^level`; panics when the value exceeds one.
    pub fn from_index(index: impl Into<BigUint>, level: u64) -> Self {
        Self::new(index.into(), level).expect("dyadic index outside the unit interval")
    }

    pub fn zero() -> Self {
        Self {
            numerator: BigUint::zero(),
            level: 0,
        }
    }

    pub fn one() -> Self {
        Self {
            numerator: BigUint::one(),
            level: 0,
        }
    }

    /// The binary fraction `0.b_1 b_2 ... b_m`.
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut numerator = BigUint::zero();
        for &bit in bits {
            numerator <<= 1u32;
            if bit {
                numerator += 1u32;
            }
        }
        Self::reduced(numerator, bits.len() as u64)
    }

    fn reduced(mut numerator: BigUint, mut level: u64) -> Self {
        match numerator.trailing_zeros() {
            None => level = 0,
            Some(tz) => {
                let shift = tz.min(level);
                numerator >>= shift;
                level -= shift;
            }
        }
        Self { numerator, level }
    }

    pub fn numerator(&self) -> &BigUint {
        &self.numerator
    }

    /// Level of the reduced representation (the coarsest grid holding the point).
    pub fn level(&self) -> u64 {
        self.level
    }

    pub fn is_zero(&self) -> bool {
        self.numerator.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.level == 0 && self.numerator.is_one()
    }

    /// Numerator on the grid of resolution `2^-level`, if the point lies on it.
    pub fn index_at(&self, level: u64) -> Option<BigUint> {
        (self.level <= level).then(|| &self.numerator << (level - self.level))
    }

    /// `floor(value * 2^level)`.
    pub fn floor_index(&self, level: u64) -> BigUint {
        if self.level <= level {
            &self.numerator << (level - self.level)
        } else {
            &self.numerator >> (self.level - level)
        }
    }

    /// Nearest `f64`; exact for levels up to the mantissa width.
    pub fn to_f64(&self) -> f64 {
        crate::logmath::ratio_pow2(&self.numerator, self.level)
    }

    /// Numerators of `self` and `other` on their common (finest) grid.
    pub(crate) fn aligned(&self, other: &Self) -> (BigUint, BigUint, u64) {
        let level = self.level.max(other.level);
        (
            &self.numerator << (level - self.level),
            &other.numerator << (level - other.level),
            level,
        )
    }
}

fn is_power_of_two(x: &BigUint) -> bool {
    !x.is_zero() && x.trailing_zeros() == Some(x.bits() - 1)
}

impl Ord for DyadicPoint {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.level == other.level {
            return self.numerator.cmp(&other.numerator);
        }
        let (a, b, _) = self.aligned(other);
        a.cmp(&b)
    }
}

impl PartialOrd for DyadicPoint {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for DyadicPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2^{}", self.numerator, self.level)
    }
}

impl fmt::Display for DyadicPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.numerator.to_u64() {
            Some(n) if self.level < 64 => write!(f, "{}/{}", n, 1u64 << self.level),
            _ => write!(f, "{}/2^{}", self.numerator, self.level),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DyadicRepr {
    numerator: String,
    level: u64,
}

impl Serialize for DyadicPoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        DyadicRepr {
            numerator: self.numerator.to_str_radix(10),
            level: self.level,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DyadicPoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = DyadicRepr::deserialize(deserializer)?;
        let numerator = BigUint::parse_bytes(repr.numerator.as_bytes(), 10)
            .ok_or_else(|| serde::de::Error::custom("invalid dyadic numerator"))?;
        DyadicPoint::new(numerator, repr.level).map_err(serde::de::Error::custom)
    }
}
