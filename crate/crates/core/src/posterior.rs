//! Posterior of the message point over `[0, 1)`.
//!
//! The density is piecewise constant with breakpoints only at thresholds that
//! were actually used. Bin splits never add a breakpoint, because no breakpoint
//! ever lies strictly inside a bin of the current resolution; a split only
//! bumps the resolution.
//!
//! Segments are kept in two stacks around a cursor (a gap buffer): `left`
//! holds the segments below the cursor in increasing order and `right` the
//! segments above it in decreasing order, so the segments nearest the cursor
//! sit on top of both stacks. A tilt moves the cursor to its threshold and
//! then adds one log-factor to every segment on each side, which is done
//! lazily through a per-side offset. Thresholds always sit next to the
//! median, so a codec step costs O(1) amortized instead of a scan over all
//! segments.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::dyadic::DyadicPoint;
use crate::error::{Error, Result};
use crate::logmath::{log2_add, log2_one_minus, log2_sum_exp, ratio, LOG2_ZERO};

/// Linear-domain tolerance for "the median sits on a bin edge".
pub const MEDIAN_EDGE_TOLERANCE: f64 = 1e-12;

/// Tolerance on the normalization contract of [`PosteriorDensity::tilt`].
pub const TILT_NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
struct Segment {
    lo: DyadicPoint,
    hi: DyadicPoint,
    /// log2 mass relative to the offset of the stack holding the segment.
    log_mass: f64,
    /// log2 of the summed mass of this segment and every segment beneath it
    /// in its stack, relative to the same offset.
    log_cum: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDensity {
    left: Vec<Segment>,
    right: Vec<Segment>,
    left_offset: f64,
    right_offset: f64,
    resolution: u64,
}

/// Location of the posterior median on the grid of resolution `2^-resolution`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianQuery {
    pub resolution: u64,
    /// Index `k` of the bin `[k 2^-i, (k+1) 2^-i)` holding the median.
    #[serde(with = "biguint_string")]
    pub bin_index: BigUint,
    /// The median coincides with the left edge of the bin.
    pub at_left_edge: bool,
    /// Posterior mass between the left edge and the median.
    pub d1: f64,
    /// Posterior mass between the median and the right edge.
    pub d2: f64,
    /// `F(k 2^-i)`.
    pub cdf_lower: f64,
    /// `F((k+1) 2^-i)`.
    pub cdf_upper: f64,
}

impl MedianQuery {
    pub fn lower_edge(&self) -> DyadicPoint {
        DyadicPoint::from_index(self.bin_index.clone(), self.resolution)
    }

    pub fn upper_edge(&self) -> DyadicPoint {
        DyadicPoint::from_index(&self.bin_index + 1u32, self.resolution)
    }

    /// Binary expansion of the bin index, most significant bit first,
    /// left-padded to `resolution` bits.
    pub fn bits(&self) -> Vec<bool> {
        index_bits(&self.bin_index, self.resolution)
    }
}

/// `index` written with `width` binary digits, most significant first.
pub fn index_bits(index: &BigUint, width: u64) -> Vec<bool> {
    (0..width).rev().map(|b| index.bit(b)).collect()
}

/// One `(breakpoint, segment mass)` entry of a posterior dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpEntry {
    pub numerator: String,
    pub level: u64,
    pub log2_mass: f64,
}

/// Text form of a posterior used for golden files and debugging.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDump {
    pub resolution: u64,
    pub segments: Vec<DumpEntry>,
}

impl Default for PosteriorDensity {
    fn default() -> Self {
        Self::new_uniform()
    }
}

impl PosteriorDensity {
    /// Uniform prior: one segment `[0, 1)` of mass one at resolution zero.
    pub fn new_uniform() -> Self {
        Self {
            left: Vec::new(),
            right: vec![Segment {
                lo: DyadicPoint::zero(),
                hi: DyadicPoint::one(),
                log_mass: 0.0,
                log_cum: 0.0,
            }],
            left_offset: 0.0,
            right_offset: 0.0,
            resolution: 0,
        }
    }

    /// Builds a posterior from explicit breakpoints `0 = x_0 < ... < x_m = 1`
    /// and the log2 masses of the `m` segments.
    pub fn from_segments(breakpoints: &[DyadicPoint], log_masses: &[f64], resolution: u64) -> Result<Self> {
        if breakpoints.len() != log_masses.len() + 1 || log_masses.is_empty() {
            return Err(Error::InvalidParameter(
                "need exactly one mass per consecutive breakpoint pair".into(),
            ));
        }
        if !breakpoints[0].is_zero() || !breakpoints[breakpoints.len() - 1].is_one() {
            return Err(Error::InvalidParameter("breakpoints must run from 0 to 1".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("breakpoints must be strictly increasing".into()));
        }
        if breakpoints.iter().any(|b| b.level() > resolution) {
            return Err(Error::InvalidParameter(format!(
                "breakpoint finer than resolution {resolution}"
            )));
        }
        let total = log2_sum_exp(log_masses.iter().copied());
        if total.abs() > TILT_NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "segment masses sum to 2^{total}, not one"
            )));
        }
        let mut posterior = Self {
            left: Vec::new(),
            right: Vec::with_capacity(log_masses.len()),
            left_offset: 0.0,
            right_offset: 0.0,
            resolution,
        };
        for (w, &log_mass) in breakpoints.windows(2).zip(log_masses).rev() {
            posterior.push_right(Segment {
                lo: w[0].clone(),
                hi: w[1].clone(),
                log_mass,
                log_cum: log_mass,
            });
        }
        Ok(posterior)
    }

    pub fn from_dump(dump: &PosteriorDump) -> Result<Self> {
        let mut breakpoints = Vec::with_capacity(dump.segments.len() + 1);
        for entry in &dump.segments {
            let numerator = BigUint::parse_bytes(entry.numerator.as_bytes(), 10)
                .ok_or_else(|| Error::InvalidParameter(format!("bad numerator {}", entry.numerator)))?;
            breakpoints.push(DyadicPoint::new(numerator, entry.level)?);
        }
        breakpoints.push(DyadicPoint::one());
        let masses: Vec<f64> = dump.segments.iter().map(|e| e.log2_mass).collect();
        Self::from_segments(&breakpoints, &masses, dump.resolution)
    }

    /// Current bit count `b`; bins have width `2^-b`.
    pub fn resolution(&self) -> u64 {
        self.resolution
    }

    pub fn segment_count(&self) -> usize {
        self.left.len() + self.right.len()
    }

    /// Breakpoints in increasing order, from 0 to 1.
    pub fn breakpoints(&self) -> Vec<DyadicPoint> {
        let mut out: Vec<DyadicPoint> = (0..self.segment_count()).map(|g| self.seg(g).lo.clone()).collect();
        out.push(DyadicPoint::one());
        out
    }

    /// Unnormalized log2 segment masses in increasing position order.
    pub fn segment_log_masses(&self) -> Vec<f64> {
        (0..self.segment_count()).map(|g| self.log_mass(g)).collect()
    }

    /// `log2` of the total mass; zero up to rounding.
    pub fn log_total_mass(&self) -> f64 {
        log2_sum_exp(self.segment_log_masses())
    }

    pub fn dump(&self) -> PosteriorDump {
        PosteriorDump {
            resolution: self.resolution,
            segments: (0..self.segment_count())
                .map(|g| {
                    let seg = self.seg(g);
                    DumpEntry {
                        numerator: seg.lo.numerator().to_str_radix(10),
                        level: seg.lo.level(),
                        log2_mass: self.log_mass(g),
                    }
                })
                .collect(),
        }
    }

    /// Registers the arrival of one bit: every bin is halved with its mass
    /// shared equally, which leaves a piecewise-constant density unchanged.
    pub fn split(&mut self) {
        self.resolution += 1;
    }

    /// `log2 F(x)`.
    pub fn cdf_at(&self, x: &DyadicPoint) -> f64 {
        let (below, above) = self.log_masses_around(x);
        below - log2_sum_exp([below, above])
    }

    /// `log2 (1 - F(x))`, accurate in the upper tail.
    pub fn ccdf_at(&self, x: &DyadicPoint) -> f64 {
        let (below, above) = self.log_masses_around(x);
        above - log2_sum_exp([below, above])
    }

    /// `log2 min{F(x), 1 - F(x)}`.
    pub fn tail_stat(&self, x: &DyadicPoint) -> f64 {
        let (below, above) = self.log_masses_around(x);
        below.min(above) - log2_sum_exp([below, above])
    }

    /// Median bin at resolution `i <= b`, with the tie rule that a median on a
    /// bin edge belongs to the bin on its right and is flagged `at_left_edge`.
    pub fn median_bin(&self, i: u64) -> Result<MedianQuery> {
        if i > self.resolution {
            return Err(Error::Domain(format!(
                "median requested at resolution {i} but only {} bits have arrived",
                self.resolution
            )));
        }
        let total = self.left_mass() + self.right_mass();
        let half = 0.5 * total;
        let (g, below) = self.locate(half);

        let seg = self.seg(g);
        let mass = self.mass(g);
        let frac = if mass > 0.0 {
            ((half - below) / mass).clamp(0.0, 1.0 - f64::EPSILON / 2.0)
        } else {
            0.0
        };

        // Exact floor((lo + frac (hi - lo)) 2^i) with frac = m / 2^s.
        let (lo, hi, level) = seg.lo.aligned(&seg.hi);
        let width = &hi - &lo;
        let (mant, s) = f64_as_dyadic(frac);
        let scaled = (&lo << s) + width * mant;
        let shift = s + level;
        let mut k = if shift >= i {
            scaled >> (shift - i)
        } else {
            scaled << (i - shift)
        };
        let last = (BigUint::one() << i) - 1u32;
        if k > last {
            k = last.clone();
        }

        let mut cdf_lower = self.linear_cdf_from(g, below, &DyadicPoint::from_index(k.clone(), i)) / total;
        let mut cdf_upper = self.linear_cdf_from(g, below, &DyadicPoint::from_index(&k + 1u32, i)) / total;
        let mut at_left_edge = (cdf_lower - 0.5).abs() <= MEDIAN_EDGE_TOLERANCE;
        if !at_left_edge && k < last && (cdf_upper - 0.5).abs() <= MEDIAN_EDGE_TOLERANCE {
            k += 1u32;
            cdf_lower = cdf_upper;
            cdf_upper = self.linear_cdf_from(g, below, &DyadicPoint::from_index(&k + 1u32, i)) / total;
            at_left_edge = true;
        }
        let d1 = if at_left_edge { 0.0 } else { (0.5 - cdf_lower).max(0.0) };
        let d2 = (cdf_upper - 0.5).max(0.0);
        Ok(MedianQuery {
            resolution: i,
            bin_index: k,
            at_left_edge,
            d1,
            d2,
            cdf_lower,
            cdf_upper,
        })
    }

    /// Linear `F(x)` near the cursor, walking outwards from it.
    pub fn cdf_linear(&self, x: &DyadicPoint) -> f64 {
        let total = self.left_mass() + self.right_mass();
        let g = self.left.len().min(self.segment_count() - 1);
        let below = if g == self.left.len() {
            self.left_mass()
        } else {
            self.left_mass() - self.mass(g)
        };
        self.linear_cdf_from(g, below, x) / total
    }

    /// Multiplies the mass below `threshold` by `2^left_log_factor` and the
    /// mass above it by `2^right_log_factor`, inserting the threshold as a
    /// breakpoint when needed.
    pub fn tilt(&mut self, threshold: &DyadicPoint, left_log_factor: f64, right_log_factor: f64) -> Result<()> {
        if threshold.level() > self.resolution {
            return Err(Error::Domain(format!(
                "threshold {threshold} is finer than resolution {}",
                self.resolution
            )));
        }
        let total = self.left_mass() + self.right_mass();
        let below = self.linear_cdf_from_cursor(threshold) / total;
        let after = left_log_factor.exp2() * below + right_log_factor.exp2() * (1.0 - below);
        if !after.is_finite() || (after - 1.0).abs() > TILT_NORMALIZATION_TOLERANCE {
            return Err(Error::NonNormalizingTilt { mass: after });
        }
        self.move_cursor(threshold);
        self.left_offset += left_log_factor;
        self.right_offset += right_log_factor;
        // rounding drift is folded back so the total stays at one
        let (below, above) = self.side_log_masses();
        let shift = log2_add(below, above);
        self.left_offset -= shift;
        self.right_offset -= shift;
        Ok(())
    }

    /// Cheap fingerprint of the state, compared every step in long sessions
    /// where a full structural comparison would be quadratic.
    pub fn summary(&self) -> PosteriorSummary {
        PosteriorSummary {
            resolution: self.resolution,
            left_len: self.left.len(),
            right_len: self.right.len(),
            left_offset: self.left_offset.to_bits(),
            right_offset: self.right_offset.to_bits(),
            left_cum: self.left.last().map_or(0, |s| s.log_cum.to_bits()),
            right_cum: self.right.last().map_or(0, |s| s.log_cum.to_bits()),
            cursor: self.cursor(),
        }
    }

    /// log2 masses below and above the cursor.
    fn side_log_masses(&self) -> (f64, f64) {
        let side = |stack: &[Segment], offset: f64| stack.last().map_or(LOG2_ZERO, |s| s.log_cum + offset);
        (side(&self.left, self.left_offset), side(&self.right, self.right_offset))
    }

    fn left_mass(&self) -> f64 {
        self.side_log_masses().0.exp2()
    }

    fn right_mass(&self) -> f64 {
        self.side_log_masses().1.exp2()
    }

    fn cursor(&self) -> DyadicPoint {
        match (self.left.last(), self.right.last()) {
            (Some(seg), _) => seg.hi.clone(),
            (None, Some(seg)) => seg.lo.clone(),
            (None, None) => unreachable!("posterior always has a segment"),
        }
    }

    /// Segment by global index in increasing position order.
    fn seg(&self, g: usize) -> &Segment {
        if g < self.left.len() {
            &self.left[g]
        } else {
            &self.right[self.right.len() - 1 - (g - self.left.len())]
        }
    }

    fn log_mass(&self, g: usize) -> f64 {
        if g < self.left.len() {
            self.left[g].log_mass + self.left_offset
        } else {
            self.seg(g).log_mass + self.right_offset
        }
    }

    fn mass(&self, g: usize) -> f64 {
        self.log_mass(g).exp2()
    }

    /// Segment holding the unnormalized mass level `target` and the
    /// unnormalized mass below its lower end.
    fn locate(&self, target: f64) -> (usize, f64) {
        let n = self.segment_count();
        let mut g = self.left.len();
        let mut below = self.left_mass();
        if g < n && below <= target {
            while g + 1 < n {
                let m = self.mass(g);
                if below + m > target {
                    break;
                }
                below += m;
                g += 1;
            }
        } else {
            while g > 0 {
                g -= 1;
                below -= self.mass(g);
                if g == 0 {
                    below = 0.0;
                }
                if below <= target {
                    break;
                }
            }
        }
        (g, below)
    }

    /// Unnormalized `F(x)` given segment `g` and the mass below it.
    fn linear_cdf_from(&self, mut g: usize, mut below: f64, x: &DyadicPoint) -> f64 {
        let n = self.segment_count();
        while g > 0 && *x < self.seg(g).lo {
            g -= 1;
            below -= self.mass(g);
        }
        while g + 1 < n && *x >= self.seg(g).hi {
            below += self.mass(g);
            g += 1;
        }
        let seg = self.seg(g);
        below.max(0.0) + self.mass(g) * fraction(&seg.lo, &seg.hi, x)
    }

    fn linear_cdf_from_cursor(&self, x: &DyadicPoint) -> f64 {
        let g = self.left.len().min(self.segment_count() - 1);
        let below = if g == self.left.len() {
            self.left_mass()
        } else {
            self.left_mass() - self.mass(g)
        };
        self.linear_cdf_from(g, below, x)
    }

    fn move_cursor(&mut self, target: &DyadicPoint) {
        loop {
            let cursor = self.cursor();
            if *target > cursor {
                let seg = self.right.pop().expect("cursor below 1 has a segment above it");
                let actual = seg.log_mass + self.right_offset;
                if *target >= seg.hi {
                    self.push_left(Segment { log_mass: actual, ..seg });
                } else {
                    let (lower, upper) = split_segment(seg, actual, target);
                    self.push_left(lower);
                    self.push_right(upper);
                    break;
                }
            } else if *target < cursor {
                let seg = self.left.pop().expect("cursor above 0 has a segment below it");
                let actual = seg.log_mass + self.left_offset;
                if *target <= seg.lo {
                    self.push_right(Segment { log_mass: actual, ..seg });
                } else {
                    let (lower, upper) = split_segment(seg, actual, target);
                    self.push_left(lower);
                    self.push_right(upper);
                    break;
                }
            } else {
                break;
            }
        }
    }

    /// Pushes a segment whose `log_mass` is absolute.
    fn push_left(&mut self, seg: Segment) {
        let log_mass = seg.log_mass - self.left_offset;
        let log_cum = self.left.last().map_or(log_mass, |top| log2_add(top.log_cum, log_mass));
        self.left.push(Segment { log_mass, log_cum, ..seg });
    }

    fn push_right(&mut self, seg: Segment) {
        let log_mass = seg.log_mass - self.right_offset;
        let log_cum = self.right.last().map_or(log_mass, |top| log2_add(top.log_cum, log_mass));
        self.right.push(Segment { log_mass, log_cum, ..seg });
    }

    /// Log-masses strictly below and above `x`.
    fn log_masses_around(&self, x: &DyadicPoint) -> (f64, f64) {
        let mut below = Vec::new();
        let mut above = Vec::new();
        for g in 0..self.segment_count() {
            let seg = self.seg(g);
            let lm = self.log_mass(g);
            if seg.hi <= *x {
                below.push(lm);
            } else if seg.lo >= *x {
                above.push(lm);
            } else {
                let f = fraction(&seg.lo, &seg.hi, x);
                below.push(lm + f.log2());
                above.push(lm + log2_one_minus(f.log2()));
            }
        }
        (log2_sum_exp(below), log2_sum_exp(above))
    }
}

/// Cheap, bit-exact state fingerprint (see [`PosteriorDensity::summary`]).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PosteriorSummary {
    resolution: u64,
    left_len: usize,
    right_len: usize,
    left_offset: u64,
    right_offset: u64,
    left_cum: u64,
    right_cum: u64,
    cursor: DyadicPoint,
}

/// `(x - lo) / (hi - lo)` clamped to `[0, 1]`.
fn fraction(lo: &DyadicPoint, hi: &DyadicPoint, x: &DyadicPoint) -> f64 {
    if x <= lo {
        return 0.0;
    }
    if x >= hi {
        return 1.0;
    }
    let level = lo.level().max(hi.level()).max(x.level());
    let lo = lo.floor_index(level);
    let num = x.floor_index(level) - &lo;
    let den = hi.floor_index(level) - lo;
    ratio(&num, &den)
}

/// Splits `[lo, hi)` at `at`, sharing the mass in proportion to length.
/// Returned segments carry absolute log masses.
fn split_segment(seg: Segment, actual: f64, at: &DyadicPoint) -> (Segment, Segment) {
    let level = seg.lo.level().max(seg.hi.level()).max(at.level());
    let lo = seg.lo.floor_index(level);
    let hi = seg.hi.floor_index(level);
    let mid = at.floor_index(level);
    let width = &hi - &lo;
    let lower_frac = ratio(&(&mid - &lo), &width);
    let upper_frac = ratio(&(&hi - &mid), &width);
    let lower = Segment {
        lo: seg.lo,
        hi: at.clone(),
        log_mass: actual + lower_frac.log2(),
        log_cum: LOG2_ZERO,
    };
    let upper = Segment {
        lo: at.clone(),
        hi: seg.hi,
        log_mass: actual + upper_frac.log2(),
        log_cum: LOG2_ZERO,
    };
    (lower, upper)
}

/// Writes `x in [0, 1)` exactly as `mantissa / 2^shift`.
fn f64_as_dyadic(x: f64) -> (BigUint, u64) {
    if x <= 0.0 {
        return (BigUint::zero(), 0);
    }
    let bits = x.to_bits();
    let exponent = ((bits >> 52) & 0x7ff) as i64;
    let (mantissa, exp) = if exponent == 0 {
        (bits & ((1 << 52) - 1), -1074)
    } else {
        ((bits & ((1 << 52) - 1)) | (1 << 52), exponent - 1075)
    };
    // x = mantissa * 2^exp with exp < 0 for x < 1
    debug_assert!(exp < 0);
    (BigUint::from(mantissa), (-exp) as u64)
}

mod biguint_string {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&x.to_str_radix(10))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let text = String::deserialize(d)?;
        BigUint::parse_bytes(text.as_bytes(), 10).ok_or_else(|| serde::de::Error::custom("invalid integer"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(k: u64, level: u64) -> DyadicPoint {
        DyadicPoint::from_index(k, level)
    }

    fn two_segment(left: f64, resolution: u64) -> PosteriorDensity {
        PosteriorDensity::from_segments(
            &[pt(0, 0), pt(1, 1), pt(1, 0)],
            &[left.log2(), (1.0 - left).log2()],
            resolution,
        )
        .unwrap()
    }

    #[test]
    fn uniform_prior() {
        let q = PosteriorDensity::new_uniform();
        assert_eq!(q.resolution(), 0);
        assert_eq!(q.breakpoints(), vec![pt(0, 0), pt(1, 0)]);
        assert_eq!(q.segment_log_masses(), vec![0.0]);
        assert_eq!(q.cdf_at(&pt(1, 1)), -1.0);
        assert_eq!(q.cdf_at(&pt(1, 0)), 0.0);
        assert!((q.cdf_at(&pt(3, 3)) - (3.0f64 / 8.0).log2()).abs() < 1e-15);
        assert_eq!(q.log_total_mass(), 0.0);
    }

    #[test]
    fn median_of_uniform_sits_on_an_edge() {
        let mut q = PosteriorDensity::new_uniform();
        assert!(q.median_bin(1).is_err());
        q.split();
        q.split();
        let m = q.median_bin(2).unwrap();
        assert_eq!(m.bin_index, BigUint::from(2u32));
        assert!(m.at_left_edge);
        assert_eq!(m.d1, 0.0);
        assert!((m.d2 - 0.25).abs() < 1e-15);
        let m1 = q.median_bin(1).unwrap();
        assert_eq!(m1.bin_index, BigUint::from(1u32));
        assert!(m1.at_left_edge);
    }

    #[test]
    fn median_of_skewed_posterior() {
        let q = two_segment(0.2, 2);
        let m = q.median_bin(1).unwrap();
        assert_eq!(m.bin_index, BigUint::from(1u32));
        assert!(!m.at_left_edge);
        assert!((m.d1 - 0.3).abs() < 1e-12);
        // d1 + d2 is the mass of the whole upper half
        assert!((m.d2 - 0.5).abs() < 1e-12);
        let m = q.median_bin(2).unwrap();
        assert_eq!(m.bin_index, BigUint::from(2u32));
        assert!((m.d1 - 0.3).abs() < 1e-12);
        assert!((m.d2 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn tail_statistic() {
        let q = PosteriorDensity::new_uniform();
        assert_eq!(q.tail_stat(&pt(1, 1)), -1.0);
        assert_eq!(q.tail_stat(&pt(0, 0)), LOG2_ZERO);
        let q = two_segment(0.9, 1);
        assert!((q.tail_stat(&pt(1, 1)) - 0.1f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn horstein_tilt_at_half() {
        let p: f64 = 0.1;
        let mut q = PosteriorDensity::new_uniform();
        q.split();
        q.tilt(&pt(1, 1), (2.0 * p).log2(), (2.0 * (1.0 - p)).log2()).unwrap();
        assert!((q.cdf_at(&pt(1, 1)).exp2() - 0.1).abs() < 1e-15);
        assert!(q.log_total_mass().abs() < 1e-12);
        assert_eq!(q.segment_count(), 2);
    }

    #[test]
    fn identity_tilt_keeps_cdf() {
        let mut q = two_segment(0.3, 3);
        let before: Vec<f64> = (0..=8).map(|k| q.cdf_at(&pt(k, 3))).collect();
        q.tilt(&pt(5, 3), 0.0, 0.0).unwrap();
        let after: Vec<f64> = (0..=8).map(|k| q.cdf_at(&pt(k, 3))).collect();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-14 || (a.is_infinite() && b.is_infinite()));
        }
        assert_eq!(q.segment_count(), 3);
    }

    #[test]
    fn closed_form_tilt_at_quarter() {
        // y = 1 with threshold 1/4: left factor p / (p q + pbar (1 - q)), q = 1/4
        let p: f64 = 0.2;
        let q0 = 0.25;
        let denom = p * q0 + (1.0 - p) * (1.0 - q0);
        let mut q = PosteriorDensity::new_uniform();
        q.split();
        q.split();
        q.tilt(&pt(1, 2), (p / denom).log2(), ((1.0 - p) / denom).log2()).unwrap();
        assert!((q.cdf_at(&pt(1, 2)).exp2() - 0.25 * 0.2 / 0.65).abs() < 1e-15);
    }

    #[test]
    fn tilt_errors() {
        let mut q = PosteriorDensity::new_uniform();
        q.split();
        assert!(matches!(q.tilt(&pt(1, 2), 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(
            q.tilt(&pt(1, 1), 0.5, 0.5),
            Err(Error::NonNormalizingTilt { .. })
        ));
    }

    /// Bayes tilt of a BSC(p) output `y` with threshold `tau`.
    fn bayes_tilt(q: &mut PosteriorDensity, tau: &DyadicPoint, p: f64, y: bool) {
        let f = q.cdf_linear(tau);
        let (a, b) = if y { (p, 1.0 - p) } else { (1.0 - p, p) };
        let denom = a * f + b * (1.0 - f);
        q.tilt(tau, (a / denom).log2(), (b / denom).log2()).unwrap();
    }

    #[test]
    fn split_is_a_cdf_no_op() {
        let mut q = two_segment(0.7, 1);
        q.split();
        bayes_tilt(&mut q, &pt(1, 2), 0.2, true);
        let before: Vec<f64> = (0..=16).map(|k| q.cdf_at(&pt(k, 4))).collect();
        q.split();
        q.split();
        let after: Vec<f64> = (0..=16).map(|k| q.cdf_at(&pt(k, 4))).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn cursor_moves_both_ways() {
        let p: f64 = 0.1;
        let mut q = PosteriorDensity::new_uniform();
        for _ in 0..4 {
            q.split();
        }
        for (k, y) in [(8u64, true), (3, false), (12, true), (1, false), (15, true)] {
            let tau = pt(k, 4);
            let f = q.cdf_linear(&tau);
            let a = if y { p } else { 1.0 - p };
            let expected = a * f / (a * f + (1.0 - a) * (1.0 - f));
            bayes_tilt(&mut q, &tau, p, y);
            assert!((q.cdf_at(&tau).exp2() - expected).abs() < 1e-14);
        }
        assert!(q.log_total_mass().abs() < 1e-12);
        assert_eq!(q.segment_count(), 6);
        let bps = q.breakpoints();
        assert!(bps.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn dump_round_trip() {
        let mut q = two_segment(0.25, 2);
        bayes_tilt(&mut q, &pt(3, 2), 0.3, false);
        let dump = q.dump();
        let json = serde_json::to_string(&dump).unwrap();
        let back = PosteriorDensity::from_dump(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.breakpoints(), q.breakpoints());
        for (a, b) in back.segment_log_masses().iter().zip(q.segment_log_masses()) {
            assert_eq!(*a, b);
        }
    }

    #[test]
    fn from_segments_validates() {
        assert!(PosteriorDensity::from_segments(&[pt(0, 0), pt(1, 0)], &[-1.0], 0).is_err());
        assert!(PosteriorDensity::from_segments(&[pt(0, 0), pt(1, 2), pt(1, 0)], &[-2.0, -0.415], 1).is_err());
        assert!(PosteriorDensity::from_segments(&[pt(1, 1), pt(1, 0)], &[0.0], 1).is_err());
    }

    #[test]
    fn f64_dyadic_is_exact() {
        for x in [0.5, 0.75, 1e-300, 0.1, 1.0 - f64::EPSILON] {
            let (m, s) = f64_as_dyadic(x);
            assert_eq!(crate::logmath::ratio_pow2(&m, s), x);
        }
    }
}
