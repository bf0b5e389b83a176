//! Causal posterior-matching encoder and decoder over a BSC with feedback.
//!
//! Encoder and decoder each own a [`CodecState`]. With noiseless feedback and
//! a shared randomization stream both states evolve identically: every
//! channel use consumes exactly one uniform draw from the common stream,
//! whether or not the step randomizes.

pub mod arrivals;
pub mod session;

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::DyadicPoint;
use crate::error::{Error, Result};
use crate::posterior::{MedianQuery, PosteriorDensity};

/// Crossover probability of a binary symmetric channel, `0 < p < 1/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ChannelParams {
    p: f64,
}

impl ChannelParams {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 0.5) {
            return Err(Error::InvalidParameter(format!("crossover probability {p} outside (0, 1/2)")));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn p_bar(&self) -> f64 {
        1.0 - self.p
    }
}

impl TryFrom<f64> for ChannelParams {
    type Error = Error;

    fn try_from(p: f64) -> Result<Self> {
        Self::new(p)
    }
}

impl From<ChannelParams> for f64 {
    fn from(c: ChannelParams) -> f64 {
        c.p
    }
}

/// Which threshold a channel use compares against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Median on a bin edge; deterministic threshold at that edge.
    Edge,
    /// Threshold at the left edge of the median bin (probability `pi1`).
    Lower,
    /// Threshold at the right edge of the median bin.
    Upper,
}

/// Formula used for the randomization probability `pi1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomizationRule {
    /// `h(l, d) = (1 - x)^-l - (1 + x)^-l` with `x = 2 (pbar - p) d`.
    #[default]
    MainText,
    /// Equalizer of the per-step moment bounds, built from the
    /// `g_l(d) - g_l(-d)` differences; carries exponent `1 - l`.
    Equalizer,
}

/// How the encoder decides which side of the threshold the message lies on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixComparison {
    /// `x = 0` iff the whole prefix bin lies below the threshold, which is the
    /// event the decoder's Bayes update conditions on.
    #[default]
    Interval,
    /// `x = 0` iff the prefix value `0.s_1...s_b` is at most the threshold.
    /// The bin starting at the threshold is then encoded as "below" while the
    /// decoder treats it as above.
    LeftEdge,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub channel: ChannelParams,
    /// Randomization parameter in `(0, 1]`.
    pub lambda: f64,
    #[serde(default)]
    pub rule: RandomizationRule,
    #[serde(default)]
    pub comparison: PrefixComparison,
}

impl CodecConfig {
    pub fn new(p: f64, lambda: f64) -> Result<Self> {
        let config = Self {
            channel: ChannelParams::new(p)?,
            lambda,
            rule: RandomizationRule::default(),
            comparison: PrefixComparison::default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!("lambda {} outside (0, 1]", self.lambda)));
        }
        Ok(())
    }
}

/// `(pi1, pi2)` for masses `d1`, `d2` on either side of the median.
pub fn compute_randomization(d1: f64, d2: f64, lambda: f64, p: f64, rule: RandomizationRule) -> Result<(f64, f64)> {
    if !(d1 >= 0.0 && d2 >= 0.0) {
        return Err(Error::Domain(format!("negative median-bin mass ({d1}, {d2})")));
    }
    if d1 == 0.0 && d2 == 0.0 {
        return Err(Error::DegenerateRandomization);
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Domain(format!("lambda {lambda} outside (0, 1]")));
    }
    let gap = 2.0 * (1.0 - 2.0 * p);
    let weight = |d: f64| match rule {
        RandomizationRule::MainText => h_main(lambda, gap * d),
        RandomizationRule::Equalizer => g_difference(1.0 - lambda, gap * d),
    };
    let (w1, w2) = (weight(d1), weight(d2));
    let pi1 = w2 / (w1 + w2);
    Ok((pi1, 1.0 - pi1))
}

/// `(1 - x)^-l - (1 + x)^-l`, accurate for small `x`.
fn h_main(lambda: f64, x: f64) -> f64 {
    (-lambda * (-x).ln_1p()).exp_m1() - (-lambda * x.ln_1p()).exp_m1()
}

/// `((1 + x)^m - (1 - x)^m) / m`, with the `m -> 0` limit `ln((1+x)/(1-x))`.
///
/// Up to a positive factor common to both bins this is `g_l(-d) - g_l(d)`.
fn g_difference(mu: f64, x: f64) -> f64 {
    let up = x.ln_1p();
    let down = (-x).ln_1p();
    if mu.abs() < 1e-300 {
        return up - down;
    }
    ((mu * up).exp_m1() - (mu * down).exp_m1()) / mu
}

/// Log2 tilt factors `(below, above)` for output `y` at a threshold with
/// posterior CDF `q`.
///
/// In edge mode the factors are exactly `2p` and `2pbar`.
pub fn tilt_log_factors(p: f64, q: f64, y: bool, branch: Branch) -> (f64, f64) {
    let p_bar = 1.0 - p;
    let (toward, away) = if y { (p, p_bar) } else { (p_bar, p) };
    if branch == Branch::Edge {
        return ((2.0 * toward).log2(), (2.0 * away).log2());
    }
    let denom = toward * q + away * (1.0 - q);
    ((toward / denom).log2(), (away / denom).log2())
}

/// Shared randomization stream, one uniform per channel use.
#[derive(Clone, Debug)]
pub struct CommonRandomness {
    rng: ChaCha8Rng,
}

impl CommonRandomness {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

/// Passes `x` through BSC(p) using the channel stream.
pub fn bsc_transmit<R: Rng + ?Sized>(x: bool, rng: &mut R, channel: ChannelParams) -> bool {
    x ^ (rng.random::<f64>() < channel.p())
}

/// Everything encoder and decoder agree on before a channel use.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    pub median: MedianQuery,
    pub branch: Branch,
    /// Index of the threshold on the grid of the current resolution.
    pub threshold_index: BigUint,
    pub threshold: DyadicPoint,
    /// `F(threshold)` in the linear domain.
    pub threshold_cdf: f64,
    /// `None` in edge mode.
    pub pi1: Option<f64>,
    pub draw: f64,
}

/// Outcome of one posterior update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AppliedTilt {
    pub left_log_factor: f64,
    pub right_log_factor: f64,
}

/// State shared in lockstep by encoder and decoder.
#[derive(Clone, Debug)]
pub struct CodecState {
    pub config: CodecConfig,
    posterior: PosteriorDensity,
    common: CommonRandomness,
    t: u64,
}

impl CodecState {
    pub fn new(config: CodecConfig, common_seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            posterior: PosteriorDensity::new_uniform(),
            common: CommonRandomness::new(common_seed),
            t: 0,
        })
    }

    pub fn posterior(&self) -> &PosteriorDensity {
        &self.posterior
    }

    /// Channel uses completed so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn resolution(&self) -> u64 {
        self.posterior.resolution()
    }

    /// Registers `count` newly arrived bits.
    pub fn arrive(&mut self, count: u64) {
        for _ in 0..count {
            self.posterior.split();
        }
    }

    /// Median query, branch draw and threshold for the next channel use.
    pub fn plan(&mut self) -> Result<StepPlan> {
        let b = self.posterior.resolution();
        if b == 0 {
            return Err(Error::Domain("no bits have arrived yet".into()));
        }
        let median = self.posterior.median_bin(b)?;
        let draw = self.common.next_uniform();
        let config = self.config;
        let randomization = if median.at_left_edge {
            None
        } else {
            match compute_randomization(median.d1, median.d2, config.lambda, config.channel.p(), config.rule) {
                Ok((pi1, _)) => Some(pi1),
                Err(Error::DegenerateRandomization) => None,
                Err(e) => return Err(e),
            }
        };
        let (branch, pi1, threshold_index, threshold_cdf) = match randomization {
            None => (Branch::Edge, None, median.bin_index.clone(), median.cdf_lower),
            Some(pi1) if draw < pi1 => (Branch::Lower, Some(pi1), median.bin_index.clone(), median.cdf_lower),
            Some(pi1) => (Branch::Upper, Some(pi1), &median.bin_index + 1u32, median.cdf_upper),
        };
        let threshold = DyadicPoint::from_index(threshold_index.clone(), b);
        Ok(StepPlan {
            median,
            branch,
            threshold_index,
            threshold,
            threshold_cdf,
            pi1,
            draw,
        })
    }

    /// Bayes update for output `y` under `plan`.
    pub fn update(&mut self, plan: &StepPlan, y: bool) -> Result<AppliedTilt> {
        let (left, right) = tilt_log_factors(self.config.channel.p(), plan.threshold_cdf, y, plan.branch);
        self.posterior.tilt(&plan.threshold, left, right)?;
        self.t += 1;
        Ok(AppliedTilt {
            left_log_factor: left,
            right_log_factor: right,
        })
    }

    /// Median bin at the full current resolution; its index spells the
    /// bit estimates.
    pub fn estimate(&self) -> Result<MedianQuery> {
        self.posterior.median_bin(self.posterior.resolution())
    }
}

/// Encoder: the shared state plus the source prefix.
#[derive(Clone, Debug)]
pub struct Encoder {
    state: CodecState,
    /// Source prefix `s_1...s_b` as an integer of `b` bits.
    prefix: BigUint,
}

impl Encoder {
    pub fn new(config: CodecConfig, common_seed: u64) -> Result<Self> {
        Ok(Self {
            state: CodecState::new(config, common_seed)?,
            prefix: BigUint::default(),
        })
    }

    pub fn state(&self) -> &CodecState {
        &self.state
    }

    pub fn prefix(&self) -> &BigUint {
        &self.prefix
    }

    /// Appends freshly arrived source bits, splitting once per bit.
    pub fn arrive(&mut self, bits: &[bool]) {
        for &bit in bits {
            self.prefix <<= 1u32;
            if bit {
                self.prefix += 1u32;
            }
        }
        self.state.arrive(bits.len() as u64);
    }

    /// Plans the next channel use and returns the channel input.
    pub fn step(&mut self) -> Result<(bool, StepPlan)> {
        let plan = self.state.plan()?;
        let x = self.channel_input(&plan);
        Ok((x, plan))
    }

    pub fn channel_input(&self, plan: &StepPlan) -> bool {
        match self.state.config.comparison {
            PrefixComparison::Interval => self.prefix >= plan.threshold_index,
            PrefixComparison::LeftEdge => self.prefix > plan.threshold_index,
        }
    }

    /// Feedback of the channel output.
    pub fn feedback(&mut self, plan: &StepPlan, y: bool) -> Result<AppliedTilt> {
        self.state.update(plan, y)
    }
}

/// Decoder: the shared state driven by channel outputs.
#[derive(Clone, Debug)]
pub struct Decoder {
    state: CodecState,
}

impl Decoder {
    pub fn new(config: CodecConfig, common_seed: u64) -> Result<Self> {
        Ok(Self {
            state: CodecState::new(config, common_seed)?,
        })
    }

    pub fn state(&self) -> &CodecState {
        &self.state
    }

    pub fn arrive(&mut self, count: u64) {
        self.state.arrive(count);
    }

    /// Consumes one channel output and returns the plan it was decoded under.
    pub fn step(&mut self, y: bool) -> Result<(StepPlan, AppliedTilt)> {
        let plan = self.state.plan()?;
        let tilt = self.state.update(&plan, y)?;
        Ok((plan, tilt))
    }

    /// Like [`Decoder::step`], checking the branch against a recorded one.
    /// Randomized steps need a record.
    pub fn step_with_branch(&mut self, y: bool, recorded: Option<Branch>) -> Result<(StepPlan, AppliedTilt)> {
        let plan = self.state.plan()?;
        match (plan.branch, recorded) {
            (Branch::Edge, None) => {}
            (_, None) => {
                return Err(Error::Protocol(format!(
                    "step {} randomizes but no branch was recorded",
                    self.state.t() + 1
                )))
            }
            (ours, Some(theirs)) if ours != theirs => {
                return Err(Error::Protocol(format!(
                    "step {}: recorded branch {theirs:?} but common randomness gives {ours:?}",
                    self.state.t() + 1
                )))
            }
            _ => {}
        }
        let tilt = self.state.update(&plan, y)?;
        Ok((plan, tilt))
    }

    pub fn estimate(&self) -> Result<MedianQuery> {
        self.state.estimate()
    }
}

/// Index of the first wrong estimate (1-based), comparing `b`-bit integers;
/// `None` when the whole prefix is right.
pub fn first_error(estimate: &BigUint, truth: &BigUint, b: u64) -> Option<u64> {
    let diff = estimate ^ truth;
    let bits = diff.bits();
    (bits > 0).then(|| b - bits + 1)
}
