//! End-to-end coding sessions: source, arrivals, encoder, BSC and decoder
//! driven by four independent seeded streams.

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arrivals::{ArrivalProcess, ArrivalSchedule};
use super::{bsc_transmit, first_error, AppliedTilt, Branch, CodecConfig, Decoder, Encoder, StepPlan};
use crate::error::{Error, Result};
use crate::posterior::{index_bits, MedianQuery};

/// Seeds of the four randomness streams of a session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SessionSeeds {
    pub source: u64,
    pub channel: u64,
    pub common: u64,
    pub arrivals: u64,
}

impl SessionSeeds {
    /// Independent per-trial seeds from a master seed.
    pub fn derive(master: u64, trial: u64) -> Self {
        let base = splitmix64(master ^ splitmix64(trial.wrapping_add(0x5851_f42d_4c95_7f2d)));
        Self {
            source: splitmix64(base ^ 1),
            channel: splitmix64(base ^ 2),
            common: splitmix64(base ^ 3),
            arrivals: splitmix64(base ^ 4),
        }
    }
}

/// One round of the splitmix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// How encoder and decoder posteriors are compared after every step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateCheck {
    /// Bit-exact fingerprint: sums, offsets, stack sizes and cursor.
    #[default]
    Summary,
    /// Every breakpoint and every stored mass.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub codec: CodecConfig,
    pub schedule: ArrivalSchedule,
    pub horizon: u64,
    pub seeds: SessionSeeds,
    #[serde(default)]
    pub check: StateCheck,
}

/// What happened at one channel use.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub t: u64,
    pub b: u64,
    pub x: bool,
    pub y: bool,
    pub plan: StepPlan,
    pub tilt: AppliedTilt,
    pub estimate: MedianQuery,
    /// First wrong estimate among `s_1..s_b`, 1-based.
    pub first_error: Option<u64>,
}

/// Steps a session one channel use at a time.
#[derive(Clone, Debug)]
pub struct SessionRunner {
    encoder: Encoder,
    decoder: Decoder,
    arrivals: ArrivalProcess,
    source: ChaCha8Rng,
    channel: ChaCha8Rng,
    config: SessionConfig,
    source_bits: Vec<bool>,
    t: u64,
}

impl SessionRunner {
    pub fn new(config: &SessionConfig) -> Result<Self> {
        config.codec.validate()?;
        Ok(Self {
            encoder: Encoder::new(config.codec, config.seeds.common)?,
            decoder: Decoder::new(config.codec, config.seeds.common)?,
            arrivals: config.schedule.process(config.seeds.arrivals)?,
            source: ChaCha8Rng::seed_from_u64(config.seeds.source),
            channel: ChaCha8Rng::seed_from_u64(config.seeds.channel),
            config: config.clone(),
            source_bits: Vec::new(),
            t: 0,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn source_bits(&self) -> &[bool] {
        &self.source_bits
    }

    pub fn arrival_times(&self) -> &[u64] {
        self.arrivals.arrival_times()
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.horizon
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let fresh = self.arrivals.advance();
        let bits: Vec<bool> = (0..fresh).map(|_| self.source.random::<bool>()).collect();
        self.source_bits.extend_from_slice(&bits);
        self.encoder.arrive(&bits);
        self.decoder.arrive(fresh);

        let (x, enc_plan) = self.encoder.step()?;
        let y = bsc_transmit(x, &mut self.channel, self.config.codec.channel);
        self.encoder.feedback(&enc_plan, y)?;
        let (plan, tilt) = self.decoder.step(y)?;
        if plan.branch != enc_plan.branch || plan.threshold != enc_plan.threshold {
            return Err(Error::Protocol(format!("encoder and decoder planned differently at t = {}", self.t + 1)));
        }
        self.check_states()?;
        self.t += 1;

        let estimate = self.decoder.estimate()?;
        let b = estimate.resolution;
        let first_error = first_error(&estimate.bin_index, self.encoder.prefix(), b);
        Ok(StepOutcome {
            t: self.t,
            b,
            x,
            y,
            plan,
            tilt,
            estimate,
            first_error,
        })
    }

    fn check_states(&self) -> Result<()> {
        let enc = self.encoder.state().posterior();
        let dec = self.decoder.state().posterior();
        let same = match self.config.check {
            StateCheck::Summary => enc.summary() == dec.summary(),
            StateCheck::Full => enc == dec,
        };
        if same {
            Ok(())
        } else {
            Err(Error::Protocol(format!(
                "encoder and decoder posteriors differ after t = {}",
                self.t + 1
            )))
        }
    }
}

/// One JSON-lines record of a transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub b: u64,
    pub x: u8,
    pub y: u8,
    pub branch: Branch,
    pub d1: f64,
    pub d2: f64,
    pub pi1: Option<f64>,
    pub draw: f64,
    /// Linear tilt factors applied below / above the threshold.
    pub left_factor: f64,
    pub right_factor: f64,
    /// Decimal index of the median bin at resolution `b`.
    pub k_median: String,
    /// `s_hat_1 ... s_hat_b` as a string of `0`/`1`.
    pub estimates: String,
    /// Character `j` is `1` iff the first `j` estimates contain an error.
    pub prefix_error_flags: String,
}

impl StepRecord {
    fn from_outcome(o: &StepOutcome) -> Self {
        let flags = (1..=o.b)
            .map(|j| if o.first_error.is_some_and(|e| e <= j) { '1' } else { '0' })
            .collect();
        Self {
            t: o.t,
            b: o.b,
            x: o.x as u8,
            y: o.y as u8,
            branch: o.plan.branch,
            d1: o.plan.median.d1,
            d2: o.plan.median.d2,
            pi1: o.plan.pi1,
            draw: o.plan.draw,
            left_factor: o.tilt.left_log_factor.exp2(),
            right_factor: o.tilt.right_log_factor.exp2(),
            k_median: o.estimate.bin_index.to_str_radix(10),
            estimates: bit_string(&index_bits(&o.estimate.bin_index, o.b)),
            prefix_error_flags: flags,
        }
    }
}

fn bit_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub config: SessionConfig,
    pub source_bits: String,
    pub arrival_times: Vec<u64>,
    pub steps: Vec<StepRecord>,
}

impl Transcript {
    /// Step records, one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&serde_json::to_string(step).expect("step records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn steps_from_jsonl(text: &str) -> Result<Vec<StepRecord>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line).map_err(|e| Error::Protocol(format!("transcript line {}: {e}", i + 1)))
            })
            .collect()
    }

    /// Whether the first `j` estimates after channel use `t` contain an error.
    pub fn prefix_error(&self, t: u64, j: u64) -> Option<bool> {
        let step = self.steps.get(t.checked_sub(1)? as usize)?;
        (j >= 1 && j <= step.b).then(|| step.prefix_error_flags.as_bytes()[(j - 1) as usize] == b'1')
    }
}

/// Runs a full session and records every step.
pub fn run_session(config: &SessionConfig) -> Result<Transcript> {
    let mut runner = SessionRunner::new(config)?;
    let mut steps = Vec::with_capacity(config.horizon as usize);
    while !runner.is_done() {
        let outcome = runner.step()?;
        steps.push(StepRecord::from_outcome(&outcome));
    }
    Ok(Transcript {
        config: config.clone(),
        source_bits: bit_string(runner.source_bits()),
        arrival_times: runner.arrival_times().to_vec(),
        steps,
    })
}

/// Re-decodes recorded channel outputs and checks every recorded estimate.
pub fn replay(codec: CodecConfig, common_seed: u64, steps: &[StepRecord]) -> Result<Vec<BigUint>> {
    let mut decoder = Decoder::new(codec, common_seed)?;
    let mut b = 0;
    let mut estimates = Vec::with_capacity(steps.len());
    for record in steps {
        if record.b < b {
            return Err(Error::Protocol(format!("bit count decreases at t = {}", record.t)));
        }
        decoder.arrive(record.b - b);
        b = record.b;
        decoder.step_with_branch(record.y == 1, Some(record.branch))?;
        let estimate = decoder.estimate()?;
        let k = estimate.bin_index.to_str_radix(10);
        if k != record.k_median {
            return Err(Error::Protocol(format!(
                "replay diverges at t = {}: decoded {k}, recorded {}",
                record.t, record.k_median
            )));
        }
        estimates.push(estimate.bin_index);
    }
    Ok(estimates)
}
