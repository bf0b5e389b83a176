//! Closed-loop stabilization of `Z_{t+1} = A Z_t + W_t + U_t` over BSC(p).
//!
//! Gains are quoted per channel use: with budget `n` channel uses per plant
//! step, the plant gain per step is `A = alpha^n`, and one source bit is sent
//! per plant step.
//!
//! The observer streams the binary digits of the message point
//! `phi_t = (S_t / A^t + G) / (2G)`, where `S_t` is the state the plant would
//! have without control and `G = Delta + W / (A - 1)`. The controller applies
//! `U_t = -A Zhat_t` with `Zhat_t = A^t 2G (m_t - m_{t-1})`, `m_t` being the
//! midpoint of the decoded prefix and `m_{-1} = 1/2`. By induction
//! `Z_t = A^t 2G (phi_t - m_{t-1})`, which is how states are evaluated here:
//! in the log domain, from exact integer prefix differences, so that neither
//! `A^t` nor `2^-t` ever has to be represented on its own.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::session::SessionSeeds;
use crate::codec::{bsc_transmit, first_error, CodecConfig, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::exponent::{capacity, ExponentSolver};
use crate::logmath::log2_biguint;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum InitialState {
    /// `Z_0` uniform on `[-Delta, Delta]`.
    #[default]
    Uniform,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceLaw {
    #[default]
    Uniform,
    /// `W_t = +-W` with equal probability.
    Rademacher,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Open-loop gain per channel use, `> 1`.
    pub alpha: f64,
    pub delta: f64,
    pub w: f64,
    pub eta: f64,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub disturbance: DisturbanceLaw,
}

impl PlantParams {
    pub fn new(alpha: f64, delta: f64, w: f64, eta: f64) -> Result<Self> {
        let plant = Self {
            alpha,
            delta,
            w,
            eta,
            initial: InitialState::Uniform,
            disturbance: DisturbanceLaw::Uniform,
        };
        plant.validate()?;
        Ok(plant)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("gain {} must exceed 1", self.alpha)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidParameter(format!("initial bound {} must be positive", self.delta)));
        }
        if !(self.w >= 0.0) {
            return Err(Error::InvalidParameter(format!("disturbance bound {} is negative", self.w)));
        }
        if !(self.eta >= 1.0) {
            return Err(Error::InvalidParameter(format!("moment order {} below 1", self.eta)));
        }
        if let InitialState::Fixed(z0) = self.initial {
            if !(z0.abs() <= self.delta) {
                return Err(Error::InvalidParameter(format!("initial state {z0} outside [-Delta, Delta]")));
            }
        }
        Ok(())
    }

    /// Gain per plant step.
    pub fn step_gain(&self, n: u64) -> f64 {
        self.alpha.powf(n as f64)
    }

    /// `G = Delta + W / (A - 1)`.
    pub fn gamma(&self, n: u64) -> f64 {
        self.delta + self.w / (self.step_gain(n) - 1.0)
    }
}

/// `(sign, log2 |int + frac|)` for a big integer plus a small real part.
fn signed_log2(int: &BigInt, frac: f64) -> (f64, f64) {
    let value = if int.bits() <= 60 {
        Some(int.to_f64().expect("small integer") + frac)
    } else {
        None
    };
    match value {
        Some(v) if v == 0.0 => (0.0, f64::NEG_INFINITY),
        Some(v) => (v.signum(), v.abs().log2()),
        None => {
            let sign = if int.sign() == Sign::Minus { -1.0 } else { 1.0 };
            (sign, log2_biguint(int.magnitude()))
        }
    }
}

/// `sign * 2^log2_mag`, saturating to infinity.
fn from_signed_log2((sign, log2_mag): (f64, f64)) -> f64 {
    if sign == 0.0 {
        0.0
    } else {
        sign * log2_mag.exp2()
    }
}

/// Streams the digits of the message point.
#[derive(Clone, Debug)]
pub struct Observer {
    /// Digits committed so far, as an integer of `level` bits.
    committed: BigUint,
    level: u64,
    /// `phi = (committed + rho) 2^-level`; `rho` leaves `[0, 1)` only when
    /// disturbances move `phi` across an already committed digit.
    rho: f64,
    refill: Option<ChaCha8Rng>,
    carries: u64,
}

impl Observer {
    /// Observer for the message point `phi_0`.
    pub fn new(phi: f64, refill: Option<ChaCha8Rng>) -> Result<Self> {
        if !(0.0..1.0).contains(&phi) {
            return Err(Error::ModelViolation(format!("message point {phi} outside [0, 1)")));
        }
        Ok(Self {
            committed: BigUint::zero(),
            level: 0,
            rho: phi,
            refill,
            carries: 0,
        })
    }

    /// Commits and returns the next digit.
    pub fn emit_bit(&mut self) -> bool {
        let doubled = 2.0 * self.rho;
        if !(0.0..2.0).contains(&doubled) {
            self.carries += 1;
        }
        let bit = doubled >= 1.0;
        self.rho = doubled - bit as u8 as f64;
        if let Some(rng) = self.refill.as_mut() {
            // keeps 52 random digits below the committed ones
            if rng.random::<bool>() {
                self.rho += f64::EPSILON / 2.0;
            }
        }
        self.committed <<= 1u32;
        if bit {
            self.committed += 1u32;
        }
        self.level += 1;
        bit
    }

    /// Moves the message point by `delta_in_cells` cells of width `2^-level`.
    pub fn shift(&mut self, delta_in_cells: f64) {
        self.rho += delta_in_cells;
    }

    pub fn committed(&self) -> &BigUint {
        &self.committed
    }

    pub fn level(&self) -> u64 {
        self.level
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Digits committed while `phi` sat outside the committed cell.
    pub fn carries(&self) -> u64 {
        self.carries
    }
}

/// Midpoint of the decoded prefix `k` of length `j`, i.e. `(2k + 1) / 2^(j+1)`.
#[derive(Clone, Debug, PartialEq)]
struct Midpoint {
    numerator: BigUint,
    level: u64,
}

impl Midpoint {
    fn of_prefix(k: &BigUint, j: u64) -> Self {
        Self {
            numerator: (k << 1u32) + 1u32,
            level: j + 1,
        }
    }
}

/// Controller state: the previous decoded midpoint.
#[derive(Clone, Debug)]
pub struct Controller {
    gain: f64,
    gamma: f64,
    previous: Midpoint,
}

impl Controller {
    pub fn new(gain: f64, gamma: f64) -> Self {
        Self {
            gain,
            gamma,
            previous: Midpoint::of_prefix(&BigUint::zero(), 0),
        }
    }

    /// `(Zhat_t, U_t)` for the prefix `k` of length `j` decoded at plant step `t`.
    pub fn step(&mut self, k: &BigUint, j: u64, t: u64) -> (f64, f64) {
        let current = Midpoint::of_prefix(k, j);
        let level = current.level.max(self.previous.level);
        let a = BigInt::from(&current.numerator << (level - current.level));
        let b = BigInt::from(&self.previous.numerator << (level - self.previous.level));
        let (sign, mag) = signed_log2(&(a - b), 0.0);
        let log_scale = t as f64 * self.gain.log2() + (2.0 * self.gamma).log2() - level as f64;
        let z_hat = from_signed_log2((sign, mag + log_scale));
        self.previous = current;
        (z_hat, -self.gain * z_hat)
    }
}

/// `A^t 2G (phi - m)` where `phi` is held by the observer.
fn state_value(observer: &Observer, m: &Midpoint, gain: f64, gamma: f64, t: u64) -> f64 {
    let level = observer.level().max(m.level);
    let up = level - observer.level();
    let phi_int = BigInt::from(observer.committed() << up);
    let m_int = BigInt::from(&m.numerator << (level - m.level));
    let (sign, mag) = signed_log2(&(phi_int - m_int), observer.rho() * (up as f64).exp2());
    let log_scale = t as f64 * gain.log2() + (2.0 * gamma).log2() - level as f64;
    from_signed_log2((sign, mag + log_scale))
}

/// Scripted decoding error: at plant step `step`, the decoded prefix has its
/// `bit`-th digit flipped before reaching the controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub step: u64,
    pub bit: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    pub plant: PlantParams,
    pub codec: CodecConfig,
    /// Channel uses per plant step.
    pub n: u64,
    /// Plant steps.
    pub horizon: u64,
    /// Runs stop once `|Z| > ceiling`.
    pub ceiling: f64,
    pub seeds: SessionSeeds,
    #[serde(default)]
    pub record_steps: bool,
    #[serde(default)]
    pub injection: Option<Injection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlStep {
    pub t: u64,
    pub z: f64,
    pub z_hat: f64,
    pub u: f64,
    pub decoded_len: u64,
    pub prefix_correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlTrajectory {
    /// Present when `record_steps` is set.
    pub steps: Vec<ControlStep>,
    /// `|Z_t|` for every reached plant step, `Z_0` included.
    pub abs_z: Vec<f64>,
    pub sup_abs_z: f64,
    pub diverged: bool,
    pub carries: u64,
}

impl ControlTrajectory {
    /// Mean of `|Z_t|^eta` over `t` in `range`.
    pub fn moment(&self, eta: f64, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.abs_z[range];
        slice.iter().map(|z| z.powf(eta)).sum::<f64>() / slice.len().max(1) as f64
    }
}

pub fn simulate_closed_loop(config: &ControlConfig) -> Result<ControlTrajectory> {
    config.plant.validate()?;
    config.codec.validate()?;
    if config.n == 0 {
        return Err(Error::InvalidParameter("budget n must be at least 1".into()));
    }
    let plant = config.plant;
    let gain = plant.step_gain(config.n);
    let gamma = plant.gamma(config.n);
    if !(gain.is_finite() && gamma.is_finite()) {
        return Err(Error::InvalidParameter("plant gain overflows".into()));
    }
    let mut source = ChaCha8Rng::seed_from_u64(config.seeds.source);
    let mut channel = ChaCha8Rng::seed_from_u64(config.seeds.channel);

    let z0 = match plant.initial {
        InitialState::Uniform => plant.delta * (2.0 * source.random::<f64>() - 1.0),
        InitialState::Fixed(z0) => z0,
    };
    let phi = (z0 + gamma) / (2.0 * gamma);
    // with W = 0 and a uniform start, phi is uniform and its later digits are fair coins
    let refill = (plant.w == 0.0 && plant.initial == InitialState::Uniform)
        .then(|| ChaCha8Rng::seed_from_u64(crate::codec::session::splitmix64(config.seeds.source)));
    let mut observer = Observer::new(phi, refill)?;
    let mut encoder = Encoder::new(config.codec, config.seeds.common)?;
    let mut decoder = Decoder::new(config.codec, config.seeds.common)?;
    let mut controller = Controller::new(gain, gamma);
    let mut previous = Midpoint::of_prefix(&BigUint::zero(), 0);

    let mut abs_z = Vec::with_capacity(config.horizon as usize + 1);
    let mut steps = Vec::new();
    let mut z = state_value(&observer, &previous, gain, gamma, 0);
    abs_z.push(z.abs());
    let mut diverged = false;

    for t in 0..config.horizon {
        let bit = observer.emit_bit();
        encoder.arrive(&[bit]);
        decoder.arrive(1);
        for _ in 0..config.n {
            let (x, plan) = encoder.step()?;
            let y = bsc_transmit(x, &mut channel, config.codec.channel);
            encoder.feedback(&plan, y)?;
            decoder.step(y)?;
        }
        let estimate = decoder.estimate()?;
        let j = estimate.resolution;
        let mut k = estimate.bin_index;
        if let Some(inj) = config.injection {
            if inj.step == t && inj.bit >= 1 && inj.bit <= j {
                k ^= BigUint::from(1u32) << (j - inj.bit);
            }
        }
        let prefix_correct = first_error(&k, observer.committed(), j).is_none();
        let (z_hat, u) = controller.step(&k, j, t);
        if config.record_steps {
            steps.push(ControlStep {
                t,
                z,
                z_hat,
                u,
                decoded_len: j,
                prefix_correct,
            });
        }
        previous = Midpoint::of_prefix(&k, j);

        if plant.w > 0.0 {
            let w = match plant.disturbance {
                DisturbanceLaw::Uniform => plant.w * (2.0 * source.random::<f64>() - 1.0),
                DisturbanceLaw::Rademacher => {
                    if source.random::<bool>() {
                        plant.w
                    } else {
                        -plant.w
                    }
                }
            };
            // phi moves by A^-(t+1) W / (2G), i.e. by this many cells of width 2^-level
            let log_cells = observer.level() as f64 - (t + 1) as f64 * gain.log2() - (2.0 * gamma).log2();
            observer.shift(w * log_cells.exp2());
        }
        z = state_value(&observer, &previous, gain, gamma, t + 1);
        if !z.is_finite() || z.abs() > config.ceiling {
            diverged = true;
            abs_z.push(if z.is_finite() { z.abs() } else { f64::INFINITY });
            break;
        }
        abs_z.push(z.abs());
    }
    let sup_abs_z = abs_z.iter().copied().fold(0.0, f64::max);
    Ok(ControlTrajectory {
        steps,
        abs_z,
        sup_abs_z,
        diverged,
        carries: observer.carries(),
    })
}

/// Stability judgement pooled over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub sup_abs_z: f64,
    /// Pooled mean of `|Z_t|^eta` over the first / second half of the horizon.
    pub first_half: f64,
    pub second_half: f64,
    pub moment_ratio: f64,
    pub diverged_runs: u64,
    pub runs: u64,
}

/// Growth allowed between the two half-horizon moments.
pub const MOMENT_GROWTH_LIMIT: f64 = 1.5;

/// Runs `seeds` trials and applies the windowed-moment and ceiling tests.
pub fn judge_stability(config: &ControlConfig, master_seed: u64, seeds: u64) -> Result<StabilityVerdict> {
    let runs: Vec<ControlTrajectory> = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let mut c = config.clone();
            c.seeds = SessionSeeds::derive(master_seed, i);
            c.record_steps = false;
            simulate_closed_loop(&c)
        })
        .collect::<Result<_>>()?;
    let half = (config.horizon as usize).div_ceil(2);
    let mut first = 0.0;
    let mut second = 0.0;
    let mut first_count = 0usize;
    let mut second_count = 0usize;
    let mut diverged = 0;
    let mut sup: f64 = 0.0;
    for run in &runs {
        sup = sup.max(run.sup_abs_z);
        if run.diverged {
            diverged += 1;
            continue;
        }
        let len = run.abs_z.len() - 1;
        first += run.moment(config.plant.eta, 0..half) * half as f64;
        first_count += half;
        second += run.moment(config.plant.eta, half..len) * (len - half) as f64;
        second_count += len - half;
    }
    let first = first / first_count.max(1) as f64;
    let second = second / second_count.max(1) as f64;
    let moment_ratio = if first > 0.0 { second / first } else { f64::INFINITY };
    let stable = diverged == 0 && sup <= config.ceiling && second <= MOMENT_GROWTH_LIMIT * first;
    Ok(StabilityVerdict {
        stable,
        sup_abs_z: sup,
        first_half: first,
        second_half: second,
        moment_ratio,
        diverged_runs: diverged,
        runs: seeds,
    })
}

/// Settings of the empirical frontier search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub eta: f64,
    /// Candidate `log2 alpha` values as fractions of capacity, besides `R(p)`.
    pub capacity_fractions: Vec<f64>,
    /// Budgets tried per gain: `n = floor(theta / log2 alpha)`.
    pub thetas: Vec<f64>,
    pub horizon: u64,
    pub seeds: u64,
    /// Ceiling in units of `Delta`.
    pub ceiling_factor: f64,
    pub delta: f64,
    pub master_seed: u64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            eta: 2.0,
            capacity_fractions: (1..=9).map(|i| i as f64 / 10.0).collect(),
            thetas: vec![0.5, 0.75, 0.9],
            horizon: 200,
            seeds: 10,
            ceiling_factor: 1e3,
            delta: 1.0,
            master_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub p: f64,
    /// `2^R(p)`.
    pub alpha_analytic: f64,
    /// `2^C(p)`.
    pub alpha_capacity: f64,
    /// Largest grid gain judged stable; 1 when none is.
    pub alpha_empirical: f64,
    /// Budget at which `alpha_empirical` was stable (0 when none).
    pub n_empirical: u64,
}

/// Empirical stabilizability frontier, one point per crossover probability.
pub fn stability_sweep(ps: &[f64], settings: &SweepSettings) -> Result<Vec<FrontierPoint>> {
    let solver = ExponentSolver::default();
    ps.iter()
        .map(|&p| {
            let rate = solver.rate_bound(p, settings.eta)?.rate;
            let cap = capacity(p)?;
            let mut grid: Vec<f64> = settings.capacity_fractions.iter().map(|f| f * cap).collect();
            grid.push(rate);
            grid.sort_by(|a, b| b.total_cmp(a));
            grid.dedup();
            let mut found = (1.0, 0);
            'gains: for &log_alpha in &grid {
                for &theta in &settings.thetas {
                    let n = (theta / log_alpha).floor() as u64;
                    if n == 0 {
                        continue;
                    }
                    let lambda = solver.default_lambda(n, p)?;
                    let config = ControlConfig {
                        plant: PlantParams::new(log_alpha.exp2(), settings.delta, 0.0, settings.eta)?,
                        codec: CodecConfig::new(p, lambda)?,
                        n,
                        horizon: settings.horizon,
                        ceiling: settings.ceiling_factor * settings.delta,
                        seeds: SessionSeeds::derive(settings.master_seed, 0),
                        record_steps: false,
                        injection: None,
                    };
                    if judge_stability(&config, settings.master_seed, settings.seeds)?.stable {
                        found = (log_alpha.exp2(), n);
                        break 'gains;
                    }
                }
            }
            Ok(FrontierPoint {
                p,
                alpha_analytic: rate.exp2(),
                alpha_capacity: cap.exp2(),
                alpha_empirical: found.0,
                n_empirical: found.1,
            })
        })
        .collect()
}
