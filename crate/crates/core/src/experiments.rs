//! Monte Carlo drivers and table builders behind the command-line harness.
//!
//! Every driver fans trials out with rayon and aggregates with sums and
//! counts only, so results do not depend on the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::arrivals::ArrivalSchedule;
use crate::codec::session::{splitmix64, SessionConfig, SessionRunner, SessionSeeds, StateCheck};
use crate::codec::CodecConfig;
use crate::dyadic::DyadicPoint;
use crate::error::{Error, Result};
use crate::exponent::{capacity, psi, ExponentSolver};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorProbConfig {
    pub codec: CodecConfig,
    pub schedule: ArrivalSchedule,
    pub horizon: u64,
    pub trials: u64,
    pub master_seed: u64,
}

/// Prefix-error counts over trials.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub horizon: u64,
    pub trials: u64,
    /// `errors[t-1][j-1]`: trials whose first `j` estimates are wrong after
    /// `t` channel uses.
    pub errors: Vec<Vec<u64>>,
    /// `eligible[t-1][j-1]`: trials with `b(t) >= j`.
    pub eligible: Vec<Vec<u64>>,
    /// Indexed by `d = t - T_i` over all `(t, i)` with `b(t) > i`.
    pub delay_errors: Vec<u64>,
    pub delay_eligible: Vec<u64>,
}

fn add_into(dst: &mut Vec<u64>, src: &[u64]) {
    if dst.len() < src.len() {
        dst.resize(src.len(), 0);
    }
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn bump(v: &mut Vec<u64>, i: usize, by: u64) {
    if v.len() <= i {
        v.resize(i + 1, 0);
    }
    v[i] += by;
}

impl ErrorTable {
    fn empty(horizon: u64) -> Self {
        Self {
            horizon,
            trials: 0,
            errors: vec![Vec::new(); horizon as usize],
            eligible: vec![Vec::new(); horizon as usize],
            delay_errors: Vec::new(),
            delay_eligible: Vec::new(),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.trials += other.trials;
        for (a, b) in self.errors.iter_mut().zip(&other.errors) {
            add_into(a, b);
        }
        for (a, b) in self.eligible.iter_mut().zip(&other.eligible) {
            add_into(a, b);
        }
        add_into(&mut self.delay_errors, &other.delay_errors);
        add_into(&mut self.delay_eligible, &other.delay_eligible);
        self
    }

    /// `(errors, eligible)` for prefix length `j` after `t` uses.
    pub fn counts(&self, t: u64, j: u64) -> (u64, u64) {
        let get = |v: &Vec<Vec<u64>>| {
            v.get((t as usize).wrapping_sub(1))
                .and_then(|row| row.get((j as usize).wrapping_sub(1)))
                .copied()
                .unwrap_or(0)
        };
        (get(&self.errors), get(&self.eligible))
    }

    /// Empirical `P(s_hat_1^j(t) != s_1^j)` among eligible trials.
    pub fn rate(&self, t: u64, j: u64) -> Option<f64> {
        let (e, n) = self.counts(t, j);
        (n > 0).then(|| e as f64 / n as f64)
    }

    /// Pooled conditional error at delay `d = t - T_i`.
    pub fn delay_rate(&self, d: u64) -> Option<f64> {
        let n = *self.delay_eligible.get(d as usize)?;
        (n > 0).then(|| self.delay_errors[d as usize] as f64 / n as f64)
    }

    /// Largest prefix length with any eligible trial.
    pub fn max_prefix(&self) -> u64 {
        self.eligible.iter().map(|r| r.len() as u64).max().unwrap_or(0)
    }
}

fn trial_table(config: &ErrorProbConfig, trial: u64) -> Result<ErrorTable> {
    let session = SessionConfig {
        codec: config.codec,
        schedule: config.schedule.clone(),
        horizon: config.horizon,
        seeds: SessionSeeds::derive(config.master_seed, trial),
        check: StateCheck::Summary,
    };
    let mut runner = SessionRunner::new(&session)?;
    let mut table = ErrorTable::empty(config.horizon);
    table.trials = 1;
    while !runner.is_done() {
        let o = runner.step()?;
        let row = (o.t - 1) as usize;
        let fe = o.first_error.unwrap_or(u64::MAX);
        table.eligible[row] = vec![1; o.b as usize];
        table.errors[row] = (1..=o.b).map(|j| (fe <= j) as u64).collect();
        let times = runner.arrival_times();
        for i in 1..o.b {
            let d = (o.t - times[(i - 1) as usize]) as usize;
            bump(&mut table.delay_eligible, d, 1);
            bump(&mut table.delay_errors, d, (fe <= i) as u64);
        }
    }
    Ok(table)
}

/// Monte Carlo prefix-error probabilities.
pub fn error_probability(config: &ErrorProbConfig) -> Result<ErrorTable> {
    config.codec.validate()?;
    config.schedule.validate()?;
    (0..config.trials)
        .into_par_iter()
        .map(|trial| trial_table(config, trial))
        .try_reduce(|| ErrorTable::empty(config.horizon), |a, b| Ok(a.merge(b)))
}

/// Running mean and variance (Welford), mergeable across workers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanAccumulator {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl MeanAccumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: Self) -> Self {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / count as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.count as f64 * other.count as f64) / count as f64;
        Self { count, mean, m2 }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn standard_error(&self) -> f64 {
        (self.variance() / self.count.max(1) as f64).sqrt()
    }
}

/// Settings shared by the tail-statistic diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailDiagnosticConfig {
    pub codec: CodecConfig,
    pub schedule: ArrivalSchedule,
    pub horizon: u64,
    pub sessions: u64,
    pub master_seed: u64,
}

/// Per-step moment of the tail statistic at a grid point drawn independently
/// of the message: the mean of `(xi_{t+1}(x) / xi_t(x))^lambda`.
///
/// Each session fixes one point `x = k 2^-i` with `i` uniform on `1..=max_level`;
/// steps count once the posterior resolution has reached `i`.
pub fn tail_ratio_moment(config: &TailDiagnosticConfig, max_level: u64) -> Result<MeanAccumulator> {
    let lambda = config.codec.lambda;
    (0..config.sessions)
        .into_par_iter()
        .map(|s| {
            let seeds = SessionSeeds::derive(config.master_seed, s);
            let mut pick = ChaCha8Rng::seed_from_u64(splitmix64(seeds.source ^ 0x7a11));
            let level = pick.random_range(1..=max_level.max(1));
            let k = pick.random_range(1..(1u64 << level));
            let x = DyadicPoint::from_index(k, level);
            let session = SessionConfig {
                codec: config.codec,
                schedule: config.schedule.clone(),
                horizon: config.horizon,
                seeds,
                check: StateCheck::Summary,
            };
            let mut runner = SessionRunner::new(&session)?;
            let mut acc = MeanAccumulator::default();
            while !runner.is_done() {
                let before = runner.decoder().state().posterior().tail_stat(&x);
                let ready = runner.decoder().state().resolution() >= level;
                runner.step()?;
                if ready && before.is_finite() {
                    let after = runner.decoder().state().posterior().tail_stat(&x);
                    acc.push((lambda * (after - before)).exp2());
                }
            }
            Ok(acc)
        })
        .try_reduce(MeanAccumulator::default, |a, b| Ok(a.merge(b)))
}

/// `sum_k xi^lambda(k 2^-i)` just before bit `i` arrives, for `i = 1..=max_level`.
///
/// Requires a periodic schedule, whose epoch starts are deterministic.
pub fn tail_sum_at_epochs(config: &TailDiagnosticConfig, max_level: u64) -> Result<Vec<MeanAccumulator>> {
    let n = match config.schedule {
        ArrivalSchedule::Periodic { n } => n,
        _ => return Err(Error::InvalidParameter("tail sums need a periodic schedule".into())),
    };
    let lambda = config.codec.lambda;
    let horizon = n * (max_level - 1);
    let zero = || vec![MeanAccumulator::default(); max_level as usize];
    (0..config.sessions)
        .into_par_iter()
        .map(|s| {
            let session = SessionConfig {
                codec: config.codec,
                schedule: config.schedule.clone(),
                horizon,
                seeds: SessionSeeds::derive(config.master_seed, s),
                check: StateCheck::Summary,
            };
            let mut runner = SessionRunner::new(&session)?;
            let mut out = zero();
            for i in 1..=max_level {
                // epoch start T_i = n (i - 1) + 1, so the sum is read at t = n (i - 1)
                while runner.t() < n * (i - 1) {
                    runner.step()?;
                }
                let posterior = runner.decoder().state().posterior();
                let sum: f64 = (1u64..(1 << i))
                    .map(|k| (lambda * posterior.tail_stat(&DyadicPoint::from_index(k, i))).exp2())
                    .sum();
                out[(i - 1) as usize].push(sum);
            }
            Ok(out)
        })
        .try_reduce(zero, |a, b| Ok(a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect()))
}

/// `1 / (1 - 2^{-(psi(lambda) - 1/n) n})`; `None` when `psi(lambda) <= 1/n`,
/// where no bound holds.
pub fn tail_sum_bound(lambda: f64, n: u64, p: f64) -> Option<f64> {
    let margin = (psi(lambda, p) - 1.0 / n as f64) * n as f64;
    (margin > 0.0).then(|| 1.0 / (1.0 - (-margin).exp2()))
}

/// One row of the exponent sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentRow {
    pub p: f64,
    pub n: u64,
    pub inv_n: f64,
    /// Empty when no positive exponent exists.
    pub beta: Option<f64>,
    pub lambda_star: Option<f64>,
    pub residual: Option<f64>,
    pub max_log_alpha: f64,
    pub alpha: f64,
}

pub fn exponent_sweep(ps: &[f64], ns: &[u64], eta: f64, solver: &ExponentSolver) -> Result<Vec<ExponentRow>> {
    let mut rows = Vec::with_capacity(ps.len() * ns.len());
    for &p in ps {
        for &n in ns {
            let (beta, lambda_star, residual) = match solver.beta_of_n(n, p) {
                Ok(sol) => (Some(sol.beta), Some(sol.lambda_star), Some(sol.residual)),
                Err(Error::NoPositiveExponent { .. }) => (None, None, None),
                Err(e) => return Err(e),
            };
            let bound = solver.max_log_alpha(n, eta, p)?;
            rows.push(ExponentRow {
                p,
                n,
                inv_n: 1.0 / n as f64,
                beta,
                lambda_star,
                residual,
                max_log_alpha: bound.log_alpha,
                alpha: bound.log_alpha.exp2(),
            });
        }
    }
    Ok(rows)
}

/// One row of the gain-versus-crossover table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub p: f64,
    pub eta: f64,
    pub rate: f64,
    pub residual: f64,
    pub capacity: f64,
    pub alpha_analytic: f64,
    pub alpha_capacity: f64,
    pub alpha_empirical: Option<f64>,
    pub n_empirical: Option<u64>,
}

pub fn alpha_vs_p(ps: &[f64], eta: f64, solver: &ExponentSolver) -> Result<Vec<AlphaRow>> {
    ps.iter()
        .map(|&p| {
            let r = solver.rate_bound(p, eta)?;
            let c = capacity(p)?;
            Ok(AlphaRow {
                p,
                eta,
                rate: r.rate,
                residual: r.residual,
                capacity: c,
                alpha_analytic: r.rate.exp2(),
                alpha_capacity: c.exp2(),
                alpha_empirical: None,
                n_empirical: None,
            })
        })
        .collect()
}

/// One row of the error-probability table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub t: u64,
    pub j: u64,
    pub errors: u64,
    pub trials: u64,
    pub empirical_error: f64,
    pub bound_value: Option<f64>,
}

/// Fitted `kappa 2^{-beta (t - n (j - 1))}` overlay for one prefix length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundFit {
    pub beta: f64,
    pub log2_kappa: f64,
    /// Channel uses already elapsed when bit `j` arrives.
    pub offset: f64,
}

impl BoundFit {
    pub fn value(&self, t: u64) -> f64 {
        (self.log2_kappa - self.beta * (t as f64 - self.offset)).exp2()
    }
}

/// Fits `log2 kappa` on the first third of the `t` range, holding the slope at `-beta`.
pub fn fit_bound(table: &ErrorTable, j: u64, n: u64, beta: f64) -> Option<BoundFit> {
    let offset = (n * j.saturating_sub(1)) as f64;
    let first = n * j.saturating_sub(1) + 1;
    let last = first + (table.horizon.saturating_sub(first)) / 3;
    let pts: Vec<(f64, f64)> = (first..=last)
        .filter_map(|t| table.rate(t, j).map(|r| (t as f64 - offset, r)))
        .collect();
    crate::exponent::fit_log_kappa(&pts, beta).map(|log2_kappa| BoundFit { beta, log2_kappa, offset })
}

/// Flattens a table into rows for prefix lengths `1..=max_j`.
pub fn error_rows(table: &ErrorTable, max_j: u64, fits: &[Option<BoundFit>]) -> Vec<ErrorRow> {
    let mut rows = Vec::new();
    for t in 1..=table.horizon {
        for j in 1..=max_j {
            let (errors, trials) = table.counts(t, j);
            if trials == 0 {
                continue;
            }
            let bound_value = fits.get((j - 1) as usize).copied().flatten().map(|f| f.value(t));
            rows.push(ErrorRow {
                t,
                j,
                errors,
                trials,
                empirical_error: errors as f64 / trials as f64,
                bound_value,
            });
        }
    }
    rows
}

/// Conditional error by delay `d = t - T_i`, pooled over prefixes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayRow {
    pub delay: u64,
    pub errors: u64,
    pub pairs: u64,
    pub empirical_error: f64,
}

pub fn delay_rows(table: &ErrorTable) -> Vec<DelayRow> {
    table
        .delay_eligible
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(d, &n)| DelayRow {
            delay: d as u64,
            errors: table.delay_errors[d],
            pairs: n,
            empirical_error: table.delay_errors[d] as f64 / n as f64,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn periodic(p: f64, n: u64, horizon: u64, trials: u64) -> ErrorProbConfig {
        ErrorProbConfig {
            codec: CodecConfig::new(p, crate::exponent::default_lambda(n, p).unwrap()).unwrap(),
            schedule: ArrivalSchedule::periodic(n).unwrap(),
            horizon,
            trials,
            master_seed: 17,
        }
    }

    #[test]
    fn zero_trials_give_empty_counts() {
        let table = error_probability(&periodic(0.1, 5, 20, 0)).unwrap();
        assert_eq!(table.trials, 0);
        assert!(error_rows(&table, 3, &[]).is_empty());
        assert!(delay_rows(&table).is_empty());
    }

    #[test]
    fn counts_are_consistent() {
        let table = error_probability(&periodic(0.1, 5, 40, 200)).unwrap();
        assert_eq!(table.trials, 200);
        for t in 1..=40 {
            let b = (t - 1) / 5 + 1;
            for j in 1..=b {
                let (e, n) = table.counts(t, j);
                assert_eq!(n, 200);
                assert!(e <= n);
                // a wrong shorter prefix makes every longer prefix wrong
                if j > 1 {
                    assert!(table.counts(t, j - 1).0 <= e);
                }
            }
            assert_eq!(table.counts(t, b + 1).1, 0);
        }
        let early = table.rate(6, 1).unwrap();
        let late = table.rate(40, 1).unwrap();
        assert!(late < early);
    }

    #[test]
    fn worker_count_does_not_matter() {
        let config = periodic(0.1, 4, 30, 64);
        let a = error_probability(&config).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| error_probability(&config)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn delay_table_pools_arrived_prefixes() {
        let config = ErrorProbConfig {
            schedule: ArrivalSchedule::uniform(3, 7).unwrap(),
            ..periodic(0.1, 7, 40, 50)
        };
        let table = error_probability(&config).unwrap();
        assert_eq!(table.delay_eligible.first().copied().unwrap_or(0), 0);
        assert!(delay_rows(&table).iter().all(|r| r.errors <= r.pairs && r.delay >= 3));
    }

    #[test]
    fn accumulator_merge_matches_sequential() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut all = MeanAccumulator::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = MeanAccumulator::default();
        let mut b = MeanAccumulator::default();
        xs[..30].iter().for_each(|&x| a.push(x));
        xs[30..].iter().for_each(|&x| b.push(x));
        let m = a.merge(b);
        assert_eq!(m.count, 100);
        assert!((m.mean - all.mean).abs() < 1e-14);
        assert!((m.variance() - all.variance()).abs() < 1e-12);
    }

    #[test]
    fn tail_sum_at_first_epoch_is_uniform_value() {
        let config = TailDiagnosticConfig {
            codec: CodecConfig::new(0.1, 0.4).unwrap(),
            schedule: ArrivalSchedule::periodic(10).unwrap(),
            horizon: 0,
            sessions: 3,
            master_seed: 1,
        };
        let sums = tail_sum_at_epochs(&config, 3).unwrap();
        assert!((sums[0].mean - 0.5f64.powf(0.4)).abs() < 1e-12);
        assert_eq!(sums[2].count, 3);
        assert!(tail_sum_bound(0.4, 5, 0.1).is_none());
        assert!(tail_sum_bound(0.43, 10, 0.1).unwrap() > 1.0);
    }

    #[test]
    fn sweep_tables() {
        let solver = ExponentSolver::default();
        let rows = exponent_sweep(&[0.1], &(1..=40).collect::<Vec<_>>(), 2.0, &solver).unwrap();
        assert_eq!(rows.len(), 40);
        assert!(rows.iter().any(|r| r.alpha > 1.0));
        assert!(rows[0].beta.is_none() && rows[0].alpha == 1.0);
        let rows = exponent_sweep(&[0.499], &(1..=40).collect::<Vec<_>>(), 2.0, &solver).unwrap();
        assert!(rows.iter().all(|r| (r.alpha - 1.0).abs() < 1e-3));
        let rows = alpha_vs_p(&[0.05, 0.2], 2.0, &solver).unwrap();
        assert!(rows.iter().all(|r| 1.0 < r.alpha_analytic && r.alpha_analytic <= r.alpha_capacity));
    }
}
