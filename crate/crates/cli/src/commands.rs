use std::path::Path;

use causal_pm::codec::arrivals::ArrivalSchedule;
use causal_pm::codec::session::SessionSeeds;
use causal_pm::codec::CodecConfig;
use causal_pm::control::{
    judge_stability, simulate_closed_loop, stability_sweep, ControlConfig, FrontierPoint, PlantParams, SweepSettings,
};
use causal_pm::experiments::{
    alpha_vs_p, error_probability, error_rows, exponent_sweep, fit_bound, AlphaRow, ErrorProbConfig, ErrorTable,
    ExponentRow,
};
use causal_pm::exponent::{fit_log_kappa, ExponentSolver};
use serde::Serialize;

use crate::config::{ControlMode, ExperimentConfig, LambdaMode, LambdaName, ScheduleKind};
use crate::error::{CliError, Result};
use crate::output::{write_csv, CsvRow, OutputFile};

/// Everything a command needs besides its config.
pub struct RunContext<'a> {
    pub out_dir: &'a Path,
    pub config_hash: &'a str,
}

impl RunContext<'_> {
    fn write<T: CsvRow>(&self, name: &str, seeds: &str, rows: &[T]) -> Result<OutputFile> {
        write_csv(&self.out_dir.join(name), self.config_hash, seeds, rows)
    }
}

fn seeds_label(master: u64, count: u64) -> String {
    format!("master:{master}/trials:{count}")
}

impl CsvRow for ExponentRow {
    const COLUMNS: &'static [&'static str] =
        &["p", "n", "inv_n", "beta", "lambda_star", "residual", "max_log_alpha", "alpha"];
}

impl CsvRow for AlphaRow {
    const COLUMNS: &'static [&'static str] = &[
        "p",
        "eta",
        "rate",
        "residual",
        "capacity",
        "alpha_analytic",
        "alpha_capacity",
        "alpha_empirical",
        "n_empirical",
    ];
}

impl CsvRow for FrontierPoint {
    const COLUMNS: &'static [&'static str] = &["p", "alpha_analytic", "alpha_capacity", "alpha_empirical", "n_empirical"];
}

pub fn exponent_sweep_cmd(config: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<OutputFile>> {
    let rows = exponent_sweep(&config.ps()?, &config.ns()?, config.eta()?, &ExponentSolver::default())?;
    Ok(vec![ctx.write("exponent-sweep.csv", "none", &rows)?])
}

fn sweep_settings(config: &ExperimentConfig) -> Result<SweepSettings> {
    let defaults = SweepSettings::default();
    Ok(SweepSettings {
        eta: config.eta()?,
        capacity_fractions: match &config.capacity_fractions {
            Some(g) => g.values()?,
            None => defaults.capacity_fractions,
        },
        thetas: match &config.thetas {
            Some(g) => g.values()?,
            None => defaults.thetas,
        },
        horizon: config.horizon(defaults.horizon),
        seeds: config.trials(defaults.seeds),
        ceiling_factor: config.ceiling.unwrap_or(defaults.ceiling_factor),
        delta: config.delta.unwrap_or(defaults.delta),
        master_seed: config.seed(),
    })
}

pub fn alpha_vs_p_cmd(config: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<OutputFile>> {
    let ps = config.ps()?;
    let mut rows = alpha_vs_p(&ps, config.eta()?, &ExponentSolver::default())?;
    let mut seeds = "none".to_string();
    if config.empirical.unwrap_or(false) {
        let settings = sweep_settings(config)?;
        seeds = seeds_label(settings.master_seed, settings.seeds);
        for (row, point) in rows.iter_mut().zip(stability_sweep(&ps, &settings)?) {
            row.alpha_empirical = Some(point.alpha_empirical);
            row.n_empirical = Some(point.n_empirical);
        }
    }
    Ok(vec![ctx.write("alpha-vs-p.csv", &seeds, &rows)?])
}

#[derive(Serialize)]
struct ErrorProbRow {
    p: f64,
    n: u64,
    t: u64,
    j: u64,
    errors: u64,
    trials: u64,
    empirical_error: f64,
    bound_value: Option<f64>,
}

impl CsvRow for ErrorProbRow {
    const COLUMNS: &'static [&'static str] = &["p", "n", "t", "j", "errors", "trials", "empirical_error", "bound_value"];
}

#[derive(Serialize)]
struct DelayCsvRow {
    p: f64,
    n: u64,
    delay: u64,
    errors: u64,
    pairs: u64,
    empirical_error: f64,
    bound_value: Option<f64>,
}

impl CsvRow for DelayCsvRow {
    const COLUMNS: &'static [&'static str] = &["p", "n", "delay", "errors", "pairs", "empirical_error", "bound_value"];
}

/// Schedules to run and the budget whose exponent overlays each one.
fn error_prob_cases(config: &ExperimentConfig) -> Result<Vec<(ArrivalSchedule, u64, LambdaName)>> {
    let name = match &config.lambda {
        Some(LambdaMode::Named(n)) => *n,
        _ => LambdaName::Auto,
    };
    match config.schedule.unwrap_or_default() {
        ScheduleKind::Periodic => {
            if name != LambdaName::Auto {
                return Err(CliError::Config("lambda = \"n_min\" / \"n_max\" needs schedule = \"iid\"".into()));
            }
            config
                .ns()?
                .into_iter()
                .map(|n| Ok((ArrivalSchedule::periodic(n)?, n, name)))
                .collect()
        }
        ScheduleKind::Iid => {
            let (lo, hi) = config
                .n_min
                .zip(config.n_max)
                .ok_or_else(|| CliError::Config("iid schedule needs n_min and n_max".into()))?;
            let schedule = match &config.pmf {
                Some(pmf) => {
                    let s = ArrivalSchedule::IidBounded {
                        n_min: lo,
                        n_max: hi,
                        pmf: pmf.clone(),
                    };
                    s.validate()?;
                    s
                }
                None => ArrivalSchedule::uniform(lo, hi)?,
            };
            let budget = if name == LambdaName::NMin { lo } else { hi };
            Ok(vec![(schedule, budget, name)])
        }
    }
}

fn codec_for(config: &ExperimentConfig, p: f64, budget: u64, solver: &ExponentSolver) -> Result<CodecConfig> {
    let lambda = match &config.lambda {
        Some(LambdaMode::Value(l)) => *l,
        _ => solver.default_lambda(budget, p)?,
    };
    let mut codec = CodecConfig::new(p, lambda)?;
    codec.rule = config.rule.unwrap_or_default();
    codec.comparison = config.comparison.unwrap_or_default();
    Ok(codec)
}

fn delay_rows_with_bound(table: &ErrorTable, p: f64, n: u64, beta: Option<f64>) -> Vec<DelayCsvRow> {
    let rows = causal_pm::experiments::delay_rows(table);
    let fit = beta.and_then(|beta| {
        let first_third = rows.len().div_ceil(3);
        let pts: Vec<(f64, f64)> = rows[..first_third].iter().map(|r| (r.delay as f64, r.empirical_error)).collect();
        fit_log_kappa(&pts, beta).map(|k| (k, beta))
    });
    rows.into_iter()
        .map(|r| DelayCsvRow {
            p,
            n,
            delay: r.delay,
            errors: r.errors,
            pairs: r.pairs,
            empirical_error: r.empirical_error,
            bound_value: fit.map(|(k, beta)| (k - beta * r.delay as f64).exp2()),
        })
        .collect()
}

pub fn error_prob_cmd(config: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<OutputFile>> {
    let solver = ExponentSolver::default();
    let horizon = config.horizon(60);
    let trials = config.trials(1000);
    let mut rows = Vec::new();
    let mut delays = Vec::new();
    for p in config.ps()? {
        for (schedule, budget, name) in error_prob_cases(config)? {
            let table = error_probability(&ErrorProbConfig {
                codec: codec_for(config, p, budget, &solver)?,
                schedule,
                horizon,
                trials,
                master_seed: config.seed(),
            })?;
            let beta = match solver.beta_of_n(budget, p) {
                Ok(sol) => Some(sol.beta),
                Err(causal_pm::Error::NoPositiveExponent { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            let max_j = config.max_j.unwrap_or_else(|| table.max_prefix());
            // the conditional regime's bound is stated per delay, not per t
            let overlay = if name == LambdaName::NMin { None } else { beta };
            let fits: Vec<_> = (1..=max_j)
                .map(|j| overlay.and_then(|beta| fit_bound(&table, j, budget, beta)))
                .collect();
            rows.extend(error_rows(&table, max_j, &fits).into_iter().map(|r| ErrorProbRow {
                p,
                n: budget,
                t: r.t,
                j: r.j,
                errors: r.errors,
                trials: r.trials,
                empirical_error: r.empirical_error,
                bound_value: r.bound_value,
            }));
            if config.conditional.unwrap_or(false) {
                delays.extend(delay_rows_with_bound(&table, p, budget, beta));
            }
        }
    }
    let seeds = seeds_label(config.seed(), trials);
    let mut out = vec![ctx.write("error-prob.csv", &seeds, &rows)?];
    if config.conditional.unwrap_or(false) {
        out.push(ctx.write("error-prob-delay.csv", &seeds, &delays)?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct ControlSummaryRow {
    p: f64,
    n: u64,
    alpha: f64,
    log2_alpha: f64,
    lambda: f64,
    stable: bool,
    sup_abs_z: f64,
    first_half: f64,
    second_half: f64,
    moment_ratio: f64,
    diverged_runs: u64,
    runs: u64,
}

impl CsvRow for ControlSummaryRow {
    const COLUMNS: &'static [&'static str] = &[
        "p",
        "n",
        "alpha",
        "log2_alpha",
        "lambda",
        "stable",
        "sup_abs_z",
        "first_half",
        "second_half",
        "moment_ratio",
        "diverged_runs",
        "runs",
    ];
}

#[derive(Serialize)]
struct TrajectoryRow {
    p: f64,
    n: u64,
    alpha: f64,
    t: u64,
    z: f64,
    z_hat: f64,
    u: f64,
    decoded_len: u64,
    prefix_correct: bool,
}

impl CsvRow for TrajectoryRow {
    const COLUMNS: &'static [&'static str] =
        &["p", "n", "alpha", "t", "z", "z_hat", "u", "decoded_len", "prefix_correct"];
}

pub fn control_sim_cmd(config: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<OutputFile>> {
    let solver = ExponentSolver::default();
    let seeds = config.trials(20);
    let label = seeds_label(config.seed(), seeds);
    if config.mode.unwrap_or_default() == ControlMode::Frontier {
        let settings = sweep_settings(config)?;
        let rows = stability_sweep(&config.ps()?, &settings)?;
        return Ok(vec![ctx.write("control-frontier.csv", &seeds_label(settings.master_seed, settings.seeds), &rows)?]);
    }
    let alphas = config
        .alpha
        .as_ref()
        .ok_or_else(|| CliError::Config("grid mode needs an alpha grid".into()))?
        .values()?;
    let delta = config.delta.unwrap_or(1.0);
    let mut summary = Vec::new();
    let mut steps = Vec::new();
    for p in config.ps()? {
        for n in config.ns()? {
            let codec = codec_for(config, p, n, &solver)?;
            for &alpha in &alphas {
                let plant = PlantParams::new(alpha, delta, config.w.unwrap_or(0.0), config.eta()?)?;
                let control = ControlConfig {
                    plant,
                    codec,
                    n,
                    horizon: config.horizon(500),
                    ceiling: config.ceiling.unwrap_or(1e3) * delta,
                    seeds: SessionSeeds::derive(config.seed(), 0),
                    record_steps: config.record_steps.unwrap_or(false),
                    injection: None,
                };
                let v = judge_stability(&control, config.seed(), seeds)?;
                summary.push(ControlSummaryRow {
                    p,
                    n,
                    alpha,
                    log2_alpha: alpha.log2(),
                    lambda: codec.lambda,
                    stable: v.stable,
                    sup_abs_z: v.sup_abs_z,
                    first_half: v.first_half,
                    second_half: v.second_half,
                    moment_ratio: v.moment_ratio,
                    diverged_runs: v.diverged_runs,
                    runs: v.runs,
                });
                if control.record_steps {
                    let traj = simulate_closed_loop(&control)?;
                    steps.extend(traj.steps.iter().map(|s| TrajectoryRow {
                        p,
                        n,
                        alpha,
                        t: s.t,
                        z: s.z,
                        z_hat: s.z_hat,
                        u: s.u,
                        decoded_len: s.decoded_len,
                        prefix_correct: s.prefix_correct,
                    }));
                }
            }
        }
    }
    let mut out = vec![ctx.write("control-sim.csv", &label, &summary)?];
    if config.record_steps.unwrap_or(false) {
        out.push(ctx.write("control-trajectory.csv", &seeds_label(config.seed(), 1), &steps)?);
    }
    Ok(out)
}
