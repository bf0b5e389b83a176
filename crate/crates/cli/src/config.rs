//! Experiment configuration: one flat TOML table.
//!
//! Grids are arrays or range strings. Integer ranges read `"a..=b"` or
//! `"a..b"`; float ranges read `"a..=b step s"`.

use std::path::Path;

use causal_pm::codec::{PrefixComparison, RandomizationRule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid<T> {
    List(Vec<T>),
    Range(String),
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl Grid<u64> {
    pub fn values(&self) -> Result<Vec<u64>> {
        let values = match self {
            Self::List(v) => v.clone(),
            Self::Range(s) => {
                let parse = |x: &str| x.trim().parse::<u64>().map_err(|e| config_err(format!("range {s:?}: {e}")));
                if let Some((a, b)) = s.split_once("..=") {
                    (parse(a)?..=parse(b)?).collect()
                } else if let Some((a, b)) = s.split_once("..") {
                    (parse(a)?..parse(b)?).collect()
                } else {
                    return Err(config_err(format!("range {s:?} is neither a..=b nor a..b")));
                }
            }
        };
        if values.is_empty() {
            return Err(config_err("empty integer grid"));
        }
        Ok(values)
    }
}

impl Grid<f64> {
    pub fn values(&self) -> Result<Vec<f64>> {
        let values = match self {
            Self::List(v) => v.clone(),
            Self::Range(s) => {
                let parse = |x: &str| x.trim().parse::<f64>().map_err(|e| config_err(format!("range {s:?}: {e}")));
                let (span, step) = s
                    .split_once("step")
                    .ok_or_else(|| config_err(format!("float range {s:?} needs \"a..=b step s\"")))?;
                let (a, b) = span
                    .split_once("..=")
                    .ok_or_else(|| config_err(format!("float range {s:?} needs \"a..=b step s\"")))?;
                let (a, b, step) = (parse(a)?, parse(b)?, parse(step)?);
                if !(step > 0.0) || b < a {
                    return Err(config_err(format!("float range {s:?} is empty or has a nonpositive step")));
                }
                let count = ((b - a) / step + 1e-9).floor() as u64;
                // grid points are rounded to 12 decimals so 0.1 + 0.05 prints as 0.15
                (0..=count).map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12).collect()
            }
        };
        if values.is_empty() {
            return Err(config_err("empty float grid"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(config_err("grid values must be finite"));
        }
        Ok(values)
    }
}

/// `lambda` is a number in `(0, 1]` or names the budget whose `lambda*` to use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaMode {
    Value(f64),
    Named(LambdaName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaName {
    /// `lambda*(n)` for periodic arrivals, `lambda*(n_max)` for iid arrivals.
    Auto,
    NMin,
    NMax,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Periodic,
    Iid,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// Judge every `(alpha, p, n)` grid point.
    #[default]
    Grid,
    /// Empirical frontier per `p`.
    Frontier,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Grid<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Grid<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<LambdaMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RandomizationRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<PrefixComparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_min: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u64>,
    /// Inter-arrival pmf on `n_min..=n_max`; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pmf: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_j: Option<u64>,
    /// Also tabulate errors by delay since arrival.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditional: Option<bool>,
    /// Run the stability sweep for the alpha-vs-p table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ControlMode>,
    /// Per-channel-use plant gains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Grid<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    /// Stability ceiling in units of `delta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ceiling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_steps: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_fractions: Option<Grid<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thetas: Option<Grid<f64>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn eta(&self) -> Result<f64> {
        let eta = self.eta.unwrap_or(2.0);
        if !(eta >= 1.0) {
            return Err(config_err(format!("eta = {eta} must be at least 1")));
        }
        Ok(eta)
    }

    pub fn ps(&self) -> Result<Vec<f64>> {
        let ps = self.p.as_ref().ok_or_else(|| config_err("missing p grid"))?.values()?;
        if let Some(p) = ps.iter().find(|&&p| !(p > 0.0 && p < 0.5)) {
            return Err(config_err(format!("crossover probability {p} outside (0, 1/2)")));
        }
        Ok(ps)
    }

    pub fn ns(&self) -> Result<Vec<u64>> {
        let ns = self.n.as_ref().ok_or_else(|| config_err("missing n grid"))?.values()?;
        if ns.contains(&0) {
            return Err(config_err("budget n must be at least 1"));
        }
        Ok(ns)
    }

    pub fn horizon(&self, default: u64) -> u64 {
        self.horizon.unwrap_or(default)
    }

    pub fn trials(&self, default: u64) -> u64 {
        self.trials.unwrap_or(default)
    }

    /// Rejects a config written for another command.
    pub fn check_experiment(&self, command: &str) -> Result<()> {
        match &self.experiment {
            Some(e) if e != command => Err(config_err(format!("config is for {e:?}, not {command:?}"))),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_parse() {
        assert_eq!(Grid::<u64>::Range("1..=4".into()).values().unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(Grid::<u64>::Range("1..4".into()).values().unwrap(), vec![1, 2, 3]);
        assert!(Grid::<u64>::Range("4..4".into()).values().is_err());
        assert!(Grid::<u64>::Range("x".into()).values().is_err());
        let f = Grid::<f64>::Range("0.05..=0.4 step 0.05".into()).values().unwrap();
        assert_eq!(f.len(), 8);
        assert_eq!(f[2], 0.15);
        assert_eq!(f[7], 0.4);
        assert!(Grid::<f64>::List(vec![]).values().is_err());
    }

    #[test]
    fn config_round_trips() {
        let text = r#"
experiment = "error-prob"
seed = 7
trials = 100
p = [0.1]
n = "1..=40"
lambda = "n_max"
schedule = "iid"
n_min = 3
n_max = 7
rule = "equalizer"
alpha = "1.01..=1.05 step 0.01"
"#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.lambda, Some(LambdaMode::Named(LambdaName::NMax)));
        assert_eq!(c.rule, Some(RandomizationRule::Equalizer));
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let numeric = ExperimentConfig::from_toml("lambda = 0.4").unwrap();
        assert_eq!(numeric.lambda, Some(LambdaMode::Value(0.4)));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(ExperimentConfig::from_toml("bogus = 1"), Err(CliError::Config(_))));
        let c = ExperimentConfig::from_toml("p = [0.6]").unwrap();
        assert!(matches!(c.ps(), Err(CliError::Config(_))));
        let c = ExperimentConfig::from_toml("n = [0, 1]").unwrap();
        assert!(c.ns().is_err());
        let c = ExperimentConfig::from_toml("experiment = \"alpha-vs-p\"").unwrap();
        assert!(c.check_experiment("error-prob").is_err());
    }
}
