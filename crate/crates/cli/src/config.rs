use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use lpsphere::rare_event::SphereMeasure;
use lpsphere::PExponent;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Sample,
    Pbm,
    RateCurve,
    Gibbs,
    Maxent,
    SurfaceCheck,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Sample => "sample",
            Experiment::Pbm => "pbm",
            Experiment::RateCurve => "rate-curve",
            Experiment::Gibbs => "gibbs",
            Experiment::Maxent => "maxent",
            Experiment::SurfaceCheck => "surface-check",
        }
    }

    fn needs_q_below_p(self) -> bool {
        matches!(self, Experiment::RateCurve | Experiment::Gibbs | Experiment::Maxent)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        [
            Experiment::Sample,
            Experiment::Pbm,
            Experiment::RateCurve,
            Experiment::Gibbs,
            Experiment::Maxent,
            Experiment::SurfaceCheck,
        ]
        .into_iter()
        .find(|e| e.name() == s)
        .ok_or_else(|| CliError::Config(format!("unknown experiment {s:?}")))
    }
}

/// One experiment run. Serialized as a flat TOML table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub p: PExponent,
    pub q: PExponent,
    pub n_list: Vec<usize>,
    pub beta: f64,
    /// Half-width of the neighbourhood `[0, β + ε]`; defaults to `0.01 β`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub budget: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Leading coordinates recorded by `pbm` and `gibbs`.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_measure")]
    pub measure: SphereMeasure,
}

fn default_k() -> usize {
    1
}

fn default_measure() -> SphereMeasure {
    SphereMeasure::Cone
}

pub const MIN_BUDGET: usize = 1000;

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        ExperimentConfig {
            experiment,
            p: PExponent::Finite(2.0),
            q: PExponent::Finite(1.0),
            n_list: vec![10, 100, 1000],
            beta: 0.5,
            epsilon: None,
            budget: 10_000,
            seed: 0,
            out_dir: PathBuf::from("out"),
            k: 1,
            measure: SphereMeasure::Cone,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(0.01 * self.beta)
    }

    pub fn q_finite(&self) -> Result<f64, CliError> {
        match self.q {
            PExponent::Finite(q) => Ok(q),
            PExponent::Infinity => Err(CliError::Config(format!(
                "{} needs a finite q",
                self.experiment
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.budget < MIN_BUDGET {
            return bad(format!("budget must be at least {MIN_BUDGET}, got {}", self.budget));
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return bad("n_list must be a nonempty list of positive dimensions".into());
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.epsilon() >= 0.0 && self.epsilon().is_finite()) {
            return bad(format!("epsilon must be nonnegative, got {}", self.epsilon()));
        }
        if let PExponent::Finite(p) = self.p {
            if !(p >= 1.0 && p.is_finite()) {
                return bad(format!("p must be at least 1, got {p}"));
            }
        }
        if self.experiment.needs_q_below_p() {
            let q = self.q_finite()?;
            if !(q >= 1.0) || PExponent::Finite(q) >= self.p {
                return bad(format!("{} needs 1 <= q < p, got q={q}, p={}", self.experiment, self.p));
            }
        }
        if self.k == 0 || self.n_list.iter().any(|&n| self.k > n) && matches!(self.experiment, Experiment::Pbm) {
            return bad(format!("k = {} must be positive and at most every n", self.k));
        }
        Ok(())
    }
}
