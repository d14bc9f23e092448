//! Run configurations, read from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use smartsize_core::data::{DesignTargets, FeatureSpec};
use smartsize_core::experiment::ExperimentConfig;
use smartsize_core::normal::{SigmaMethod, DEFAULT_NU_DRAWS};
use smartsize_core::projection::SearchBudget;
use smartsize_core::report::{Criterion, Procedure};

use crate::error::{CliError, Result};

/// `DesignTargets` with the conventional levels as defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsConfig {
    pub b0: f64,
    pub eta: f64,
    #[serde(default = "d::gamma")]
    pub gamma: f64,
    #[serde(default = "d::alpha")]
    pub alpha: f64,
    #[serde(default = "d::zeta")]
    pub zeta: f64,
    #[serde(default = "d::epsilon")]
    pub epsilon: f64,
    #[serde(default = "d::theta1")]
    pub theta1: f64,
    #[serde(default = "d::theta2")]
    pub theta2: f64,
    #[serde(default = "d::eps1")]
    pub eps1: f64,
    #[serde(default = "d::eps2")]
    pub eps2: f64,
}

mod d {
    use smartsize_core::data::DesignTargets;
    fn t() -> DesignTargets {
        DesignTargets::new(0.0, 1.0)
    }
    pub fn gamma() -> f64 {
        t().gamma
    }
    pub fn alpha() -> f64 {
        t().alpha
    }
    pub fn zeta() -> f64 {
        t().zeta
    }
    pub fn epsilon() -> f64 {
        t().epsilon
    }
    pub fn theta1() -> f64 {
        t().theta1
    }
    pub fn theta2() -> f64 {
        t().theta2
    }
    pub fn eps1() -> f64 {
        t().eps1
    }
    pub fn eps2() -> f64 {
        t().eps2
    }
    pub fn criterion() -> smartsize_core::report::Criterion {
        smartsize_core::report::Criterion::Pow
    }
    pub fn nu_draws() -> usize {
        super::DEFAULT_NU_DRAWS
    }
    pub fn sigma_reps() -> usize {
        200
    }
    pub fn boot_reps() -> usize {
        100
    }
    pub fn inflation() -> f64 {
        1.0
    }
    pub fn sigma_method() -> smartsize_core::normal::SigmaMethod {
        smartsize_core::normal::SigmaMethod::PilotBootstrap
    }
}

impl From<TargetsConfig> for DesignTargets {
    fn from(t: TargetsConfig) -> Self {
        DesignTargets {
            b0: t.b0,
            eta: t.eta,
            gamma: t.gamma,
            alpha: t.alpha,
            zeta: t.zeta,
            epsilon: t.epsilon,
            theta1: t.theta1,
            theta2: t.theta2,
            eps1: t.eps1,
            eps2: t.eps2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaConfig {
    #[serde(default = "d::sigma_method")]
    pub method: SigmaMethod,
    /// Elicited SD.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Bootstrap replicates for pilot-based methods.
    #[serde(default = "d::sigma_reps")]
    pub reps: usize,
    /// Standard-of-care outcomes, inline or as the `y` column of a CSV file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcomes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcomes_file: Option<PathBuf>,
    #[serde(default = "d::inflation")]
    pub inflation: f64,
}

impl Default for SigmaConfig {
    fn default() -> Self {
        Self {
            method: d::sigma_method(),
            value: None,
            reps: d::sigma_reps(),
            outcomes: None,
            outcomes_file: None,
            inflation: d::inflation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    /// Candidate sizes; defaults to `n0` times 1, 2, 4, 8, 16.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<usize>>,
    #[serde(default = "d::boot_reps")]
    pub reps: usize,
    #[serde(default)]
    pub search: SearchBudget,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            grid: None,
            reps: d::boot_reps(),
            search: SearchBudget::default(),
        }
    }
}

/// Configuration of `size` and `power-curve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub procedure: Procedure,
    #[serde(default = "d::criterion")]
    pub criterion: Criterion,
    pub targets: TargetsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Pilot trial CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot: Option<PathBuf>,
    /// History summaries; linear in every covariate when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<SigmaConfig>,
    #[serde(default)]
    pub projection: ProjectionConfig,
    #[serde(default = "d::nu_draws")]
    pub nu_draws: usize,
}

impl RunConfig {
    pub fn design_targets(&self) -> DesignTargets {
        self.targets.into()
    }

    /// The `[sigma]` section, pilot bootstrap when absent.
    pub fn sigma_config(&self) -> SigmaConfig {
        self.sigma.clone().unwrap_or_default()
    }

    /// Field-level consistency checks.
    pub fn validate(&self) -> Result<()> {
        let t = self.design_targets();
        let targets = match (self.procedure, self.criterion) {
            (Procedure::Projection, Criterion::Pow) => t.validate_projection_pow(),
            (Procedure::Projection, Criterion::Opt) => t.validate_projection_opt(),
            (Procedure::Projection, Criterion::Both) => t.validate_projection_pow().and_then(|_| t.validate_projection_opt()),
            (Procedure::Normal, _) => t.validate(),
        };
        targets.map_err(|e| CliError::config("targets", e.to_string()))?;
        if self.nu_draws < smartsize_core::normal::MIN_NU_DRAWS {
            return Err(CliError::config(
                "nu_draws",
                format!("must be at least {}", smartsize_core::normal::MIN_NU_DRAWS),
            ));
        }
        match self.procedure {
            Procedure::Normal => {
                let s = self.sigma_config();
                match s.method {
                    SigmaMethod::Elicited => match s.value {
                        Some(v) if v > 0.0 && v.is_finite() => {}
                        Some(v) => return Err(CliError::config("sigma.value", format!("{v} must be positive"))),
                        None => return Err(CliError::config("sigma.value", "required for the elicited method")),
                    },
                    SigmaMethod::PilotBootstrap | SigmaMethod::DeltaMethod => {
                        if self.pilot.is_none() {
                            return Err(CliError::config(
                                "pilot",
                                format!("required for sigma method {}", s.method.name()),
                            ));
                        }
                        if s.reps < 2 {
                            return Err(CliError::config("sigma.reps", "must be at least 2"));
                        }
                    }
                    SigmaMethod::SocSurrogate => {
                        if s.outcomes.is_some() == s.outcomes_file.is_some() {
                            return Err(CliError::config(
                                "sigma.outcomes",
                                "give exactly one of outcomes or outcomes_file",
                            ));
                        }
                        if !(s.inflation >= 1.0 && s.inflation.is_finite()) {
                            return Err(CliError::config("sigma.inflation", "must be at least 1"));
                        }
                    }
                }
            }
            Procedure::Projection => {
                if self.pilot.is_none() {
                    return Err(CliError::config("pilot", "required for the projection procedure"));
                }
            }
        }
        if let Some(g) = &self.projection.grid {
            if g.is_empty() {
                return Err(CliError::config("projection.grid", "must not be empty"));
            }
            if g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CliError::config("projection.grid", "must be strictly ascending"));
            }
        }
        if self.projection.reps == 0 {
            return Err(CliError::config("projection.reps", "must be at least 1"));
        }
        self.projection
            .search
            .validate()
            .map_err(|e| CliError::config("projection.search", e.to_string()))?;
        Ok(())
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &mut self.pilot {
            *p = resolve(base, p);
        }
        if let Some(p) = self.sigma.as_mut().and_then(|s| s.outcomes_file.as_mut()) {
            *p = resolve(base, p);
        }
    }
}

/// Configuration of `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        self.experiment
            .validate()
            .map_err(|e| CliError::config("experiment", e.to_string()))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parses TOML, or JSON when the text starts with `{`.
pub fn parse_config<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    let syntax = |message: String| CliError::ConfigSyntax {
        path: path.to_path_buf(),
        message,
    };
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| syntax(e.to_string()))
    } else {
        toml::from_str(text).map_err(|e| syntax(e.to_string()))
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn base_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()),
        _ => std::env::current_dir().unwrap_or_default(),
    }
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let mut c: RunConfig = parse_config(&read(path)?, path)?;
    c.resolve_paths(&base_dir(path));
    c.validate()?;
    Ok(c)
}

pub fn load_simulate_config(path: &Path) -> Result<SimulateConfig> {
    let c: SimulateConfig = parse_config(&read(path)?, path)?;
    c.validate()?;
    Ok(c)
}
