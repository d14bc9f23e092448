//! Monte Carlo harness: draw a pilot, size the trial, run the trial, and
//! score the test decision and the estimated regime against the truth.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::data::{Dataset, DesignTargets};
use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::normal::{
    n_both_normal, n_opt_normal, n_pow_normal, normal_test, sigma_from_pilot, sigma_surrogate, NuIntegrator,
    SigmaEstimate, SigmaMethod, DEFAULT_NU_DRAWS,
};
use crate::projection::{
    projection_test, solve_n_both_projection, solve_n_opt_projection, solve_n_pow_projection, BootstrapSettings,
    SearchBudget,
};
use crate::qlearn::{fit_q_learning, fit_stage1_normal, fit_stage2, DecisionRule, LinearRegime, NormalRegime};
use crate::report::{Criterion, Procedure, SampleSize, SampleSizeResult};
use crate::rng::{derive, tag};
use crate::sim::{
    draw_dataset, n_fixed_baseline, oracle_sigma_star, oracle_value, regime_outcomes, GenerativeModel, ModelKind,
    Regime, DELTAS,
};

/// Where the normal procedure gets its SD.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SigmaSource {
    /// Oracle SD of the plug-in estimator.
    Known,
    PilotBootstrap,
    DeltaMethod,
    /// SD of outcomes under standard of care.
    Surrogate,
}

impl SigmaSource {
    pub fn name(self) -> &'static str {
        match self {
            SigmaSource::Known => "known",
            SigmaSource::PilotBootstrap => "pilot-bootstrap",
            SigmaSource::DeltaMethod => "delta-method",
            SigmaSource::Surrogate => "surrogate",
        }
    }
}

/// Error rates and tolerances; `b0` comes from the scenario calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Levels {
    pub eta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub zeta: f64,
    pub epsilon: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl Default for Levels {
    fn default() -> Self {
        let t = DesignTargets::new(0.0, 1.0);
        Self {
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

impl Levels {
    pub fn targets(&self, b0: f64) -> DesignTargets {
        DesignTargets {
            b0,
            eta: self.eta,
            gamma: self.gamma,
            alpha: self.alpha,
            zeta: self.zeta,
            epsilon: self.epsilon,
            theta1: self.theta1,
            theta2: self.theta2,
            eps1: self.eps1,
            eps2: self.eps2,
        }
    }
}

/// Settings for the oracle quantities shared by all replications of a scenario.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct OracleSettings {
    /// Counterfactual draws for the fixed-regime baseline.
    pub fixed_draws: usize,
    /// Counterfactual draws per estimated-regime evaluation.
    pub regime_draws: usize,
    /// Dataset size and count for the oracle SD.
    pub sigma_m: usize,
    pub sigma_reps: usize,
    /// Skips the oracle SD computation, one entry per delta.
    pub known_sigma: Option<Vec<f64>>,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            fixed_draws: 1_000_000,
            regime_draws: 100_000,
            sigma_m: 1000,
            sigma_reps: 2000,
            known_sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub deltas: Vec<f64>,
    pub procedure: Procedure,
    pub criterion: Criterion,
    /// Rows of the normal procedure; ignored by the projection procedure.
    pub sigma_methods: Vec<SigmaSource>,
    pub reps: usize,
    pub n0: usize,
    pub levels: Levels,
    pub nu_draws: usize,
    /// Bootstrap replicates for pilot-based SDs.
    pub sigma_boot_reps: usize,
    /// Bootstrap replicates for the SD used by the trial's test when it is not known.
    pub trial_sigma_reps: usize,
    pub surrogate_inflation: f64,
    /// Probability that standard of care picks the optimal action at each stage.
    pub soc_probability: f64,
    pub boot_reps: usize,
    /// Projection grid as multiples of `n0`.
    pub grid_factors: Vec<usize>,
    pub search: SearchBudget,
    pub oracle: OracleSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::NormalAn,
            deltas: DELTAS.to_vec(),
            procedure: Procedure::Normal,
            criterion: Criterion::Pow,
            sigma_methods: vec![SigmaSource::Known, SigmaSource::PilotBootstrap, SigmaSource::Surrogate],
            reps: 500,
            n0: 50,
            levels: Levels::default(),
            nu_draws: DEFAULT_NU_DRAWS,
            sigma_boot_reps: 200,
            trial_sigma_reps: 100,
            surrogate_inflation: 1.0,
            soc_probability: 0.8,
            boot_reps: 100,
            grid_factors: vec![1, 2, 4, 8, 16],
            search: SearchBudget::default(),
            oracle: OracleSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.deltas.is_empty() {
            return bad("deltas must not be empty".into());
        }
        for d in &self.deltas {
            GenerativeModel::scenario(self.model, *d)?;
        }
        if self.procedure == Procedure::Normal && self.sigma_methods.is_empty() {
            return bad("sigma_methods must not be empty for the normal procedure".into());
        }
        if self.n0 < 10 {
            return bad(format!("n0 = {} is too small to fit a pilot", self.n0));
        }
        if let Some(k) = &self.oracle.known_sigma {
            if k.len() != self.deltas.len() || k.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return bad("oracle.known_sigma needs one positive value per delta".into());
            }
        }
        if !(self.soc_probability >= 0.0 && self.soc_probability <= 1.0) {
            return bad(format!("soc_probability = {} must lie in [0, 1]", self.soc_probability));
        }
        if self.grid_factors.is_empty() || self.grid_factors[0] == 0 || self.grid_factors.windows(2).any(|w| w[0] >= w[1]) {
            return bad("grid_factors must be positive and strictly ascending".into());
        }
        self.search.validate()?;
        let t = self.levels.targets(0.0);
        match (self.procedure, self.criterion) {
            (Procedure::Projection, Criterion::Pow) => t.validate_projection_pow(),
            (Procedure::Projection, Criterion::Opt) => t.validate_projection_opt(),
            (Procedure::Projection, Criterion::Both) => {
                t.validate_projection_pow()?;
                t.validate_projection_opt()
            }
            _ => t.validate(),
        }
    }

    fn rows(&self) -> Vec<(usize, Option<SigmaSource>)> {
        let mut out = Vec::new();
        for d in 0..self.deltas.len() {
            match self.procedure {
                Procedure::Normal => out.extend(self.sigma_methods.iter().map(|s| (d, Some(*s)))),
                Procedure::Projection => out.push((d, None)),
            }
        }
        out
    }
}

/// One scenario and SD source.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentRow {
    pub model: ModelKind,
    pub delta: f64,
    pub procedure: Procedure,
    pub criterion: Criterion,
    /// `known`, `pilot-bootstrap`, `delta-method`, `surrogate`, or `-`.
    pub sigma_method: String,
    pub n0: usize,
    /// Rejection percentage of the trial's test.
    pub pow: Option<f64>,
    /// Percentage of trials whose estimated regime is within `epsilon` of the optimum.
    pub opt: Option<f64>,
    pub n_fixed: SampleSize,
    pub mean_n: Option<f64>,
    pub median_n: Option<f64>,
    pub sd_n: Option<f64>,
    pub sentinel_frequency: f64,
    pub reps: usize,
    pub failures: usize,
    pub b0: f64,
    pub optimal_value: f64,
    pub sigma_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
}

/// Outcome of one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replication {
    pub n: SampleSize,
    pub reject: Option<bool>,
    pub near_optimal: Option<bool>,
}

/// Scenario-level quantities fixed across replications.
struct Scenario {
    model: GenerativeModel,
    targets: DesignTargets,
    sigma_star: Option<f64>,
    optimal_value: f64,
    regime_seed: u64,
}

pub fn run_experiment<E: Executor>(config: &ExperimentConfig, seed: u64, exec: &E) -> Result<ExperimentReport> {
    config.validate()?;
    let nu = NuIntegrator::new(config.nu_draws, derive(seed, tag::NU, 0))?;
    let need_sigma = config.procedure == Procedure::Normal && config.sigma_methods.contains(&SigmaSource::Known);
    let mut scenarios = Vec::with_capacity(config.deltas.len());
    for (d, delta) in config.deltas.iter().enumerate() {
        let model = GenerativeModel::scenario(config.model, *delta)?;
        let scenario_seed = derive(seed, tag::ORACLE, d as u64);
        let fixed = n_fixed_baseline(
            &model,
            &model.calibrated_targets(config.levels.eta),
            config.oracle.fixed_draws,
            scenario_seed,
            exec,
        )?;
        scenarios.push((scenario(config, &model, d, scenario_seed, need_sigma, &nu, exec)?, fixed.n));
    }
    let mut rows = Vec::new();
    for (row_index, (d, source)) in config.rows().into_iter().enumerate() {
        let delta = config.deltas[d];
        let (sc, n_fixed) = &scenarios[d];
        let row_seed = derive(seed, tag::REPLICATION, row_index as u64);
        let outcomes = exec.map(config.reps, |r| replicate(config, sc, source, &nu, derive(row_seed, tag::REPLICATION, r as u64)));
        let ok: Vec<Replication> = outcomes.iter().filter_map(|o| o.as_ref().ok().copied()).collect();
        let failures = config.reps - ok.len();
        if failures as f64 > 0.05 * config.reps as f64 {
            let first = outcomes.iter().find_map(|o| o.as_ref().err()).expect("failures exist");
            return Err(Error::Resampling(format!(
                "{failures} of {} replications failed for delta = {delta} ({}); first error: {first}",
                config.reps,
                source.map_or("projection", SigmaSource::name),
            )));
        }
        rows.push(aggregate(config, sc, delta, source, *n_fixed, &ok, failures));
    }
    Ok(ExperimentReport { rows })
}

fn scenario<E: Executor>(
    config: &ExperimentConfig,
    model: &GenerativeModel,
    d: usize,
    scenario_seed: u64,
    need_sigma: bool,
    nu: &NuIntegrator,
    exec: &E,
) -> Result<Scenario> {
    let targets = config.levels.targets(model.calibrated_targets(config.levels.eta).b0);
    let regime_seed = derive(scenario_seed, tag::ORACLE, 1);
    let optimal_value = oracle_value(model, Regime::Optimal, config.oracle.regime_draws, regime_seed, exec)?.mean;
    let sigma_star = if !need_sigma {
        None
    } else if let Some(k) = &config.oracle.known_sigma {
        Some(k[d])
    } else {
        let os = oracle_sigma_star(
            model,
            config.oracle.sigma_m,
            config.oracle.sigma_reps,
            derive(scenario_seed, tag::ORACLE, 2),
            nu,
            optimal_value,
            exec,
        )?;
        Some(os.sigma)
    };
    Ok(Scenario {
        model: model.clone(),
        targets,
        sigma_star,
        optimal_value,
        regime_seed,
    })
}

fn size_normal(criterion: Criterion, sigma: &SigmaEstimate, t: &DesignTargets) -> Result<SampleSizeResult> {
    match criterion {
        Criterion::Pow => n_pow_normal(sigma, t),
        Criterion::Opt => n_opt_normal(sigma, t),
        Criterion::Both => n_both_normal(sigma, t),
    }
}

fn bootstrap_settings(config: &ExperimentConfig, seed: u64) -> BootstrapSettings {
    BootstrapSettings {
        reps: config.boot_reps,
        budget: config.search,
        seed,
    }
}

fn estimate_sigma(
    config: &ExperimentConfig,
    sc: &Scenario,
    source: SigmaSource,
    pilot: &Dataset,
    nu: &NuIntegrator,
    rep_seed: u64,
) -> Result<SigmaEstimate> {
    match source {
        SigmaSource::Known => SigmaEstimate::elicited(sc.sigma_star.expect("oracle sigma prepared")),
        SigmaSource::PilotBootstrap | SigmaSource::DeltaMethod => {
            let method = if source == SigmaSource::DeltaMethod {
                SigmaMethod::DeltaMethod
            } else {
                SigmaMethod::PilotBootstrap
            };
            sigma_from_pilot(pilot, config.sigma_boot_reps, derive(rep_seed, tag::SIGMA_BOOT, 0), method, nu, &Sequential)
        }
        SigmaSource::Surrogate => {
            let y = regime_outcomes(
                &sc.model,
                Regime::StandardOfCare(config.soc_probability),
                config.n0,
                derive(rep_seed, tag::PILOT, 1),
            );
            sigma_surrogate(&y, config.surrogate_inflation)
        }
    }
}

/// One pilot, one sizing, one trial.
fn replicate(
    config: &ExperimentConfig,
    sc: &Scenario,
    source: Option<SigmaSource>,
    nu: &NuIntegrator,
    rep_seed: u64,
) -> Result<Replication> {
    let pilot = draw_dataset(&sc.model, config.n0, derive(rep_seed, tag::PILOT, 0))?;
    let t = &sc.targets;
    let sized = match source {
        Some(s) => size_normal(config.criterion, &estimate_sigma(config, sc, s, &pilot, nu, rep_seed)?, t)?,
        None => {
            let grid: Vec<usize> = config.grid_factors.iter().map(|k| k * config.n0).collect();
            let settings = bootstrap_settings(config, derive(rep_seed, tag::POWER_BOOT, 0));
            match config.criterion {
                Criterion::Pow => solve_n_pow_projection(&pilot, t, &grid, &settings, &Sequential)?,
                Criterion::Opt => solve_n_opt_projection(&pilot, t, &grid, &settings, &Sequential)?,
                Criterion::Both => solve_n_both_projection(&pilot, t, &grid, &settings, &Sequential)?,
            }
        }
    };
    let Some(n) = sized.n.finite() else {
        return Ok(Replication {
            n: SampleSize::Infinite,
            reject: None,
            near_optimal: None,
        });
    };
    let n = n as usize;
    let trial = draw_dataset(&sc.model, n, derive(rep_seed, tag::TRIAL, 0))?;
    let wants_pow = config.criterion != Criterion::Opt;
    let wants_opt = config.criterion != Criterion::Pow;
    let reject = if !wants_pow {
        None
    } else {
        Some(match source {
            Some(s) => {
                let sigma = match s {
                    SigmaSource::Known => SigmaEstimate::elicited(sc.sigma_star.expect("oracle sigma prepared"))?,
                    _ => sigma_from_pilot(
                        &trial,
                        config.trial_sigma_reps,
                        derive(rep_seed, tag::SIGMA_BOOT, 1),
                        SigmaMethod::PilotBootstrap,
                        nu,
                        &Sequential,
                    )?,
                };
                normal_test(&trial, t.b0, t.alpha, &sigma, nu)?.reject
            }
            None => projection_test(&trial, t, &config.search, derive(rep_seed, tag::SEARCH, 1))?.reject,
        })
    };
    let near_optimal = if !wants_opt {
        None
    } else {
        let value = match source {
            Some(_) => {
                let stage2 = fit_stage2(&trial)?;
                let stage1 = fit_stage1_normal(&trial, &stage2)?;
                let rule = NormalRegime {
                    features: trial.features().clone(),
                    stage2,
                    stage1,
                };
                regime_value(config, sc, &rule)?
            }
            None => {
                let rule = LinearRegime {
                    features: trial.features().clone(),
                    params: fit_q_learning(&trial)?,
                };
                regime_value(config, sc, &rule)?
            }
        };
        Some(value >= sc.optimal_value - t.epsilon)
    };
    Ok(Replication {
        n: SampleSize::Finite(n as u64),
        reject,
        near_optimal,
    })
}

/// Counterfactual value of a rule, on the same draws as the optimal value.
fn regime_value(config: &ExperimentConfig, sc: &Scenario, rule: &(dyn DecisionRule + Sync)) -> Result<f64> {
    Ok(oracle_value(&sc.model, Regime::Rule(rule), config.oracle.regime_draws, sc.regime_seed, &Sequential)?.mean)
}

fn percent(flags: impl Iterator<Item = Option<bool>>) -> Option<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for f in flags.flatten() {
        total += 1;
        hits += usize::from(f);
    }
    (total > 0).then(|| 100.0 * hits as f64 / total as f64)
}

fn aggregate(
    config: &ExperimentConfig,
    sc: &Scenario,
    delta: f64,
    source: Option<SigmaSource>,
    n_fixed: SampleSize,
    reps: &[Replication],
    failures: usize,
) -> ExperimentRow {
    let mut sizes: Vec<f64> = reps.iter().filter_map(|r| r.n.finite()).map(|n| n as f64).collect();
    let sentinels = reps.len() - sizes.len();
    sizes.sort_by(f64::total_cmp);
    let k = sizes.len();
    let mean = (k > 0).then(|| sizes.iter().sum::<f64>() / k as f64);
    let median = (k > 0).then(|| {
        if k % 2 == 1 {
            sizes[k / 2]
        } else {
            0.5 * (sizes[k / 2 - 1] + sizes[k / 2])
        }
    });
    let sd = mean.filter(|_| k > 1).map(|m| {
        (sizes.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / (k as f64 - 1.0)).sqrt()
    });
    ExperimentRow {
        model: config.model,
        delta,
        procedure: config.procedure,
        criterion: config.criterion,
        sigma_method: source.map_or("-", SigmaSource::name).into(),
        n0: config.n0,
        pow: percent(reps.iter().map(|r| r.reject)),
        opt: percent(reps.iter().map(|r| r.near_optimal)),
        n_fixed,
        mean_n: mean,
        median_n: median,
        sd_n: sd,
        sentinel_frequency: if reps.is_empty() { 0.0 } else { sentinels as f64 / reps.len() as f64 },
        reps: config.reps,
        failures,
        b0: sc.targets.b0,
        optimal_value: sc.optimal_value,
        sigma_star: sc.sigma_star.filter(|_| source == Some(SigmaSource::Known)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke(procedure: Procedure, criterion: Criterion) -> ExperimentConfig {
        ExperimentConfig {
            deltas: vec![1.0],
            procedure,
            criterion,
            sigma_methods: vec![SigmaSource::Known, SigmaSource::Surrogate],
            reps: 3,
            nu_draws: 2000,
            boot_reps: 5,
            search: SearchBudget {
                m2: 4,
                m1: 3,
                refine_rounds: 0,
            },
            oracle: OracleSettings {
                fixed_draws: 20_000,
                regime_draws: 10_000,
                known_sigma: Some(vec![4.0]),
                ..OracleSettings::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_reps_rejected() {
        let c = ExperimentConfig {
            reps: 0,
            ..ExperimentConfig::default()
        };
        assert!(run_experiment(&c, 1, &Sequential).is_err());
    }

    #[test]
    fn normal_rows_per_sigma_source() {
        let r = run_experiment(&smoke(Procedure::Normal, Criterion::Both), 3, &Sequential).unwrap();
        assert_eq!(r.rows.len(), 2);
        let known = &r.rows[0];
        assert_eq!(known.sigma_method, "known");
        assert_eq!(known.sd_n, Some(0.0));
        assert!(known.pow.is_some() && known.opt.is_some());
        assert_eq!(known.sigma_star, Some(4.0));
        assert_eq!(r.rows[1].sigma_star, None);
    }

    #[test]
    fn projection_row_is_reproducible() {
        let c = smoke(Procedure::Projection, Criterion::Pow);
        let a = run_experiment(&c, 9, &Sequential).unwrap();
        let b = run_experiment(&c, 9, &Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows[0].sigma_method, "-");
        assert!(a.rows[0].opt.is_none());
    }
}
