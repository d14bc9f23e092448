//! The `size`, `simulate` and `power-curve` commands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use smartsize_core::data::Dataset;
use smartsize_core::exec::Executor;
use smartsize_core::experiment::{run_experiment, ExperimentReport, ExperimentRow};
use smartsize_core::normal::{
    n_both_normal, n_opt_normal, n_pow_normal, sigma_from_pilot, sigma_surrogate, NuIntegrator, SigmaEstimate,
    SigmaMethod,
};
use smartsize_core::projection::{
    default_grid, power_curve, solve_n_both_projection, solve_n_opt_projection, solve_n_pow_projection,
    BootstrapSettings, PowerCurve,
};
use smartsize_core::report::{Criterion, Procedure, SampleSize, SampleSizeResult};
use smartsize_core::rng::{derive, tag};

use crate::config::{RunConfig, SimulateConfig};
use crate::error::{CliError, Result};
use crate::io::{load_dataset, load_outcomes};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const ERROR: u8 = 1;
    pub const SENTINEL: u8 = 2;
}

fn load_pilot(config: &RunConfig) -> Result<Dataset> {
    let path = config
        .pilot
        .as_ref()
        .ok_or_else(|| CliError::config("pilot", "no pilot file configured"))?;
    load_dataset(path, config.features.as_ref())
}

fn sigma_estimate<E: Executor>(config: &RunConfig, seed: u64, exec: &E) -> Result<SigmaEstimate> {
    let s = config.sigma_config();
    Ok(match s.method {
        SigmaMethod::Elicited => SigmaEstimate::elicited(s.value.unwrap_or(f64::NAN))?,
        SigmaMethod::PilotBootstrap | SigmaMethod::DeltaMethod => {
            let pilot = load_pilot(config)?;
            let nu = NuIntegrator::new(config.nu_draws, derive(seed, tag::NU, 0))?;
            sigma_from_pilot(&pilot, s.reps, derive(seed, tag::SIGMA_BOOT, 0), s.method, &nu, exec)?
        }
        SigmaMethod::SocSurrogate => {
            let outcomes = match (&s.outcomes, &s.outcomes_file) {
                (Some(y), _) => y.clone(),
                (None, Some(p)) => load_outcomes(p)?,
                (None, None) => return Err(CliError::config("sigma.outcomes", "missing")),
            };
            sigma_surrogate(&outcomes, s.inflation)?
        }
    })
}

fn settings(config: &RunConfig, seed: u64) -> BootstrapSettings {
    BootstrapSettings {
        reps: config.projection.reps,
        budget: config.projection.search,
        seed: derive(seed, tag::POWER_BOOT, 0),
    }
}

fn grid(config: &RunConfig, pilot: &Dataset) -> Vec<usize> {
    config.projection.grid.clone().unwrap_or_else(|| default_grid(pilot.len()))
}

/// Runs the configured sizing procedure.
pub fn size<E: Executor>(config: &RunConfig, seed: u64, exec: &E) -> Result<SampleSizeResult> {
    config.validate()?;
    let t = config.design_targets();
    Ok(match config.procedure {
        Procedure::Normal => {
            let sigma = sigma_estimate(config, seed, exec)?;
            match config.criterion {
                Criterion::Pow => n_pow_normal(&sigma, &t)?,
                Criterion::Opt => n_opt_normal(&sigma, &t)?,
                Criterion::Both => n_both_normal(&sigma, &t)?,
            }
        }
        Procedure::Projection => {
            let pilot = load_pilot(config)?;
            let g = grid(config, &pilot);
            let s = settings(config, seed);
            match config.criterion {
                Criterion::Pow => solve_n_pow_projection(&pilot, &t, &g, &s, exec)?,
                Criterion::Opt => solve_n_opt_projection(&pilot, &t, &g, &s, exec)?,
                Criterion::Both => solve_n_both_projection(&pilot, &t, &g, &s, exec)?,
            }
        }
    })
}

/// Report document with the resolved config and seed.
pub fn size_report(config: &RunConfig, seed: u64, result: &SampleSizeResult) -> serde_json::Value {
    let mut resolved = config.clone();
    resolved.seed = Some(seed);
    json!({
        "version": VERSION,
        "seed": seed,
        "config": resolved,
        "result": {
            "n": result.n,
            "criterion": result.criterion,
            "procedure": result.procedure,
        },
        "diagnostics": result.diagnostics,
    })
}

pub fn exit_code(result: &SampleSizeResult) -> u8 {
    if result.n.is_infinite() {
        exit::SENTINEL
    } else {
        exit::SUCCESS
    }
}

pub fn to_json(v: &impl Serialize) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::Output(e.to_string()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn simulate<E: Executor>(config: &SimulateConfig, seed: u64, exec: &E) -> Result<ExperimentReport> {
    config.validate()?;
    Ok(run_experiment(&config.experiment, seed, exec)?)
}

pub fn simulate_report(config: &SimulateConfig, seed: u64, report: &ExperimentReport) -> serde_json::Value {
    let mut resolved = config.clone();
    resolved.seed = Some(seed);
    json!({
        "version": VERSION,
        "seed": seed,
        "config": resolved,
        "rows": report.rows,
    })
}

pub fn rows_csv(rows: &[ExperimentRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Output(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Output(e.to_string()))
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_simulation(dir: &Path, config: &SimulateConfig, seed: u64, report: &ExperimentReport) -> Result<[PathBuf; 2]> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let json_path = dir.join("report.json");
    let csv_path = dir.join("report.csv");
    write_text(&json_path, &to_json(&simulate_report(config, seed, report))?)?;
    write_text(&csv_path, &rows_csv(&report.rows)?)?;
    Ok([json_path, csv_path])
}

pub fn curve<E: Executor>(config: &RunConfig, seed: u64, exec: &E) -> Result<PowerCurve> {
    config.validate()?;
    if config.procedure != Procedure::Projection {
        return Err(CliError::config("procedure", "power-curve needs the projection procedure"));
    }
    let pilot = load_pilot(config)?;
    let g = grid(config, &pilot);
    Ok(power_curve(&pilot, &config.design_targets(), &g, &settings(config, seed), exec)?)
}

/// `n,raw_power,fitted_power` rows.
pub fn curve_csv(c: &PowerCurve) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Output(e.to_string());
    w.write_record(["n", "raw_power", "fitted_power"]).map_err(err)?;
    for (n, p) in c.grid.iter().zip(&c.powers) {
        let fitted = c.fit.map(|f| f.power(*n as f64).to_string()).unwrap_or_default();
        w.write_record([n.to_string(), p.to_string(), fitted]).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Output(e.to_string()))
}

pub fn curve_report(config: &RunConfig, seed: u64, c: &PowerCurve) -> serde_json::Value {
    let mut resolved = config.clone();
    resolved.seed = Some(seed);
    let target = 1.0 - config.targets.gamma;
    let n_min = c.fit.and_then(|f| f.solve(target)).map(|x| {
        let floor = c.grid.first().copied().unwrap_or(1) as f64;
        SampleSize::Finite(x.max(floor).ceil() as u64)
    });
    json!({
        "version": VERSION,
        "seed": seed,
        "config": resolved,
        "grid": c.grid,
        "raw_power": c.powers,
        "fit": c.fit.map(|f| json!({"a": f.a, "b": f.b, "converged": f.converged})),
        "fit_error": c.fit_error,
        "target_power": target,
        "n_at_target": n_min.unwrap_or(SampleSize::Infinite),
    })
}
