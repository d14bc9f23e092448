//! The normality-based sizing procedure: the summary `(tau, omega, Omega)`,
//! the value functional `nu`, estimation of the asymptotic SD of the plug-in
//! value, and the closed-form POW/OPT sizes.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, Matrix4};
#[allow(unused_imports)]
use num_traits::Float;


use crate::data::{Dataset, DesignTargets, SummaryId};
use crate::design::QDesign;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::linalg::{cholesky_pd, dot, min_eigenvalue, psd_factor, PSD_TOLERANCE};
use crate::qlearn::{fit_stage1_normal_weighted, fit_stage2_weighted, scaled_g, Stage1NormalFit, Stage2Fit};
use crate::report::{ceil_size, put, Criterion, Diagnostics, Procedure, SampleSizeResult};
use crate::rng::{normal, resample_weights, stream, tag};
use crate::special::norm_quantile;

/// Default number of draws for the value integral.
pub const DEFAULT_NU_DRAWS: usize = 200_000;
pub const MIN_NU_DRAWS: usize = 1000;

/// `(tau, omega, Omega)`: residual scale of the stage-1 contrast regression,
/// mean and covariance of `W(H1, beta1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSummary {
    pub tau: f64,
    pub omega: [f64; 4],
    pub cov: Matrix4<f64>,
}

/// Lower-triangular column-major positions packed by `vech`.
const VECH: [(usize, usize); 10] = [
    (0, 0),
    (1, 0),
    (2, 0),
    (3, 0),
    (1, 1),
    (2, 1),
    (3, 1),
    (2, 2),
    (3, 2),
    (3, 3),
];

impl NormalSummary {
    /// Packed `(tau, omega, vech(Omega))`.
    pub fn theta(&self) -> [f64; 15] {
        let mut t = [0.0; 15];
        t[0] = self.tau;
        t[1..5].copy_from_slice(&self.omega);
        for (k, &(i, j)) in VECH.iter().enumerate() {
            t[5 + k] = self.cov[(i, j)];
        }
        t
    }

    pub fn from_theta(t: &[f64; 15]) -> Self {
        let mut cov = Matrix4::zeros();
        for (k, &(i, j)) in VECH.iter().enumerate() {
            cov[(i, j)] = t[5 + k];
            cov[(j, i)] = t[5 + k];
        }
        Self {
            tau: t[0],
            omega: [t[1], t[2], t[3], t[4]],
            cov,
        }
    }

    /// The summary after rescaling outcomes by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            tau: c * self.tau,
            omega: self.omega.map(|w| c * w),
            cov: self.cov * (c * c),
        }
    }

    fn dyn_cov(&self) -> DMatrix<f64> {
        DMatrix::from_fn(4, 4, |i, j| self.cov[(i, j)])
    }
}

/// Mean and divide-by-n covariance of `W(H1, beta1)`, packed with `tau`.
pub fn estimate_summary(data: &Dataset, s1: &Stage1NormalFit) -> Result<NormalSummary> {
    estimate_summary_weighted(&QDesign::new(data), None, s1)
}

pub fn estimate_summary_weighted(
    design: &QDesign,
    weights: Option<&[f64]>,
    s1: &Stage1NormalFit,
) -> Result<NormalSummary> {
    let n: f64 = weights.map_or(design.rows() as f64, |w| w.iter().sum());
    if n < 5.0 {
        return Err(Error::InvalidDataset(format!(
            "at least 5 trajectories are needed to estimate the covariance of W, got {n}"
        )));
    }
    if !(s1.tau > 0.0) {
        return Err(Error::DegenerateTau(s1.tau));
    }
    let ws: Vec<[f64; 4]> = (0..design.rows())
        .map(|i| {
            [
                dot(design.row(SummaryId::H10, i), &s1.xi10),
                dot(design.row(SummaryId::H11, i), &s1.xi11),
                dot(design.row(SummaryId::H12, i), &s1.varpi12),
                dot(design.row(SummaryId::H13, i), &s1.varpi13),
            ]
        })
        .collect();
    let mut omega = [0.0; 4];
    for (i, w) in ws.iter().enumerate() {
        let wt = weights.map_or(1.0, |x| x[i]);
        for k in 0..4 {
            omega[k] += wt * w[k];
        }
    }
    omega.iter_mut().for_each(|m| *m /= n);
    let mut cov = Matrix4::zeros();
    for (i, w) in ws.iter().enumerate() {
        let wt = weights.map_or(1.0, |x| x[i]);
        if wt == 0.0 {
            continue;
        }
        for j in 0..4 {
            for k in 0..=j {
                cov[(j, k)] += wt * (w[j] - omega[j]) * (w[k] - omega[k]);
            }
        }
    }
    for j in 0..4 {
        for k in 0..=j {
            cov[(j, k)] /= n;
            cov[(k, j)] = cov[(j, k)];
        }
    }
    Ok(NormalSummary {
        tau: s1.tau,
        omega,
        cov,
    })
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Standard-normal draws shared by every evaluation of `nu`, so that values at
/// nearby summaries use common random numbers.
#[derive(Debug, Clone)]
pub struct NuIntegrator {
    z: Vec<[f64; 4]>,
    seed: u64,
}

impl NuIntegrator {
    pub fn new(draws: usize, seed: u64) -> Result<Self> {
        if draws < MIN_NU_DRAWS {
            return Err(Error::InvalidArgument(format!(
                "nu needs at least {MIN_NU_DRAWS} draws, got {draws}"
            )));
        }
        let mut rng = stream(seed, tag::NU, 0);
        let z = (0..draws)
            .map(|_| [normal(&mut rng), normal(&mut rng), normal(&mut rng), normal(&mut rng)])
            .collect();
        Ok(Self { z, seed })
    }

    pub fn draws(&self) -> usize {
        self.z.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `nu = E tau g(V / tau)` for `V ~ N(omega, Omega)`.
    pub fn value(&self, s: &NormalSummary) -> Result<Estimate> {
        if !(s.tau > 0.0) {
            return Err(Error::DegenerateTau(s.tau));
        }
        let cov = s.dyn_cov();
        // plain Cholesky keeps the draw map smooth in Omega; pivoting only when singular
        let l = match cholesky_pd(&cov) {
            Some(l) => l,
            None => psd_factor(&cov)?,
        };
        let l: [[f64; 4]; 4] = core::array::from_fn(|i| core::array::from_fn(|j| l[(i, j)]));
        let (mut sum, mut sq) = (0.0, 0.0);
        for z in &self.z {
            let mut v = s.omega;
            for i in 0..4 {
                for j in 0..=i {
                    v[i] += l[i][j] * z[j];
                }
            }
            let g = scaled_g(v, s.tau);
            sum += g;
            sq += g * g;
        }
        let m = self.z.len() as f64;
        let mean = sum / m;
        let var = (sq / m - mean * mean).max(0.0);
        Ok(Estimate {
            value: mean,
            se: (var / m).sqrt(),
        })
    }

    /// Central finite-difference gradient of `nu` in the packed coordinates.
    ///
    /// Each step is halved (at most 20 times) until both perturbed summaries
    /// are admissible.
    pub fn gradient(&self, s: &NormalSummary) -> Result<[f64; 15]> {
        let theta = s.theta();
        let mut grad = [0.0; 15];
        for k in 0..15 {
            let mut h = (1e-4 * theta[k].abs()).max(1e-4);
            let mut halvings = 0;
            let (plus, minus) = loop {
                let mut tp = theta;
                let mut tm = theta;
                tp[k] += h;
                tm[k] -= h;
                let (sp, sm) = (NormalSummary::from_theta(&tp), NormalSummary::from_theta(&tm));
                if admissible(&sp) && admissible(&sm) {
                    break (sp, sm);
                }
                halvings += 1;
                if halvings > 20 {
                    return Err(Error::NotPsd(min_eigenvalue(&sm.dyn_cov()).min(min_eigenvalue(&sp.dyn_cov()))));
                }
                h *= 0.5;
            };
            grad[k] = (self.value(&plus)?.value - self.value(&minus)?.value) / (2.0 * h);
        }
        Ok(grad)
    }
}

fn admissible(s: &NormalSummary) -> bool {
    s.tau > 0.0 && min_eigenvalue(&s.dyn_cov()) >= PSD_TOLERANCE
}

/// `nu` at a summary with a fresh set of `draws` standard-normal draws.
pub fn nu_value(summary: &NormalSummary, draws: usize, seed: u64) -> Result<Estimate> {
    NuIntegrator::new(draws, seed)?.value(summary)
}

pub fn nu_gradient(summary: &NormalSummary, draws: usize, seed: u64) -> Result<[f64; 15]> {
    NuIntegrator::new(draws, seed)?.gradient(summary)
}

/// Every intermediate of the plug-in value estimate.
#[derive(Debug, Clone)]
pub struct PlugIn {
    pub stage2: Stage2Fit,
    pub stage1: Stage1NormalFit,
    pub summary: NormalSummary,
    pub value: Estimate,
}

/// Plug-in estimate of the optimal value: stage-2 fit, stage-1 fits,
/// summary, then `nu`.
pub fn plug_in_value(data: &Dataset, nu: &NuIntegrator) -> Result<PlugIn> {
    plug_in_value_weighted(&QDesign::new(data), None, nu)
}

pub fn plug_in_value_weighted(design: &QDesign, weights: Option<&[f64]>, nu: &NuIntegrator) -> Result<PlugIn> {
    let stage2 = fit_stage2_weighted(design, weights)?;
    let stage1 = fit_stage1_normal_weighted(design, weights, &stage2)?;
    let summary = estimate_summary_weighted(design, weights, &stage1)?;
    let value = nu.value(&summary)?;
    Ok(PlugIn {
        stage2,
        stage1,
        summary,
        value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SigmaMethod {
    Elicited,
    PilotBootstrap,
    DeltaMethod,
    SocSurrogate,
}

impl SigmaMethod {
    pub fn name(self) -> &'static str {
        match self {
            SigmaMethod::Elicited => "elicited",
            SigmaMethod::PilotBootstrap => "pilot-bootstrap",
            SigmaMethod::DeltaMethod => "delta-method",
            SigmaMethod::SocSurrogate => "soc-surrogate",
        }
    }
}

/// Asymptotic SD of `sqrt(n) (V_hat - V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaEstimate {
    pub sigma: f64,
    pub method: SigmaMethod,
    pub diagnostics: Diagnostics,
}

impl SigmaEstimate {
    pub fn elicited(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma = {sigma} must be positive")));
        }
        Ok(Self {
            sigma,
            method: SigmaMethod::Elicited,
            diagnostics: Diagnostics::new(),
        })
    }
}

/// Maximum attempts per bootstrap replicate before giving up.
pub const MAX_RESAMPLE_ATTEMPTS: u64 = 10;

/// Refit the plug-in chain on resample `b`, redrawing singular resamples.
fn bootstrap_replicate(
    design: &QDesign,
    size: usize,
    seed: u64,
    b: usize,
    nu: &NuIntegrator,
) -> (Option<PlugIn>, u64) {
    let rep_seed = crate::rng::derive(seed, tag::SIGMA_BOOT, b as u64);
    for attempt in 0..MAX_RESAMPLE_ATTEMPTS {
        let mut rng = stream(rep_seed, tag::SIGMA_BOOT, attempt);
        let w = resample_weights(&mut rng, design.rows(), size);
        if let Ok(p) = plug_in_value_weighted(design, Some(&w), nu) {
            return (Some(p), attempt);
        }
    }
    (None, MAX_RESAMPLE_ATTEMPTS)
}

/// Estimate the SD from a pilot, by bootstrapping the plug-in value
/// (`PilotBootstrap`) or by `grad nuᵀ Sigma grad nu` with `Sigma` from
/// bootstrapped summaries (`DeltaMethod`).
pub fn sigma_from_pilot<E: Executor>(
    pilot: &Dataset,
    reps: usize,
    seed: u64,
    method: SigmaMethod,
    nu: &NuIntegrator,
    exec: &E,
) -> Result<SigmaEstimate> {
    if reps < 2 {
        return Err(Error::InvalidArgument(format!(
            "bootstrap variance needs at least 2 replicates, got {reps}"
        )));
    }
    if !matches!(method, SigmaMethod::PilotBootstrap | SigmaMethod::DeltaMethod) {
        return Err(Error::InvalidArgument(format!(
            "{} is not a pilot-based method",
            method.name()
        )));
    }
    let design = QDesign::new(pilot);
    let n0 = pilot.len();
    let base = plug_in_value_weighted(&design, None, nu)?;
    let out = exec.map(reps, |b| bootstrap_replicate(&design, n0, seed, b, nu));
    let redraws: u64 = out.iter().map(|(_, r)| *r).sum();
    let mut fits = Vec::with_capacity(reps);
    for (b, (fit, _)) in out.into_iter().enumerate() {
        match fit {
            Some(f) => fits.push(f),
            None => {
                return Err(Error::Resampling(format!(
                    "bootstrap replicate {b} hit a singular design in {MAX_RESAMPLE_ATTEMPTS} consecutive resamples"
                )))
            }
        }
    }
    let m = reps as f64;
    let mut diagnostics = Diagnostics::new();
    put(&mut diagnostics, "bootstrap_reps", reps);
    put(&mut diagnostics, "redrawn_resamples", redraws);
    put(&mut diagnostics, "pilot_value", base.value.value);
    put(&mut diagnostics, "pilot_value_se", base.value.se);
    put(&mut diagnostics, "nu_draws", nu.draws());
    let sigma2 = match method {
        SigmaMethod::PilotBootstrap => {
            let mean = fits.iter().map(|f| f.value.value).sum::<f64>() / m;
            let var = fits.iter().map(|f| (f.value.value - mean).powi(2)).sum::<f64>() / (m - 1.0);
            put(&mut diagnostics, "bootstrap_value_sd", var.sqrt());
            n0 as f64 * var
        }
        _ => {
            let thetas: Vec<[f64; 15]> = fits.iter().map(|f| f.summary.theta()).collect();
            let mut mean = [0.0; 15];
            for t in &thetas {
                for k in 0..15 {
                    mean[k] += t[k] / m;
                }
            }
            let mut cov = DMatrix::<f64>::zeros(15, 15);
            for t in &thetas {
                let d = DVector::from_iterator(15, (0..15).map(|k| t[k] - mean[k]));
                cov += &d * d.transpose();
            }
            cov *= n0 as f64 / (m - 1.0);
            let grad = nu.gradient(&base.summary)?;
            let g = DVector::from_row_slice(&grad);
            put(&mut diagnostics, "gradient_norm", g.norm());
            put(&mut diagnostics, "gradient", grad.to_vec());
            (g.transpose() * cov * g)[(0, 0)]
        }
    };
    let sigma = sigma2.max(0.0).sqrt();
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Resampling(format!("estimated sigma is degenerate ({sigma})")));
    }
    Ok(SigmaEstimate {
        sigma,
        method,
        diagnostics,
    })
}

/// Standard-of-care surrogate: `inflation` times the sample SD of `soc_outcomes`.
pub fn sigma_surrogate(soc_outcomes: &[f64], inflation: f64) -> Result<SigmaEstimate> {
    if soc_outcomes.len() < 2 {
        return Err(Error::InvalidArgument("surrogate needs at least 2 outcomes".into()));
    }
    if !(inflation >= 1.0 && inflation.is_finite()) {
        return Err(Error::InvalidArgument(format!("inflation = {inflation} must be at least 1")));
    }
    let m = soc_outcomes.len() as f64;
    let mean = soc_outcomes.iter().sum::<f64>() / m;
    let var = soc_outcomes.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (m - 1.0);
    if !(var > 0.0) {
        return Err(Error::InvalidArgument("surrogate outcomes have zero variance".into()));
    }
    let mut diagnostics = Diagnostics::new();
    put(&mut diagnostics, "soc_sd", var.sqrt());
    put(&mut diagnostics, "inflation", inflation);
    put(&mut diagnostics, "soc_outcomes", soc_outcomes.len());
    Ok(SigmaEstimate {
        sigma: inflation * var.sqrt(),
        method: SigmaMethod::SocSurrogate,
        diagnostics,
    })
}

fn check_sigma(sigma: &SigmaEstimate) -> Result<()> {
    if sigma.sigma > 0.0 && sigma.sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sigma = {} must be positive", sigma.sigma)))
    }
}

fn sigma_diagnostics(sigma: &SigmaEstimate) -> Diagnostics {
    let mut d = Diagnostics::new();
    put(&mut d, "sigma", sigma.sigma);
    put(&mut d, "sigma_method", sigma.method.name());
    for (k, v) in &sigma.diagnostics {
        d.insert(format!("sigma.{k}"), v.clone());
    }
    d
}

/// `ceil(sigma² / eta² (z_{1-gamma} + z_{1-alpha})²)`.
pub fn n_pow_normal(sigma: &SigmaEstimate, t: &DesignTargets) -> Result<SampleSizeResult> {
    check_sigma(sigma)?;
    t.validate()?;
    let zg = norm_quantile(1.0 - t.gamma);
    let za = norm_quantile(1.0 - t.alpha);
    let raw = (sigma.sigma / t.eta).powi(2) * (zg + za).powi(2);
    let mut diagnostics = sigma_diagnostics(sigma);
    put(&mut diagnostics, "z_power", zg);
    put(&mut diagnostics, "z_alpha", za);
    put(&mut diagnostics, "unrounded_n", raw);
    Ok(SampleSizeResult {
        n: ceil_size(raw),
        criterion: Criterion::Pow,
        procedure: Procedure::Normal,
        inputs: *t,
        diagnostics,
    })
}

/// `ceil((z_{1-zeta} sigma / epsilon)²)`.
pub fn n_opt_normal(sigma: &SigmaEstimate, t: &DesignTargets) -> Result<SampleSizeResult> {
    check_sigma(sigma)?;
    t.validate()?;
    let zz = norm_quantile(1.0 - t.zeta);
    let raw = (zz * sigma.sigma / t.epsilon).powi(2);
    let mut diagnostics = sigma_diagnostics(sigma);
    put(&mut diagnostics, "z_opt", zz);
    put(&mut diagnostics, "unrounded_n", raw);
    Ok(SampleSizeResult {
        n: ceil_size(raw),
        criterion: Criterion::Opt,
        procedure: Procedure::Normal,
        inputs: *t,
        diagnostics,
    })
}

pub fn n_both_normal(sigma: &SigmaEstimate, t: &DesignTargets) -> Result<SampleSizeResult> {
    Ok(SampleSizeResult::combine_both(n_pow_normal(sigma, t)?, n_opt_normal(sigma, t)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalTest {
    pub reject: bool,
    pub statistic: f64,
    pub value: f64,
}

/// One-sided test of `V <= b0`: reject when `sqrt(n) (V_hat - b0) / sigma >= z_{1-alpha}`.
pub fn normal_test(
    data: &Dataset,
    b0: f64,
    alpha: f64,
    sigma_hat: &SigmaEstimate,
    nu: &NuIntegrator,
) -> Result<NormalTest> {
    check_sigma(sigma_hat)?;
    let value = plug_in_value(data, nu)?.value.value;
    Ok(normal_test_from_value(value, data.len(), b0, alpha, sigma_hat.sigma))
}

pub fn normal_test_from_value(value: f64, n: usize, b0: f64, alpha: f64, sigma: f64) -> NormalTest {
    let statistic = (n as f64).sqrt() * (value - b0) / sigma;
    NormalTest {
        reject: statistic >= norm_quantile(1.0 - alpha),
        statistic,
        value,
    }
}
