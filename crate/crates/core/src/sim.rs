//! Generative SMART models with known Q-functions, counterfactual regime
//! values, and the oracle quantities used to calibrate and check the sizing
//! procedures.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::Matrix4;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::data::{Dataset, DesignTargets, FeatureSpec, Term, Trajectory};
use crate::design::weighted_ls;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::normal::{plug_in_value, NormalSummary, NuIntegrator};
use crate::qlearn::{sign_rule, DecisionRule, QParams, Stage1NormalFit};
use crate::report::{ceil_size, SampleSize};
use crate::rng::{coin, derive, normal, stream, student_t3, tag};
use crate::special::{abs_normal_mean, norm_quantile};

/// Trajectories simulated per RNG stream.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ModelKind {
    /// Four correlated normal baseline covariates, normal transitions.
    NormalAn,
    /// One baseline covariate, quadratic transition with t3 noise.
    QuadraticT3,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::NormalAn => "normal-an",
            ModelKind::QuadraticT3 => "quadratic-t3",
        }
    }
}

/// Calibrated benefit levels of the optimal over the best fixed regime, in units of `eta`.
pub const DELTAS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    /// `x2_1 = (1, x1_1)ᵀtrans10 + a1 (1, x1_2)ᵀtrans11 + phi1`,
    /// `x2_2 = (1, x1_3)ᵀtrans20 + a1 (1, x1_4)ᵀtrans21 + phi2`,
    /// `y = (1, x1_1, a1, x2_1)ᵀbeta20 + a2 (1, x1_3, a1, x2_2)ᵀbeta21 + u`.
    NormalAn {
        rho: f64,
        trans10: [f64; 2],
        trans11: [f64; 2],
        trans20: [f64; 2],
        trans21: [f64; 2],
        beta20: [f64; 4],
        beta21: [f64; 4],
    },
    /// `x2 = trans · (1, x1, a1, a1 x1, x1²) + t3`,
    /// `y = (1, x1, a1, x1 a1, x2)ᵀbeta20 + a2 (1, a1, x2)ᵀbeta21 + u`.
    QuadraticT3 {
        trans: [f64; 5],
        beta20: [f64; 5],
        beta21: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeModel {
    pub kind: ModelKind,
    pub delta: f64,
    pub params: ModelParams,
}

fn term(s: &str) -> Term {
    s.parse().expect("valid built-in term")
}

fn terms(list: &[&str]) -> Vec<Term> {
    list.iter().map(|s| term(s)).collect()
}

impl GenerativeModel {
    /// The calibrated scenario with benefit `delta` (one of [`DELTAS`]) at `eta = 1`.
    pub fn scenario(kind: ModelKind, delta: f64) -> Result<Self> {
        let idx = DELTAS.iter().position(|d| *d == delta).ok_or_else(|| {
            Error::InvalidArgument(format!("delta = {delta} is not one of 0, 0.5, 1, 2"))
        })?;
        let params = match kind {
            ModelKind::NormalAn => ModelParams::NormalAn {
                rho: 0.5,
                trans10: [-1.0, 1.0],
                trans11: [4.0, 1.0],
                trans20: [-0.4, -1.0],
                trans21: [if idx == 0 { 4.0 } else { -4.0 }, 1.0],
                beta20: [0.5, 0.5, -1.0, 1.0],
                beta21: [1.0, [0.5, -0.9, -1.75, -3.25][idx], 0.5, 1.0],
            },
            ModelKind::QuadraticT3 => ModelParams::QuadraticT3 {
                trans: [1.0, 0.5, 0.5, 0.1, 1.0],
                beta20: [1.0, 0.5, 0.5, [0.5, 0.5, 1.0, 2.3][idx], 1.5],
                beta21: [-1.0, -1.0, [0.0, 0.55, 0.65, 0.71][idx]],
            },
        };
        Ok(Self { kind, delta, params })
    }

    pub fn p1(&self) -> usize {
        match self.kind {
            ModelKind::NormalAn => 4,
            ModelKind::QuadraticT3 => 1,
        }
    }

    pub fn p2(&self) -> usize {
        match self.kind {
            ModelKind::NormalAn => 2,
            ModelKind::QuadraticT3 => 1,
        }
    }

    /// History summaries matching the model's conditional means.
    pub fn features(&self) -> FeatureSpec {
        match self.kind {
            ModelKind::NormalAn => FeatureSpec {
                h10: terms(&["1", "x1_1"]),
                h11: terms(&["1", "x1_2"]),
                h12: terms(&["1", "x1_3"]),
                h13: terms(&["1", "x1_4"]),
                h20: terms(&["1", "x1_1", "a1", "x2_1"]),
                h21: terms(&["1", "x1_3", "a1", "x2_2"]),
            },
            ModelKind::QuadraticT3 => FeatureSpec {
                h10: terms(&["1", "x1_1", "x1_1^2"]),
                h11: terms(&["1", "x1_1"]),
                h12: terms(&["1", "x1_1", "x1_1^2"]),
                h13: terms(&["1", "x1_1"]),
                h20: terms(&["1", "x1_1", "a1", "x1_1*a1", "x2_1"]),
                h21: terms(&["1", "a1", "x2_1"]),
            },
        }
    }

    fn draw_baseline<R: Rng + ?Sized>(&self, rng: &mut R, x1: &mut [f64]) {
        match &self.params {
            ModelParams::NormalAn { rho, .. } => {
                let s = (1.0 - rho * rho).sqrt();
                x1[0] = normal(rng);
                for k in 1..x1.len() {
                    x1[k] = rho * x1[k - 1] + s * normal(rng);
                }
            }
            ModelParams::QuadraticT3 { .. } => x1[0] = normal(rng),
        }
    }

    /// Mean of the interim covariates given `(x1, a1)`.
    pub fn transition_mean(&self, x1: &[f64], a1: i8, out: &mut [f64]) {
        let a = f64::from(a1);
        match &self.params {
            ModelParams::NormalAn {
                trans10,
                trans11,
                trans20,
                trans21,
                ..
            } => {
                out[0] = trans10[0] + trans10[1] * x1[0] + a * (trans11[0] + trans11[1] * x1[1]);
                out[1] = trans20[0] + trans20[1] * x1[2] + a * (trans21[0] + trans21[1] * x1[3]);
            }
            ModelParams::QuadraticT3 { trans, .. } => {
                let x = x1[0];
                out[0] = trans[0] + trans[1] * x + trans[2] * a + trans[3] * a * x + trans[4] * x * x;
            }
        }
    }

    /// `(main effect, contrast)` of the true stage-2 Q-function.
    pub fn q2_parts(&self, x1: &[f64], a1: i8, x2: &[f64]) -> (f64, f64) {
        let a = f64::from(a1);
        match &self.params {
            ModelParams::NormalAn { beta20, beta21, .. } => (
                beta20[0] + beta20[1] * x1[0] + beta20[2] * a + beta20[3] * x2[0],
                beta21[0] + beta21[1] * x1[2] + beta21[2] * a + beta21[3] * x2[1],
            ),
            ModelParams::QuadraticT3 { beta20, beta21, .. } => {
                let x = x1[0];
                (
                    beta20[0] + beta20[1] * x + beta20[2] * a + beta20[3] * x * a + beta20[4] * x2[0],
                    beta21[0] + beta21[1] * a + beta21[2] * x2[0],
                )
            }
        }
    }

    pub fn q2_true(&self, x1: &[f64], a1: i8, x2: &[f64], a2: i8) -> f64 {
        let (m, c) = self.q2_parts(x1, a1, x2);
        m + f64::from(a2) * c
    }

    /// `E[max_a2 Q2 | x1, a1]`.
    pub fn q1_true(&self, x1: &[f64], a1: i8) -> f64 {
        let mut mean = [0.0; 2];
        self.transition_mean(x1, a1, &mut mean);
        let (base, m) = self.q2_parts(x1, a1, &mean);
        match &self.params {
            ModelParams::NormalAn { beta20: _, beta21, .. } => base + abs_normal_mean(m, beta21[3].abs()),
            ModelParams::QuadraticT3 { beta21, .. } => base + abs_t3_mean(m, beta21[2].abs()),
        }
    }

    /// Stage-1 coefficients and residual scale of the normal procedure at the truth.
    pub fn true_stage1(&self) -> Result<Stage1NormalFit> {
        match &self.params {
            ModelParams::NormalAn {
                trans10,
                trans11,
                trans20,
                trans21,
                beta20: c,
                beta21: b,
                ..
            } => Ok(Stage1NormalFit {
                xi10: vec![c[0] + c[3] * trans10[0], c[1] + c[3] * trans10[1]],
                xi11: vec![c[2] + c[3] * trans11[0], c[3] * trans11[1]],
                varpi12: vec![b[0] + b[3] * trans20[0], b[1] + b[3] * trans20[1]],
                varpi13: vec![b[2] + b[3] * trans21[0], b[3] * trans21[1]],
                tau: b[3].abs(),
            }),
            ModelParams::QuadraticT3 { .. } => Err(Error::InvalidArgument(
                "the quadratic-t3 model has no normal stage-1 truth".into(),
            )),
        }
    }

    /// `(tau, omega, Omega)` at the truth.
    pub fn true_summary(&self) -> Result<NormalSummary> {
        let s1 = self.true_stage1()?;
        let rho = match &self.params {
            ModelParams::NormalAn { rho, .. } => *rho,
            ModelParams::QuadraticT3 { .. } => unreachable!(),
        };
        let blocks = [&s1.xi10, &s1.xi11, &s1.varpi12, &s1.varpi13];
        let omega = blocks.map(|b| b[0]);
        let slope = blocks.map(|b| b[1]);
        let cov = Matrix4::from_fn(|i, j| slope[i] * slope[j] * rho.powi((i as i32 - j as i32).abs()));
        Ok(NormalSummary {
            tau: s1.tau,
            omega,
            cov,
        })
    }

    /// Exact value of the fixed regime `(i, j)`.
    pub fn fixed_value(&self, i: i8, j: i8) -> f64 {
        let (a, b) = (f64::from(i), f64::from(j));
        match &self.params {
            ModelParams::NormalAn {
                trans10,
                trans11,
                trans20,
                trans21,
                beta20: c,
                beta21: d,
                ..
            } => {
                let x21 = trans10[0] + a * trans11[0];
                let x22 = trans20[0] + a * trans21[0];
                c[0] + c[2] * a + c[3] * x21 + b * (d[0] + d[2] * a + d[3] * x22)
            }
            ModelParams::QuadraticT3 { trans, beta20: c, beta21: d } => {
                // E x1 = 0, E x1² = 1
                let x2 = trans[0] + trans[2] * a + trans[4];
                c[0] + c[2] * a + c[4] * x2 + b * (d[0] + d[1] * a + d[2] * x2)
            }
        }
    }

    /// Best fixed regime and its exact value.
    pub fn best_fixed(&self) -> ((i8, i8), f64) {
        let mut best = ((1, 1), f64::NEG_INFINITY);
        for i in [1i8, -1] {
            for j in [1i8, -1] {
                let v = self.fixed_value(i, j);
                if v > best.1 {
                    best = ((i, j), v);
                }
            }
        }
        best
    }

    /// Targets calibrated so that the best fixed regime has value `b0 + eta`.
    pub fn calibrated_targets(&self, eta: f64) -> DesignTargets {
        DesignTargets::new(self.best_fixed().1 - eta, eta)
    }

    fn optimal_actions(&self, x1: &[f64]) -> i8 {
        sign_rule(self.q1_true(x1, 1) - self.q1_true(x1, -1))
    }
}

/// `E|a + s T|` for `T ~ t3`.
pub fn abs_t3_mean(a: f64, s: f64) -> f64 {
    if !(s > 0.0) {
        return a.abs();
    }
    const NU: f64 = 3.0;
    let u = -a / s;
    let r3 = NU.sqrt();
    let cdf = 0.5 + (u / (r3 * (1.0 + u * u / NU)) + (u / r3).atan()) / core::f64::consts::PI;
    let pdf = 2.0 / (core::f64::consts::PI * r3 * (1.0 + u * u / NU).powi(2));
    // E|T - u| = 2 E[(T - u)+] - E[T - u], with E[(T - u)+] = (nu + u²)/(nu - 1) f(u) - u (1 - F(u))
    s * (2.0 * ((NU + u * u) / (NU - 1.0) * pdf - u * (1.0 - cdf)) + u)
}

/// How treatments are assigned when simulating.
#[derive(Clone, Copy)]
pub enum Regime<'a> {
    /// The optimal regime under the true Q-functions.
    Optimal,
    /// Always `i` at stage 1 and `j` at stage 2.
    Fixed(i8, i8),
    /// Fair coin at both stages (the trial design).
    Randomized,
    /// Optimal treatment with the given probability, independently per stage.
    StandardOfCare(f64),
    Rule(&'a (dyn DecisionRule + Sync)),
}

impl core::fmt::Debug for Regime<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Regime::Optimal => f.write_str("Optimal"),
            Regime::Fixed(i, j) => write!(f, "Fixed({i}, {j})"),
            Regime::Randomized => f.write_str("Randomized"),
            Regime::StandardOfCare(p) => write!(f, "StandardOfCare({p})"),
            Regime::Rule(_) => f.write_str("Rule"),
        }
    }
}

/// Simulates one trajectory. Every regime consumes the same random numbers,
/// so values of different regimes are compared on common draws.
fn simulate_one<R: Rng + ?Sized>(model: &GenerativeModel, regime: Regime<'_>, rng: &mut R) -> Trajectory {
    let mut x1 = vec![0.0; model.p1()];
    model.draw_baseline(rng, &mut x1);
    let coin1 = coin(rng);
    let u1: f64 = rng.random();
    let noise: [f64; 2] = match model.kind {
        ModelKind::NormalAn => [normal(rng), normal(rng)],
        ModelKind::QuadraticT3 => [student_t3(rng), 0.0],
    };
    let coin2 = coin(rng);
    let u2: f64 = rng.random();
    let eps = normal(rng);

    let soc = |best: i8, u: f64, p: f64| if u < p { best } else { -best };
    let a1 = match regime {
        Regime::Optimal => model.optimal_actions(&x1),
        Regime::Fixed(i, _) => i,
        Regime::Randomized => coin1,
        Regime::StandardOfCare(p) => soc(model.optimal_actions(&x1), u1, p),
        Regime::Rule(r) => r.stage1(&x1),
    };
    let mut x2 = vec![0.0; model.p2()];
    model.transition_mean(&x1, a1, &mut x2);
    for (x, e) in x2.iter_mut().zip(noise) {
        *x += e;
    }
    let (main, contrast) = model.q2_parts(&x1, a1, &x2);
    let a2 = match regime {
        Regime::Optimal => sign_rule(contrast),
        Regime::Fixed(_, j) => j,
        Regime::Randomized => coin2,
        Regime::StandardOfCare(p) => soc(sign_rule(contrast), u2, p),
        Regime::Rule(r) => r.stage2(&x1, a1, &x2),
    };
    let y = main + f64::from(a2) * contrast + eps;
    Trajectory { x1, a1, x2, a2, y }
}

fn simulate<E: Executor>(
    model: &GenerativeModel,
    regime: Regime<'_>,
    n: usize,
    seed: u64,
    exec: &E,
) -> Vec<Trajectory>
where
    for<'a> Regime<'a>: Sync,
{
    let chunks = n.div_ceil(CHUNK);
    exec.map(chunks, |c| {
        let mut rng = stream(seed, tag::DATA, c as u64);
        let len = CHUNK.min(n - c * CHUNK);
        (0..len).map(|_| simulate_one(model, regime, &mut rng)).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// `n` i.i.d. trajectories from the randomized trial design.
pub fn draw_dataset(model: &GenerativeModel, n: usize, seed: u64) -> Result<Dataset> {
    draw_dataset_with(model, n, seed, &crate::exec::Sequential)
}

pub fn draw_dataset_with<E: Executor>(model: &GenerativeModel, n: usize, seed: u64, exec: &E) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    let rows = simulate(model, Regime::Randomized, n, seed, exec);
    Dataset::new(rows, model.p1(), model.p2(), model.features())
}

/// Outcomes of `n` participants treated under `regime`.
pub fn regime_outcomes(model: &GenerativeModel, regime: Regime<'_>, n: usize, seed: u64) -> Vec<f64> {
    simulate(model, regime, n, seed, &crate::exec::Sequential)
        .into_iter()
        .map(|t| t.y)
        .collect()
}

/// Monte Carlo mean outcome under a regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleValue {
    pub mean: f64,
    /// SD of a single counterfactual outcome.
    pub sd: f64,
    pub se: f64,
    pub draws: usize,
}

pub const MIN_ORACLE_DRAWS: usize = 10_000;

pub fn oracle_value<E: Executor>(
    model: &GenerativeModel,
    regime: Regime<'_>,
    draws: usize,
    seed: u64,
    exec: &E,
) -> Result<OracleValue> {
    if draws < MIN_ORACLE_DRAWS {
        return Err(Error::InvalidArgument(format!(
            "oracle values need at least {MIN_ORACLE_DRAWS} draws, got {draws}"
        )));
    }
    let chunks = draws.div_ceil(CHUNK);
    let parts = exec.map(chunks, |c| {
        let mut rng = stream(seed, tag::DATA, c as u64);
        let len = CHUNK.min(draws - c * CHUNK);
        let ys: Vec<f64> = (0..len).map(|_| simulate_one(model, regime, &mut rng).y).collect();
        let mean = ys.iter().sum::<f64>() / len as f64;
        let ss = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>();
        (len as f64, mean, ss)
    });
    // pairwise-stable merge of chunk moments
    let (mut n, mut mean, mut ss) = (0.0, 0.0, 0.0);
    for (m, mu, s) in parts {
        let tot = n + m;
        let d = mu - mean;
        mean += d * m / tot;
        ss += s + d * d * n * m / tot;
        n = tot;
    }
    let sd = (ss / (n - 1.0)).sqrt();
    Ok(OracleValue {
        mean,
        sd,
        se: sd / n.sqrt(),
        draws,
    })
}

/// Size of the classical comparison of the best fixed regime against `b0`
/// with a known outcome variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedBaseline {
    pub n: SampleSize,
    pub regime: (i8, i8),
    pub value: f64,
    pub variance: f64,
}

pub fn n_fixed_baseline<E: Executor>(
    model: &GenerativeModel,
    targets: &DesignTargets,
    draws: usize,
    seed: u64,
    exec: &E,
) -> Result<FixedBaseline> {
    let mut best: Option<((i8, i8), OracleValue)> = None;
    for i in [1i8, -1] {
        for j in [1i8, -1] {
            let v = oracle_value(model, Regime::Fixed(i, j), draws, seed, exec)?;
            if best.is_none_or(|(_, b)| v.mean > b.mean) {
                best = Some(((i, j), v));
            }
        }
    }
    let (regime, v) = best.expect("four regimes evaluated");
    let z = norm_quantile(1.0 - targets.gamma) + norm_quantile(1.0 - targets.alpha);
    let variance = v.sd * v.sd;
    Ok(FixedBaseline {
        n: ceil_size(variance / (targets.eta * targets.eta) * z * z),
        regime,
        value: v.mean,
        variance,
    })
}

/// Oracle asymptotic SD of the normal-procedure plug-in value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSigma {
    /// SD over datasets of `sqrt(m) V_hat`.
    pub sigma: f64,
    /// Mean of `sqrt(m) (V_hat - V)` when a reference value is supplied.
    pub scaled_bias: f64,
    pub root_mean_square: f64,
    pub failures: usize,
    pub reps: usize,
}

/// SD of `sqrt(m) (V_hat_m - V)` over `reps` simulated datasets of size `m`.
pub fn oracle_sigma_star<E: Executor>(
    model: &GenerativeModel,
    m: usize,
    reps: usize,
    seed: u64,
    nu: &NuIntegrator,
    reference: f64,
    exec: &E,
) -> Result<OracleSigma> {
    if m < 10 || reps < 2 {
        return Err(Error::InvalidArgument(format!(
            "oracle sigma needs m >= 10 and reps >= 2 (got m = {m}, reps = {reps})"
        )));
    }
    let vals = exec.map(reps, |r| {
        let data = draw_dataset(model, m, derive(seed, tag::ORACLE, r as u64)).ok()?;
        plug_in_value(&data, nu).ok().map(|p| p.value.value)
    });
    let ok: Vec<f64> = vals.iter().flatten().map(|v| (m as f64).sqrt() * (v - reference)).collect();
    let failures = reps - ok.len();
    if ok.len() < 2 {
        return Err(Error::Resampling(format!("{failures} of {reps} oracle datasets failed to fit")));
    }
    let k = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / k;
    let var = ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let ms = ok.iter().map(|v| v * v).sum::<f64>() / k;
    Ok(OracleSigma {
        sigma: var.sqrt(),
        scaled_bias: mean,
        root_mean_square: ms.sqrt(),
        failures,
        reps,
    })
}

/// Population Q-learning coefficients: the true stage-2 coefficients and the
/// least-squares projection of the true stage-1 Q-function on `(h10, a1 h11)`,
/// averaged over `draws` baseline draws with both stage-1 actions.
pub fn population_q_params(model: &GenerativeModel, draws: usize, seed: u64) -> Result<QParams> {
    let spec = model.features();
    let mu2: Vec<f64> = match &model.params {
        ModelParams::NormalAn { beta20, beta21, .. } => beta20.iter().chain(beta21).copied().collect(),
        ModelParams::QuadraticT3 { beta20, beta21, .. } => beta20.iter().chain(beta21).copied().collect(),
    };
    let mut rng = stream(seed, tag::ORACLE, u64::MAX);
    let mut x1s = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut x = vec![0.0; model.p1()];
        model.draw_baseline(&mut rng, &mut x);
        x1s.push(x);
    }
    let (d10, d11) = (spec.h10.len(), spec.h11.len());
    let rows = 2 * draws;
    let target: Vec<f64> = (0..rows)
        .map(|r| model.q1_true(&x1s[r / 2], if r % 2 == 0 { 1 } else { -1 }))
        .collect();
    let fill = |r: usize, out: &mut [f64]| {
        let x = &x1s[r / 2];
        let a = if r.is_multiple_of(2) { 1.0 } else { -1.0 };
        for (k, t) in spec.h10.iter().enumerate() {
            out[k] = t.eval(x, 0.0, &[]);
        }
        for (k, t) in spec.h11.iter().enumerate() {
            out[d10 + k] = a * t.eval(x, 0.0, &[]);
        }
    };
    let fit = weighted_ls(rows, d10 + d11, fill, &target, None, "c1")?;
    QParams::new(fit.coef.as_slice().to_vec(), mu2, &spec)
}

/// The true optimal stage-2 rule as a decision rule (stage 1 from the exact Q1).
#[derive(Debug, Clone)]
pub struct TrueOptimal<'a>(pub &'a GenerativeModel);

impl DecisionRule for TrueOptimal<'_> {
    fn stage1(&self, x1: &[f64]) -> i8 {
        self.0.optimal_actions(x1)
    }

    fn stage2(&self, x1: &[f64], a1: i8, x2: &[f64]) -> i8 {
        sign_rule(self.0.q2_parts(x1, a1, x2).1)
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;

    #[test]
    fn scenario_one_truth() {
        let m = GenerativeModel::scenario(ModelKind::NormalAn, 0.0).unwrap();
        let s = m.true_summary().unwrap();
        assert_eq!(s.omega, [-0.5, 3.0, 0.6, 4.5]);
        assert!((s.cov[(0, 0)] - 2.25).abs() < 1e-15);
        assert!((s.cov[(2, 3)] + 0.25).abs() < 1e-15);
        assert_eq!(s.tau, 1.0);
        assert_eq!(m.best_fixed(), ((1, 1), 7.6));
    }

    #[test]
    fn t3_absolute_mean() {
        // E|T| for t3 is 2 sqrt(3) / pi
        let e = abs_t3_mean(0.0, 1.0);
        assert!((e - 2.0 * 3f64.sqrt() / core::f64::consts::PI).abs() < 1e-14);
        assert!((abs_t3_mean(-2.5, 0.0) - 2.5).abs() < 1e-15);
        // far from zero the absolute value is almost the identity
        assert!((abs_t3_mean(1e4, 1.0) - 1e4).abs() < 1e-3);
        let s = 0.7;
        assert!((abs_t3_mean(1.3, s) - abs_t3_mean(-1.3, s)).abs() < 1e-14);
    }

    #[test]
    fn seeded_draw_is_reproducible() {
        let m = GenerativeModel::scenario(ModelKind::QuadraticT3, 1.0).unwrap();
        let a = draw_dataset(&m, 5000, 11).unwrap();
        let b = draw_dataset(&m, 5000, 11).unwrap();
        assert_eq!(a.trajectories(), b.trajectories());
    }

    #[test]
    fn randomized_regime_is_the_observed_mean() {
        let m = GenerativeModel::scenario(ModelKind::NormalAn, 1.0).unwrap();
        let n = 12_000;
        let data = draw_dataset(&m, n, 3).unwrap();
        let mean = data.trajectories().iter().map(|t| t.y).sum::<f64>() / n as f64;
        let v = oracle_value(&m, Regime::Randomized, n, 3, &Sequential).unwrap();
        assert!((v.mean - mean).abs() < 1e-10);
    }

    #[test]
    fn zero_size_rejected() {
        let m = GenerativeModel::scenario(ModelKind::NormalAn, 1.0).unwrap();
        assert!(draw_dataset(&m, 0, 1).is_err());
        assert!(GenerativeModel::scenario(ModelKind::NormalAn, 0.7).is_err());
    }
}
