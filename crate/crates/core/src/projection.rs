//! The projection-based procedure: Wald confidence sets for the Q-learning
//! coefficients, the AIPW pseudo-value, the projection test, and bootstrap
//! sizing with oversampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;

use crate::data::{Dataset, DesignTargets, SummaryId, Trajectory};
use crate::design::{sandwich, Gram, LsFit, QDesign};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::linalg::{cholesky_pd, dot, psd_factor};
use crate::qlearn::{fit_q_learning, stage2_ls, QParams, Stage2Fit};
use crate::report::{ceil_size, put, Criterion, Diagnostics, Procedure, SampleSize, SampleSizeResult};
use crate::rng::{derive, resample_weights, stream, tag, unit_ball};
use crate::special::{chi2_quantile, norm_cdf, norm_pdf, norm_quantile, order_statistic_quantile};

/// Wald ellipsoid `{mu : n (mu - center)ᵀ shape⁻¹ (mu - center) <= radius2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceEllipsoid {
    pub center: Vec<f64>,
    /// Asymptotic covariance of `sqrt(n) (mu_hat - mu)`.
    pub shape: DMatrix<f64>,
    /// `L` with `L Lᵀ = shape`.
    pub factor: DMatrix<f64>,
    pub radius2: f64,
    pub n: f64,
    /// `shape` is singular (the set is flat in some directions).
    pub degenerate: bool,
}

impl ConfidenceEllipsoid {
    fn build(center: Vec<f64>, shape: DMatrix<f64>, radius2: f64, n: f64, exact_fit: bool) -> Result<Self> {
        let (factor, degenerate) = match cholesky_pd(&shape) {
            Some(l) => (l, exact_fit),
            None => (psd_factor(&shape)?, true),
        };
        Ok(Self {
            center,
            shape,
            factor,
            radius2,
            n,
            degenerate,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `center + sqrt(radius2 / n) L u` for `u` in the unit ball.
    pub fn point(&self, u: &[f64]) -> Vec<f64> {
        let s = (self.radius2 / self.n).sqrt();
        let d = self.dim();
        let mut out = self.center.clone();
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += self.factor[(i, j)] * u[j];
            }
            out[i] += s * acc;
        }
        out
    }

    /// Wald statistic `n (mu - center)ᵀ shape⁺ (mu - center)`, infinite off the
    /// support of a singular shape.
    pub fn statistic(&self, mu: &[f64]) -> f64 {
        let d = DVector::from_iterator(self.dim(), mu.iter().zip(&self.center).map(|(a, b)| a - b));
        let eig = SymmetricEigen::new(self.shape.clone());
        let scale = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
        let mut stat = 0.0;
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            let proj = eig.eigenvectors.column(k).dot(&d);
            if l > 1e-12 * scale {
                stat += proj * proj / l;
            } else if proj.abs() > 1e-10 * (1.0 + d.norm()) {
                return f64::INFINITY;
            }
        }
        self.n * stat
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        self.statistic(mu) <= self.radius2 * (1.0 + 1e-12) + 1e-12
    }
}

/// Sample mean and divide-by-n SD of the pseudo-outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoValueStats {
    pub vhat: f64,
    pub varsigma: f64,
    pub n: f64,
}

/// The AIPW pseudo-outcome of one trajectory at coefficients `q`.
pub fn delta_pseudo(traj: &Trajectory, q: &QParams, spec: &crate::data::FeatureSpec) -> f64 {
    let mut buf = Vec::new();
    spec.eval_stage1(SummaryId::H10, &traj.x1, &mut buf);
    let main1 = dot(&buf, q.mu10());
    spec.eval_stage1(SummaryId::H11, &traj.x1, &mut buf);
    let s1 = dot(&buf, q.mu11());
    spec.eval_stage2(SummaryId::H20, &traj.x1, traj.a1, &traj.x2, &mut buf);
    let main2 = dot(&buf, q.mu20());
    spec.eval_stage2(SummaryId::H21, &traj.x1, traj.a1, &traj.x2, &mut buf);
    let s2 = dot(&buf, q.mu21());
    delta_from_parts(
        traj.y,
        f64::from(traj.a1) * s1 > 0.0,
        f64::from(traj.a2) * s2 > 0.0,
        main1 + s1.abs(),
        main2 + s2.abs(),
    )
}

/// `I1 (4 y I2 + 2 (1 - 2 I2) maxQ2) + (1 - 2 I1) maxQ1`.
#[inline]
pub fn delta_from_parts(y: f64, concordant1: bool, concordant2: bool, max_q1: f64, max_q2: f64) -> f64 {
    let k = if concordant2 { 4.0 * y - 2.0 * max_q2 } else { 2.0 * max_q2 };
    if concordant1 {
        k - max_q1
    } else {
        max_q1
    }
}

pub fn pseudo_value_stats(data: &Dataset, q: &QParams) -> Result<PseudoValueStats> {
    if data.len() < 2 {
        return Err(Error::InvalidDataset("pseudo-value statistics need n >= 2".into()));
    }
    let design = QDesign::new(data);
    let engine = Engine::new(&design, None)?;
    let cache = engine.stage2_cache(q.mu20(), q.mu21());
    let mut deltas = Vec::new();
    engine.deltas(&cache, q.mu10(), q.mu11(), &mut deltas);
    Ok(weighted_stats(&deltas, None))
}

fn weighted_stats(deltas: &[f64], w: Option<&[f64]>) -> PseudoValueStats {
    let (mut sw, mut s) = (0.0, 0.0);
    for (i, d) in deltas.iter().enumerate() {
        let wi = w.map_or(1.0, |w| w[i]);
        sw += wi;
        s += wi * d;
    }
    let mean = s / sw;
    let mut ss = 0.0;
    for (i, d) in deltas.iter().enumerate() {
        let wi = w.map_or(1.0, |w| w[i]);
        ss += wi * (d - mean) * (d - mean);
    }
    PseudoValueStats {
        vhat: mean,
        varsigma: (ss / sw).sqrt(),
        n: sw,
    }
}

/// Per-row quantities that depend only on the stage-2 coefficients.
struct Stage2Cache {
    /// `max_a2 Q2(h2, a2; mu2)`: the stage-1 pseudo-outcome.
    max_q2: Vec<f64>,
    /// `4 y I2 + 2 (1 - 2 I2) maxQ2`.
    k: Vec<f64>,
}

/// Pseudo-value machinery over one (possibly reweighted) design.
struct Engine<'a> {
    design: &'a QDesign,
    weights: Option<&'a [f64]>,
    c1_gram: Gram,
}

impl<'a> Engine<'a> {
    fn new(design: &'a QDesign, weights: Option<&'a [f64]>) -> Result<Self> {
        let c1_gram = Gram::new(
            design.rows(),
            design.dim(SummaryId::C1),
            |i, o| design.c1(i, o),
            weights,
            "c1",
        )?;
        Ok(Self {
            design,
            weights,
            c1_gram,
        })
    }

    fn n(&self) -> f64 {
        self.c1_gram.total_weight
    }

    fn stage2_cache(&self, mu20: &[f64], mu21: &[f64]) -> Stage2Cache {
        let d = self.design;
        let rows = d.rows();
        let mut max_q2 = Vec::with_capacity(rows);
        let mut k = Vec::with_capacity(rows);
        for i in 0..rows {
            let s = dot(d.row(SummaryId::H21, i), mu21);
            let m = dot(d.row(SummaryId::H20, i), mu20) + s.abs();
            max_q2.push(m);
            k.push(if d.a2[i] * s > 0.0 { 4.0 * d.y[i] - 2.0 * m } else { 2.0 * m });
        }
        Stage2Cache { max_q2, k }
    }

    /// `mu1_hat(mu2)` and its sandwich.
    fn stage1_fit(&self, cache: &Stage2Cache) -> (LsFit, DMatrix<f64>) {
        let d = self.design;
        let fit = self.c1_gram.solve(d.rows(), |i, o| d.c1(i, o), &cache.max_q2, self.weights);
        let w = sandwich(&fit, |i, o| d.c1(i, o), self.weights);
        (fit, w)
    }

    fn deltas(&self, cache: &Stage2Cache, mu10: &[f64], mu11: &[f64], out: &mut Vec<f64>) {
        let d = self.design;
        out.clear();
        for i in 0..d.rows() {
            let s = dot(d.row(SummaryId::H11, i), mu11);
            let m = dot(d.row(SummaryId::H10, i), mu10) + s.abs();
            out.push(if d.a1[i] * s > 0.0 { cache.k[i] - m } else { m });
        }
    }
}

/// Residuals negligible against the target: the sandwich carries no information.
fn exact_fit(fit: &LsFit, target: &[f64], weights: Option<&[f64]>) -> bool {
    let mut scale = 0.0f64;
    let mut worst = 0.0f64;
    for (i, (r, t)) in fit.residuals.iter().zip(target).enumerate() {
        if weights.is_none_or(|w| w[i] > 0.0) {
            scale = scale.max(t.abs());
            worst = worst.max(r.abs());
        }
    }
    worst <= 1e-10 * (1.0 + scale)
}

fn ls_sandwich(design: &QDesign, fit: &LsFit, weights: Option<&[f64]>) -> DMatrix<f64> {
    sandwich(fit, |i, o| design.c2(i, o), weights)
}

/// Robust covariance of `sqrt(n) (mu2_hat - mu2*)`.
pub fn sandwich_stage2(data: &Dataset, s2: &Stage2Fit) -> DMatrix<f64> {
    let design = QDesign::new(data);
    let fit = LsFit {
        coef: s2.coefficients(),
        gram_inverse: s2.gram_inverse.clone(),
        residuals: s2.residuals.clone(),
        total_weight: data.len() as f64,
    };
    ls_sandwich(&design, &fit, None)
}

fn check_level(name: &str, eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {eps} must lie in (0, 1]")))
    }
}

/// Wald `(1 - eps2)` confidence set for the stage-2 coefficients.
pub fn conf_set_stage2(data: &Dataset, s2: &Stage2Fit, eps2: f64) -> Result<ConfidenceEllipsoid> {
    check_level("eps2", eps2)?;
    let design = QDesign::new(data);
    let fit = LsFit {
        coef: s2.coefficients(),
        gram_inverse: s2.gram_inverse.clone(),
        residuals: s2.residuals.clone(),
        total_weight: data.len() as f64,
    };
    let shape = ls_sandwich(&design, &fit, None);
    let exact = exact_fit(&fit, &design.y, None);
    stage2_ellipsoid(fit.coef.as_slice().to_vec(), shape, eps2, data.len() as f64, exact)
}

fn stage2_ellipsoid(center: Vec<f64>, shape: DMatrix<f64>, eps2: f64, n: f64, exact_fit: bool) -> Result<ConfidenceEllipsoid> {
    if exact_fit || cholesky_pd(&shape).is_none() {
        return Err(Error::DegenerateSandwich("the stage-2 coefficients".into()));
    }
    let radius2 = chi2_quantile(1.0 - eps2, center.len());
    ConfidenceEllipsoid::build(center, shape, radius2, n, false)
}

/// `mu1_hat(mu2)` and its `(1 - eps1)` Wald set.
pub fn mu1_given_mu2(data: &Dataset, mu2: &[f64], eps1: f64) -> Result<(Vec<f64>, ConfidenceEllipsoid)> {
    check_level("eps1", eps1)?;
    let design = QDesign::new(data);
    let engine = Engine::new(&design, None)?;
    let split = design.dim(SummaryId::H20);
    if mu2.len() != design.dim(SummaryId::C2) {
        return Err(Error::InvalidArgument(format!(
            "mu2 has length {}, expected {}",
            mu2.len(),
            design.dim(SummaryId::C2)
        )));
    }
    let cache = engine.stage2_cache(&mu2[..split], &mu2[split..]);
    let (fit, shape) = engine.stage1_fit(&cache);
    let exact = exact_fit(&fit, &cache.max_q2, None);
    let center = fit.coef.as_slice().to_vec();
    let radius2 = chi2_quantile(1.0 - eps1, center.len());
    let ell = ConfidenceEllipsoid::build(center.clone(), shape, radius2, engine.n(), exact)?;
    Ok((center, ell))
}

/// `Xi = {(mu1, mu2) : mu2 in stage2, mu1 in stage-1 set built at mu2}`.
#[derive(Debug, Clone)]
pub struct JointConfidenceSet {
    pub stage2: ConfidenceEllipsoid,
    pub eps1: f64,
    pub eps2: f64,
    data: Dataset,
}

impl JointConfidenceSet {
    pub fn new(data: &Dataset, eps1: f64, eps2: f64) -> Result<Self> {
        check_level("eps1", eps1)?;
        let s2 = crate::qlearn::fit_stage2(data)?;
        Ok(Self {
            stage2: conf_set_stage2(data, &s2, eps2)?,
            eps1,
            eps2,
            data: data.clone(),
        })
    }

    pub fn stage1(&self, mu2: &[f64]) -> Result<ConfidenceEllipsoid> {
        Ok(mu1_given_mu2(&self.data, mu2, self.eps1)?.1)
    }

    pub fn contains(&self, q: &QParams) -> Result<bool> {
        if !self.stage2.contains(&q.mu2) {
            return Ok(false);
        }
        Ok(self.stage1(&q.mu2)?.contains(&q.mu1))
    }
}

/// Candidate counts for the search over `Xi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SearchBudget {
    /// Stage-2 candidates (the first is the center).
    pub m2: usize,
    /// Stage-1 candidates per stage-2 candidate.
    pub m1: usize,
    /// Rounds of coordinate refinement around the best candidate.
    pub refine_rounds: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            m2: 200,
            m1: 50,
            refine_rounds: 2,
        }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        if self.m2 == 0 || self.m1 == 0 {
            return Err(Error::InvalidArgument("search budget must be positive".into()));
        }
        Ok(())
    }
}

/// Best point found for one direction of the search.
#[derive(Debug, Clone, PartialEq)]
pub struct Extremum {
    pub value: f64,
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub min: Extremum,
    pub max: Extremum,
    pub evaluations: usize,
}

/// Point in unit-ball coordinates of the two stages.
#[derive(Clone)]
struct Coords {
    u2: Vec<f64>,
    u1: Vec<f64>,
}

struct Xi<'a> {
    engine: &'a Engine<'a>,
    stage2: &'a ConfidenceEllipsoid,
    radius1: f64,
    split2: usize,
    split1: usize,
}

/// Everything needed to evaluate objectives at stage-1 points for one `mu2`.
struct Stage1Slice {
    mu2: Vec<f64>,
    cache: Stage2Cache,
    center: Vec<f64>,
    factor: Option<DMatrix<f64>>,
}

impl Xi<'_> {
    fn slice(&self, u2: &[f64]) -> Stage1Slice {
        let mu2 = self.stage2.point(u2);
        let cache = self.engine.stage2_cache(&mu2[..self.split2], &mu2[self.split2..]);
        let (fit, shape) = self.engine.stage1_fit(&cache);
        let factor = if exact_fit(&fit, &cache.max_q2, self.engine.weights) {
            None
        } else {
            cholesky_pd(&shape).or_else(|| psd_factor(&shape).ok())
        };
        Stage1Slice {
            mu2,
            cache,
            center: fit.coef.as_slice().to_vec(),
            factor,
        }
    }

    fn mu1(&self, s: &Stage1Slice, u1: &[f64]) -> Vec<f64> {
        let mut mu1 = s.center.clone();
        if let Some(l) = &s.factor {
            let scale = (self.radius1 / self.engine.n()).sqrt();
            let d = mu1.len();
            for i in 0..d {
                let acc: f64 = (0..d).map(|j| l[(i, j)] * u1[j]).sum();
                mu1[i] += scale * acc;
            }
        }
        mu1
    }

    fn eval(&self, s: &Stage1Slice, u1: &[f64], f: &dyn Fn(&[f64]) -> f64, buf: &mut Vec<f64>) -> (f64, Vec<f64>) {
        let mu1 = self.mu1(s, u1);
        self.engine.deltas(&s.cache, &mu1[..self.split1], &mu1[self.split1..], buf);
        (f(buf), mu1)
    }

    /// Min and max of `f(deltas)` over candidates, then coordinate refinement.
    fn search(&self, budget: &SearchBudget, seed: u64, f: &dyn Fn(&[f64]) -> f64) -> SearchOutcome {
        let d2 = self.stage2.dim();
        let d1 = self.engine.design.dim(SummaryId::C1);
        let mut buf = Vec::with_capacity(self.engine.design.rows());
        let mut evaluations = 0;
        let mut best_min: Option<(f64, Coords, Vec<f64>, Vec<f64>)> = None;
        let mut best_max: Option<(f64, Coords, Vec<f64>, Vec<f64>)> = None;
        for i in 0..budget.m2 {
            let u2 = candidate(derive(seed, tag::XI_STAGE2, 0), tag::XI_STAGE2, i, d2);
            let slice = self.slice(&u2);
            let s1_seed = derive(seed, tag::XI_STAGE1, i as u64);
            for j in 0..budget.m1 {
                let u1 = candidate(s1_seed, tag::XI_STAGE1, j, d1);
                let (v, mu1) = self.eval(&slice, &u1, f, &mut buf);
                evaluations += 1;
                if v.is_nan() {
                    continue;
                }
                let c = || Coords {
                    u2: u2.clone(),
                    u1: u1.clone(),
                };
                if best_min.as_ref().is_none_or(|b| v < b.0) {
                    best_min = Some((v, c(), mu1.clone(), slice.mu2.clone()));
                }
                if best_max.as_ref().is_none_or(|b| v > b.0) {
                    best_max = Some((v, c(), mu1, slice.mu2.clone()));
                }
            }
        }
        let (mut lo, mut hi) = (
            best_min.expect("budget is positive"),
            best_max.expect("budget is positive"),
        );
        for round in 0..budget.refine_rounds {
            let step = 0.5 / (1u64 << round) as f64;
            evaluations += self.refine(&mut lo, step, f, &mut buf, true);
            evaluations += self.refine(&mut hi, step, f, &mut buf, false);
        }
        SearchOutcome {
            min: Extremum {
                value: lo.0,
                mu1: lo.2,
                mu2: lo.3,
            },
            max: Extremum {
                value: hi.0,
                mu1: hi.2,
                mu2: hi.3,
            },
            evaluations,
        }
    }

    fn refine(
        &self,
        best: &mut (f64, Coords, Vec<f64>, Vec<f64>),
        step: f64,
        f: &dyn Fn(&[f64]) -> f64,
        buf: &mut Vec<f64>,
        minimize: bool,
    ) -> usize {
        let d2 = best.1.u2.len();
        let d1 = best.1.u1.len();
        let mut evals = 0;
        let mut slice = self.slice(&best.1.u2);
        for k in 0..d2 + d1 {
            for sign in [1.0, -1.0] {
                let mut c = best.1.clone();
                if k < d2 {
                    c.u2[k] += sign * step;
                    clamp_ball(&mut c.u2);
                } else {
                    c.u1[k - d2] += sign * step;
                    clamp_ball(&mut c.u1);
                }
                let trial_slice;
                let s = if k < d2 {
                    trial_slice = self.slice(&c.u2);
                    &trial_slice
                } else {
                    &slice
                };
                let (v, mu1) = self.eval(s, &c.u1, f, buf);
                evals += 1;
                let better = if minimize { v < best.0 } else { v > best.0 };
                if better {
                    let mu2 = s.mu2.clone();
                    *best = (v, c, mu1, mu2);
                    if k < d2 {
                        slice = self.slice(&best.1.u2);
                    }
                    break;
                }
            }
        }
        evals
    }
}

/// Candidate `index` of a stage: 0 is the center, odd indices are uniform
/// in the ball, even indices lie on its boundary.
fn candidate(seed: u64, stage_tag: u64, index: usize, dim: usize) -> Vec<f64> {
    if index == 0 {
        return vec![0.0; dim];
    }
    let mut rng = stream(seed, stage_tag, index as u64);
    unit_ball(&mut rng, dim, index.is_multiple_of(2))
}

fn clamp_ball(u: &mut [f64]) {
    let r = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if r > 1.0 {
        u.iter_mut().for_each(|x| *x /= r);
    }
}

/// Outcome of the projection test.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTest {
    pub reject: bool,
    /// Approximate infimum of `V_hat(mu) - z sigma_hat(mu) / sqrt(n)` over `Xi`.
    pub inf_value: f64,
    pub argmin: QParams,
    /// The same statistic at the Q-learning estimate.
    pub plug_in_value: f64,
    pub evaluations: usize,
}

/// Rejects `V <= b0` when the lower bound `inf over Xi of V_hat - z_{1-theta2} sigma_hat / sqrt(n)`
/// is at least `b0`.
pub fn projection_test(data: &Dataset, targets: &DesignTargets, budget: &SearchBudget, seed: u64) -> Result<ProjectionTest> {
    targets.validate()?;
    projection_test_at(data, targets.b0, targets.theta2, targets.eps1, targets.eps2, budget, seed)
}

/// Projection test with explicit levels; `eps = 1` collapses a stage to its estimate.
pub fn projection_test_at(
    data: &Dataset,
    b0: f64,
    theta2: f64,
    eps1: f64,
    eps2: f64,
    budget: &SearchBudget,
    seed: u64,
) -> Result<ProjectionTest> {
    budget.validate()?;
    check_level("eps1", eps1)?;
    check_level("eps2", eps2)?;
    let design = QDesign::new(data);
    let engine = Engine::new(&design, None)?;
    let fit2 = stage2_ls(&design, None)?;
    let shape = ls_sandwich(&design, &fit2, None);
    let exact = exact_fit(&fit2, &design.y, None);
    let stage2 = stage2_ellipsoid(fit2.coef.as_slice().to_vec(), shape, eps2, engine.n(), exact)?;
    let spec = data.features();
    let xi = Xi {
        engine: &engine,
        stage2: &stage2,
        radius1: chi2_quantile(1.0 - eps1, design.dim(SummaryId::C1)),
        split2: spec.h20.len(),
        split1: spec.h10.len(),
    };
    let z = norm_quantile(1.0 - theta2);
    let root_n = engine.n().sqrt();
    let objective = |d: &[f64]| {
        let s = weighted_stats(d, None);
        s.vhat - z * s.varsigma / root_n
    };
    let plug = xi.slice(&vec![0.0; stage2.dim()]);
    let (plug_in_value, _) = xi.eval(&plug, &vec![0.0; design.dim(SummaryId::C1)], &objective, &mut Vec::new());
    let out = xi.search(budget, seed, &objective);
    Ok(ProjectionTest {
        reject: out.min.value >= b0,
        inf_value: out.min.value,
        argmin: QParams::new(out.min.mu1, out.min.mu2, spec)?,
        plug_in_value,
        evaluations: out.evaluations,
    })
}

/// Bootstrap-with-oversampling settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSettings {
    pub reps: usize,
    pub budget: SearchBudget,
    pub seed: u64,
}

/// Estimated probability that the projection test rejects at size `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEstimate {
    pub n: usize,
    pub power: f64,
    pub successes: usize,
    pub reps: usize,
    pub redrawn: u64,
}

/// Resample, refit and search one bootstrap replicate; `None` after
/// repeated singular resamples.
fn bootstrap_search(
    design: &QDesign,
    n: usize,
    targets: &DesignTargets,
    budget: &SearchBudget,
    rep_seed: u64,
    boot_tag: u64,
    objective: &(dyn Fn(&[f64], &[f64]) -> f64 + Sync),
) -> (Option<SearchOutcome>, u64) {
    let spec_split = (design.dim(SummaryId::H20), design.dim(SummaryId::H10));
    for attempt in 0..crate::normal::MAX_RESAMPLE_ATTEMPTS {
        let mut rng = stream(rep_seed, boot_tag, attempt);
        let w = resample_weights(&mut rng, design.rows(), n);
        let Ok(engine) = Engine::new(design, Some(&w)) else { continue };
        let Ok(fit2) = stage2_ls(design, Some(&w)) else { continue };
        let shape = ls_sandwich(design, &fit2, Some(&w));
        let exact = exact_fit(&fit2, &design.y, Some(&w));
        let Ok(stage2) = stage2_ellipsoid(fit2.coef.as_slice().to_vec(), shape, targets.eps2, n as f64, exact) else {
            continue;
        };
        let xi = Xi {
            engine: &engine,
            stage2: &stage2,
            radius1: chi2_quantile(1.0 - targets.eps1, design.dim(SummaryId::C1)),
            split2: spec_split.0,
            split1: spec_split.1,
        };
        let f = |d: &[f64]| objective(d, &w);
        return (Some(xi.search(budget, derive(rep_seed, tag::SEARCH, 0), &f)), attempt);
    }
    (None, crate::normal::MAX_RESAMPLE_ATTEMPTS)
}

/// Fraction of size-`n` bootstrap resamples of the pilot in which
/// `inf over Xi_b of [sqrt(n)(V_b - V_0) + min(sqrt(n)(V_0 - b0), sqrt(n) eta)] / sigma_b`
/// reaches `z_{1-theta2}`.
pub fn bootstrap_power<E: Executor>(
    pilot: &Dataset,
    n: usize,
    targets: &DesignTargets,
    settings: &BootstrapSettings,
    exec: &E,
) -> Result<PowerEstimate> {
    let design = QDesign::new(pilot);
    bootstrap_power_design(&design, n, targets, settings, exec)
}

fn check_bootstrap(design: &QDesign, n: usize, settings: &BootstrapSettings) -> Result<()> {
    settings.budget.validate()?;
    if settings.reps == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one replicate".into()));
    }
    if n < design.rows() {
        return Err(Error::InvalidArgument(format!(
            "bootstrap size {n} is below the pilot size {}",
            design.rows()
        )));
    }
    Ok(())
}

fn bootstrap_power_design<E: Executor>(
    design: &QDesign,
    n: usize,
    targets: &DesignTargets,
    settings: &BootstrapSettings,
    exec: &E,
) -> Result<PowerEstimate> {
    check_bootstrap(design, n, settings)?;
    let root_n = (n as f64).sqrt();
    let z = norm_quantile(1.0 - targets.theta2);
    let (b0, eta) = (targets.b0, targets.eta);
    let objective = move |d: &[f64], w: &[f64]| {
        let boot = weighted_stats(d, Some(w));
        let pilot = weighted_stats(d, None);
        let num = root_n * (boot.vhat - pilot.vhat) + (root_n * (pilot.vhat - b0)).min(root_n * eta);
        if boot.varsigma > 0.0 {
            num / boot.varsigma
        } else if num > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    };
    let out = exec.map(settings.reps, |b| {
        let rep_seed = derive(settings.seed, tag::POWER_BOOT, b as u64);
        bootstrap_search(design, n, targets, &settings.budget, rep_seed, tag::POWER_BOOT, &objective)
    });
    let mut successes = 0;
    let mut redrawn = 0;
    for (b, (res, r)) in out.into_iter().enumerate() {
        redrawn += r;
        match res {
            Some(s) => successes += usize::from(s.min.value >= z),
            None => {
                return Err(Error::Resampling(format!(
                    "bootstrap replicate {b} at n = {n} was singular in every redraw"
                )))
            }
        }
    }
    Ok(PowerEstimate {
        n,
        power: successes as f64 / settings.reps as f64,
        successes,
        reps: settings.reps,
        redrawn,
    })
}

/// `power(n) = Phi(a + b sqrt(n))` fitted to bootstrap powers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerCurveFit {
    pub a: f64,
    pub b: f64,
    pub converged: bool,
}

impl PowerCurveFit {
    pub fn power(&self, n: f64) -> f64 {
        norm_cdf(self.a + self.b * n.sqrt())
    }

    /// Smallest real `n` with fitted power at least `target`.
    pub fn solve(&self, target: f64) -> Option<f64> {
        if !(self.b > 0.0) {
            return None;
        }
        let r = (norm_quantile(target) - self.a) / self.b;
        Some(if r <= 0.0 { 0.0 } else { r * r })
    }
}

/// Nonlinear least squares of `powers` on `Phi(a + b sqrt(n))` by
/// Levenberg-Marquardt, started from a probit regression of clipped powers.
pub fn fit_power_curve(grid: &[usize], powers: &[f64], reps: usize) -> Result<PowerCurveFit> {
    if grid.len() != powers.len() || grid.len() < 2 {
        return Err(Error::CurveFit("need at least two grid points".into()));
    }
    let x: Vec<f64> = grid.iter().map(|&n| (n as f64).sqrt()).collect();
    let lo = 0.5 / reps.max(1) as f64;
    let z: Vec<f64> = powers.iter().map(|&p| norm_quantile(p.clamp(lo, 1.0 - lo))).collect();
    let k = x.len() as f64;
    let (mx, mz) = (x.iter().sum::<f64>() / k, z.iter().sum::<f64>() / k);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxz: f64 = x.iter().zip(&z).map(|(a, b)| (a - mx) * (b - mz)).sum();
    let mut b = if sxx > 0.0 { sxz / sxx } else { 0.0 };
    let mut a = mz - b * mx;
    let sse = |a: f64, b: f64| -> f64 {
        x.iter()
            .zip(powers)
            .map(|(xi, p)| (p - norm_cdf(a + b * xi)).powi(2))
            .sum()
    };
    let mut cur = sse(a, b);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..200 {
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for (xi, p) in x.iter().zip(powers) {
            let e = a + b * xi;
            let r = p - norm_cdf(e);
            let g = [norm_pdf(e), norm_pdf(e) * xi];
            for i in 0..2 {
                jtr[i] += g[i] * r;
                for j in 0..2 {
                    jtj[i][j] += g[i] * g[j];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let m = [
                [jtj[0][0] * (1.0 + lambda), jtj[0][1]],
                [jtj[1][0], jtj[1][1] * (1.0 + lambda)],
            ];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let da = (m[1][1] * jtr[0] - m[0][1] * jtr[1]) / det;
            let db = (m[0][0] * jtr[1] - m[1][0] * jtr[0]) / det;
            let next = sse(a + da, b + db);
            if next.is_finite() && next <= cur {
                let rel = (cur - next) / cur.max(1e-300);
                a += da;
                b += db;
                cur = next;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-12 || (da.abs() < 1e-10 && db.abs() < 1e-10) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::CurveFit("non-finite parameters".into()));
    }
    Ok(PowerCurveFit { a, b, converged })
}

/// Power estimates on a grid with the fitted curve.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerCurve {
    pub grid: Vec<usize>,
    pub powers: Vec<f64>,
    pub fit: Option<PowerCurveFit>,
    pub fit_error: Option<alloc::string::String>,
}

/// `{n0, 2 n0, 4 n0, 8 n0, 16 n0}`.
pub fn default_grid(n0: usize) -> Vec<usize> {
    [1, 2, 4, 8, 16].iter().map(|k| k * n0).collect()
}

fn check_grid(grid: &[usize], n0: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("grid must be strictly ascending".into()));
    }
    if grid[0] < n0 {
        return Err(Error::InvalidArgument(format!(
            "grid starts at {} but the pilot has {n0} rows",
            grid[0]
        )));
    }
    Ok(())
}

/// Plug-in AIPW value of the pilot at its Q-learning estimate.
pub fn pilot_plug_in(pilot: &Dataset) -> Result<(QParams, PseudoValueStats)> {
    let q = fit_q_learning(pilot)?;
    let stats = pseudo_value_stats(pilot, &q)?;
    Ok((q, stats))
}

pub fn power_curve<E: Executor>(
    pilot: &Dataset,
    targets: &DesignTargets,
    grid: &[usize],
    settings: &BootstrapSettings,
    exec: &E,
) -> Result<PowerCurve> {
    check_grid(grid, pilot.len())?;
    let design = QDesign::new(pilot);
    let mut powers = Vec::with_capacity(grid.len());
    for &n in grid {
        powers.push(bootstrap_power_design(&design, n, targets, settings, exec)?.power);
    }
    let (fit, fit_error) = match fit_power_curve(grid, &powers, settings.reps) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(format!("{e}"))),
    };
    Ok(PowerCurve {
        grid: grid.to_vec(),
        powers,
        fit,
        fit_error,
    })
}

/// Smallest `n` with bootstrap power of the projection test at least `1 - gamma`,
/// or the infinite sentinel when the pilot shows no benefit over `b0`.
pub fn solve_n_pow_projection<E: Executor>(
    pilot: &Dataset,
    targets: &DesignTargets,
    grid: &[usize],
    settings: &BootstrapSettings,
    exec: &E,
) -> Result<SampleSizeResult> {
    targets.validate_projection_pow()?;
    check_grid(grid, pilot.len())?;
    let n0 = pilot.len();
    let (_, plug) = pilot_plug_in(pilot)?;
    let mut diagnostics = Diagnostics::new();
    put(&mut diagnostics, "pilot_value", plug.vhat);
    put(&mut diagnostics, "pilot_value_sd", plug.varsigma);
    put(&mut diagnostics, "bootstrap_reps", settings.reps);
    let result = |n, diagnostics| SampleSizeResult {
        n,
        criterion: Criterion::Pow,
        procedure: Procedure::Projection,
        inputs: *targets,
        diagnostics,
    };
    if plug.vhat <= targets.b0 {
        put(&mut diagnostics, "sentinel", "pilot shows no benefit");
        return Ok(result(SampleSize::Infinite, diagnostics));
    }
    let curve = power_curve(pilot, targets, grid, settings, exec)?;
    let target = 1.0 - targets.gamma;
    put(&mut diagnostics, "grid", curve.grid.iter().map(|&n| n as f64).collect::<Vec<_>>());
    put(&mut diagnostics, "grid_power", curve.powers.clone());
    let fitted = curve.fit.and_then(|f| {
        put(&mut diagnostics, "fit_a", f.a);
        put(&mut diagnostics, "fit_b", f.b);
        put(&mut diagnostics, "fit_converged", f.converged);
        if f.converged {
            f.solve(target)
        } else {
            None
        }
    });
    let n = match fitted {
        Some(x) => match ceil_size(x) {
            SampleSize::Finite(n) => SampleSize::Finite(n.max(n0 as u64)),
            s => s,
        },
        None => {
            put(&mut diagnostics, "fallback", "raw grid power");
            match curve.grid.iter().zip(&curve.powers).find(|(_, p)| **p >= target) {
                Some((&n, _)) => SampleSize::Finite(n as u64),
                None => {
                    put(&mut diagnostics, "sentinel", "no grid point reaches the target power");
                    SampleSize::Infinite
                }
            }
        }
    };
    Ok(result(n, diagnostics))
}

/// `(1 - theta2)` bootstrap quantiles of the spread
/// `sup over Xi_b of (V_b - V_0) - inf over Xi_b of (V_b - V_0)` at each grid size.
pub fn opt_spread_quantiles<E: Executor>(
    pilot: &Dataset,
    targets: &DesignTargets,
    grid: &[usize],
    settings: &BootstrapSettings,
    exec: &E,
) -> Result<Vec<f64>> {
    check_grid(grid, pilot.len())?;
    let design = QDesign::new(pilot);
    let objective = |d: &[f64], w: &[f64]| weighted_stats(d, Some(w)).vhat - weighted_stats(d, None).vhat;
    let mut out = Vec::with_capacity(grid.len());
    for &n in grid {
        check_bootstrap(&design, n, settings)?;
        let spreads = exec.map(settings.reps, |b| {
            let rep_seed = derive(settings.seed, tag::OPT_BOOT, b as u64);
            bootstrap_search(&design, n, targets, &settings.budget, rep_seed, tag::OPT_BOOT, &objective)
        });
        let mut d = Vec::with_capacity(settings.reps);
        for (b, (res, _)) in spreads.into_iter().enumerate() {
            let s = res.ok_or_else(|| {
                Error::Resampling(format!("bootstrap replicate {b} at n = {n} was singular in every redraw"))
            })?;
            d.push((s.max.value - s.min.value).max(0.0));
        }
        out.push(order_statistic_quantile(&mut d, 1.0 - targets.theta2));
    }
    Ok(out)
}

/// Smallest `n` whose spread quantile is at most `epsilon`, interpolating
/// log-linearly between grid points and extrapolating a power law past the grid.
pub fn opt_size_from_quantiles(grid: &[usize], quantiles: &[f64], epsilon: f64) -> SampleSize {
    if quantiles[0] <= epsilon {
        return SampleSize::Finite(grid[0] as u64);
    }
    for k in 1..grid.len() {
        if quantiles[k] <= epsilon {
            let (n0, n1) = ((grid[k - 1] as f64).ln(), (grid[k] as f64).ln());
            let (q0, q1) = (quantiles[k - 1].ln(), quantiles[k].max(1e-300).ln());
            let t = (epsilon.ln() - q0) / (q1 - q0);
            let n = (n0 + t * (n1 - n0)).exp();
            return SampleSize::Finite(libm::ceil(n).clamp(grid[k - 1] as f64 + 1.0, grid[k] as f64) as u64);
        }
    }
    let pts: Vec<(f64, f64)> = grid
        .iter()
        .zip(quantiles)
        .filter(|(_, q)| **q > 0.0)
        .map(|(&n, &q)| ((n as f64).ln(), q.ln()))
        .collect();
    if pts.len() < 2 {
        return SampleSize::Infinite;
    }
    let m = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / m, pts.iter().map(|p| p.1).sum::<f64>() / m);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return SampleSize::Infinite;
    }
    let n = ((epsilon.ln() - (my - slope * mx)) / slope).exp();
    match ceil_size(n) {
        SampleSize::Finite(v) => SampleSize::Finite(v.max(*grid.last().unwrap() as u64 + 1)),
        s => s,
    }
}

/// Smallest `n` whose bootstrap spread quantile is at most `epsilon`.
pub fn solve_n_opt_projection<E: Executor>(
    pilot: &Dataset,
    targets: &DesignTargets,
    grid: &[usize],
    settings: &BootstrapSettings,
    exec: &E,
) -> Result<SampleSizeResult> {
    targets.validate_projection_opt()?;
    let quantiles = opt_spread_quantiles(pilot, targets, grid, settings, exec)?;
    let n = opt_size_from_quantiles(grid, &quantiles, targets.epsilon);
    let mut diagnostics = Diagnostics::new();
    put(&mut diagnostics, "grid", grid.iter().map(|&n| n as f64).collect::<Vec<_>>());
    put(&mut diagnostics, "spread_quantiles", quantiles);
    put(&mut diagnostics, "bootstrap_reps", settings.reps);
    Ok(SampleSizeResult {
        n,
        criterion: Criterion::Opt,
        procedure: Procedure::Projection,
        inputs: *targets,
        diagnostics,
    })
}

pub fn solve_n_both_projection<E: Executor>(
    pilot: &Dataset,
    targets: &DesignTargets,
    grid: &[usize],
    settings: &BootstrapSettings,
    exec: &E,
) -> Result<SampleSizeResult> {
    let pow = solve_n_pow_projection(pilot, targets, grid, settings, exec)?;
    let opt = solve_n_opt_projection(pilot, targets, grid, settings, exec)?;
    Ok(SampleSizeResult::combine_both(pow, opt))
}
