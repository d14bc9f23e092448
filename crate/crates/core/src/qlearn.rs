//! Least-squares Q-learning fits, the closed-form stage-1 Q-function, and
//! the decision rules they induce.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::data::{Dataset, FeatureSpec, SummaryId};
use crate::design::{weighted_ls, LsFit, QDesign};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::special::abs_normal_mean;

/// Stage-2 least-squares fit of `Y` on `(h20, a2 * h21)`.
#[derive(Debug, Clone)]
pub struct Stage2Fit {
    pub beta20: Vec<f64>,
    pub beta21: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Inverse of the mean Gram matrix of the stage-2 design.
    pub gram_inverse: DMatrix<f64>,
}

impl Stage2Fit {
    pub fn coefficients(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.beta20.len() + self.beta21.len(),
            self.beta20.iter().chain(&self.beta21).copied(),
        )
    }
}

/// Stage-1 fits of the normality-based model.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1NormalFit {
    pub xi10: Vec<f64>,
    pub xi11: Vec<f64>,
    pub varpi12: Vec<f64>,
    pub varpi13: Vec<f64>,
    /// Root mean squared residual of the contrast regression.
    pub tau: f64,
}

impl Stage1NormalFit {
    /// `W(h1, beta1)`: the four linear predictors at one baseline history.
    pub fn w(&self, h: &Stage1Summaries) -> [f64; 4] {
        [
            dot(&h.h10, &self.xi10),
            dot(&h.h11, &self.xi11),
            dot(&h.h12, &self.varpi12),
            dot(&h.h13, &self.varpi13),
        ]
    }
}

/// Linear Q-function coefficients `(mu1, mu2)` with main-effect/interaction splits.
#[derive(Debug, Clone, PartialEq)]
pub struct QParams {
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    /// Length of the stage-1 main-effect block.
    pub split1: usize,
    /// Length of the stage-2 main-effect block.
    pub split2: usize,
}

impl QParams {
    pub fn new(mu1: Vec<f64>, mu2: Vec<f64>, spec: &FeatureSpec) -> Result<Self> {
        let (d1, d2) = (spec.dim(SummaryId::C1), spec.dim(SummaryId::C2));
        if mu1.len() != d1 || mu2.len() != d2 {
            return Err(Error::InvalidArgument(alloc::format!(
                "coefficient lengths ({}, {}) do not match designs ({d1}, {d2})",
                mu1.len(),
                mu2.len()
            )));
        }
        Ok(Self {
            mu1,
            mu2,
            split1: spec.h10.len(),
            split2: spec.h20.len(),
        })
    }

    pub fn mu10(&self) -> &[f64] {
        &self.mu1[..self.split1]
    }
    pub fn mu11(&self) -> &[f64] {
        &self.mu1[self.split1..]
    }
    pub fn mu20(&self) -> &[f64] {
        &self.mu2[..self.split2]
    }
    pub fn mu21(&self) -> &[f64] {
        &self.mu2[self.split2..]
    }

    /// Stacked `(mu1, mu2)`.
    pub fn stacked(&self) -> Vec<f64> {
        self.mu1.iter().chain(&self.mu2).copied().collect()
    }
}

/// The four stage-1 summaries at one baseline history.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Stage1Summaries {
    pub h10: Vec<f64>,
    pub h11: Vec<f64>,
    pub h12: Vec<f64>,
    pub h13: Vec<f64>,
}

impl Stage1Summaries {
    pub fn from_baseline(spec: &FeatureSpec, x1: &[f64]) -> Self {
        let mut s = Self::default();
        spec.eval_stage1(SummaryId::H10, x1, &mut s.h10);
        spec.eval_stage1(SummaryId::H11, x1, &mut s.h11);
        spec.eval_stage1(SummaryId::H12, x1, &mut s.h12);
        spec.eval_stage1(SummaryId::H13, x1, &mut s.h13);
        s
    }
}

pub(crate) fn stage2_ls(design: &QDesign, weights: Option<&[f64]>) -> Result<LsFit> {
    let d2 = design.dim(SummaryId::C2);
    weighted_ls(design.rows(), d2, |i, o| design.c2(i, o), &design.y, weights, "c2").map_err(
        |e| match e {
            // name the main-effect block when it is singular on its own
            Error::SingularDesign { .. } => {
                let d = design.dim(SummaryId::H20);
                let main = weighted_ls(
                    design.rows(),
                    d,
                    |i, o| o.copy_from_slice(design.row(SummaryId::H20, i)),
                    &design.y,
                    weights,
                    "h20",
                );
                match main {
                    Err(e) => e,
                    Ok(_) => relabel(e, "h21 (stage-2 interaction block)"),
                }
            }
            e => e,
        },
    )
}

fn relabel(e: Error, summary: &str) -> Error {
    match e {
        Error::SingularDesign { condition, .. } => Error::SingularDesign {
            summary: summary.into(),
            condition,
        },
        e => e,
    }
}

pub fn fit_stage2(data: &Dataset) -> Result<Stage2Fit> {
    fit_stage2_weighted(&QDesign::new(data), None)
}

pub fn fit_stage2_weighted(design: &QDesign, weights: Option<&[f64]>) -> Result<Stage2Fit> {
    let fit = stage2_ls(design, weights)?;
    let split = design.dim(SummaryId::H20);
    Ok(Stage2Fit {
        beta20: fit.coef.as_slice()[..split].to_vec(),
        beta21: fit.coef.as_slice()[split..].to_vec(),
        residuals: fit.residuals,
        gram_inverse: fit.gram_inverse,
    })
}

pub fn fit_stage1_normal(data: &Dataset, s2: &Stage2Fit) -> Result<Stage1NormalFit> {
    fit_stage1_normal_weighted(&QDesign::new(data), None, s2)
}

pub fn fit_stage1_normal_weighted(
    design: &QDesign,
    weights: Option<&[f64]>,
    s2: &Stage2Fit,
) -> Result<Stage1NormalFit> {
    let n = design.rows();
    let main: Vec<f64> = (0..n).map(|i| dot(design.row(SummaryId::H20, i), &s2.beta20)).collect();
    let contrast: Vec<f64> = (0..n).map(|i| dot(design.row(SummaryId::H21, i), &s2.beta21)).collect();
    let dm = design.dim(SummaryId::H10) + design.dim(SummaryId::H11);
    let dc = design.dim(SummaryId::H12) + design.dim(SummaryId::H13);
    let xi = weighted_ls(
        n,
        dm,
        |i, o| design.stacked(SummaryId::H10, SummaryId::H11, design.a1[i], i, o),
        &main,
        weights,
        "(h10, a1*h11)",
    )?;
    let varpi = weighted_ls(
        n,
        dc,
        |i, o| design.stacked(SummaryId::H12, SummaryId::H13, design.a1[i], i, o),
        &contrast,
        weights,
        "(h12, a1*h13)",
    )?;
    let mut ss = 0.0;
    let mut scale = 0.0;
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        ss += w * varpi.residuals[i] * varpi.residuals[i];
        scale += w * contrast[i] * contrast[i];
    }
    let tau = (ss / varpi.total_weight).sqrt();
    let rms = (scale / varpi.total_weight).sqrt();
    if !(tau > 1e-10 * (1.0 + rms)) {
        return Err(Error::DegenerateTau(tau));
    }
    let p10 = design.dim(SummaryId::H10);
    let p12 = design.dim(SummaryId::H12);
    Ok(Stage1NormalFit {
        xi10: xi.coef.as_slice()[..p10].to_vec(),
        xi11: xi.coef.as_slice()[p10..].to_vec(),
        varpi12: varpi.coef.as_slice()[..p12].to_vec(),
        varpi13: varpi.coef.as_slice()[p12..].to_vec(),
        tau,
    })
}

/// Stage-1 Q-learning pseudo-outcome `max_a2 Q2(h2, a2; mu2)` for every row.
pub(crate) fn stage1_pseudo_outcome(design: &QDesign, mu20: &[f64], mu21: &[f64]) -> Vec<f64> {
    (0..design.rows())
        .map(|i| dot(design.row(SummaryId::H20, i), mu20) + dot(design.row(SummaryId::H21, i), mu21).abs())
        .collect()
}

pub(crate) fn stage1_q_ls(
    design: &QDesign,
    weights: Option<&[f64]>,
    mu20: &[f64],
    mu21: &[f64],
) -> Result<LsFit> {
    let pseudo = stage1_pseudo_outcome(design, mu20, mu21);
    weighted_ls(
        design.rows(),
        design.dim(SummaryId::C1),
        |i, o| design.c1(i, o),
        &pseudo,
        weights,
        "c1",
    )
}

/// Linear Q-learning: stage-2 least squares, then stage-1 least squares of
/// `h20ᵀmu20 + |h21ᵀmu21|` on `c1 = (h10, a1 * h11)`.
pub fn fit_stage1_q(data: &Dataset, s2: &Stage2Fit) -> Result<QParams> {
    fit_stage1_q_weighted(&QDesign::new(data), None, s2, data.features())
}

pub fn fit_stage1_q_weighted(
    design: &QDesign,
    weights: Option<&[f64]>,
    s2: &Stage2Fit,
    spec: &FeatureSpec,
) -> Result<QParams> {
    let fit = stage1_q_ls(design, weights, &s2.beta20, &s2.beta21)?;
    QParams::new(fit.coef.as_slice().to_vec(), s2.coefficients().as_slice().to_vec(), spec)
}

/// Both linear Q-learning stages on a dataset.
pub fn fit_q_learning(data: &Dataset) -> Result<QParams> {
    let s2 = fit_stage2(data)?;
    fit_stage1_q(data, &s2)
}

/// `g(v) = max over rho of v1 + rho v2 + E|v3 + rho v4 + Z|`, the standardized
/// optimal stage-1 value, so that `max_a1 Q1 = tau * g(W / tau)`.
pub fn g_value(v: [f64; 4]) -> f64 {
    let branch = |rho: f64| v[0] + rho * v[1] + abs_normal_mean(v[2] + rho * v[3], 1.0);
    branch(1.0).max(branch(-1.0))
}

/// `tau * g(w / tau)` evaluated without forming the ratio.
#[inline]
pub fn scaled_g(w: [f64; 4], tau: f64) -> f64 {
    let branch = |rho: f64| w[0] + rho * w[1] + abs_normal_mean(w[2] + rho * w[3], tau);
    branch(1.0).max(branch(-1.0))
}

/// Closed-form stage-1 Q-function
/// `base + (2 tau / sqrt(2 pi)) exp(-m² / 2tau²) + m (1 - 2 Phi(-m / tau))`.
pub fn q1_closed_form(h: &Stage1Summaries, a1: i8, fit: &Stage1NormalFit) -> Result<f64> {
    if !(fit.tau > 0.0) {
        return Err(Error::DegenerateTau(fit.tau));
    }
    let w = fit.w(h);
    let a = f64::from(a1);
    Ok(q1_from_parts(w[0] + a * w[1], w[2] + a * w[3], fit.tau))
}

#[inline]
pub fn q1_from_parts(base: f64, m: f64, tau: f64) -> f64 {
    base + abs_normal_mean(m, tau)
}

/// Sign rule with ties broken toward +1.
#[inline]
pub fn sign_rule(contrast: f64) -> i8 {
    if contrast >= 0.0 {
        1
    } else {
        -1
    }
}

/// Decision stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

/// A history at the given stage.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    pub x1: &'a [f64],
    pub a1: i8,
    pub x2: &'a [f64],
}

/// A fitted dynamic treatment regime.
pub trait DecisionRule {
    fn stage1(&self, x1: &[f64]) -> i8;
    fn stage2(&self, x1: &[f64], a1: i8, x2: &[f64]) -> i8;
}

pub fn decide<R: DecisionRule + ?Sized>(rule: &R, history: History<'_>, stage: Stage) -> i8 {
    match stage {
        Stage::One => rule.stage1(history.x1),
        Stage::Two => rule.stage2(history.x1, history.a1, history.x2),
    }
}

/// Regime estimated by the normality-based procedure.
#[derive(Debug, Clone)]
pub struct NormalRegime {
    pub features: FeatureSpec,
    pub stage2: Stage2Fit,
    pub stage1: Stage1NormalFit,
}

impl DecisionRule for NormalRegime {
    fn stage1(&self, x1: &[f64]) -> i8 {
        let h = Stage1Summaries::from_baseline(&self.features, x1);
        let w = self.stage1.w(&h);
        let plus = q1_from_parts(w[0] + w[1], w[2] + w[3], self.stage1.tau);
        let minus = q1_from_parts(w[0] - w[1], w[2] - w[3], self.stage1.tau);
        sign_rule(plus - minus)
    }

    fn stage2(&self, x1: &[f64], a1: i8, x2: &[f64]) -> i8 {
        let mut h = Vec::new();
        self.features.eval_stage2(SummaryId::H21, x1, a1, x2, &mut h);
        sign_rule(dot(&h, &self.stage2.beta21))
    }
}

/// Regime `argmax_a Q_t(h_t, a; mu_t)` of linear Q-functions.
#[derive(Debug, Clone)]
pub struct LinearRegime {
    pub features: FeatureSpec,
    pub params: QParams,
}

impl DecisionRule for LinearRegime {
    fn stage1(&self, x1: &[f64]) -> i8 {
        let mut h = Vec::new();
        self.features.eval_stage1(SummaryId::H11, x1, &mut h);
        sign_rule(dot(&h, self.params.mu11()))
    }

    fn stage2(&self, x1: &[f64], a1: i8, x2: &[f64]) -> i8 {
        let mut h = Vec::new();
        self.features.eval_stage2(SummaryId::H21, x1, a1, x2, &mut h);
        sign_rule(dot(&h, self.params.mu21()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Term, Trajectory};
    use crate::special::{FRAC_1_SQRT_2PI, SQRT_2_OVER_PI};
    use alloc::vec;

    fn t(s: &str) -> Term {
        s.parse().unwrap()
    }

    fn simple_spec() -> FeatureSpec {
        FeatureSpec {
            h10: vec![t("1")],
            h11: vec![t("1")],
            h12: vec![t("1")],
            h13: vec![t("1")],
            h20: vec![t("1"), t("x1_1")],
            h21: vec![t("1"), t("x2_1")],
        }
    }

    #[test]
    fn g_at_origin_is_mean_absolute_normal() {
        assert!((g_value([0.0; 4]) - SQRT_2_OVER_PI).abs() < 1e-15);
        assert!((g_value([0.0; 4]) - 2.0 * FRAC_1_SQRT_2PI).abs() < 1e-15);
    }

    #[test]
    fn g_picks_sign_of_v2() {
        let g = g_value([0.3, -1.7, 0.0, 0.0]);
        assert!((g - (0.3 + 1.7 + SQRT_2_OVER_PI)).abs() < 1e-14);
    }

    #[test]
    fn q1_at_zero_contrast() {
        let fit = Stage1NormalFit {
            xi10: vec![0.0],
            xi11: vec![0.0],
            varpi12: vec![0.0],
            varpi13: vec![0.0],
            tau: 1.0,
        };
        let h = Stage1Summaries {
            h10: vec![1.0],
            h11: vec![1.0],
            h12: vec![1.0],
            h13: vec![1.0],
        };
        assert!((q1_closed_form(&h, 1, &fit).unwrap() - 0.797_884_560_802_865_4).abs() < 1e-12);
        let tiny = Stage1NormalFit {
            xi10: vec![2.0],
            varpi12: vec![1.5],
            tau: 1e-6,
            ..fit.clone()
        };
        assert!((q1_closed_form(&h, 1, &tiny).unwrap() - 3.5).abs() < 1e-4);
        let bad = Stage1NormalFit { tau: 0.0, ..fit };
        assert!(matches!(q1_closed_form(&h, 1, &bad), Err(Error::DegenerateTau(_))));
    }

    #[test]
    fn ties_go_to_plus_one() {
        assert_eq!(sign_rule(3.2), 1);
        assert_eq!(sign_rule(0.0), 1);
        assert_eq!(sign_rule(-1e-300), -1);
    }

    #[test]
    fn fit_stage2_recovers_noiseless_coefficients() {
        let beta = [0.5, -1.25, 2.0, 0.75];
        let mut rows = Vec::new();
        for i in 0..40 {
            let x1 = (i as f64 * 0.37).sin() * 2.0;
            let x2 = (i as f64 * 1.3).cos();
            let a1 = if i % 3 == 0 { 1 } else { -1 };
            let a2 = if i % 2 == 0 { 1 } else { -1 };
            let y = beta[0] + beta[1] * x1 + f64::from(a2) * (beta[2] + beta[3] * x2);
            rows.push(Trajectory::new(vec![x1], a1, vec![x2], a2, y).unwrap());
        }
        let data = Dataset::new(rows, 1, 1, simple_spec()).unwrap();
        let fit = fit_stage2(&data).unwrap();
        for (est, truth) in fit.beta20.iter().chain(&fit.beta21).zip(beta) {
            assert!((est - truth).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicated_column_is_singular() {
        let mut spec = simple_spec();
        spec.h20 = vec![t("1"), t("x1_1"), t("x1_1")];
        let rows: Vec<_> = (0..10)
            .map(|i| {
                Trajectory::new(vec![i as f64], if i % 2 == 0 { 1 } else { -1 }, vec![1.0 / (1.0 + i as f64)], if i % 3 == 0 { 1 } else { -1 }, i as f64)
                    .unwrap()
            })
            .collect();
        let data = Dataset::new(rows, 1, 1, spec).unwrap();
        match fit_stage2(&data) {
            Err(Error::SingularDesign { summary, .. }) => assert_eq!(summary, "h20"),
            other => panic!("expected singular design, got {other:?}"),
        }
    }
}
