//! SMART trajectories, history summaries, and sizing targets.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// One participant record `(x1, a1, x2, a2, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x1: Vec<f64>,
    pub a1: i8,
    pub x2: Vec<f64>,
    pub a2: i8,
    pub y: f64,
}

impl Trajectory {
    pub fn new(x1: Vec<f64>, a1: i8, x2: Vec<f64>, a2: i8, y: f64) -> Result<Self> {
        let t = Self { x1, a1, x2, a2, y };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a1 != 1 && self.a1 != -1 {
            return Err(Error::InvalidTrajectory(format!("a1 = {} is not -1 or 1", self.a1)));
        }
        if self.a2 != 1 && self.a2 != -1 {
            return Err(Error::InvalidTrajectory(format!("a2 = {} is not -1 or 1", self.a2)));
        }
        let finite = self.x1.iter().chain(&self.x2).all(|v| v.is_finite()) && self.y.is_finite();
        if !finite {
            return Err(Error::InvalidTrajectory("non-finite entry".into()));
        }
        Ok(())
    }
}

/// A history variable a summary term may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// Baseline covariate (0-based).
    X1(usize),
    A1,
    /// Interim covariate (0-based).
    X2(usize),
}

impl Var {
    #[inline]
    fn eval(self, x1: &[f64], a1: f64, x2: &[f64]) -> f64 {
        match self {
            Var::X1(i) => x1[i],
            Var::A1 => a1,
            Var::X2(i) => x2[i],
        }
    }

    fn is_baseline(self) -> bool {
        matches!(self, Var::X1(_))
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X1(i) => write!(f, "x1_{}", i + 1),
            Var::A1 => f.write_str("a1"),
            Var::X2(i) => write!(f, "x2_{}", i + 1),
        }
    }
}

impl FromStr for Var {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "a1" {
            return Ok(Var::A1);
        }
        let bad = || Error::InvalidFeatureSpec(format!("unknown variable '{s}'"));
        let (prefix, idx) = s.split_once('_').ok_or_else(bad)?;
        let idx: usize = idx.parse().map_err(|_| bad())?;
        if idx == 0 {
            return Err(Error::InvalidFeatureSpec(format!(
                "variable '{s}': indices are 1-based"
            )));
        }
        match prefix {
            "x1" => Ok(Var::X1(idx - 1)),
            "x2" => Ok(Var::X2(idx - 1)),
            _ => Err(bad()),
        }
    }
}

/// One entry of a history summary.
///
/// Text form: `1`, `x1_2`, `a1`, `x2_1`, `x1_1*a1`, `x1_3^2` (1-based indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Intercept,
    Linear(Var),
    Product(Var, Var),
    Square(Var),
}

impl Term {
    #[inline]
    pub fn eval(&self, x1: &[f64], a1: f64, x2: &[f64]) -> f64 {
        match *self {
            Term::Intercept => 1.0,
            Term::Linear(v) => v.eval(x1, a1, x2),
            Term::Product(u, v) => u.eval(x1, a1, x2) * v.eval(x1, a1, x2),
            Term::Square(v) => {
                let e = v.eval(x1, a1, x2);
                e * e
            }
        }
    }

    fn vars(&self) -> impl Iterator<Item = Var> {
        let (a, b) = match *self {
            Term::Intercept => (None, None),
            Term::Linear(v) | Term::Square(v) => (Some(v), None),
            Term::Product(u, v) => (Some(u), Some(v)),
        };
        a.into_iter().chain(b)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => f.write_str("1"),
            Term::Linear(v) => write!(f, "{v}"),
            Term::Product(u, v) => write!(f, "{u}*{v}"),
            Term::Square(v) => write!(f, "{v}^2"),
        }
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "1" {
            return Ok(Term::Intercept);
        }
        if let Some((u, v)) = s.split_once('*') {
            return Ok(Term::Product(u.parse()?, v.parse()?));
        }
        if let Some(base) = s.strip_suffix("^2") {
            return Ok(Term::Square(base.parse()?));
        }
        Ok(Term::Linear(s.parse()?))
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Term {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = <alloc::string::String as serde::Deserialize>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Identifies one of the history summaries or Q-learning designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryId {
    H10,
    H11,
    H12,
    H13,
    H20,
    H21,
    /// `(h10, a1 * h11)`
    C1,
    /// `(h20, a2 * h21)`
    C2,
}

impl SummaryId {
    pub fn name(self) -> &'static str {
        match self {
            SummaryId::H10 => "h10",
            SummaryId::H11 => "h11",
            SummaryId::H12 => "h12",
            SummaryId::H13 => "h13",
            SummaryId::H20 => "h20",
            SummaryId::H21 => "h21",
            SummaryId::C1 => "c1",
            SummaryId::C2 => "c2",
        }
    }
}

/// Term lists for every history summary.
///
/// `h10`/`h11` and `h20`/`h21` are the main-effect and interaction summaries
/// shared by the normal procedure and linear Q-learning; `h12`/`h13` model the
/// stage-2 contrast in the normal procedure.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureSpec {
    pub h10: Vec<Term>,
    pub h11: Vec<Term>,
    pub h12: Vec<Term>,
    pub h13: Vec<Term>,
    pub h20: Vec<Term>,
    pub h21: Vec<Term>,
}

impl FeatureSpec {
    pub fn terms(&self, id: SummaryId) -> Option<&[Term]> {
        Some(match id {
            SummaryId::H10 => &self.h10,
            SummaryId::H11 => &self.h11,
            SummaryId::H12 => &self.h12,
            SummaryId::H13 => &self.h13,
            SummaryId::H20 => &self.h20,
            SummaryId::H21 => &self.h21,
            SummaryId::C1 | SummaryId::C2 => return None,
        })
    }

    pub fn dim(&self, id: SummaryId) -> usize {
        match id {
            SummaryId::C1 => self.h10.len() + self.h11.len(),
            SummaryId::C2 => self.h20.len() + self.h21.len(),
            _ => self.terms(id).map_or(0, |t| t.len()),
        }
    }

    pub fn validate(&self, p1: usize, p2: usize) -> Result<()> {
        let all = [
            SummaryId::H10,
            SummaryId::H11,
            SummaryId::H12,
            SummaryId::H13,
            SummaryId::H20,
            SummaryId::H21,
        ];
        for id in all {
            let terms = self.terms(id).unwrap_or_default();
            if terms.is_empty() {
                return Err(Error::InvalidFeatureSpec(format!("{} is empty", id.name())));
            }
            let stage1 = !matches!(id, SummaryId::H20 | SummaryId::H21);
            for (k, term) in terms.iter().enumerate() {
                if *term == Term::Intercept && k != 0 {
                    return Err(Error::InvalidFeatureSpec(format!(
                        "{}: intercept must be listed first",
                        id.name()
                    )));
                }
                for v in term.vars() {
                    if stage1 && !v.is_baseline() {
                        return Err(Error::InvalidFeatureSpec(format!(
                            "{}: stage-1 summary references '{v}'",
                            id.name()
                        )));
                    }
                    let ok = match v {
                        Var::X1(i) => i < p1,
                        Var::X2(i) => i < p2,
                        Var::A1 => true,
                    };
                    if !ok {
                        return Err(Error::InvalidFeatureSpec(format!(
                            "{}: '{v}' is out of range (p1 = {p1}, p2 = {p2})",
                            id.name()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes the stage-1 summary `id` at baseline `x1` into `out`.
    #[inline]
    pub fn eval_stage1(&self, id: SummaryId, x1: &[f64], out: &mut Vec<f64>) {
        out.clear();
        if let Some(terms) = self.terms(id) {
            out.extend(terms.iter().map(|t| t.eval(x1, 0.0, &[])));
        }
    }

    #[inline]
    pub fn eval_stage2(&self, id: SummaryId, x1: &[f64], a1: i8, x2: &[f64], out: &mut Vec<f64>) {
        out.clear();
        if let Some(terms) = self.terms(id) {
            let a1 = f64::from(a1);
            out.extend(terms.iter().map(|t| t.eval(x1, a1, x2)));
        }
    }
}

/// Evaluates summary `which` on a trajectory.
pub fn summarize(traj: &Trajectory, spec: &FeatureSpec, which: SummaryId) -> Vec<f64> {
    let a1 = f64::from(traj.a1);
    let eval = |terms: &[Term]| -> Vec<f64> {
        terms.iter().map(|t| t.eval(&traj.x1, a1, &traj.x2)).collect()
    };
    match which {
        SummaryId::C1 => {
            let mut v = eval(&spec.h10);
            v.extend(eval(&spec.h11).into_iter().map(|e| a1 * e));
            v
        }
        SummaryId::C2 => {
            let a2 = f64::from(traj.a2);
            let mut v = eval(&spec.h20);
            v.extend(eval(&spec.h21).into_iter().map(|e| a2 * e));
            v
        }
        id => eval(spec.terms(id).unwrap_or_default()),
    }
}

/// An i.i.d. collection of trajectories with its feature bindings.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    p1: usize,
    p2: usize,
    features: FeatureSpec,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, p1: usize, p2: usize, features: FeatureSpec) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::InvalidDataset("no trajectories".into()));
        }
        features.validate(p1, p2)?;
        for (i, t) in trajectories.iter().enumerate() {
            t.validate()
                .map_err(|e| Error::InvalidDataset(format!("trajectory {i}: {e}")))?;
            if t.x1.len() != p1 || t.x2.len() != p2 {
                return Err(Error::InvalidDataset(format!(
                    "trajectory {i}: expected {p1} baseline and {p2} interim covariates, got {} and {}",
                    t.x1.len(),
                    t.x2.len()
                )));
            }
        }
        Ok(Self {
            trajectories,
            p1,
            p2,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn p1(&self) -> usize {
        self.p1
    }

    pub fn p2(&self) -> usize {
        self.p2
    }

    pub fn features(&self) -> &FeatureSpec {
        &self.features
    }

    pub fn with_features(&self, features: FeatureSpec) -> Result<Self> {
        Self::new(self.trajectories.clone(), self.p1, self.p2, features)
    }

    /// Both treatments must appear at each stage before any regression.
    pub fn check_arms(&self) -> Result<()> {
        let has = |f: fn(&Trajectory) -> i8, v: i8| self.trajectories.iter().any(|t| f(t) == v);
        for (name, f) in [("a1", (|t: &Trajectory| t.a1) as fn(&Trajectory) -> i8), ("a2", |t| t.a2)] {
            if !has(f, 1) || !has(f, -1) {
                return Err(Error::InvalidDataset(format!(
                    "{name} takes a single value; both treatment arms are required"
                )));
            }
        }
        Ok(())
    }

    /// A resample containing the trajectories at `indices`.
    pub fn resample(&self, indices: &[usize]) -> Result<Self> {
        let t: Vec<_> = indices.iter().map(|&i| self.trajectories[i].clone()).collect();
        if t.is_empty() {
            return Err(Error::InvalidDataset("no trajectories".into()));
        }
        Ok(Self {
            trajectories: t,
            p1: self.p1,
            p2: self.p2,
            features: self.features.clone(),
        })
    }

    /// Copy with every outcome mapped through `f`.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.trajectories {
            t.y = f(t.y);
        }
        out
    }
}

/// Inputs shared by every sizing procedure.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DesignTargets {
    /// Benchmark value B0.
    pub b0: f64,
    /// Minimal clinically relevant excess over `b0`.
    pub eta: f64,
    /// One minus the target power.
    pub gamma: f64,
    pub alpha: f64,
    /// Allowed failure probability for near-optimality.
    pub zeta: f64,
    /// Near-optimality tolerance.
    pub epsilon: f64,
    /// Level spent on the joint confidence set.
    pub theta1: f64,
    /// Level spent on the value bound at a fixed coefficient pair.
    pub theta2: f64,
    /// Stage-1 confidence-set level.
    pub eps1: f64,
    /// Stage-2 confidence-set level.
    pub eps2: f64,
}

impl DesignTargets {
    /// Targets with the conventional levels: 90% power, 5% test, 90% near-optimality
    /// within 0.3, and a 1%/4% projection split with the 1% halved across stages.
    pub fn new(b0: f64, eta: f64) -> Self {
        Self {
            b0,
            eta,
            gamma: 0.1,
            alpha: 0.05,
            zeta: 0.1,
            epsilon: 0.3,
            theta1: 0.01,
            theta2: 0.04,
            eps1: 0.005,
            eps2: 0.005,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidTargets(format!("{name} = {v} must lie in (0, 1)")))
            }
        };
        if !self.b0.is_finite() {
            return Err(Error::InvalidTargets("b0 must be finite".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidTargets(format!("eta = {} must be positive", self.eta)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidTargets(format!(
                "epsilon = {} must be positive",
                self.epsilon
            )));
        }
        unit("gamma", self.gamma)?;
        unit("alpha", self.alpha)?;
        unit("zeta", self.zeta)?;
        unit("theta1", self.theta1)?;
        unit("theta2", self.theta2)?;
        unit("eps1", self.eps1)?;
        unit("eps2", self.eps2)?;
        if self.eps1 + self.eps2 > 1.0 {
            return Err(Error::InvalidTargets("eps1 + eps2 must not exceed 1".into()));
        }
        Ok(())
    }

    /// The projection test splits its level as `theta1 + theta2 = alpha`.
    pub fn validate_projection_pow(&self) -> Result<()> {
        self.validate()?;
        if (self.theta1 + self.theta2 - self.alpha).abs() > 1e-12 {
            return Err(Error::InvalidTargets(format!(
                "theta1 + theta2 = {} must equal alpha = {}",
                self.theta1 + self.theta2,
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn validate_projection_opt(&self) -> Result<()> {
        self.validate()?;
        if self.theta1 + self.theta2 > self.zeta + 1e-12 {
            return Err(Error::InvalidTargets(format!(
                "theta1 + theta2 = {} must not exceed zeta = {}",
                self.theta1 + self.theta2,
                self.zeta
            )));
        }
        Ok(())
    }
}

impl fmt::Display for SummaryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
