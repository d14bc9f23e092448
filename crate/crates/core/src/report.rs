//! Sample-size results and their diagnostics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::data::DesignTargets;

/// A required sample size, or the sentinel for a pilot without estimated benefit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SampleSize {
    Finite(u64),
    Infinite,
}

impl SampleSize {
    pub fn finite(self) -> Option<u64> {
        match self {
            SampleSize::Finite(n) => Some(n),
            SampleSize::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == SampleSize::Infinite
    }
}

impl fmt::Display for SampleSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleSize::Finite(n) => write!(f, "{n}"),
            SampleSize::Infinite => f.write_str("infinite"),
        }
    }
}

/// Serialized as an integer or the string `"infinite"`.
#[cfg(feature = "serde")]
impl serde::Serialize for SampleSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        match self {
            SampleSize::Finite(n) => s.serialize_u64(*n),
            SampleSize::Infinite => s.serialize_str("infinite"),
        }
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for SampleSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = SampleSize;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive integer or \"infinite\"")
            }
            fn visit_u64<E: serde::de::Error>(self, n: u64) -> core::result::Result<SampleSize, E> {
                Ok(SampleSize::Finite(n))
            }
            fn visit_i64<E: serde::de::Error>(self, n: i64) -> core::result::Result<SampleSize, E> {
                u64::try_from(n).map(SampleSize::Finite).map_err(E::custom)
            }
            fn visit_str<E: serde::de::Error>(self, s: &str) -> core::result::Result<SampleSize, E> {
                if s == "infinite" {
                    Ok(SampleSize::Infinite)
                } else {
                    Err(E::invalid_value(serde::de::Unexpected::Str(s), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Criterion {
    Pow,
    Opt,
    Both,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Pow => "pow",
            Criterion::Opt => "opt",
            Criterion::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Procedure {
    Normal,
    Projection,
}

impl Procedure {
    pub fn name(self) -> &'static str {
        match self {
            Procedure::Normal => "normal",
            Procedure::Projection => "projection",
        }
    }
}

/// A diagnostic entry.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(untagged))]
pub enum Diag {
    Flag(bool),
    Int(i64),
    Num(f64),
    Text(String),
    List(Vec<f64>),
}

impl From<f64> for Diag {
    fn from(v: f64) -> Self {
        Diag::Num(v)
    }
}
impl From<usize> for Diag {
    fn from(v: usize) -> Self {
        Diag::Int(v as i64)
    }
}
impl From<u64> for Diag {
    fn from(v: u64) -> Self {
        Diag::Int(v as i64)
    }
}
impl From<bool> for Diag {
    fn from(v: bool) -> Self {
        Diag::Flag(v)
    }
}
impl From<&str> for Diag {
    fn from(v: &str) -> Self {
        Diag::Text(v.into())
    }
}
impl From<String> for Diag {
    fn from(v: String) -> Self {
        Diag::Text(v)
    }
}
impl From<Vec<f64>> for Diag {
    fn from(v: Vec<f64>) -> Self {
        Diag::List(v)
    }
}

/// Ordered key-value diagnostics.
pub type Diagnostics = BTreeMap<String, Diag>;

pub(crate) fn put(d: &mut Diagnostics, key: &str, value: impl Into<Diag>) {
    d.insert(key.into(), value.into());
}

/// Output of a sizing procedure.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SampleSizeResult {
    pub n: SampleSize,
    pub criterion: Criterion,
    pub procedure: Procedure,
    pub inputs: DesignTargets,
    pub diagnostics: Diagnostics,
}

impl SampleSizeResult {
    /// `BOTH`: the larger of a POW and an OPT result, with both sets of diagnostics.
    pub fn combine_both(pow: SampleSizeResult, opt: SampleSizeResult) -> SampleSizeResult {
        let mut diagnostics = Diagnostics::new();
        for (prefix, r) in [("pow", &pow), ("opt", &opt)] {
            put(&mut diagnostics, &alloc::format!("{prefix}.n"), alloc::format!("{}", r.n));
            for (k, v) in &r.diagnostics {
                diagnostics.insert(alloc::format!("{prefix}.{k}"), v.clone());
            }
        }
        SampleSizeResult {
            n: pow.n.max(opt.n),
            criterion: Criterion::Both,
            procedure: pow.procedure,
            inputs: pow.inputs,
            diagnostics,
        }
    }
}

/// `ceil(x)` as a sample size of at least one.
pub(crate) fn ceil_size(x: f64) -> SampleSize {
    if !x.is_finite() {
        return SampleSize::Infinite;
    }
    let c = libm::ceil(x);
    SampleSize::Finite(if c < 1.0 { 1 } else { c as u64 })
}
