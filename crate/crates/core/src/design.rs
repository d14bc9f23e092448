//! Row-wise summary matrices and weighted least squares.
//!
//! Bootstrap resamples are represented as integer multiplicities over the
//! rows of a single [`QDesign`], so every fit costs O(unique rows).

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, SummaryId};
use crate::error::Result;
use crate::linalg::{gram_inverse, symmetrize};

/// Per-row history summaries, treatments and outcomes of a dataset.
#[derive(Debug, Clone)]
pub struct QDesign {
    n: usize,
    dims: [usize; 6],
    blocks: [Vec<f64>; 6],
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub y: Vec<f64>,
}

const ORDER: [SummaryId; 6] = [
    SummaryId::H10,
    SummaryId::H11,
    SummaryId::H12,
    SummaryId::H13,
    SummaryId::H20,
    SummaryId::H21,
];

fn slot(id: SummaryId) -> usize {
    match id {
        SummaryId::H10 => 0,
        SummaryId::H11 => 1,
        SummaryId::H12 => 2,
        SummaryId::H13 => 3,
        SummaryId::H20 => 4,
        SummaryId::H21 => 5,
        SummaryId::C1 | SummaryId::C2 => panic!("composite designs have no block"),
    }
}

impl QDesign {
    pub fn new(data: &Dataset) -> Self {
        let spec = data.features();
        let n = data.len();
        let dims = ORDER.map(|id| spec.dim(id));
        let mut blocks: [Vec<f64>; 6] = Default::default();
        for (b, d) in blocks.iter_mut().zip(dims) {
            b.reserve(n * d);
        }
        let mut buf = Vec::new();
        for t in data.trajectories() {
            for (k, id) in ORDER.iter().enumerate() {
                if k < 4 {
                    spec.eval_stage1(*id, &t.x1, &mut buf);
                } else {
                    spec.eval_stage2(*id, &t.x1, t.a1, &t.x2, &mut buf);
                }
                blocks[k].extend_from_slice(&buf);
            }
        }
        Self {
            n,
            dims,
            blocks,
            a1: data.trajectories().iter().map(|t| f64::from(t.a1)).collect(),
            a2: data.trajectories().iter().map(|t| f64::from(t.a2)).collect(),
            y: data.trajectories().iter().map(|t| t.y).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn dim(&self, id: SummaryId) -> usize {
        match id {
            SummaryId::C1 => self.dims[0] + self.dims[1],
            SummaryId::C2 => self.dims[4] + self.dims[5],
            id => self.dims[slot(id)],
        }
    }

    #[inline]
    pub fn row(&self, id: SummaryId, i: usize) -> &[f64] {
        let k = slot(id);
        let d = self.dims[k];
        &self.blocks[k][i * d..(i + 1) * d]
    }

    /// Writes the stacked design `(main, a * interaction)` for row `i`.
    #[inline]
    pub fn stacked(&self, main: SummaryId, inter: SummaryId, a: f64, i: usize, out: &mut [f64]) {
        let m = self.row(main, i);
        let h = self.row(inter, i);
        out[..m.len()].copy_from_slice(m);
        for (o, v) in out[m.len()..].iter_mut().zip(h) {
            *o = a * v;
        }
    }

    pub fn c1(&self, i: usize, out: &mut [f64]) {
        self.stacked(SummaryId::H10, SummaryId::H11, self.a1[i], i, out)
    }

    pub fn c2(&self, i: usize, out: &mut [f64]) {
        self.stacked(SummaryId::H20, SummaryId::H21, self.a2[i], i, out)
    }
}

/// A weighted least-squares fit over the rows of a design.
#[derive(Debug, Clone)]
pub struct LsFit {
    pub coef: DVector<f64>,
    /// Inverse of the weighted mean Gram matrix.
    pub gram_inverse: DMatrix<f64>,
    /// Residuals for every row (including zero-weight rows).
    pub residuals: Vec<f64>,
    pub total_weight: f64,
}

/// Inverse of the weighted mean Gram matrix of a design, reusable across targets.
#[derive(Debug, Clone)]
pub struct Gram {
    pub inverse: DMatrix<f64>,
    pub total_weight: f64,
    dim: usize,
}

impl Gram {
    pub fn new(
        rows: usize,
        dim: usize,
        fill: impl Fn(usize, &mut [f64]),
        weights: Option<&[f64]>,
        label: &str,
    ) -> Result<Self> {
        let mut gram = DMatrix::<f64>::zeros(dim, dim);
        let mut x = vec![0.0; dim];
        let mut total = 0.0;
        for i in 0..rows {
            let w = weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            fill(i, &mut x);
            total += w;
            for j in 0..dim {
                let wx = w * x[j];
                for k in 0..=j {
                    gram[(j, k)] += wx * x[k];
                }
            }
        }
        for j in 0..dim {
            for k in 0..j {
                gram[(k, j)] = gram[(j, k)];
            }
        }
        gram /= total;
        Ok(Self {
            inverse: gram_inverse(&gram, label)?,
            total_weight: total,
            dim,
        })
    }

    /// Least-squares coefficients and residuals for one target.
    pub fn solve(
        &self,
        rows: usize,
        fill: impl Fn(usize, &mut [f64]),
        target: &[f64],
        weights: Option<&[f64]>,
    ) -> LsFit {
        let dim = self.dim;
        let mut rhs = DVector::<f64>::zeros(dim);
        let mut x = vec![0.0; dim];
        for i in 0..rows {
            let w = weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            fill(i, &mut x);
            let wt = w * target[i];
            for j in 0..dim {
                rhs[j] += wt * x[j];
            }
        }
        rhs /= self.total_weight;
        let coef = &self.inverse * rhs;
        let residuals = (0..rows)
            .map(|i| {
                fill(i, &mut x);
                target[i] - x.iter().zip(coef.iter()).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        LsFit {
            coef,
            gram_inverse: self.inverse.clone(),
            residuals,
            total_weight: self.total_weight,
        }
    }
}

/// Weighted least squares of `target` on the rows produced by `fill`.
///
/// `weights = None` means unit weights.
pub fn weighted_ls(
    rows: usize,
    dim: usize,
    fill: impl Fn(usize, &mut [f64]),
    target: &[f64],
    weights: Option<&[f64]>,
    label: &str,
) -> Result<LsFit> {
    let gram = Gram::new(rows, dim, &fill, weights, label)?;
    Ok(gram.solve(rows, fill, target, weights))
}

/// Heteroskedasticity-robust sandwich `G⁻¹ (E w x xᵀ r²) G⁻¹` of a fit.
pub fn sandwich(fit: &LsFit, fill: impl Fn(usize, &mut [f64]), weights: Option<&[f64]>) -> DMatrix<f64> {
    let dim = fit.coef.len();
    let mut meat = DMatrix::<f64>::zeros(dim, dim);
    let mut x = vec![0.0; dim];
    for (i, r) in fit.residuals.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        fill(i, &mut x);
        let s = w * r * r;
        for j in 0..dim {
            for k in 0..=j {
                meat[(j, k)] += s * x[j] * x[k];
            }
        }
    }
    for j in 0..dim {
        for k in 0..j {
            meat[(k, j)] = meat[(j, k)];
        }
    }
    meat /= fit.total_weight;
    let mut out = &fit.gram_inverse * meat * &fit.gram_inverse;
    symmetrize(&mut out);
    out
}
