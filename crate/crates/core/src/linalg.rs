//! Small dense linear-algebra helpers on top of nalgebra.

use alloc::string::ToString;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Designs whose Gram matrix exceeds this spectral condition number are rejected.
pub const MAX_CONDITION: f64 = 1e10;

/// Eigenvalues at or above this (negative) threshold count as zero.
pub const PSD_TOLERANCE: f64 = -1e-10;

/// Inverse of a symmetric positive-definite Gram matrix with a condition-number check.
pub fn gram_inverse(gram: &DMatrix<f64>, summary: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(gram.clone());
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l.abs());
    }
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularDesign {
            summary: summary.to_string(),
            condition,
        });
    }
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l);
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&inv_vals) * v.transpose();
    symmetrize(&mut out);
    Ok(out)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Lower-triangular `L` with `L Lᵀ = m` for a symmetric PSD matrix, using
/// diagonal pivoting so rank-deficient inputs factor cleanly.
///
/// Fails when the smallest eigenvalue is below [`PSD_TOLERANCE`].
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let lmin = min_eigenvalue(m);
    if lmin < PSD_TOLERANCE {
        return Err(Error::NotPsd(lmin));
    }
    let scale = (0..n).fold(0.0f64, |a, i| a.max(m[(i, i)].abs()));
    let cutoff = scale * 1e-14;
    let mut a = m.clone();
    let mut perm: alloc::vec::Vec<usize> = (0..n).collect();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        // pick the largest remaining diagonal
        let mut piv = k;
        for i in k + 1..n {
            if a[(i, i)] > a[(piv, piv)] {
                piv = i;
            }
        }
        if piv != k {
            a.swap_rows(k, piv);
            a.swap_columns(k, piv);
            l.swap_rows(k, piv);
            perm.swap(k, piv);
        }
        let d = a[(k, k)];
        if d <= cutoff {
            break;
        }
        let s = d.sqrt();
        l[(k, k)] = s;
        for i in k + 1..n {
            l[(i, k)] = a[(i, k)] / s;
        }
        for i in k + 1..n {
            for j in k + 1..=i {
                let v = a[(i, j)] - l[(i, k)] * l[(j, k)];
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
    }
    // undo the permutation on rows: P L (P L)ᵀ = m
    let mut out = DMatrix::<f64>::zeros(n, n);
    for (row, &orig) in perm.iter().enumerate() {
        for c in 0..n {
            out[(orig, c)] = l[(row, c)];
        }
    }
    Ok(out)
}

/// Cholesky factor of a positive-definite matrix, or `None`.
pub fn cholesky_pd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let scale = (0..m.nrows()).fold(0.0f64, |a, i| a.max(m[(i, i)].abs()));
    if !(scale > 0.0) {
        return None;
    }
    let chol = nalgebra::Cholesky::new(m.clone())?;
    let l = chol.l();
    let dmin = (0..l.nrows()).fold(f64::INFINITY, |a, i| a.min(l[(i, i)]));
    if dmin * dmin <= scale * 1e-13 {
        return None;
    }
    Some(l)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}
