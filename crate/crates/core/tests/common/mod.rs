#![allow(dead_code)]

use smartsize_core::data::{Dataset, FeatureSpec, Term, Trajectory};

pub fn terms(list: &[&str]) -> Vec<Term> {
    list.iter().map(|s| s.parse().unwrap()).collect()
}

pub fn spec(h10: &[&str], h11: &[&str], h20: &[&str], h21: &[&str]) -> FeatureSpec {
    FeatureSpec {
        h10: terms(h10),
        h11: terms(h11),
        h12: terms(h10),
        h13: terms(h11),
        h20: terms(h20),
        h21: terms(h21),
    }
}

/// Rows `(x1, a1, x2, a2, y)`.
pub fn dataset(rows: &[(Vec<f64>, i8, Vec<f64>, i8, f64)], features: FeatureSpec) -> Dataset {
    let p1 = rows[0].0.len();
    let p2 = rows[0].2.len();
    let t = rows
        .iter()
        .map(|(x1, a1, x2, a2, y)| Trajectory::new(x1.clone(), *a1, x2.clone(), *a2, *y).unwrap())
        .collect();
    Dataset::new(t, p1, p2, features).unwrap()
}

/// Mean and standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
