mod common;

use common::{dataset, mean_se, spec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use smartsize_core::projection::{mu1_given_mu2, sandwich_stage2};
use smartsize_core::qlearn::{fit_q_learning, fit_stage1_q, fit_stage2, q1_from_parts};
use smartsize_core::rng::{normal, stream};
use smartsize_core::sim::{draw_dataset, GenerativeModel, ModelKind};

fn ls(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    (x.transpose() * x).try_inverse().unwrap() * x.transpose() * y
}

#[test]
fn stage1_refit_matches_normal_equations() {
    let rows = vec![
        (vec![0.3], 1, vec![1.0], 1, 2.0),
        (vec![-1.2], -1, vec![0.5], 1, -1.0),
        (vec![0.8], 1, vec![-2.0], -1, 0.5),
        (vec![2.0], -1, vec![0.0], -1, 3.0),
        (vec![-0.4], 1, vec![1.5], 1, 1.0),
        (vec![1.1], -1, vec![-0.7], 1, -0.2),
    ];
    let f = spec(&["1", "x1_1"], &["1"], &["1", "x2_1"], &["1", "x2_1"]);
    let data = dataset(&rows, f);
    let mu2 = [0.5, -1.0, 0.25, 2.0];
    let (mu1, _) = mu1_given_mu2(&data, &mu2, 0.005).unwrap();

    let x = DMatrix::from_fn(6, 3, |i, j| match j {
        0 => 1.0,
        1 => rows[i].0[0],
        _ => f64::from(rows[i].1),
    });
    let y = DVector::from_fn(6, |i, _| {
        let x2 = rows[i].2[0];
        mu2[0] + mu2[1] * x2 + (mu2[2] + mu2[3] * x2).abs()
    });
    let want = ls(&x, &y);
    for k in 0..3 {
        assert!((mu1[k] - want[k]).abs() < 1e-12, "{mu1:?} vs {want}");
    }
}

#[test]
fn stage1_refit_at_estimate_is_q_learning() {
    let model = GenerativeModel::scenario(ModelKind::NormalAn, 1.0).unwrap();
    let data = draw_dataset(&model, 200, 5).unwrap();
    let s2 = fit_stage2(&data).unwrap();
    let q = fit_stage1_q(&data, &s2).unwrap();
    let (mu1, _) = mu1_given_mu2(&data, &q.mu2, 0.005).unwrap();
    assert_eq!(mu1, q.mu1);
}

#[test]
fn saturated_stage1_has_degenerate_sandwich() {
    let mut rows = Vec::new();
    for (k, (x, a)) in [(0.0, 1), (0.0, -1), (1.0, 1), (1.0, -1)].into_iter().enumerate() {
        for r in 0..3 {
            let a2 = if r % 2 == 0 { 1 } else { -1 };
            rows.push((vec![x], a, vec![0.1 * (k + r) as f64], a2, (k * r) as f64));
        }
    }
    let f = spec(&["1", "x1_1"], &["1", "x1_1"], &["1", "x1_1", "a1"], &["1"]);
    let data = dataset(&rows, f);
    let (_, ell) = mu1_given_mu2(&data, &[1.0, -2.0, 0.5, 0.0], 0.005).unwrap();
    assert!(ell.degenerate);
    assert!(ell.shape.amax() < 1e-20);
}

#[test]
fn noiseless_stage2_sandwich_vanishes() {
    let model = GenerativeModel::scenario(ModelKind::NormalAn, 0.0).unwrap();
    let beta = [0.5, 0.5, -1.0, 1.0, 1.0, 0.5, 0.5, 1.0];
    let data = draw_dataset(&model, 80, 2).unwrap();
    let spec = data.features().clone();
    let exact = data.map_outcomes(|y| y);
    let rows: Vec<_> = exact
        .trajectories()
        .iter()
        .map(|t| {
            let mut h0 = Vec::new();
            let mut h1 = Vec::new();
            spec.eval_stage2(smartsize_core::data::SummaryId::H20, &t.x1, t.a1, &t.x2, &mut h0);
            spec.eval_stage2(smartsize_core::data::SummaryId::H21, &t.x1, t.a1, &t.x2, &mut h1);
            let y = h0.iter().zip(&beta[..4]).map(|(a, b)| a * b).sum::<f64>()
                + f64::from(t.a2) * h1.iter().zip(&beta[4..]).map(|(a, b)| a * b).sum::<f64>();
            (t.x1.clone(), t.a1, t.x2.clone(), t.a2, y)
        })
        .collect();
    let data = dataset(&rows, spec);
    let s2 = fit_stage2(&data).unwrap();
    assert!(sandwich_stage2(&data, &s2).amax() < 1e-18);
}

#[test]
fn sandwich_approaches_identity_for_orthonormal_design() {
    // c2 = (1, a2) with unit-variance noise: sandwich -> identity
    let mut rng = stream(17, 1, 0);
    let rows: Vec<_> = (0..20_000)
        .map(|i| {
            let a2 = if i % 2 == 0 { 1 } else { -1 };
            let a1 = if (i / 2) % 2 == 0 { 1 } else { -1 };
            (vec![0.0], a1, vec![0.0], a2, normal(&mut rng))
        })
        .collect();
    let data = dataset(&rows, spec(&["1"], &["1"], &["1"], &["1"]));
    let s2 = fit_stage2(&data).unwrap();
    let w = sandwich_stage2(&data, &s2);
    for i in 0..2 {
        assert!((w[(i, i)] - 1.0).abs() < 0.1, "{w}");
    }
    assert!(w[(0, 1)].abs() < 0.1);
}

#[test]
fn stage2_recovers_main_effects_at_scale() {
    let model = GenerativeModel::scenario(ModelKind::NormalAn, 0.0).unwrap();
    let data = draw_dataset(&model, 1_000_000, 11).unwrap();
    let s2 = fit_stage2(&data).unwrap();
    let w = sandwich_stage2(&data, &s2);
    let n = data.len() as f64;
    for (k, want) in [0.5, 0.5, -1.0, 1.0].into_iter().enumerate() {
        let se = (w[(k, k)] / n).sqrt();
        assert!((s2.beta20[k] - want).abs() < 3.0 * se, "beta20[{k}] = {}", s2.beta20[k]);
    }
}

#[test]
fn q1_closed_form_matches_monte_carlo() {
    let mut rng = stream(3, 2, 0);
    for (base, m, tau) in [(0.3, -0.8, 0.4), (1.0, 2.5, 3.0), (-2.0, 0.0, 1.0)] {
        let draws: Vec<f64> = (0..200_000).map(|_| base + (m + tau * normal(&mut rng)).abs()).collect();
        let (mean, se) = mean_se(&draws);
        assert!((q1_from_parts(base, m, tau) - mean).abs() < 4.0 * se);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn stage2_sandwich_symmetric_psd(seed in 0u64..1_000_000) {
        let mut rng = stream(seed, 9, 0);
        let n = 40;
        let rows: Vec<_> = (0..n)
            .map(|_| {
                let x1 = vec![normal(&mut rng)];
                let x2 = vec![normal(&mut rng)];
                let a1 = if rng.random::<bool>() { 1 } else { -1 };
                let a2 = if rng.random::<bool>() { 1 } else { -1 };
                let y = x1[0] + 0.5 * x2[0] * f64::from(a2) + normal(&mut rng) * (1.0 + x2[0].abs());
                (x1, a1, x2, a2, y)
            })
            .collect();
        let data = dataset(&rows, spec(&["1", "x1_1"], &["1"], &["1", "x1_1", "a1", "x2_1"], &["1", "x2_1"]));
        let Ok(s2) = fit_stage2(&data) else { return Ok(()) };
        let w = sandwich_stage2(&data, &s2);
        prop_assert!((&w - w.transpose()).amax() <= 1e-12 * (1.0 + w.amax()));
        let eig = w.symmetric_eigenvalues();
        prop_assert!(eig.min() >= -1e-10 * (1.0 + w.amax()));
    }

    #[test]
    fn q_learning_is_deterministic(seed in 0u64..1000) {
        let model = GenerativeModel::scenario(ModelKind::QuadraticT3, 1.0).unwrap();
        let a = draw_dataset(&model, 60, seed).unwrap();
        let b = draw_dataset(&model, 60, seed).unwrap();
        prop_assert_eq!(fit_q_learning(&a).ok(), fit_q_learning(&b).ok());
    }
}
