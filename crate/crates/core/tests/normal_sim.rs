use proptest::prelude::*;
use smartsize_core::data::DesignTargets;
use smartsize_core::exec::Sequential;
use smartsize_core::normal::*;
use smartsize_core::report::SampleSize;
use smartsize_core::sim::*;

// scipy.stats.norm.ppf
const Z90: f64 = 1.2815515655446004;
const Z95: f64 = 1.6448536269514722;

fn elicited(s: f64) -> SigmaEstimate {
    SigmaEstimate::elicited(s).unwrap()
}

#[test]
fn pow_size_formula() {
    let t = DesignTargets::new(0.0, 0.5);
    let r = n_pow_normal(&elicited(2.0), &t).unwrap();
    let want = (16.0 * (Z90 + Z95).powi(2)).ceil() as u64;
    assert_eq!(r.n, SampleSize::Finite(want));
    assert_eq!(want, 138);
}

#[test]
fn opt_size_formula() {
    let t = DesignTargets::new(0.0, 1.0);
    let r = n_opt_normal(&elicited(1.5), &t).unwrap();
    assert_eq!(r.n, SampleSize::Finite((Z90 * 1.5 / 0.3_f64).powi(2).ceil() as u64));
}

#[test]
fn both_is_the_larger() {
    let t = DesignTargets::new(0.0, 1.0);
    let s = elicited(3.0);
    let b = n_both_normal(&s, &t).unwrap().n;
    assert_eq!(b, n_pow_normal(&s, &t).unwrap().n.max(n_opt_normal(&s, &t).unwrap().n));
}

#[test]
fn test_statistic_by_hand() {
    let t = normal_test_from_value(1.3, 100, 1.0, 0.05, 2.0);
    assert!((t.statistic - 1.5).abs() < 1e-12);
    assert!(!t.reject);
    assert!(normal_test_from_value(1.4, 100, 1.0, 0.05, 2.0).reject);
}

#[test]
fn surrogate_is_inflated_sample_sd() {
    let s = sigma_surrogate(&[1.0, 2.0, 4.0, 7.0], 1.5).unwrap();
    // sample variance 7
    assert!((s.sigma - 1.5 * 7.0_f64.sqrt()).abs() < 1e-12);
    assert!(sigma_surrogate(&[1.0, 2.0], 0.9).is_err());
    assert!(sigma_surrogate(&[3.0, 3.0], 1.0).is_err());
}

#[test]
fn rejects_nonpositive_sigma() {
    assert!(SigmaEstimate::elicited(0.0).is_err());
    assert!(SigmaEstimate::elicited(f64::NAN).is_err());
}

#[test]
fn pilot_sigma_scales_with_outcomes() {
    let model = GenerativeModel::scenario(ModelKind::NormalAn, 1.0).unwrap();
    let pilot = draw_dataset(&model, 60, 11).unwrap();
    let nu = NuIntegrator::new(5000, 3).unwrap();
    for method in [SigmaMethod::PilotBootstrap, SigmaMethod::DeltaMethod] {
        let a = sigma_from_pilot(&pilot, 30, 8, method, &nu, &Sequential).unwrap().sigma;
        let b = sigma_from_pilot(&pilot.map_outcomes(|y| 2.0 * y), 30, 8, method, &nu, &Sequential)
            .unwrap()
            .sigma;
        assert!((b / a - 2.0).abs() < 1e-3, "{method:?}: {a} {b}");
    }
}

#[test]
fn fixed_values_match_simulation() {
    for kind in [ModelKind::NormalAn, ModelKind::QuadraticT3] {
        for delta in DELTAS {
            let m = GenerativeModel::scenario(kind, delta).unwrap();
            for (i, j) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                let o = oracle_value(&m, Regime::Fixed(i, j), 200_000, 4, &Sequential).unwrap();
                let exact = m.fixed_value(i, j);
                assert!((o.mean - exact).abs() < 4.5 * o.se, "{kind:?} {delta} ({i},{j}): {} vs {exact}", o.mean);
            }
        }
    }
}

#[test]
fn randomized_value_is_average_of_fixed() {
    let m = GenerativeModel::scenario(ModelKind::NormalAn, 0.5).unwrap();
    let exact: f64 = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
        .iter()
        .map(|&(i, j)| m.fixed_value(i, j))
        .sum::<f64>()
        / 4.0;
    let o = oracle_value(&m, Regime::Randomized, 200_000, 5, &Sequential).unwrap();
    assert!((o.mean - exact).abs() < 4.5 * o.se);
}

#[test]
fn trial_assigns_arms_evenly() {
    let m = GenerativeModel::scenario(ModelKind::QuadraticT3, 1.0).unwrap();
    let d = draw_dataset(&m, 40_000, 6).unwrap();
    let n = d.len() as f64;
    let p1 = d.trajectories().iter().filter(|t| t.a1 == 1).count() as f64 / n;
    let p2 = d.trajectories().iter().filter(|t| t.a2 == 1).count() as f64 / n;
    let se = (0.25 / n).sqrt();
    assert!((p1 - 0.5).abs() < 4.0 * se && (p2 - 0.5).abs() < 4.0 * se);
}

#[test]
fn soc_with_certainty_is_optimal() {
    let m = GenerativeModel::scenario(ModelKind::NormalAn, 2.0).unwrap();
    let a = regime_outcomes(&m, Regime::StandardOfCare(1.0), 500, 9);
    let b = regime_outcomes(&m, Regime::Optimal, 500, 9);
    assert_eq!(a, b);
}

#[test]
fn optimal_beats_fixed_by_delta() {
    for delta in [0.5, 1.0, 2.0] {
        let m = GenerativeModel::scenario(ModelKind::NormalAn, delta).unwrap();
        let o = oracle_value(&m, Regime::Optimal, 400_000, 10, &Sequential).unwrap();
        let gain = o.mean - m.best_fixed().1;
        assert!((gain - delta).abs() < 0.05 * delta.max(1.0) + 4.5 * o.se, "delta {delta}: gain {gain}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn nu_is_homogeneous(c in 0.1f64..10.0, seed in 0u64..1000) {
        let m = GenerativeModel::scenario(ModelKind::NormalAn, 1.0).unwrap();
        let s = m.true_summary().unwrap();
        let nu = NuIntegrator::new(2000, seed).unwrap();
        let a = nu.value(&s).unwrap().value;
        let b = nu.value(&s.scaled(c)).unwrap().value;
        prop_assert!((b - c * a).abs() <= 1e-9 * (c * a).abs().max(1.0));
    }

    #[test]
    fn datasets_are_reproducible(seed in any::<u64>(), n in 1usize..200) {
        let m = GenerativeModel::scenario(ModelKind::QuadraticT3, 0.5).unwrap();
        prop_assert_eq!(draw_dataset(&m, n, seed).unwrap(), draw_dataset(&m, n, seed).unwrap());
    }

    #[test]
    fn sizes_grow_with_sigma(s in 0.1f64..20.0, k in 1.0f64..4.0) {
        let t = DesignTargets::new(0.0, 1.0);
        prop_assert!(n_pow_normal(&elicited(s), &t).unwrap().n <= n_pow_normal(&elicited(k * s), &t).unwrap().n);
        prop_assert!(n_opt_normal(&elicited(s), &t).unwrap().n <= n_opt_normal(&elicited(k * s), &t).unwrap().n);
    }
}
