use funnel_core::metrics::{acuity_regression, auroc, ece, interval_coverage, mae_params, named};
use funnel_core::FunnelError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// O(n²) pair count: P(score_pos > score_neg) + ½ P(tie).
fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

#[test]
fn auroc_matches_pair_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // coarse scores force plenty of ties
    let scores: Vec<f64> = (0..200).map(|_| f64::from(rng.gen_range(0..20)) / 20.0).collect();
    let labels: Vec<bool> = scores.iter().map(|s| rng.gen_bool(0.2 + 0.6 * s)).collect();
    let fast = auroc(&scores, &labels).unwrap();
    assert!((fast - brute_auroc(&scores, &labels)).abs() < 1e-12);
}

#[test]
fn auroc_edge_cases() {
    assert_eq!(auroc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
    assert_eq!(auroc(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
    assert_eq!(auroc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    assert!(matches!(
        auroc(&[0.1, 0.2], &[true, true]),
        Err(FunnelError::UndefinedMetric(_))
    ));
}

#[test]
fn ece_hand_built_bins() {
    // 3 bins: [0,1/3) holds 0.1,0.2 with labels 0,1 -> |0.3 − 1| = 0.7
    //         [1/3,2/3) holds 0.5 with label 1       -> |0.5 − 1| = 0.5
    //         [2/3,1] holds 1.0 with label 1        -> 0
    let scores = [0.1, 0.2, 0.5, 1.0];
    let labels = [false, true, true, true];
    let expected = (0.7 + 0.5 + 0.0) / 4.0;
    assert!((ece(&scores, &labels, 3).unwrap() - expected).abs() < 1e-15);
    assert!(ece(&[1.5], &[true], 3).is_err());
    assert!(ece(&[0.5], &[true], 0).is_err());
}

#[test]
fn ece_of_calibrated_stream_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scores: Vec<f64> = (0..100_000).map(|_| rng.gen::<f64>()).collect();
    let labels: Vec<bool> = scores.iter().map(|&s| rng.gen_bool(s)).collect();
    assert!(ece(&scores, &labels, 10).unwrap() < 0.01);
    let shifted: Vec<f64> = scores.iter().map(|s| s * 0.5).collect();
    assert!(ece(&shifted, &labels, 10).unwrap() > 0.2);
}

#[test]
fn mae_by_name() {
    let names: Vec<String> = ["alpha", "beta_x1", "beta_x2"].iter().map(|s| s.to_string()).collect();
    let est = named(&names, &[1.0, 0.5, -0.5]);
    let truth = vec![
        ("beta_x2".to_string(), 0.5),
        ("alpha".to_string(), 0.0),
        ("beta_x1".to_string(), 0.0),
    ];
    let betas = names[1..].to_vec();
    assert!((mae_params(&est, &truth, &betas).unwrap() - 0.75).abs() < 1e-15);
    assert!(mae_params(&est, &truth, &["gamma".to_string()]).is_err());
    assert!(mae_params(&est, &truth, &[]).is_err());
}

/// Solves the 3×3 normal equations by Cramer's rule.
fn normal_equations(x: &[[f64; 3]], y: &[f64]) -> [f64; 3] {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (row, &yi) in x.iter().zip(y) {
        for i in 0..3 {
            b[i] += row[i] * yi;
            for j in 0..3 {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for i in 0..3 {
            m[i][k] = b[i];
        }
        *o = det(&m) / d;
    }
    out
}

#[test]
fn acuity_matches_normal_equations() {
    let group = [true, false, true, true, false, false, true, false, true, false];
    let risk = [0.1, 0.4, 0.35, 0.8, 0.05, 0.6, 0.9, 0.2, 0.5, 0.75];
    let acuity = [4.0, 3.0, 3.0, 2.0, 5.0, 3.0, 1.0, 4.0, 3.0, 2.0];
    let x: Vec<[f64; 3]> = group
        .iter()
        .zip(&risk)
        .map(|(&g, &r)| [f64::from(u8::from(g)), f64::from(u8::from(!g)), r])
        .collect();
    let expected = normal_equations(&x, &acuity);
    let fit = acuity_regression(&acuity, &group, &risk).unwrap();
    assert!((fit.beta_group_a.estimate - expected[0]).abs() < 1e-10);
    assert!((fit.beta_group_b.estimate - expected[1]).abs() < 1e-10);
    assert!((fit.beta_risk.estimate - expected[2]).abs() < 1e-10);
    assert!(fit.beta_risk.lower < fit.beta_risk.estimate && fit.beta_risk.estimate < fit.beta_risk.upper);
    assert_eq!(fit.n, 10);
}

#[test]
fn acuity_rejects_degenerate_designs() {
    // everyone in one group: the other indicator column is all zero
    let risk = [0.1, 0.2, 0.3, 0.4, 0.5];
    let acuity = [3.0, 3.0, 2.0, 2.0, 1.0];
    assert!(acuity_regression(&acuity, &[true; 5], &risk).is_err());
    assert!(acuity_regression(&acuity[..3], &[true, false, true], &risk[..3]).is_err());
    assert!(acuity_regression(&[1.0, 2.0], &[true, false], &[0.1, 1.5]).is_err());
}

#[test]
fn identical_groups_give_equal_intercepts() {
    let risk: Vec<f64> = (0..20).map(|i| f64::from(i) / 20.0).collect();
    let mut acuity = Vec::new();
    let mut group = Vec::new();
    for &r in &risk {
        for g in [true, false] {
            acuity.push(3.0 - 2.0 * r + if r < 0.5 { 0.1 } else { -0.1 });
            group.push(g);
        }
    }
    let risk2: Vec<f64> = risk.iter().flat_map(|&r| [r, r]).collect();
    let fit = acuity_regression(&acuity, &group, &risk2).unwrap();
    assert!((fit.beta_group_a.estimate - fit.beta_group_b.estimate).abs() < 1e-12);
}

proptest! {
    #[test]
    fn auroc_invariant_under_monotone_transform(
        raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..60),
    ) {
        let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let base = auroc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert!((auroc(&mapped, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((base - brute_auroc(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn coverage_is_permutation_invariant(
        rows in proptest::collection::vec(proptest::collection::vec((-1.0f64..1.0, 0.0f64..1.0, -1.5f64..1.5), 3), 1..30),
        shift in 0usize..30,
    ) {
        let intervals: Vec<Vec<(f64, f64)>> = rows.iter().map(|r| r.iter().map(|&(lo, w, _)| (lo, lo + w)).collect()).collect();
        let truths: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&(_, _, t)| t).collect()).collect();
        let base = interval_coverage(&intervals, &truths).unwrap();
        let k = shift % rows.len();
        let mut iv2 = intervals.clone();
        let mut tr2 = truths.clone();
        iv2.rotate_left(k);
        tr2.rotate_left(k);
        prop_assert_eq!(&base, &interval_coverage(&iv2, &tr2).unwrap());
        prop_assert!(base.iter().all(|c| (0.0..=1.0).contains(c)));
    }
}
