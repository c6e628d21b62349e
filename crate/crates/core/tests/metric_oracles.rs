//! Ranking metrics checked against the brute-force oracles and against
//! analytically known values.

#[path = "oracle/mod.rs"]
mod oracle;

use rand::Rng;
use shiftbench::metrics::{auroc, aupr, fpr_at_tpr, ScoredSample};
use shiftbench::rng::RngStream;

fn to_scored(raw: &[(f64, bool)]) -> Vec<ScoredSample> {
    raw.iter()
        .map(|&(score, positive)| ScoredSample { score, positive })
        .collect()
}

#[test]
fn auroc_matches_oracle_on_random_instances() {
    let mut rng = RngStream::new(101, 900);
    for i in 0..200 {
        let raw = oracle::random_instance(&mut rng, 50, i % 2 == 0);
        let fast = auroc(&to_scored(&raw)).unwrap();
        let slow = oracle::brute_force_auroc(&raw);
        assert!(
            (fast - slow).abs() <= 1e-12,
            "instance {i}: fast {fast} vs oracle {slow}"
        );
    }
}

#[test]
fn aupr_matches_oracle_on_random_instances() {
    let mut rng = RngStream::new(102, 900);
    for i in 0..200 {
        let raw = oracle::random_instance(&mut rng, 50, i % 2 == 0);
        let fast = aupr(&to_scored(&raw)).unwrap();
        let slow = oracle::brute_force_aupr(&raw);
        assert!(
            (fast - slow).abs() <= 1e-12,
            "instance {i}: fast {fast} vs oracle {slow}"
        );
    }
}

#[test]
fn fpr_at_tpr_matches_oracle_on_random_instances() {
    let mut rng = RngStream::new(103, 900);
    for i in 0..200 {
        let raw = oracle::random_instance(&mut rng, 50, i % 2 == 0);
        let target = [0.5, 0.8, 0.95, 1.0][i % 4];
        let fast = fpr_at_tpr(&to_scored(&raw), target).unwrap();
        let slow = oracle::brute_force_fpr_at_tpr(&raw, target);
        assert!(
            (fast - slow).abs() <= 1e-12,
            "instance {i} target {target}: fast {fast} vs oracle {slow}"
        );
    }
}

#[test]
fn auroc_known_values() {
    let separated = to_scored(&[(0.1, false), (0.2, false), (0.8, true), (0.9, true)]);
    assert_eq!(auroc(&separated).unwrap(), 1.0);

    let all_tied = to_scored(&[(0.5, false), (0.5, true), (0.5, false), (0.5, true)]);
    assert_eq!(auroc(&all_tied).unwrap(), 0.5);

    let reversed = to_scored(&[(0.9, false), (0.8, false), (0.2, true), (0.1, true)]);
    assert_eq!(auroc(&reversed).unwrap(), 0.0);
}

#[test]
fn aupr_single_positive_ranked_last() {
    for n in 2..=10 {
        let mut raw: Vec<(f64, bool)> = (1..n).map(|i| (i as f64, false)).collect();
        raw.push((0.0, true));
        let fast = aupr(&to_scored(&raw)).unwrap();
        assert!(
            (fast - 1.0 / n as f64).abs() <= 1e-12,
            "n {n}: got {fast}"
        );
    }
}

#[test]
fn fpr_known_values() {
    let separated = to_scored(&[(0.1, false), (0.2, false), (0.8, true), (0.9, true)]);
    assert_eq!(fpr_at_tpr(&separated, 0.95).unwrap(), 0.0);

    let identical = to_scored(&[(0.5, false), (0.5, true), (0.5, false), (0.5, true)]);
    assert_eq!(fpr_at_tpr(&identical, 0.95).unwrap(), 1.0);
}

#[test]
fn degenerate_inputs_error() {
    let only_pos = to_scored(&[(0.5, true), (0.7, true)]);
    let only_neg = to_scored(&[(0.5, false), (0.7, false)]);
    assert!(auroc(&only_pos).is_err());
    assert!(auroc(&only_neg).is_err());
    assert!(aupr(&only_neg).is_err());
    assert!(fpr_at_tpr(&only_pos, 0.95).is_err());
    assert!(fpr_at_tpr(&only_neg, 0.95).is_err());
    assert!(auroc(&[]).is_err());
}

#[test]
fn monotone_transform_leaves_ranking_metrics_unchanged() {
    let mut rng = RngStream::new(104, 900);
    for i in 0..50 {
        let raw = oracle::random_instance(&mut rng, 30, i % 2 == 0);
        let transformed: Vec<(f64, bool)> = raw
            .iter()
            .map(|&(s, p)| (3.0 * s - 7.0, p))
            .collect();
        assert_eq!(
            auroc(&to_scored(&raw)).unwrap(),
            auroc(&to_scored(&transformed)).unwrap()
        );
        assert_eq!(
            aupr(&to_scored(&raw)).unwrap(),
            aupr(&to_scored(&transformed)).unwrap()
        );
        assert_eq!(
            fpr_at_tpr(&to_scored(&raw), 0.95).unwrap(),
            fpr_at_tpr(&to_scored(&transformed), 0.95).unwrap()
        );
    }
}

#[test]
fn auroc_complement_identity_without_ties() {
    let mut rng = RngStream::new(105, 900);
    for _ in 0..50 {
        let raw = oracle::random_instance(&mut rng, 30, false);
        let negated: Vec<(f64, bool)> = raw.iter().map(|&(s, p)| (-s, p)).collect();
        let a = auroc(&to_scored(&raw)).unwrap();
        let b = auroc(&to_scored(&negated)).unwrap();
        assert!((a + b - 1.0).abs() <= 1e-12, "{a} + {b} != 1");
    }

    let mut r: f64 = 0.0;
    let tie_free: Vec<(f64, bool)> = (0..20)
        .map(|i| {
            r += 0.37;
            (r.sin(), i % 3 == 0)
        })
        .collect();
    let a = auroc(&to_scored(&tie_free)).unwrap();
    let b = auroc(&to_scored(
        &tie_free.iter().map(|&(s, p)| (-s, p)).collect::<Vec<_>>(),
    ))
    .unwrap();
    assert_eq!(a + b, 1.0);
}

#[test]
fn non_finite_scores_rejected() {
    let bad = vec![
        ScoredSample {
            score: f64::NAN,
            positive: true,
        },
        ScoredSample {
            score: 0.0,
            positive: false,
        },
    ];
    assert!(auroc(&bad).is_err());
    assert!(aupr(&bad).is_err());
    assert!(fpr_at_tpr(&bad, 0.95).is_err());
}

#[test]
fn fpr_rejects_bad_target() {
    let ok = to_scored(&[(0.1, false), (0.9, true)]);
    assert!(fpr_at_tpr(&ok, 0.0).is_err());
    assert!(fpr_at_tpr(&ok, 1.5).is_err());
    let mut rng = RngStream::new(106, 900);
    let raw = oracle::random_instance(&mut rng, 20, false);
    let _ = rng.gen::<f64>();
    assert!(fpr_at_tpr(&to_scored(&raw), 1.0).is_ok());
}
