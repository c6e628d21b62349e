//! Brute-force reference implementations of the ranking metrics.
//!
//! Written against the metric definitions alone and kept free of any
//! crate internals, so they stay valid oracles no matter how the fast
//! paths evolve. All are O(n²) or worse; use only on small instances.

/// P[random positive outranks random negative], ties counting half.
pub fn brute_force_auroc(scored: &[(f64, bool)]) -> f64 {
    let mut credit = 0.0f64;
    let mut pairs = 0u64;
    for &(sp, p) in scored {
        if !p {
            continue;
        }
        for &(sn, n_pos) in scored {
            if n_pos {
                continue;
            }
            pairs += 1;
            if sp > sn {
                credit += 1.0;
            } else if sp == sn {
                credit += 0.5;
            }
        }
    }
    credit / pairs as f64
}

fn descending_thresholds(scored: &[(f64, bool)]) -> Vec<f64> {
    let mut t: Vec<f64> = scored.iter().map(|&(s, _)| s).collect();
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t.dedup();
    t
}

fn counts_at(scored: &[(f64, bool)], threshold: f64) -> (f64, f64) {
    let tp = scored.iter().filter(|&&(s, p)| p && s >= threshold).count();
    let fp = scored.iter().filter(|&&(s, p)| !p && s >= threshold).count();
    (tp as f64, fp as f64)
}

/// Average precision by enumerating every distinct score as a threshold.
pub fn brute_force_aupr(scored: &[(f64, bool)]) -> f64 {
    let total_pos = scored.iter().filter(|&&(_, p)| p).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in descending_thresholds(scored) {
        let (tp, fp) = counts_at(scored, t);
        let precision = tp / (tp + fp);
        let recall = tp / total_pos;
        ap += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    ap
}

/// Lowest false-positive rate over thresholds reaching the target
/// true-positive rate, by exhaustive threshold sweep.
pub fn brute_force_fpr_at_tpr(scored: &[(f64, bool)], target_tpr: f64) -> f64 {
    let total_pos = scored.iter().filter(|&&(_, p)| p).count() as f64;
    let total_neg = scored.iter().filter(|&&(_, p)| !p).count() as f64;
    let mut best: Option<f64> = None;
    for t in descending_thresholds(scored) {
        let (tp, fp) = counts_at(scored, t);
        if tp / total_pos >= target_tpr {
            let fpr = fp / total_neg;
            best = Some(match best {
                None => fpr,
                Some(b) if fpr < b => fpr,
                Some(b) => b,
            });
        }
    }
    best.expect("some threshold always reaches TPR 1")
}

/// Random scored instance with both classes present; `tie_prone`
/// discretizes scores so equal values occur often.
pub fn random_instance(
    rng: &mut impl rand::Rng,
    max_n: usize,
    tie_prone: bool,
) -> Vec<(f64, bool)> {
    let n = rng.gen_range(2..=max_n.max(2));
    loop {
        let scored: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let raw: f64 = rng.gen();
                let score = if tie_prone {
                    (raw * 4.0).floor() / 4.0
                } else {
                    raw
                };
                (score, rng.gen_bool(0.5))
            })
            .collect();
        let pos = scored.iter().filter(|&&(_, p)| p).count();
        if pos > 0 && pos < n {
            return scored;
        }
    }
}
