//! Uncertainty and performance metrics: Shannon entropy, accuracy,
//! confusion counts, AUROC, AUPR, and FPR at a fixed TPR.
//!
//! The ranking metrics are O(n log n) sorted-walk implementations with
//! explicit tie-group handling; their contracts are pinned to brute-force
//! pairwise and threshold-sweep oracles in the test suite.

use serde::{Deserialize, Serialize};

use crate::datamodel::{PredictionRecord, ProbabilityVector};
use crate::error::{Error, Result};

/// Shannon entropy in bits: H = −Σ p log₂ p with 0·log 0 = 0.
///
/// Base 2 makes the uniform binary distribution come out at exactly
/// 1 bit and caps C-class entropy at log₂ C. The cross-entropy training
/// loss keeps natural log; the two are deliberately separate.
pub fn shannon_entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::InvalidProbability("empty vector".to_string()));
    }
    let mut sum = 0.0;
    for (i, &v) in p.iter().enumerate() {
        if !v.is_finite() || !(0.0..=1.0 + ProbabilityVector::SUM_TOLERANCE).contains(&v) {
            return Err(Error::InvalidProbability(format!("entry {i} = {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > ProbabilityVector::SUM_TOLERANCE {
        return Err(Error::InvalidProbability(format!("sum {sum}")));
    }
    let mut h = 0.0;
    for &v in p {
        if v > 0.0 {
            h -= v * v.log2();
        }
    }
    if h <= 0.0 {
        return Ok(0.0);
    }
    Ok(h.min((p.len() as f64).log2()))
}

/// Fraction of records whose argmax class equals the true label.
pub fn accuracy(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyMetricInput);
    }
    let correct = records.iter().filter(|r| r.is_correct()).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Binary confusion counts at a probability threshold.
///
/// Plain `fp`/`fn` would collide with the `fn` keyword, hence the `c`
/// suffix on all four fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tpc: usize,
    pub tnc: usize,
    pub fpc: usize,
    pub fnc: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tpc + self.tnc + self.fpc + self.fnc
    }

    /// TP / (TP + FN); `None` when there are no positives.
    pub fn tpr(&self) -> Option<f64> {
        let denom = self.tpc + self.fnc;
        (denom > 0).then(|| self.tpc as f64 / denom as f64)
    }

    /// FP / (TN + FP); `None` when there are no negatives.
    pub fn fpr(&self) -> Option<f64> {
        let denom = self.tnc + self.fpc;
        (denom > 0).then(|| self.fpc as f64 / denom as f64)
    }
}

/// Count a binary record set against a threshold: a record is predicted
/// positive iff p(positive_class) ≥ threshold (inclusive, so probability
/// exactly 1.0 is still positive at threshold 1.0).
pub fn confusion(
    records: &[PredictionRecord],
    positive_class: usize,
    threshold: f64,
) -> Result<ConfusionCounts> {
    if positive_class > 1 {
        return Err(Error::InvalidConfig(format!(
            "positive class {positive_class} on a binary task"
        )));
    }
    let mut counts = ConfusionCounts::default();
    for r in records {
        if r.probs.len() != 2 {
            return Err(Error::NonBinary { got: r.probs.len() });
        }
        let predicted_positive = r.probs[positive_class] >= threshold;
        let actually_positive = r.true_label == positive_class;
        match (predicted_positive, actually_positive) {
            (true, true) => counts.tpc += 1,
            (true, false) => counts.fpc += 1,
            (false, true) => counts.fnc += 1,
            (false, false) => counts.tnc += 1,
        }
    }
    Ok(counts)
}

/// The ranking atom: a score (higher = more positive) with ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub positive: bool,
}

struct RankedInput {
    /// Sorted by score; direction chosen per metric.
    sorted: Vec<ScoredSample>,
    positives: usize,
    negatives: usize,
}

fn rank_input(scored: &[ScoredSample], descending: bool) -> Result<RankedInput> {
    if scored.is_empty() {
        return Err(Error::EmptyMetricInput);
    }
    for s in scored {
        if !s.score.is_finite() {
            return Err(Error::NonFinite {
                context: "metric score".to_string(),
            });
        }
    }
    let mut sorted = scored.to_vec();
    if descending {
        sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    } else {
        sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    }
    let positives = sorted.iter().filter(|s| s.positive).count();
    Ok(RankedInput {
        negatives: sorted.len() - positives,
        positives,
        sorted,
    })
}

/// Walk equal-score groups of `sorted`, yielding (positives, negatives)
/// per group.
fn tie_groups(sorted: &[ScoredSample]) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut i = 0;
    std::iter::from_fn(move || {
        if i >= sorted.len() {
            return None;
        }
        let score = sorted[i].score;
        let mut pos = 0;
        let mut neg = 0;
        while i < sorted.len() && sorted[i].score == score {
            if sorted[i].positive {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        Some((pos, neg))
    })
}

/// Area under the ROC curve, Mann–Whitney form: the probability that a
/// uniformly random positive outscores a uniformly random negative, ties
/// counting half.
pub fn auroc(scored: &[ScoredSample]) -> Result<f64> {
    let input = rank_input(scored, false)?;
    if input.positives == 0 || input.negatives == 0 {
        return Err(Error::SingleClass);
    }
    let mut credit = 0.0f64;
    let mut negatives_below = 0usize;
    for (pos, neg) in tie_groups(&input.sorted) {
        credit += (pos * negatives_below) as f64 + 0.5 * (pos * neg) as f64;
        negatives_below += neg;
    }
    Ok(credit / (input.positives as f64 * input.negatives as f64))
}

/// Area under the precision-recall curve as average precision with step
/// interpolation; equal-score groups are processed atomically.
pub fn aupr(scored: &[ScoredSample]) -> Result<f64> {
    let input = rank_input(scored, true)?;
    if input.positives == 0 {
        return Err(Error::NoPositives);
    }
    let total_pos = input.positives as f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (pos, neg) in tie_groups(&input.sorted) {
        tp += pos;
        fp += neg;
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total_pos;
        ap += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    Ok(ap)
}

/// Lowest achievable FPR among thresholds whose TPR reaches the target.
///
/// Thresholds sweep the distinct scores descending; both rates are
/// non-decreasing along that sweep, so the first qualifying threshold
/// gives the minimum.
pub fn fpr_at_tpr(scored: &[ScoredSample], target_tpr: f64) -> Result<f64> {
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "target TPR {target_tpr} outside (0, 1]"
        )));
    }
    let input = rank_input(scored, true)?;
    if input.positives == 0 || input.negatives == 0 {
        return Err(Error::SingleClass);
    }
    let total_pos = input.positives as f64;
    let total_neg = input.negatives as f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    for (pos, neg) in tie_groups(&input.sorted) {
        tp += pos;
        fp += neg;
        if tp as f64 / total_pos >= target_tpr {
            return Ok(fp as f64 / total_neg);
        }
    }
    unreachable!("TPR reaches 1.0 once every sample is accepted")
}

/// One table cell: the five headline numbers for a (method, dataset) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub accuracy: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub fpr: f64,
    pub mean_entropy: f64,
    pub n: usize,
}

/// Bundle the standard metrics for a binary record set.
///
/// Ranking metrics use p(positive_class) as the score; FPR is taken at
/// 95% TPR; mean entropy is recomputed from the probability vectors so
/// it stays comparable across methods whose `uncertainty` fields use
/// different scales.
pub fn metric_block(records: &[PredictionRecord], positive_class: usize) -> Result<MetricBlock> {
    if records.is_empty() {
        return Err(Error::EmptyMetricInput);
    }
    for r in records {
        if r.probs.len() != 2 {
            return Err(Error::NonBinary { got: r.probs.len() });
        }
    }
    let scored: Vec<ScoredSample> = records
        .iter()
        .map(|r| ScoredSample {
            score: r.probs[positive_class],
            positive: r.true_label == positive_class,
        })
        .collect();
    let mut entropy_sum = 0.0;
    for r in records {
        entropy_sum += shannon_entropy(r.probs.as_slice())?;
    }
    Ok(MetricBlock {
        accuracy: accuracy(records)?,
        auroc: auroc(&scored)?,
        aupr: aupr(&scored)?,
        fpr: fpr_at_tpr(&scored, 0.95)?,
        mean_entropy: entropy_sum / records.len() as f64,
        n: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(probs: Vec<f64>, true_label: usize) -> PredictionRecord {
        let probs = ProbabilityVector::new(probs).unwrap();
        let uncertainty = shannon_entropy(probs.as_slice()).unwrap();
        PredictionRecord {
            probs,
            true_label,
            uncertainty,
            method: "test".to_string(),
        }
    }

    #[test]
    fn entropy_known_values() {
        assert_eq!(shannon_entropy(&[0.5, 0.5]).unwrap(), 1.0);
        assert_eq!(shannon_entropy(&[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(shannon_entropy(&[0.0, 1.0]).unwrap(), 0.0);
        let h = shannon_entropy(&[0.9, 0.1]).unwrap();
        assert!((h - 0.4690).abs() < 5e-5, "H(0.9, 0.1) = {h}");
        let u4 = shannon_entropy(&[0.25; 4]).unwrap();
        assert_eq!(u4, 2.0);
    }

    #[test]
    fn entropy_rejects_invalid() {
        assert!(shannon_entropy(&[]).is_err());
        assert!(shannon_entropy(&[0.7, 0.2]).is_err());
        assert!(shannon_entropy(&[1.2, -0.2]).is_err());
        assert!(shannon_entropy(&[f64::NAN, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn entropy_bounds(raw in proptest::collection::vec(1e-6f64..1.0, 2..6)) {
            let sum: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let h = shannon_entropy(&p).unwrap();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (p.len() as f64).log2());
        }

        #[test]
        fn entropy_max_at_uniform(raw in proptest::collection::vec(1e-6f64..1.0, 3..6)) {
            let sum: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let c = p.len();
            let uniform = vec![1.0 / c as f64; c];
            let h = shannon_entropy(&p).unwrap();
            let hu = shannon_entropy(&uniform).unwrap();
            prop_assert!(h <= hu + 1e-12);
        }
    }

    #[test]
    fn accuracy_fractions() {
        let all = vec![record(vec![0.9, 0.1], 0), record(vec![0.2, 0.8], 1)];
        assert_eq!(accuracy(&all).unwrap(), 1.0);
        let three_of_four = vec![
            record(vec![0.9, 0.1], 0),
            record(vec![0.9, 0.1], 0),
            record(vec![0.2, 0.8], 1),
            record(vec![0.2, 0.8], 0),
        ];
        assert_eq!(accuracy(&three_of_four).unwrap(), 0.75);
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn confusion_counts_threshold_semantics() {
        let recs = vec![record(vec![0.6, 0.4], 0)];
        let c = confusion(&recs, 0, 0.5).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tpc: 1,
                tnc: 0,
                fpc: 0,
                fnc: 0
            }
        );

        let exact_one = vec![record(vec![1.0, 0.0], 0)];
        let c = confusion(&exact_one, 0, 1.0).unwrap();
        assert_eq!(c.tpc, 1);

        assert_eq!(confusion(&[], 1, 0.5).unwrap(), ConfusionCounts::default());
    }

    #[test]
    fn confusion_rates() {
        let recs = vec![
            record(vec![0.1, 0.9], 1),
            record(vec![0.6, 0.4], 1),
            record(vec![0.9, 0.1], 0),
            record(vec![0.3, 0.7], 0),
        ];
        let c = confusion(&recs, 1, 0.5).unwrap();
        assert_eq!(c.total(), 4);
        assert_eq!(c.tpr(), Some(0.5));
        assert_eq!(c.fpr(), Some(0.5));
    }

    #[test]
    fn confusion_rejects_non_binary() {
        let recs = vec![record(vec![0.5, 0.3, 0.2], 0)];
        assert!(matches!(
            confusion(&recs, 0, 0.5),
            Err(Error::NonBinary { got: 3 })
        ));
        assert!(confusion(&[], 2, 0.5).is_err());
    }

    #[test]
    fn metric_block_composes_components() {
        let recs = vec![
            record(vec![0.9, 0.1], 0),
            record(vec![0.8, 0.2], 0),
            record(vec![0.3, 0.7], 1),
            record(vec![0.1, 0.9], 1),
        ];
        let block = metric_block(&recs, 1).unwrap();
        assert_eq!(block.accuracy, accuracy(&recs).unwrap());
        let scored: Vec<ScoredSample> = recs
            .iter()
            .map(|r| ScoredSample {
                score: r.probs[1],
                positive: r.true_label == 1,
            })
            .collect();
        assert_eq!(block.auroc, auroc(&scored).unwrap());
        assert_eq!(block.aupr, aupr(&scored).unwrap());
        assert_eq!(block.fpr, fpr_at_tpr(&scored, 0.95).unwrap());
        assert_eq!(block.n, 4);
    }

    #[test]
    fn metric_block_confident_and_uniform_cases() {
        let confident = vec![
            record(vec![0.99, 0.01], 0),
            record(vec![0.98, 0.02], 0),
            record(vec![0.02, 0.98], 1),
            record(vec![0.01, 0.99], 1),
        ];
        let block = metric_block(&confident, 1).unwrap();
        assert_eq!(block.accuracy, 1.0);
        assert_eq!(block.auroc, 1.0);
        assert!(block.mean_entropy < 0.15);

        let uniform = vec![record(vec![0.5, 0.5], 0), record(vec![0.5, 0.5], 1)];
        let block = metric_block(&uniform, 1).unwrap();
        assert_eq!(block.mean_entropy, 1.0);
        assert_eq!(block.auroc, 0.5);
    }
}
