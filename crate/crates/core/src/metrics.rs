//! Exact link-prediction metrics: area under the ROC curve and average
//! precision.

use thiserror::Error;

use crate::graph::EdgeSplit;
use crate::models;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("scores and labels differ in length: {scores} vs {labels}")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("metrics need at least one positive and one negative label")]
    SingleClass,
    #[error("score at index {index} is not finite: {value}")]
    NonFiniteScore { index: usize, value: f64 },
}

/// A scored binary sample: finite scores plus 0/1 labels with at least one
/// of each class.
#[derive(Debug, Clone)]
pub struct ScoredLabels {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch { scores: scores.len(), labels: labels.len() });
        }
        if let Some((index, &value)) = scores.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(MetricsError::NonFiniteScore { index, value });
        }
        let positives = labels.iter().filter(|&&l| l).count();
        if positives == 0 || positives == labels.len() {
            return Err(MetricsError::SingleClass);
        }
        Ok(ScoredLabels { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn num_positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Area under the ROC curve as the tie-corrected Mann-Whitney statistic:
/// P(score_pos > score_neg) + 0.5 * P(tie), computed exactly via average
/// ranks.
pub fn auc(sl: &ScoredLabels) -> f64 {
    let n = sl.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sl.scores[a].partial_cmp(&sl.scores[b]).unwrap());

    // Average ranks over tie groups (1-based ranks). Integer midpoints keep
    // every rank exactly representable, so the rank-sum identity with the
    // pairwise definition holds bit-for-bit.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && sl.scores[order[j]] == sl.scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if sl.labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }

    let pos = sl.num_positives() as f64;
    let neg = (n - sl.num_positives()) as f64;
    (rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

/// Average precision over the score-descending ranking:
/// `AP = Σ_k (R_k - R_{k-1}) * P_k`, i.e. the mean of precision at each
/// positive hit. Ties are broken by original index (ascending), which is
/// metrically irrelevant for continuous sigmoid scores but makes the
/// ranking deterministic.
pub fn average_precision(sl: &ScoredLabels) -> f64 {
    let n = sl.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        sl.scores[b]
            .partial_cmp(&sl.scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut hits = 0usize;
    let mut ap_sum = 0.0;
    for (k, &idx) in order.iter().enumerate() {
        if sl.labels[idx] {
            hits += 1;
            ap_sum += hits as f64 / (k + 1) as f64;
        }
    }
    ap_sum / hits as f64
}

/// Scores the positive and negative edges of the requested part of a
/// split with the inner-product decoder and returns `(auc, ap)`.
pub fn evaluate_split(
    z: &Tensor,
    split: &EdgeSplit,
    which: SplitPart,
) -> Result<(f64, f64), MetricsError> {
    let (pos, neg) = match which {
        SplitPart::Val => (&split.val_pos, &split.val_neg),
        SplitPart::Test => (&split.test_pos, &split.test_neg),
    };
    let pairs: Vec<(usize, usize)> = pos.iter().chain(neg.iter()).copied().collect();
    let scores = models::decode_pairs(z, &pairs).expect("split pairs are in range");
    let labels: Vec<bool> = (0..pairs.len()).map(|i| i < pos.len()).collect();
    let sl = ScoredLabels::new(scores, labels)?;
    Ok((auc(&sl), average_precision(&sl)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Val,
    Test,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sl(scores: &[f64], labels: &[u8]) -> ScoredLabels {
        ScoredLabels::new(scores.to_vec(), labels.iter().map(|&l| l == 1).collect()).unwrap()
    }

    #[test]
    fn rejects_single_class_and_bad_lengths() {
        assert!(matches!(
            ScoredLabels::new(vec![0.1, 0.2], vec![true, true]),
            Err(MetricsError::SingleClass)
        ));
        assert!(matches!(
            ScoredLabels::new(vec![0.1], vec![true, false]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ScoredLabels::new(vec![0.1, f64::NAN], vec![true, false]),
            Err(MetricsError::NonFiniteScore { index: 1, .. })
        ));
    }

    #[test]
    fn auc_perfectly_separated() {
        assert_eq!(auc(&sl(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])), 1.0);
    }

    #[test]
    fn auc_all_ties_is_half() {
        assert_eq!(auc(&sl(&[0.4, 0.4, 0.4, 0.4], &[1, 0, 1, 0])), 0.5);
    }

    #[test]
    fn auc_hand_example() {
        // Wins 3 of 4 positive-negative pairs.
        assert_eq!(auc(&sl(&[0.9, 0.8, 0.3, 0.1], &[1, 0, 1, 0])), 0.75);
    }

    #[test]
    fn ap_perfectly_separated() {
        assert_eq!(average_precision(&sl(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])), 1.0);
    }

    #[test]
    fn ap_hand_example() {
        let v = average_precision(&sl(&[0.9, 0.8, 0.7], &[1, 0, 1]));
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn monotone_transforms_leave_metrics_unchanged() {
        let scores = vec![0.11, 0.52, 0.48, 0.9, 0.33, 0.7];
        let labels = vec![false, true, false, true, false, true];
        let base = sl(&scores, &[0, 1, 0, 1, 0, 1]);
        let _ = labels;
        for transform in [|x: f64| 2.0 * x + 1.0, |x: f64| x * x * x] {
            let t: Vec<f64> = scores.iter().map(|&x| transform(x)).collect();
            let mapped = ScoredLabels::new(t, base.labels.clone()).unwrap();
            assert_eq!(auc(&base), auc(&mapped));
            assert_eq!(average_precision(&base), average_precision(&mapped));
        }
    }
}
