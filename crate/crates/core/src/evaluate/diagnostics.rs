//! ROC and calibration diagnostics for fitted outcome models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::learners::OutcomePredictor;
use crate::tabular::Dataset;

/// Predictions at each record's logged location, paired with the outcomes.
pub fn logged_predictions(model: &dyn OutcomePredictor, data: &Dataset) -> Result<(Vec<f64>, Vec<u8>), EvalError> {
    let scores = data
        .records()
        .par_iter()
        .zip(data.locations().par_iter())
        .map(|(r, &t)| model.predict(r, t))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok((scores, data.outcomes().to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// From (0, 0) to (1, 1), one point per distinct score threshold.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// AUC by the rank-sum statistic with tied scores given averaged ranks.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocCurve, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Diagnostics(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::Diagnostics("scores must be finite".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::Diagnostics("ROC needs both positive and negative labels".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..=end (1-based: start+1..=end+1) share their mean.
        let mean_rank = (start + end) as f64 / 2.0 + 1.0;
        let pos_in_group = order[start..=end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum_pos += mean_rank * pos_in_group as f64;
        start = end + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    let auc = (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q);

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = order.len();
    while k > 0 {
        let threshold = scores[order[k - 1]];
        while k > 0 && scores[order[k - 1]] == threshold {
            if labels[order[k - 1]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / q,
            tpr: tp as f64 / p,
        });
    }
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_predicted: f64,
    pub observed_rate: f64,
    pub count: usize,
}

/// Equal-width probability bins on [0, 1]; empty bins are omitted.
pub fn calibration_curve(predictions: &[f64], labels: &[u8], bins: usize) -> Result<Vec<CalibrationBin>, EvalError> {
    if bins < 2 {
        return Err(EvalError::Diagnostics(format!("calibration needs at least 2 bins, got {bins}")));
    }
    if predictions.len() != labels.len() {
        return Err(EvalError::Diagnostics(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut sum_p = vec![0.0; bins];
    let mut sum_y = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for (&p, &y) in predictions.iter().zip(labels) {
        let b = ((p.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1);
        sum_p[b] += p;
        sum_y[b] += y as f64;
        counts[b] += 1;
    }
    let width = 1.0 / bins as f64;
    Ok((0..bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| CalibrationBin {
            lo: b as f64 * width,
            hi: (b + 1) as f64 * width,
            mean_predicted: sum_p[b] / counts[b] as f64,
            observed_rate: sum_y[b] / counts[b] as f64,
            count: counts[b],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation_has_unit_auc() {
        let roc = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(roc.auc, 1.0);
        assert_eq!(roc.points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
    }

    #[test]
    fn ties_get_half_credit() {
        let roc = roc_auc(&[0.5, 0.5], &[0, 1]).unwrap();
        assert_eq!(roc.auc, 0.5);
    }

    #[test]
    fn auc_matches_pairwise_count() {
        let s = [0.3, 0.1, 0.4, 0.4, 0.9, 0.2, 0.7];
        let y = [0, 1, 1, 0, 1, 0, 0];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] == 1 && y[j] == 0 {
                    pairs += 1.0;
                    wins += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((roc_auc(&s, &y).unwrap().auc - wins / pairs).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn constant_predictions_fill_one_bin() {
        let p = vec![0.3; 10];
        let y = [1, 0, 0, 1, 0, 0, 1, 0, 0, 0];
        let bins = calibration_curve(&p, &y, 10).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].count, 10);
        assert!((bins[0].mean_predicted - 0.3).abs() < 1e-12);
        assert!((bins[0].observed_rate - 0.3).abs() < 1e-12);
        assert!(calibration_curve(&p, &y, 1).is_err());
    }
}
