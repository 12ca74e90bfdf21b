//! F-measure over the threshold grid plus the adaptive variant.

use super::{thresholds, EvalPair, F_BETA_SQUARED, NUM_THRESHOLDS};

#[derive(Debug, Clone)]
pub struct FMeasureResult {
    pub f_adp: f64,
    pub f_mean: f64,
    pub f_max: f64,
    pub f_curve: Vec<f64>,
    pub pr_curve: Vec<(f64, f64)>,
}

fn f_beta(precision: f64, recall: f64) -> f64 {
    let denom = F_BETA_SQUARED * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + F_BETA_SQUARED) * precision * recall / denom
    }
}

/// Precision, recall and F at one binarization threshold (`pred >= t`).
fn prf_at(pair: &EvalPair, t: f64) -> (f64, f64, f64) {
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut positives = 0usize;
    for (&p, &g) in pair.prediction().iter().zip(pair.ground_truth().iter()) {
        let fg = p >= t;
        predicted += usize::from(fg);
        positives += usize::from(g == 1.0);
        tp += usize::from(fg && g == 1.0);
    }
    let precision = if predicted == 0 {
        0.0
    } else {
        tp as f64 / predicted as f64
    };
    let recall = if positives == 0 {
        0.0
    } else {
        tp as f64 / positives as f64
    };
    (precision, recall, f_beta(precision, recall))
}

/// F-measure with `beta^2 = 0.3` at 256 thresholds plus the adaptive form.
///
/// An empty-positive ground truth yields all-zero scores; the caller can
/// detect it through [`EvalPair::gt_positives`] (the directory report flags
/// and excludes such pairs).
pub fn f_measure(pair: &EvalPair) -> FMeasureResult {
    let mut f_curve = Vec::with_capacity(NUM_THRESHOLDS);
    let mut pr_curve = Vec::with_capacity(NUM_THRESHOLDS);
    if pair.gt_positives() == 0 {
        return FMeasureResult {
            f_adp: 0.0,
            f_mean: 0.0,
            f_max: 0.0,
            f_curve: vec![0.0; NUM_THRESHOLDS],
            pr_curve: vec![(0.0, 0.0); NUM_THRESHOLDS],
        };
    }
    for t in thresholds() {
        let (p, r, f) = prf_at(pair, t);
        pr_curve.push((p, r));
        f_curve.push(f);
    }
    let f_mean = f_curve.iter().sum::<f64>() / NUM_THRESHOLDS as f64;
    let f_max = f_curve.iter().cloned().fold(0.0, f64::max);
    let (_, _, f_adp) = prf_at(pair, pair.adaptive_threshold());
    FMeasureResult {
        f_adp,
        f_mean,
        f_max,
        f_curve,
        pr_curve,
    }
}
