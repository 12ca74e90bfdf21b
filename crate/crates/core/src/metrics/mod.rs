//! Salient-object-detection evaluation metrics.
//!
//! Implements the standard suite used by SOD benchmarks: mean absolute
//! error, F-measure (adaptive / mean / max over 256 thresholds, beta^2 =
//! 0.3), S-measure (region + object structural similarity), E-measure
//! (enhanced alignment, adaptive / mean / max), the distance-weighted
//! F-measure, and precision-recall / F-vs-threshold curves.
//!
//! Conventions (community defaults, documented once here):
//! - 256 binarization thresholds `{0, 1/255, ..., 255/255}`, predicted
//!   foreground is `pred >= t`.
//! - Adaptive threshold `min(2 * mean(pred), 1)`.
//! - Ground truth with no positive pixel is flagged; threshold metrics are
//!   reported as 0 for such pairs and excluded from directory means.

mod emeasure;
mod fmeasure;
pub mod report;
mod smeasure;
mod weighted;

pub use emeasure::e_measure;
pub use fmeasure::{f_measure, FMeasureResult};
pub use report::{evaluate_directory, DirectoryReport};
pub use smeasure::s_measure;
pub use weighted::weighted_f;

use ndarray::Array2;
use thiserror::Error;

/// Number of binarization thresholds.
pub const NUM_THRESHOLDS: usize = 256;
/// Precision/recall trade-off constant of the F-measure.
pub const F_BETA_SQUARED: f64 = 0.3;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction is {pred_h}x{pred_w} but ground truth is {gt_h}x{gt_w}")]
    ShapeMismatch {
        pred_h: usize,
        pred_w: usize,
        gt_h: usize,
        gt_w: usize,
    },
    #[error("ground truth must be strictly binary, found {0}")]
    NonBinaryGroundTruth(f64),
    #[error("prediction contains a non-finite value")]
    NonFinitePrediction,
    #[error("no filenames shared between {pred_dir} and {gt_dir}")]
    EmptyIntersection { pred_dir: String, gt_dir: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One prediction / ground-truth pair. The prediction is clamped to
/// `[0, 1]` at construction; the ground truth must be strictly binary.
#[derive(Debug, Clone)]
pub struct EvalPair {
    prediction: Array2<f64>,
    ground_truth: Array2<f64>,
}

impl EvalPair {
    pub fn new(prediction: Array2<f64>, ground_truth: Array2<f64>) -> Result<Self, MetricsError> {
        if prediction.dim() != ground_truth.dim() {
            let (ph, pw) = prediction.dim();
            let (gh, gw) = ground_truth.dim();
            return Err(MetricsError::ShapeMismatch {
                pred_h: ph,
                pred_w: pw,
                gt_h: gh,
                gt_w: gw,
            });
        }
        if prediction.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinitePrediction);
        }
        if let Some(&bad) = ground_truth.iter().find(|&&g| g != 0.0 && g != 1.0) {
            return Err(MetricsError::NonBinaryGroundTruth(bad));
        }
        Ok(Self {
            prediction: prediction.mapv(|v| v.clamp(0.0, 1.0)),
            ground_truth,
        })
    }

    pub fn prediction(&self) -> &Array2<f64> {
        &self.prediction
    }

    pub fn ground_truth(&self) -> &Array2<f64> {
        &self.ground_truth
    }

    /// Number of foreground pixels in the ground truth.
    pub fn gt_positives(&self) -> usize {
        self.ground_truth.iter().filter(|&&g| g == 1.0).count()
    }

    /// Adaptive binarization threshold, `min(2 * mean(prediction), 1)`.
    pub fn adaptive_threshold(&self) -> f64 {
        (2.0 * self.prediction.mean().unwrap_or(0.0)).min(1.0)
    }
}

/// The eight-score evaluation record for one pair plus curve samples.
#[derive(Debug, Clone)]
pub struct SaliencyScores {
    pub mae: f64,
    pub f_adp: f64,
    pub f_mean: f64,
    pub f_max: f64,
    pub e_adp: f64,
    pub e_mean: f64,
    pub e_max: f64,
    pub s_measure: f64,
    pub f_weighted: f64,
    /// (precision, recall) at each of the 256 thresholds.
    pub pr_curve: Vec<(f64, f64)>,
    /// F-measure at each of the 256 thresholds.
    pub f_curve: Vec<f64>,
    /// Ground truth had no positive pixel; threshold scores were zeroed.
    pub empty_gt: bool,
}

/// Mean over pixels of `|prediction - ground_truth|`.
pub fn mae(pair: &EvalPair) -> f64 {
    let n = pair.prediction.len() as f64;
    pair.prediction
        .iter()
        .zip(pair.ground_truth.iter())
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / n
}

/// The binarization threshold grid `{0, 1/255, ..., 255/255}`.
pub fn thresholds() -> impl Iterator<Item = f64> {
    (0..NUM_THRESHOLDS).map(|i| i as f64 / (NUM_THRESHOLDS - 1) as f64)
}

/// Run the full metric suite on one pair.
pub fn evaluate(pair: &EvalPair) -> SaliencyScores {
    let f = f_measure(pair);
    let (e_adp, e_mean, e_max) = e_measure(pair);
    SaliencyScores {
        mae: mae(pair),
        f_adp: f.f_adp,
        f_mean: f.f_mean,
        f_max: f.f_max,
        e_adp,
        e_mean,
        e_max,
        s_measure: s_measure(pair),
        f_weighted: weighted_f(pair),
        pr_curve: f.pr_curve,
        f_curve: f.f_curve,
        empty_gt: pair.gt_positives() == 0,
    }
}
