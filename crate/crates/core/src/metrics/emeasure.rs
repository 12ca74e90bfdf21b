//! Enhanced-alignment measure.
//!
//! Per threshold, both the binarized prediction and the ground truth are
//! centered by their means; the alignment matrix
//! `xi = 2*phi_p*phi_g / (phi_p^2 + phi_g^2)` is enhanced as `(xi+1)^2/4`
//! and averaged over pixels. Degenerate ground truths use the standard
//! special cases: all-zero rewards the complement of the prediction,
//! all-one rewards the prediction itself.
//!
//! The pixel average divides by `H*W` (not the `H*W - 1` some historical
//! implementations use) so a perfect prediction scores exactly 1 at every
//! image size and the score stays in `[0, 1]`.

use super::{thresholds, EvalPair, NUM_THRESHOLDS};

const EPS: f64 = f64::EPSILON;

fn enhanced_alignment(pair: &EvalPair, t: f64) -> f64 {
    let gt = pair.ground_truth();
    let n = gt.len() as f64;
    let positives = pair.gt_positives() as f64;

    let mut sum = 0.0;
    if positives == 0.0 {
        for &p in pair.prediction().iter() {
            sum += 1.0 - f64::from(p >= t);
        }
    } else if positives == n {
        for &p in pair.prediction().iter() {
            sum += f64::from(p >= t);
        }
    } else {
        let fm_mean = pair
            .prediction()
            .iter()
            .map(|&p| f64::from(p >= t))
            .sum::<f64>()
            / n;
        let gt_mean = positives / n;
        for (&p, &g) in pair.prediction().iter().zip(gt.iter()) {
            let phi_p = f64::from(p >= t) - fm_mean;
            let phi_g = g - gt_mean;
            let xi = 2.0 * phi_p * phi_g / (phi_p * phi_p + phi_g * phi_g + EPS);
            let enhanced = (xi + 1.0) * (xi + 1.0) / 4.0;
            sum += enhanced;
        }
    }
    sum / n
}

/// `(adaptive, mean, max)` enhanced-alignment scores.
pub fn e_measure(pair: &EvalPair) -> (f64, f64, f64) {
    let mut mean = 0.0;
    let mut max = 0.0f64;
    for t in thresholds() {
        let e = enhanced_alignment(pair, t);
        mean += e;
        max = max.max(e);
    }
    mean /= NUM_THRESHOLDS as f64;
    let adp = enhanced_alignment(pair, pair.adaptive_threshold());
    (adp, mean, max)
}
