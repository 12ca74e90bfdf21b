//! Structure measure: `S = alpha * S_object + (1 - alpha) * S_region`
//! with `alpha = 0.5`.
//!
//! `S_object` compares foreground/background mean similarity; `S_region`
//! splits both maps into four quadrants about the ground-truth centroid and
//! scores an SSIM-style similarity per quadrant, weighted by quadrant area.
//! Degenerate ground truths follow the original conventions: all-zero gt
//! scores `1 - mean(prediction)`, all-one gt scores `mean(prediction)`.

use ndarray::{Array2, ArrayView2};

use super::EvalPair;

const EPS: f64 = f64::EPSILON;
const ALPHA: f64 = 0.5;

fn region_mean_std(pred: &Array2<f64>, gt: &Array2<f64>, in_fg: bool) -> (f64, f64, usize) {
    let mut values = Vec::new();
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        if (g == 1.0) == in_fg {
            values.push(if in_fg { p } else { 1.0 - p });
        }
    }
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n <= 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    (mean, std, n)
}

fn object_score(mean: f64, std: f64) -> f64 {
    2.0 * mean / (mean * mean + 1.0 + std + EPS)
}

fn s_object(pair: &EvalPair) -> f64 {
    let pred = pair.prediction();
    let gt = pair.ground_truth();
    let mu = gt.mean().unwrap_or(0.0);
    let (fg_mean, fg_std, _) = region_mean_std(pred, gt, true);
    let (bg_mean, bg_std, _) = region_mean_std(pred, gt, false);
    mu * object_score(fg_mean, fg_std) + (1.0 - mu) * object_score(bg_mean, bg_std)
}

/// Ground-truth centroid as 1-based rounded (row, col) counts, defining the
/// quadrant split; a mass-free gt splits at the map center.
fn centroid(gt: &Array2<f64>) -> (usize, usize) {
    let (rows, cols) = gt.dim();
    let total: f64 = gt.sum();
    if total == 0.0 {
        return (
            (rows as f64 / 2.0).round() as usize,
            (cols as f64 / 2.0).round() as usize,
        );
    }
    let mut row_acc = 0.0;
    let mut col_acc = 0.0;
    for ((i, j), &g) in gt.indexed_iter() {
        row_acc += g * (i + 1) as f64;
        col_acc += g * (j + 1) as f64;
    }
    (
        (row_acc / total).round() as usize,
        (col_acc / total).round() as usize,
    )
}

fn ssim_like(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> f64 {
    let n = pred.len();
    if n == 0 {
        // Zero-area quadrant carries zero weight; any finite value works.
        return 1.0;
    }
    let nf = n as f64;
    let x = pred.iter().sum::<f64>() / nf;
    let y = gt.iter().sum::<f64>() / nf;
    let denom = nf - 1.0 + EPS;
    let mut sigma_x2 = 0.0;
    let mut sigma_y2 = 0.0;
    let mut sigma_xy = 0.0;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        sigma_x2 += (p - x) * (p - x);
        sigma_y2 += (g - y) * (g - y);
        sigma_xy += (p - x) * (g - y);
    }
    sigma_x2 /= denom;
    sigma_y2 /= denom;
    sigma_xy /= denom;

    let alpha = 4.0 * x * y * sigma_xy;
    let beta = (x * x + y * y) * (sigma_x2 + sigma_y2);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pair: &EvalPair) -> f64 {
    let pred = pair.prediction();
    let gt = pair.ground_truth();
    let (rows, cols) = gt.dim();
    let (y, x) = centroid(gt);
    let area = (rows * cols) as f64;

    let w1 = (x * y) as f64 / area;
    let w2 = ((cols - x) * y) as f64 / area;
    let w3 = (x * (rows - y)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;

    let quad = |r0: usize, r1: usize, c0: usize, c1: usize| {
        let p = pred.slice(ndarray::s![r0..r1, c0..c1]);
        let g = gt.slice(ndarray::s![r0..r1, c0..c1]);
        ssim_like(p, g)
    };
    w1 * quad(0, y, 0, x)
        + w2 * quad(0, y, x, cols)
        + w3 * quad(y, rows, 0, x)
        + w4 * quad(y, rows, x, cols)
}

/// Structure measure of the prediction against a binary ground truth.
pub fn s_measure(pair: &EvalPair) -> f64 {
    let gt = pair.ground_truth();
    let n = gt.len() as f64;
    let positives = pair.gt_positives() as f64;
    let pred_mean = pair.prediction().mean().unwrap_or(0.0);
    if positives == 0.0 {
        1.0 - pred_mean
    } else if positives == n {
        pred_mean
    } else {
        (ALPHA * s_object(pair) + (1.0 - ALPHA) * s_region(pair)).max(0.0)
    }
}
