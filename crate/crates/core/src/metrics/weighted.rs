//! Distance-weighted F-measure.
//!
//! Errors are weighted by pixel dependency (a 7x7 Gaussian, sigma 5, over
//! an error map whose background entries borrow the error of the nearest
//! foreground pixel) and pixel importance (an exponential decay of base
//! `ln(0.5)/5` in the distance from the foreground). Weighted precision and
//! recall combine with beta^2 = 1.

use ndarray::Array2;

use super::EvalPair;

const EPS: f64 = f64::EPSILON;
const KERNEL_SIZE: usize = 7;
const KERNEL_SIGMA: f64 = 5.0;
const DECAY_SCALE: f64 = 5.0;

/// Exact Euclidean distance to the nearest foreground pixel plus that
/// pixel's coordinates. Ties pick the smallest row-major flat index.
fn distance_to_foreground(gt: &Array2<f64>) -> (Array2<f64>, Array2<(usize, usize)>) {
    let (rows, cols) = gt.dim();
    let fg: Vec<(usize, usize)> = gt
        .indexed_iter()
        .filter(|(_, &g)| g == 1.0)
        .map(|((i, j), _)| (i, j))
        .collect();
    let mut dist = Array2::from_elem((rows, cols), f64::INFINITY);
    let mut nearest = Array2::from_elem((rows, cols), (0usize, 0usize));
    for i in 0..rows {
        for j in 0..cols {
            let mut best = u64::MAX;
            let mut best_at = (0, 0);
            for &(fi, fj) in &fg {
                let di = fi.abs_diff(i) as u64;
                let dj = fj.abs_diff(j) as u64;
                let d2 = di * di + dj * dj;
                if d2 < best {
                    best = d2;
                    best_at = (fi, fj);
                }
            }
            dist[[i, j]] = (best as f64).sqrt();
            nearest[[i, j]] = best_at;
        }
    }
    (dist, nearest)
}

fn gaussian_kernel(size: usize, sigma: f64) -> Array2<f64> {
    let half = (size / 2) as f64;
    let mut k = Array2::from_shape_fn((size, size), |(u, v)| {
        let du = u as f64 - half;
        let dv = v as f64 - half;
        (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp()
    });
    let total = k.sum();
    k.mapv_inplace(|v| v / total);
    k
}

/// Correlation with zero padding, output size preserved.
fn correlate(x: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = x.dim();
    let ks = kernel.nrows();
    let pad = ks / 2;
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for u in 0..ks {
                let si = i as isize + u as isize - pad as isize;
                if si < 0 || si >= rows as isize {
                    continue;
                }
                for v in 0..ks {
                    let sj = j as isize + v as isize - pad as isize;
                    if sj < 0 || sj >= cols as isize {
                        continue;
                    }
                    acc += kernel[[u, v]] * x[[si as usize, sj as usize]];
                }
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Weighted F-measure; 0 (flagged by the caller) when the ground truth has
/// no positive pixel.
pub fn weighted_f(pair: &EvalPair) -> f64 {
    if pair.gt_positives() == 0 {
        return 0.0;
    }
    let pred = pair.prediction();
    let gt = pair.ground_truth();
    let (dist, nearest) = distance_to_foreground(gt);

    let error = Array2::from_shape_fn(gt.dim(), |(i, j)| (pred[[i, j]] - gt[[i, j]]).abs());
    // Background pixels borrow the error of their nearest foreground pixel.
    let mut et = error.clone();
    for ((i, j), &g) in gt.indexed_iter() {
        if g == 0.0 {
            let (fi, fj) = nearest[[i, j]];
            et[[i, j]] = error[[fi, fj]];
        }
    }
    let ea = correlate(&et, &gaussian_kernel(KERNEL_SIZE, KERNEL_SIGMA));
    let mut min_e_ea = error.clone();
    for ((i, j), &g) in gt.indexed_iter() {
        if g == 1.0 && ea[[i, j]] < error[[i, j]] {
            min_e_ea[[i, j]] = ea[[i, j]];
        }
    }
    // Importance: foreground weight 1, background decays away from it.
    let mut ew = min_e_ea;
    for ((i, j), &g) in gt.indexed_iter() {
        if g == 0.0 {
            let b = 2.0 - (0.5f64.ln() / DECAY_SCALE * dist[[i, j]]).exp();
            ew[[i, j]] *= b;
        }
    }

    let gt_sum: f64 = gt.sum();
    let mut ew_fg = 0.0;
    let mut ew_bg = 0.0;
    let mut fg_count = 0usize;
    for ((i, j), &g) in gt.indexed_iter() {
        if g == 1.0 {
            ew_fg += ew[[i, j]];
            fg_count += 1;
        } else {
            ew_bg += ew[[i, j]];
        }
    }
    let tp_w = gt_sum - ew_fg;
    let fp_w = ew_bg;
    let recall = 1.0 - ew_fg / fg_count as f64;
    let precision = tp_w / (EPS + tp_w + fp_w);
    2.0 * recall * precision / (EPS + recall + precision)
}
