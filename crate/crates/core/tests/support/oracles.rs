//! Literal scalar-loop transcriptions of the standard saliency metric
//! definitions. Shared by the oracle-equivalence and acceptance suites.
//!
//! Conventions mirrored from the library (documented in `metrics`):
//! 256 thresholds `i/255` with `>=` binarization, adaptive threshold
//! `min(2*mean, 1)`, E-measure normalized by the pixel count, weighted-F
//! distance ties broken by the smallest row-major index.

#![allow(dead_code)]

use ndarray::Array2;

const EPS: f64 = f64::EPSILON;

pub type Grid = Vec<Vec<f64>>;

pub fn to_grid(a: &Array2<f64>) -> Grid {
    let (h, w) = a.dim();
    (0..h).map(|i| (0..w).map(|j| a[[i, j]]).collect()).collect()
}

pub fn grid_mean(g: &Grid) -> f64 {
    let mut sum = 0.0;
    let mut count = 0.0;
    for row in g {
        for &v in row {
            sum += v;
            count += 1.0;
        }
    }
    sum / count
}

pub fn oracle_mae(pred: &Grid, gt: &Grid) -> f64 {
    let mut acc = 0.0;
    let mut n = 0.0;
    for (pr, gr) in pred.iter().zip(gt.iter()) {
        for (&p, &g) in pr.iter().zip(gr.iter()) {
            acc += (p - g).abs();
            n += 1.0;
        }
    }
    acc / n
}

pub fn oracle_prf(pred: &Grid, gt: &Grid, t: f64) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
    for (pr, gr) in pred.iter().zip(gt.iter()) {
        for (&p, &g) in pr.iter().zip(gr.iter()) {
            let b = p >= t;
            if b && g == 1.0 {
                tp += 1.0;
            } else if b {
                fp += 1.0;
            } else if g == 1.0 {
                fnn += 1.0;
            }
        }
    }
    let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
    let recall = if tp + fnn == 0.0 { 0.0 } else { tp / (tp + fnn) };
    let beta2 = 0.3;
    let denom = beta2 * precision + recall;
    let f = if denom == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / denom
    };
    (precision, recall, f)
}

pub fn oracle_f(pred: &Grid, gt: &Grid) -> (f64, f64, f64) {
    if !gt.iter().flatten().any(|&g| g == 1.0) {
        return (0.0, 0.0, 0.0);
    }
    let mut fs = Vec::with_capacity(256);
    for i in 0..256usize {
        let t = i as f64 / 255.0;
        fs.push(oracle_prf(pred, gt, t).2);
    }
    let f_mean = fs.iter().sum::<f64>() / 256.0;
    let f_max = fs.iter().cloned().fold(0.0, f64::max);
    let adp = (2.0 * grid_mean(pred)).min(1.0);
    let f_adp = oracle_prf(pred, gt, adp).2;
    (f_adp, f_mean, f_max)
}

pub fn oracle_e_at(pred: &Grid, gt: &Grid, t: f64) -> f64 {
    let h = gt.len();
    let w = gt[0].len();
    let n = (h * w) as f64;
    let gt_sum: f64 = gt.iter().flatten().sum();
    let mut sum = 0.0;
    if gt_sum == 0.0 {
        for row in pred {
            for &p in row {
                sum += 1.0 - f64::from(p >= t);
            }
        }
    } else if gt_sum == n {
        for row in pred {
            for &p in row {
                sum += f64::from(p >= t);
            }
        }
    } else {
        let mut fm_mean = 0.0;
        for row in pred {
            for &p in row {
                fm_mean += f64::from(p >= t);
            }
        }
        fm_mean /= n;
        let gt_mean = gt_sum / n;
        for (pr, gr) in pred.iter().zip(gt.iter()) {
            for (&p, &g) in pr.iter().zip(gr.iter()) {
                let phi_fm = f64::from(p >= t) - fm_mean;
                let phi_gt = g - gt_mean;
                let align = 2.0 * phi_fm * phi_gt / (phi_fm * phi_fm + phi_gt * phi_gt + EPS);
                sum += (align + 1.0) * (align + 1.0) / 4.0;
            }
        }
    }
    sum / n
}

pub fn oracle_e(pred: &Grid, gt: &Grid) -> (f64, f64, f64) {
    let mut es = Vec::with_capacity(256);
    for i in 0..256usize {
        es.push(oracle_e_at(pred, gt, i as f64 / 255.0));
    }
    let mean = es.iter().sum::<f64>() / 256.0;
    let max = es.iter().cloned().fold(0.0, f64::max);
    let adp = oracle_e_at(pred, gt, (2.0 * grid_mean(pred)).min(1.0));
    (adp, mean, max)
}

pub fn oracle_s(pred: &Grid, gt: &Grid) -> f64 {
    let h = gt.len();
    let w = gt[0].len();
    let n = (h * w) as f64;
    let gt_sum: f64 = gt.iter().flatten().sum();
    if gt_sum == 0.0 {
        return 1.0 - grid_mean(pred);
    }
    if gt_sum == n {
        return grid_mean(pred);
    }

    // Object term: fg/bg similarity of means.
    let object = |values: &[f64]| {
        let count = values.len() as f64;
        let x = values.iter().sum::<f64>() / count;
        let std = if values.len() <= 1 {
            0.0
        } else {
            (values.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / (count - 1.0)).sqrt()
        };
        2.0 * x / (x * x + 1.0 + std + EPS)
    };
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (pr, gr) in pred.iter().zip(gt.iter()) {
        for (&p, &g) in pr.iter().zip(gr.iter()) {
            if g == 1.0 {
                fg.push(p);
            } else {
                bg.push(1.0 - p);
            }
        }
    }
    let mu = gt_sum / n;
    let s_object = mu * object(&fg) + (1.0 - mu) * object(&bg);

    // Region term: 4 quadrants about the (1-based, rounded) centroid.
    let mut row_acc = 0.0;
    let mut col_acc = 0.0;
    for (i, gr) in gt.iter().enumerate() {
        for (j, &g) in gr.iter().enumerate() {
            row_acc += g * (i + 1) as f64;
            col_acc += g * (j + 1) as f64;
        }
    }
    let cy = (row_acc / gt_sum).round() as usize;
    let cx = (col_acc / gt_sum).round() as usize;

    let ssim = |r0: usize, r1: usize, c0: usize, c1: usize| -> f64 {
        let count = ((r1 - r0) * (c1 - c0)) as f64;
        if count == 0.0 {
            return 1.0;
        }
        let mut x = 0.0;
        let mut y = 0.0;
        for i in r0..r1 {
            for j in c0..c1 {
                x += pred[i][j];
                y += gt[i][j];
            }
        }
        x /= count;
        y /= count;
        let denom = count - 1.0 + EPS;
        let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
        for i in r0..r1 {
            for j in c0..c1 {
                sx += (pred[i][j] - x) * (pred[i][j] - x);
                sy += (gt[i][j] - y) * (gt[i][j] - y);
                sxy += (pred[i][j] - x) * (gt[i][j] - y);
            }
        }
        sx /= denom;
        sy /= denom;
        sxy /= denom;
        let alpha = 4.0 * x * y * sxy;
        let beta = (x * x + y * y) * (sx + sy);
        if alpha != 0.0 {
            alpha / (beta + EPS)
        } else if beta == 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let area = n;
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let s_region = w1 * ssim(0, cy, 0, cx)
        + w2 * ssim(0, cy, cx, w)
        + w3 * ssim(cy, h, 0, cx)
        + w4 * ssim(cy, h, cx, w);

    (0.5 * s_object + 0.5 * s_region).max(0.0)
}

pub fn oracle_weighted_f(pred: &Grid, gt: &Grid) -> f64 {
    let h = gt.len();
    let w = gt[0].len();
    if !gt.iter().flatten().any(|&g| g == 1.0) {
        return 0.0;
    }

    // Exact nearest-foreground search, ties to the smallest flat index.
    let mut dist = vec![vec![0.0f64; w]; h];
    let mut nearest = vec![vec![(0usize, 0usize); w]; h];
    for i in 0..h {
        for j in 0..w {
            let mut best = f64::INFINITY;
            let mut at = (0, 0);
            for (fi, row) in gt.iter().enumerate() {
                for (fj, &g) in row.iter().enumerate() {
                    if g == 1.0 {
                        let d = (((fi as f64) - (i as f64)).powi(2)
                            + ((fj as f64) - (j as f64)).powi(2))
                        .sqrt();
                        if d < best {
                            best = d;
                            at = (fi, fj);
                        }
                    }
                }
            }
            dist[i][j] = best;
            nearest[i][j] = at;
        }
    }

    let mut error = vec![vec![0.0f64; w]; h];
    for i in 0..h {
        for j in 0..w {
            error[i][j] = (pred[i][j] - gt[i][j]).abs();
        }
    }
    let mut et = error.clone();
    for i in 0..h {
        for j in 0..w {
            if gt[i][j] == 0.0 {
                let (fi, fj) = nearest[i][j];
                et[i][j] = error[fi][fj];
            }
        }
    }

    // 7x7 Gaussian (sigma 5), normalized; zero-padded correlation.
    let mut kernel = vec![vec![0.0f64; 7]; 7];
    let mut ksum = 0.0;
    for (u, row) in kernel.iter_mut().enumerate() {
        for (v, cell) in row.iter_mut().enumerate() {
            let du = u as f64 - 3.0;
            let dv = v as f64 - 3.0;
            *cell = (-(du * du + dv * dv) / 50.0).exp();
            ksum += *cell;
        }
    }
    for row in kernel.iter_mut() {
        for cell in row.iter_mut() {
            *cell /= ksum;
        }
    }
    let mut ea = vec![vec![0.0f64; w]; h];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (u, krow) in kernel.iter().enumerate() {
                for (v, &kv) in krow.iter().enumerate() {
                    let si = i as isize + u as isize - 3;
                    let sj = j as isize + v as isize - 3;
                    if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                        acc += kv * et[si as usize][sj as usize];
                    }
                }
            }
            ea[i][j] = acc;
        }
    }

    let mut min_e_ea = error.clone();
    for i in 0..h {
        for j in 0..w {
            if gt[i][j] == 1.0 && ea[i][j] < error[i][j] {
                min_e_ea[i][j] = ea[i][j];
            }
        }
    }
    let mut ew = min_e_ea;
    for i in 0..h {
        for j in 0..w {
            if gt[i][j] == 0.0 {
                ew[i][j] *= 2.0 - (0.5f64.ln() / 5.0 * dist[i][j]).exp();
            }
        }
    }

    let mut gt_total = 0.0;
    let mut ew_fg = 0.0;
    let mut ew_bg = 0.0;
    let mut fg_count = 0.0;
    for i in 0..h {
        for j in 0..w {
            if gt[i][j] == 1.0 {
                gt_total += 1.0;
                ew_fg += ew[i][j];
                fg_count += 1.0;
            } else {
                ew_bg += ew[i][j];
            }
        }
    }
    let tpw = gt_total - ew_fg;
    let fpw = ew_bg;
    let recall = 1.0 - ew_fg / fg_count;
    let precision = tpw / (EPS + tpw + fpw);
    2.0 * recall * precision / (EPS + recall + precision)
}

