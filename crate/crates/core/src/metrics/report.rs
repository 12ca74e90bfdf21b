//! Directory-level evaluation: per-image scores, dataset means, optional
//! attribute grouping, and TSV serialization.
//!
//! Predictions and ground truths are matched by identical filename. Masks
//! are read as 8-bit grayscale PNG; predictions map to `[0, 1]` via `v/255`,
//! ground truth binarizes at `v >= 128`. Pairs whose ground truth has no
//! positive pixel are flagged, reported as zero, and excluded from means.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{evaluate, EvalPair, MetricsError, SaliencyScores, NUM_THRESHOLDS};
use crate::dataset::{parse_name, Attribute};

/// Dataset-mean scores (flagged pairs excluded).
#[derive(Debug, Clone, Default)]
pub struct MeanScores {
    pub mae: f64,
    pub f_adp: f64,
    pub f_mean: f64,
    pub f_max: f64,
    pub e_adp: f64,
    pub e_mean: f64,
    pub e_max: f64,
    pub s_measure: f64,
    pub f_weighted: f64,
    pub count: usize,
}

impl MeanScores {
    fn accumulate(&mut self, s: &SaliencyScores) {
        self.mae += s.mae;
        self.f_adp += s.f_adp;
        self.f_mean += s.f_mean;
        self.f_max += s.f_max;
        self.e_adp += s.e_adp;
        self.e_mean += s.e_mean;
        self.e_max += s.e_max;
        self.s_measure += s.s_measure;
        self.f_weighted += s.f_weighted;
        self.count += 1;
    }

    fn finalize(&mut self) {
        if self.count == 0 {
            return;
        }
        let n = self.count as f64;
        for v in [
            &mut self.mae,
            &mut self.f_adp,
            &mut self.f_mean,
            &mut self.f_max,
            &mut self.e_adp,
            &mut self.e_mean,
            &mut self.e_max,
            &mut self.s_measure,
            &mut self.f_weighted,
        ] {
            *v /= n;
        }
    }
}

#[derive(Debug, Clone)]
pub struct DirectoryReport {
    /// (filename, scores), sorted by filename.
    pub per_image: Vec<(String, SaliencyScores)>,
    pub mean: MeanScores,
    /// Mean (precision, recall, f) per threshold over unflagged pairs.
    pub mean_curves: Vec<(f64, f64, f64)>,
    /// Per attribute-letter means when grouping was requested and names parse.
    pub groups: BTreeMap<char, MeanScores>,
    /// Pairs flagged for empty-positive ground truth (excluded from means).
    pub empty_gt_count: usize,
    /// Files present in only one directory.
    pub unmatched: Vec<String>,
    /// Files skipped because they could not be loaded.
    pub skipped: Vec<String>,
}

fn list_pngs(dir: &Path) -> Result<BTreeMap<String, PathBuf>, MetricsError> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string(), path);
            }
        }
    }
    Ok(out)
}

fn load_gray(path: &Path) -> Option<Array2<f64>> {
    let img = image::open(path).ok()?.into_luma8();
    let (w, h) = img.dimensions();
    Some(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        f64::from(img.get_pixel(j as u32, i as u32).0[0])
    }))
}

/// Evaluate every filename common to both directories.
pub fn evaluate_directory(
    pred_dir: &Path,
    gt_dir: &Path,
    group_by: Option<Attribute>,
) -> Result<DirectoryReport, MetricsError> {
    let preds = list_pngs(pred_dir)?;
    let gts = list_pngs(gt_dir)?;

    let mut unmatched: Vec<String> = Vec::new();
    for name in preds.keys() {
        if !gts.contains_key(name) {
            unmatched.push(format!("{name} (prediction only)"));
        }
    }
    for name in gts.keys() {
        if !preds.contains_key(name) {
            unmatched.push(format!("{name} (ground truth only)"));
        }
    }

    let common: Vec<&String> = preds.keys().filter(|n| gts.contains_key(*n)).collect();
    if common.is_empty() {
        return Err(MetricsError::EmptyIntersection {
            pred_dir: pred_dir.display().to_string(),
            gt_dir: gt_dir.display().to_string(),
        });
    }

    let mut per_image = Vec::new();
    let mut skipped = Vec::new();
    let mut mean = MeanScores::default();
    let mut groups: BTreeMap<char, MeanScores> = BTreeMap::new();
    let mut curve_acc = vec![(0.0f64, 0.0f64, 0.0f64); NUM_THRESHOLDS];
    let mut empty_gt_count = 0usize;

    for name in common {
        let (Some(pred), Some(gt)) = (load_gray(&preds[name]), load_gray(&gts[name])) else {
            skipped.push(name.clone());
            continue;
        };
        if pred.dim() != gt.dim() {
            skipped.push(format!("{name} (size mismatch)"));
            continue;
        }
        let pair = EvalPair::new(pred.mapv(|v| v / 255.0), gt.mapv(|v| f64::from(v >= 128.0)))
            .expect("loader produces valid pairs");
        let scores = evaluate(&pair);
        if scores.empty_gt {
            empty_gt_count += 1;
        } else {
            mean.accumulate(&scores);
            for (acc, ((p, r), f)) in curve_acc
                .iter_mut()
                .zip(scores.pr_curve.iter().zip(scores.f_curve.iter()))
            {
                acc.0 += p;
                acc.1 += r;
                acc.2 += f;
            }
            if let Some(attr) = group_by {
                if let Ok(meta) = parse_name(name) {
                    groups.entry(meta.letter(attr)).or_default().accumulate(&scores);
                }
            }
        }
        per_image.push((name.clone(), scores));
    }

    let scored = mean.count.max(1) as f64;
    let mean_curves = curve_acc
        .into_iter()
        .map(|(p, r, f)| (p / scored, r / scored, f / scored))
        .collect();
    mean.finalize();
    for g in groups.values_mut() {
        g.finalize();
    }

    Ok(DirectoryReport {
        per_image,
        mean,
        mean_curves,
        groups,
        empty_gt_count,
        unmatched,
        skipped,
    })
}

const SCORE_COLUMNS: &str = "mae\tf_adp\tf_mean\tf_max\te_adp\te_mean\te_max\ts_measure\tf_weighted";

fn write_mean_row(out: &mut String, label: &str, m: &MeanScores) {
    let _ = writeln!(
        out,
        "{label}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
        m.mae, m.f_adp, m.f_mean, m.f_max, m.e_adp, m.e_mean, m.e_max, m.s_measure, m.f_weighted,
        m.count
    );
}

impl DirectoryReport {
    /// Per-image and aggregate scores, tab-separated, fixed column order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "name\t{SCORE_COLUMNS}\tempty_gt");
        for (name, s) in &self.per_image {
            let _ = writeln!(
                out,
                "{name}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                s.mae,
                s.f_adp,
                s.f_mean,
                s.f_max,
                s.e_adp,
                s.e_mean,
                s.e_max,
                s.s_measure,
                s.f_weighted,
                u8::from(s.empty_gt)
            );
        }
        let _ = writeln!(out, "# aggregate (empty-gt pairs excluded)");
        let _ = writeln!(out, "group\t{SCORE_COLUMNS}\tcount");
        write_mean_row(&mut out, "all", &self.mean);
        for (letter, m) in &self.groups {
            write_mean_row(&mut out, &letter.to_string(), m);
        }
        if self.empty_gt_count > 0 {
            let _ = writeln!(out, "# excluded empty-gt pairs: {}", self.empty_gt_count);
        }
        out
    }

    /// Mean precision/recall/F per threshold, tab-separated.
    pub fn curves_tsv(&self) -> String {
        let mut out = String::from("threshold\tprecision\trecall\tf_measure\n");
        for (i, (p, r, f)) in self.mean_curves.iter().enumerate() {
            let t = i as f64 / (NUM_THRESHOLDS - 1) as f64;
            let _ = writeln!(out, "{t:.6}\t{p:.6}\t{r:.6}\t{f:.6}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::GrayImage;

    fn save_gray(path: &Path, values: &Array2<f64>) {
        let (h, w) = values.dim();
        let mut img = GrayImage::new(w as u32, h as u32);
        for ((i, j), &v) in values.indexed_iter() {
            img.put_pixel(j as u32, i as u32, image::Luma([v as u8]));
        }
        img.save(path).unwrap();
    }

    #[test]
    fn identical_directories_score_perfectly() {
        let dir = tempfile::tempdir().unwrap();
        let pred_dir = dir.path().join("pred");
        let gt_dir = dir.path().join("gt");
        std::fs::create_dir_all(&pred_dir).unwrap();
        std::fs::create_dir_all(&gt_dir).unwrap();
        for k in 0..3 {
            let mask = Array2::from_shape_fn((16, 16), |(i, j)| {
                if (4..12).contains(&i) && (4..=(4 + k)).contains(&j) {
                    255.0
                } else {
                    0.0
                }
            });
            let name = format!("N_V_F_S_{k:05}.png");
            save_gray(&pred_dir.join(&name), &mask);
            save_gray(&gt_dir.join(&name), &mask);
        }
        let report = evaluate_directory(&pred_dir, &gt_dir, Some(Attribute::Category)).unwrap();
        assert_eq!(report.per_image.len(), 3);
        assert_eq!(report.empty_gt_count, 0);
        assert!(report.mean.mae < 1e-12);
        assert!((report.mean.f_max - 1.0).abs() < 1e-9);
        assert!((report.mean.s_measure - 1.0).abs() < 1e-9);
        assert!((report.mean.e_max - 1.0).abs() < 1e-9);
        assert!(report.groups.contains_key(&'V'));
        let tsv = report.to_tsv();
        assert!(tsv.starts_with("name\tmae"));
        assert_eq!(report.curves_tsv().lines().count(), NUM_THRESHOLDS + 1);
    }

    #[test]
    fn empty_intersection_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let pred_dir = dir.path().join("pred");
        let gt_dir = dir.path().join("gt");
        std::fs::create_dir_all(&pred_dir).unwrap();
        std::fs::create_dir_all(&gt_dir).unwrap();
        save_gray(&pred_dir.join("a.png"), &Array2::zeros((4, 4)));
        save_gray(&gt_dir.join("b.png"), &Array2::zeros((4, 4)));
        assert!(matches!(
            evaluate_directory(&pred_dir, &gt_dir, None),
            Err(MetricsError::EmptyIntersection { .. })
        ));
    }

    #[test]
    fn aggregate_mae_matches_hand_average() {
        let dir = tempfile::tempdir().unwrap();
        let pred_dir = dir.path().join("pred");
        let gt_dir = dir.path().join("gt");
        std::fs::create_dir_all(&pred_dir).unwrap();
        std::fs::create_dir_all(&gt_dir).unwrap();
        // Three pairs with hand-computed MAEs. gt: top half foreground.
        let gt = Array2::from_shape_fn((4, 4), |(i, _)| if i < 2 { 255.0 } else { 0.0 });
        // Pair 0: perfect -> 0. Pair 1: one flipped pixel -> 1/16.
        // Pair 2: inverted -> 1.
        let preds = [
            gt.clone(),
            {
                let mut p = gt.clone();
                p[[0, 0]] = 0.0;
                p
            },
            gt.mapv(|v| 255.0 - v),
        ];
        for (k, p) in preds.iter().enumerate() {
            let name = format!("img{k}.png");
            save_gray(&pred_dir.join(&name), p);
            save_gray(&gt_dir.join(&name), &gt);
        }
        let report = evaluate_directory(&pred_dir, &gt_dir, None).unwrap();
        let expected = (0.0 + 1.0 / 16.0 + 1.0) / 3.0;
        assert!((report.mean.mae - expected).abs() < 1e-12);
    }

    #[test]
    fn unmatched_and_empty_gt_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let pred_dir = dir.path().join("pred");
        let gt_dir = dir.path().join("gt");
        std::fs::create_dir_all(&pred_dir).unwrap();
        std::fs::create_dir_all(&gt_dir).unwrap();
        let fg = Array2::from_shape_fn((4, 4), |(i, _)| if i == 0 { 255.0 } else { 0.0 });
        let zero = Array2::zeros((4, 4));
        save_gray(&pred_dir.join("a.png"), &fg);
        save_gray(&gt_dir.join("a.png"), &fg);
        save_gray(&pred_dir.join("b.png"), &fg);
        save_gray(&gt_dir.join("b.png"), &zero); // empty gt -> flagged
        save_gray(&pred_dir.join("only_pred.png"), &fg);
        save_gray(&gt_dir.join("only_gt.png"), &fg);
        let report = evaluate_directory(&pred_dir, &gt_dir, None).unwrap();
        assert_eq!(report.empty_gt_count, 1);
        assert_eq!(report.unmatched.len(), 2);
        assert_eq!(report.mean.count, 1);
        assert_eq!(report.per_image.len(), 2);
    }
}
