//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measured numbers (run with `--nocapture` to see them).
//!
//! Criteria and tolerances are pinned in code here; every numeric
//! threshold below is part of the library's contract.

use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::Array2;
use tramba_core::dataset::{
    format_name, parse_name, size_class_of, stratified_split, synth_dataset, Category, Emergency,
    SampleMeta, SizeClass, Weather,
};
use tramba_core::freq::{dct2, freq_split, idct2, SpectrumMask};
use tramba_core::metrics::{e_measure, f_measure, mae, s_measure, weighted_f, EvalPair};
use tramba_core::network::{gradcheck, synthetic_batch, train_toy, Tramba, TrambaConfig};
use tramba_core::rng::SeededRng;
use tramba_core::scan::{
    baseline_scan, cross_scan, dilation_scan, helix_scan, window_scan, BaselineKind, GridShape,
    ScanSet,
};
use tramba_core::ssm::{ssm_convolutional, ssm_recurrent, zoh_discretize, SsmParams, ZohMode};
use tramba_core::FeatureMap;

#[path = "support/oracles.rs"]
mod oracles;

fn pass(criterion: usize, detail: String) {
    println!("criterion {criterion}: PASS - {detail}");
}

fn sweep_sets(mut visit: impl FnMut(&str, ScanSet)) {
    for h in 1..=16usize {
        for w in 1..=16usize {
            let shape = GridShape::new(h, w).unwrap();
            visit("cross", cross_scan(shape));
            for s in [1, 2, 3, 5] {
                visit("window", window_scan(shape, s).unwrap());
            }
            for r in [1, 2, 3] {
                visit("dilation", dilation_scan(shape, r).unwrap());
            }
            visit("helix", helix_scan(shape));
            visit(
                "diagonal",
                baseline_scan(shape, BaselineKind::Diagonal).unwrap(),
            );
            visit(
                "spiral",
                baseline_scan(shape, BaselineKind::CentralSpiral).unwrap(),
            );
            if h.is_power_of_two() && w.is_power_of_two() {
                visit(
                    "hilbert",
                    baseline_scan(shape, BaselineKind::Hilbert).unwrap(),
                );
            }
        }
    }
}

#[test]
fn criterion_01_scan_bijectivity_sweep() {
    let start = Instant::now();
    let mut orders = 0usize;
    sweep_sets(|kind, set| {
        for order in set.directions() {
            let n = order.len();
            let mut seen = vec![false; n];
            for &f in order.order() {
                assert!(f < n && !seen[f], "{kind}: not a permutation");
                seen[f] = true;
            }
            for (k, &f) in order.order().iter().enumerate() {
                assert_eq!(order.inverse()[f], k, "{kind}: inverse mismatch");
            }
            orders += 1;
        }
    });
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "sweep took {elapsed:?}");
    pass(
        1,
        format!("{orders} orders across H,W in [1,16] are bijections with exact inverses ({elapsed:?})"),
    );
}

#[test]
fn criterion_02_reversal_law() {
    let mut orders = 0usize;
    sweep_sets(|kind, set| {
        let rev_a: Vec<usize> = set.forward_a.order().iter().rev().copied().collect();
        assert_eq!(set.backward_a.order(), rev_a.as_slice(), "{kind}");
        let rev_b: Vec<usize> = set.forward_b.order().iter().rev().copied().collect();
        assert_eq!(set.backward_b.order(), rev_b.as_slice(), "{kind}");
        orders += 2;
    });
    pass(
        2,
        format!("{orders} backward orders equal exact reversals of their forwards"),
    );
}

#[test]
fn criterion_03_degeneracy_laws() {
    let mut checked = 0usize;
    for h in 1..=16usize {
        for w in 1..=16usize {
            let shape = GridShape::new(h, w).unwrap();
            let raster = cross_scan(shape);
            let unit_window = window_scan(shape, 1).unwrap();
            assert_eq!(unit_window.forward_a.order(), raster.forward_a.order());
            let unit_rate = dilation_scan(shape, 1).unwrap();
            assert_eq!(unit_rate.forward_a.order(), raster.forward_a.order());
            checked += 1;
        }
    }
    pass(
        3,
        format!("window S=1 and dilation R=1 equal the raster exactly on {checked} shapes"),
    );
}

#[test]
fn criterion_04_ssm_equivalence() {
    let start = Instant::now();
    let mut rng = SeededRng::new(404);
    let mut max_dev = 0.0f64;
    for _ in 0..200 {
        let d_state = 1 + rng.below(8);
        let len = 1 + rng.below(64);
        let params = SsmParams::new(
            (0..d_state).map(|_| -rng.uniform_in(0.05, 3.0)).collect(),
            (0..d_state).map(|_| rng.normal()).collect(),
            (0..d_state).map(|_| rng.normal()).collect(),
            rng.uniform_in(0.01, 1.5),
        )
        .unwrap();
        let discrete = zoh_discretize(&params, ZohMode::Exact);
        let x: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
        let yr = ssm_recurrent(&discrete, &x);
        let yc = ssm_convolutional(&discrete, &x);
        for (a, b) in yr.iter().zip(yc.iter()) {
            max_dev = max_dev.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    assert!(max_dev < 1e-10, "max deviation {max_dev}");
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    pass(
        4,
        format!("recurrent and convolutional forms agree on 200 instances, max deviation {max_dev:.3e} ({elapsed:?})"),
    );
}

#[test]
fn criterion_05_dct_suite() {
    let mut rng = SeededRng::new(505);
    let mut max_round = 0.0f64;
    let mut max_parseval = 0.0f64;
    let mut max_split = 0.0f64;
    for trial in 0..100 {
        let h = 1 + rng.below(32);
        let w = 1 + rng.below(32);
        let x = FeatureMap::from_shape_fn((1, 1, h, w), |_| rng.normal());
        let spec = dct2(&x);
        let back = idct2(&spec);
        for (a, b) in back.iter().zip(x.iter()) {
            max_round = max_round.max((a - b).abs());
        }
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let es: f64 = spec.iter().map(|v| v * v).sum();
        max_parseval = max_parseval.max((ex - es).abs());
        let cutoff = [0.25, 0.5, 0.75][trial % 3];
        let mask = SpectrumMask::new(h, w, cutoff).unwrap();
        let (low, high) = freq_split(&x, &mask).unwrap();
        for ((l, hi), v) in low.iter().zip(high.iter()).zip(x.iter()) {
            max_split = max_split.max((l + hi - v).abs());
        }
    }
    assert!(max_round < 1e-9, "round trip {max_round}");
    assert!(max_parseval < 1e-9, "parseval {max_parseval}");
    assert!(max_split < 1e-9, "split {max_split}");
    pass(
        5,
        format!("round trip {max_round:.3e}, Parseval {max_parseval:.3e}, additive split {max_split:.3e} on 100 maps"),
    );
}

#[test]
fn criterion_06_gradient_check() {
    let start = Instant::now();
    let report = gradcheck(&TrambaConfig::tiny(), 5).unwrap();
    let elapsed = start.elapsed();
    assert!(
        report.max_rel_error < 1e-4,
        "max relative error {}",
        report.max_rel_error
    );
    assert!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    let worst = report.worst().unwrap();
    pass(
        6,
        format!(
            "analytic vs finite-difference over {} parameter groups: max rel error {:.3e} (worst: {}) ({elapsed:?})",
            report.groups.len(),
            report.max_rel_error,
            worst.name
        ),
    );
}

#[test]
fn criterion_07_overfit_oracle() {
    let start = Instant::now();
    let config = TrambaConfig::default();
    let mut model = Tramba::new(config.clone()).unwrap();
    let (images, masks) = synthetic_batch(&config, 4, 7);
    let trace = train_toy(&mut model, &images, &masks, 200, 0.004, true).unwrap();
    let elapsed = start.elapsed();
    let (first, last) = (trace[0], *trace.last().unwrap());
    assert!(trace.iter().all(|l| l.is_finite()));
    assert!(
        last < 0.2 * first,
        "final {last} not below 0.2 x initial {first}"
    );
    assert!(elapsed < Duration::from_secs(600), "took {elapsed:?}");
    pass(
        7,
        format!(
            "200 GD steps on 4 synthetic 64x64 images: loss {first:.4} -> {last:.4} (ratio {:.4}) ({elapsed:?})",
            last / first
        ),
    );
}

#[test]
fn criterion_08_metric_oracle_equivalence() {
    let mut rng = SeededRng::new(808);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let pred = Array2::from_shape_fn((8, 8), |_| rng.uniform());
        let gt = Array2::from_shape_fn((8, 8), |_| f64::from(rng.uniform() > 0.45));
        let pg = oracles::to_grid(&pred);
        let gg = oracles::to_grid(&gt);
        let pair = EvalPair::new(pred, gt).unwrap();

        let mut track = |a: f64, b: f64| {
            let d = (a - b).abs();
            worst = worst.max(d);
            assert!(d < 1e-9, "{a} vs {b}");
        };
        track(mae(&pair), oracles::oracle_mae(&pg, &gg));
        let f = f_measure(&pair);
        let (fa, fm, fx) = oracles::oracle_f(&pg, &gg);
        track(f.f_adp, fa);
        track(f.f_mean, fm);
        track(f.f_max, fx);
        let (ea, em, ex) = e_measure(&pair);
        let (oa, om, ox) = oracles::oracle_e(&pg, &gg);
        track(ea, oa);
        track(em, om);
        track(ex, ox);
        track(s_measure(&pair), oracles::oracle_s(&pg, &gg));
        track(weighted_f(&pair), oracles::oracle_weighted_f(&pg, &gg));
    }

    // Closed-form spot values.
    let p = Array2::from_shape_vec((2, 2), vec![1.0, 0.5, 0.0, 0.0]).unwrap();
    let g = Array2::from_shape_vec((2, 2), vec![1.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(mae(&EvalPair::new(p, g).unwrap()), 0.125);
    let p = Array2::from_shape_vec((1, 4), vec![0.9, 0.9, 0.1, 0.1]).unwrap();
    let g = Array2::from_shape_vec((1, 4), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let f = f_measure(&EvalPair::new(p, g).unwrap());
    let expected = 1.3 * 0.5 / (0.3 * 0.5 + 1.0);
    assert!((f.f_max - expected).abs() < 1e-12);
    assert!((expected - 0.5652).abs() < 5e-5);

    pass(
        8,
        format!("all five metrics match their literal transcriptions on 100 pairs (worst gap {worst:.3e}); MAE=0.125 and F~0.5652 spot values exact"),
    );
}

#[test]
fn criterion_09_dataset_tooling() {
    // Codec round trip on 10,000 random metas.
    let mut rng = SeededRng::new(909);
    for i in 0..10_000usize {
        let meta = SampleMeta {
            emergency: *rng.choose(Emergency::all()),
            category: *rng.choose(Category::all()),
            weather: *rng.choose(Weather::all()),
            size_class: *rng.choose(SizeClass::all()),
            id: format!("{:05}", i % 100_000),
        };
        let name = format_name(&meta);
        assert_eq!(parse_name(&name).unwrap(), meta);
    }

    // Stratified split: per-class train fraction within 1 item of 0.8n.
    let mut names = Vec::new();
    for (cat, n) in [
        (Category::Human, 37),
        (Category::Vehicle, 101),
        (Category::Signage, 8),
        (Category::Obstacle, 3),
    ] {
        for i in 0..n {
            names.push(format!("N_{}_F_S_{i:05}.jpg", cat.letter()));
        }
    }
    let split = stratified_split(&names, 0.8, 11).unwrap();
    let mut union: Vec<String> = split.train.iter().chain(split.test.iter()).cloned().collect();
    union.sort();
    let mut expected = names.clone();
    expected.sort();
    assert_eq!(union, expected, "split must partition the input");
    for (cat, n) in [
        (Category::Human, 37usize),
        (Category::Vehicle, 101),
        (Category::Signage, 8),
        (Category::Obstacle, 3),
    ] {
        let in_train = split
            .train
            .iter()
            .filter(|name| parse_name(name).unwrap().category == cat)
            .count();
        assert!(
            (in_train as f64 - 0.8 * n as f64).abs() <= 1.0,
            "{cat:?}: {in_train} of {n}"
        );
    }

    // Synthetic fixtures: deterministic, parseable, size-consistent.
    let a = synth_dataset(16, (64, 64), 3);
    let b = synth_dataset(16, (64, 64), 3);
    for (sa, sb) in a.iter().zip(b.iter()) {
        assert_eq!(sa.image, sb.image);
        assert_eq!(sa.mask, sb.mask);
        let meta = parse_name(&sa.name()).unwrap();
        assert_eq!(meta.size_class, size_class_of(&sa.mask).class);
    }

    pass(
        9,
        "10,000-meta codec round trip, 8:2 per-class split within 1 item, synthetic fixtures self-consistent".into(),
    );
}

#[test]
fn criterion_10_non_reproducibility_statement() {
    // The published benchmark scores (e.g. adaptive F .8694 and MAE .0076
    // on the traffic test split) depend on the private 10K-image dataset,
    // pretrained VMamba-B encoder weights, and GPU training at 384x384.
    // None of that is available here; no acceptance criterion depends on
    // those numbers. Criteria 1-9 substitute property- and oracle-based
    // verification of every computational component.
    let readme = std::fs::read_to_string(
        std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../README.md"),
    )
    .expect("README present");
    assert!(
        readme.contains("not reproduced"),
        "README must document the out-of-scope benchmark targets"
    );
    pass(
        10,
        "published benchmark scores are documented as out-of-scope targets; criteria 1-9 substitute".into(),
    );
}
