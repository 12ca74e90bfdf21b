//! End-to-end tests of the command-line interface.

use std::path::Path;
use std::process::{Command, Output};

fn tramba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tramba"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn scan_dump_emits_four_permutation_lines() {
    let out = tramba(&["scan-dump", "--kind", "helix", "--h", "4", "--w", "4"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    for line in lines {
        let mut values: Vec<usize> = line
            .split_whitespace()
            .map(|v| v.parse().unwrap())
            .collect();
        values.sort_unstable();
        assert_eq!(values, (0..16).collect::<Vec<_>>());
    }
}

#[test]
fn scan_dump_grid_emits_rank_matrices() {
    let out = tramba(&[
        "scan-dump", "--kind", "cross", "--h", "2", "--w", "3", "--grid",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    // Four 2-row matrices separated by blank lines.
    assert_eq!(text.lines().filter(|l| !l.trim().is_empty()).count(), 8);
    assert!(text.starts_with("0 1 2\n3 4 5\n"));
}

#[test]
fn unknown_subcommand_fails_with_usage() {
    let out = tramba(&["frobnicate"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage") || err.contains("usage"));
}

#[test]
fn unknown_flag_rejected() {
    let out = tramba(&["ssm-check", "--bogus", "3"]);
    assert!(!out.status.success());
}

#[test]
fn ssm_check_passes_at_default_tolerance() {
    let out = tramba(&["ssm-check", "--l", "32", "--trials", "50"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("max deviation"));
}

#[test]
fn identical_invocations_produce_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for out in [&a, &b] {
        let res = tramba(&[
            "scan-dump", "--kind", "dilation", "--h", "6", "--w", "5", "--rate", "3", "--out",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn synth_then_eval_same_directory_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("fixtures");
    let res = tramba(&[
        "dataset", "synth", "--n", "3", "--size", "32", "--seed", "5", "--out",
        data.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let masks = data.join("masks");
    let report = dir.path().join("report.tsv");
    let curves = dir.path().join("curves.tsv");
    let res = tramba(&[
        "eval",
        "--pred",
        masks.to_str().unwrap(),
        "--gt",
        masks.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--curves",
        curves.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = stdout(&res);
    assert!(text.contains("mae 0.0000"), "mae should be zero: {text}");
    let report_text = std::fs::read_to_string(&report).unwrap();
    assert!(report_text.starts_with("name\tmae"));
    assert_eq!(
        std::fs::read_to_string(&curves).unwrap().lines().count(),
        257
    );
}

#[test]
fn dataset_parse_reports_field_errors() {
    let ok = tramba(&["dataset", "parse", "C_H_L_S_00042.jpg"]);
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("Crisis"));
    let bad = tramba(&["dataset", "parse", "X_H_L_S_00042.jpg"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("emergency"));
}

#[test]
fn dataset_split_writes_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let list = dir.path().join("names.txt");
    let mut names = String::new();
    for i in 0..10 {
        names.push_str(&format!("N_V_F_S_{i:05}.jpg\n"));
        names.push_str(&format!("C_H_I_L_{i:05}.jpg\n"));
    }
    std::fs::write(&list, names).unwrap();
    let train = dir.path().join("train.txt");
    let test = dir.path().join("test.txt");
    let res = tramba(&[
        "dataset", "split", "--list",
        list.to_str().unwrap(),
        "--train-out",
        train.to_str().unwrap(),
        "--test-out",
        test.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let train_lines = std::fs::read_to_string(&train).unwrap().lines().count();
    let test_lines = std::fs::read_to_string(&test).unwrap().lines().count();
    assert_eq!(train_lines, 16);
    assert_eq!(test_lines, 4);
}

#[test]
fn dataset_stat_writes_tsv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("fixtures");
    assert!(tramba(&[
        "dataset", "synth", "--n", "4", "--size", "16", "--seed", "2", "--out",
        data.to_str().unwrap(),
    ])
    .status
    .success());
    let out = dir.path().join("stats.tsv");
    let res = tramba(&[
        "dataset", "stat", "--masks",
        data.join("masks").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("section\tkey"));
    assert!(text.contains("category\t"));
}

#[test]
fn gradcheck_smoke_on_tiny_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(
        &config,
        "input_size = [32, 32]\nbase_channels = 8\n",
    )
    .unwrap();
    let report = dir.path().join("gradcheck.tsv");
    let res = tramba(&[
        "gradcheck", "--config",
        config.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(stdout(&res).contains("max relative error"));
    assert!(Path::new(&report).exists());
}

#[test]
fn train_toy_short_run_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, "input_size = [32, 32]\nbase_channels = 8\n").unwrap();
    let trace = dir.path().join("trace.tsv");
    let res = tramba(&[
        "train-toy", "--config",
        config.to_str().unwrap(),
        "--images", "2", "--steps", "3", "--lr", "0.001", "--out",
        trace.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().count(), 4); // header + 3 steps
}
