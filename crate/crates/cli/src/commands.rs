//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use ndarray::Array2;

use tramba_core::dataset::{
    compute_stats, format_name, parse_name, size_class_of, stratified_split, synth_dataset,
    Attribute, DatasetStats,
};
use tramba_core::freq::{dct2, freq_split, idct2, SpectrumMask};
use tramba_core::metrics::evaluate_directory;
use tramba_core::network::{
    gradcheck, synthetic_batch, train_toy, Tramba, TrambaConfig,
};
use tramba_core::rng::SeededRng;
use tramba_core::scan::{
    baseline_scan, cross_scan, dilation_scan, helix_coverage, helix_scan, window_scan,
    BaselineKind, GridShape, ScanSet,
};
use tramba_core::ssm::{ssm_convolutional, ssm_recurrent, zoh_discretize, SsmParams, ZohMode};
use tramba_core::FeatureMap;

/// Resolve a relative path against `TRAMBA_OUT_DIR` when set.
fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("TRAMBA_OUT_DIR") {
        Some(base) => PathBuf::from(base).join(path),
        None => path.to_path_buf(),
    }
}

/// Atomic write: temp file next to the target, then rename.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let path = resolve_out(path);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, &path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, contents.as_bytes()),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- scan-dump

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScanKindArg {
    Cross,
    Window,
    Dilation,
    Helix,
    Diagonal,
    Hilbert,
    Spiral,
}

#[derive(Args)]
pub struct ScanDumpArgs {
    /// Traversal family.
    #[arg(long, value_enum)]
    kind: ScanKindArg,
    /// Grid height.
    #[arg(long)]
    h: usize,
    /// Grid width.
    #[arg(long)]
    w: usize,
    /// Window edge length (window scan only).
    #[arg(long, default_value_t = 4)]
    window: usize,
    /// Dilation rate (dilation scan only).
    #[arg(long, default_value_t = 2)]
    rate: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit 2D visit-rank matrices (one per direction) instead of lists.
    #[arg(long)]
    grid: bool,
}

fn build_set(args: &ScanDumpArgs) -> Result<ScanSet> {
    let shape = GridShape::new(args.h, args.w)?;
    Ok(match args.kind {
        ScanKindArg::Cross => cross_scan(shape),
        ScanKindArg::Window => window_scan(shape, args.window)?,
        ScanKindArg::Dilation => dilation_scan(shape, args.rate)?,
        ScanKindArg::Helix => helix_scan(shape),
        ScanKindArg::Diagonal => baseline_scan(shape, BaselineKind::Diagonal)?,
        ScanKindArg::Hilbert => baseline_scan(shape, BaselineKind::Hilbert)?,
        ScanKindArg::Spiral => baseline_scan(shape, BaselineKind::CentralSpiral)?,
    })
}

pub fn scan_dump(args: ScanDumpArgs) -> Result<ExitCode> {
    let set = build_set(&args)?;
    let mut text = String::new();
    if args.grid {
        for order in set.directions() {
            for row in order.rank_grid() {
                let line: Vec<String> = row.iter().map(|r| r.to_string()).collect();
                let _ = writeln!(text, "{}", line.join(" "));
            }
            let _ = writeln!(text);
        }
    } else {
        for order in set.directions() {
            let line: Vec<String> = order.order().iter().map(|f| f.to_string()).collect();
            let _ = writeln!(text, "{}", line.join(" "));
        }
    }
    if matches!(args.kind, ScanKindArg::Helix) {
        let shape = GridShape::new(args.h, args.w)?;
        let cov = helix_coverage(shape);
        eprintln!(
            "helix slices cover {}/{} cells (raster completion: {} whole, {} half-offset)",
            cov.slice_union, cov.total, cov.completed_a, cov.completed_b
        );
    }
    emit(args.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- ssm-check

#[derive(Args)]
pub struct SsmCheckArgs {
    /// Sequence length.
    #[arg(long, default_value_t = 64)]
    l: usize,
    /// State dimension.
    #[arg(long, default_value_t = 8)]
    dstate: usize,
    /// Number of random instances.
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Failure threshold on the max absolute deviation.
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
}

pub fn ssm_check(args: SsmCheckArgs) -> Result<ExitCode> {
    let mut rng = SeededRng::new(args.seed);
    let mut max_dev = 0.0f64;
    for _ in 0..args.trials {
        let params = SsmParams::new(
            (0..args.dstate).map(|_| -rng.uniform_in(0.05, 3.0)).collect(),
            (0..args.dstate).map(|_| rng.normal()).collect(),
            (0..args.dstate).map(|_| rng.normal()).collect(),
            rng.uniform_in(0.01, 1.5),
        )?;
        let discrete = zoh_discretize(&params, ZohMode::Exact);
        let x: Vec<f64> = (0..args.l).map(|_| rng.normal()).collect();
        let yr = ssm_recurrent(&discrete, &x);
        let yc = ssm_convolutional(&discrete, &x);
        for (a, b) in yr.iter().zip(yc.iter()) {
            max_dev = max_dev.max((a - b).abs());
        }
    }
    println!(
        "recurrent vs convolutional: {} trials, L={}, d_state={}, max deviation {max_dev:.3e}",
        args.trials, args.l, args.dstate
    );
    if max_dev < args.tolerance {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("deviation exceeds tolerance {:.3e}", args.tolerance);
        Ok(ExitCode::FAILURE)
    }
}

// --------------------------------------------------------------- freq-check

#[derive(Args)]
pub struct FreqCheckArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Largest tested map edge.
    #[arg(long, default_value_t = 32)]
    max_size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

pub fn freq_check(args: FreqCheckArgs) -> Result<ExitCode> {
    let mut rng = SeededRng::new(args.seed);
    let mut max_round = 0.0f64;
    let mut max_parseval = 0.0f64;
    let mut max_split = 0.0f64;
    for trial in 0..args.trials {
        let h = 1 + rng.below(args.max_size);
        let w = 1 + rng.below(args.max_size);
        let x = FeatureMap::from_shape_fn((1, 1, h, w), |_| rng.normal());
        let spec = dct2(&x);
        for (a, b) in idct2(&spec).iter().zip(x.iter()) {
            max_round = max_round.max((a - b).abs());
        }
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let es: f64 = spec.iter().map(|v| v * v).sum();
        max_parseval = max_parseval.max((ex - es).abs());
        let mask = SpectrumMask::new(h, w, [0.25, 0.5, 0.75][trial % 3])?;
        let (low, high) = freq_split(&x, &mask)?;
        for ((l, hi), v) in low.iter().zip(high.iter()).zip(x.iter()) {
            max_split = max_split.max((l + hi - v).abs());
        }
    }
    println!(
        "dct suite over {} maps: round trip {max_round:.3e}, Parseval {max_parseval:.3e}, split {max_split:.3e}",
        args.trials
    );
    let ok = max_round < args.tolerance && max_parseval < args.tolerance && max_split < args.tolerance;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

// ---------------------------------------------------------------- gradcheck

#[derive(Args)]
pub struct GradcheckArgs {
    /// Configuration file (TOML); the tiny check config when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    seed: u64,
    /// Per-group report file (TSV).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn load_config(path: Option<&Path>, fallback: TrambaConfig) -> Result<TrambaConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?;
            Ok(TrambaConfig::from_toml(&text)?)
        }
        None => Ok(fallback),
    }
}

pub fn gradcheck_cmd(args: GradcheckArgs) -> Result<ExitCode> {
    let config = load_config(args.config.as_deref(), TrambaConfig::tiny())?;
    let report = gradcheck(&config, args.seed)?;
    println!(
        "loss {:.6}; {} parameter groups; max relative error {:.3e}",
        report.loss,
        report.groups.len(),
        report.max_rel_error
    );
    if let Some(worst) = report.worst() {
        println!(
            "worst group: {} (analytic {:.6e}, numeric {:.6e})",
            worst.name, worst.analytic, worst.numeric
        );
    }
    if let Some(out) = &args.out {
        let mut tsv = String::from("group\tanalytic\tnumeric\trel_error\n");
        for g in &report.groups {
            let _ = writeln!(tsv, "{}\t{:e}\t{:e}\t{:e}", g.name, g.analytic, g.numeric, g.rel_error);
        }
        write_atomic(out, tsv.as_bytes())?;
    }
    Ok(if report.max_rel_error < args.tolerance {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

// ---------------------------------------------------------------- train-toy

#[derive(Args)]
pub struct TrainToyArgs {
    /// Configuration file (TOML); desk-scale defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic images in the batch (at most 8).
    #[arg(long, default_value_t = 4)]
    images: usize,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0.004)]
    lr: f64,
    /// Disable the divide-by-5 step decay over the last quarter.
    #[arg(long)]
    no_decay: bool,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Loss trace output (TSV).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn train_toy_cmd(args: TrainToyArgs) -> Result<ExitCode> {
    let config = load_config(args.config.as_deref(), TrambaConfig::default())?;
    let mut model = Tramba::new(config.clone())?;
    let (images, masks) = synthetic_batch(&config, args.images, args.seed);
    let trace = train_toy(
        &mut model,
        &images,
        &masks,
        args.steps,
        args.lr,
        !args.no_decay,
    )?;
    let first = trace.first().copied().unwrap_or(0.0);
    let last = trace.last().copied().unwrap_or(0.0);
    println!(
        "{} steps on {} synthetic {}x{} images: loss {first:.6} -> {last:.6} (ratio {:.4})",
        args.steps,
        args.images,
        config.input_size.0,
        config.input_size.1,
        if first > 0.0 { last / first } else { 0.0 }
    );
    if let Some(out) = &args.out {
        let mut tsv = String::from("step\tloss\n");
        for (i, l) in trace.iter().enumerate() {
            let _ = writeln!(tsv, "{i}\t{l:.12}");
        }
        write_atomic(out, tsv.as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}

// --------------------------------------------------------------------- eval

#[derive(Args)]
pub struct EvalArgs {
    /// Directory of prediction maps (8-bit grayscale PNG).
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth masks (binarized at 128).
    #[arg(long)]
    gt: PathBuf,
    /// Group aggregate scores by a filename attribute.
    #[arg(long, value_parser = parse_attribute)]
    group_by: Option<Attribute>,
    /// Report file (TSV: per-image rows then aggregates).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Mean PR / F curve samples (TSV).
    #[arg(long)]
    curves: Option<PathBuf>,
}

fn parse_attribute(s: &str) -> std::result::Result<Attribute, String> {
    Attribute::parse(s).ok_or_else(|| {
        format!("unknown attribute {s:?}; expected emergency, category, weather or size")
    })
}

pub fn eval_cmd(args: EvalArgs) -> Result<ExitCode> {
    let report = evaluate_directory(&args.pred, &args.gt, args.group_by)?;
    for name in &report.unmatched {
        eprintln!("warning: unmatched {name}");
    }
    for name in &report.skipped {
        eprintln!("warning: skipped {name}");
    }
    let m = &report.mean;
    println!(
        "{} pairs ({} empty-gt excluded): mae {:.4} f_adp {:.4} f_mean {:.4} f_max {:.4} e_adp {:.4} e_mean {:.4} e_max {:.4} s {:.4} wf {:.4}",
        m.count,
        report.empty_gt_count,
        m.mae,
        m.f_adp,
        m.f_mean,
        m.f_max,
        m.e_adp,
        m.e_mean,
        m.e_max,
        m.s_measure,
        m.f_weighted
    );
    if let Some(out) = &args.out {
        write_atomic(out, report.to_tsv().as_bytes())?;
    }
    if let Some(curves) = &args.curves {
        write_atomic(curves, report.curves_tsv().as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}

// ------------------------------------------------------------------ dataset

#[derive(Subcommand)]
pub enum DatasetCommand {
    /// Decode filename attributes.
    Parse(ParseArgs),
    /// Stratified train/test split of a name list.
    Split(SplitArgs),
    /// Attribute statistics over a mask directory.
    Stat(StatArgs),
    /// Generate deterministic synthetic image/mask fixtures.
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct ParseArgs {
    /// Filenames to decode.
    #[arg(required = true)]
    names: Vec<String>,
}

#[derive(Args)]
pub struct SplitArgs {
    /// Newline-delimited list of filenames.
    #[arg(long)]
    list: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

#[derive(Args)]
pub struct StatArgs {
    /// Directory of named masks (PNG).
    #[arg(long)]
    masks: PathBuf,
    /// Statistics output (TSV); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    n: usize,
    /// Square image edge length.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory (images/ and masks/ subdirectories).
    #[arg(long)]
    out: PathBuf,
}

pub fn dataset_cmd(cmd: DatasetCommand) -> Result<ExitCode> {
    match cmd {
        DatasetCommand::Parse(args) => {
            let mut failed = false;
            for name in &args.names {
                match parse_name(name) {
                    Ok(meta) => println!(
                        "{name}: emergency={:?} category={:?} weather={:?} size={:?} id={}",
                        meta.emergency, meta.category, meta.weather, meta.size_class, meta.id
                    ),
                    Err(e) => {
                        eprintln!("{e}");
                        failed = true;
                    }
                }
            }
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        DatasetCommand::Split(args) => {
            let text = std::fs::read_to_string(&args.list)
                .with_context(|| format!("reading {}", args.list.display()))?;
            let names: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            let split = stratified_split(&names, args.ratio, args.seed)?;
            write_atomic(&args.train_out, (split.train.join("\n") + "\n").as_bytes())?;
            write_atomic(&args.test_out, (split.test.join("\n") + "\n").as_bytes())?;
            println!("{} train / {} test", split.train.len(), split.test.len());
            Ok(ExitCode::SUCCESS)
        }
        DatasetCommand::Stat(args) => {
            let mut items = Vec::new();
            let mut entries: Vec<PathBuf> = std::fs::read_dir(&args.masks)
                .with_context(|| format!("reading {}", args.masks.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
                .collect();
            entries.sort();
            for path in entries {
                let name = path.file_name().unwrap().to_string_lossy().to_string();
                let meta = match parse_name(&name) {
                    Ok(meta) => meta,
                    Err(e) => {
                        eprintln!("warning: {e}");
                        continue;
                    }
                };
                let Some(mask) = load_mask(&path) else {
                    eprintln!("warning: unreadable mask {}", path.display());
                    continue;
                };
                items.push((meta, mask));
            }
            if items.is_empty() {
                bail!("no readable named masks in {}", args.masks.display());
            }
            let stats = compute_stats(&items);
            emit(args.out.as_deref(), &stats_tsv(&stats))?;
            Ok(ExitCode::SUCCESS)
        }
        DatasetCommand::Synth(args) => {
            if args.n == 0 {
                bail!("--n must be at least 1");
            }
            let samples = synth_dataset(args.n, (args.size, args.size), args.seed);
            let base = resolve_out(&args.out);
            let images_dir = base.join("images");
            let masks_dir = base.join("masks");
            std::fs::create_dir_all(&images_dir)?;
            std::fs::create_dir_all(&masks_dir)?;
            for s in &samples {
                let stem = format_name(&s.meta).replace(".jpg", ".png");
                save_rgb(&images_dir.join(&stem), &s.image)?;
                save_mask(&masks_dir.join(&stem), &s.mask)?;
                debug_assert_eq!(size_class_of(&s.mask).class, s.meta.size_class);
            }
            println!("wrote {} image/mask pairs under {}", samples.len(), base.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn stats_tsv(stats: &DatasetStats) -> String {
    let mut out = String::from("section\tkey\tcount\tproportion\n");
    for (label, counts) in [
        ("emergency", &stats.emergency),
        ("category", &stats.category),
        ("weather", &stats.weather),
        ("size", &stats.size),
    ] {
        let props = DatasetStats::proportions(counts);
        for (letter, count) in counts {
            let _ = writeln!(out, "{label}\t{letter}\t{count}\t{:.6}", props[letter]);
        }
    }
    for (bin, count) in stats.size_ratio_histogram.iter().enumerate() {
        let _ = writeln!(
            out,
            "size_ratio\t[{:.1},{:.1})\t{count}\t{:.6}",
            bin as f64 / 10.0,
            (bin + 1) as f64 / 10.0,
            *count as f64 / stats.total.max(1) as f64
        );
    }
    for (x, y) in &stats.centroids {
        let _ = writeln!(out, "centroid\t{x:.6},{y:.6}\t1\t0");
    }
    if stats.empty_masks > 0 {
        let _ = writeln!(out, "empty_masks\t-\t{}\t0", stats.empty_masks);
    }
    out
}

fn load_mask(path: &Path) -> Option<Array2<f64>> {
    let img = image::open(path).ok()?.into_luma8();
    let (w, h) = img.dimensions();
    Some(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        f64::from(img.get_pixel(j as u32, i as u32).0[0] >= 128)
    }))
}

fn save_rgb(path: &Path, image: &ndarray::Array3<f64>) -> Result<()> {
    let (_, h, w) = image.dim();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let px = [0, 1, 2].map(|c| (image[[c, i, j]] * 255.0).round().clamp(0.0, 255.0) as u8);
            img.put_pixel(j as u32, i as u32, image::Rgb(px));
        }
    }
    img.save(path).with_context(|| format!("saving {}", path.display()))
}

fn save_mask(path: &Path, mask: &Array2<f64>) -> Result<()> {
    let (h, w) = mask.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for ((i, j), &v) in mask.indexed_iter() {
        img.put_pixel(j as u32, i as u32, image::Luma([if v != 0.0 { 255 } else { 0 }]));
    }
    img.save(path).with_context(|| format!("saving {}", path.display()))
}
