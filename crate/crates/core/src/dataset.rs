//! Dataset tooling: filename metadata codec, size classification,
//! stratified splitting, attribute statistics, and a deterministic
//! synthetic fixture generator.
//!
//! Filenames follow the pattern `C/E/N_H/V/S/O_F/I/L_L/S_ID.jpg`:
//! emergency level, object category, weather condition, object size class,
//! and a five-digit id. The parser also accepts `.png` stems (fixtures are
//! stored as PNG); the formatter always emits the canonical `.jpg` form.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array2, Array3};
use thiserror::Error;

use crate::rng::SeededRng;

#[derive(Debug, Error, PartialEq)]
pub enum NameError {
    #[error("{name:?}: expected five underscore-separated fields")]
    Structure { name: String },
    #[error("{name:?}: emergency field must be C, E or N, got {got:?}")]
    Emergency { name: String, got: String },
    #[error("{name:?}: category field must be H, V, S or O, got {got:?}")]
    Category { name: String, got: String },
    #[error("{name:?}: weather field must be F, I or L, got {got:?}")]
    Weather { name: String, got: String },
    #[error("{name:?}: size field must be L or S, got {got:?}")]
    Size { name: String, got: String },
    #[error("{name:?}: id must be exactly five digits, got {got:?}")]
    Id { name: String, got: String },
}

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("{} name(s) failed to parse, first: {first}", .names.len())]
    Unparseable { names: Vec<String>, first: NameError },
    #[error("split ratio must lie in (0, 1], got {0}")]
    BadRatio(f64),
}

macro_rules! letter_enum {
    ($name:ident { $($variant:ident => $letter:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub fn letter(self) -> char {
                match self {
                    $(Self::$variant => $letter),+
                }
            }

            pub fn from_letter(s: &str) -> Option<Self> {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => match c {
                        $($letter => Some(Self::$variant),)+
                        _ => None,
                    },
                    _ => None,
                }
            }

            pub fn all() -> &'static [$name] {
                &[$(Self::$variant),+]
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.letter())
            }
        }
    };
}

letter_enum!(Emergency { Crisis => 'C', Emergency => 'E', Normalcy => 'N' });
letter_enum!(Category { Human => 'H', Vehicle => 'V', Signage => 'S', Obstacle => 'O' });
letter_enum!(Weather { Fine => 'F', Inclement => 'I', LowLight => 'L' });
letter_enum!(SizeClass { Large => 'L', Small => 'S' });

/// Attribute axes a report can group by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attribute {
    Emergency,
    Category,
    Weather,
    Size,
}

impl Attribute {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "emergency" => Some(Self::Emergency),
            "category" => Some(Self::Category),
            "weather" => Some(Self::Weather),
            "size" => Some(Self::Size),
            _ => None,
        }
    }
}

/// Decoded filename attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleMeta {
    pub emergency: Emergency,
    pub category: Category,
    pub weather: Weather,
    pub size_class: SizeClass,
    pub id: String,
}

impl SampleMeta {
    pub fn letter(&self, attr: Attribute) -> char {
        match attr {
            Attribute::Emergency => self.emergency.letter(),
            Attribute::Category => self.category.letter(),
            Attribute::Weather => self.weather.letter(),
            Attribute::Size => self.size_class.letter(),
        }
    }
}

/// Parse a `C/E/N_H/V/S/O_F/I/L_L/S_ID.jpg` filename (also accepts `.png`).
pub fn parse_name(filename: &str) -> Result<SampleMeta, NameError> {
    let err_name = filename.to_string();
    let stem = filename
        .strip_suffix(".jpg")
        .or_else(|| filename.strip_suffix(".png"))
        .unwrap_or(filename);
    let fields: Vec<&str> = stem.split('_').collect();
    if fields.len() != 5 {
        return Err(NameError::Structure { name: err_name });
    }
    let emergency = Emergency::from_letter(fields[0]).ok_or_else(|| NameError::Emergency {
        name: err_name.clone(),
        got: fields[0].to_string(),
    })?;
    let category = Category::from_letter(fields[1]).ok_or_else(|| NameError::Category {
        name: err_name.clone(),
        got: fields[1].to_string(),
    })?;
    let weather = Weather::from_letter(fields[2]).ok_or_else(|| NameError::Weather {
        name: err_name.clone(),
        got: fields[2].to_string(),
    })?;
    let size_class = SizeClass::from_letter(fields[3]).ok_or_else(|| NameError::Size {
        name: err_name.clone(),
        got: fields[3].to_string(),
    })?;
    let id = fields[4];
    if id.len() != 5 || !id.chars().all(|c| c.is_ascii_digit()) {
        return Err(NameError::Id {
            name: err_name,
            got: id.to_string(),
        });
    }
    Ok(SampleMeta {
        emergency,
        category,
        weather,
        size_class,
        id: id.to_string(),
    })
}

/// Canonical filename for a meta record.
pub fn format_name(meta: &SampleMeta) -> String {
    format!(
        "{}_{}_{}_{}_{}.jpg",
        meta.emergency, meta.category, meta.weather, meta.size_class, meta.id
    )
}

/// Size classification of a binary mask: the exact 0.1 foreground ratio is
/// Large (inclusive threshold).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeClassification {
    pub class: SizeClass,
    pub ratio: f64,
    /// The mask had no foreground pixel at all.
    pub empty: bool,
}

pub fn size_class_of(mask: &Array2<f64>) -> SizeClassification {
    let total = mask.len() as f64;
    let fg = mask.iter().filter(|&&v| v != 0.0).count() as f64;
    let ratio = fg / total;
    SizeClassification {
        class: if ratio >= 0.1 {
            SizeClass::Large
        } else {
            SizeClass::Small
        },
        ratio,
        empty: fg == 0.0,
    }
}

/// Train/test partition of a name list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Deterministic stratified split: within each object category,
/// `ceil(ratio * n)` names go to train. Names are sorted before the seeded
/// shuffle so the same inputs and seed always produce the same split.
pub fn stratified_split(
    names: &[String],
    ratio: f64,
    seed: u64,
) -> Result<SplitManifest, SplitError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(SplitError::BadRatio(ratio));
    }
    let mut bad = Vec::new();
    let mut first_err = None;
    let mut by_category: BTreeMap<char, Vec<String>> = BTreeMap::new();
    for name in names {
        match parse_name(name) {
            Ok(meta) => by_category
                .entry(meta.category.letter())
                .or_default()
                .push(name.clone()),
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
                bad.push(name.clone());
            }
        }
    }
    if let Some(first) = first_err {
        return Err(SplitError::Unparseable { names: bad, first });
    }
    let mut rng = SeededRng::new(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for group in by_category.values_mut() {
        group.sort();
        rng.shuffle(group);
        let n_train = (ratio * group.len() as f64).ceil() as usize;
        for (i, name) in group.drain(..).enumerate() {
            if i < n_train {
                train.push(name);
            } else {
                test.push(name);
            }
        }
    }
    Ok(SplitManifest { train, test })
}

/// Counts and proportions per attribute, size-ratio histogram, centroids.
#[derive(Debug, Clone, Default)]
pub struct DatasetStats {
    pub emergency: BTreeMap<char, usize>,
    pub category: BTreeMap<char, usize>,
    pub weather: BTreeMap<char, usize>,
    pub size: BTreeMap<char, usize>,
    /// Ten bins over the foreground ratio, `[0, 0.1), ..., [0.9, 1.0]`.
    pub size_ratio_histogram: [usize; 10],
    /// Normalized (x, y) foreground centroid per mask with foreground.
    pub centroids: Vec<(f64, f64)>,
    pub total: usize,
    pub empty_masks: usize,
}

impl DatasetStats {
    pub fn proportions(counts: &BTreeMap<char, usize>) -> BTreeMap<char, f64> {
        let total: usize = counts.values().sum();
        counts
            .iter()
            .map(|(&k, &v)| (k, v as f64 / total.max(1) as f64))
            .collect()
    }
}

/// Normalized (x, y) centroid of a mask's foreground, if any.
pub fn mask_centroid(mask: &Array2<f64>) -> Option<(f64, f64)> {
    let (h, w) = mask.dim();
    let mut count = 0usize;
    let mut sum_i = 0.0;
    let mut sum_j = 0.0;
    for ((i, j), &v) in mask.indexed_iter() {
        if v != 0.0 {
            count += 1;
            sum_i += i as f64;
            sum_j += j as f64;
        }
    }
    if count == 0 {
        return None;
    }
    let ci = (sum_i / count as f64 + 0.5) / h as f64;
    let cj = (sum_j / count as f64 + 0.5) / w as f64;
    Some((cj, ci))
}

/// Attribute statistics over named masks.
pub fn compute_stats(items: &[(SampleMeta, Array2<f64>)]) -> DatasetStats {
    let mut stats = DatasetStats {
        total: items.len(),
        ..Default::default()
    };
    for (meta, mask) in items {
        *stats.emergency.entry(meta.emergency.letter()).or_default() += 1;
        *stats.category.entry(meta.category.letter()).or_default() += 1;
        *stats.weather.entry(meta.weather.letter()).or_default() += 1;
        *stats.size.entry(meta.size_class.letter()).or_default() += 1;
        let cls = size_class_of(mask);
        let bin = ((cls.ratio * 10.0).floor() as usize).min(9);
        stats.size_ratio_histogram[bin] += 1;
        match mask_centroid(mask) {
            Some(c) => stats.centroids.push(c),
            None => stats.empty_masks += 1,
        }
    }
    stats
}

/// One synthetic fixture: a 3-channel image in `[0, 1]`, its binary mask,
/// and a filename whose attribute letters are self-consistent.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub meta: SampleMeta,
    /// (channel, height, width) in `[0, 1]`.
    pub image: Array3<f64>,
    pub mask: Array2<f64>,
}

impl SynthSample {
    pub fn name(&self) -> String {
        format_name(&self.meta)
    }
}

/// Deterministic geometric scenes: a gradient background plus one bright or
/// dark rectangle/ellipse whose support is the mask. The size letter in the
/// name is recomputed from the mask, so fixtures are self-consistent.
pub fn synth_dataset(n: usize, size: (usize, usize), seed: u64) -> Vec<SynthSample> {
    let (h, w) = size;
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let mut image = Array3::zeros((3, h, w));
        let mut mask = Array2::zeros((h, w));

        // Background: per-channel linear gradient with mild noise.
        let bg = [
            rng.uniform_in(0.1, 0.5),
            rng.uniform_in(0.1, 0.5),
            rng.uniform_in(0.1, 0.5),
        ];
        let slope = [
            rng.uniform_in(-0.2, 0.2),
            rng.uniform_in(-0.2, 0.2),
            rng.uniform_in(-0.2, 0.2),
        ];
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    let t = (i + j) as f64 / (h + w) as f64;
                    let noise = 0.02 * rng.normal();
                    image[[c, i, j]] = (bg[c] + slope[c] * t + noise).clamp(0.0, 1.0);
                }
            }
        }

        // One object, high contrast against the background.
        let obj = [
            rng.uniform_in(0.6, 1.0),
            rng.uniform_in(0.6, 1.0),
            rng.uniform_in(0.6, 1.0),
        ];
        let cy = rng.uniform_in(0.3, 0.7) * h as f64;
        let cx = rng.uniform_in(0.3, 0.7) * w as f64;
        let ry = rng.uniform_in(h as f64 / 8.0, h as f64 / 3.0);
        let rx = rng.uniform_in(w as f64 / 8.0, w as f64 / 3.0);
        let ellipse = rng.uniform() < 0.5;
        for i in 0..h {
            for j in 0..w {
                let dy = (i as f64 + 0.5 - cy) / ry;
                let dx = (j as f64 + 0.5 - cx) / rx;
                let inside = if ellipse {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    mask[[i, j]] = 1.0;
                    for c in 0..3 {
                        image[[c, i, j]] = obj[c];
                    }
                }
            }
        }

        let meta = SampleMeta {
            emergency: *rng.choose(Emergency::all()),
            category: *rng.choose(Category::all()),
            weather: *rng.choose(Weather::all()),
            size_class: size_class_of(&mask).class,
            id: format!("{idx:05}"),
        };
        out.push(SynthSample { meta, image, mask });
    }
    out
}
