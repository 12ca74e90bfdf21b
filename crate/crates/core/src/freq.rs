//! Orthonormal 2D DCT and high/low frequency splitting.
//!
//! The transform is the separable type-II DCT with orthonormal scaling
//! (the inverse is type-III), applied per channel over the full spatial
//! extent. Basis matrices are precomputed per resolution and fixed; nothing
//! here is learned. Splitting multiplies the spectrum by a boolean low-pass
//! mask and transforms back, so `low + high == x` exactly up to rounding.

use ndarray::Array2;
use thiserror::Error;

use crate::FeatureMap;

#[derive(Debug, Error, PartialEq)]
pub enum FreqError {
    #[error("cutoff must lie in (0, 1), got {0}")]
    InvalidCutoff(f64),
    #[error("mask is {mask_h}x{mask_w} but the map is {map_h}x{map_w}")]
    MaskShapeMismatch {
        mask_h: usize,
        mask_w: usize,
        map_h: usize,
        map_w: usize,
    },
}

/// Orthonormal DCT-II basis for one axis: `basis[k][i] = s_k * cos(pi*(2i+1)*k/(2n))`
/// with `s_0 = sqrt(1/n)` and `s_k = sqrt(2/n)` otherwise. Rows are mutually
/// orthonormal, so the inverse transform is the transpose.
pub fn dct_basis(n: usize) -> Array2<f64> {
    let mut basis = Array2::zeros((n, n));
    let norm0 = (1.0 / n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    for k in 0..n {
        let scale = if k == 0 { norm0 } else { norm };
        for i in 0..n {
            basis[[k, i]] =
                scale * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    basis
}

fn transform_channel(x: &Array2<f64>, row_basis: &Array2<f64>, col_basis: &Array2<f64>) -> Array2<f64> {
    row_basis.dot(x).dot(&col_basis.t())
}

/// Per-channel orthonormal 2D DCT (type II along both axes).
pub fn dct2(x: &FeatureMap) -> FeatureMap {
    let (b, c, h, w) = x.dim();
    let th = dct_basis(h);
    let tw = dct_basis(w);
    let mut out = FeatureMap::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            let ch = x
                .index_axis(ndarray::Axis(0), bi)
                .index_axis(ndarray::Axis(0), ci)
                .to_owned();
            out.index_axis_mut(ndarray::Axis(0), bi)
                .index_axis_mut(ndarray::Axis(0), ci)
                .assign(&transform_channel(&ch, &th, &tw));
        }
    }
    out
}

/// Inverse of [`dct2`] (type-III DCT, i.e. the transposed bases).
pub fn idct2(x: &FeatureMap) -> FeatureMap {
    let (b, c, h, w) = x.dim();
    let th = dct_basis(h).t().to_owned();
    let tw = dct_basis(w).t().to_owned();
    let mut out = FeatureMap::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            let ch = x
                .index_axis(ndarray::Axis(0), bi)
                .index_axis(ndarray::Axis(0), ci)
                .to_owned();
            out.index_axis_mut(ndarray::Axis(0), bi)
                .index_axis_mut(ndarray::Axis(0), ci)
                .assign(&transform_channel(&ch, &th, &tw));
        }
    }
    out
}

/// Boolean low-pass region of an `H x W` spectrum.
///
/// A coefficient `(i, j)` is low-frequency when `max(i/H, j/W) < cutoff`
/// (a square boundary in normalized spectral coordinates); the DC
/// coefficient `(0, 0)` is always low. The mask and its complement
/// partition the spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumMask {
    height: usize,
    width: usize,
    cutoff: f64,
    low: Array2<bool>,
}

impl SpectrumMask {
    pub fn new(height: usize, width: usize, cutoff: f64) -> Result<Self, FreqError> {
        if !(cutoff > 0.0 && cutoff < 1.0) {
            return Err(FreqError::InvalidCutoff(cutoff));
        }
        let mut low = Array2::from_elem((height, width), false);
        for i in 0..height {
            for j in 0..width {
                let r = (i as f64 / height as f64).max(j as f64 / width as f64);
                low[[i, j]] = r < cutoff;
            }
        }
        low[[0, 0]] = true;
        Ok(Self {
            height,
            width,
            cutoff,
            low,
        })
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn low(&self) -> &Array2<bool> {
        &self.low
    }

    /// Low mask as 0/1 floats (for masked spectral products).
    pub fn low_f64(&self) -> Array2<f64> {
        self.low.mapv(|v| if v { 1.0 } else { 0.0 })
    }
}

/// Split a map into complementary low/high frequency parts:
/// `low = idct2(spectrum * mask)`, `high = idct2(spectrum * !mask)`,
/// so `low + high == x` up to rounding.
pub fn freq_split(x: &FeatureMap, mask: &SpectrumMask) -> Result<(FeatureMap, FeatureMap), FreqError> {
    let (_, _, h, w) = x.dim();
    if h != mask.height || w != mask.width {
        return Err(FreqError::MaskShapeMismatch {
            mask_h: mask.height,
            mask_w: mask.width,
            map_h: h,
            map_w: w,
        });
    }
    let spectrum = dct2(x);
    let mut low_spec = spectrum.clone();
    let mut high_spec = spectrum;
    for bi in 0..x.dim().0 {
        for ci in 0..x.dim().1 {
            for i in 0..h {
                for j in 0..w {
                    if mask.low[[i, j]] {
                        high_spec[[bi, ci, i, j]] = 0.0;
                    } else {
                        low_spec[[bi, ci, i, j]] = 0.0;
                    }
                }
            }
        }
    }
    Ok((idct2(&low_spec), idct2(&high_spec)))
}
