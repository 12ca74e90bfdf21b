//! Bijective 2D grid traversal orders.
//!
//! A scan order flattens an `H x W` grid into a sequence of `N = H*W` flat
//! indices (row-major `i*W + j`). Four directional orders form a [`ScanSet`]:
//! two forward traversals plus their exact reversals, the unit consumed by
//! the four-direction selective scan. Generators:
//!
//! - [`cross_scan`]: row-major and column-major rasters.
//! - [`window_scan`]: raster within non-overlapping `S x S` windows, with the
//!   window grid itself traversed raster-wise; the second direction swaps
//!   both traversals to column-major. Partial windows at the right/bottom
//!   edges are clipped, never padded.
//! - [`dilation_scan`]: strided skip-scan with dilation rate `R`; offset `i`
//!   visits flat indices `i, i+R, i+2R, ...` before moving to offset `i+1`.
//! - [`helix_scan`]: Bresenham line slices about a rotating central axis,
//!   the axis advancing two rows per slice pair; the second direction uses
//!   half-offset slices filling the gaps. Cells missed by the slices are
//!   appended in raster order to keep the order bijective.
//! - [`baseline_scan`]: classical traversals (anti-diagonal, Hilbert,
//!   central spiral) used as comparison scans.

use ndarray::Array3;
use thiserror::Error;

use crate::FeatureMap;

#[derive(Debug, Error, PartialEq)]
pub enum ScanError {
    #[error("grid dimensions must be at least 1x1, got {height}x{width}")]
    EmptyGrid { height: usize, width: usize },
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("dilation rate must be at least 1")]
    ZeroRate,
    #[error("hilbert scan requires power-of-two dimensions, got {height}x{width}")]
    HilbertShape { height: usize, width: usize },
    #[error("sequence of length {got} does not cover the {expected}-cell grid")]
    NotAPermutation { got: usize, expected: usize },
    #[error("feature map is {got_h}x{got_w} but the scan order covers {want_h}x{want_w}")]
    ShapeMismatch {
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },
}

/// Patch-grid dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    height: usize,
    width: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Result<Self, ScanError> {
        if height == 0 || width == 0 {
            return Err(ScanError::EmptyGrid { height, width });
        }
        Ok(Self { height, width })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of cells, `H * W`.
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false // validated at construction
    }

    fn flat(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }
}

/// One bijective traversal of the grid together with its inverse.
///
/// `order[k]` is the flat index visited at sequence position `k`;
/// `inverse[f]` is the sequence position at which flat index `f` is visited,
/// so `inverse[order[k]] == k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanOrder {
    shape: GridShape,
    order: Vec<usize>,
    inverse: Vec<usize>,
}

impl ScanOrder {
    /// Build from an explicit visit order, verifying it is a permutation.
    pub fn from_order(shape: GridShape, order: Vec<usize>) -> Result<Self, ScanError> {
        let n = shape.len();
        if order.len() != n {
            return Err(ScanError::NotAPermutation {
                got: order.len(),
                expected: n,
            });
        }
        let mut inverse = vec![usize::MAX; n];
        for (k, &f) in order.iter().enumerate() {
            if f >= n || inverse[f] != usize::MAX {
                return Err(ScanError::NotAPermutation {
                    got: order.len(),
                    expected: n,
                });
            }
            inverse[f] = k;
        }
        Ok(Self {
            shape,
            order,
            inverse,
        })
    }

    fn from_cells(shape: GridShape, cells: Vec<(usize, usize)>) -> Result<Self, ScanError> {
        let order = cells.into_iter().map(|(r, c)| shape.flat(r, c)).collect();
        Self::from_order(shape, order)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// The same traversal walked back to front.
    pub fn reversed(&self) -> Self {
        let order: Vec<usize> = self.order.iter().rev().copied().collect();
        Self::from_order(self.shape, order).expect("reversal of a permutation is a permutation")
    }

    /// Visit rank of every cell, laid out row-major (for dumps and docs).
    pub fn rank_grid(&self) -> Vec<Vec<usize>> {
        let (h, w) = (self.shape.height, self.shape.width);
        (0..h)
            .map(|r| (0..w).map(|c| self.inverse[self.shape.flat(r, c)]).collect())
            .collect()
    }
}

/// The four directional sequences fed to parallel S6 blocks: two forward
/// traversals and their exact elementwise reversals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanSet {
    pub forward_a: ScanOrder,
    pub forward_b: ScanOrder,
    pub backward_a: ScanOrder,
    pub backward_b: ScanOrder,
}

impl ScanSet {
    fn from_forwards(forward_a: ScanOrder, forward_b: ScanOrder) -> Self {
        let backward_a = forward_a.reversed();
        let backward_b = forward_b.reversed();
        Self {
            forward_a,
            forward_b,
            backward_a,
            backward_b,
        }
    }

    pub fn directions(&self) -> [&ScanOrder; 4] {
        [
            &self.forward_a,
            &self.forward_b,
            &self.backward_a,
            &self.backward_b,
        ]
    }

    pub fn shape(&self) -> GridShape {
        self.forward_a.shape()
    }
}

/// Classical comparison traversals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Diagonal,
    Hilbert,
    CentralSpiral,
}

/// Row-major and column-major rasters plus reversals.
pub fn cross_scan(shape: GridShape) -> ScanSet {
    let (h, w) = (shape.height, shape.width);
    let row_major: Vec<usize> = (0..shape.len()).collect();
    let mut col_major = Vec::with_capacity(shape.len());
    for c in 0..w {
        for r in 0..h {
            col_major.push(shape.flat(r, c));
        }
    }
    let fa = ScanOrder::from_order(shape, row_major).expect("raster is a permutation");
    let fb = ScanOrder::from_order(shape, col_major).expect("raster is a permutation");
    ScanSet::from_forwards(fa, fb)
}

/// Window scan: visit `S x S` windows raster-wise, raster within each
/// window; the second direction turns both traversals column-major.
pub fn window_scan(shape: GridShape, window: usize) -> Result<ScanSet, ScanError> {
    if window == 0 {
        return Err(ScanError::ZeroWindow);
    }
    let (h, w) = (shape.height, shape.width);
    let s = window;
    let win_rows = h.div_ceil(s);
    let win_cols = w.div_ceil(s);

    let mut cells_a = Vec::with_capacity(shape.len());
    for wi in 0..win_rows {
        for wj in 0..win_cols {
            for u in 0..s.min(h - wi * s) {
                for v in 0..s.min(w - wj * s) {
                    cells_a.push((wi * s + u, wj * s + v));
                }
            }
        }
    }

    let mut cells_b = Vec::with_capacity(shape.len());
    for wj in 0..win_cols {
        for wi in 0..win_rows {
            for v in 0..s.min(w - wj * s) {
                for u in 0..s.min(h - wi * s) {
                    cells_b.push((wi * s + u, wj * s + v));
                }
            }
        }
    }

    Ok(ScanSet::from_forwards(
        ScanOrder::from_cells(shape, cells_a)?,
        ScanOrder::from_cells(shape, cells_b)?,
    ))
}

/// Reindex a base sequence with the dilation skip pattern: offset `i`
/// yields positions `i, i+R, i+2R, ...` of the base sequence.
fn dilate(base: &[usize], rate: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(base.len());
    for offset in 0..rate {
        let mut k = offset;
        while k < base.len() {
            out.push(base[k]);
            k += rate;
        }
    }
    out
}

/// Dilation scan: strided skip over the row-major flatten; the second
/// direction applies the same pattern to the transposed (column-major)
/// flatten, mapped back to row-major flat indices.
pub fn dilation_scan(shape: GridShape, rate: usize) -> Result<ScanSet, ScanError> {
    if rate == 0 {
        return Err(ScanError::ZeroRate);
    }
    let (h, w) = (shape.height, shape.width);
    let row_major: Vec<usize> = (0..shape.len()).collect();
    let mut col_major = Vec::with_capacity(shape.len());
    for c in 0..w {
        for r in 0..h {
            col_major.push(shape.flat(r, c));
        }
    }
    Ok(ScanSet::from_forwards(
        ScanOrder::from_order(shape, dilate(&row_major, rate))?,
        ScanOrder::from_order(shape, dilate(&col_major, rate))?,
    ))
}

/// Integer midpoint Bresenham line, octant-symmetric, endpoints inclusive.
fn bresenham(r0: i64, c0: i64, r1: i64, c1: i64) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    let dc = (c1 - c0).abs();
    let dr = -(r1 - r0).abs();
    let sc = if c0 < c1 { 1 } else { -1 };
    let sr = if r0 < r1 { 1 } else { -1 };
    let (mut r, mut c) = (r0, c0);
    let mut err = dc + dr;
    loop {
        cells.push((r as usize, c as usize));
        if r == r1 && c == c1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dr {
            err += dr;
            c += sc;
        }
        if e2 <= dc {
            err += dc;
            r += sr;
        }
    }
    cells
}

/// Endpoints of the two helix slices for axis step `k`.
///
/// Slice 1 runs from `(2k, 0)` to `(H-1-2k, W-1)`, slice 2 from `(H-1, 2k)`
/// to `(0, W-1-2k)`. `half_offset` shifts the start coordinates by one cell,
/// producing the gap-filling pair. Coordinates are clamped into the grid.
fn helix_slices(shape: GridShape, k: usize, half_offset: bool) -> [[(i64, i64); 2]; 2] {
    let h = shape.height as i64;
    let w = shape.width as i64;
    let k = k as i64;
    let off = i64::from(half_offset);
    let clamp_r = |r: i64| r.clamp(0, h - 1);
    let clamp_c = |c: i64| c.clamp(0, w - 1);
    [
        [
            (clamp_r(2 * k + off), 0),
            (clamp_r(h - 1 - 2 * k - off), w - 1),
        ],
        [
            (h - 1, clamp_c(2 * k + off)),
            (0, clamp_c(w - 1 - 2 * k - off)),
        ],
    ]
}

fn helix_cells(shape: GridShape, half_offset: bool) -> (Vec<(usize, usize)>, usize) {
    let n = shape.len();
    let mut visited = vec![false; n];
    let mut cells = Vec::with_capacity(n);
    for k in 0..shape.height / 2 {
        for [start, end] in helix_slices(shape, k, half_offset) {
            for (r, c) in bresenham(start.0, start.1, end.0, end.1) {
                let f = shape.flat(r, c);
                if !visited[f] {
                    visited[f] = true;
                    cells.push((r, c));
                }
            }
        }
    }
    let from_slices = cells.len();
    // Bijectivity completion: any cell the slices missed joins in raster order.
    for r in 0..shape.height {
        for c in 0..shape.width {
            if !visited[shape.flat(r, c)] {
                cells.push((r, c));
            }
        }
    }
    (cells, from_slices)
}

/// Helix scan: Bresenham slices about a rotating central axis; the second
/// direction uses the half-offset slice pair covering the remaining gaps.
pub fn helix_scan(shape: GridShape) -> ScanSet {
    let (cells_a, _) = helix_cells(shape, false);
    let (cells_b, _) = helix_cells(shape, true);
    ScanSet::from_forwards(
        ScanOrder::from_cells(shape, cells_a).expect("helix completion yields a permutation"),
        ScanOrder::from_cells(shape, cells_b).expect("helix completion yields a permutation"),
    )
}

/// How much of the grid the helix slices reach before raster completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HelixCoverage {
    /// Cells covered by the union of whole- and half-offset slices.
    pub slice_union: usize,
    /// Cells the whole-offset direction had to append in raster order.
    pub completed_a: usize,
    /// Cells the half-offset direction had to append in raster order.
    pub completed_b: usize,
    pub total: usize,
}

pub fn helix_coverage(shape: GridShape) -> HelixCoverage {
    let n = shape.len();
    let (cells_a, from_slices_a) = helix_cells(shape, false);
    let (cells_b, from_slices_b) = helix_cells(shape, true);
    let mut in_union = vec![false; n];
    for &(r, c) in cells_a.iter().take(from_slices_a) {
        in_union[shape.flat(r, c)] = true;
    }
    for &(r, c) in cells_b.iter().take(from_slices_b) {
        in_union[shape.flat(r, c)] = true;
    }
    HelixCoverage {
        slice_union: in_union.iter().filter(|&&v| v).count(),
        completed_a: n - from_slices_a,
        completed_b: n - from_slices_b,
        total: n,
    }
}

fn diagonal_cells(height: usize, width: usize) -> Vec<(usize, usize)> {
    // Anti-diagonals r + c = d, top row first within each diagonal.
    let mut cells = Vec::with_capacity(height * width);
    for d in 0..height + width - 1 {
        let r_lo = d.saturating_sub(width - 1);
        let r_hi = d.min(height - 1);
        for r in r_lo..=r_hi {
            cells.push((r, d - r));
        }
    }
    cells
}

/// Map a traversal of the transposed `W x H` grid back onto the original.
fn transpose_cells(cells: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    cells.into_iter().map(|(r, c)| (c, r)).collect()
}

/// (x, y) position of step `d` along the order-`n` Hilbert curve.
fn hilbert_point(n: usize, d: usize) -> (usize, usize) {
    let (mut x, mut y) = (0usize, 0usize);
    let mut t = d;
    let mut s = 1;
    while s < n {
        let rx = 1 & (t / 2);
        let ry = 1 & (t ^ rx);
        if ry == 0 {
            if rx == 1 {
                x = s - 1 - x;
                y = s - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        x += s * rx;
        y += s * ry;
        t /= 4;
        s *= 2;
    }
    (x, y)
}

fn hilbert_cells(height: usize, width: usize) -> Result<Vec<(usize, usize)>, ScanError> {
    if !height.is_power_of_two() || !width.is_power_of_two() {
        return Err(ScanError::HilbertShape { height, width });
    }
    // Walk the square curve over the larger side and keep in-grid cells.
    let n = height.max(width);
    let mut cells = Vec::with_capacity(height * width);
    for d in 0..n * n {
        let (x, y) = hilbert_point(n, d);
        if y < height && x < width {
            cells.push((y, x));
        }
    }
    Ok(cells)
}

fn spiral_cells(height: usize, width: usize) -> Vec<(usize, usize)> {
    // Outward spiral from the grid center: step lengths 1,1,2,2,3,3,...
    // turning right, down, left, up; off-grid positions are skipped.
    let n = height * width;
    let mut cells = Vec::with_capacity(n);
    let (mut r, mut c) = (((height - 1) / 2) as i64, ((width - 1) / 2) as i64);
    let dirs = [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)];
    let push = |r: i64, c: i64, cells: &mut Vec<(usize, usize)>| {
        if r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width {
            cells.push((r as usize, c as usize));
        }
    };
    push(r, c, &mut cells);
    let mut leg = 1usize;
    let mut dir = 0usize;
    while cells.len() < n {
        for _ in 0..2 {
            for _ in 0..leg {
                r += dirs[dir].0;
                c += dirs[dir].1;
                push(r, c, &mut cells);
            }
            dir = (dir + 1) % 4;
        }
        leg += 1;
    }
    cells
}

/// Classical comparison traversals: forward plus reversal, the second
/// direction being the transposed variant.
pub fn baseline_scan(shape: GridShape, kind: BaselineKind) -> Result<ScanSet, ScanError> {
    let (h, w) = (shape.height, shape.width);
    let (cells_a, cells_b) = match kind {
        BaselineKind::Diagonal => (diagonal_cells(h, w), transpose_cells(diagonal_cells(w, h))),
        BaselineKind::Hilbert => (hilbert_cells(h, w)?, transpose_cells(hilbert_cells(w, h)?)),
        BaselineKind::CentralSpiral => (spiral_cells(h, w), transpose_cells(spiral_cells(w, h))),
    };
    Ok(ScanSet::from_forwards(
        ScanOrder::from_cells(shape, cells_a)?,
        ScanOrder::from_cells(shape, cells_b)?,
    ))
}

/// Reorder spatial positions of a feature map into sequence-major layout
/// `(batch, channel, N)`, preserving channels.
pub fn gather(x: &FeatureMap, s: &ScanOrder) -> Result<Array3<f64>, ScanError> {
    let (b, c, h, w) = x.dim();
    let shape = s.shape();
    if h != shape.height || w != shape.width {
        return Err(ScanError::ShapeMismatch {
            got_h: h,
            got_w: w,
            want_h: shape.height,
            want_w: shape.width,
        });
    }
    let n = s.len();
    let mut out = Array3::zeros((b, c, n));
    for bi in 0..b {
        for ci in 0..c {
            for (k, &f) in s.order().iter().enumerate() {
                out[[bi, ci, k]] = x[[bi, ci, f / w, f % w]];
            }
        }
    }
    Ok(out)
}

/// Apply each direction's inverse order and sum the four sequences back
/// into a feature map, giving every position exactly one contribution per
/// direction.
pub fn scatter_merge(ys: &[Array3<f64>; 4], set: &ScanSet) -> Result<FeatureMap, ScanError> {
    let shape = set.shape();
    let (h, w) = (shape.height(), shape.width());
    let (b, c, n) = ys[0].dim();
    if n != shape.len() {
        return Err(ScanError::NotAPermutation {
            got: n,
            expected: shape.len(),
        });
    }
    let mut out = FeatureMap::zeros((b, c, h, w));
    for (y, order) in ys.iter().zip(set.directions()) {
        for bi in 0..b {
            for ci in 0..c {
                for (k, &f) in order.order().iter().enumerate() {
                    out[[bi, ci, f / w, f % w]] += y[[bi, ci, k]];
                }
            }
        }
    }
    Ok(out)
}
