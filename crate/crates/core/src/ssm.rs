//! Discrete state-space sequence kernels.
//!
//! Implements the diagonal discrete state-space recurrence
//! `h_k = a_bar * h_{k-1} + b_bar * x_k`, `y_k = c . h_k`, its equivalent
//! causal convolution with the kernel `(c*b_bar, c*a_bar*b_bar, ...)`, the
//! input-dependent selective (S6) variant where the step size and the
//! input/output vectors are projected from each token, and the
//! four-direction 2D composition that runs one selective scan per traversal
//! order and merges the results positionwise.
//!
//! Continuous parameters are discretized by zero-order hold. The exact hold
//! uses `b_bar = (exp(delta*a) - 1)/a * b`; the widely used simplification
//! `b_bar = delta * b` is available through [`ZohMode::Simplified`].

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use thiserror::Error;

use crate::rng::SeededRng;
use crate::scan::{gather, scatter_merge, ScanError, ScanSet};
use crate::FeatureMap;

#[derive(Debug, Error)]
pub enum SsmError {
    #[error("delta must be non-negative and finite, got {0}")]
    InvalidDelta(f64),
    #[error("diagonal state matrix entries must be strictly negative, got {0}")]
    UnstableA(f64),
    #[error("parameter vectors must share the state dimension: a={a}, b={b}, c={c}")]
    StateDimMismatch { a: usize, b: usize, c: usize },
    #[error("input has {got} channels but the projections expect {expected}")]
    ChannelMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Scan(#[from] ScanError),
}

/// Discretization rule for the input matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZohMode {
    /// `b_bar = (exp(delta*a) - 1)/a * b`, the exact zero-order hold.
    #[default]
    Exact,
    /// `b_bar = delta * b`, the common first-order simplification.
    Simplified,
}

/// Continuous diagonal state-space parameters plus step size.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    a_diag: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    delta: f64,
}

impl SsmParams {
    /// A zero step size is accepted and discretizes to the identity hold
    /// (`a_bar = 1`, `b_bar = 0`); negative or non-finite steps are not.
    pub fn new(a_diag: Vec<f64>, b: Vec<f64>, c: Vec<f64>, delta: f64) -> Result<Self, SsmError> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(SsmError::InvalidDelta(delta));
        }
        if a_diag.len() != b.len() || a_diag.len() != c.len() {
            return Err(SsmError::StateDimMismatch {
                a: a_diag.len(),
                b: b.len(),
                c: c.len(),
            });
        }
        if let Some(&bad) = a_diag.iter().find(|&&a| !(a < 0.0)) {
            return Err(SsmError::UnstableA(bad));
        }
        Ok(Self { a_diag, b, c, delta })
    }

    pub fn d_state(&self) -> usize {
        self.a_diag.len()
    }

    pub fn a_diag(&self) -> &[f64] {
        &self.a_diag
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Zero-order-hold discretized parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSsm {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub c: Vec<f64>,
}

impl DiscreteSsm {
    pub fn d_state(&self) -> usize {
        self.a_bar.len()
    }
}

/// Length-`L` convolutional kernel `k_bar[t] = c . a_bar^t . b_bar`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmKernelVector {
    pub k_bar: Vec<f64>,
}

/// Discretize one diagonal element of the input matrix.
fn zoh_b(delta: f64, a: f64, b: f64, mode: ZohMode) -> f64 {
    match mode {
        ZohMode::Simplified => delta * b,
        ZohMode::Exact => {
            let da = delta * a;
            if da.abs() < 1e-8 {
                delta * b
            } else {
                (da.exp() - 1.0) / a * b
            }
        }
    }
}

/// Zero-order-hold discretization: `a_bar = exp(delta*a)` per diagonal
/// element, `b_bar` per [`ZohMode`].
pub fn zoh_discretize(p: &SsmParams, mode: ZohMode) -> DiscreteSsm {
    let a_bar: Vec<f64> = p.a_diag.iter().map(|&a| (p.delta * a).exp()).collect();
    let b_bar: Vec<f64> = p
        .a_diag
        .iter()
        .zip(&p.b)
        .map(|(&a, &b)| zoh_b(p.delta, a, b, mode))
        .collect();
    DiscreteSsm {
        a_bar,
        b_bar,
        c: p.c.clone(),
    }
}

/// Left-to-right recurrence with zero initial state.
pub fn ssm_recurrent(d: &DiscreteSsm, x: &[f64]) -> Vec<f64> {
    let s = d.d_state();
    let mut h = vec![0.0; s];
    let mut y = Vec::with_capacity(x.len());
    for &xk in x {
        let mut yk = 0.0;
        for i in 0..s {
            h[i] = d.a_bar[i] * h[i] + d.b_bar[i] * xk;
            yk += d.c[i] * h[i];
        }
        y.push(yk);
    }
    y
}

pub fn ssm_kernel(d: &DiscreteSsm, len: usize) -> SsmKernelVector {
    let s = d.d_state();
    let mut pow = d.b_bar.clone(); // a_bar^t * b_bar, starting at t = 0
    let mut k_bar = Vec::with_capacity(len);
    for _ in 0..len {
        let mut kt = 0.0;
        for i in 0..s {
            kt += d.c[i] * pow[i];
        }
        k_bar.push(kt);
        for i in 0..s {
            pow[i] *= d.a_bar[i];
        }
    }
    SsmKernelVector { k_bar }
}

/// The recurrence rewritten as a causal convolution with [`ssm_kernel`].
pub fn ssm_convolutional(d: &DiscreteSsm, x: &[f64]) -> Vec<f64> {
    let k = ssm_kernel(d, x.len()).k_bar;
    let mut y = vec![0.0; x.len()];
    for t in 0..x.len() {
        let mut acc = 0.0;
        for tau in 0..=t {
            acc += k[tau] * x[t - tau];
        }
        y[t] = acc;
    }
    y
}

/// Gradients of `sum(grad_y . ssm_recurrent(d, x))` with respect to the
/// discrete parameters and the input, obtained by backpropagation through
/// the unrolled recurrence.
#[derive(Debug, Clone)]
pub struct SsmGradients {
    pub d_a_bar: Vec<f64>,
    pub d_b_bar: Vec<f64>,
    pub d_c: Vec<f64>,
    pub d_x: Vec<f64>,
}

pub fn ssm_recurrent_grad(d: &DiscreteSsm, x: &[f64], grad_y: &[f64]) -> SsmGradients {
    assert_eq!(x.len(), grad_y.len());
    let s = d.d_state();
    let l = x.len();

    // Forward pass, retaining every state.
    let mut states = vec![vec![0.0; s]; l + 1];
    for t in 0..l {
        for i in 0..s {
            states[t + 1][i] = d.a_bar[i] * states[t][i] + d.b_bar[i] * x[t];
        }
    }

    let mut d_a_bar = vec![0.0; s];
    let mut d_b_bar = vec![0.0; s];
    let mut d_c = vec![0.0; s];
    let mut d_x = vec![0.0; l];
    let mut gh = vec![0.0; s];
    for t in (0..l).rev() {
        for i in 0..s {
            d_c[i] += grad_y[t] * states[t + 1][i];
            gh[i] += grad_y[t] * d.c[i];
            d_a_bar[i] += gh[i] * states[t][i];
            d_b_bar[i] += gh[i] * x[t];
            d_x[t] += gh[i] * d.b_bar[i];
            gh[i] *= d.a_bar[i];
        }
    }
    SsmGradients {
        d_a_bar,
        d_b_bar,
        d_c,
        d_x,
    }
}

/// Numerically stable softplus.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inv(y: f64) -> f64 {
    // x = ln(e^y - 1); rewrite as y + ln(1 - e^-y) for stability.
    y + (-(-y).exp()).ln_1p()
}

/// Learned projections of the selective (S6) variant.
///
/// Per token `x_k` of a `channels`-dimensional sequence the projections
/// produce `delta_k = softplus(w_dt^T (w_x_dt^T x_k) + b_dt)` per channel,
/// `b_k = w_b^T x_k` and `c_k = w_c^T x_k` shared across channels, while
/// `a = -exp(a_log)` stays token-independent and strictly negative.
#[derive(Debug, Clone, PartialEq)]
pub struct S6Weights {
    pub w_x_dt: Array2<f64>, // [channels, dt_rank]
    pub w_dt: Array2<f64>,   // [dt_rank, channels]
    pub b_dt: Array1<f64>,   // [channels]
    pub w_b: Array2<f64>,    // [channels, d_state]
    pub w_c: Array2<f64>,    // [channels, d_state]
    pub a_log: Array2<f64>,  // [channels, d_state]
    pub d_skip: Array1<f64>, // [channels]
    pub mode: ZohMode,
}

impl S6Weights {
    pub fn channels(&self) -> usize {
        self.w_x_dt.nrows()
    }

    pub fn d_state(&self) -> usize {
        self.w_b.ncols()
    }

    pub fn dt_rank(&self) -> usize {
        self.w_x_dt.ncols()
    }

    /// All projections and the skip zeroed; `a = -exp(0) = -1` everywhere.
    pub fn zeros(channels: usize, d_state: usize, dt_rank: usize, mode: ZohMode) -> Self {
        Self {
            w_x_dt: Array2::zeros((channels, dt_rank)),
            w_dt: Array2::zeros((dt_rank, channels)),
            b_dt: Array1::zeros(channels),
            w_b: Array2::zeros((channels, d_state)),
            w_c: Array2::zeros((channels, d_state)),
            a_log: Array2::zeros((channels, d_state)),
            d_skip: Array1::zeros(channels),
            mode,
        }
    }

    /// Standard init: scaled-uniform projections, `a_log[c][s] = ln(s+1)`,
    /// step bias drawn so `delta` starts in `[0.001, 0.1]`, unit skip.
    pub fn init(
        channels: usize,
        d_state: usize,
        dt_rank: usize,
        mode: ZohMode,
        rng: &mut SeededRng,
    ) -> Self {
        let mut w = Self::zeros(channels, d_state, dt_rank, mode);
        let bound = 1.0 / (channels as f64).sqrt();
        for v in w.w_x_dt.iter_mut() {
            *v = rng.uniform_in(-bound, bound);
        }
        let dt_bound = 1.0 / (dt_rank as f64).sqrt();
        for v in w.w_dt.iter_mut() {
            *v = rng.uniform_in(-dt_bound, dt_bound);
        }
        for v in w.b_dt.iter_mut() {
            *v = softplus_inv(rng.uniform_in(1e-3, 0.1));
        }
        for v in w.w_b.iter_mut() {
            *v = rng.uniform_in(-bound, bound);
        }
        for v in w.w_c.iter_mut() {
            *v = rng.uniform_in(-bound, bound);
        }
        for (cs, v) in w.a_log.indexed_iter_mut() {
            *v = ((cs.1 + 1) as f64).ln();
        }
        for v in w.d_skip.iter_mut() {
            *v = 1.0;
        }
        w
    }

    /// Token-independent state matrix diagonal, `-exp(a_log)`.
    pub fn a(&self) -> Array2<f64> {
        self.a_log.mapv(|v| -v.exp())
    }
}

/// Run the selective recurrence with explicit per-token parameters.
///
/// Shapes: `u` and `delta` are `[channels, len]`, `b_seq` and `c_seq` are
/// `[d_state, len]`, `a` is `[channels, d_state]`. Returns `[channels, len]`.
pub fn selective_scan_seq(
    u: ArrayView2<f64>,
    delta: ArrayView2<f64>,
    b_seq: ArrayView2<f64>,
    c_seq: ArrayView2<f64>,
    a: ArrayView2<f64>,
    mode: ZohMode,
) -> Array2<f64> {
    let (channels, len) = u.dim();
    let d_state = a.ncols();
    let mut y = Array2::zeros((channels, len));
    let mut h = vec![0.0; d_state];
    for ch in 0..channels {
        h.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..len {
            let dt = delta[[ch, k]];
            let uk = u[[ch, k]];
            let mut yk = 0.0;
            for s in 0..d_state {
                let a_cs = a[[ch, s]];
                let a_bar = (dt * a_cs).exp();
                let b_bar = zoh_b(dt, a_cs, b_seq[[s, k]], mode);
                h[s] = a_bar * h[s] + b_bar * uk;
                yk += c_seq[[s, k]] * h[s];
            }
            y[[ch, k]] = yk;
        }
    }
    y
}

/// Selective (S6) state-space transform of a `[channels, len]` sequence:
/// project per-token parameters, run the recurrence, add the learned skip.
pub fn selective_ssm(x_seq: ArrayView2<f64>, w: &S6Weights) -> Result<Array2<f64>, SsmError> {
    let (channels, len) = x_seq.dim();
    if channels != w.channels() {
        return Err(SsmError::ChannelMismatch {
            got: channels,
            expected: w.channels(),
        });
    }
    // delta = softplus(w_dt^T (w_x_dt^T x) + b_dt), per channel per token.
    let dt_low = w.w_x_dt.t().dot(&x_seq); // [dt_rank, len]
    let mut delta = w.w_dt.t().dot(&dt_low); // [channels, len]
    for (idx, v) in delta.indexed_iter_mut() {
        *v = softplus(*v + w.b_dt[idx.0]);
    }
    let b_seq = w.w_b.t().dot(&x_seq); // [d_state, len]
    let c_seq = w.w_c.t().dot(&x_seq); // [d_state, len]
    let a = w.a();
    let mut y = selective_scan_seq(
        x_seq,
        delta.view(),
        b_seq.view(),
        c_seq.view(),
        a.view(),
        w.mode,
    );
    for ch in 0..channels {
        let d = w.d_skip[ch];
        for k in 0..len {
            y[[ch, k]] += d * x_seq[[ch, k]];
        }
    }
    Ok(y)
}

/// Per-direction (or shared) S6 weights for the four-direction 2D scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Ss2dWeights {
    weights: Vec<S6Weights>,
}

impl Ss2dWeights {
    /// One weight set shared by all four directions.
    pub fn shared(w: S6Weights) -> Self {
        Self { weights: vec![w] }
    }

    /// Independent weights per direction.
    pub fn per_direction(w: [S6Weights; 4]) -> Self {
        Self {
            weights: w.into(),
        }
    }

    pub fn for_direction(&self, dir: usize) -> &S6Weights {
        if self.weights.len() == 1 {
            &self.weights[0]
        } else {
            &self.weights[dir]
        }
    }

    pub fn all(&self) -> &[S6Weights] {
        &self.weights
    }
}

/// Four-direction 2D selective scan: gather the map along each order of the
/// set, run [`selective_ssm`] per sequence, and merge by positionwise sum.
pub fn ss2d(x: &FeatureMap, set: &ScanSet, w: &Ss2dWeights) -> Result<FeatureMap, SsmError> {
    let (batch, channels, _, _) = x.dim();
    let n = set.shape().len();
    let mut outs: Vec<Array3<f64>> = Vec::with_capacity(4);
    for (dir, order) in set.directions().into_iter().enumerate() {
        let seq = gather(x, order)?;
        let mut out = Array3::zeros((batch, channels, n));
        for bi in 0..batch {
            let y = selective_ssm(seq.index_axis(Axis(0), bi), w.for_direction(dir))?;
            out.index_axis_mut(Axis(0), bi).assign(&y);
        }
        outs.push(out);
    }
    let outs: [Array3<f64>; 4] = [
        outs.remove(0),
        outs.remove(0),
        outs.remove(0),
        outs.remove(0),
    ];
    Ok(scatter_merge(&outs, set)?)
}
