//! Reverse-mode automatic differentiation over 64-bit tensors.
//!
//! A [`Tape`] is a Wengert list: every operation appends a node holding the
//! computed value plus the small context its backward rule needs. Calling
//! [`Tape::backward`] walks the list in reverse, accumulating gradients in a
//! fixed order so results are bitwise reproducible.
//!
//! The op set is exactly what the network needs: elementwise maps, channel
//! contractions (1x1 convolutions and linear layers share one op), layer
//! normalization, depthwise convolution, bilinear upsampling, space-to-depth
//! rearrangement, scan-order gather/scatter, the selective state-space
//! recurrence (with backpropagation through time), the orthonormal 2D DCT
//! pair, spectral masking, and the combined cross-entropy + soft-IoU loss.
//! Every backward rule is verified against central finite differences in the
//! unit tests below.

use std::sync::Arc;

use ndarray::{concatenate, Array2, Array3, ArrayD, ArrayView3, Axis, Ix4, IxDyn};

use crate::freq;
use crate::scan::ScanOrder;
use crate::ssm::ZohMode;

pub type TensorId = usize;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// View an owned, contiguous tensor as `(batch, channel, positions)`.
fn as_bck(x: &ArrayD<f64>) -> ArrayView3<'_, f64> {
    let shape = x.shape();
    assert!(shape.len() >= 2, "channel ops need rank >= 2");
    let (b, c) = (shape[0], shape[1]);
    let k: usize = shape[2..].iter().product::<usize>().max(1);
    x.view()
        .into_shape_with_order((b, c, k))
        .expect("tape tensors are C-contiguous")
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add {
        a: TensorId,
        b: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    Scale {
        x: TensorId,
        factor: f64,
    },
    Exp {
        x: TensorId,
    },
    Softplus {
        x: TensorId,
    },
    Silu {
        x: TensorId,
    },
    SumAll {
        x: TensorId,
    },
    /// `out[b, :, k] = w^T x[b, :, k] (+ bias)`, channel axis 1, any rank >= 2.
    ChannelLinear {
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
    },
    /// `out[b, c, k] = x[b, c, k] * v[c]`.
    MulChannel {
        x: TensorId,
        v: TensorId,
    },
    LayerNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    },
    /// Same-size depthwise convolution, odd square kernel, zero padding.
    DepthwiseConv {
        x: TensorId,
        w: TensorId,
        bias: TensorId,
    },
    /// `[B, C, H, W] -> [B, C*f*f, H/f, W/f]`, channel-major `(c, u, v)` layout.
    SpaceToDepth {
        x: TensorId,
        factor: usize,
    },
    /// Half-pixel bilinear upsampling by an integer factor.
    BilinearUp {
        x: TensorId,
        factor: usize,
    },
    /// Flatten spatial positions along a scan order: `[B,C,H,W] -> [B,C,N]`.
    GatherSeq {
        x: TensorId,
        order: Arc<ScanOrder>,
    },
    /// Place sequence position `k` back at flat cell `order[k]`.
    ScatterSeq {
        x: TensorId,
        order: Arc<ScanOrder>,
    },
    /// Selective state-space recurrence along the last axis.
    /// `u, delta: [B,C,N]`, `b_seq, c_seq: [B,S,N]`, `a: [C,S]`.
    SelectiveScan {
        u: TensorId,
        delta: TensorId,
        b_seq: TensorId,
        c_seq: TensorId,
        a: TensorId,
        mode: ZohMode,
    },
    Dct2 {
        x: TensorId,
    },
    Idct2 {
        x: TensorId,
    },
    /// Multiply every channel's spectrum by a fixed `H x W` mask.
    MulMask {
        x: TensorId,
        mask: Arc<Array2<f64>>,
    },
    ConcatChannels {
        parts: Vec<TensorId>,
    },
    /// Mean binary cross-entropy from logits plus smoothed soft-IoU
    /// complement, summed; scalar output.
    BceIouLoss {
        logits: TensorId,
        target: Arc<ArrayD<f64>>,
    },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
}

/// Gradients per tensor id, populated by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Grads {
    pub fn get(&self, id: TensorId) -> Option<&ArrayD<f64>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &ArrayD<f64> {
        &self.nodes[id].value
    }

    /// Scalar value of a single-element tensor.
    pub fn scalar(&self, id: TensorId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "scalar() on non-scalar tensor");
        *v.iter().next().unwrap()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op) -> TensorId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: ArrayD<f64>) -> TensorId {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let value = &self.nodes[a].value + &self.nodes[b].value;
        self.push(value, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let value = &self.nodes[a].value * &self.nodes[b].value;
        self.push(value, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: TensorId, factor: f64) -> TensorId {
        let value = self.nodes[x].value.mapv(|v| v * factor);
        self.push(value, Op::Scale { x, factor })
    }

    pub fn exp(&mut self, x: TensorId) -> TensorId {
        let value = self.nodes[x].value.mapv(f64::exp);
        self.push(value, Op::Exp { x })
    }

    pub fn softplus(&mut self, x: TensorId) -> TensorId {
        let value = self.nodes[x].value.mapv(crate::ssm::softplus);
        self.push(value, Op::Softplus { x })
    }

    pub fn silu(&mut self, x: TensorId) -> TensorId {
        let value = self.nodes[x].value.mapv(|v| v * sigmoid(v));
        self.push(value, Op::Silu { x })
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s = self.nodes[x].value.sum();
        self.push(ArrayD::from_elem(IxDyn(&[1]), s), Op::SumAll { x })
    }

    /// Channel contraction: `w` is `[c_in, c_out]`, optional bias `[c_out]`.
    pub fn channel_linear(&mut self, x: TensorId, w: TensorId, bias: Option<TensorId>) -> TensorId {
        let xv = &self.nodes[x].value;
        let wv = &self.nodes[w].value;
        let x3 = as_bck(xv);
        let (b, c_in, k) = x3.dim();
        let w2 = wv
            .view()
            .into_shape_with_order((wv.shape()[0], wv.shape()[1]))
            .unwrap();
        assert_eq!(w2.nrows(), c_in, "channel_linear: weight rows != channels");
        let c_out = w2.ncols();
        let mut out = Array3::zeros((b, c_out, k));
        for bi in 0..b {
            let y = w2.t().dot(&x3.index_axis(Axis(0), bi));
            out.index_axis_mut(Axis(0), bi).assign(&y);
        }
        if let Some(bias) = bias {
            let bv = &self.nodes[bias].value;
            assert_eq!(bv.len(), c_out);
            for bi in 0..b {
                for ci in 0..c_out {
                    let bias_v = bv[[ci]];
                    for ki in 0..k {
                        out[[bi, ci, ki]] += bias_v;
                    }
                }
            }
        }
        let mut shape: Vec<usize> = xv.shape().to_vec();
        shape[1] = c_out;
        let value = out.into_shape_with_order(IxDyn(&shape)).unwrap();
        self.push(value, Op::ChannelLinear { x, w, bias })
    }

    pub fn mul_channel(&mut self, x: TensorId, v: TensorId) -> TensorId {
        let xv = &self.nodes[x].value;
        let vv = &self.nodes[v].value;
        let x3 = as_bck(xv);
        let (b, c, k) = x3.dim();
        assert_eq!(vv.len(), c);
        let mut out = x3.to_owned();
        for bi in 0..b {
            for ci in 0..c {
                let f = vv[[ci]];
                for ki in 0..k {
                    out[[bi, ci, ki]] *= f;
                }
            }
        }
        let value = out.into_shape_with_order(xv.raw_dim()).unwrap();
        self.push(value, Op::MulChannel { x, v })
    }

    /// Layer normalization over the channel axis at every position.
    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId) -> TensorId {
        let eps = 1e-6;
        let xv = &self.nodes[x].value;
        let gv = &self.nodes[gamma].value;
        let bv = &self.nodes[beta].value;
        let x3 = as_bck(xv);
        let (b, c, k) = x3.dim();
        assert_eq!(gv.len(), c);
        assert_eq!(bv.len(), c);
        let mut out = Array3::zeros((b, c, k));
        for bi in 0..b {
            for ki in 0..k {
                let mut mean = 0.0;
                for ci in 0..c {
                    mean += x3[[bi, ci, ki]];
                }
                mean /= c as f64;
                let mut var = 0.0;
                for ci in 0..c {
                    let d = x3[[bi, ci, ki]] - mean;
                    var += d * d;
                }
                var /= c as f64;
                let inv = 1.0 / (var + eps).sqrt();
                for ci in 0..c {
                    let xhat = (x3[[bi, ci, ki]] - mean) * inv;
                    out[[bi, ci, ki]] = gv[[ci]] * xhat + bv[[ci]];
                }
            }
        }
        let value = out.into_shape_with_order(xv.raw_dim()).unwrap();
        self.push(value, Op::LayerNorm { x, gamma, beta, eps })
    }

    /// Depthwise convolution with an odd square kernel `[c, k, k]` and
    /// per-channel bias, zero padding, stride 1.
    pub fn depthwise_conv(&mut self, x: TensorId, w: TensorId, bias: TensorId) -> TensorId {
        let xv = self.nodes[x].value.view().into_dimensionality::<Ix4>().unwrap();
        let wv = &self.nodes[w].value;
        let bv = &self.nodes[bias].value;
        let (b, c, h, wd) = xv.dim();
        let ks = wv.shape()[1];
        assert_eq!(wv.shape(), &[c, ks, ks]);
        assert_eq!(ks % 2, 1, "kernel size must be odd");
        assert_eq!(bv.len(), c);
        let pad = ks / 2;
        let mut out = ArrayD::zeros(IxDyn(&[b, c, h, wd]));
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..wd {
                        let mut acc = bv[[ci]];
                        for u in 0..ks {
                            let si = i as isize + u as isize - pad as isize;
                            if si < 0 || si >= h as isize {
                                continue;
                            }
                            for v in 0..ks {
                                let sj = j as isize + v as isize - pad as isize;
                                if sj < 0 || sj >= wd as isize {
                                    continue;
                                }
                                acc += wv[[ci, u, v]] * xv[[bi, ci, si as usize, sj as usize]];
                            }
                        }
                        out[[bi, ci, i, j]] = acc;
                    }
                }
            }
        }
        self.push(out, Op::DepthwiseConv { x, w, bias })
    }

    pub fn space_to_depth(&mut self, x: TensorId, factor: usize) -> TensorId {
        let xv = self.nodes[x].value.view().into_dimensionality::<Ix4>().unwrap();
        let (b, c, h, w) = xv.dim();
        assert!(
            h % factor == 0 && w % factor == 0,
            "spatial dims must divide the factor"
        );
        let (ho, wo) = (h / factor, w / factor);
        let mut out = ArrayD::zeros(IxDyn(&[b, c * factor * factor, ho, wo]));
        for bi in 0..b {
            for ci in 0..c {
                for u in 0..factor {
                    for v in 0..factor {
                        let co = ci * factor * factor + u * factor + v;
                        for i in 0..ho {
                            for j in 0..wo {
                                out[[bi, co, i, j]] = xv[[bi, ci, i * factor + u, j * factor + v]];
                            }
                        }
                    }
                }
            }
        }
        self.push(out, Op::SpaceToDepth { x, factor })
    }

    pub fn bilinear_up(&mut self, x: TensorId, factor: usize) -> TensorId {
        let xv = self.nodes[x].value.view().into_dimensionality::<Ix4>().unwrap();
        let (b, c, h, w) = xv.dim();
        let (ho, wo) = (h * factor, w * factor);
        let rows = bilinear_taps(h, factor);
        let cols = bilinear_taps(w, factor);
        let mut out = ArrayD::zeros(IxDyn(&[b, c, ho, wo]));
        for bi in 0..b {
            for ci in 0..c {
                for (i, &(r0, r1, t)) in rows.iter().enumerate() {
                    for (j, &(c0, c1, s)) in cols.iter().enumerate() {
                        out[[bi, ci, i, j]] = (1.0 - t) * (1.0 - s) * xv[[bi, ci, r0, c0]]
                            + (1.0 - t) * s * xv[[bi, ci, r0, c1]]
                            + t * (1.0 - s) * xv[[bi, ci, r1, c0]]
                            + t * s * xv[[bi, ci, r1, c1]];
                    }
                }
            }
        }
        self.push(out, Op::BilinearUp { x, factor })
    }

    pub fn gather_seq(&mut self, x: TensorId, order: Arc<ScanOrder>) -> TensorId {
        let xv = self.nodes[x].value.view().into_dimensionality::<Ix4>().unwrap();
        let (b, c, h, w) = xv.dim();
        let shape = order.shape();
        assert_eq!((h, w), (shape.height(), shape.width()));
        let n = order.len();
        let mut out = ArrayD::zeros(IxDyn(&[b, c, n]));
        for bi in 0..b {
            for ci in 0..c {
                for (k, &f) in order.order().iter().enumerate() {
                    out[[bi, ci, k]] = xv[[bi, ci, f / w, f % w]];
                }
            }
        }
        self.push(out, Op::GatherSeq { x, order })
    }

    pub fn scatter_seq(&mut self, x: TensorId, order: Arc<ScanOrder>) -> TensorId {
        let xv = &self.nodes[x].value;
        let shape = order.shape();
        let (h, w) = (shape.height(), shape.width());
        let x3 = as_bck(xv);
        let (b, c, n) = x3.dim();
        assert_eq!(n, order.len());
        let mut out = ArrayD::zeros(IxDyn(&[b, c, h, w]));
        for bi in 0..b {
            for ci in 0..c {
                for (k, &f) in order.order().iter().enumerate() {
                    out[[bi, ci, f / w, f % w]] = x3[[bi, ci, k]];
                }
            }
        }
        self.push(out, Op::ScatterSeq { x, order })
    }

    pub fn selective_scan(
        &mut self,
        u: TensorId,
        delta: TensorId,
        b_seq: TensorId,
        c_seq: TensorId,
        a: TensorId,
        mode: ZohMode,
    ) -> TensorId {
        let ctx = ScanCtx::gather(self, u, delta, b_seq, c_seq, a);
        let mut out = ArrayD::zeros(IxDyn(&[ctx.batch, ctx.channels, ctx.len]));
        let mut h = vec![0.0; ctx.d_state];
        for bi in 0..ctx.batch {
            for ci in 0..ctx.channels {
                h.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..ctx.len {
                    out[[bi, ci, k]] = ctx.step(self, bi, ci, k, &mut h, mode);
                }
            }
        }
        self.push(
            out,
            Op::SelectiveScan {
                u,
                delta,
                b_seq,
                c_seq,
                a,
                mode,
            },
        )
    }

    pub fn dct2(&mut self, x: TensorId) -> TensorId {
        let x4 = self.nodes[x]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .to_owned();
        let value = freq::dct2(&x4).into_dyn();
        self.push(value, Op::Dct2 { x })
    }

    pub fn idct2(&mut self, x: TensorId) -> TensorId {
        let x4 = self.nodes[x]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .to_owned();
        let value = freq::idct2(&x4).into_dyn();
        self.push(value, Op::Idct2 { x })
    }

    pub fn mul_mask(&mut self, x: TensorId, mask: Arc<Array2<f64>>) -> TensorId {
        let xv = self.nodes[x].value.view().into_dimensionality::<Ix4>().unwrap();
        let (b, c, h, w) = xv.dim();
        assert_eq!(mask.dim(), (h, w));
        let mut out = ArrayD::zeros(IxDyn(&[b, c, h, w]));
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        out[[bi, ci, i, j]] = xv[[bi, ci, i, j]] * mask[[i, j]];
                    }
                }
            }
        }
        self.push(out, Op::MulMask { x, mask })
    }

    pub fn concat_channels(&mut self, parts: &[TensorId]) -> TensorId {
        let views: Vec<_> = parts.iter().map(|&p| self.nodes[p].value.view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat shapes must agree off-axis");
        // concatenate along an inner axis may leave a non-standard layout.
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        self.push(
            value,
            Op::ConcatChannels {
                parts: parts.to_vec(),
            },
        )
    }

    /// Stable mean BCE-from-logits plus smoothed soft-IoU complement.
    ///
    /// The target must be strictly binary. IoU is computed per batch item
    /// with smoothing constant 1 and averaged.
    pub fn bce_iou_loss(&mut self, logits: TensorId, target: Arc<ArrayD<f64>>) -> TensorId {
        let lv = &self.nodes[logits].value;
        assert_eq!(lv.shape(), target.shape(), "loss shape mismatch");
        assert!(
            target.iter().all(|&g| g == 0.0 || g == 1.0),
            "ground truth must be binary"
        );
        let value = ArrayD::from_elem(IxDyn(&[1]), bce_iou_forward(lv, &target));
        self.push(value, Op::BceIouLoss { logits, target })
    }

    /// Reverse pass seeded with ones at `root`; gradients for every node
    /// reachable from it.
    pub fn backward(&self, root: TensorId) -> Grads {
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(ArrayD::ones(self.nodes[root].value.raw_dim()));
        for id in (0..=root).rev() {
            let Some(grad) = grads[id].clone() else {
                continue;
            };
            self.backward_op(id, &grad, &mut grads);
        }
        Grads { grads }
    }

    fn backward_op(&self, id: TensorId, grad: &ArrayD<f64>, grads: &mut [Option<ArrayD<f64>>]) {
        let mut sink = |target: TensorId, contrib: ArrayD<f64>| match &mut grads[target] {
            Some(existing) => *existing += &contrib,
            slot @ None => *slot = Some(contrib),
        };
        let values = &self.nodes;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                sink(*a, grad.clone());
                sink(*b, grad.clone());
            }
            Op::Mul { a, b } => {
                sink(*a, grad * &values[*b].value);
                sink(*b, grad * &values[*a].value);
            }
            Op::Scale { x, factor } => sink(*x, grad.mapv(|g| g * factor)),
            Op::Exp { x } => sink(*x, grad * &values[id].value),
            Op::Softplus { x } => {
                let d = values[*x].value.mapv(sigmoid);
                sink(*x, grad * &d);
            }
            Op::Silu { x } => {
                let d = values[*x].value.mapv(|v| {
                    let s = sigmoid(v);
                    s * (1.0 + v * (1.0 - s))
                });
                sink(*x, grad * &d);
            }
            Op::SumAll { x } => {
                let g = grad[[0]];
                sink(*x, ArrayD::from_elem(values[*x].value.raw_dim(), g));
            }
            Op::ChannelLinear { x, w, bias } => {
                let x3 = as_bck(&values[*x].value);
                let g3 = as_bck(grad);
                let (b, c_in, k) = x3.dim();
                let wv = &values[*w].value;
                let w2 = wv
                    .view()
                    .into_shape_with_order((c_in, wv.len() / c_in))
                    .unwrap();
                let c_out = w2.ncols();
                let mut gx = Array3::zeros((b, c_in, k));
                let mut gw = Array2::<f64>::zeros((c_in, c_out));
                for bi in 0..b {
                    let gb = g3.index_axis(Axis(0), bi);
                    gx.index_axis_mut(Axis(0), bi).assign(&w2.dot(&gb));
                    gw = gw + x3.index_axis(Axis(0), bi).dot(&gb.t());
                }
                sink(
                    *x,
                    gx.into_shape_with_order(values[*x].value.raw_dim()).unwrap(),
                );
                sink(*w, gw.into_dyn());
                if let Some(bias) = bias {
                    let mut gb = ArrayD::zeros(values[*bias].value.raw_dim());
                    for bi in 0..b {
                        for ci in 0..c_out {
                            for ki in 0..k {
                                gb[[ci]] += g3[[bi, ci, ki]];
                            }
                        }
                    }
                    sink(*bias, gb);
                }
            }
            Op::MulChannel { x, v } => {
                let x3 = as_bck(&values[*x].value);
                let g3 = as_bck(grad);
                let vv = &values[*v].value;
                let (b, c, k) = x3.dim();
                let mut gx = Array3::zeros((b, c, k));
                let mut gv = ArrayD::zeros(vv.raw_dim());
                for bi in 0..b {
                    for ci in 0..c {
                        for ki in 0..k {
                            gx[[bi, ci, ki]] = g3[[bi, ci, ki]] * vv[[ci]];
                            gv[[ci]] += g3[[bi, ci, ki]] * x3[[bi, ci, ki]];
                        }
                    }
                }
                sink(
                    *x,
                    gx.into_shape_with_order(values[*x].value.raw_dim()).unwrap(),
                );
                sink(*v, gv);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let x3 = as_bck(&values[*x].value);
                let g3 = as_bck(grad);
                let gv = &values[*gamma].value;
                let (b, c, k) = x3.dim();
                let cf = c as f64;
                let mut gx = Array3::zeros((b, c, k));
                let mut ggamma = ArrayD::zeros(gv.raw_dim());
                let mut gbeta = ArrayD::zeros(values[*beta].value.raw_dim());
                for bi in 0..b {
                    for ki in 0..k {
                        let mut mean = 0.0;
                        for ci in 0..c {
                            mean += x3[[bi, ci, ki]];
                        }
                        mean /= cf;
                        let mut var = 0.0;
                        for ci in 0..c {
                            let d = x3[[bi, ci, ki]] - mean;
                            var += d * d;
                        }
                        var /= cf;
                        let inv = 1.0 / (var + eps).sqrt();
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for ci in 0..c {
                            let xhat = (x3[[bi, ci, ki]] - mean) * inv;
                            let dxhat = g3[[bi, ci, ki]] * gv[[ci]];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                            ggamma[[ci]] += g3[[bi, ci, ki]] * xhat;
                            gbeta[[ci]] += g3[[bi, ci, ki]];
                        }
                        for ci in 0..c {
                            let xhat = (x3[[bi, ci, ki]] - mean) * inv;
                            let dxhat = g3[[bi, ci, ki]] * gv[[ci]];
                            gx[[bi, ci, ki]] =
                                inv * (dxhat - sum_dxhat / cf - xhat * sum_dxhat_xhat / cf);
                        }
                    }
                }
                sink(
                    *x,
                    gx.into_shape_with_order(values[*x].value.raw_dim()).unwrap(),
                );
                sink(*gamma, ggamma);
                sink(*beta, gbeta);
            }
            Op::DepthwiseConv { x, w, bias } => {
                let xv = values[*x].value.view().into_dimensionality::<Ix4>().unwrap();
                let wv = &values[*w].value;
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
                let (b, c, h, wd) = xv.dim();
                let ks = wv.shape()[1];
                let pad = ks / 2;
                let mut gx = ArrayD::zeros(IxDyn(&[b, c, h, wd]));
                let mut gw = ArrayD::zeros(wv.raw_dim());
                let mut gb = ArrayD::zeros(values[*bias].value.raw_dim());
                for bi in 0..b {
                    for ci in 0..c {
                        for i in 0..h {
                            for j in 0..wd {
                                let g = g4[[bi, ci, i, j]];
                                gb[[ci]] += g;
                                for u in 0..ks {
                                    let si = i as isize + u as isize - pad as isize;
                                    if si < 0 || si >= h as isize {
                                        continue;
                                    }
                                    for v in 0..ks {
                                        let sj = j as isize + v as isize - pad as isize;
                                        if sj < 0 || sj >= wd as isize {
                                            continue;
                                        }
                                        gw[[ci, u, v]] +=
                                            g * xv[[bi, ci, si as usize, sj as usize]];
                                        gx[[bi, ci, si as usize, sj as usize]] +=
                                            g * wv[[ci, u, v]];
                                    }
                                }
                            }
                        }
                    }
                }
                sink(*x, gx);
                sink(*w, gw);
                sink(*bias, gb);
            }
            Op::SpaceToDepth { x, factor } => {
                let f = *factor;
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
                let (b, co_total, ho, wo) = g4.dim();
                let c = co_total / (f * f);
                let mut gx = ArrayD::zeros(IxDyn(&[b, c, ho * f, wo * f]));
                for bi in 0..b {
                    for ci in 0..c {
                        for u in 0..f {
                            for v in 0..f {
                                let co = ci * f * f + u * f + v;
                                for i in 0..ho {
                                    for j in 0..wo {
                                        gx[[bi, ci, i * f + u, j * f + v]] = g4[[bi, co, i, j]];
                                    }
                                }
                            }
                        }
                    }
                }
                sink(*x, gx);
            }
            Op::BilinearUp { x, factor } => {
                let xv = values[*x].value.view().into_dimensionality::<Ix4>().unwrap();
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
                let (b, c, h, w) = xv.dim();
                let rows = bilinear_taps(h, *factor);
                let cols = bilinear_taps(w, *factor);
                let mut gx = ArrayD::zeros(IxDyn(&[b, c, h, w]));
                for bi in 0..b {
                    for ci in 0..c {
                        for (i, &(r0, r1, t)) in rows.iter().enumerate() {
                            for (j, &(c0, c1, s)) in cols.iter().enumerate() {
                                let g = g4[[bi, ci, i, j]];
                                gx[[bi, ci, r0, c0]] += (1.0 - t) * (1.0 - s) * g;
                                gx[[bi, ci, r0, c1]] += (1.0 - t) * s * g;
                                gx[[bi, ci, r1, c0]] += t * (1.0 - s) * g;
                                gx[[bi, ci, r1, c1]] += t * s * g;
                            }
                        }
                    }
                }
                sink(*x, gx);
            }
            Op::GatherSeq { x, order } => {
                let g3 = as_bck(grad);
                let (b, c, _) = g3.dim();
                let shape = order.shape();
                let (h, w) = (shape.height(), shape.width());
                let mut gx = ArrayD::zeros(IxDyn(&[b, c, h, w]));
                for bi in 0..b {
                    for ci in 0..c {
                        for (k, &f) in order.order().iter().enumerate() {
                            gx[[bi, ci, f / w, f % w]] += g3[[bi, ci, k]];
                        }
                    }
                }
                sink(*x, gx);
            }
            Op::ScatterSeq { x, order } => {
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
                let (b, c, _, w) = g4.dim();
                let n = order.len();
                let mut gx = ArrayD::zeros(IxDyn(&[b, c, n]));
                for bi in 0..b {
                    for ci in 0..c {
                        for (k, &f) in order.order().iter().enumerate() {
                            gx[[bi, ci, k]] = g4[[bi, ci, f / w, f % w]];
                        }
                    }
                }
                sink(*x, gx);
            }
            Op::SelectiveScan {
                u,
                delta,
                b_seq,
                c_seq,
                a,
                mode,
            } => {
                let ctx = ScanCtx::gather(self, *u, *delta, *b_seq, *c_seq, *a);
                let g3 = as_bck(grad);
                let mut gu = ArrayD::zeros(values[*u].value.raw_dim());
                let mut gdelta = ArrayD::zeros(values[*delta].value.raw_dim());
                let mut gb_seq = ArrayD::zeros(values[*b_seq].value.raw_dim());
                let mut gc_seq = ArrayD::zeros(values[*c_seq].value.raw_dim());
                let mut ga = ArrayD::zeros(values[*a].value.raw_dim());
                ctx.backward(
                    self, &g3, *mode, &mut gu, &mut gdelta, &mut gb_seq, &mut gc_seq, &mut ga,
                );
                sink(*u, gu);
                sink(*delta, gdelta);
                sink(*b_seq, gb_seq);
                sink(*c_seq, gc_seq);
                sink(*a, ga);
            }
            Op::Dct2 { x } => {
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap().to_owned();
                sink(*x, freq::idct2(&g4).into_dyn());
            }
            Op::Idct2 { x } => {
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap().to_owned();
                sink(*x, freq::dct2(&g4).into_dyn());
            }
            Op::MulMask { x, mask } => {
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
                let (b, c, h, w) = g4.dim();
                let mut gx = ArrayD::zeros(IxDyn(&[b, c, h, w]));
                for bi in 0..b {
                    for ci in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                gx[[bi, ci, i, j]] = g4[[bi, ci, i, j]] * mask[[i, j]];
                            }
                        }
                    }
                }
                sink(*x, gx);
            }
            Op::ConcatChannels { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let pc = values[p].value.shape()[1];
                    let slice = grad
                        .slice_axis(Axis(1), ndarray::Slice::from(offset..offset + pc))
                        .to_owned();
                    sink(p, slice);
                    offset += pc;
                }
            }
            Op::BceIouLoss { logits, target } => {
                let g = grad[[0]];
                let glogits = bce_iou_backward(&values[*logits].value, target).mapv(|v| v * g);
                sink(*logits, glogits);
            }
        }
    }
}

/// Source taps `(lo, hi, frac)` for half-pixel bilinear interpolation.
fn bilinear_taps(n: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..n * factor)
        .map(|i| {
            let src = (i as f64 + 0.5) / factor as f64 - 0.5;
            let lo = src.floor();
            let t = src - lo;
            // Clamping replicates edge rows/cols; the fraction then blends
            // equal values so borders stay exact.
            let lo_i = (lo.max(0.0) as usize).min(n - 1);
            let hi_i = ((lo + 1.0).max(0.0) as usize).min(n - 1);
            (lo_i, hi_i, t.clamp(0.0, 1.0))
        })
        .collect()
}

/// Shared shapes and the per-token recurrence step for the selective scan.
struct ScanCtx {
    u: TensorId,
    delta: TensorId,
    b_seq: TensorId,
    c_seq: TensorId,
    a: TensorId,
    batch: usize,
    channels: usize,
    d_state: usize,
    len: usize,
}

impl ScanCtx {
    fn gather(
        tape: &Tape,
        u: TensorId,
        delta: TensorId,
        b_seq: TensorId,
        c_seq: TensorId,
        a: TensorId,
    ) -> Self {
        let us = tape.nodes[u].value.shape().to_vec();
        let bs = tape.nodes[b_seq].value.shape().to_vec();
        let sa = tape.nodes[a].value.shape().to_vec();
        assert_eq!(us, tape.nodes[delta].value.shape());
        assert_eq!(bs, tape.nodes[c_seq].value.shape());
        assert_eq!(sa, vec![us[1], bs[1]]);
        assert_eq!(us[0], bs[0]);
        assert_eq!(us[2], bs[2]);
        Self {
            u,
            delta,
            b_seq,
            c_seq,
            a,
            batch: us[0],
            channels: us[1],
            d_state: bs[1],
            len: us[2],
        }
    }

    fn step(&self, tape: &Tape, bi: usize, ci: usize, k: usize, h: &mut [f64], mode: ZohMode) -> f64 {
        let uv = &tape.nodes[self.u].value;
        let dv = &tape.nodes[self.delta].value;
        let bv = &tape.nodes[self.b_seq].value;
        let cv = &tape.nodes[self.c_seq].value;
        let av = &tape.nodes[self.a].value;
        let dt = dv[[bi, ci, k]];
        let uk = uv[[bi, ci, k]];
        let mut y = 0.0;
        for s in 0..self.d_state {
            let a = av[[ci, s]];
            let e = (dt * a).exp();
            let phi = match mode {
                ZohMode::Simplified => dt,
                ZohMode::Exact => {
                    if (dt * a).abs() < 1e-8 {
                        dt
                    } else {
                        (e - 1.0) / a
                    }
                }
            };
            h[s] = e * h[s] + phi * bv[[bi, s, k]] * uk;
            y += cv[[bi, s, k]] * h[s];
        }
        y
    }

    /// Backpropagation through time; recomputes the forward states.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        tape: &Tape,
        g3: &ArrayView3<f64>,
        mode: ZohMode,
        gu: &mut ArrayD<f64>,
        gdelta: &mut ArrayD<f64>,
        gb_seq: &mut ArrayD<f64>,
        gc_seq: &mut ArrayD<f64>,
        ga: &mut ArrayD<f64>,
    ) {
        let uv = &tape.nodes[self.u].value;
        let dv = &tape.nodes[self.delta].value;
        let bv = &tape.nodes[self.b_seq].value;
        let cv = &tape.nodes[self.c_seq].value;
        let av = &tape.nodes[self.a].value;
        let (s_dim, len) = (self.d_state, self.len);
        // States h[s, 0..=len]; column 0 is the zero initial state.
        let mut states = Array2::<f64>::zeros((s_dim, len + 1));
        let mut e_cache = Array2::<f64>::zeros((s_dim, len));
        let mut phi_cache = Array2::<f64>::zeros((s_dim, len));
        for bi in 0..self.batch {
            for ci in 0..self.channels {
                for k in 0..len {
                    let dt = dv[[bi, ci, k]];
                    let uk = uv[[bi, ci, k]];
                    for s in 0..s_dim {
                        let a = av[[ci, s]];
                        let e = (dt * a).exp();
                        let phi = match mode {
                            ZohMode::Simplified => dt,
                            ZohMode::Exact => {
                                if (dt * a).abs() < 1e-8 {
                                    dt
                                } else {
                                    (e - 1.0) / a
                                }
                            }
                        };
                        e_cache[[s, k]] = e;
                        phi_cache[[s, k]] = phi;
                        states[[s, k + 1]] = e * states[[s, k]] + phi * bv[[bi, s, k]] * uk;
                    }
                }
                let mut gh = vec![0.0; s_dim];
                gh.iter_mut().for_each(|v| *v = 0.0);
                for k in (0..len).rev() {
                    let gy = g3[[bi, ci, k]];
                    let dt = dv[[bi, ci, k]];
                    let uk = uv[[bi, ci, k]];
                    for s in 0..s_dim {
                        gh[s] += gy * cv[[bi, s, k]];
                        gc_seq[[bi, s, k]] += gy * states[[s, k + 1]];

                        let a = av[[ci, s]];
                        let e = e_cache[[s, k]];
                        let phi = phi_cache[[s, k]];
                        let h_prev = states[[s, k]];
                        let ge = gh[s] * h_prev;
                        let gphi = gh[s] * bv[[bi, s, k]] * uk;
                        gb_seq[[bi, s, k]] += gh[s] * phi * uk;
                        gu[[bi, ci, k]] += gh[s] * phi * bv[[bi, s, k]];
                        let (dphi_ddt, dphi_da) = match mode {
                            ZohMode::Simplified => (1.0, 0.0),
                            ZohMode::Exact => {
                                if (dt * a).abs() < 1e-8 {
                                    (1.0, 0.0)
                                } else {
                                    (e, (dt * e - phi) / a)
                                }
                            }
                        };
                        gdelta[[bi, ci, k]] += ge * a * e + gphi * dphi_ddt;
                        ga[[ci, s]] += ge * dt * e + gphi * dphi_da;
                        gh[s] *= e;
                    }
                }
            }
        }
    }
}

fn bce_iou_forward(logits: &ArrayD<f64>, target: &ArrayD<f64>) -> f64 {
    let total = logits.len() as f64;
    let mut bce = 0.0;
    for (&y, &g) in logits.iter().zip(target.iter()) {
        bce += y.max(0.0) - y * g + (-y.abs()).exp().ln_1p();
    }
    bce /= total;

    let batch = logits.shape()[0];
    let per = logits.len() / batch;
    let lflat = logits.view().into_shape_with_order((batch, per)).unwrap();
    let gflat = target.view().into_shape_with_order((batch, per)).unwrap();
    let mut iou_loss = 0.0;
    for bi in 0..batch {
        let mut inter = 0.0;
        let mut union = 0.0;
        for k in 0..per {
            let p = sigmoid(lflat[[bi, k]]);
            let g = gflat[[bi, k]];
            inter += p * g;
            union += p + g;
        }
        union -= inter;
        iou_loss += 1.0 - (inter + 1.0) / (union + 1.0);
    }
    bce + iou_loss / batch as f64
}

fn bce_iou_backward(logits: &ArrayD<f64>, target: &ArrayD<f64>) -> ArrayD<f64> {
    let total = logits.len() as f64;
    let batch = logits.shape()[0];
    let per = logits.len() / batch;
    let lflat = logits.view().into_shape_with_order((batch, per)).unwrap();
    let gflat = target.view().into_shape_with_order((batch, per)).unwrap();
    let mut grad = ArrayD::zeros(logits.raw_dim());
    {
        let mut gview = grad.view_mut().into_shape_with_order((batch, per)).unwrap();
        for bi in 0..batch {
            let mut inter = 0.0;
            let mut union = 0.0;
            for k in 0..per {
                let p = sigmoid(lflat[[bi, k]]);
                let g = gflat[[bi, k]];
                inter += p * g;
                union += p + g;
            }
            union -= inter;
            let denom = (union + 1.0) * (union + 1.0);
            for k in 0..per {
                let y = lflat[[bi, k]];
                let p = sigmoid(y);
                let g = gflat[[bi, k]];
                // BCE: d/dy of the mean is (sigmoid(y) - g) / total.
                let dbce = (p - g) / total;
                // r = (I+1)/(U+1): dr/dp = [g(U+1) - (I+1)(1-g)] / (U+1)^2.
                let dr_dp = (g * (union + 1.0) - (inter + 1.0) * (1.0 - g)) / denom;
                let diou = -dr_dp * p * (1.0 - p) / batch as f64;
                gview[[bi, k]] = dbce + diou;
            }
        }
    }
    grad
}
