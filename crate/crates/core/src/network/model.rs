//! The desk-scale encoder-decoder segmentation model.
//!
//! Pipeline: 4x4 patch embedding (no positional term), a four-stage VSS
//! encoder over cross-scan orders at resolutions 1/4, 1/8, 1/16, 1/32,
//! dual-frequency skip modules after the first three stages (DCT split,
//! window-scan branch on the high band, dilation-scan branch on the low
//! band, concat + 1x1 fuse as a residual), a three-stage decoder of HVSS
//! blocks (helix-scan SS2D with a cross-scan supplement and a multi-scale
//! depthwise feed-forward), one 1x1 segmentation head per decoder stage,
//! and a final 4x bilinear expansion to full resolution.
//!
//! Every forward runs on the autodiff tape; the backward pass is verified
//! against central finite differences by `gradcheck`.

use std::sync::Arc;

use ndarray::{Array2, ArrayD, Ix4};

use crate::freq::SpectrumMask;
use crate::rng::SeededRng;
use crate::scan::{cross_scan, dilation_scan, helix_scan, window_scan, GridShape, ScanOrder, ScanSet};
use crate::tape::{Grads, Tape, TensorId};
use crate::FeatureMap;

use super::config::{DirectionSharing, TrambaConfig};
use super::params::{ParamBuilder, ParamId, ParamSet};
use super::NetworkError;

struct LinearLayer {
    w: ParamId,
    b: Option<ParamId>,
}

struct NormLayer {
    gamma: ParamId,
    beta: ParamId,
}

struct S6Layer {
    w_x_dt: ParamId,
    w_dt: ParamId,
    b_dt: ParamId,
    w_b: ParamId,
    w_c: ParamId,
    a_log: ParamId,
    d_skip: ParamId,
}

struct Ss2dLayer {
    dirs: Vec<S6Layer>, // one entry when directions share weights, else four
}

impl Ss2dLayer {
    fn dir(&self, d: usize) -> &S6Layer {
        if self.dirs.len() == 1 {
            &self.dirs[0]
        } else {
            &self.dirs[d]
        }
    }
}

struct VssBlock {
    norm1: NormLayer,
    ss2d: Ss2dLayer,
    norm2: NormLayer,
    ffn_in: LinearLayer,
    ffn_out: LinearLayer,
}

struct ConvLayer {
    w: ParamId,
    b: ParamId,
}

struct HvssBlock {
    norm1: NormLayer,
    helix: Ss2dLayer,
    cross: Ss2dLayer,
    norm2: NormLayer,
    expand: LinearLayer,
    dw: [ConvLayer; 3], // kernel sizes 3, 5, 7
    contract: LinearLayer,
}

struct DfvssModule {
    high: VssBlock,
    low: VssBlock,
    fuse: LinearLayer,
}

struct Layout {
    embed: LinearLayer,
    merges: [LinearLayer; 3], // before encoder stages 2..4
    encoder: [Vec<VssBlock>; 4],
    skips: [DfvssModule; 3],
    dec_fuse: [LinearLayer; 3], // indexed by stage-1 for stages 1..3
    decoder: [Vec<HvssBlock>; 3],
    seg: [LinearLayer; 3],
    final_proj: LinearLayer,
}

/// Per-stage traversal orders and spectrum masks.
struct StageGeo {
    cross: [Arc<ScanOrder>; 4],
    window: [Arc<ScanOrder>; 4],
    dilation: [Arc<ScanOrder>; 4],
    helix: [Arc<ScanOrder>; 4],
    low_mask: Arc<Array2<f64>>,
    high_mask: Arc<Array2<f64>>,
}

fn arcs(set: ScanSet) -> [Arc<ScanOrder>; 4] {
    [
        Arc::new(set.forward_a),
        Arc::new(set.forward_b),
        Arc::new(set.backward_a),
        Arc::new(set.backward_b),
    ]
}

/// Stage-indexed feature maps of one forward pass.
///
/// `encoder[s-1]` is the stage-`s` encoder output at resolution `1/4 ..
/// 1/32`; `skips`, `fused`, `decoder`, `seg` are indexed the same way for
/// stages 1..3; `seg_full` is the full-resolution logit map.
#[derive(Debug, Clone)]
pub struct StageOutputs {
    pub encoder: [FeatureMap; 4],
    pub skips: [FeatureMap; 3],
    pub fused: [FeatureMap; 3],
    pub decoder: [FeatureMap; 3],
    pub seg: [FeatureMap; 3],
    pub seg_full: FeatureMap,
}

/// Tape ids of the same outputs, for building losses on the graph.
pub struct TapeOutputs {
    pub encoder: [TensorId; 4],
    pub skips: [TensorId; 3],
    pub fused: [TensorId; 3],
    pub decoder: [TensorId; 3],
    pub seg: [TensorId; 3],
    pub seg_full: TensorId,
}

pub struct Tramba {
    config: TrambaConfig,
    params: ParamSet,
    layout: Layout,
    geo: Vec<StageGeo>, // stages 1..=4 at index s-1
}

fn build_linear(b: &mut ParamBuilder, name: &str, fan_in: usize, fan_out: usize) -> LinearLayer {
    LinearLayer {
        w: b.linear_weight(format!("{name}.w"), fan_in, fan_out),
        b: Some(b.zeros(format!("{name}.b"), &[fan_out])),
    }
}

fn build_norm(b: &mut ParamBuilder, name: &str, channels: usize) -> NormLayer {
    NormLayer {
        gamma: b.ones(format!("{name}.gamma"), &[channels]),
        beta: b.zeros(format!("{name}.beta"), &[channels]),
    }
}

fn build_s6(b: &mut ParamBuilder, name: &str, channels: usize, d_state: usize, dt_rank: usize) -> S6Layer {
    S6Layer {
        w_x_dt: b.linear_weight(format!("{name}.w_x_dt"), channels, dt_rank),
        w_dt: b.linear_weight(format!("{name}.w_dt"), dt_rank, channels),
        b_dt: b.dt_bias(format!("{name}.b_dt"), channels),
        w_b: b.linear_weight(format!("{name}.w_b"), channels, d_state),
        w_c: b.linear_weight(format!("{name}.w_c"), channels, d_state),
        a_log: b.a_log(format!("{name}.a_log"), channels, d_state),
        // The merge sums four directions; 1/4 keeps the combined skip near
        // identity scale at init.
        d_skip: b.constant(format!("{name}.d_skip"), &[channels], 0.25),
    }
}

fn build_ss2d(b: &mut ParamBuilder, name: &str, channels: usize, config: &TrambaConfig) -> Ss2dLayer {
    let dt_rank = config.dt_rank(channels);
    let dirs = match config.direction_sharing {
        DirectionSharing::Shared => vec![build_s6(b, &format!("{name}.shared"), channels, config.d_state, dt_rank)],
        DirectionSharing::PerDirection => (0..4)
            .map(|d| build_s6(b, &format!("{name}.dir{d}"), channels, config.d_state, dt_rank))
            .collect(),
    };
    Ss2dLayer { dirs }
}

fn build_vss(b: &mut ParamBuilder, name: &str, channels: usize, config: &TrambaConfig) -> VssBlock {
    let hidden = channels * config.ffn_expand;
    VssBlock {
        norm1: build_norm(b, &format!("{name}.norm1"), channels),
        ss2d: build_ss2d(b, &format!("{name}.ssm"), channels, config),
        norm2: build_norm(b, &format!("{name}.norm2"), channels),
        ffn_in: build_linear(b, &format!("{name}.ffn_in"), channels, hidden),
        ffn_out: build_linear(b, &format!("{name}.ffn_out"), hidden, channels),
    }
}

fn build_hvss(b: &mut ParamBuilder, name: &str, channels: usize, config: &TrambaConfig) -> HvssBlock {
    let hidden = channels * config.ffn_expand;
    HvssBlock {
        norm1: build_norm(b, &format!("{name}.norm1"), channels),
        helix: build_ss2d(b, &format!("{name}.helix"), channels, config),
        cross: build_ss2d(b, &format!("{name}.cross"), channels, config),
        norm2: build_norm(b, &format!("{name}.norm2"), channels),
        expand: build_linear(b, &format!("{name}.expand"), channels, hidden),
        dw: [3, 5, 7].map(|k| ConvLayer {
            w: b.conv_weight(format!("{name}.dw{k}.w"), hidden, k),
            b: b.zeros(format!("{name}.dw{k}.b"), &[hidden]),
        }),
        contract: build_linear(b, &format!("{name}.contract"), hidden, channels),
    }
}

impl Tramba {
    pub fn new(config: TrambaConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = SeededRng::new(config.seed);
        let mut b = ParamBuilder {
            set: &mut params,
            rng: &mut rng,
        };

        let embed = build_linear(&mut b, "embed", 3 * 16, config.stage_channels(1));
        let merges = [2usize, 3, 4].map(|s| {
            build_linear(
                &mut b,
                &format!("enc{s}.merge"),
                4 * config.stage_channels(s - 1),
                config.stage_channels(s),
            )
        });
        let encoder = [1usize, 2, 3, 4].map(|s| {
            (0..config.encoder_depths[s - 1])
                .map(|i| build_vss(&mut b, &format!("enc{s}.block{i}"), config.stage_channels(s), &config))
                .collect::<Vec<_>>()
        });
        let skips = [1usize, 2, 3].map(|s| {
            let c = config.stage_channels(s);
            DfvssModule {
                high: build_vss(&mut b, &format!("skip{s}.high"), c, &config),
                low: build_vss(&mut b, &format!("skip{s}.low"), c, &config),
                fuse: build_linear(&mut b, &format!("skip{s}.fuse"), 2 * c, c),
            }
        });
        // Decoder stage s fuses the stage skip (C_s) with the upsampled
        // deeper features (C_{s+1} = 2 C_s), hence 3 C_s input channels.
        let dec_fuse = [1usize, 2, 3].map(|s| {
            build_linear(
                &mut b,
                &format!("dec{s}.fuse"),
                3 * config.stage_channels(s),
                config.stage_channels(s),
            )
        });
        let decoder = [1usize, 2, 3].map(|s| {
            (0..config.decoder_depths[s - 1])
                .map(|i| build_hvss(&mut b, &format!("dec{s}.block{i}"), config.stage_channels(s), &config))
                .collect::<Vec<_>>()
        });
        // Head gains start small so initial logits sit near zero.
        let seg = [1usize, 2, 3].map(|s| LinearLayer {
            w: b.linear_weight_scaled(format!("seg{s}.w"), config.stage_channels(s), 1, 0.1),
            b: Some(b.zeros(format!("seg{s}.b"), &[1])),
        });
        let final_proj = LinearLayer {
            w: b.linear_weight_scaled("final.w".into(), config.stage_channels(1), 1, 0.1),
            b: Some(b.zeros("final.b".into(), &[1])),
        };

        let layout = Layout {
            embed,
            merges,
            encoder,
            skips,
            dec_fuse,
            decoder,
            seg,
            final_proj,
        };

        let mut geo = Vec::with_capacity(4);
        for s in 1..=4 {
            let (h, w) = config.stage_size(s);
            let shape = GridShape::new(h, w).map_err(|e| NetworkError::BadConfig(e.to_string()))?;
            let mask = SpectrumMask::new(h, w, config.dct_cutoff)
                .map_err(|e| NetworkError::BadConfig(e.to_string()))?;
            let low = mask.low_f64();
            let high = low.mapv(|v| 1.0 - v);
            geo.push(StageGeo {
                cross: arcs(cross_scan(shape)),
                window: arcs(
                    window_scan(shape, config.window_size)
                        .map_err(|e| NetworkError::BadConfig(e.to_string()))?,
                ),
                dilation: arcs(
                    dilation_scan(shape, config.dilation_rate)
                        .map_err(|e| NetworkError::BadConfig(e.to_string()))?,
                ),
                helix: arcs(helix_scan(shape)),
                low_mask: Arc::new(low),
                high_mask: Arc::new(high),
            });
        }

        Ok(Self {
            config,
            params,
            layout,
            geo,
        })
    }

    pub fn config(&self) -> &TrambaConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn linear(&self, t: &mut Tape, leaf: &[TensorId], x: TensorId, layer: &LinearLayer) -> TensorId {
        t.channel_linear(x, leaf[layer.w], layer.b.map(|b| leaf[b]))
    }

    fn norm(&self, t: &mut Tape, leaf: &[TensorId], x: TensorId, layer: &NormLayer) -> TensorId {
        t.layer_norm(x, leaf[layer.gamma], leaf[layer.beta])
    }

    fn ss2d(
        &self,
        t: &mut Tape,
        leaf: &[TensorId],
        x: TensorId,
        orders: &[Arc<ScanOrder>; 4],
        layer: &Ss2dLayer,
    ) -> TensorId {
        let mut merged = None;
        for (d, order) in orders.iter().enumerate() {
            let w = layer.dir(d);
            let seq = t.gather_seq(x, order.clone());
            let dt_low = t.channel_linear(seq, leaf[w.w_x_dt], None);
            let delta_raw = t.channel_linear(dt_low, leaf[w.w_dt], Some(leaf[w.b_dt]));
            let delta = t.softplus(delta_raw);
            let b_seq = t.channel_linear(seq, leaf[w.w_b], None);
            let c_seq = t.channel_linear(seq, leaf[w.w_c], None);
            let ea = t.exp(leaf[w.a_log]);
            let a = t.scale(ea, -1.0);
            let scan = t.selective_scan(seq, delta, b_seq, c_seq, a, self.config.zoh_mode);
            let skip = t.mul_channel(seq, leaf[w.d_skip]);
            let y = t.add(scan, skip);
            let back = t.scatter_seq(y, order.clone());
            merged = Some(match merged {
                None => back,
                Some(m) => t.add(m, back),
            });
        }
        merged.expect("four directions")
    }

    fn vss_block(
        &self,
        t: &mut Tape,
        leaf: &[TensorId],
        x: TensorId,
        orders: &[Arc<ScanOrder>; 4],
        block: &VssBlock,
    ) -> TensorId {
        let n = self.norm(t, leaf, x, &block.norm1);
        let branch = self.ss2d(t, leaf, n, orders, &block.ss2d);
        let x = t.add(x, branch);
        let n2 = self.norm(t, leaf, x, &block.norm2);
        let f = self.linear(t, leaf, n2, &block.ffn_in);
        let f = t.silu(f);
        let f = self.linear(t, leaf, f, &block.ffn_out);
        t.add(x, f)
    }

    fn dfvss(
        &self,
        t: &mut Tape,
        leaf: &[TensorId],
        x: TensorId,
        geo: &StageGeo,
        module: &DfvssModule,
    ) -> TensorId {
        let spectrum = t.dct2(x);
        let low_spec = t.mul_mask(spectrum, geo.low_mask.clone());
        let high_spec = t.mul_mask(spectrum, geo.high_mask.clone());
        let low = t.idct2(low_spec);
        let high = t.idct2(high_spec);
        let hf = self.vss_block(t, leaf, high, &geo.window, &module.high);
        let lf = self.vss_block(t, leaf, low, &geo.dilation, &module.low);
        let cat = t.concat_channels(&[hf, lf]);
        let fused = self.linear(t, leaf, cat, &module.fuse);
        t.add(x, fused)
    }

    fn hvss_block(
        &self,
        t: &mut Tape,
        leaf: &[TensorId],
        x: TensorId,
        geo: &StageGeo,
        block: &HvssBlock,
    ) -> TensorId {
        let n = self.norm(t, leaf, x, &block.norm1);
        let helix = self.ss2d(t, leaf, n, &geo.helix, &block.helix);
        let cross = self.ss2d(t, leaf, n, &geo.cross, &block.cross);
        let branch = t.add(helix, cross);
        let x = t.add(x, branch);
        let n2 = self.norm(t, leaf, x, &block.norm2);
        let f = self.linear(t, leaf, n2, &block.expand);
        let f = t.silu(f);
        let d3 = t.depthwise_conv(f, leaf[block.dw[0].w], leaf[block.dw[0].b]);
        let d5 = t.depthwise_conv(f, leaf[block.dw[1].w], leaf[block.dw[1].b]);
        let d7 = t.depthwise_conv(f, leaf[block.dw[2].w], leaf[block.dw[2].b]);
        let sum = t.add(d3, d5);
        let sum = t.add(sum, d7);
        let f = t.silu(sum);
        let f = self.linear(t, leaf, f, &block.contract);
        t.add(x, f)
    }

    fn check_image(&self, img: &FeatureMap) -> Result<(), NetworkError> {
        let (_, c, h, w) = img.dim();
        if c != 3 || (h, w) != self.config.input_size {
            return Err(NetworkError::BadInput(format!(
                "expected (batch, 3, {}, {}) image, got {:?}",
                self.config.input_size.0,
                self.config.input_size.1,
                img.dim()
            )));
        }
        Ok(())
    }

    /// Build the whole forward graph on `tape`; returns the output ids and
    /// the tape ids of every parameter (aligned with the parameter set).
    pub fn forward_on_tape(
        &self,
        t: &mut Tape,
        img: &FeatureMap,
    ) -> Result<(TapeOutputs, Vec<TensorId>), NetworkError> {
        self.check_image(img)?;
        let leaf = self.params.register(t);
        let x0 = t.leaf(img.clone().into_dyn());

        // 4x4 patch embedding, linear projection, no positional term.
        let patches = t.space_to_depth(x0, 4);
        let mut x = self.linear(t, &leaf, patches, &self.layout.embed);

        let mut encoder = [0usize; 4];
        for s in 1..=4 {
            if s > 1 {
                let merged = t.space_to_depth(x, 2);
                x = self.linear(t, &leaf, merged, &self.layout.merges[s - 2]);
            }
            for block in &self.layout.encoder[s - 1] {
                x = self.vss_block(t, &leaf, x, &self.geo[s - 1].cross, block);
            }
            encoder[s - 1] = x;
        }

        let mut skips = [0usize; 3];
        for s in 1..=3 {
            skips[s - 1] = self.dfvss(
                t,
                &leaf,
                encoder[s - 1],
                &self.geo[s - 1],
                &self.layout.skips[s - 1],
            );
        }

        let mut fused = [0usize; 3];
        let mut decoder = [0usize; 3];
        let mut seg = [0usize; 3];
        let mut deeper = encoder[3];
        for s in (1..=3).rev() {
            let up = t.bilinear_up(deeper, 2);
            let cat = t.concat_channels(&[skips[s - 1], up]);
            let f = self.linear(t, &leaf, cat, &self.layout.dec_fuse[s - 1]);
            fused[s - 1] = f;
            let mut y = f;
            for block in &self.layout.decoder[s - 1] {
                y = self.hvss_block(t, &leaf, y, &self.geo[s - 1], block);
            }
            decoder[s - 1] = y;
            seg[s - 1] = self.linear(t, &leaf, y, &self.layout.seg[s - 1]);
            deeper = y;
        }

        let up4 = t.bilinear_up(decoder[0], 4);
        let seg_full = self.linear(t, &leaf, up4, &self.layout.final_proj);

        Ok((
            TapeOutputs {
                encoder,
                skips,
                fused,
                decoder,
                seg,
                seg_full,
            },
            leaf,
        ))
    }

    fn extract(t: &Tape, id: TensorId) -> FeatureMap {
        t.value(id)
            .clone()
            .into_dimensionality::<Ix4>()
            .expect("stage outputs are rank 4")
    }

    /// Plain forward pass returning owned feature maps per stage.
    pub fn forward(&self, img: &FeatureMap) -> Result<StageOutputs, NetworkError> {
        let mut t = Tape::new();
        let (ids, _) = self.forward_on_tape(&mut t, img)?;
        Ok(StageOutputs {
            encoder: ids.encoder.map(|id| Self::extract(&t, id)),
            skips: ids.skips.map(|id| Self::extract(&t, id)),
            fused: ids.fused.map(|id| Self::extract(&t, id)),
            decoder: ids.decoder.map(|id| Self::extract(&t, id)),
            seg: ids.seg.map(|id| Self::extract(&t, id)),
            seg_full: Self::extract(&t, ids.seg_full),
        })
    }

    /// Full-resolution saliency probabilities, `sigmoid(seg_full)`.
    pub fn predict(&self, img: &FeatureMap) -> Result<FeatureMap, NetworkError> {
        let out = self.forward(img)?;
        Ok(out.seg_full.mapv(|v| 1.0 / (1.0 + (-v).exp())))
    }

    fn check_gt(&self, gt: &FeatureMap, batch: usize) -> Result<(), NetworkError> {
        let (b, c, h, w) = gt.dim();
        if b != batch || c != 1 || (h, w) != self.config.input_size {
            return Err(NetworkError::BadInput(format!(
                "expected (batch, 1, {}, {}) mask, got {:?}",
                self.config.input_size.0,
                self.config.input_size.1,
                gt.dim()
            )));
        }
        if let Some(&bad) = gt.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(NetworkError::NonBinaryGroundTruth(bad));
        }
        Ok(())
    }

    /// Deep-supervised loss on the tape: the full-resolution head plus each
    /// stage head against the nearest-downsampled mask, equally weighted.
    pub fn loss_on_tape(
        &self,
        t: &mut Tape,
        outputs: &TapeOutputs,
        gt: &FeatureMap,
    ) -> Result<TensorId, NetworkError> {
        let batch = t.value(outputs.seg_full).shape()[0];
        self.check_gt(gt, batch)?;
        let mut total = t.bce_iou_loss(outputs.seg_full, Arc::new(gt.clone().into_dyn()));
        for s in 1..=3 {
            let factor = 4 << (s - 1);
            let down = nearest_downsample(gt, factor);
            let l = t.bce_iou_loss(outputs.seg[s - 1], Arc::new(down.into_dyn()));
            total = t.add(total, l);
        }
        Ok(total)
    }

    /// Deep-supervised loss of an already-computed forward pass.
    pub fn loss(&self, outputs: &StageOutputs, gt: &FeatureMap) -> Result<f64, NetworkError> {
        let mut t = Tape::new();
        let ids = TapeOutputs {
            encoder: [0; 4].map(|_| t.leaf(ArrayD::zeros(ndarray::IxDyn(&[1])))),
            skips: [0; 3].map(|_| t.leaf(ArrayD::zeros(ndarray::IxDyn(&[1])))),
            fused: [0; 3].map(|_| t.leaf(ArrayD::zeros(ndarray::IxDyn(&[1])))),
            decoder: [0; 3].map(|_| t.leaf(ArrayD::zeros(ndarray::IxDyn(&[1])))),
            seg: [
                t.leaf(outputs.seg[0].clone().into_dyn()),
                t.leaf(outputs.seg[1].clone().into_dyn()),
                t.leaf(outputs.seg[2].clone().into_dyn()),
            ],
            seg_full: t.leaf(outputs.seg_full.clone().into_dyn()),
        };
        let loss = self.loss_on_tape(&mut t, &ids, gt)?;
        Ok(t.scalar(loss))
    }

    /// One combined forward + backward pass.
    ///
    /// Returns the loss and the gradient of every parameter, aligned with
    /// the parameter set (None for parameters the loss does not reach).
    pub fn loss_and_grads(
        &self,
        img: &FeatureMap,
        gt: &FeatureMap,
    ) -> Result<(f64, Vec<Option<ArrayD<f64>>>), NetworkError> {
        let mut t = Tape::new();
        let (outputs, leaf) = self.forward_on_tape(&mut t, img)?;
        let loss = self.loss_on_tape(&mut t, &outputs, gt)?;
        let value = t.scalar(loss);
        let grads = t.backward(loss);
        Ok((value, collect_param_grads(&grads, &leaf)))
    }
}

/// Pull per-parameter gradients out of a backward pass.
pub fn collect_param_grads(grads: &Grads, leaf: &[TensorId]) -> Vec<Option<ArrayD<f64>>> {
    leaf.iter().map(|&id| grads.get(id).cloned()).collect()
}

/// Nearest-neighbor mask downsampling by an integer factor, sampling the
/// center of each block; preserves binarity.
pub fn nearest_downsample(gt: &FeatureMap, factor: usize) -> FeatureMap {
    let (b, c, h, w) = gt.dim();
    assert!(h % factor == 0 && w % factor == 0);
    let (ho, wo) = (h / factor, w / factor);
    FeatureMap::from_shape_fn((b, c, ho, wo), |(bi, ci, i, j)| {
        gt[[bi, ci, i * factor + factor / 2, j * factor + factor / 2]]
    })
}
