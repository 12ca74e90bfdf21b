//! Core library for traffic-scene salient object detection.
//!
//! The crate is organized around the computation pipeline of a Mamba-style
//! segmentation model specialized for traffic scenes:
//!
//! - [`scan`]: bijective 2D grid traversal orders (cross, window, dilation,
//!   helix, plus classical baselines) used to flatten feature maps into
//!   sequences for state-space processing.
//! - [`ssm`]: the discrete state-space recurrence, its convolutional form,
//!   the input-dependent selective (S6) variant, and the four-direction
//!   2D selective scan composition.
//! - [`freq`]: orthonormal 2D DCT and high/low frequency splitting.
//! - [`tape`]: a small reverse-mode automatic differentiation tape over
//!   64-bit tensors, the backbone of the network's verified backward pass.
//! - [`network`]: the desk-scale encoder-decoder model (VSS encoder,
//!   dual-frequency skip modules, helix decoder), its loss, gradient
//!   checking, and a toy training loop.
//! - [`metrics`]: the full salient-object-detection evaluation suite
//!   (MAE, F/S/E-measures, weighted F, PR curves).
//! - [`dataset`]: filename metadata codec, stratified splitting, dataset
//!   statistics, and a deterministic synthetic fixture generator.

pub mod dataset;
pub mod freq;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod scan;
pub mod ssm;
pub mod tape;

use ndarray::Array4;

/// Dense feature map: (batch, channel, height, width), 64-bit floats.
pub type FeatureMap = Array4<f64>;
