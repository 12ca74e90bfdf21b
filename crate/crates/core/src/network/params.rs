//! Named parameter registry.
//!
//! All learnable tensors live in one ordered store; layer descriptions hold
//! indices into it. Registration order is deterministic, which makes tape
//! leaf ids, gradient application, and the golden record reproducible.

use ndarray::{ArrayD, IxDyn};

use crate::rng::SeededRng;
use crate::ssm::softplus_inv;
use crate::tape::{Tape, TensorId};

/// Index of one parameter tensor in a [`ParamSet`].
pub type ParamId = usize;

#[derive(Debug, Clone)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.values[id]
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Register every parameter as a tape leaf, in order; `leaf_ids[p]` is
    /// the tape id of parameter `p`.
    pub fn register(&self, tape: &mut Tape) -> Vec<TensorId> {
        self.values.iter().map(|v| tape.leaf(v.clone())).collect()
    }

    /// Gradient-descent update over all parameters.
    pub fn apply_step(&mut self, grads: &[Option<ArrayD<f64>>], lr: f64) {
        for (value, grad) in self.values.iter_mut().zip(grads.iter()) {
            if let Some(g) = grad {
                value.zip_mut_with(g, |v, gv| *v -= lr * gv);
            }
        }
    }

    pub fn zero_all(&mut self) {
        for v in self.values.iter_mut() {
            v.fill(0.0);
        }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Builder that pairs the registry with the init RNG and hierarchical names.
pub struct ParamBuilder<'a> {
    pub set: &'a mut ParamSet,
    pub rng: &'a mut SeededRng,
}

impl ParamBuilder<'_> {
    fn uniform_tensor(&mut self, shape: &[usize], bound: f64) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| self.rng.uniform_in(-bound, bound))
    }

    /// Scaled-uniform weight matrix `[fan_in, fan_out]`.
    pub fn linear_weight(&mut self, name: String, fan_in: usize, fan_out: usize) -> ParamId {
        self.linear_weight_scaled(name, fan_in, fan_out, 1.0)
    }

    /// Like [`Self::linear_weight`] with an extra gain on the init bound
    /// (small gains keep head logits near zero at the start of training).
    pub fn linear_weight_scaled(
        &mut self,
        name: String,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
    ) -> ParamId {
        let bound = gain / (fan_in as f64).sqrt();
        let w = self.uniform_tensor(&[fan_in, fan_out], bound);
        self.set.add(name, w)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.set.add(name, ArrayD::from_elem(IxDyn(shape), value))
    }

    pub fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.set.add(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn ones(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.set.add(name, ArrayD::ones(IxDyn(shape)))
    }

    /// Depthwise kernel `[channels, k, k]`, scaled-uniform.
    pub fn conv_weight(&mut self, name: String, channels: usize, k: usize) -> ParamId {
        let bound = 1.0 / ((k * k) as f64).sqrt();
        let w = self.uniform_tensor(&[channels, k, k], bound);
        self.set.add(name, w)
    }

    /// Step-size bias drawn so softplus lands in `[1e-3, 0.1]`.
    pub fn dt_bias(&mut self, name: String, channels: usize) -> ParamId {
        let v = ArrayD::from_shape_fn(IxDyn(&[channels]), |_| {
            softplus_inv(self.rng.uniform_in(1e-3, 0.1))
        });
        self.set.add(name, v)
    }

    /// State matrix log: `a_log[c][s] = ln(s + 1)`.
    pub fn a_log(&mut self, name: String, channels: usize, d_state: usize) -> ParamId {
        let v = ArrayD::from_shape_fn(IxDyn(&[channels, d_state]), |idx| ((idx[1] + 1) as f64).ln());
        self.set.add(name, v)
    }
}
