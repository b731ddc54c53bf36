//! Autoregressive density model built from monotone CDF networks.
//!
//! `log p(x) = sum_i log p(x_i | x_<i)`, where the conditional for feature `i`
//! is the derivative of a normalized monotone network whose raw parameters
//! are produced by conditioner `i` from the prefix `x_<i`.

mod conditioner;
pub(crate) mod io;
mod monotone;

pub use conditioner::{ConditionerLayout, Mode};
pub use io::{model_from_str, model_to_string, read_model, write_model, MODEL_FORMAT_TAG};
pub use monotone::{
    conditional_log_density, monotone_forward, normalized_cdf, positive_transform, MonotoneLayout, MonotoneNetParams,
    MonotoneOutput, PnnConfig, PositivityTransform,
};

use conditioner::ConditionerCache;
use monotone::EffectiveNet;

use crate::error::{Result, VsdeError};
use crate::numerics::RngStream;
use crate::scalar::Scalar;

/// Architecture of an autoregressive model over `dim` features.
#[derive(Clone, Debug, PartialEq)]
pub struct ArConfig<T> {
    pub dim: usize,
    pub pnn: PnnConfig<T>,
    pub conditioner_hidden: Vec<usize>,
    pub dropout: f64,
}

impl<T: Scalar> ArConfig<T> {
    pub fn new(dim: usize) -> Self {
        ArConfig {
            dim,
            pnn: PnnConfig::default(),
            conditioner_hidden: vec![64, 64],
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(VsdeError::Config("model dimension must be positive".into()));
        }
        if self.conditioner_hidden.is_empty() || self.conditioner_hidden.contains(&0) {
            return Err(VsdeError::Config(format!(
                "conditioner needs at least one hidden layer of positive width, got {:?}",
                self.conditioner_hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(VsdeError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.pnn.validate()
    }
}

/// Named parameter block inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Where every conditioner lives in the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelLayout {
    monotone: MonotoneLayout,
    dims: Vec<(usize, ConditionerLayout)>,
    blocks: Vec<Block>,
    n_params: usize,
}

impl ModelLayout {
    pub fn new<T: Scalar>(config: &ArConfig<T>) -> Self {
        let monotone = config.pnn.layout();
        let mut dims = Vec::with_capacity(config.dim);
        let mut blocks = Vec::new();
        let mut off = 0;
        for i in 0..config.dim {
            let cond = ConditionerLayout::new(i, &config.conditioner_hidden, monotone.n_params());
            for (name, rel, len) in cond.blocks() {
                blocks.push(Block {
                    name: format!("feature {} {name}", i + 1),
                    offset: off + rel,
                    len,
                });
            }
            let n = cond.n_params();
            dims.push((off, cond));
            off += n;
        }
        ModelLayout {
            monotone,
            dims,
            blocks,
            n_params: off,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Range of conditioner `i` (0-based feature index).
    pub fn conditioner(&self, i: usize) -> std::ops::Range<usize> {
        let (off, cond) = &self.dims[i];
        *off..off + cond.n_params()
    }

    pub fn conditioner_layout(&self, i: usize) -> &ConditionerLayout {
        &self.dims[i].1
    }

    pub fn monotone(&self) -> &MonotoneLayout {
        &self.monotone
    }

    pub fn block_of(&self, index: usize) -> Option<&Block> {
        self.blocks
            .iter()
            .find(|b| (b.offset..b.offset + b.len).contains(&index))
    }
}

/// Trained (or freshly initialized) autoregressive model. All parameters sit
/// in one flat vector; gradients use the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ArModel<T> {
    config: ArConfig<T>,
    layout: ModelLayout,
    params: Vec<T>,
}

impl<T: Scalar> ArModel<T> {
    /// Seeded initialization: conditioner weights uniform in
    /// `+-1/sqrt(fan_in)`; the output bias of every conditioner (the direct
    /// vector for feature 1) starts at a monotone network whose CDF is
    /// close to linear over the support.
    pub fn new(config: ArConfig<T>, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let layout = ModelLayout::new(&config);
        let mut params = vec![T::zero(); layout.n_params()];
        for i in 0..config.dim {
            let range = layout.conditioner(i);
            let cond = layout.conditioner_layout(i);
            let block = &mut params[range];
            for &(w_off, b_off, win, wout) in cond.dense_layers() {
                let bound = 1.0 / (win as f64).sqrt();
                for v in &mut block[w_off..w_off + win * wout] {
                    *v = T::lit(rng.uniform_range(-bound, bound));
                }
                for v in &mut block[b_off..b_off + wout] {
                    *v = T::lit(rng.uniform_range(-bound, bound));
                }
            }
            let base = initial_monotone(&config.pnn, rng);
            block[cond.output_bias()].copy_from_slice(&base);
        }
        Ok(ArModel { config, layout, params })
    }

    pub fn from_params(config: ArConfig<T>, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = ModelLayout::new(&config);
        if params.len() != layout.n_params() {
            return Err(VsdeError::Shape(format!(
                "model expects {} parameters, got {}",
                layout.n_params(),
                params.len()
            )));
        }
        Ok(ArModel { config, layout, params })
    }

    pub fn config(&self) -> &ArConfig<T> {
        &self.config
    }

    pub fn layout(&self) -> &ModelLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Raw monotone-network parameters for feature `i` (1-based) given the
    /// prefix `x_<i`.
    pub fn conditioner_forward(&self, prefix: &[T], i: usize, mode: &mut Mode<'_>) -> Result<MonotoneNetParams<T>> {
        if i == 0 || i > self.dim() {
            return Err(VsdeError::Shape(format!(
                "feature index {i} outside 1..={}",
                self.dim()
            )));
        }
        let mut cache = ConditionerCache::default();
        let raw = conditioner::forward(
            self.layout.conditioner_layout(i - 1),
            &self.params[self.layout.conditioner(i - 1)],
            prefix,
            self.config.dropout,
            mode,
            &mut cache,
        )?;
        MonotoneNetParams::new(self.config.pnn.clone(), raw)
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(VsdeError::Shape(format!(
                "sample has {} features, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        let support = self.config.pnn.support;
        if let Some(bad) = x.iter().find(|&&v| !support.contains(v)) {
            return Err(VsdeError::Domain(format!(
                "feature value {bad} outside the support [{}, {}]",
                support.low, support.high
            )));
        }
        Ok(())
    }

    /// `sum_i log p(x_i | x_<i)`.
    pub fn log_density(&self, x: &[T], mode: &mut Mode<'_>) -> Result<T> {
        self.check_input(x)?;
        let mut cache = ConditionerCache::default();
        let mut total = T::zero();
        for i in 0..self.dim() {
            let raw = conditioner::forward(
                self.layout.conditioner_layout(i),
                &self.params[self.layout.conditioner(i)],
                &x[..i],
                self.config.dropout,
                mode,
                &mut cache,
            )?;
            total += EffectiveNet::new(&self.config.pnn, &raw).log_density(x[i])?;
        }
        Ok(total)
    }

    /// Log-density and its gradient with respect to every parameter.
    pub fn grad_log_density(&self, x: &[T], mode: &mut Mode<'_>) -> Result<(T, Vec<T>)> {
        let mut grad = vec![T::zero(); self.params.len()];
        let value = self.accumulate_grad(x, mode, T::one(), &mut grad)?;
        Ok((value, grad))
    }

    /// Log-density at `x`; adds `scale * gradient` into `grad`.
    pub(crate) fn accumulate_grad(&self, x: &[T], mode: &mut Mode<'_>, scale: T, grad: &mut [T]) -> Result<T> {
        self.check_input(x)?;
        let n_mono = self.layout.monotone.n_params();
        let mut cache = ConditionerCache::default();
        let mut bar_theta = vec![T::zero(); n_mono];
        let mut total = T::zero();
        for i in 0..self.dim() {
            let range = self.layout.conditioner(i);
            let cond = self.layout.conditioner_layout(i);
            let params = &self.params[range.clone()];
            let raw = conditioner::forward(cond, params, &x[..i], self.config.dropout, mode, &mut cache)?;
            bar_theta.iter_mut().for_each(|v| *v = T::zero());
            total += EffectiveNet::new(&self.config.pnn, &raw).log_density_grad(x[i], scale, &mut bar_theta)?;
            conditioner::backward(cond, params, &cache, &bar_theta, &mut grad[range]);
        }
        Ok(total)
    }
}

/// Log-density of one sample under `model`.
pub fn model_log_density<T: Scalar>(model: &ArModel<T>, x: &[T], mode: &mut Mode<'_>) -> Result<T> {
    model.log_density(x, mode)
}

/// Gradient of [`model_log_density`] in the model's parameter layout.
pub fn grad_log_density<T: Scalar>(model: &ArModel<T>, x: &[T], mode: &mut Mode<'_>) -> Result<Vec<T>> {
    model.grad_log_density(x, mode).map(|(_, g)| g)
}

/// First-layer sigmoids tile the support with slope matched to their spacing;
/// deeper layers start close to linear; output mixture uniform.
fn initial_monotone<T: Scalar>(pnn: &PnnConfig<T>, rng: &mut RngStream) -> Vec<T> {
    let layout = pnn.layout();
    let (low, high) = (pnn.support.low.as_f64(), pnn.support.high.as_f64());
    let span = high - low;
    let mut raw = vec![T::zero(); layout.n_params()];
    let jitter = |rng: &mut RngStream| 0.1 * rng.uniform_range(-1.0, 1.0);

    let w1 = layout.width(1);
    let slope = 2.0 * w1 as f64 / span;
    let raw_slope = pnn.transform.inverse(slope);
    for i in layout.weights(1) {
        raw[i] = T::lit(raw_slope + jitter(rng));
    }
    for (j, i) in layout.biases(1).enumerate() {
        let center = low + span * (j as f64 + 0.5) / w1 as f64;
        raw[i] = T::lit(-slope * center + jitter(rng));
    }
    for l in 2..=layout.n_layers() {
        let fan_in = layout.width(l - 1) as f64;
        let weight = 4.0 / fan_in;
        let raw_weight = pnn.transform.inverse(weight);
        for i in layout.weights(l) {
            raw[i] = T::lit(raw_weight + jitter(rng));
        }
        for i in layout.biases(l) {
            raw[i] = T::lit(-0.5 * weight * fan_in + jitter(rng));
        }
    }
    for i in layout.output() {
        raw[i] = T::lit(jitter(rng));
    }
    raw
}
