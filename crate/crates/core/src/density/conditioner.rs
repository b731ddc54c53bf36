//! Per-dimension conditioner: a tanh MLP from the feature prefix to the raw
//! parameters of that dimension's monotone network. The first dimension has
//! an empty prefix and stores its parameters directly.

use crate::error::{Result, VsdeError};
use crate::numerics::{dot, RngStream};
use crate::scalar::Scalar;

/// Whether dropout is active. Train mode draws masks from the stream.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut RngStream),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Flat layout of one conditioner: per hidden layer weights (`out x in`,
/// row-major) then biases, then the output layer. With `input == 0` the block
/// is just the output vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConditionerLayout {
    input: usize,
    hidden: Vec<usize>,
    output: usize,
    // (weight offset, bias offset, in, out) per dense layer, output layer last
    layers: Vec<(usize, usize, usize, usize)>,
    n_params: usize,
}

impl ConditionerLayout {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        if input == 0 {
            return ConditionerLayout {
                input,
                hidden: Vec::new(),
                output,
                layers: Vec::new(),
                n_params: output,
            };
        }
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let mut off = 0;
        let mut layers = Vec::new();
        for l in 1..widths.len() {
            let (win, wout) = (widths[l - 1], widths[l]);
            layers.push((off, off + win * wout, win, wout));
            off += win * wout + wout;
        }
        ConditionerLayout {
            input,
            hidden: hidden.to_vec(),
            output,
            layers,
            n_params: off,
        }
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn output(&self) -> usize {
        self.output
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn is_direct(&self) -> bool {
        self.input == 0
    }

    /// `(name, relative offset, length)` of every parameter block.
    pub fn blocks(&self) -> Vec<(String, usize, usize)> {
        if self.is_direct() {
            return vec![("direct".into(), 0, self.output)];
        }
        let last = self.layers.len() - 1;
        let mut out = Vec::new();
        for (l, &(w, b, win, wout)) in self.layers.iter().enumerate() {
            let name = if l == last {
                "output".to_owned()
            } else {
                format!("hidden {}", l + 1)
            };
            out.push((format!("{name} weight"), w, win * wout));
            out.push((format!("{name} bias"), b, wout));
        }
        out
    }

    /// Relative range of the output-layer bias (the direct vector when the
    /// prefix is empty).
    pub fn output_bias(&self) -> std::ops::Range<usize> {
        match self.layers.last() {
            Some(&(_, b, _, wout)) => b..b + wout,
            None => 0..self.output,
        }
    }

    pub(crate) fn dense_layers(&self) -> &[(usize, usize, usize, usize)] {
        &self.layers
    }
}

/// Activations kept for the reverse sweep.
#[derive(Default)]
pub(crate) struct ConditionerCache<T> {
    // inputs[l] feeds dense layer l (after dropout for l > 0)
    pub(crate) inputs: Vec<Vec<T>>,
    // tanh outputs before dropout, per hidden layer
    tanh: Vec<Vec<T>>,
    // dropout multipliers per hidden layer (0 or 1/(1-rate)), 1 in eval mode
    masks: Vec<Vec<T>>,
}

pub(crate) fn forward<T: Scalar>(
    layout: &ConditionerLayout,
    params: &[T],
    prefix: &[T],
    dropout: f64,
    mode: &mut Mode<'_>,
    cache: &mut ConditionerCache<T>,
) -> Result<Vec<T>> {
    if prefix.len() != layout.input {
        return Err(VsdeError::Shape(format!(
            "conditioner expects a prefix of length {}, got {}",
            layout.input,
            prefix.len()
        )));
    }
    debug_assert_eq!(params.len(), layout.n_params);
    cache.inputs.clear();
    cache.tanh.clear();
    cache.masks.clear();
    if layout.is_direct() {
        return Ok(params.to_vec());
    }
    let keep = T::lit(1.0 / (1.0 - dropout));
    let last = layout.layers.len() - 1;
    let mut h = prefix.to_vec();
    for (l, &(w_off, b_off, win, wout)) in layout.layers.iter().enumerate() {
        let w = &params[w_off..w_off + win * wout];
        let b = &params[b_off..b_off + wout];
        let mut z = b.to_vec();
        for (j, zj) in z.iter_mut().enumerate() {
            let row = &w[j * win..(j + 1) * win];
            *zj += dot(row, &h);
        }
        cache.inputs.push(h);
        if l == last {
            return Ok(z);
        }
        z.iter_mut().for_each(|v| *v = v.tanh());
        let mask: Vec<T> = match mode {
            Mode::Train(rng) if dropout > 0.0 => (0..wout)
                .map(|_| if rng.uniform() < dropout { T::zero() } else { keep })
                .collect(),
            _ => vec![T::one(); wout],
        };
        h = z.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        cache.tanh.push(z);
        cache.masks.push(mask);
    }
    unreachable!("conditioner has an output layer")
}

/// Adds the parameter gradient for output adjoint `bar_out` into `grad`.
pub(crate) fn backward<T: Scalar>(
    layout: &ConditionerLayout,
    params: &[T],
    cache: &ConditionerCache<T>,
    bar_out: &[T],
    grad: &mut [T],
) {
    if layout.is_direct() {
        for (g, &b) in grad.iter_mut().zip(bar_out) {
            *g += b;
        }
        return;
    }
    let mut bar = bar_out.to_vec();
    for (l, &(w_off, b_off, win, wout)) in layout.layers.iter().enumerate().rev() {
        if l < layout.layers.len() - 1 {
            // bar holds d/d(h_l) after dropout; move it through mask and tanh
            let t = &cache.tanh[l];
            let m = &cache.masks[l];
            for j in 0..wout {
                bar[j] = bar[j] * m[j] * (T::one() - t[j] * t[j]);
            }
        }
        let input = &cache.inputs[l];
        {
            let gw = &mut grad[w_off..w_off + win * wout];
            for j in 0..wout {
                let bj = bar[j];
                if bj == T::zero() {
                    continue;
                }
                let row = &mut gw[j * win..(j + 1) * win];
                for (g, &x) in row.iter_mut().zip(input) {
                    *g += bj * x;
                }
            }
        }
        for (g, &bj) in grad[b_off..b_off + wout].iter_mut().zip(&bar) {
            *g += bj;
        }
        if l > 0 {
            let w = &params[w_off..w_off + win * wout];
            let mut prev = vec![T::zero(); win];
            for j in 0..wout {
                let bj = bar[j];
                if bj == T::zero() {
                    continue;
                }
                let row = &w[j * win..(j + 1) * win];
                for (p, &a) in prev.iter_mut().zip(row) {
                    *p += a * bj;
                }
            }
            bar = prev;
        }
    }
}
