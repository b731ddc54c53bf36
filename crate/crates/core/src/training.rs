//! Variance-penalized maximum likelihood over minibatches, Adam, and the
//! single-model training loop.

use std::fmt::Write as _;

use ndarray::ArrayView2;

use crate::data::{apply_permutation, streams, PermutationSpec, Table};
use crate::density::{ArConfig, ArModel, Mode, ModelLayout, PnnConfig};
use crate::error::{Result, VsdeError};
use crate::numerics::{order_free_sum, RngStream};
use crate::scalar::Scalar;

pub const DEFAULT_LAMBDA: f64 = 3.33;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_EPOCHS: usize = 500;
pub const BATCH_MIN: usize = 16;
pub const BATCH_MAX: usize = 8096;
pub const CLIP_NORM: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig<T> {
    pub lambda: f64,
    /// Ablation: train with plain negative log-likelihood whatever `lambda` says.
    pub lambda_zero: bool,
    pub adam: AdamParams,
    pub dropout: f64,
    pub batch_min: usize,
    pub batch_max: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global L2 norm above which gradients are rescaled; `None` disables it.
    pub clip_norm: Option<f64>,
    pub pnn: PnnConfig<T>,
    pub conditioner_hidden: Vec<usize>,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            lambda: DEFAULT_LAMBDA,
            lambda_zero: false,
            adam: AdamParams::default(),
            dropout: 0.1,
            batch_min: BATCH_MIN,
            batch_max: BATCH_MAX,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            clip_norm: Some(CLIP_NORM),
            pnn: PnnConfig::default(),
            conditioner_hidden: vec![64, 64],
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn effective_lambda(&self) -> f64 {
        if self.lambda_zero {
            0.0
        } else {
            self.lambda
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(VsdeError::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(VsdeError::Config(format!(
                "learning rate must be positive, got {}",
                self.adam.lr
            )));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return Err(VsdeError::Config(
                "adam betas must lie in [0, 1) and eps must be positive".into(),
            ));
        }
        if self.batch_min == 0 || self.batch_min > self.batch_max {
            return Err(VsdeError::Config(format!(
                "batch bounds must satisfy 1 <= min <= max, got {}..{}",
                self.batch_min, self.batch_max
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(VsdeError::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        self.arch(1).validate()
    }

    /// Model architecture for `dim` features.
    pub fn arch(&self, dim: usize) -> ArConfig<T> {
        ArConfig {
            dim,
            pnn: self.pnn.clone(),
            conditioner_hidden: self.conditioner_hidden.clone(),
            dropout: self.dropout,
        }
    }
}

/// `clamp(floor(n / 10), min, max)`.
pub fn batch_size<T: Scalar>(n: usize, cfg: &TrainConfig<T>) -> usize {
    (n / 10).clamp(cfg.batch_min, cfg.batch_max)
}

/// Loss of one minibatch with its ingredients.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss<T> {
    pub loss: T,
    pub mean: T,
    /// Unbiased variance of the log-densities; zero for a single sample.
    pub variance: T,
    pub log_densities: Vec<T>,
}

/// `-mean(s) + lambda * var(s)` with the unbiased variance. Sums are taken in
/// sorted order, so the result does not depend on the order of `s`.
pub fn vsde_objective<T: Scalar>(s: &[T], lambda: f64) -> Result<BatchLoss<T>> {
    if s.is_empty() {
        return Err(VsdeError::InsufficientData {
            what: "minibatch",
            got: 0,
            need: 1,
        });
    }
    if lambda > 0.0 && s.len() < 2 {
        return Err(VsdeError::InsufficientData {
            what: "variance-penalized minibatch",
            got: s.len(),
            need: 2,
        });
    }
    let b = T::from_usize(s.len()).unwrap();
    let mut buf = s.to_vec();
    let mean = order_free_sum(&mut buf) / b;
    let variance = if s.len() > 1 {
        buf.iter_mut().zip(s).for_each(|(d, &x)| *d = (x - mean) * (x - mean));
        order_free_sum(&mut buf) / (b - T::one())
    } else {
        T::zero()
    };
    let loss = if lambda == 0.0 {
        -mean
    } else {
        -mean + T::lit(lambda) * variance
    };
    Ok(BatchLoss {
        loss,
        mean,
        variance,
        log_densities: s.to_vec(),
    })
}

/// `d loss / d s_b = -1/B + 2 lambda (s_b - mean) / (B - 1)`.
fn objective_adjoint<T: Scalar>(l: &BatchLoss<T>, lambda: f64) -> Vec<T> {
    let b = T::from_usize(l.log_densities.len()).unwrap();
    let lam = T::lit(lambda);
    l.log_densities
        .iter()
        .map(|&s| {
            let mut g = -T::one() / b;
            if lambda > 0.0 {
                g += (lam + lam) * (s - l.mean) / (b - T::one());
            }
            g
        })
        .collect()
}

fn row_streams(rng: Option<&mut RngStream>, n: usize) -> Vec<Option<RngStream>> {
    match rng {
        Some(r) => (0..n).map(|_| Some(r.fork())).collect(),
        None => vec![None; n],
    }
}

fn mode_for(stream: &mut Option<RngStream>) -> Mode<'_> {
    match stream {
        Some(r) => Mode::Train(r),
        None => Mode::Eval,
    }
}

/// Batch loss with log-densities in train mode when `rng` is given (each row
/// gets its own forked dropout stream) and eval mode otherwise.
pub fn vsde_batch_loss<T: Scalar>(
    model: &ArModel<T>,
    batch: ArrayView2<'_, T>,
    lambda: f64,
    rng: Option<&mut RngStream>,
) -> Result<BatchLoss<T>> {
    let mut streams = row_streams(rng, batch.nrows());
    let mut s = Vec::with_capacity(batch.nrows());
    for (row, stream) in batch.rows().into_iter().zip(streams.iter_mut()) {
        let x = row.to_vec();
        s.push(model.log_density(&x, &mut mode_for(stream))?);
    }
    vsde_objective(&s, lambda)
}

/// [`vsde_batch_loss`] and its gradient. The loss adjoint of every sample
/// needs the batch mean, so the batch is swept twice: once for the
/// log-densities and once for the reverse pass, replaying each row's dropout
/// stream so both sweeps see the same masks.
pub fn vsde_batch_loss_grad<T: Scalar>(
    model: &ArModel<T>,
    batch: ArrayView2<'_, T>,
    lambda: f64,
    rng: Option<&mut RngStream>,
) -> Result<(BatchLoss<T>, Vec<T>)> {
    let streams = row_streams(rng, batch.nrows());
    let rows: Vec<Vec<T>> = batch.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut s = Vec::with_capacity(rows.len());
    for (x, stream) in rows.iter().zip(&streams) {
        let mut replay = stream.clone();
        s.push(model.log_density(x, &mut mode_for(&mut replay))?);
    }
    let loss = vsde_objective(&s, lambda)?;
    let adjoint = objective_adjoint(&loss, lambda);
    let mut grad = vec![T::zero(); model.params().len()];
    for ((x, mut stream), &a) in rows.iter().zip(streams).zip(&adjoint) {
        model.accumulate_grad(x, &mut mode_for(&mut stream), a, &mut grad)?;
    }
    Ok((loss, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    /// One bias-corrected Adam update. Returns the index of the first
    /// non-finite gradient entry, leaving everything untouched, if any.
    pub fn update(&mut self, params: &mut [T], grads: &[T], hp: &AdamParams) -> Result<(), usize> {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match parameters");
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(i);
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let (lr, eps) = (T::lit(hp.lr), T::lit(hp.eps));
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Adam step on a model; a non-finite gradient aborts with the name of the
/// parameter block it sits in.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    model: &mut ArModel<T>,
    grads: &[T],
    hp: &AdamParams,
) -> Result<()> {
    if grads.len() != model.params().len() {
        return Err(VsdeError::Shape(format!(
            "gradient has {} entries, model has {} parameters",
            grads.len(),
            model.params().len()
        )));
    }
    state
        .update(model.params_mut(), grads, hp)
        .map_err(|i| VsdeError::NonFiniteGradient {
            block: block_name(model.layout(), i),
        })
}

fn block_name(layout: &ModelLayout, index: usize) -> String {
    layout
        .block_of(index)
        .map(|b| b.name.clone())
        .unwrap_or_else(|| format!("parameter {index}"))
}

/// Rescales `g` to norm `max` if it is longer. Returns whether it did.
fn clip_global_norm<T: Scalar>(g: &mut [T], max: f64) -> bool {
    let norm = g.iter().map(|&x| x * x).sum::<T>().sqrt();
    let max = T::lit(max);
    if norm > max {
        let scale = max / norm;
        g.iter_mut().for_each(|x| *x *= scale);
        true
    } else {
        false
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Row-weighted averages of the per-batch quantities.
    pub mean_nll: f64,
    pub variance: f64,
    pub loss: f64,
    pub clip_events: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_nll,variance,loss,clip_events\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.mean_nll, e.variance, e.loss, e.clip_events
            );
        }
        out
    }

    pub fn total_clip_events(&self) -> usize {
        self.epochs.iter().map(|e| e.clip_events).sum()
    }
}

/// A trained model together with the feature order it was trained on.
pub struct TrainedModel<T> {
    pub model: ArModel<T>,
    pub permutation: PermutationSpec,
    pub log: TrainLog,
}

/// Contiguous minibatch ranges over `n` rows; a trailing batch smaller than
/// `min_last` is folded into its predecessor.
fn batch_ranges(n: usize, size: usize, min_last: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() < min_last) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Trains one autoregressive model on `train` (standardized, unlabeled)
/// after reordering its columns by `perm`.
pub fn train_model<T: Scalar>(
    train: &Table<T>,
    cfg: &TrainConfig<T>,
    perm: &PermutationSpec,
) -> Result<TrainedModel<T>> {
    cfg.validate()?;
    let lambda = cfg.effective_lambda();
    let n = train.n_rows();
    let need = if lambda > 0.0 { 2 } else { 1 };
    if n < need {
        return Err(VsdeError::InsufficientData {
            what: "training rows",
            got: n,
            need,
        });
    }
    let data = apply_permutation(train, perm)?;
    let mut rng = RngStream::new(cfg.seed, streams::TRAINING);
    let mut model = ArModel::new(cfg.arch(data.n_features()), &mut rng)?;
    let mut adam = AdamState::new(model.params().len());
    let size = batch_size::<T>(n, cfg);
    let ranges = batch_ranges(n, size, need);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let shuffled = data.select_rows(&order);
        let (mut nll, mut var, mut loss, mut clips) = (0.0, 0.0, 0.0, 0);
        for (b, range) in ranges.iter().enumerate() {
            let context = |e: VsdeError| VsdeError::Training {
                epoch,
                batch: b + 1,
                source: Box::new(e),
            };
            let batch = shuffled.values().slice(ndarray::s![range.clone(), ..]);
            let (l, mut grad) = vsde_batch_loss_grad(&model, batch, lambda, Some(&mut rng)).map_err(context)?;
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(context(VsdeError::NonFiniteGradient {
                    block: block_name(model.layout(), i),
                }));
            }
            if let Some(max) = cfg.clip_norm {
                if clip_global_norm(&mut grad, max) {
                    clips += 1;
                    log::debug!("epoch {epoch} batch {}: gradient clipped to norm {max}", b + 1);
                }
            }
            adam_step(&mut adam, &mut model, &grad, &cfg.adam).map_err(context)?;
            let w = range.len() as f64;
            nll -= l.mean.as_f64() * w;
            var += l.variance.as_f64() * w;
            loss += l.loss.as_f64() * w;
        }
        let n = n as f64;
        log.epochs.push(EpochLog {
            epoch,
            mean_nll: nll / n,
            variance: var / n,
            loss: loss / n,
            clip_events: clips,
        });
        if clips > 0 {
            log::info!("epoch {epoch}: {clips} gradient clipping events");
        }
    }
    Ok(TrainedModel {
        model,
        permutation: perm.clone(),
        log,
    })
}
