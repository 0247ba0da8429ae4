//! Dense dilated 1D convolutional embedding network.
//!
//! Layer `l` convolves the channel concatenation of the input and every
//! earlier layer's output (`input_channels + l * filters_per_layer`
//! channels) with a dilated, zero-padded "same" kernel, then applies ReLU and
//! batch normalization. All feature maps are averaged over time, projected to
//! `embedding_dim` by a fully-connected layer, and L2-normalized.
//!
//! Differentiation is hand-written; see [`grad_check`] for the finite
//! difference gate.

mod checkpoint;
mod forward;
mod gradcheck;
mod loss;
mod train;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::signal::{NormStats, SignalError};

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{backward, forward, forward_batch, ForwardCache, Mode};
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use loss::{ms_loss, LossConfig, LossError, LossOutput};
pub use train::{
    lr_at, prepare_sequences, train, user_folds, EpochLog, LabeledSequence, TrainConfig, TrainError, TrainLog,
};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("input of {len} samples is shorter than the receptive field ({receptive_field})")]
    InputTooShort { len: usize, receptive_field: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_conv_layers: usize,
    pub filters_per_layer: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub embedding_dim: usize,
    pub input_len: usize,
    pub input_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_conv_layers: 8,
            filters_per_layer: 32,
            kernel_size: 3,
            dilations: vec![1, 2, 4, 8, 16, 32, 64, 128],
            embedding_dim: 128,
            input_len: 1125,
            input_channels: 2,
        }
    }
}

impl NetworkConfig {
    /// Six layers of sixteen filters; trains on a single CPU core in about a
    /// minute on a 60-recording corpus.
    pub fn compact() -> Self {
        Self {
            n_conv_layers: 6,
            filters_per_layer: 16,
            dilations: vec![1, 2, 4, 8, 16, 32],
            ..Self::default()
        }
    }

    /// Three layers of four filters on 32-sample inputs, for gradient checks.
    pub fn downsized() -> Self {
        Self {
            n_conv_layers: 3,
            filters_per_layer: 4,
            kernel_size: 3,
            dilations: vec![1, 2, 4],
            embedding_dim: 128,
            input_len: 32,
            input_channels: 2,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let err = |m: &str| Err(NetError::Config(m.to_string()));
        if self.n_conv_layers == 0
            || self.filters_per_layer == 0
            || self.kernel_size == 0
            || self.embedding_dim == 0
            || self.input_len == 0
            || self.input_channels == 0
        {
            return err("all counts must be at least 1");
        }
        if self.kernel_size.is_multiple_of(2) {
            return err("kernel_size must be odd");
        }
        if self.dilations.len() != self.n_conv_layers {
            return err("need one dilation per conv layer");
        }
        if self.dilations.contains(&0) {
            return err("dilations must be at least 1");
        }
        Ok(())
    }

    pub fn layer_in_channels(&self, layer: usize) -> usize {
        self.input_channels + layer * self.filters_per_layer
    }

    /// Channels of the final concatenated feature map, pooled into the
    /// projection.
    pub fn feature_channels(&self) -> usize {
        self.input_channels + self.n_conv_layers * self.filters_per_layer
    }

    pub fn receptive_field(&self) -> usize {
        1 + self.dilations.iter().map(|d| (self.kernel_size - 1) * d).sum::<usize>()
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Offsets of each learnable tensor inside the flat parameter vector, in
/// declaration order: per layer `weight [F, C_in, k]`, `bias [F]`,
/// `gamma [F]`, `beta [F]`; then `proj_w [E, D]`, `proj_b [E]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub layers: Vec<LayerOffsets>,
    pub proj_w: usize,
    pub proj_b: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub weight: usize,
    pub bias: usize,
    pub gamma: usize,
    pub beta: usize,
    pub in_channels: usize,
}

impl Layout {
    fn new(cfg: &NetworkConfig) -> Self {
        let f = cfg.filters_per_layer;
        let mut at = 0;
        let mut layers = Vec::with_capacity(cfg.n_conv_layers);
        for l in 0..cfg.n_conv_layers {
            let cin = cfg.layer_in_channels(l);
            let weight = at;
            at += f * cin * cfg.kernel_size;
            let bias = at;
            at += f;
            let gamma = at;
            at += f;
            let beta = at;
            at += f;
            layers.push(LayerOffsets {
                weight,
                bias,
                gamma,
                beta,
                in_channels: cin,
            });
        }
        let proj_w = at;
        at += cfg.embedding_dim * cfg.feature_channels();
        let proj_b = at;
        at += cfg.embedding_dim;
        Self {
            layers,
            proj_w,
            proj_b,
            total: at,
        }
    }
}

/// Content hash of a model: configuration, normalization statistics and
/// every parameter bit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(pub String);

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModelId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// A biometric template: a unit-norm vector tagged with the model that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Embedding<T> {
    pub v: Vec<T>,
    pub model_id: ModelId,
}

impl<T: Scalar> Embedding<T> {
    /// Normalizes `v` to unit length.
    pub fn from_raw(v: Vec<T>, model_id: ModelId) -> Self {
        let n = v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
        let inv = if n > 0.0 { 1.0 / n } else { 0.0 };
        Self {
            v: v.into_iter().map(|x| T::of(x.as_f64() * inv)).collect(),
            model_id,
        }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn norm(&self) -> f64 {
        self.v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }
}

/// Trained (or freshly initialized) network state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar> {
    config: NetworkConfig,
    layout: Layout,
    params: Vec<T>,
    running_mean: Vec<T>,
    running_var: Vec<T>,
    norm_stats: NormStats<T>,
    sample_rate_hz: f64,
}

impl<T: Scalar> ModelParams<T> {
    /// Fan-in scaled uniform initialization, deterministic in `seed`.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let layout = config.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); layout.total];
        let mut fill = |slice: &mut [T], bound: f64| {
            for p in slice {
                *p = T::of(rng.random_range(-bound..bound));
            }
        };
        let f = config.filters_per_layer;
        let k = config.kernel_size;
        for lo in &layout.layers {
            let bound = 1.0 / ((lo.in_channels * k) as f64).sqrt();
            fill(&mut params[lo.weight..lo.weight + f * lo.in_channels * k], bound);
            fill(&mut params[lo.bias..lo.bias + f], bound);
            params[lo.gamma..lo.gamma + f].fill(T::one());
        }
        let d = config.feature_channels();
        let e = config.embedding_dim;
        let bound = 1.0 / (d as f64).sqrt();
        fill(&mut params[layout.proj_w..layout.proj_w + e * d], bound);
        fill(&mut params[layout.proj_b..layout.proj_b + e], bound);
        let nf = config.n_conv_layers * f;
        Ok(Self {
            layout,
            params,
            running_mean: vec![T::zero(); nf],
            running_var: vec![T::one(); nf],
            norm_stats: NormStats::identity(),
            sample_rate_hz: 125.0,
            config,
        })
    }

    pub(crate) fn from_parts(
        config: NetworkConfig,
        params: Vec<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
        norm_stats: NormStats<T>,
        sample_rate_hz: f64,
    ) -> Result<Self, NetError> {
        config.validate()?;
        let layout = config.layout();
        let nf = config.n_conv_layers * config.filters_per_layer;
        if params.len() != layout.total || running_mean.len() != nf || running_var.len() != nf {
            return Err(NetError::Config("parameter count does not match config".into()));
        }
        Ok(Self {
            config,
            layout,
            params,
            running_mean,
            running_var,
            norm_stats,
            sample_rate_hz,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn running_mean(&self) -> &[T] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[T] {
        &self.running_var
    }

    pub fn norm_stats(&self) -> &NormStats<T> {
        &self.norm_stats
    }

    pub fn set_norm_stats(&mut self, stats: NormStats<T>) {
        self.norm_stats = stats;
    }

    /// Rate the network expects its input at.
    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn set_sample_rate_hz(&mut self, rate: f64) {
        self.sample_rate_hz = rate;
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .chain(&self.running_mean)
            .chain(&self.running_var)
            .all(|p| p.is_finite())
    }

    /// Moves running batch-norm statistics toward `batch_mean`/`batch_var`.
    pub(crate) fn update_running_stats(&mut self, batch_mean: &[T], batch_var: &[T], momentum: T) {
        let keep = T::one() - momentum;
        for (r, &m) in self.running_mean.iter_mut().zip(batch_mean) {
            *r = keep * *r + momentum * m;
        }
        for (r, &v) in self.running_var.iter_mut().zip(batch_var) {
            *r = keep * *r + momentum * v;
        }
    }

    pub fn model_id(&self) -> ModelId {
        let mut h = Sha256::new();
        h.update(b"gazeauth-model\0");
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        h.update(T::NAME.as_bytes());
        h.update(self.sample_rate_hz.to_le_bytes());
        let mut buf = Vec::with_capacity((self.params.len() + 8) * T::BYTES);
        for v in self.norm_stats.mean.iter().chain(&self.norm_stats.std) {
            v.write_le(&mut buf);
        }
        for v in self.params.iter().chain(&self.running_mean).chain(&self.running_var) {
            v.write_le(&mut buf);
        }
        h.update(&buf);
        ModelId(hex::encode(&h.finalize()[..16]))
    }
}
