//! Deterministic single-threaded training loop: class-balanced batches,
//! Adam with linear warmup and cosine decay, fresh additive noise every
//! epoch.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::scalar::Scalar;
use crate::seeds::derive_seed;
use crate::signal::{add_noise, conform_rate, fit_norm_stats, normalize, to_velocity, DegradationConfig, SignalError, VelocitySequence};

use super::forward::{backward, forward_batch, Mode};
use super::loss::{ms_loss, LossConfig, LossError};
use super::{ModelParams, NetError, NetworkConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training data: {0}")]
    Data(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    /// Distinct users per batch (P).
    pub classes_per_batch: usize,
    /// Recordings drawn per user (K).
    pub samples_per_class: usize,
    pub peak_lr: f64,
    /// Fraction of all steps spent in linear warmup.
    pub warmup_frac: f64,
    pub epochs: usize,
    pub degradation: DegradationConfig,
    pub n_folds: usize,
    /// Held-out fold for validation loss; `None` trains on every user.
    pub fold_index: Option<usize>,
    pub bn_momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            classes_per_batch: 8,
            samples_per_class: 4,
            peak_lr: 1e-2,
            warmup_frac: 0.3,
            epochs: 100,
            degradation: DegradationConfig::default(),
            n_folds: 4,
            fold_index: Some(0),
            bn_momentum: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        self.loss.validate()?;
        self.degradation.validate()?;
        if self.classes_per_batch < 2 {
            return bad("classes_per_batch must be at least 2");
        }
        if self.samples_per_class < 2 {
            return bad("samples_per_class must be at least 2");
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad("peak_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad("warmup_frac must be in [0, 1)");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if let Some(k) = self.fold_index {
            if self.n_folds < 2 || k >= self.n_folds {
                return bad("fold_index must be below n_folds (>= 2)");
            }
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum must be in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over the epoch's batches.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train_users: Vec<String>,
    pub val_users: Vec<String>,
    pub steps: usize,
    pub skipped_batches: usize,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn first_train_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.train_loss)
    }

    pub fn last_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// A velocity sequence with its identity label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence<T> {
    pub user: String,
    pub session: u32,
    pub seq: VelocitySequence<T>,
}

/// Rate-conforms each recording and converts it to velocity.
pub fn prepare_sequences<T: Scalar>(
    corpus: &Corpus<f64>,
    target_rate_hz: f64,
) -> Result<Vec<LabeledSequence<T>>, SignalError> {
    corpus
        .entries
        .iter()
        .map(|e| {
            let rec = conform_rate(&e.recording, target_rate_hz)?;
            Ok(LabeledSequence {
                user: e.user.clone(),
                session: e.session,
                seq: to_velocity(&rec)?.cast(),
            })
        })
        .collect()
}

/// Splits users into `n_folds` disjoint folds: after sorting, user `i` goes
/// to fold `i % n_folds`.
pub fn user_folds(users: &[String], n_folds: usize) -> Vec<Vec<String>> {
    let mut sorted = users.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut folds = vec![Vec::new(); n_folds.max(1)];
    for (i, u) in sorted.into_iter().enumerate() {
        folds[i % n_folds.max(1)].push(u);
    }
    folds
}

/// Learning rate at 0-based `step` out of `total` steps.
pub fn lr_at(step: usize, total: usize, peak: f64, warmup_frac: f64) -> f64 {
    let total = total.max(1);
    let warm = (warmup_frac * total as f64).ceil() as usize;
    if step < warm {
        return peak * (step + 1) as f64 / warm as f64;
    }
    let span = (total - warm).max(1) as f64;
    let p = ((step - warm) as f64 / span).min(1.0);
    peak * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
}

/// Batches of at most `p` users; a lone trailing user joins the previous
/// batch since a single class has no negatives.
fn chunk_users(order: &[usize], p: usize) -> Vec<Vec<usize>> {
    let mut chunks: Vec<Vec<usize>> = order.chunks(p).map(<[usize]>::to_vec).collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() == 1) {
        let last = chunks.pop().unwrap();
        chunks.last_mut().unwrap().extend(last);
    }
    chunks
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl<T: Scalar> Adam<T> {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
            b1: cfg.adam_beta1,
            b2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(self.b1), T::of(self.b2));
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        let step = T::of(lr / c1);
        let c2 = T::of(c2);
        let eps = T::of(self.eps);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *p -= step * *m / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Trains a fresh network on `corpus` (recordings at any rate). Everything
/// random derives from `seed`, so equal inputs give bit-identical models.
pub fn train<T: Scalar>(
    corpus: &Corpus<f64>,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelParams<T>, TrainLog), TrainError> {
    cfg.validate()?;
    net_cfg.validate()?;
    let rate = cfg.degradation.target_rate_hz;
    let all = prepare_sequences::<T>(corpus, rate)?;

    let users = corpus.users();
    if users.len() < 2 {
        return Err(TrainError::Data(format!("need at least 2 users, found {}", users.len())));
    }
    let val_users: Vec<String> = match cfg.fold_index {
        Some(k) => user_folds(&users, cfg.n_folds).swap_remove(k),
        None => Vec::new(),
    };
    let train_users: Vec<String> = users.iter().filter(|u| !val_users.contains(u)).cloned().collect();
    if train_users.len() < 2 {
        return Err(TrainError::Data("fewer than 2 users left for training".into()));
    }
    let (train_set, val_set): (Vec<_>, Vec<_>) = all.into_iter().partition(|s| train_users.contains(&s.user));

    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in train_set.iter().enumerate() {
        by_user.entry(s.user.as_str()).or_default().push(i);
    }
    if by_user.values().all(|v| v.len() < 2) {
        return Err(TrainError::Data("no training user has two sessions".into()));
    }

    let raw: Vec<VelocitySequence<T>> = train_set.iter().map(|s| s.seq.clone()).collect();
    let stats = fit_norm_stats(&raw)?;
    let train_norm: Vec<VelocitySequence<T>> = raw.iter().map(|s| normalize(s, &stats)).collect();
    let val_norm: Vec<VelocitySequence<T>> = val_set.iter().map(|s| normalize(&s.seq, &stats)).collect();
    let val_labels: Vec<usize> = val_set
        .iter()
        .map(|s| val_users.iter().position(|u| *u == s.user).unwrap())
        .collect();

    let mut model = ModelParams::<T>::init(net_cfg.clone(), derive_seed(&[seed, 0x1417]))?;
    model.set_norm_stats(stats);
    model.set_sample_rate_hz(rate);

    let user_keys: Vec<&str> = by_user.keys().copied().collect();
    let per_epoch = chunk_users(&(0..user_keys.len()).collect::<Vec<_>>(), cfg.classes_per_batch).len();
    let total = per_epoch * cfg.epochs;
    let mut adam = Adam::new(model.n_params(), cfg);
    let momentum = T::of(cfg.bn_momentum);
    let mut log = TrainLog {
        train_users,
        val_users,
        steps: 0,
        skipped_batches: 0,
        epochs: Vec::with_capacity(cfg.epochs),
    };

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0xE90C, epoch as u64]));
        let mut order: Vec<usize> = (0..user_keys.len()).collect();
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        let mut lr = 0.0;
        for chunk in chunk_users(&order, cfg.classes_per_batch) {
            let mut picked = Vec::new();
            let mut labels = Vec::new();
            for (ci, &u) in chunk.iter().enumerate() {
                let mut idx = by_user[user_keys[u]].clone();
                idx.shuffle(&mut rng);
                for &i in idx.iter().take(cfg.samples_per_class) {
                    picked.push(i);
                    labels.push(ci);
                }
            }
            lr = lr_at(log.steps, total, cfg.peak_lr, cfg.warmup_frac);
            log.steps += 1;
            let noisy = picked
                .iter()
                .map(|&i| {
                    let deg = DegradationConfig {
                        seed: derive_seed(&[seed, cfg.degradation.seed, epoch as u64, i as u64]),
                        ..cfg.degradation
                    };
                    add_noise(&train_norm[i], &deg)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&VelocitySequence<T>> = noisy.iter().collect();
            let cache = forward_batch(&model, &refs, Mode::Train)?;
            let out = match ms_loss(cache.embeddings(), &labels, &cfg.loss) {
                Ok(out) => out,
                Err(LossError::DegenerateBatch(_)) => {
                    log.skipped_batches += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let grads = backward(&model, &cache, &out.grads);
            let (bm, bv) = cache.batch_stats();
            model.update_running_stats(&bm, &bv, momentum);
            adam.step(model.params_mut(), &grads, lr);
            losses.push(out.loss);
        }
        let train_loss = if losses.is_empty() {
            f64::NAN
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        if !model.is_finite() || (!losses.is_empty() && !train_loss.is_finite()) {
            return Err(TrainError::Diverged { epoch });
        }
        let val_loss = if log.val_users.len() >= 2 {
            let refs: Vec<&VelocitySequence<T>> = val_norm.iter().collect();
            let cache = forward_batch(&model, &refs, Mode::Eval)?;
            ms_loss(cache.embeddings(), &val_labels, &cfg.loss).ok().map(|o| o.loss)
        } else {
            None
        };
        log.epochs.push(EpochLog {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
    }
    Ok((model, log))
}
