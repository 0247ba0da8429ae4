//! Finite-difference verification of [`backward`](super::backward) through
//! the full network and loss, in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::seeds::derive_seed;
use crate::signal::VelocitySequence;

use super::forward::{backward, forward_batch, ForwardCache, Mode};
use super::loss::{ms_loss, LossConfig};
use super::{ModelParams, NetError, NetworkConfig};

const LABELS: [usize; 6] = [0, 0, 1, 1, 2, 2];
const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely. Central differences
/// of an O(1) loss at `STEP` carry roughly 1e-11 of rounding noise.
const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index with the largest error.
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates where every step size flipped a ReLU.
    pub skipped_kinks: usize,
}

/// Largest relative error over every parameter of a freshly initialized
/// network of shape `cfg` on a random three-class batch.
pub fn grad_check(cfg: &NetworkConfig, probe_seed: u64) -> Result<f64, NetError> {
    grad_check_with(cfg, probe_seed, &LossConfig::default()).map(|r| r.max_rel_error)
}

pub fn grad_check_with(cfg: &NetworkConfig, probe_seed: u64, loss: &LossConfig) -> Result<GradCheckReport, NetError> {
    let mut model = ModelParams::<f64>::init(cfg.clone(), derive_seed(&[probe_seed, 1]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[probe_seed, 2]));
    // Move batch-norm affine terms off their identity initialization so
    // their gradients are exercised.
    let f = cfg.filters_per_layer;
    let layers = model.layout().layers.clone();
    for lo in &layers {
        for i in 0..f {
            model.params_mut()[lo.gamma + i] = 1.0 + rng.random_range(-0.2..0.2);
            model.params_mut()[lo.beta + i] = rng.random_range(-0.1..0.1);
        }
    }
    let inputs: Vec<VelocitySequence<f64>> = LABELS
        .iter()
        .map(|_| {
            let mut ch = || (0..cfg.input_len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            VelocitySequence::new(125.0, ch(), ch())
        })
        .collect();
    let refs: Vec<&VelocitySequence<f64>> = inputs.iter().collect();

    let eval = |m: &ModelParams<f64>| -> Result<(f64, ForwardCache<f64>), NetError> {
        let cache = forward_batch(m, &refs, Mode::Train)?;
        let out = ms_loss(cache.embeddings(), &LABELS, loss).map_err(|e| NetError::InvalidInput(e.to_string()))?;
        Ok((out.loss, cache))
    };

    let cache = forward_batch(&model, &refs, Mode::Train)?;
    let out = ms_loss(cache.embeddings(), &LABELS, loss).map_err(|e| NetError::InvalidInput(e.to_string()))?;
    let analytic = backward(&model, &cache, &out.grads);
    let pattern = cache.activation_pattern();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut probe = model.clone();
    for (i, &an) in analytic.iter().enumerate() {
        let orig = model.params()[i];
        let mut numeric = None;
        let mut h = STEP;
        for _ in 0..3 {
            probe.params_mut()[i] = orig + h;
            let (lp, cp) = eval(&probe)?;
            probe.params_mut()[i] = orig - h;
            let (lm, cm) = eval(&probe)?;
            probe.params_mut()[i] = orig;
            if cp.activation_pattern() == pattern && cm.activation_pattern() == pattern {
                numeric = Some((lp - lm) / (2.0 * h));
                break;
            }
            h /= 10.0;
        }
        let Some(num) = numeric else {
            report.skipped_kinks += 1;
            continue;
        };
        let rel = (an - num).abs() / an.abs().max(num.abs()).max(ABS_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsized_network_passes() {
        let r = grad_check_with(&NetworkConfig::downsized(), 7, &LossConfig::default()).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
        assert!(r.checked > 2000 && r.skipped_kinks < r.checked / 100, "{r:?}");
    }

    #[test]
    fn second_probe_seed_passes() {
        assert!(grad_check(&NetworkConfig::downsized(), 8).unwrap() <= 1e-4);
    }

    #[test]
    fn zero_input_projection_bias_gradient() {
        let cfg = NetworkConfig::downsized();
        let model = ModelParams::<f64>::init(cfg.clone(), 0).unwrap();
        let zero = VelocitySequence::new(125.0, vec![0.0; cfg.input_len], vec![0.0; cfg.input_len]);
        let refs = vec![&zero; 6];
        let run = || {
            let cache = forward_batch(&model, &refs, Mode::Train).unwrap();
            let out = ms_loss(cache.embeddings(), &LABELS, &LossConfig::default()).unwrap();
            let g = backward(&model, &cache, &out.grads);
            g[model.layout().proj_b..].to_vec()
        };
        let a = run();
        assert_eq!(a.len(), cfg.embedding_dim);
        assert!(a.iter().all(|x| x.is_finite()));
        assert_eq!(a, run());
    }

    #[test]
    fn too_short_input_is_reported() {
        let cfg = NetworkConfig { input_len: 8, ..NetworkConfig::downsized() };
        assert!(matches!(grad_check(&cfg, 1), Err(NetError::InputTooShort { .. })));
    }
}
