use crate::scalar::Scalar;
use crate::signal::VelocitySequence;

use super::{Embedding, ModelParams, NetError, BN_EPS};

/// Batch normalization uses batch statistics in `Train` and running
/// statistics in `Eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Activations retained by [`forward_batch`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    mode: Mode,
    lens: Vec<usize>,
    /// Per sample, `[feature_channels, len]` row-major.
    feats: Vec<Vec<T>>,
    /// Per layer, per sample, post-ReLU pre-normalization `[F, len]`.
    acts: Vec<Vec<Vec<T>>>,
    /// Per layer normalization mean and (biased) variance actually applied.
    bn_mean: Vec<Vec<T>>,
    bn_var: Vec<Vec<T>>,
    pooled: Vec<Vec<T>>,
    raw: Vec<Vec<T>>,
    emb: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn embeddings(&self) -> &[Vec<T>] {
        &self.emb
    }

    pub fn into_embeddings(self) -> Vec<Vec<T>> {
        self.emb
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Batch mean and unbiased variance of every BN channel, flattened in
    /// layer order; used for running statistics.
    pub fn batch_stats(&self) -> (Vec<T>, Vec<T>) {
        let n: usize = self.lens.iter().sum();
        let corr = if n > 1 { T::of(n as f64 / (n - 1) as f64) } else { T::one() };
        let mean = self.bn_mean.iter().flatten().copied().collect();
        let var = self.bn_var.iter().flatten().map(|&v| v * corr).collect();
        (mean, var)
    }

    /// Which ReLUs are active, flattened. Finite differences are only
    /// meaningful between points with the same pattern.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.acts
            .iter()
            .flatten()
            .flatten()
            .map(|&a| a > T::zero())
            .collect()
    }
}

/// Output index range `[t0, t1)` for which `t + shift` stays inside `[0, len)`.
#[inline]
fn span(len: usize, shift: isize) -> (usize, usize) {
    let len = len as isize;
    let t0 = (-shift).max(0);
    let t1 = (len - shift).min(len);
    if t0 >= t1 {
        (0, 0)
    } else {
        (t0 as usize, t1 as usize)
    }
}

struct ConvShape {
    len: usize,
    cin: usize,
    filters: usize,
    kernel: usize,
    dilation: usize,
}

impl ConvShape {
    #[inline]
    fn shift(&self, j: usize) -> isize {
        (j as isize - (self.kernel / 2) as isize) * self.dilation as isize
    }
}

fn conv_forward<T: Scalar>(sh: &ConvShape, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let l = sh.len;
    for o in 0..sh.filters {
        let row = &mut out[o * l..(o + 1) * l];
        row.fill(b[o]);
        for i in 0..sh.cin {
            let xi = &x[i * l..(i + 1) * l];
            for j in 0..sh.kernel {
                let wv = w[(o * sh.cin + i) * sh.kernel + j];
                let s = sh.shift(j);
                let (t0, t1) = span(l, s);
                if t0 == t1 {
                    continue;
                }
                let src = &xi[(t0 as isize + s) as usize..(t1 as isize + s) as usize];
                for (y, &xv) in row[t0..t1].iter_mut().zip(src) {
                    *y += wv * xv;
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and, for channels `>= skip_below`, the
/// input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    sh: &ConvShape,
    x: &[T],
    w: &[T],
    dz: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: &mut [T],
    skip_below: usize,
) {
    let l = sh.len;
    for o in 0..sh.filters {
        let g = &dz[o * l..(o + 1) * l];
        db[o] += g.iter().copied().sum::<T>();
        for i in 0..sh.cin {
            let xi = &x[i * l..(i + 1) * l];
            for j in 0..sh.kernel {
                let s = sh.shift(j);
                let (t0, t1) = span(l, s);
                if t0 == t1 {
                    continue;
                }
                let a = (t0 as isize + s) as usize;
                let b = (t1 as isize + s) as usize;
                let widx = (o * sh.cin + i) * sh.kernel + j;
                let mut acc = T::zero();
                for (&gv, &xv) in g[t0..t1].iter().zip(&xi[a..b]) {
                    acc += gv * xv;
                }
                dw[widx] += acc;
                if i >= skip_below {
                    let wv = w[widx];
                    let dxi = &mut dx[i * l..(i + 1) * l];
                    for (d, &gv) in dxi[a..b].iter_mut().zip(&g[t0..t1]) {
                        *d += wv * gv;
                    }
                }
            }
        }
    }
}

fn check_inputs<T: Scalar>(params: &ModelParams<T>, inputs: &[&VelocitySequence<T>]) -> Result<(), NetError> {
    let cfg = params.config();
    if cfg.input_channels != 2 {
        return Err(NetError::InvalidInput(format!(
            "velocity input has 2 channels, model expects {}",
            cfg.input_channels
        )));
    }
    if inputs.is_empty() {
        return Err(NetError::InvalidInput("empty batch".into()));
    }
    let rf = cfg.receptive_field();
    for seq in inputs {
        if seq.len() < rf {
            return Err(NetError::InputTooShort {
                len: seq.len(),
                receptive_field: rf,
            });
        }
        if !seq.is_finite() {
            return Err(NetError::InvalidInput("non-finite velocity value".into()));
        }
    }
    Ok(())
}

/// Runs the network over a batch, keeping what [`backward`] needs.
pub fn forward_batch<T: Scalar>(
    params: &ModelParams<T>,
    inputs: &[&VelocitySequence<T>],
    mode: Mode,
) -> Result<ForwardCache<T>, NetError> {
    check_inputs(params, inputs)?;
    let cfg = params.config();
    let lay = params.layout();
    let p = params.params();
    let f = cfg.filters_per_layer;
    let c_total = cfg.feature_channels();
    let lens: Vec<usize> = inputs.iter().map(|s| s.len()).collect();
    let n_total: usize = lens.iter().sum();

    let mut feats: Vec<Vec<T>> = inputs
        .iter()
        .map(|s| {
            let l = s.len();
            let mut buf = vec![T::zero(); c_total * l];
            buf[..l].copy_from_slice(&s.vx);
            buf[l..2 * l].copy_from_slice(&s.vy);
            buf
        })
        .collect();

    let mut acts = Vec::with_capacity(cfg.n_conv_layers);
    let mut bn_mean = Vec::with_capacity(cfg.n_conv_layers);
    let mut bn_var = Vec::with_capacity(cfg.n_conv_layers);
    for (layer, lo) in lay.layers.iter().enumerate() {
        let w = &p[lo.weight..lo.bias];
        let b = &p[lo.bias..lo.gamma];
        let gamma = &p[lo.gamma..lo.beta];
        let beta = &p[lo.beta..lo.beta + f];
        let mut layer_acts = Vec::with_capacity(inputs.len());
        for (feat, &l) in feats.iter().zip(&lens) {
            let sh = ConvShape {
                len: l,
                cin: lo.in_channels,
                filters: f,
                kernel: cfg.kernel_size,
                dilation: cfg.dilations[layer],
            };
            let mut z = vec![T::zero(); f * l];
            conv_forward(&sh, &feat[..lo.in_channels * l], w, b, &mut z);
            for v in &mut z {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
            layer_acts.push(z);
        }

        let (mean, var): (Vec<T>, Vec<T>) = match mode {
            Mode::Train => (0..f)
                .map(|o| {
                    let mut s = 0.0f64;
                    for (a, &l) in layer_acts.iter().zip(&lens) {
                        s += a[o * l..(o + 1) * l].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let m = s / n_total as f64;
                    let mut ss = 0.0f64;
                    for (a, &l) in layer_acts.iter().zip(&lens) {
                        ss += a[o * l..(o + 1) * l]
                            .iter()
                            .map(|v| {
                                let d = v.as_f64() - m;
                                d * d
                            })
                            .sum::<f64>();
                    }
                    (T::of(m), T::of(ss / n_total as f64))
                })
                .unzip(),
            Mode::Eval => {
                let r = layer * f..(layer + 1) * f;
                (params.running_mean()[r.clone()].to_vec(), params.running_var()[r].to_vec())
            }
        };

        let out_c0 = lo.in_channels;
        for ((feat, a), &l) in feats.iter_mut().zip(&layer_acts).zip(&lens) {
            for o in 0..f {
                let inv = T::one() / (var[o] + T::of(BN_EPS)).sqrt();
                let scale = gamma[o] * inv;
                let shift = beta[o] - mean[o] * scale;
                let dst = &mut feat[(out_c0 + o) * l..(out_c0 + o + 1) * l];
                for (y, &av) in dst.iter_mut().zip(&a[o * l..(o + 1) * l]) {
                    *y = av * scale + shift;
                }
            }
        }
        acts.push(layer_acts);
        bn_mean.push(mean);
        bn_var.push(var);
    }

    let e_dim = cfg.embedding_dim;
    let pw = &p[lay.proj_w..lay.proj_b];
    let pb = &p[lay.proj_b..lay.proj_b + e_dim];
    let mut pooled = Vec::with_capacity(inputs.len());
    let mut raw = Vec::with_capacity(inputs.len());
    let mut emb = Vec::with_capacity(inputs.len());
    for (feat, &l) in feats.iter().zip(&lens) {
        let pool: Vec<T> = (0..c_total)
            .map(|c| T::of(feat[c * l..(c + 1) * l].iter().map(|v| v.as_f64()).sum::<f64>() / l as f64))
            .collect();
        let r: Vec<T> = (0..e_dim)
            .map(|e| {
                let row = &pw[e * c_total..(e + 1) * c_total];
                pb[e] + row.iter().zip(&pool).map(|(&w, &x)| w * x).sum::<T>()
            })
            .collect();
        let norm = r.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        let inv = if norm > 0.0 { T::of(1.0 / norm) } else { T::zero() };
        emb.push(r.iter().map(|&v| v * inv).collect());
        pooled.push(pool);
        raw.push(r);
    }

    Ok(ForwardCache {
        mode,
        lens,
        feats,
        acts,
        bn_mean,
        bn_var,
        pooled,
        raw,
        emb,
    })
}

/// Gradient of a scalar loss with respect to every learnable parameter,
/// given the loss gradient at each output embedding.
pub fn backward<T: Scalar>(params: &ModelParams<T>, cache: &ForwardCache<T>, d_emb: &[Vec<T>]) -> Vec<T> {
    let cfg = params.config();
    let lay = params.layout();
    let p = params.params();
    let f = cfg.filters_per_layer;
    let c_total = cfg.feature_channels();
    let c_in = cfg.input_channels;
    let e_dim = cfg.embedding_dim;
    let n_total: usize = cache.lens.iter().sum();
    let mut grads = vec![T::zero(); lay.total];

    let pw = &p[lay.proj_w..lay.proj_b];
    let mut dfeats: Vec<Vec<T>> = Vec::with_capacity(cache.lens.len());
    for (b, &l) in cache.lens.iter().enumerate() {
        let raw = &cache.raw[b];
        let e = &cache.emb[b];
        let de = &d_emb[b];
        let norm = raw.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        let inv = if norm > 0.0 { T::of(1.0 / norm) } else { T::zero() };
        let dot: T = e.iter().zip(de).map(|(&a, &g)| a * g).sum();
        let draw: Vec<T> = e.iter().zip(de).map(|(&a, &g)| (g - a * dot) * inv).collect();

        let pooled = &cache.pooled[b];
        for (ei, &g) in draw.iter().enumerate() {
            grads[lay.proj_b + ei] += g;
            let row = &mut grads[lay.proj_w + ei * c_total..lay.proj_w + (ei + 1) * c_total];
            for (dw, &x) in row.iter_mut().zip(pooled) {
                *dw += g * x;
            }
        }
        let mut dfeat = vec![T::zero(); c_total * l];
        let inv_len = T::of(1.0 / l as f64);
        for c in c_in..c_total {
            let mut dp = T::zero();
            for ei in 0..e_dim {
                dp += pw[ei * c_total + c] * draw[ei];
            }
            dfeat[c * l..(c + 1) * l].fill(dp * inv_len);
        }
        dfeats.push(dfeat);
    }

    for (layer, lo) in lay.layers.iter().enumerate().rev() {
        let out_c0 = lo.in_channels;
        let gamma = &p[lo.gamma..lo.beta];
        let mean = &cache.bn_mean[layer];
        let var = &cache.bn_var[layer];
        let acts = &cache.acts[layer];

        let mut dzs: Vec<Vec<T>> = cache.lens.iter().map(|&l| vec![T::zero(); f * l]).collect();
        for o in 0..f {
            let inv = T::one() / (var[o] + T::of(BN_EPS)).sqrt();
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for ((a, dfeat), &l) in acts.iter().zip(&dfeats).zip(&cache.lens) {
                let dy = &dfeat[(out_c0 + o) * l..(out_c0 + o + 1) * l];
                for (&g, &av) in dy.iter().zip(&a[o * l..(o + 1) * l]) {
                    sum_dy += g;
                    sum_dy_xhat += g * (av - mean[o]) * inv;
                }
            }
            grads[lo.gamma + o] += sum_dy_xhat;
            grads[lo.beta + o] += sum_dy;
            let scale = gamma[o] * inv;
            let (mean_dy, mean_dy_xhat) = match cache.mode {
                Mode::Train => {
                    let n = T::of(n_total as f64);
                    (sum_dy / n, sum_dy_xhat / n)
                }
                Mode::Eval => (T::zero(), T::zero()),
            };
            for ((a, dfeat), (dz, &l)) in acts.iter().zip(&dfeats).zip(dzs.iter_mut().zip(&cache.lens)) {
                let dy = &dfeat[(out_c0 + o) * l..(out_c0 + o + 1) * l];
                let arow = &a[o * l..(o + 1) * l];
                for ((d, &g), &av) in dz[o * l..(o + 1) * l].iter_mut().zip(dy).zip(arow) {
                    if av > T::zero() {
                        let xhat = (av - mean[o]) * inv;
                        *d = scale * (g - mean_dy - xhat * mean_dy_xhat);
                    }
                }
            }
        }

        let (head, tail) = grads.split_at_mut(lo.bias);
        let dw = &mut head[lo.weight..];
        let db = &mut tail[..f];
        let w = &p[lo.weight..lo.bias];
        for ((feat, dfeat), (dz, &l)) in cache.feats.iter().zip(dfeats.iter_mut()).zip(dzs.iter().zip(&cache.lens)) {
            let sh = ConvShape {
                len: l,
                cin: lo.in_channels,
                filters: f,
                kernel: cfg.kernel_size,
                dilation: cfg.dilations[layer],
            };
            conv_backward(&sh, &feat[..lo.in_channels * l], w, dz, dw, db, &mut dfeat[..lo.in_channels * l], c_in);
        }
    }
    grads
}

/// Inference on one normalized velocity sequence.
pub fn forward<T: Scalar>(params: &ModelParams<T>, input: &VelocitySequence<T>) -> Result<Embedding<T>, NetError> {
    let cache = forward_batch(params, &[input], Mode::Eval)?;
    let v = cache.into_embeddings().pop().expect("one output per input");
    Ok(Embedding {
        v,
        model_id: params.model_id(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetworkConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq<T: Scalar>(len: usize, seed: u64) -> VelocitySequence<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vx = (0..len).map(|_| T::of(rng.random_range(-2.0..2.0))).collect();
        let vy = (0..len).map(|_| T::of(rng.random_range(-2.0..2.0))).collect();
        VelocitySequence::new(125.0, vx, vy)
    }

    fn small() -> NetworkConfig {
        NetworkConfig {
            input_len: 200,
            ..NetworkConfig::compact()
        }
    }

    #[test]
    fn embedding_is_unit_norm_and_deterministic() {
        let m = ModelParams::<f32>::init(small(), 5).unwrap();
        let x = random_seq::<f32>(300, 1);
        let a = forward(&m, &x).unwrap();
        let b = forward(&m, &x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 128);
        assert!(a.is_unit(1e-6));
        assert_eq!(a.model_id, m.model_id());
    }

    #[test]
    fn variable_lengths_share_dimension() {
        let m = ModelParams::<f32>::init(small(), 5).unwrap();
        for len in [130, 1080, 1125] {
            let e = forward(&m, &random_seq::<f32>(len, len as u64)).unwrap();
            assert_eq!(e.dim(), 128);
        }
    }

    #[test]
    fn rejects_short_and_non_finite() {
        let m = ModelParams::<f32>::init(small(), 5).unwrap();
        let rf = m.config().receptive_field();
        assert!(matches!(
            forward(&m, &random_seq::<f32>(rf - 1, 1)),
            Err(NetError::InputTooShort { .. })
        ));
        assert!(forward(&m, &random_seq::<f32>(rf, 1)).is_ok());
        let mut x = random_seq::<f32>(300, 1);
        x.vx[10] = f32::NAN;
        assert!(matches!(forward(&m, &x), Err(NetError::InvalidInput(_))));
    }

    #[test]
    fn frame_order_matters() {
        let m = ModelParams::<f64>::init(small(), 5).unwrap();
        let x = random_seq::<f64>(300, 2);
        let mut y = x.clone();
        y.vx.reverse();
        let a = forward(&m, &x).unwrap();
        let b = forward(&m, &y).unwrap();
        assert_ne!(a.v, b.v);
    }

    #[test]
    fn batch_matches_single_in_eval_mode() {
        let m = ModelParams::<f64>::init(small(), 8).unwrap();
        let xs: Vec<_> = (0..3).map(|s| random_seq::<f64>(250 + s * 10, s as u64)).collect();
        let refs: Vec<_> = xs.iter().collect();
        let cache = forward_batch(&m, &refs, Mode::Eval).unwrap();
        for (x, e) in xs.iter().zip(cache.embeddings()) {
            assert_eq!(&forward(&m, x).unwrap().v, e);
        }
    }

    #[test]
    fn span_bounds() {
        assert_eq!(span(10, 0), (0, 10));
        assert_eq!(span(10, 3), (0, 7));
        assert_eq!(span(10, -3), (3, 10));
        assert_eq!(span(10, 12), (0, 0));
    }
}
