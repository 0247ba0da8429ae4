//! Gaze recordings and the conditioning operators applied before they reach
//! the embedding network: rate reduction, angular velocity, z-scoring and
//! Gaussian noise augmentation.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{cast_slice, Scalar};

/// Physiological ceiling applied to every velocity estimate, deg/s.
pub const MAX_VELOCITY_DEG_S: f64 = 1000.0;

/// Relative deviation of a sample interval from `1 / rate_hz` tolerated by
/// [`to_velocity`].
const UNIFORMITY_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("cannot decimate {source_hz} Hz to {target_hz} Hz: ratio is not an integer, resample instead")]
    DecimationRatio { source_hz: f64, target_hz: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },
    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("sampling is not uniform at sample {index}: interval {interval_s} s, expected {expected_s} s")]
    NonUniformSampling {
        index: usize,
        interval_s: f64,
        expected_s: f64,
    },
}

/// One tracker sample. Angles are in degrees relative to straight ahead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample<T> {
    pub t: T,
    pub x: T,
    pub y: T,
    pub valid: bool,
}

impl<T: Scalar> GazeSample<T> {
    pub fn new(t: T, x: T, y: T) -> Self {
        Self {
            t,
            x,
            y,
            valid: true,
        }
    }

    pub fn invalid(t: T) -> Self {
        Self {
            t,
            x: T::nan(),
            y: T::nan(),
            valid: false,
        }
    }
}

/// A timestamped two-channel gaze trace at a nominal sampling rate.
///
/// Construction enforces: `rate_hz > 0`, at least two samples, strictly
/// increasing non-negative timestamps, finite angles on valid samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RecordingWire<T>",
    into = "RecordingWire<T>",
    bound = "T: Scalar"
)]
pub struct GazeRecording<T: Scalar> {
    rate_hz: f64,
    samples: Vec<GazeSample<T>>,
    meta: BTreeMap<String, String>,
}

impl<T: Scalar> GazeRecording<T> {
    pub fn new(
        rate_hz: f64,
        samples: Vec<GazeSample<T>>,
        meta: BTreeMap<String, String>,
    ) -> Result<Self, SignalError> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(SignalError::InvalidRecording(format!(
                "rate_hz must be positive, got {rate_hz}"
            )));
        }
        if samples.len() < 2 {
            return Err(SignalError::InvalidRecording(format!(
                "need at least 2 samples, got {}",
                samples.len()
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.t.is_finite() && s.t >= T::zero()) {
                return Err(SignalError::InvalidRecording(format!(
                    "sample {i}: timestamp must be finite and non-negative"
                )));
            }
            if s.valid && !(s.x.is_finite() && s.y.is_finite()) {
                return Err(SignalError::InvalidRecording(format!(
                    "sample {i}: valid sample with non-finite angle"
                )));
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(SignalError::InvalidRecording(format!(
                    "sample {i}: timestamps must be strictly increasing"
                )));
            }
        }
        Ok(Self {
            rate_hz,
            samples,
            meta,
        })
    }

    /// Builds a recording from uniformly spaced, all-valid positions.
    pub fn from_positions(rate_hz: f64, xs: &[T], ys: &[T]) -> Result<Self, SignalError> {
        if xs.len() != ys.len() {
            return Err(SignalError::InvalidRecording(
                "channel lengths differ".into(),
            ));
        }
        let samples = xs
            .iter()
            .zip(ys)
            .enumerate()
            .map(|(i, (&x, &y))| GazeSample::new(T::of(i as f64 / rate_hz), x, y))
            .collect();
        Self::new(rate_hz, samples, BTreeMap::new())
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn samples(&self) -> &[GazeSample<T>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.meta
    }

    /// Nominal duration: first-to-last span plus one sample period.
    pub fn duration_s(&self) -> f64 {
        let first = self.samples[0].t.as_f64();
        let last = self.samples[self.samples.len() - 1].t.as_f64();
        last - first + 1.0 / self.rate_hz
    }

    pub fn valid_fraction(&self) -> f64 {
        let n = self.samples.iter().filter(|s| s.valid).count();
        n as f64 / self.samples.len() as f64
    }

    pub fn cast<U: Scalar>(&self) -> GazeRecording<U> {
        GazeRecording {
            rate_hz: self.rate_hz,
            samples: self
                .samples
                .iter()
                .map(|s| GazeSample {
                    t: U::of(s.t.as_f64()),
                    x: U::of(s.x.as_f64()),
                    y: U::of(s.y.as_f64()),
                    valid: s.valid,
                })
                .collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("recording serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, SignalError> {
        serde_json::from_str(text).map_err(|e| SignalError::InvalidRecording(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct SampleWire<T> {
    t: T,
    x_deg: Option<T>,
    y_deg: Option<T>,
    valid: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct RecordingWire<T> {
    rate_hz: f64,
    samples: Vec<SampleWire<T>>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

impl<T: Scalar> TryFrom<RecordingWire<T>> for GazeRecording<T> {
    type Error = SignalError;

    fn try_from(wire: RecordingWire<T>) -> Result<Self, Self::Error> {
        let samples = wire
            .samples
            .into_iter()
            .map(|s| GazeSample {
                t: s.t,
                x: s.x_deg.unwrap_or_else(T::nan),
                y: s.y_deg.unwrap_or_else(T::nan),
                valid: s.valid,
            })
            .collect();
        GazeRecording::new(wire.rate_hz, samples, wire.meta)
    }
}

impl<T: Scalar> From<GazeRecording<T>> for RecordingWire<T> {
    fn from(rec: GazeRecording<T>) -> Self {
        let finite = |v: T| v.is_finite().then_some(v);
        RecordingWire {
            rate_hz: rec.rate_hz,
            samples: rec
                .samples
                .into_iter()
                .map(|s| SampleWire {
                    t: s.t,
                    x_deg: finite(s.x),
                    y_deg: finite(s.y),
                    valid: s.valid,
                })
                .collect(),
            meta: rec.meta,
        }
    }
}

/// Training-time degradation: target rate plus additive Gaussian noise in
/// z-score units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    pub target_rate_hz: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            target_rate_hz: 125.0,
            noise_mean: 0.0,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.target_rate_hz.is_finite() && self.target_rate_hz > 0.0) {
            return Err(SignalError::Config(format!(
                "target_rate_hz must be positive, got {}",
                self.target_rate_hz
            )));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(SignalError::Config(format!(
                "noise_std must be non-negative, got {}",
                self.noise_std
            )));
        }
        if !self.noise_mean.is_finite() {
            return Err(SignalError::Config("noise_mean must be finite".into()));
        }
        Ok(())
    }
}

/// Per-channel z-score statistics, fitted once on a training corpus and
/// frozen into the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NormStats<T> {
    pub mean: [T; 2],
    pub std: [T; 2],
}

impl<T: Scalar> NormStats<T> {
    pub fn identity() -> Self {
        Self {
            mean: [T::zero(); 2],
            std: [T::one(); 2],
        }
    }

    pub fn cast<U: Scalar>(&self) -> NormStats<U> {
        NormStats {
            mean: [U::of(self.mean[0].as_f64()), U::of(self.mean[1].as_f64())],
            std: [U::of(self.std[0].as_f64()), U::of(self.std[1].as_f64())],
        }
    }
}

/// Two-channel angular velocity. `valid[i]` is false where the estimate was
/// imputed because the tracker lost the eye.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct VelocitySequence<T> {
    pub rate_hz: f64,
    pub vx: Vec<T>,
    pub vy: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Scalar> VelocitySequence<T> {
    /// All samples valid.
    pub fn new(rate_hz: f64, vx: Vec<T>, vy: Vec<T>) -> Self {
        assert_eq!(vx.len(), vy.len(), "velocity channels differ in length");
        let valid = vec![true; vx.len()];
        Self {
            rate_hz,
            vx,
            vy,
            valid,
        }
    }

    pub fn len(&self) -> usize {
        self.vx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vx.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[T] {
        match c {
            0 => &self.vx,
            1 => &self.vy,
            _ => panic!("velocity has two channels, asked for {c}"),
        }
    }

    pub fn cast<U: Scalar>(&self) -> VelocitySequence<U> {
        VelocitySequence {
            rate_hz: self.rate_hz,
            vx: cast_slice(&self.vx),
            vy: cast_slice(&self.vy),
            valid: self.valid.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.vx.iter().chain(&self.vy).all(|v| v.is_finite())
    }
}

fn integer_factor(source_hz: f64, target_hz: f64) -> Option<usize> {
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return None;
    }
    let ratio = source_hz / target_hz;
    let k = ratio.round();
    if k >= 1.0 && (ratio - k).abs() <= 1e-9 * k {
        Some(k as usize)
    } else {
        None
    }
}

/// Keeps every k-th sample where `k = rate / target_rate_hz`. No anti-alias
/// filtering is applied.
pub fn decimate<T: Scalar>(
    rec: &GazeRecording<T>,
    target_rate_hz: f64,
) -> Result<GazeRecording<T>, SignalError> {
    let k = integer_factor(rec.rate_hz, target_rate_hz).ok_or(SignalError::DecimationRatio {
        source_hz: rec.rate_hz,
        target_hz: target_rate_hz,
    })?;
    let samples: Vec<_> = rec.samples.iter().step_by(k).copied().collect();
    if samples.len() < 2 {
        return Err(SignalError::SignalTooShort {
            len: samples.len(),
            min: 2,
        });
    }
    Ok(GazeRecording {
        rate_hz: target_rate_hz,
        samples,
        meta: rec.meta.clone(),
    })
}

/// Linear interpolation onto a uniform grid at `target_rate_hz`.
///
/// The grid starts at the first timestamp and covers the nominal duration
/// (`duration_s`) half-open, so 1080 samples at 120 Hz become 1125 samples at
/// 125 Hz. Grid points past the last timestamp extrapolate the final segment.
/// A grid point is valid iff both bracketing source samples are valid.
pub fn resample_linear<T: Scalar>(
    rec: &GazeRecording<T>,
    target_rate_hz: f64,
) -> Result<GazeRecording<T>, SignalError> {
    if !(target_rate_hz.is_finite() && target_rate_hz > 0.0) {
        return Err(SignalError::Config(format!(
            "target_rate_hz must be positive, got {target_rate_hz}"
        )));
    }
    let src = &rec.samples;
    let t0 = src[0].t.as_f64();
    let count = (rec.duration_s() * target_rate_hz + 1e-6).floor() as usize;
    let mut out = Vec::with_capacity(count);
    let mut j = 0usize;
    for i in 0..count {
        let t = t0 + i as f64 / target_rate_hz;
        while j + 2 < src.len() && src[j + 1].t.as_f64() <= t {
            j += 1;
        }
        let (a, b) = (&src[j], &src[j + 1]);
        let (ta, tb) = (a.t.as_f64(), b.t.as_f64());
        let w = (t - ta) / (tb - ta);
        let lerp = |p: T, q: T| {
            let (p, q) = (p.as_f64(), q.as_f64());
            T::of(p + w * (q - p))
        };
        let valid = a.valid && b.valid;
        out.push(GazeSample {
            t: T::of(t),
            x: if valid { lerp(a.x, b.x) } else { T::nan() },
            y: if valid { lerp(a.y, b.y) } else { T::nan() },
            valid,
        });
    }
    if out.len() < 2 {
        return Err(SignalError::SignalTooShort {
            len: out.len(),
            min: 2,
        });
    }
    Ok(GazeRecording {
        rate_hz: target_rate_hz,
        samples: out,
        meta: rec.meta.clone(),
    })
}

/// Brings a recording to `target_rate_hz`: unchanged if the rates match,
/// decimated when the ratio is an integer, linearly resampled otherwise.
pub fn conform_rate<T: Scalar>(
    rec: &GazeRecording<T>,
    target_rate_hz: f64,
) -> Result<GazeRecording<T>, SignalError> {
    if (rec.rate_hz - target_rate_hz).abs() <= 1e-9 * target_rate_hz {
        return Ok(rec.clone());
    }
    match integer_factor(rec.rate_hz, target_rate_hz) {
        Some(_) => decimate(rec, target_rate_hz),
        None => resample_linear(rec, target_rate_hz),
    }
}

/// Central-difference angular velocity in deg/s.
///
/// Endpoints copy their neighbour, estimates are clamped to
/// ±[`MAX_VELOCITY_DEG_S`], and any sample that is invalid or adjacent to an
/// invalid sample is imputed as 0 and flagged in `valid`.
pub fn to_velocity<T: Scalar>(rec: &GazeRecording<T>) -> Result<VelocitySequence<T>, SignalError> {
    let s = &rec.samples;
    let n = s.len();
    if n < 3 {
        return Err(SignalError::SignalTooShort { len: n, min: 3 });
    }
    let expected = 1.0 / rec.rate_hz;
    for i in 1..n {
        let dt = s[i].t.as_f64() - s[i - 1].t.as_f64();
        if (dt - expected).abs() > UNIFORMITY_TOLERANCE * expected {
            return Err(SignalError::NonUniformSampling {
                index: i,
                interval_s: dt,
                expected_s: expected,
            });
        }
    }

    let half_rate = T::of(rec.rate_hz / 2.0);
    let cap = T::of(MAX_VELOCITY_DEG_S);
    let clamp = |v: T| v.max(-cap).min(cap);
    let mut vx = vec![T::zero(); n];
    let mut vy = vec![T::zero(); n];
    let mut valid = vec![false; n];
    for i in 1..n - 1 {
        if s[i - 1].valid && s[i].valid && s[i + 1].valid {
            vx[i] = clamp((s[i + 1].x - s[i - 1].x) * half_rate);
            vy[i] = clamp((s[i + 1].y - s[i - 1].y) * half_rate);
            valid[i] = true;
        }
    }
    for (end, nb) in [(0, 1), (n - 1, n - 2)] {
        if s[end].valid && valid[nb] {
            vx[end] = vx[nb];
            vy[end] = vy[nb];
            valid[end] = true;
        }
    }
    Ok(VelocitySequence {
        rate_hz: rec.rate_hz,
        vx,
        vy,
        valid,
    })
}

/// Pooled per-channel mean and population standard deviation over every
/// valid sample of every sequence.
pub fn fit_norm_stats<T: Scalar>(corpus: &[VelocitySequence<T>]) -> Result<NormStats<T>, SignalError> {
    if corpus.is_empty() {
        return Err(SignalError::DegenerateCorpus("corpus is empty".into()));
    }
    let mut mean = [T::zero(); 2];
    let mut std = [T::one(); 2];
    for c in 0..2 {
        let mut count = 0usize;
        let mut sum = 0.0f64;
        for seq in corpus {
            for (v, ok) in seq.channel(c).iter().zip(&seq.valid) {
                if *ok {
                    sum += v.as_f64();
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(SignalError::DegenerateCorpus("no valid samples".into()));
        }
        let m = sum / count as f64;
        let mut ss = 0.0f64;
        for seq in corpus {
            for (v, ok) in seq.channel(c).iter().zip(&seq.valid) {
                if *ok {
                    let d = v.as_f64() - m;
                    ss += d * d;
                }
            }
        }
        let sd = (ss / count as f64).sqrt();
        if !(sd.is_finite() && sd > 0.0) {
            return Err(SignalError::DegenerateCorpus(format!(
                "channel {c} has zero variance"
            )));
        }
        mean[c] = T::of(m);
        std[c] = T::of(sd);
    }
    Ok(NormStats { mean, std })
}

/// Per-channel z-score. Imputed samples are set to 0, the post-normalization
/// mean.
pub fn normalize<T: Scalar>(seq: &VelocitySequence<T>, stats: &NormStats<T>) -> VelocitySequence<T> {
    let z = |v: &[T], c: usize| -> Vec<T> {
        v.iter()
            .zip(&seq.valid)
            .map(|(&x, &ok)| {
                if ok {
                    (x - stats.mean[c]) / stats.std[c]
                } else {
                    T::zero()
                }
            })
            .collect()
    };
    VelocitySequence {
        rate_hz: seq.rate_hz,
        vx: z(&seq.vx, 0),
        vy: z(&seq.vy, 1),
        valid: seq.valid.clone(),
    }
}

/// Inverse of [`normalize`] on valid samples.
pub fn denormalize<T: Scalar>(seq: &VelocitySequence<T>, stats: &NormStats<T>) -> VelocitySequence<T> {
    let inv = |v: &[T], c: usize| -> Vec<T> {
        v.iter()
            .zip(&seq.valid)
            .map(|(&x, &ok)| if ok { x * stats.std[c] + stats.mean[c] } else { T::zero() })
            .collect()
    };
    VelocitySequence {
        rate_hz: seq.rate_hz,
        vx: inv(&seq.vx, 0),
        vy: inv(&seq.vy, 1),
        valid: seq.valid.clone(),
    }
}

/// Adds iid `Normal(noise_mean, noise_std²)` to both channels independently.
/// Deterministic in `cfg.seed`.
pub fn add_noise<T: Scalar>(
    seq: &VelocitySequence<T>,
    cfg: &DegradationConfig,
) -> Result<VelocitySequence<T>, SignalError> {
    cfg.validate()?;
    if cfg.noise_std == 0.0 && cfg.noise_mean == 0.0 {
        return Ok(seq.clone());
    }
    let dist = Normal::new(cfg.noise_mean, cfg.noise_std)
        .map_err(|e| SignalError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = seq.clone();
    for (x, y) in out.vx.iter_mut().zip(out.vy.iter_mut()) {
        *x += T::of(dist.sample(&mut rng));
        *y += T::of(dist.sample(&mut rng));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform(rate: f64, xs: &[f64]) -> GazeRecording<f64> {
        GazeRecording::from_positions(rate, xs, &vec![0.0; xs.len()]).unwrap()
    }

    #[test]
    fn rejects_unsorted_and_short() {
        let s = |t: f64| GazeSample::new(t, 0.0, 0.0);
        assert!(GazeRecording::new(100.0, vec![s(0.0), s(0.0)], BTreeMap::new()).is_err());
        assert!(GazeRecording::new(100.0, vec![s(0.0)], BTreeMap::new()).is_err());
        assert!(GazeRecording::new(0.0, vec![s(0.0), s(1.0)], BTreeMap::new()).is_err());
        let json = r#"{"rate_hz":10,"samples":[{"t":0.1,"x_deg":0,"y_deg":0,"valid":true},{"t":0.0,"x_deg":0,"y_deg":0,"valid":true}],"meta":{}}"#;
        assert!(GazeRecording::<f64>::from_json(json).is_err());
    }

    #[test]
    fn json_round_trip_with_invalid_samples() {
        let mut samples: Vec<_> = (0..4).map(|i| GazeSample::new(i as f64 * 0.1, i as f64, -1.0)).collect();
        samples[2] = GazeSample::invalid(0.2);
        let mut meta = BTreeMap::new();
        meta.insert("subject".to_string(), "A".to_string());
        let rec = GazeRecording::new(10.0, samples, meta).unwrap();
        let text = rec.to_json();
        assert!(text.contains("\"x_deg\":null"));
        let back = GazeRecording::<f64>::from_json(&text).unwrap();
        assert_eq!(back.meta()["subject"], "A");
        assert!(!back.samples()[2].valid);
        assert_eq!(back.samples()[3], rec.samples()[3]);
    }

    #[test]
    fn decimate_capture_rates() {
        let rec = uniform(1000.0, &vec![0.0; 9000]);
        let out = decimate(&rec, 125.0).unwrap();
        assert_eq!(out.len(), 1125);
        assert_eq!(out.rate_hz(), 125.0);
        assert_eq!(out.samples()[1].t, rec.samples()[8].t);
    }

    #[test]
    fn decimate_identity_and_ratio_error() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let rec = uniform(250.0, &xs);
        assert_eq!(decimate(&rec, 250.0).unwrap(), rec);
        let rec120 = uniform(120.0, &vec![0.0; 1080]);
        assert!(matches!(
            decimate(&rec120, 125.0),
            Err(SignalError::DecimationRatio { .. })
        ));
    }

    #[test]
    fn decimate_length_is_ceil() {
        let rec = uniform(1000.0, &vec![0.0; 9003]);
        assert_eq!(decimate(&rec, 125.0).unwrap().len(), 9003usize.div_ceil(8));
    }

    #[test]
    fn resample_two_point_ramp() {
        let rec = GazeRecording::new(
            1.0,
            vec![GazeSample::new(0.0, 0.0, 0.0), GazeSample::new(1.0, 8.0, 0.0)],
            BTreeMap::new(),
        )
        .unwrap();
        let out = resample_linear(&rec, 5.0).unwrap();
        let expect = [0.0, 1.6, 3.2, 4.8, 6.4];
        for (i, e) in expect.iter().enumerate() {
            let s = out.samples()[i];
            assert!((s.t - 0.2 * i as f64).abs() < 1e-12);
            assert!((s.x - e).abs() < 1e-12, "x[{i}] = {}", s.x);
        }
    }

    #[test]
    fn resample_identity() {
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 * 0.07).sin() * 10.0).collect();
        let rec = uniform(125.0, &xs);
        let out = resample_linear(&rec, 125.0).unwrap();
        assert_eq!(out.len(), rec.len());
        for (a, b) in out.samples().iter().zip(rec.samples()) {
            assert!((a.x - b.x).abs() < 1e-9);
            assert!((a.t - b.t).abs() < 1e-9);
        }
    }

    #[test]
    fn resample_120_to_125_count() {
        let rec = uniform(120.0, &vec![1.0; 1080]);
        let out = resample_linear(&rec, 125.0).unwrap();
        // Brute-force enumeration of grid instants inside the nominal span [0, 9).
        let span = rec.duration_s();
        let brute = (0..10_000).take_while(|i| (*i as f64) / 125.0 < span - 1e-9).count();
        assert_eq!(brute, 1125);
        assert_eq!(out.len(), brute);
    }

    #[test]
    fn resample_validity_needs_both_brackets() {
        let mut samples: Vec<_> = (0..6).map(|i| GazeSample::new(i as f64, i as f64, 0.0)).collect();
        samples[3] = GazeSample::invalid(3.0);
        let rec = GazeRecording::new(1.0, samples, BTreeMap::new()).unwrap();
        let out = resample_linear(&rec, 2.0).unwrap();
        let flags: Vec<bool> = out.samples().iter().map(|s| s.valid).collect();
        // t = 2.0, 2.5 bracket (2,3); t = 3.0, 3.5 bracket (3,4).
        assert_eq!(&flags[4..8], &[false, false, false, false]);
        assert!(flags[3] && flags[8]);
        assert!(resample_linear(&rec, 0.0).is_err());
    }

    #[test]
    fn velocity_constant_and_ramp() {
        let rec = uniform(100.0, &vec![3.0; 20]);
        let v = to_velocity(&rec).unwrap();
        assert!(v.vx.iter().all(|&x| x == 0.0));
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 100.0 * 10.0).collect();
        let v = to_velocity(&uniform(100.0, &xs)).unwrap();
        for &x in &v.vx[1..49] {
            assert!((x - 10.0).abs() < 1e-9);
        }
        assert_eq!(v.vx[0], v.vx[1]);
        assert_eq!(v.vx[49], v.vx[48]);
    }

    #[test]
    fn velocity_step_clamps() {
        let mut xs = vec![0.0; 10];
        for x in xs.iter_mut().skip(5) {
            *x = 40.0;
        }
        let v = to_velocity(&uniform(125.0, &xs)).unwrap();
        // (40 - 0) * 125 / 2 = 2500 deg/s before clamping.
        assert_eq!(v.vx[4], 1000.0);
        assert_eq!(v.vx[5], 1000.0);
        assert_eq!(v.vx[3], 0.0);
    }

    #[test]
    fn velocity_imputes_around_invalid() {
        let mut samples: Vec<_> = (0..8).map(|i| GazeSample::new(i as f64 / 10.0, i as f64, 0.0)).collect();
        samples[4] = GazeSample::invalid(0.4);
        let rec = GazeRecording::new(10.0, samples, BTreeMap::new()).unwrap();
        let v = to_velocity(&rec).unwrap();
        assert_eq!(v.valid, vec![true, true, true, false, false, false, true, true]);
        assert_eq!(&v.vx[3..6], &[0.0, 0.0, 0.0]);
        assert!((v.vx[2] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn velocity_errors() {
        assert!(matches!(
            to_velocity(&uniform(10.0, &[0.0, 1.0])),
            Err(SignalError::SignalTooShort { len: 2, min: 3 })
        ));
        let samples = vec![
            GazeSample::new(0.0, 0.0, 0.0),
            GazeSample::new(0.1, 0.0, 0.0),
            GazeSample::new(0.5, 0.0, 0.0),
        ];
        let rec = GazeRecording::new(10.0, samples, BTreeMap::new()).unwrap();
        assert!(matches!(
            to_velocity(&rec),
            Err(SignalError::NonUniformSampling { index: 2, .. })
        ));
    }

    #[test]
    fn norm_stats_examples() {
        let seq = |v: Vec<f64>| VelocitySequence::new(1.0, v.clone(), v);
        let s = fit_norm_stats(&[seq(vec![0.0, 2.0])]).unwrap();
        assert_eq!(s.mean, [1.0, 1.0]);
        assert_eq!(s.std, [1.0, 1.0]);
        let s = fit_norm_stats(&[seq(vec![1.0, 1.0]), seq(vec![3.0, 3.0])]).unwrap();
        assert_eq!(s.mean[0], 2.0);
        assert_eq!(s.std[0], 1.0);
        assert!(matches!(
            fit_norm_stats(&[seq(vec![0.0; 5]), seq(vec![0.0; 3])]),
            Err(SignalError::DegenerateCorpus(_))
        ));
        assert!(fit_norm_stats::<f64>(&[]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let seq = VelocitySequence::new(1.0, vec![10.0, -3.0], vec![10.0, 4.0]);
        assert_eq!(normalize(&seq, &NormStats::identity()), seq);
        let stats = NormStats {
            mean: [10.0, 10.0],
            std: [5.0, 5.0],
        };
        assert_eq!(normalize(&seq, &stats).vx[0], 0.0);

        let corpus: Vec<_> = (0..4)
            .map(|k| {
                let v: Vec<f64> = (0..100).map(|i| ((i * 7 + k * 13) % 23) as f64 * 3.1 - 20.0).collect();
                VelocitySequence::new(125.0, v.clone(), v.iter().map(|x| x * 0.5 + 4.0).collect())
            })
            .collect();
        let stats = fit_norm_stats(&corpus).unwrap();
        let normed: Vec<_> = corpus.iter().map(|s| normalize(s, &stats)).collect();
        let again = fit_norm_stats(&normed).unwrap();
        for c in 0..2 {
            assert!(again.mean[c].abs() < 1e-9);
            assert!((again.std[c] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_zero_std_and_determinism() {
        let seq = VelocitySequence::new(125.0, vec![1.0f64; 64], vec![-1.0; 64]);
        let cfg = DegradationConfig {
            noise_std: 0.0,
            ..Default::default()
        };
        assert_eq!(add_noise(&seq, &cfg).unwrap(), seq);
        let cfg = DegradationConfig {
            seed: 9,
            ..Default::default()
        };
        let a = add_noise(&seq, &cfg).unwrap();
        let b = add_noise(&seq, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, seq);
        let bad = DegradationConfig {
            noise_std: -0.1,
            ..Default::default()
        };
        assert!(matches!(add_noise(&seq, &bad), Err(SignalError::Config(_))));
    }

    /// Independent sampler: Box-Muller over a SplitMix64 stream.
    fn box_muller_stats(seed: u64, n: usize, std: f64) -> (f64, f64) {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            ((z >> 11) as f64 + 0.5) / (1u64 << 53) as f64
        };
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let (u1, u2) = (next(), next());
            let g = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * std;
            sum += g;
            sq += g * g;
        }
        let m = sum / n as f64;
        (m, (sq / n as f64 - m * m).sqrt())
    }

    #[test]
    fn clt_bounds_hold_for_independent_sampler() {
        // The bounds used for the noise acceptance check: |mean| <= 5e-4 and
        // std within [0.0995, 0.1005] at n = 1e6, sigma = 0.1.
        for seed in 0..5 {
            let (m, s) = box_muller_stats(seed, 1_000_000, 0.1);
            assert!(m.abs() <= 5e-4, "seed {seed}: mean {m}");
            assert!((0.0995..=0.1005).contains(&s), "seed {seed}: std {s}");
        }
    }

    #[test]
    fn noise_moments_over_a_million_zeros() {
        let n = 1_000_000;
        let seq = VelocitySequence::new(125.0, vec![0.0f64; n], vec![0.0; n]);
        let cfg = DegradationConfig {
            seed: 2024,
            ..Default::default()
        };
        let out = add_noise(&seq, &cfg).unwrap();
        for c in 0..2 {
            let v = out.channel(c);
            let m = v.iter().sum::<f64>() / n as f64;
            let s = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt();
            assert!(m.abs() <= 5e-4, "mean {m}");
            assert!((0.0995..=0.1005).contains(&s), "std {s}");
        }
    }

    fn pooled_var(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn stacked_noise_variances_add() {
        let n = 400_000;
        let seq = VelocitySequence::new(125.0, vec![0.0f64; n], vec![0.0; n]);
        let a = DegradationConfig { noise_std: 0.1, seed: 1, ..Default::default() };
        let b = DegradationConfig { noise_std: 0.2, seed: 2, ..Default::default() };
        let out = add_noise(&add_noise(&seq, &a).unwrap(), &b).unwrap();
        let var = pooled_var(&out.vx);
        let expect = 0.01 + 0.04;
        // Var of the sample variance is 2σ⁴/n; 5σ band.
        let tol = 5.0 * (2.0f64 / n as f64).sqrt() * expect;
        assert!((var - expect).abs() < tol, "var {var}");
    }

    proptest! {
        #[test]
        fn decimation_composes(a in 1usize..5, b in 1usize..5, n in 40usize..200) {
            let rate = 60.0 * (a * b) as f64;
            let xs: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
            let rec = uniform(rate, &xs);
            let two = decimate(&decimate(&rec, rate / a as f64).unwrap(), rate / (a * b) as f64);
            let one = decimate(&rec, rate / (a * b) as f64);
            match (one, two) {
                (Ok(x), Ok(y)) => {
                    prop_assert_eq!(x.len(), y.len());
                    for (p, q) in x.samples().iter().zip(y.samples()) {
                        prop_assert_eq!(p.x, q.x);
                        prop_assert!((p.t - q.t).abs() < 1e-12);
                    }
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "one path failed"),
            }
        }

        #[test]
        fn resample_exact_for_affine(src in 30.0f64..1500.0, dst in 30.0f64..1500.0,
                                     slope in -50.0f64..50.0, icpt in -20.0f64..20.0) {
            let n = ((2.0 * src) as usize).max(3);
            let xs: Vec<f64> = (0..n).map(|i| icpt + slope * i as f64 / src).collect();
            let ys: Vec<f64> = xs.iter().map(|x| -0.5 * x + 1.0).collect();
            let rec = GazeRecording::from_positions(src, &xs, &ys).unwrap();
            let out = resample_linear(&rec, dst).unwrap();
            for s in out.samples() {
                prop_assert!((s.x - (icpt + slope * s.t)).abs() < 1e-9);
                prop_assert!((s.y - (-0.5 * (icpt + slope * s.t) + 1.0)).abs() < 1e-9);
            }
        }

        #[test]
        fn velocity_time_reversal(xs in proptest::collection::vec(-30.0f64..30.0, 3..80)) {
            let ys: Vec<f64> = xs.iter().map(|x| x * 0.3).collect();
            let fwd = to_velocity(&GazeRecording::from_positions(125.0, &xs, &ys).unwrap()).unwrap();
            let rx: Vec<f64> = xs.iter().rev().copied().collect();
            let ry: Vec<f64> = ys.iter().rev().copied().collect();
            let rev = to_velocity(&GazeRecording::from_positions(125.0, &rx, &ry).unwrap()).unwrap();
            let n = xs.len();
            for i in 0..n {
                prop_assert!((fwd.vx[i] + rev.vx[n - 1 - i]).abs() < 1e-9);
                prop_assert!((fwd.vy[i] + rev.vy[n - 1 - i]).abs() < 1e-9);
            }
        }

        #[test]
        fn normalize_inverts(v in proptest::collection::vec(-900.0f64..900.0, 1..64),
                             m0 in -50.0f64..50.0, s0 in 0.1f64..200.0) {
            let seq = VelocitySequence::new(125.0, v.clone(), v.iter().map(|x| -x).collect());
            let stats = NormStats { mean: [m0, -m0], std: [s0, s0 * 2.0] };
            let back = denormalize(&normalize(&seq, &stats), &stats);
            for (a, b) in back.vx.iter().zip(&seq.vx).chain(back.vy.iter().zip(&seq.vy)) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
