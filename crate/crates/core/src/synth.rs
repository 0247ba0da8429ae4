//! Parametric oculomotor simulator.
//!
//! Each synthetic user is a [`SyntheticUserProfile`]: main-sequence constants,
//! saccade latency, fixation jitter and drift, and a habitual undershoot that
//! is fixed by a single corrective saccade. [`simulate_recording`] plays a
//! [`StimulusSchedule`] through a profile and samples the resulting gaze at
//! the requested rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, LabeledRecording};
use crate::scalar::Scalar;
use crate::seeds::derive_seed;
use crate::signal::{to_velocity, GazeRecording, GazeSample, SignalError};
use crate::stimulus::{ScheduleParams, StimulusError, StimulusSchedule};

/// Linear saccade duration law: `DURATION_SLOPE_S_PER_DEG * A + DURATION_INTERCEPT_S`.
pub const DURATION_SLOPE_S_PER_DEG: f64 = 0.0022;
pub const DURATION_INTERCEPT_S: f64 = 0.021;
/// Delay between primary saccade offset and the corrective saccade.
pub const CORRECTION_DELAY_S: f64 = 0.1;
/// Correlation time of the fixation jitter process.
pub const JITTER_TIME_CONSTANT_S: f64 = 0.02;
/// Jitter is truncated at this many standard deviations.
pub const JITTER_CLAMP_SIGMAS: f64 = 3.0;
/// Largest displacement drift can accumulate within one fixation.
pub const MAX_DRIFT_DEG: f64 = 1.5;
const MIN_LATENCY_S: f64 = 0.08;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("invalid simulation parameters: {0}")]
    Config(String),
    #[error(transparent)]
    Stimulus(#[from] StimulusError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUserProfile {
    /// Main-sequence asymptotic peak velocity, deg/s.
    pub eta: f64,
    /// Main-sequence amplitude constant, deg.
    pub c: f64,
    pub latency_mean_s: f64,
    pub latency_std_s: f64,
    pub fix_noise_deg: f64,
    pub drift_deg_s: f64,
    pub undershoot_frac: f64,
    pub seed: u64,
}

impl Default for SyntheticUserProfile {
    fn default() -> Self {
        Self {
            eta: 550.0,
            c: 7.0,
            latency_mean_s: 0.22,
            latency_std_s: 0.04,
            fix_noise_deg: 0.1,
            drift_deg_s: 0.5,
            undershoot_frac: 0.08,
            seed: 0,
        }
    }
}

impl SyntheticUserProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(SynthError::Profile(what.to_string()))
            }
        };
        check((200.0..=800.0).contains(&self.eta), "eta must lie in [200, 800] deg/s")?;
        check((3.0..=12.0).contains(&self.c), "c must lie in [3, 12] deg")?;
        check(
            (0.1..=0.4).contains(&self.latency_mean_s),
            "latency_mean_s must lie in [0.1, 0.4] s",
        )?;
        check(self.latency_std_s >= 0.0, "latency_std_s must be non-negative")?;
        check(self.fix_noise_deg >= 0.0, "fix_noise_deg must be non-negative")?;
        check(self.drift_deg_s >= 0.0, "drift_deg_s must be non-negative")?;
        check(
            (0.0..=0.2).contains(&self.undershoot_frac),
            "undershoot_frac must lie in [0, 0.2]",
        )
    }

    /// Session-to-session variation: multiplicative log-normal jitter of
    /// relative size `spread` on the continuous parameters.
    fn session_variant(&self, rng: &mut impl Rng, spread: f64) -> Self {
        let mut f = || (spread * rng.sample::<f64, _>(StandardNormal)).exp();
        Self {
            eta: (self.eta * f()).clamp(200.0, 800.0),
            c: (self.c * f()).clamp(3.0, 12.0),
            latency_mean_s: (self.latency_mean_s * f()).clamp(0.1, 0.4),
            latency_std_s: self.latency_std_s * f(),
            fix_noise_deg: self.fix_noise_deg * f(),
            drift_deg_s: self.drift_deg_s * f(),
            undershoot_frac: (self.undershoot_frac * f()).clamp(0.0, 0.2),
            seed: self.seed,
        }
    }
}

/// Main-sequence peak velocity `eta * (1 - exp(-A / c))`, deg/s.
pub fn peak_velocity(profile: &SyntheticUserProfile, amplitude_deg: f64) -> f64 {
    profile.eta * (1.0 - (-amplitude_deg.max(0.0) / profile.c).exp())
}

pub fn main_sequence_duration(amplitude_deg: f64) -> f64 {
    DURATION_SLOPE_S_PER_DEG * amplitude_deg + DURATION_INTERCEPT_S
}

/// Velocity profile of one saccade: raised-cosine ramps of length `ramp_s`
/// around a flat top at `peak`. With `ramp_s = duration / 2` it is a plain
/// raised cosine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaccadeShape {
    pub amplitude: f64,
    pub peak: f64,
    pub duration: f64,
    pub ramp_s: f64,
}

impl SaccadeShape {
    /// Keeps the amplitude and peak exact. The duration follows the linear law
    /// when a tapered profile can meet it, otherwise it becomes `2A / peak`.
    pub fn new(amplitude: f64, peak: f64) -> Self {
        let law = main_sequence_duration(amplitude);
        let area_ratio = amplitude / (peak * law);
        if (0.5..=1.0).contains(&area_ratio) {
            Self {
                amplitude,
                peak,
                duration: law,
                ramp_s: law - amplitude / peak,
            }
        } else {
            let duration = 2.0 * amplitude / peak;
            Self {
                amplitude,
                peak,
                duration,
                ramp_s: duration / 2.0,
            }
        }
    }

    pub fn for_profile(profile: &SyntheticUserProfile, amplitude: f64) -> Self {
        Self::new(amplitude, peak_velocity(profile, amplitude))
    }

    pub fn velocity(&self, tau: f64) -> f64 {
        if tau <= 0.0 || tau >= self.duration {
            return 0.0;
        }
        let r = self.ramp_s;
        let edge = tau.min(self.duration - tau);
        if r > 0.0 && edge < r {
            0.5 * self.peak * (1.0 - (std::f64::consts::PI * edge / r).cos())
        } else {
            self.peak
        }
    }

    /// Distance covered after `tau` seconds, closed form.
    pub fn displacement(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        if tau >= self.duration {
            return self.amplitude;
        }
        let r = self.ramp_s;
        let ramp = |s: f64| {
            if r > 0.0 {
                0.5 * self.peak * (s - r / std::f64::consts::PI * (std::f64::consts::PI * s / r).sin())
            } else {
                0.0
            }
        };
        if tau < r {
            ramp(tau)
        } else if tau <= self.duration - r {
            ramp(r) + self.peak * (tau - r)
        } else {
            self.amplitude - ramp(self.duration - tau)
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Fixation {
        t0: f64,
        anchor: (f64, f64),
        drift: (f64, f64),
    },
    Saccade {
        t0: f64,
        from: (f64, f64),
        to: (f64, f64),
        shape: SaccadeShape,
        corrective: bool,
    },
}

impl Segment {
    fn start(&self) -> f64 {
        match *self {
            Segment::Fixation { t0, .. } | Segment::Saccade { t0, .. } => t0,
        }
    }

    fn position(&self, t: f64) -> (f64, f64) {
        match *self {
            Segment::Fixation { t0, anchor, drift } => {
                let speed = drift.0.hypot(drift.1);
                let mut dt = t - t0;
                if speed > 0.0 {
                    dt = dt.min(MAX_DRIFT_DEG / speed);
                }
                (anchor.0 + drift.0 * dt, anchor.1 + drift.1 * dt)
            }
            Segment::Saccade { t0, from, to, shape, .. } => {
                let tau = t - t0;
                if tau >= shape.duration {
                    return to;
                }
                let s = shape.displacement(tau) / shape.amplitude;
                (from.0 + s * (to.0 - from.0), from.1 + s * (to.1 - from.1))
            }
        }
    }
}

/// Primary saccade of a simulated trial, for closure checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaccadeEvent {
    pub onset_s: f64,
    pub shape: SaccadeShape,
    pub corrective: bool,
}

/// Time a trial needs from primary onset until the gaze settles on `goal`.
fn trial_budget(profile: &SyntheticUserProfile, from: (f64, f64), goal: (f64, f64)) -> f64 {
    let dist = (goal.0 - from.0).hypot(goal.1 - from.1);
    let u = profile.undershoot_frac;
    let mut t = SaccadeShape::for_profile(profile, (1.0 - u) * dist).duration;
    if u > 0.0 && dist > 0.0 {
        // Drift can grow the residual by at most the drift cap.
        let resid = u * dist + profile.drift_deg_s * CORRECTION_DELAY_S;
        t += CORRECTION_DELAY_S + SaccadeShape::for_profile(profile, resid).duration;
    }
    t
}

struct Plan {
    segments: Vec<Segment>,
}

impl Plan {
    fn build(profile: &SyntheticUserProfile, sched: &StimulusSchedule, rng: &mut ChaCha8Rng) -> Self {
        let mut segments = Vec::new();
        let drift_vec = |rng: &mut ChaCha8Rng| {
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            (profile.drift_deg_s * theta.cos(), profile.drift_deg_s * theta.sin())
        };
        let mut current = Segment::Fixation {
            t0: 0.0,
            anchor: (0.0, 0.0),
            drift: drift_vec(rng),
        };
        let mut free_at = 0.0f64;
        let latency = Normal::new(profile.latency_mean_s, profile.latency_std_s.max(0.0))
            .expect("latency std is non-negative");

        for target in &sched.targets {
            let goal = (target.x_deg, target.y_deg);
            let end = target.onset_s + target.duration_s;
            let lat = latency
                .sample(rng)
                .clamp(MIN_LATENCY_S, (0.6 * target.duration_s).max(MIN_LATENCY_S));
            let mut t_sac = (target.onset_s + lat).max(free_at);
            let latest = end - trial_budget(profile, current.position(t_sac), goal);
            if t_sac > latest {
                t_sac = latest.max(target.onset_s).max(free_at);
            }

            let from = current.position(t_sac);
            let step = (goal.0 - from.0, goal.1 - from.1);
            let dist = step.0.hypot(step.1);
            if dist < 1e-9 {
                continue;
            }
            let u = profile.undershoot_frac;
            let landing = (goal.0 - u * step.0, goal.1 - u * step.1);
            let primary = SaccadeShape::for_profile(profile, (1.0 - u) * dist);

            segments.push(current);
            segments.push(Segment::Saccade {
                t0: t_sac,
                from,
                to: landing,
                shape: primary,
                corrective: false,
            });
            let mut t = t_sac + primary.duration;
            current = Segment::Fixation {
                t0: t,
                anchor: landing,
                drift: drift_vec(rng),
            };

            if u > 0.0 {
                let t_corr = t + CORRECTION_DELAY_S;
                let at = current.position(t_corr);
                let resid = (goal.0 - at.0).hypot(goal.1 - at.1);
                if resid > 1e-9 {
                    let shape = SaccadeShape::for_profile(profile, resid);
                    segments.push(current);
                    segments.push(Segment::Saccade {
                        t0: t_corr,
                        from: at,
                        to: goal,
                        shape,
                        corrective: true,
                    });
                    t = t_corr + shape.duration;
                    current = Segment::Fixation {
                        t0: t,
                        anchor: goal,
                        drift: drift_vec(rng),
                    };
                }
            }
            free_at = t;
        }
        segments.push(current);
        Self { segments }
    }

    fn saccades(&self) -> Vec<SaccadeEvent> {
        self.segments
            .iter()
            .filter_map(|seg| match *seg {
                Segment::Saccade {
                    t0,
                    shape,
                    corrective,
                    ..
                } => Some(SaccadeEvent {
                    onset_s: t0,
                    shape,
                    corrective,
                }),
                Segment::Fixation { .. } => None,
            })
            .collect()
    }
}

fn check_rate(rate_hz: f64) -> Result<(), SynthError> {
    if (60.0..=2000.0).contains(&rate_hz) {
        Ok(())
    } else {
        Err(SynthError::Config(format!("rate_hz must lie in [60, 2000], got {rate_hz}")))
    }
}

fn session_rng(profile: &SyntheticUserProfile, session_seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[profile.seed, session_seed]))
}

/// Simulates one recording of `sched` at `rate_hz`. Deterministic in
/// `(profile.seed, session_seed)`.
pub fn simulate_recording<T: Scalar>(
    profile: &SyntheticUserProfile,
    sched: &StimulusSchedule,
    rate_hz: f64,
    session_seed: u64,
) -> Result<GazeRecording<T>, SynthError> {
    profile.validate()?;
    check_rate(rate_hz)?;
    let mut rng = session_rng(profile, session_seed);
    let plan = Plan::build(profile, sched, &mut rng);

    let n = (sched.total_s * rate_hz).round() as usize;
    let sigma = profile.fix_noise_deg;
    let decay = (-1.0 / (rate_hz * JITTER_TIME_CONSTANT_S)).exp();
    let innov = sigma * (1.0 - decay * decay).sqrt();
    let limit = JITTER_CLAMP_SIGMAS * sigma;
    let mut jitter = [0.0f64; 2];
    if sigma > 0.0 {
        for j in &mut jitter {
            *j = (sigma * rng.sample::<f64, _>(StandardNormal)).clamp(-limit, limit);
        }
    }

    let mut samples = Vec::with_capacity(n);
    let mut seg = 0usize;
    for i in 0..n {
        let t = i as f64 / rate_hz;
        while seg + 1 < plan.segments.len() && plan.segments[seg + 1].start() <= t {
            seg += 1;
        }
        let (x, y) = plan.segments[seg].position(t);
        if sigma > 0.0 && i > 0 {
            for j in &mut jitter {
                *j = (*j * decay + innov * rng.sample::<f64, _>(StandardNormal)).clamp(-limit, limit);
            }
        }
        samples.push(GazeSample::new(T::of(t), T::of(x + jitter[0]), T::of(y + jitter[1])));
    }
    Ok(GazeRecording::new(rate_hz, samples, Default::default())?)
}

/// Saccades planned for a session, in onset order.
pub fn planned_saccades(
    profile: &SyntheticUserProfile,
    sched: &StimulusSchedule,
    session_seed: u64,
) -> Vec<SaccadeEvent> {
    let mut rng = session_rng(profile, session_seed);
    Plan::build(profile, sched, &mut rng).saccades()
}

/// Inter-user parameter ranges used by [`make_population`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationRanges {
    pub eta: (f64, f64),
    pub c: (f64, f64),
    pub latency_mean_s: (f64, f64),
    pub latency_std_s: (f64, f64),
    pub fix_noise_deg: (f64, f64),
    pub drift_deg_s: (f64, f64),
    pub undershoot_frac: (f64, f64),
    /// Relative session-to-session spread of each parameter.
    pub session_spread: f64,
}

impl Default for PopulationRanges {
    fn default() -> Self {
        Self {
            eta: (300.0, 780.0),
            c: (3.5, 11.0),
            latency_mean_s: (0.15, 0.35),
            latency_std_s: (0.02, 0.06),
            fix_noise_deg: (0.02, 0.35),
            drift_deg_s: (0.0, 1.2),
            undershoot_frac: (0.0, 0.15),
            session_spread: 0.03,
        }
    }
}

impl PopulationRanges {
    pub fn draw(&self, rng: &mut impl Rng, seed: u64) -> SyntheticUserProfile {
        let mut u = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        SyntheticUserProfile {
            eta: u(self.eta),
            c: u(self.c),
            latency_mean_s: u(self.latency_mean_s),
            latency_std_s: u(self.latency_std_s),
            fix_noise_deg: u(self.fix_noise_deg),
            drift_deg_s: u(self.drift_deg_s),
            undershoot_frac: u(self.undershoot_frac),
            seed,
        }
    }
}

pub fn user_label(index: usize) -> String {
    format!("U{index:03}")
}

/// Draws `n_users` profiles and simulates `n_sessions` recordings of each,
/// every session with its own stimulus order. Sessions are numbered from 1.
pub fn make_population<T: Scalar>(
    n_users: usize,
    n_sessions: usize,
    master_seed: u64,
    sched_template: &ScheduleParams,
    rate_hz: f64,
) -> Result<Corpus<T>, SynthError> {
    make_population_with(n_users, n_sessions, master_seed, sched_template, rate_hz, &PopulationRanges::default())
}

pub fn make_population_with<T: Scalar>(
    n_users: usize,
    n_sessions: usize,
    master_seed: u64,
    sched_template: &ScheduleParams,
    rate_hz: f64,
    ranges: &PopulationRanges,
) -> Result<Corpus<T>, SynthError> {
    if n_users < 2 || n_sessions < 2 {
        return Err(SynthError::Config(format!(
            "need at least 2 users and 2 sessions, got {n_users} x {n_sessions}"
        )));
    }
    check_rate(rate_hz)?;
    let mut entries = Vec::with_capacity(n_users * n_sessions);
    for user in 0..n_users {
        let user_seed = derive_seed(&[master_seed, user as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(user_seed);
        let base = ranges.draw(&mut rng, user_seed);
        let label = user_label(user);
        for session in 1..=n_sessions as u64 {
            let session_seed = derive_seed(&[master_seed, user as u64, session]);
            let mut srng = ChaCha8Rng::seed_from_u64(derive_seed(&[session_seed, 1]));
            let profile = base.session_variant(&mut srng, ranges.session_spread);
            let sched = sched_template.generate(derive_seed(&[session_seed, 2]))?;
            let mut rec = simulate_recording::<T>(&profile, &sched, rate_hz, session_seed)?;
            let meta = rec.meta_mut();
            meta.insert("subject".into(), label.clone());
            meta.insert("session".into(), session.to_string());
            meta.insert("task".into(), "RAN9".into());
            entries.push(LabeledRecording {
                user: label.clone(),
                session: session as u32,
                recording: rec,
            });
        }
    }
    Ok(Corpus { entries })
}

/// Normalized histogram of angular speed over log-spaced bins from 1 to
/// 1000 deg/s (plus an underflow bin).
pub fn speed_histogram<T: Scalar>(rec: &GazeRecording<T>, bins: usize) -> Result<Vec<f64>, SignalError> {
    let v = to_velocity(rec)?;
    let mut h = vec![0.0; bins + 1];
    let mut n = 0.0;
    for ((x, y), ok) in v.vx.iter().zip(&v.vy).zip(&v.valid) {
        if !ok {
            continue;
        }
        let s = x.as_f64().hypot(y.as_f64());
        let idx = if s < 1.0 {
            0
        } else {
            1 + ((s.log10() / 3.0 * bins as f64) as usize).min(bins - 1)
        };
        h[idx] += 1.0;
        n += 1.0;
    }
    if n > 0.0 {
        h.iter_mut().for_each(|x| *x /= n);
    }
    Ok(h)
}

pub fn bhattacharyya_distance(p: &[f64], q: &[f64]) -> f64 {
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    -bc.max(1e-300).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::decimate;

    fn quiet_profile() -> SyntheticUserProfile {
        SyntheticUserProfile {
            fix_noise_deg: 0.0,
            drift_deg_s: 0.0,
            undershoot_frac: 0.0,
            latency_std_s: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn main_sequence_values() {
        let p = SyntheticUserProfile::default();
        assert_eq!(peak_velocity(&p, 0.0), 0.0);
        // 550 * (1 - e^{-15/7}) = 485.5 (to one decimal).
        let v = peak_velocity(&p, 15.0);
        assert!((v - 485.5).abs() < 0.05, "{v}");
        assert!((peak_velocity(&p, 5.0 * p.c) - p.eta).abs() / p.eta < 0.01);
        let mut prev = 0.0;
        for a in 1..60 {
            let v = peak_velocity(&p, a as f64);
            assert!(v > prev && v < p.eta);
            prev = v;
        }
    }

    #[test]
    fn saccade_velocity_integrates_to_amplitude() {
        for &(eta, c) in &[(550.0, 7.0), (200.0, 12.0), (800.0, 3.0), (400.0, 5.0)] {
            let p = SyntheticUserProfile { eta, c, ..Default::default() };
            for &a in &[0.5, 2.0, 10.0, 15.0, 30.0, 36.0] {
                let shape = SaccadeShape::for_profile(&p, a);
                let steps = 20_000;
                let h = shape.duration / steps as f64;
                let mut area = 0.0;
                for k in 0..steps {
                    area += 0.5 * h * (shape.velocity(k as f64 * h) + shape.velocity((k + 1) as f64 * h));
                }
                assert!((area - a).abs() / a < 0.01, "eta {eta} c {c} A {a}: {area}");
                assert!((shape.displacement(shape.duration) - a).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duration_follows_law_when_feasible() {
        let p = SyntheticUserProfile::default();
        let shape = SaccadeShape::for_profile(&p, 15.0);
        assert!((shape.duration - main_sequence_duration(15.0)).abs() < 1e-12);
        assert!(shape.ramp_s > 0.0 && shape.ramp_s <= shape.duration / 2.0);
    }

    #[test]
    fn quiet_profile_is_piecewise_constant_on_targets() {
        let sched = ScheduleParams::default().generate(5).unwrap();
        let p = quiet_profile();
        let rec = simulate_recording::<f64>(&p, &sched, 1000.0, 1).unwrap();
        let sacs = planned_saccades(&p, &sched, 1);
        let in_saccade = |t: f64| sacs.iter().any(|s| t >= s.onset_s && t < s.onset_s + s.shape.duration);
        let mut grid = vec![(0.0, 0.0)];
        grid.extend(sched.targets.iter().map(|t| (t.x_deg, t.y_deg)));
        for s in rec.samples() {
            if in_saccade(s.t) {
                continue;
            }
            assert!(grid.iter().any(|&(x, y)| s.x == x && s.y == y), "t={} at ({}, {})", s.t, s.x, s.y);
        }
        assert!(sacs.iter().all(|s| !s.corrective));
    }

    #[test]
    fn peak_velocity_closure() {
        let sched = ScheduleParams::default().generate(8).unwrap();
        let p = quiet_profile();
        let rec = simulate_recording::<f64>(&p, &sched, 1000.0, 3).unwrap();
        let v = to_velocity(&rec).unwrap();
        for sac in planned_saccades(&p, &sched, 3) {
            let i0 = (sac.onset_s * 1000.0).floor() as usize;
            let i1 = ((sac.onset_s + sac.shape.duration) * 1000.0).ceil() as usize;
            let peak = (i0..=i1.min(v.len() - 1))
                .map(|i| v.vx[i].hypot(v.vy[i]))
                .fold(0.0, f64::max);
            let expect = peak_velocity(&p, sac.shape.amplitude);
            assert!((peak - expect).abs() / expect < 0.02, "{peak} vs {expect}");
        }
    }

    #[test]
    fn determinism_and_session_variation() {
        let sched = ScheduleParams::default().generate(1).unwrap();
        let p = SyntheticUserProfile::default();
        let a = simulate_recording::<f64>(&p, &sched, 250.0, 10).unwrap();
        let b = simulate_recording::<f64>(&p, &sched, 250.0, 10).unwrap();
        let c = simulate_recording::<f64>(&p, &sched, 250.0, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!((a.duration_s() - sched.total_s).abs() < 1e-9);
        assert!(simulate_recording::<f64>(&p, &sched, 30.0, 1).is_err());
    }

    #[test]
    fn undershoot_triggers_one_correction() {
        let sched = ScheduleParams::default().generate(4).unwrap();
        let p = SyntheticUserProfile {
            undershoot_frac: 0.15,
            drift_deg_s: 0.0,
            ..quiet_profile()
        };
        let sacs = planned_saccades(&p, &sched, 2);
        let primaries = sacs.iter().filter(|s| !s.corrective).count();
        let corrections = sacs.iter().filter(|s| s.corrective).count();
        assert_eq!(primaries, corrections);
        assert!(primaries >= 8);
    }

    #[test]
    fn population_shape_and_reproducibility() {
        let params = ScheduleParams::default();
        let corpus = make_population::<f64>(5, 2, 42, &params, 125.0).unwrap();
        assert_eq!(corpus.entries.len(), 10);
        for e in &corpus.entries {
            assert!((e.recording.duration_s() - 9.0).abs() < 1e-9);
        }
        let a = make_population::<f64>(2, 2, 7, &params, 250.0).unwrap();
        let b = make_population::<f64>(2, 2, 7, &params, 250.0).unwrap();
        let bytes = |c: &Corpus<f64>| c.entries.iter().map(|e| e.recording.to_json()).collect::<Vec<_>>();
        assert_eq!(bytes(&a), bytes(&b));
        assert!(make_population::<f64>(1, 2, 7, &params, 250.0).is_err());
        assert!(make_population::<f64>(2, 1, 7, &params, 250.0).is_err());
    }

    #[test]
    fn separability_sanity() {
        let params = ScheduleParams::default();
        let fast = SyntheticUserProfile { eta: 750.0, c: 4.0, fix_noise_deg: 0.05, seed: 1, ..Default::default() };
        let slow = SyntheticUserProfile { eta: 300.0, c: 10.0, fix_noise_deg: 0.3, seed: 2, ..Default::default() };
        let hist = |p: &SyntheticUserProfile, s: u64| {
            let sched = params.generate(s).unwrap();
            let rec = simulate_recording::<f64>(p, &sched, 1000.0, s).unwrap();
            speed_histogram(&decimate(&rec, 125.0).unwrap(), 24).unwrap()
        };
        let within = bhattacharyya_distance(&hist(&fast, 1), &hist(&fast, 2))
            .max(bhattacharyya_distance(&hist(&slow, 1), &hist(&slow, 2)));
        let between = bhattacharyya_distance(&hist(&fast, 1), &hist(&slow, 2));
        assert!(between > within, "between {between} within {within}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn gaze_stays_near_grid(seed in 0u64..10_000, noise in 0.0f64..0.5, drift in 0.0f64..3.0,
                                under in 0.0f64..0.2) {
            let params = ScheduleParams::default();
            let sched = params.generate(seed).unwrap();
            let p = SyntheticUserProfile { fix_noise_deg: noise, drift_deg_s: drift, undershoot_frac: under,
                                           seed, ..Default::default() };
            let rec = simulate_recording::<f64>(&p, &sched, 250.0, seed ^ 0xabc).unwrap();
            let margin = 3.0 * noise + 2.0;
            for s in rec.samples() {
                proptest::prop_assert!(s.x.abs() <= params.half_width_deg + margin);
                proptest::prop_assert!(s.y.abs() <= params.half_height_deg + margin);
            }
        }
    }
}
