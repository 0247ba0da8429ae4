//! The nine-point jumping-dot task shown during enrollment and verification.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::signal::GazeRecording;

pub const DEFAULT_HALF_WIDTH_DEG: f64 = 15.0;
pub const DEFAULT_HALF_HEIGHT_DEG: f64 = 10.0;
pub const DEFAULT_PERIOD_S: f64 = 1.0;
/// Angular diameter of the rendered dot.
pub const DOT_DIAMETER_DEG: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StimulusError {
    #[error("invalid stimulus parameters: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulusTarget {
    pub x_deg: f64,
    pub y_deg: f64,
    pub onset_s: f64,
    pub duration_s: f64,
}

/// Grid geometry and timing of a task; the seed picks the visiting order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub half_width_deg: f64,
    pub half_height_deg: f64,
    pub period_s: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            half_width_deg: DEFAULT_HALF_WIDTH_DEG,
            half_height_deg: DEFAULT_HALF_HEIGHT_DEG,
            period_s: DEFAULT_PERIOD_S,
        }
    }
}

impl ScheduleParams {
    pub fn generate(&self, seed: u64) -> Result<StimulusSchedule, StimulusError> {
        generate_schedule(seed, self.half_width_deg, self.half_height_deg, self.period_s)
    }

    pub fn total_s(&self) -> f64 {
        9.0 * self.period_s
    }
}

/// Ordered, gapless list of targets. Serialized as `{seed, period_s, targets}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleWire", into = "ScheduleWire")]
pub struct StimulusSchedule {
    pub targets: Vec<StimulusTarget>,
    pub total_s: f64,
    pub seed: u64,
    pub period_s: f64,
}

#[derive(Serialize, Deserialize)]
struct ScheduleWire {
    seed: u64,
    period_s: f64,
    targets: Vec<StimulusTarget>,
}

impl TryFrom<ScheduleWire> for StimulusSchedule {
    type Error = StimulusError;

    fn try_from(w: ScheduleWire) -> Result<Self, Self::Error> {
        let mut expected_onset = 0.0;
        for (i, t) in w.targets.iter().enumerate() {
            if !(t.duration_s > 0.0) {
                return Err(StimulusError::Config(format!("target {i}: duration must be positive")));
            }
            if (t.onset_s - expected_onset).abs() > 1e-9 {
                return Err(StimulusError::Config(format!("target {i}: schedule has a gap")));
            }
            expected_onset = t.onset_s + t.duration_s;
        }
        Ok(Self {
            total_s: w.targets.iter().map(|t| t.duration_s).sum(),
            targets: w.targets,
            seed: w.seed,
            period_s: w.period_s,
        })
    }
}

impl From<StimulusSchedule> for ScheduleWire {
    fn from(s: StimulusSchedule) -> Self {
        Self {
            seed: s.seed,
            period_s: s.period_s,
            targets: s.targets,
        }
    }
}

impl StimulusSchedule {
    /// Target shown at time `t`, if any.
    pub fn target_at(&self, t: f64) -> Option<&StimulusTarget> {
        self.targets
            .iter()
            .find(|tg| t >= tg.onset_s && t < tg.onset_s + tg.duration_s)
    }
}

/// Visits each point of `{-w, 0, w} × {-h, 0, h}` once, in a seeded uniform
/// random order, `period_s` each, starting at t = 0.
pub fn generate_schedule(
    seed: u64,
    grid_half_width_deg: f64,
    grid_half_height_deg: f64,
    period_s: f64,
) -> Result<StimulusSchedule, StimulusError> {
    for (name, v) in [
        ("grid_half_width_deg", grid_half_width_deg),
        ("grid_half_height_deg", grid_half_height_deg),
        ("period_s", period_s),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(StimulusError::Config(format!("{name} must be positive, got {v}")));
        }
    }
    let mut points: Vec<(f64, f64)> = [-1.0, 0.0, 1.0]
        .iter()
        .flat_map(|&gy| {
            [-1.0, 0.0, 1.0]
                .iter()
                .map(move |&gx| (gx * grid_half_width_deg, gy * grid_half_height_deg))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    points.shuffle(&mut rng);
    let mut onset_s = 0.0;
    let targets: Vec<_> = points
        .into_iter()
        .map(|(x_deg, y_deg)| {
            let t = StimulusTarget {
                x_deg,
                y_deg,
                onset_s,
                duration_s: period_s,
            };
            onset_s += period_s;
            t
        })
        .collect();
    Ok(StimulusSchedule {
        total_s: targets.iter().map(|t| t.duration_s).sum(),
        targets,
        seed,
        period_s,
    })
}

/// Limits applied by [`validate_recording`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPolicy {
    pub tolerance_s: f64,
    pub min_valid_fraction: f64,
    pub min_rate_hz: f64,
    pub max_rate_hz: f64,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        Self {
            tolerance_s: 0.5,
            min_valid_fraction: 0.8,
            min_rate_hz: 60.0,
            max_rate_hz: 2000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub duration_s: f64,
    pub expected_duration_s: f64,
    pub duration_ok: bool,
    pub valid_fraction: f64,
    pub validity_ok: bool,
    pub rate_hz: f64,
    pub rate_ok: bool,
    pub pass: bool,
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
        write!(
            f,
            "duration {:.3} s (expected {:.3}) {}; valid fraction {:.3} {}; rate {} Hz {}",
            self.duration_s,
            self.expected_duration_s,
            mark(self.duration_ok),
            self.valid_fraction,
            mark(self.validity_ok),
            self.rate_hz,
            mark(self.rate_ok)
        )
    }
}

pub fn validate_recording<T: Scalar>(
    rec: &GazeRecording<T>,
    sched: &StimulusSchedule,
    tolerance_s: f64,
) -> ValidationReport {
    let policy = ValidationPolicy {
        tolerance_s,
        ..Default::default()
    };
    validate_against(rec, sched.total_s, &policy)
}

pub fn validate_against<T: Scalar>(
    rec: &GazeRecording<T>,
    expected_duration_s: f64,
    policy: &ValidationPolicy,
) -> ValidationReport {
    let duration_s = rec.duration_s();
    let duration_ok = (duration_s - expected_duration_s).abs() <= policy.tolerance_s;
    let valid_fraction = rec.valid_fraction();
    let validity_ok = valid_fraction >= policy.min_valid_fraction;
    let rate_hz = rec.rate_hz();
    let rate_ok = (policy.min_rate_hz..=policy.max_rate_hz).contains(&rate_hz);
    ValidationReport {
        duration_s,
        expected_duration_s,
        duration_ok,
        valid_fraction,
        validity_ok,
        rate_hz,
        rate_ok,
        pass: duration_ok && validity_ok && rate_ok,
    }
}
