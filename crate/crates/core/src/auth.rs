//! Enrollment and verification: recording in, template out, similarity
//! against the enrolled templates, threshold decision.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{forward, Embedding, ModelId, ModelParams, NetError};
use crate::scalar::Scalar;
use crate::signal::{conform_rate, normalize, to_velocity, GazeRecording, SignalError};
use crate::stimulus::{validate_against, ScheduleParams, ValidationPolicy, ValidationReport};
use crate::store::{validate_name, StoreError, TemplateRecord, TemplateStore};

pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("template from model {found} cannot be compared with model {expected}")]
    ModelMismatch { expected: ModelId, found: ModelId },
    #[error("recording rejected: {0}")]
    RecordingRejected(ValidationReport),
    #[error("no user named {0:?}")]
    NotFound(String),
    #[error("invalid decision policy: {0}")]
    Policy(String),
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimMismatch(usize, usize),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl From<StoreError> for AuthError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(n) => AuthError::NotFound(n),
            StoreError::ModelMismatch { expected, found } => AuthError::ModelMismatch { expected, found },
            other => AuthError::Store(other),
        }
    }
}

/// How similarities against several enrolled templates are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionPolicy {
    threshold: f64,
    pub aggregation: Aggregation,
}

impl Default for DecisionPolicy {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            aggregation: Aggregation::Max,
        }
    }
}

impl DecisionPolicy {
    pub fn new(threshold: f64, aggregation: Aggregation) -> Result<Self, AuthError> {
        if !(-1.0..=1.0).contains(&threshold) {
            return Err(AuthError::Policy(format!("threshold {threshold} outside [-1, 1]")));
        }
        Ok(Self { threshold, aggregation })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Accept iff `similarity >= threshold`.
    pub fn decide(&self, similarity: f64) -> Decision {
        if similarity >= self.threshold {
            Decision::Accept
        } else {
            Decision::Reject
        }
    }

    pub fn aggregate(&self, sims: &[f64]) -> Option<f64> {
        if sims.is_empty() {
            return None;
        }
        Some(match self.aggregation {
            Aggregation::Max => sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::Mean => sims.iter().sum::<f64>() / sims.len() as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub embed_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub name: String,
    pub similarity: f64,
    pub decision: Decision,
    pub threshold: f64,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollOutcome {
    pub name: String,
    pub embedding_count: usize,
    pub embed_ms: f64,
}

/// Dot product of two templates from the same model, clamped to [-1, 1].
pub fn cosine_similarity<T: Scalar>(a: &Embedding<T>, b: &Embedding<T>) -> Result<f64, AuthError> {
    if a.model_id != b.model_id {
        return Err(AuthError::ModelMismatch {
            expected: a.model_id.clone(),
            found: b.model_id.clone(),
        });
    }
    if a.dim() != b.dim() {
        return Err(AuthError::DimMismatch(a.dim(), b.dim()));
    }
    let dot: f64 = a.v.iter().zip(&b.v).map(|(x, y)| x.as_f64() * y.as_f64()).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Scores `probe` against every template in `record` and applies `policy`.
pub fn verify_embedding<T: Scalar>(
    record: &TemplateRecord<T>,
    probe: &Embedding<T>,
    policy: &DecisionPolicy,
) -> Result<VerificationResult, AuthError> {
    let sims = record
        .embeddings
        .iter()
        .map(|e| cosine_similarity(e, probe))
        .collect::<Result<Vec<_>, _>>()?;
    let similarity = policy
        .aggregate(&sims)
        .ok_or_else(|| AuthError::NotFound(record.name.clone()))?;
    Ok(VerificationResult {
        name: record.name.clone(),
        similarity,
        decision: policy.decide(similarity),
        threshold: policy.threshold(),
        timings: Timings::default(),
    })
}

/// A trained model plus the recording checks applied before embedding.
#[derive(Debug, Clone)]
pub struct Pipeline<T: Scalar> {
    model: ModelParams<T>,
    model_id: ModelId,
    pub expected_duration_s: f64,
    pub validation: ValidationPolicy,
}

impl<T: Scalar> Pipeline<T> {
    pub fn new(model: ModelParams<T>) -> Self {
        Self {
            model_id: model.model_id(),
            model,
            expected_duration_s: ScheduleParams::default().total_s(),
            validation: ValidationPolicy::default(),
        }
    }

    pub fn model(&self) -> &ModelParams<T> {
        &self.model
    }

    pub fn model_id(&self) -> &ModelId {
        &self.model_id
    }

    /// Validate, bring to the model's rate, differentiate, normalize with
    /// the model's frozen statistics, embed.
    pub fn process_recording(&self, rec: &GazeRecording<f64>) -> Result<Embedding<T>, AuthError> {
        let report = validate_against(rec, self.expected_duration_s, &self.validation);
        if !report.pass {
            return Err(AuthError::RecordingRejected(report));
        }
        let conformed = conform_rate(rec, self.model.sample_rate_hz())?;
        let vel = to_velocity(&conformed)?.cast::<T>();
        let z = normalize(&vel, self.model.norm_stats());
        let mut emb = forward(&self.model, &z)?;
        emb.model_id = self.model_id.clone();
        Ok(emb)
    }

    /// Embeds `rec` and appends it to `name`'s templates.
    pub fn enroll(&self, store: &mut TemplateStore<T>, name: &str, rec: &GazeRecording<f64>) -> Result<EnrollOutcome, AuthError> {
        validate_name(name)?;
        if let Some(id) = store.model_id() {
            if *id != self.model_id {
                return Err(AuthError::ModelMismatch {
                    expected: id.clone(),
                    found: self.model_id.clone(),
                });
            }
        }
        let start = Instant::now();
        let emb = self.process_recording(rec)?;
        let embed_ms = start.elapsed().as_secs_f64() * 1e3;
        let embedding_count = store.enroll(name, emb)?;
        Ok(EnrollOutcome {
            name: name.to_string(),
            embedding_count,
            embed_ms,
        })
    }

    pub fn verify(
        &self,
        store: &TemplateStore<T>,
        name: &str,
        rec: &GazeRecording<f64>,
        policy: &DecisionPolicy,
    ) -> Result<VerificationResult, AuthError> {
        let start = Instant::now();
        let record = store.lookup(name)?;
        let emb = self.process_recording(rec)?;
        let embed_ms = start.elapsed().as_secs_f64() * 1e3;
        let mut result = verify_embedding(record, &emb, policy)?;
        result.timings = Timings {
            embed_ms,
            total_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        Ok(result)
    }
}
