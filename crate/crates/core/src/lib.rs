//! Eye-movement biometrics on consumer-grade gaze signals.
//!
//! The pipeline turns a short recording of a nine-point jumping-dot task into
//! a 128-dimensional unit-norm template with a dense dilated 1D convolutional
//! network, and compares templates by cosine similarity against a threshold.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! pin the precisions used by the service.

pub mod auth;
pub mod corpus;
pub mod eval;
pub mod net;
pub mod scalar;
pub mod seeds;
pub mod signal;
pub mod stimulus;
pub mod store;
pub mod synth;

pub use scalar::Scalar;

/// Recordings are stored and conditioned in double precision.
pub type Recording = signal::GazeRecording<f64>;

/// Service precision for network weights and templates.
pub type Model = net::ModelParams<f32>;
/// Double-precision network, used for gradient checks.
pub type Model64 = net::ModelParams<f64>;
pub type Template = net::Embedding<f32>;
pub type Store = store::TemplateStore<f32>;
pub type AuthPipeline = auth::Pipeline<f32>;
