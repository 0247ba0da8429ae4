//! Blocking client for the HTTP API.

use gazeauth_core::Recording;
use reqwest::blocking::{Client as Http, Response};
use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::api::{AttemptRequest, EnrollResponse, ErrorBody, HealthResponse, UsersResponse, VerifyResponse};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server returned {status}: {} ({})", body.message, body.error)]
    Api { status: u16, body: ErrorBody },
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            Self::Api { status, .. } => Some(*status),
            Self::Transport(e) => e.status().map(|s| s.as_u16()),
        }
    }
}

pub struct Client {
    base: String,
    http: Http,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: Http::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn decode<R: DeserializeOwned>(resp: Response) -> Result<R, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json()?);
        }
        let text = resp.text()?;
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            error: "http".into(),
            message: text,
            report: None,
        });
        Err(ClientError::Api {
            status: status.as_u16(),
            body,
        })
    }

    fn attempt<R: DeserializeOwned>(&self, path: &str, name: &str, recording: &Recording) -> Result<R, ClientError> {
        let req = AttemptRequest {
            name: name.to_string(),
            recording: recording.clone(),
        };
        Self::decode(self.http.post(self.url(path)).json(&req).send()?)
    }

    pub fn enroll(&self, name: &str, recording: &Recording) -> Result<EnrollResponse, ClientError> {
        self.attempt("/api/enroll", name, recording)
    }

    pub fn verify(&self, name: &str, recording: &Recording) -> Result<VerifyResponse, ClientError> {
        self.attempt("/api/verify", name, recording)
    }

    pub fn users(&self) -> Result<UsersResponse, ClientError> {
        Self::decode(self.http.get(self.url("/api/users")).send()?)
    }

    pub fn health(&self) -> Result<HealthResponse, ClientError> {
        Self::decode(self.http.get(self.url("/api/health")).send()?)
    }
}
