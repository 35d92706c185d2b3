//! Listening-test backend.
//!
//! Participants receive an [`Assignment`] of 64 clips and an opaque session
//! token. The [`ListeningTest`] walks each session forward through its
//! assignment, validates responses, and persists them to an append-only
//! [`ResponseStore`] before acknowledging. [`http::router`] exposes it all
//! over a small JSON API.

mod assignment;
pub mod http;
mod session;
mod store;

pub use assignment::{build_assignment, session_token, AssignedClip, Assignment, ASSIGNMENT_SIZE, SHARED_SIZE};
pub use session::{Ack, ListeningTest, NextSample, Progress, RejectReason, SubmitOutcome};
pub use store::ResponseStore;

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusManifest, Status};
use crate::eval::{Confidence, EvalError, PredictionRecord, ReasonKind, ReasonTag, Source};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient eligible clips: need {needed}, have {available}")]
    InsufficientClips { needed: usize, available: usize },
    #[error("unknown session token")]
    Unauthorized,
    #[error("unknown clip {0}")]
    UnknownClip(String),
    #[error("response store {path} is corrupt at line {line}: {detail}")]
    Corrupt { path: PathBuf, line: usize, detail: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One rater's judgment of one clip, as submitted and as stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertResponse {
    #[serde(default)]
    pub participant_id: String,
    pub clip_id: String,
    pub prediction: Status,
    pub confidence: Confidence,
    pub reason: ReasonKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason_text: Option<String>,
    /// Filled in by the server when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submitted_at: Option<DateTime<Utc>>,
    pub idempotency_key: String,
}

impl ExpertResponse {
    pub fn reason_tag(&self) -> Result<ReasonTag, EvalError> {
        ReasonTag::from_parts(self.reason, self.reason_text.as_deref())
    }

    /// Converts to a scored human record using the manifest's ground truth.
    pub fn to_prediction(&self, m: &CorpusManifest) -> Result<PredictionRecord, EvalError> {
        let truth = m.status_of(&self.clip_id).ok_or_else(|| EvalError::UnknownClip(self.clip_id.clone()))?;
        Ok(PredictionRecord {
            clip_id: self.clip_id.clone(),
            source: Source::Human,
            predicted: self.prediction,
            truth,
            confidence: Some(self.confidence),
            reason: Some(self.reason),
            reason_text: self.reason_text.clone(),
            participant_id: Some(self.participant_id.clone()),
            trial: None,
            logit: None,
        })
    }
}

/// Parses an exported JSON Lines stream.
pub fn parse_export(text: &str) -> Result<Vec<ExpertResponse>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
