use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::{Assignment, ExpertResponse, ResponseStore, ServiceError};
use crate::corpus::CorpusManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

/// What a session should rate next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NextSample {
    Pending {
        clip_id: String,
        audio_url: String,
        /// 1-based position of this clip in the assignment.
        position: usize,
        progress: Progress,
    },
    Done {
        done: bool,
        progress: Progress,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Validation,
    OutOfOrder,
    Duplicate,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub status: String,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubmitOutcome {
    Accepted(Ack),
    Rejected { status: String, reason: RejectReason, message: String },
}

impl SubmitOutcome {
    fn rejected(reason: RejectReason, message: impl Into<String>) -> Self {
        SubmitOutcome::Rejected { status: "rejected".into(), reason, message: message.into() }
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, SubmitOutcome::Accepted(_))
    }
}

struct State {
    store: ResponseStore,
    answered: HashSet<(String, String)>,
    done: HashMap<String, usize>,
    /// idempotency key -> (participant, acknowledgment originally sent)
    acks: HashMap<String, (String, Ack)>,
}

/// Session state machine over fixed assignments and a response store.
///
/// Assignment data is immutable; submissions are serialized through one lock,
/// which also makes the store single-writer.
pub struct ListeningTest {
    manifest: CorpusManifest,
    audio_root: Option<PathBuf>,
    by_token: HashMap<String, Assignment>,
    state: Mutex<State>,
}

impl ListeningTest {
    /// Builds the service, replaying any responses already in `store` so
    /// progress survives restarts.
    pub fn new(
        manifest: CorpusManifest,
        assignments: Vec<Assignment>,
        store: ResponseStore,
        audio_root: Option<PathBuf>,
    ) -> Result<Self, ServiceError> {
        let mut by_token = HashMap::new();
        for a in assignments {
            if let Some(bad) = a.clip_ids().find(|id| manifest.clip(id).is_none()) {
                return Err(ServiceError::UnknownClip(bad.to_string()));
            }
            if by_token.insert(a.token.clone(), a).is_some() {
                return Err(ServiceError::Config("duplicate session token".into()));
            }
        }
        let mut state = State { store, answered: HashSet::new(), done: HashMap::new(), acks: HashMap::new() };
        let totals: HashMap<&str, usize> =
            by_token.values().map(|a| (a.participant_id.as_str(), a.clips.len())).collect();
        for r in state.store.records().to_vec() {
            let done = state.done.entry(r.participant_id.clone()).or_default();
            *done += 1;
            let total = totals.get(r.participant_id.as_str()).copied().unwrap_or(0);
            let ack = Ack { status: "accepted".into(), progress: Progress { done: *done, total } };
            state.acks.insert(r.idempotency_key.clone(), (r.participant_id.clone(), ack));
            state.answered.insert((r.participant_id, r.clip_id));
        }
        Ok(ListeningTest { manifest, audio_root, by_token, state: Mutex::new(state) })
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn assignment(&self, token: &str) -> Result<&Assignment, ServiceError> {
        self.by_token.get(token).ok_or(ServiceError::Unauthorized)
    }

    fn pending<'a>(state: &State, a: &'a Assignment) -> Option<(usize, &'a str)> {
        a.clip_ids()
            .enumerate()
            .find(|(_, id)| !state.answered.contains(&(a.participant_id.clone(), id.to_string())))
    }

    fn progress(state: &State, a: &Assignment) -> Progress {
        Progress { done: state.done.get(&a.participant_id).copied().unwrap_or(0), total: a.clips.len() }
    }

    pub fn next_sample(&self, token: &str) -> Result<NextSample, ServiceError> {
        let a = self.assignment(token)?;
        let state = self.state.lock().expect("state lock");
        let progress = Self::progress(&state, a);
        Ok(match Self::pending(&state, a) {
            Some((i, clip_id)) => NextSample::Pending {
                clip_id: clip_id.to_string(),
                audio_url: format!("/api/v1/audio/{clip_id}"),
                position: i + 1,
                progress,
            },
            None => NextSample::Done { done: true, progress },
        })
    }

    /// Validates and persists a response for the session's pending clip.
    ///
    /// A repeated idempotency key returns the original acknowledgment
    /// without writing anything.
    pub fn submit_response(&self, token: &str, mut r: ExpertResponse) -> Result<SubmitOutcome, ServiceError> {
        let a = self.assignment(token)?;
        if r.participant_id.is_empty() {
            r.participant_id = a.participant_id.clone();
        }
        if r.participant_id != a.participant_id {
            return Ok(SubmitOutcome::rejected(RejectReason::Validation, "participant does not match session"));
        }
        if r.idempotency_key.trim().is_empty() {
            return Ok(SubmitOutcome::rejected(RejectReason::Validation, "idempotency_key is required"));
        }
        let mut state = self.state.lock().expect("state lock");
        if let Some((owner, ack)) = state.acks.get(&r.idempotency_key) {
            if *owner == a.participant_id {
                return Ok(SubmitOutcome::Accepted(ack.clone()));
            }
            return Ok(SubmitOutcome::rejected(RejectReason::Duplicate, "idempotency key already used"));
        }
        if let Err(e) = r.reason_tag() {
            return Ok(SubmitOutcome::rejected(RejectReason::Validation, e.to_string()));
        }
        if state.answered.contains(&(a.participant_id.clone(), r.clip_id.clone())) {
            return Ok(SubmitOutcome::rejected(RejectReason::Duplicate, "clip already answered; responses are final"));
        }
        match Self::pending(&state, a) {
            None => return Ok(SubmitOutcome::rejected(RejectReason::Completed, "assignment already complete")),
            Some((_, pending)) if pending != r.clip_id => {
                return Ok(SubmitOutcome::rejected(
                    RejectReason::OutOfOrder,
                    format!("expected a response for {pending}, got {}", r.clip_id),
                ));
            }
            Some(_) => {}
        }
        if r.reason_text.as_deref().is_some_and(|t| t.trim().is_empty()) {
            r.reason_text = None;
        }
        r.submitted_at.get_or_insert_with(Utc::now);
        state.store.append(&r)?;

        let done = {
            let d = state.done.entry(a.participant_id.clone()).or_default();
            *d += 1;
            *d
        };
        state.answered.insert((a.participant_id.clone(), r.clip_id.clone()));
        let ack = Ack { status: "accepted".into(), progress: Progress { done, total: a.clips.len() } };
        state.acks.insert(r.idempotency_key.clone(), (a.participant_id.clone(), ack.clone()));
        Ok(SubmitOutcome::Accepted(ack))
    }

    /// Parses a raw JSON body first; enum or schema violations become
    /// validation rejections.
    pub fn submit_json(&self, token: &str, body: &[u8]) -> Result<SubmitOutcome, ServiceError> {
        self.assignment(token)?;
        match serde_json::from_slice::<ExpertResponse>(body) {
            Ok(r) => self.submit_response(token, r),
            Err(e) => Ok(SubmitOutcome::rejected(RejectReason::Validation, e.to_string())),
        }
    }

    pub fn export_responses(&self) -> String {
        self.state.lock().expect("state lock").store.export_jsonl()
    }

    pub fn response_count(&self) -> usize {
        self.state.lock().expect("state lock").store.len()
    }

    /// Filesystem path of a clip's audio, if it has one.
    pub fn audio_path(&self, clip_id: &str) -> Option<PathBuf> {
        let clip = self.manifest.clip(clip_id)?;
        let rel = Path::new(clip.audio.as_ref()?);
        Some(match &self.audio_root {
            Some(root) => root.join(rel),
            None => rel.to_path_buf(),
        })
    }
}
