//! Metrics and reports comparing human and model judgments.
//!
//! PD is the positive class throughout.

mod reasons;
mod report;
mod resample;

pub use reasons::{reason_breakdown, reason_f1_table, ReasonBreakdown, ReasonF1Row, TABLE_TASK_ORDER};
pub use report::{age_band_label, default_age_edges, stratified_report, Dimension, StratumKey, StratumRow, StratifiedReport};
pub use resample::{group_by_clip, human_resample, ResampleReport, HUMAN_MARGIN_K};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Status;

/// Rendering of an undefined metric.
pub const UNDEFINED: &str = "—";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to score")]
    Empty,
    #[error("record references unknown clip {0}")]
    UnknownClip(String),
    #[error("record for clip {clip} claims truth {claimed}, manifest says {actual}")]
    TruthMismatch { clip: String, claimed: Status, actual: Status },
    #[error("clip {0} has no responses")]
    NoResponses(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("metric undefined (no PD truths or predictions) in trial {0}")]
    Undefined(usize),
    #[error("margin must be non-negative, got {0}")]
    NegativeMargin(f64),
    #[error("invalid reason: {0}")]
    InvalidReason(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Confidence {
    Unsure,
    Leaning,
    Confident,
    Certain,
}

/// Reason category as it appears on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReasonKind {
    VoiceQuality,
    SpeechProsody,
    LanguageUse,
    TypicalSpeech,
    Other,
}

impl ReasonKind {
    pub const ALL: [ReasonKind; 5] = [
        ReasonKind::VoiceQuality,
        ReasonKind::SpeechProsody,
        ReasonKind::LanguageUse,
        ReasonKind::TypicalSpeech,
        ReasonKind::Other,
    ];

    /// Short row label used in the reason table.
    pub fn label(self) -> &'static str {
        match self {
            ReasonKind::VoiceQuality => "Voice",
            ReasonKind::SpeechProsody => "Prosody",
            ReasonKind::LanguageUse => "Language",
            ReasonKind::TypicalSpeech => "Typical",
            ReasonKind::Other => "Other",
        }
    }
}

/// Validated reason: `Other` always carries non-empty text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ReasonTag {
    VoiceQuality,
    SpeechProsody,
    LanguageUse,
    TypicalSpeech,
    Other(String),
}

impl ReasonTag {
    pub fn from_parts(kind: ReasonKind, text: Option<&str>) -> Result<Self, EvalError> {
        Ok(match kind {
            ReasonKind::VoiceQuality => ReasonTag::VoiceQuality,
            ReasonKind::SpeechProsody => ReasonTag::SpeechProsody,
            ReasonKind::LanguageUse => ReasonTag::LanguageUse,
            ReasonKind::TypicalSpeech => ReasonTag::TypicalSpeech,
            ReasonKind::Other => match text.map(str::trim) {
                Some(t) if !t.is_empty() => ReasonTag::Other(t.to_string()),
                _ => return Err(EvalError::InvalidReason("Other requires non-empty text".into())),
            },
        })
    }

    pub fn kind(&self) -> ReasonKind {
        match self {
            ReasonTag::VoiceQuality => ReasonKind::VoiceQuality,
            ReasonTag::SpeechProsody => ReasonKind::SpeechProsody,
            ReasonTag::LanguageUse => ReasonKind::LanguageUse,
            ReasonTag::TypicalSpeech => ReasonKind::TypicalSpeech,
            ReasonTag::Other(_) => ReasonKind::Other,
        }
    }
}

/// One human or model judgment of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub clip_id: String,
    pub source: Source,
    pub predicted: Status,
    pub truth: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<Confidence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<ReasonKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logit: Option<f64>,
}

impl PredictionRecord {
    pub fn model(clip_id: &str, predicted: Status, truth: Status, logit: f64) -> Self {
        PredictionRecord {
            clip_id: clip_id.to_string(),
            source: Source::Model,
            predicted,
            truth,
            confidence: None,
            reason: None,
            reason_text: None,
            participant_id: None,
            trial: None,
            logit: Some(logit),
        }
    }

    pub fn human(clip_id: &str, predicted: Status, truth: Status, reason: Option<ReasonKind>) -> Self {
        PredictionRecord {
            clip_id: clip_id.to_string(),
            source: Source::Human,
            predicted,
            truth,
            confidence: None,
            reason,
            reason_text: None,
            participant_id: None,
            trial: None,
            logit: None,
        }
    }

    pub fn is_correct(&self) -> bool {
        self.predicted == self.truth
    }
}

/// Which score a resampling or trial protocol aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    F1,
}

impl Metric {
    /// Score in `[0, 1]`; `None` when F1 is undefined.
    pub fn score(self, records: &[PredictionRecord]) -> Result<Option<f64>, EvalError> {
        match self {
            Metric::Accuracy => accuracy(records).map(Some),
            Metric::F1 => f1(records),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_records(records: &[PredictionRecord]) -> Self {
        let mut c = Confusion::default();
        for r in records {
            match (r.predicted, r.truth) {
                (Status::PD, Status::PD) => c.tp += 1,
                (Status::PD, Status::HC) => c.fp += 1,
                (Status::HC, Status::PD) => c.fn_ += 1,
                (Status::HC, Status::HC) => c.tn += 1,
            }
        }
        c
    }
}

/// F1 for the PD class: `2TP / (2TP + FP + FN)`, or `None` if that is 0/0.
pub fn f1(records: &[PredictionRecord]) -> Result<Option<f64>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let c = Confusion::from_records(records);
    let denom = 2 * c.tp + c.fp + c.fn_;
    Ok((denom > 0).then(|| (2 * c.tp) as f64 / denom as f64))
}

pub fn accuracy(records: &[PredictionRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(records.iter().filter(|r| r.is_correct()).count() as f64 / records.len() as f64)
}

/// Mean with a `k * SD` margin, in the same units as the underlying scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMargin {
    pub mean: f64,
    pub margin: f64,
}

impl MeanMargin {
    pub fn from_scores(scores: &[f64], k: f64) -> Self {
        let (mean, margin) = crate::stats::mean_margin(scores, k);
        MeanMargin { mean, margin }
    }

    /// Renders as a percentage, e.g. `75.5±1.1`.
    pub fn percent(&self) -> String {
        format_mean_margin(self.mean * 100.0, self.margin * 100.0).unwrap_or_else(|_| UNDEFINED.into())
    }
}

impl fmt::Display for MeanMargin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.percent())
    }
}

/// `mean±margin` with one decimal place each.
pub fn format_mean_margin(mean: f64, margin: f64) -> Result<String, EvalError> {
    if margin.is_nan() || margin < 0.0 {
        return Err(EvalError::NegativeMargin(margin));
    }
    Ok(format!("{}±{}", one_decimal(mean), one_decimal(margin)))
}

fn one_decimal(v: f64) -> String {
    let s = format!("{v:.1}");
    if s == "-0.0" {
        "0.0".into()
    } else {
        s
    }
}
