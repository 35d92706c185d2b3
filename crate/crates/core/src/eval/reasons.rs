//! Reason-for-decision tables.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::report::render_table;
use super::{f1, EvalError, MeanMargin, PredictionRecord, ReasonKind, UNDEFINED};
use crate::corpus::{CorpusManifest, Task};

/// Column order of the reason table.
pub const TABLE_TASK_ORDER: [Task; 5] = [Task::SVP, Task::Recall, Task::DPT, Task::Repeat, Task::Read];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReasons {
    pub task: Task,
    /// Responses counted in this row (those citing a tabulated reason).
    pub total: usize,
    pub counts: BTreeMap<ReasonKind, usize>,
    /// Percentages over `total`; sums to 100 for a non-empty row.
    pub percent: BTreeMap<ReasonKind, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonBreakdown {
    pub reasons: Vec<ReasonKind>,
    pub tasks: Vec<TaskReasons>,
}

/// Per task, the share of responses citing each tabulated reason.
///
/// Responses without a reason or with a reason outside `tabulated` are not
/// counted.
pub fn reason_breakdown(
    responses: &[PredictionRecord],
    m: &CorpusManifest,
    tabulated: &[ReasonKind],
) -> Result<ReasonBreakdown, EvalError> {
    let mut counts: BTreeMap<Task, BTreeMap<ReasonKind, usize>> = BTreeMap::new();
    for r in responses {
        let clip = m.clip(&r.clip_id).ok_or_else(|| EvalError::UnknownClip(r.clip_id.clone()))?;
        let Some(reason) = r.reason.filter(|k| tabulated.contains(k)) else {
            continue;
        };
        *counts.entry(clip.task).or_default().entry(reason).or_default() += 1;
    }
    let tasks = TABLE_TASK_ORDER
        .iter()
        .filter_map(|task| {
            let row = counts.remove(task)?;
            let total: usize = row.values().sum();
            let counts: BTreeMap<ReasonKind, usize> =
                tabulated.iter().map(|k| (*k, row.get(k).copied().unwrap_or(0))).collect();
            let percent = counts.iter().map(|(k, &c)| (*k, 100.0 * c as f64 / total as f64)).collect();
            Some(TaskReasons { task: *task, total, counts, percent })
        })
        .collect();
    Ok(ReasonBreakdown { reasons: tabulated.to_vec(), tasks })
}

/// Reason-conditioned F1 for humans and the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonF1Row {
    pub reason: ReasonKind,
    /// Clips on which at least one human cited this reason.
    pub clips: usize,
    pub human: Option<MeanMargin>,
    pub model: Option<MeanMargin>,
}

/// For every reason: human F1 over the resampled picks that cite it, and
/// model F1 over the clips where any human cited it.
///
/// `human_sets` are resampling draws (margin `human_k` x SD), `model_sets`
/// are model trials (margin `model_k` x SD).
pub fn reason_f1_table(
    reasons: &[ReasonKind],
    human_responses: &[PredictionRecord],
    human_sets: &[Vec<PredictionRecord>],
    human_k: f64,
    model_sets: &[Vec<PredictionRecord>],
    model_k: f64,
) -> Vec<ReasonF1Row> {
    reasons
        .iter()
        .map(|&reason| {
            let clips: BTreeSet<&str> = human_responses
                .iter()
                .filter(|r| r.reason == Some(reason))
                .map(|r| r.clip_id.as_str())
                .collect();
            let score = |sets: &[Vec<PredictionRecord>], keep: &dyn Fn(&PredictionRecord) -> bool, k: f64| {
                let scores: Vec<f64> = sets
                    .iter()
                    .filter_map(|set| {
                        let subset: Vec<PredictionRecord> = set.iter().filter(|r| keep(r)).cloned().collect();
                        f1(&subset).ok().flatten()
                    })
                    .collect();
                (!scores.is_empty()).then(|| MeanMargin::from_scores(&scores, k))
            };
            ReasonF1Row {
                reason,
                clips: clips.len(),
                human: score(human_sets, &|r| r.reason == Some(reason), human_k),
                model: score(model_sets, &|r| clips.contains(r.clip_id.as_str()), model_k),
            }
        })
        .collect()
}

impl ReasonBreakdown {
    /// Reasons as rows, tasks as columns, optional F1 comparison columns.
    pub fn to_text(&self, f1_rows: Option<&[ReasonF1Row]>, model_label: &str) -> String {
        let mut header: Vec<String> = vec!["Reason".into()];
        header.extend(self.tasks.iter().map(|t| t.task.as_str().to_string()));
        if f1_rows.is_some() {
            header.push("Human Expert".into());
            header.push(model_label.into());
        }
        let body: Vec<Vec<String>> = self
            .reasons
            .iter()
            .map(|reason| {
                let mut row = vec![reason.label().to_string()];
                row.extend(self.tasks.iter().map(|t| format!("{:.0}%", t.percent.get(reason).copied().unwrap_or(0.0))));
                if let Some(rows) = f1_rows {
                    let found = rows.iter().find(|r| r.reason == *reason);
                    let render = |v: Option<MeanMargin>| v.map_or_else(|| UNDEFINED.to_string(), |m| m.percent());
                    row.push(render(found.and_then(|r| r.human)));
                    row.push(render(found.and_then(|r| r.model)));
                }
                row
            })
            .collect();
        render_table("", &header, &body, 1)
    }
}

