//! Per-stratum accuracy and F1 with support counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{accuracy, f1, EvalError, MeanMargin, PredictionRecord, UNDEFINED};
use crate::corpus::{CorpusManifest, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Task,
    Severity,
    AgeBand,
    Sex,
    LanguageFamiliarity,
}

impl Dimension {
    pub const ALL: [Dimension; 5] =
        [Dimension::Task, Dimension::Severity, Dimension::AgeBand, Dimension::Sex, Dimension::LanguageFamiliarity];

    pub fn label(self) -> &'static str {
        match self {
            Dimension::Task => "task",
            Dimension::Severity => "severity",
            Dimension::AgeBand => "age_band",
            Dimension::Sex => "sex",
            Dimension::LanguageFamiliarity => "language_familiarity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StratumKey {
    pub dimension: Dimension,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    #[serde(flatten)]
    pub key: StratumKey,
    /// Number of clips in the stratum.
    pub support: usize,
    pub accuracy: MeanMargin,
    /// Averaged over trials where F1 is defined; `None` when it never is.
    pub f1: Option<MeanMargin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub label: String,
    pub trials: usize,
    pub margin_k: f64,
    pub age_edges: Vec<u32>,
    pub rows: Vec<StratumRow>,
}

/// Age band label for `age` given ascending integer `edges`.
///
/// The first band is closed (`e0-e1`); later bands start one year above the
/// previous edge (`e1+1 - e2`). Ages outside the edges fall into `<e0` or
/// `>eN`.
pub fn age_band_label(age: f64, edges: &[u32]) -> String {
    match edges {
        [] => "all".into(),
        [only] => {
            if age <= f64::from(*only) {
                format!("<={only}")
            } else {
                format!(">{only}")
            }
        }
        _ => {
            let first = f64::from(edges[0]);
            if age < first {
                return format!("<{}", edges[0]);
            }
            if age <= f64::from(edges[1]) {
                return format!("{}-{}", edges[0], edges[1]);
            }
            for w in edges[1..].windows(2) {
                if age <= f64::from(w[1]) {
                    return format!("{}-{}", w[0] + 1, w[1]);
                }
            }
            format!(">{}", edges[edges.len() - 1])
        }
    }
}

/// Min, quartiles and max of the given ages, rounded to whole years.
pub fn default_age_edges(ages: &[f64]) -> Vec<u32> {
    if ages.is_empty() {
        return Vec::new();
    }
    let mut sorted = ages.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let mut edges = vec![
        sorted[0].floor() as u32,
        q(0.25).round() as u32,
        q(0.5).round() as u32,
        q(0.75).round() as u32,
        sorted[sorted.len() - 1].ceil() as u32,
    ];
    edges.dedup();
    edges
}

fn stratum_value(dim: Dimension, m: &CorpusManifest, clip_id: &str, edges: &[u32]) -> Result<String, EvalError> {
    let clip = m.clip(clip_id).ok_or_else(|| EvalError::UnknownClip(clip_id.into()))?;
    let subject = m.owner(clip);
    Ok(match dim {
        Dimension::Task => clip.task.as_str().into(),
        Dimension::Severity => match (&subject.severity, subject.status.is_pd()) {
            (Some(s), _) => s.clone(),
            (None, false) => "HC".into(),
            (None, true) => "unknown".into(),
        },
        Dimension::AgeBand => age_band_label(subject.age, edges),
        Dimension::Sex => subject.sex.as_str().into(),
        Dimension::LanguageFamiliarity => if clip.is_first_language { "L1" } else { "L2+" }.into(),
    })
}

fn value_order(dim: Dimension, value: &str) -> (usize, String) {
    match dim {
        Dimension::Task => (Task::ALL.iter().position(|t| t.as_str() == value).unwrap_or(usize::MAX), String::new()),
        Dimension::AgeBand => {
            let lead: String = value.chars().skip_while(|c| !c.is_ascii_digit()).take_while(char::is_ascii_digit).collect();
            let n: u32 = lead.parse().unwrap_or(0);
            let rank = if value.starts_with('<') { 0 } else if value.starts_with('>') { 2 } else { 1 };
            (rank * 1_000 + n as usize, value.into())
        }
        _ => (0, value.into()),
    }
}

/// Builds the stratified table from one or more record sets (one per trial
/// or resampling draw).
///
/// Each set is scored per stratum; rows report mean and `margin_k` x sample
/// SD across sets. Support is the number of records in the stratum in the
/// first set. Strata with no records are omitted.
pub fn stratified_report(
    label: &str,
    record_sets: &[Vec<PredictionRecord>],
    m: &CorpusManifest,
    age_edges: Option<&[u32]>,
    margin_k: f64,
) -> Result<StratifiedReport, EvalError> {
    let first = record_sets.first().ok_or(EvalError::Empty)?;
    for set in record_sets {
        for r in set {
            let actual = m.status_of(&r.clip_id).ok_or_else(|| EvalError::UnknownClip(r.clip_id.clone()))?;
            if actual != r.truth {
                return Err(EvalError::TruthMismatch { clip: r.clip_id.clone(), claimed: r.truth, actual });
            }
        }
    }
    let edges: Vec<u32> = match age_edges {
        Some(e) => e.to_vec(),
        None => {
            let ages: Vec<f64> = first
                .iter()
                .filter_map(|r| m.clip(&r.clip_id).map(|c| m.owner(c).age))
                .collect();
            default_age_edges(&ages)
        }
    };

    let mut rows = Vec::new();
    for dim in Dimension::ALL {
        // value -> per-set record lists
        let mut strata: BTreeMap<String, Vec<Vec<PredictionRecord>>> = BTreeMap::new();
        for (s, set) in record_sets.iter().enumerate() {
            for r in set {
                let value = stratum_value(dim, m, &r.clip_id, &edges)?;
                let per_set = strata.entry(value).or_insert_with(|| vec![Vec::new(); record_sets.len()]);
                per_set[s].push(r.clone());
            }
        }
        let mut dim_rows = Vec::new();
        for (value, per_set) in strata {
            let support = per_set[0].len();
            let nonempty: Vec<&Vec<PredictionRecord>> = per_set.iter().filter(|v| !v.is_empty()).collect();
            if nonempty.is_empty() {
                continue;
            }
            let accs: Vec<f64> = nonempty.iter().map(|v| accuracy(v)).collect::<Result<_, _>>()?;
            let f1s: Vec<f64> = nonempty.iter().filter_map(|v| f1(v).ok().flatten()).collect();
            dim_rows.push(StratumRow {
                key: StratumKey { dimension: dim, value },
                support,
                accuracy: MeanMargin::from_scores(&accs, margin_k),
                f1: (!f1s.is_empty()).then(|| MeanMargin::from_scores(&f1s, margin_k)),
            });
        }
        dim_rows.sort_by_key(|r| value_order(dim, &r.key.value));
        rows.extend(dim_rows);
    }
    Ok(StratifiedReport { label: label.into(), trials: record_sets.len(), margin_k, age_edges: edges, rows })
}

impl StratifiedReport {
    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let header: Vec<String> =
            ["dimension", "stratum", "support", "accuracy %", "F1 %"].iter().map(|h| h.to_string()).collect();
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.key.dimension.label().to_string(),
                    r.key.value.clone(),
                    format!("({})", r.support),
                    r.accuracy.percent(),
                    r.f1.map_or_else(|| UNDEFINED.to_string(), |f| f.percent()),
                ]
            })
            .collect();
        render_table(&format!("{} ({} trials, ±{}·SD)", self.label, self.trials, self.margin_k), &header, &body, 2)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["dimension", "value", "support", "accuracy_mean", "accuracy_margin", "f1_mean", "f1_margin"])
            .expect("in-memory csv");
        for r in &self.rows {
            let (fm, fg) = r.f1.map_or((String::new(), String::new()), |f| (f.mean.to_string(), f.margin.to_string()));
            w.write_record([
                r.key.dimension.label().to_string(),
                r.key.value.clone(),
                r.support.to_string(),
                r.accuracy.mean.to_string(),
                r.accuracy.margin.to_string(),
                fm,
                fg,
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }
}

/// Aligned table; the first `left` columns are left-aligned, the rest right-aligned.
pub(crate) fn render_table(title: &str, header: &[String], body: &[Vec<String>], left: usize) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = " ".repeat(w - cell.chars().count());
            if i < left {
                let _ = write!(s, "{cell}{pad}");
            } else {
                let _ = write!(s, "{pad}{cell}");
            }
        }
        s.trim_end().to_string()
    };
    let mut out = String::new();
    if !title.is_empty() {
        out.push_str(title);
        out.push('\n');
    }
    out.push_str(&line(header));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
    out.push('\n');
    for row in body {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}
