use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Metric, PredictionRecord};
use crate::stats;
use crate::Seed;

/// Multiplier on the sample SD for human resampling margins. Only half of
/// the clips have more than one response, hence the wider band.
pub const HUMAN_MARGIN_K: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleReport {
    pub metric: Metric,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub margin: f64,
    pub margin_k: f64,
    /// The records picked in each trial, one per clip in clip-id order.
    #[serde(skip)]
    pub selections: Vec<Vec<PredictionRecord>>,
}

/// Groups records by clip id.
pub fn group_by_clip(records: &[PredictionRecord]) -> BTreeMap<String, Vec<PredictionRecord>> {
    let mut groups: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.clip_id.clone()).or_default().push(r.clone());
    }
    groups
}

/// Picks one response per clip uniformly at random in each of `trials`
/// trials, scores each pick, and reports mean and 3 x sample SD.
pub fn human_resample(
    groups: &BTreeMap<String, Vec<PredictionRecord>>,
    trials: usize,
    metric: Metric,
    seed: Seed,
) -> Result<ResampleReport, EvalError> {
    if trials == 0 {
        return Err(EvalError::Config("trials must be >= 1".into()));
    }
    if groups.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some((clip, _)) = groups.iter().find(|(_, v)| v.is_empty()) {
        return Err(EvalError::NoResponses(clip.clone()));
    }
    let mut scores = Vec::with_capacity(trials);
    let mut selections = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = seed.derive_indexed("resample", t as u64).rng();
        let pick: Vec<PredictionRecord> = groups
            .values()
            .map(|responses| {
                let i = if responses.len() == 1 { 0 } else { rng.random_range(0..responses.len()) };
                PredictionRecord { trial: Some(t), ..responses[i].clone() }
            })
            .collect();
        scores.push(metric.score(&pick)?.ok_or(EvalError::Undefined(t))?);
        selections.push(pick);
    }
    let (mean, margin) = stats::mean_margin(&scores, HUMAN_MARGIN_K);
    Ok(ResampleReport { metric, scores, mean, margin, margin_k: HUMAN_MARGIN_K, selections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Status::{HC, PD};

    #[test]
    fn single_response_per_clip_has_no_spread() {
        let recs = vec![
            PredictionRecord::human("a", PD, PD, None),
            PredictionRecord::human("b", PD, HC, None),
        ];
        let r = human_resample(&group_by_clip(&recs), 6, Metric::Accuracy, Seed(1)).unwrap();
        assert_eq!(r.scores, vec![0.5; 6]);
        assert_eq!(r.margin, 0.0);
    }

    #[test]
    fn configuration_errors() {
        let recs = vec![PredictionRecord::human("a", PD, PD, None)];
        assert!(matches!(human_resample(&group_by_clip(&recs), 0, Metric::Accuracy, Seed(1)), Err(EvalError::Config(_))));
        let mut groups = group_by_clip(&recs);
        groups.insert("empty".into(), vec![]);
        assert!(matches!(human_resample(&groups, 6, Metric::Accuracy, Seed(1)), Err(EvalError::NoResponses(_))));
    }

    #[test]
    fn reproducible_under_seed() {
        let recs = vec![
            PredictionRecord::human("a", PD, PD, None),
            PredictionRecord::human("a", HC, PD, None),
            PredictionRecord::human("b", HC, HC, None),
        ];
        let g = group_by_clip(&recs);
        assert_eq!(
            human_resample(&g, 6, Metric::Accuracy, Seed(4)).unwrap(),
            human_resample(&g, 6, Metric::Accuracy, Seed(4)).unwrap()
        );
    }
}
