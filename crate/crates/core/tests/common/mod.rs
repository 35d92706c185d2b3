//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use speechbench::corpus::{Clip, CorpusManifest, Sex, Status, Subject, Task};

/// Single-bin DFT power at `freq` over `samples` (Goertzel recurrence).
pub fn goertzel_power(samples: &[f32], freq: f64, rate: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * freq / rate;
    let coeff = 2.0 * w.cos();
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for &x in samples {
        let s0 = f64::from(x) + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    s1 * s1 + s2 * s2 - coeff * s1 * s2
}

pub fn rms(x: &[f32]) -> f64 {
    (x.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn db(ratio: f64) -> f64 {
    20.0 * ratio.log10()
}

/// Mean and sample standard deviation, computed the long way.
pub fn mean_and_sample_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mut total = 0.0;
    for x in xs {
        total += x;
    }
    let mean = total / n;
    let mut squares = 0.0;
    for x in xs {
        squares += (x - mean) * (x - mean);
    }
    (mean, (squares / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Confusion counts with PD as the positive class; `true` means PD.
pub fn counts(pred: &[bool], truth: &[bool]) -> Counts {
    let mut c = Counts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// F1 as the harmonic mean of precision and recall. Undefined only when
/// there are no positives predicted or present.
pub fn f1_oracle(c: Counts) -> Option<f64> {
    if c.tp + c.fp + c.fn_ == 0 {
        return None;
    }
    if c.tp == 0 {
        return Some(0.0);
    }
    let precision = c.tp as f64 / (c.tp + c.fp) as f64;
    let recall = c.tp as f64 / (c.tp + c.fn_) as f64;
    Some(2.0 * precision * recall / (precision + recall))
}

pub fn accuracy_oracle(c: Counts) -> f64 {
    (c.tp + c.tn) as f64 / (c.tp + c.fp + c.fn_ + c.tn) as f64
}

/// A random, valid, unsplit manifest plus a random set of reviewed clips.
pub fn random_manifest(rng: &mut ChaCha8Rng, max_subjects: usize) -> (CorpusManifest, BTreeSet<String>) {
    let n_subjects = rng.random_range(1..=max_subjects);
    let mut subjects = Vec::new();
    let mut clips = Vec::new();
    for i in 0..n_subjects {
        let subject_id = format!("s{i}");
        let status = if rng.random_bool(0.5) { Status::PD } else { Status::HC };
        subjects.push(Subject {
            subject_id: subject_id.clone(),
            status,
            sex: if rng.random_bool(0.5) { Sex::Male } else { Sex::Female },
            age: rng.random_range(40.0..90.0),
            severity: None,
            first_language: "en".into(),
            split: None,
        });
        for k in 0..rng.random_range(0..6) {
            clips.push(Clip {
                clip_id: format!("{subject_id}-c{k}"),
                subject_id: subject_id.clone(),
                task: Task::ALL[rng.random_range(0..5)],
                language: "en".into(),
                is_first_language: true,
                duration: rng.random_range(0.5..30.0),
                audio: None,
                embedding: None,
            });
        }
    }
    let reviewed = clips.iter().filter(|_| rng.random_bool(0.3)).map(|c| c.clip_id.clone()).collect();
    (CorpusManifest::new(subjects, clips).expect("generated manifest is valid"), reviewed)
}
