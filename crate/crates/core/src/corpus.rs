//! Subjects, clips, the expert-exclusion split, and a synthetic corpus.
//!
//! Manifests are JSON Lines with two record kinds:
//!
//! ```text
//! {"kind":"subject","subject_id":"S001","status":"PD","sex":"female","age":61,"severity":"mild","first_language":"fr","split":"train"}
//! {"kind":"clip","clip_id":"S001_SVP_0","subject_id":"S001","task":"SVP","language":"fr","is_first_language":true,"duration":4.2,"audio":"audio/S001_SVP_0.wav"}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, EmbeddingSequence, EmbeddingStore, FRAME_RATE};
use crate::Seed;

/// Longest clip accepted anywhere in the bench, in seconds.
pub const MAX_CLIP_SECONDS: f64 = 30.0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("clip {clip} references unknown subject {subject}")]
    DanglingSubject { clip: String, subject: String },
    #[error("duplicate subject id {0}")]
    DuplicateSubject(String),
    #[error("duplicate clip id {0}")]
    DuplicateClip(String),
    #[error("unknown clip id {0}")]
    UnknownClip(String),
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Status {
    PD,
    HC,
}

impl Status {
    pub const ALL: [Status; 2] = [Status::PD, Status::HC];

    pub fn is_pd(self) -> bool {
        self == Status::PD
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::PD => "PD",
            Status::HC => "HC",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

/// The five recording tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    SVP,
    Repeat,
    Read,
    Recall,
    DPT,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::SVP, Task::Repeat, Task::Read, Task::Recall, Task::DPT];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::SVP => "SVP",
            Task::Repeat => "Repeat",
            Task::Read => "Read",
            Task::Recall => "Recall",
            Task::DPT => "DPT",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub subject_id: String,
    pub status: Status,
    pub sex: Sex,
    pub age: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<String>,
    pub first_language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub clip_id: String,
    pub subject_id: String,
    pub task: Task,
    pub language: String,
    pub is_first_language: bool,
    /// Seconds.
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Subject(Subject),
    Clip(Clip),
}

/// Validated, immutable corpus description.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    subjects: Vec<Subject>,
    clips: Vec<Clip>,
    subject_index: HashMap<String, usize>,
    clip_index: HashMap<String, usize>,
}

impl CorpusManifest {
    /// Builds a manifest, checking every invariant.
    pub fn new(subjects: Vec<Subject>, clips: Vec<Clip>) -> Result<Self, CorpusError> {
        let mut subject_index = HashMap::with_capacity(subjects.len());
        for (i, s) in subjects.iter().enumerate() {
            if s.subject_id.is_empty() {
                return Err(CorpusError::Invalid("empty subject_id".into()));
            }
            if !(s.age.is_finite() && s.age > 0.0) {
                return Err(CorpusError::Invalid(format!("subject {} has non-positive age", s.subject_id)));
            }
            if subject_index.insert(s.subject_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateSubject(s.subject_id.clone()));
            }
        }
        let mut clip_index = HashMap::with_capacity(clips.len());
        for (i, c) in clips.iter().enumerate() {
            if c.clip_id.is_empty() {
                return Err(CorpusError::Invalid("empty clip_id".into()));
            }
            if !(c.duration > 0.0 && c.duration <= MAX_CLIP_SECONDS) {
                return Err(CorpusError::Invalid(format!(
                    "clip {} duration {} s outside (0, {MAX_CLIP_SECONDS}]",
                    c.clip_id, c.duration
                )));
            }
            if !subject_index.contains_key(&c.subject_id) {
                return Err(CorpusError::DanglingSubject { clip: c.clip_id.clone(), subject: c.subject_id.clone() });
            }
            if clip_index.insert(c.clip_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateClip(c.clip_id.clone()));
            }
        }
        Ok(CorpusManifest { subjects, clips, subject_index, clip_index })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn clips(&self) -> &[Clip] {
        &self.clips
    }

    pub fn subject(&self, id: &str) -> Option<&Subject> {
        self.subject_index.get(id).map(|&i| &self.subjects[i])
    }

    pub fn clip(&self, id: &str) -> Option<&Clip> {
        self.clip_index.get(id).map(|&i| &self.clips[i])
    }

    /// Subject owning `clip`. Always resolves for clips of this manifest.
    pub fn owner(&self, clip: &Clip) -> &Subject {
        self.subject(&clip.subject_id).expect("manifest invariant: clip subjects resolve")
    }

    pub fn status_of(&self, clip_id: &str) -> Option<Status> {
        self.clip(clip_id).map(|c| self.owner(c).status)
    }

    pub fn split_of(&self, clip: &Clip) -> Option<Split> {
        self.owner(clip).split
    }

    /// Clips whose subject is labeled `split`.
    pub fn clips_in(&self, split: Split) -> impl Iterator<Item = &Clip> {
        self.clips.iter().filter(move |c| self.split_of(c) == Some(split))
    }

    /// Copy restricted to the given subjects (and their clips).
    pub fn restrict_subjects(&self, keep: &BTreeSet<String>) -> CorpusManifest {
        let subjects = self.subjects.iter().filter(|s| keep.contains(&s.subject_id)).cloned().collect();
        let clips = self.clips.iter().filter(|c| keep.contains(&c.subject_id)).cloned().collect();
        CorpusManifest::new(subjects, clips).expect("subset of a valid manifest is valid")
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.subjects {
            out.push_str(&serde_json::to_string(&Record::Subject(s.clone())).expect("serializable"));
            out.push('\n');
        }
        for c in &self.clips {
            out.push_str(&serde_json::to_string(&Record::Clip(c.clone())).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self, CorpusError> {
        let mut subjects = Vec::new();
        let mut clips = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| CorpusError::Io { path: PathBuf::from("<manifest>"), source })?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|source| CorpusError::Parse { line: i + 1, source })? {
                Record::Subject(s) => subjects.push(s),
                Record::Clip(c) => clips.push(c),
            }
        }
        CorpusManifest::new(subjects, clips)
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    CorpusManifest::from_jsonl(BufReader::new(file))
}

pub fn write_manifest(path: impl AsRef<Path>, m: &CorpusManifest) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    f.write_all(m.to_jsonl().as_bytes()).map_err(|source| CorpusError::Io { path: path.into(), source })
}

/// Labels every subject with at least one expert-reviewed clip as test and
/// everyone else as train.
pub fn enforce_split(m: &CorpusManifest, reviewed: &BTreeSet<String>) -> Result<CorpusManifest, CorpusError> {
    let mut test_subjects = BTreeSet::new();
    for id in reviewed {
        let clip = m.clip(id).ok_or_else(|| CorpusError::UnknownClip(id.clone()))?;
        test_subjects.insert(clip.subject_id.as_str());
    }
    let subjects: Vec<Subject> = m
        .subjects
        .iter()
        .map(|s| {
            let split = if test_subjects.contains(s.subject_id.as_str()) { Split::Test } else { Split::Train };
            Subject { split: Some(split), ..s.clone() }
        })
        .collect();
    if !subjects.is_empty() && subjects.iter().all(|s| s.split == Some(Split::Test)) {
        log::warn!("every subject has a reviewed clip; the training split is empty");
    }
    CorpusManifest::new(subjects, m.clips.clone())
}

/// Parameters of the synthetic Gaussian corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub train_subjects: usize,
    pub test_subjects: usize,
    pub clips_per_task: usize,
    pub dim: usize,
    /// Distance between class means along the hidden direction, in units of
    /// the per-frame within-class standard deviation.
    pub separation: f64,
    /// Inclusive range of frames per clip.
    pub frames: [usize; 2],
    /// Scale of per-subject and per-task offsets, orthogonal to the hidden direction.
    pub nuisance_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_subjects: 40,
            test_subjects: 20,
            clips_per_task: 2,
            dim: 64,
            separation: 2.0,
            frames: [10, 40],
            nuisance_scale: 0.5,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidSpec(m.into()));
        if self.train_subjects < 2 {
            return bad("need at least 2 train subjects (one per status)");
        }
        if self.test_subjects == 1 {
            return bad("test subjects must be 0 or at least 2 (one per status)");
        }
        if self.clips_per_task == 0 {
            return bad("clips_per_task must be >= 1");
        }
        if self.dim < 2 {
            return bad("dim must be >= 2");
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return bad("separation must be finite and >= 0");
        }
        let [lo, hi] = self.frames;
        if lo == 0 || lo > hi || hi as f64 / f64::from(FRAME_RATE) > MAX_CLIP_SECONDS {
            return bad("frames range must satisfy 1 <= low <= high <= 1500");
        }
        if !(self.nuisance_scale.is_finite() && self.nuisance_scale >= 0.0) {
            return bad("nuisance_scale must be finite and >= 0");
        }
        Ok(())
    }
}

/// Output of [`generate_synthetic_corpus`].
#[derive(Debug)]
pub struct SyntheticCorpus {
    /// Manifest with the split already enforced.
    pub manifest: CorpusManifest,
    pub store: EmbeddingStore,
    /// One reviewed clip per test subject.
    pub reviewed: BTreeSet<String>,
    /// Unit vector along which the class means differ.
    pub direction: Array1<f64>,
}

/// Builds a corpus whose frames are `N(mean_status + offsets, I)`.
///
/// PD frames are centered at `+separation/2` and HC frames at `-separation/2`
/// along a hidden unit direction; subject and task offsets live in the
/// orthogonal complement, so the mean projection of a clip's frames onto the
/// direction is a sufficient statistic for its class.
pub fn generate_synthetic_corpus(
    spec: &SyntheticSpec,
    seed: Seed,
    store_dir: impl AsRef<Path>,
) -> Result<SyntheticCorpus, CorpusError> {
    spec.validate()?;
    let mut store = EmbeddingStore::open(store_dir)?;
    if !store.is_empty() {
        return Err(CorpusError::InvalidSpec("embedding store directory is not empty".into()));
    }
    let d = spec.dim;
    let mut rng = seed.derive("synthetic-corpus").rng();
    let direction = unit_gaussian(d, &mut rng);
    let orthogonal = |rng: &mut rand_chacha::ChaCha8Rng, scale: f64| {
        let mut v: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
        let along = v.dot(&direction);
        v.scaled_add(-along, &direction);
        v
    };
    let task_offsets: Vec<Array1<f64>> = Task::ALL.iter().map(|_| orthogonal(&mut rng, spec.nuisance_scale)).collect();

    let languages = ["en", "fr"];
    let severities = ["mild", "moderate", "severe"];
    let total = spec.train_subjects + spec.test_subjects;
    let mut subjects = Vec::with_capacity(total);
    let mut clips = Vec::new();
    let mut reviewed = BTreeSet::new();
    for i in 0..total {
        let is_test = i >= spec.train_subjects;
        let local = if is_test { i - spec.train_subjects } else { i };
        let status = if local % 2 == 0 { Status::PD } else { Status::HC };
        let subject_id = format!("S{:03}", i + 1);
        let first_language = languages[rng.random_range(0..2)].to_string();
        subjects.push(Subject {
            subject_id: subject_id.clone(),
            status,
            sex: if rng.random_bool(0.5) { Sex::Male } else { Sex::Female },
            age: f64::from(rng.random_range(50u32..=85)),
            severity: status.is_pd().then(|| severities[rng.random_range(0..severities.len())].to_string()),
            first_language: first_language.clone(),
            split: None,
        });
        let subject_offset = orthogonal(&mut rng, spec.nuisance_scale);
        let sign = if status.is_pd() { 0.5 } else { -0.5 };
        let mut center = &subject_offset + &(&direction * (sign * spec.separation));
        let mut subject_clips = Vec::new();
        for task in Task::ALL {
            center += &task_offsets[task.index()];
            for k in 0..spec.clips_per_task {
                let clip_id = format!("{subject_id}_{task}_{k}");
                let t = rng.random_range(spec.frames[0]..=spec.frames[1]);
                let frames = Array2::from_shape_fn((t, d), |(_, j)| {
                    (center[j] + rng.sample::<f64, _>(StandardNormal)) as f32
                });
                store.write_embedding(&EmbeddingSequence::new(clip_id.clone(), frames, FRAME_RATE)?)?;
                let language = if rng.random_bool(0.8) {
                    first_language.clone()
                } else {
                    languages.iter().find(|l| **l != first_language).expect("two languages").to_string()
                };
                subject_clips.push(clip_id.clone());
                clips.push(Clip {
                    clip_id: clip_id.clone(),
                    subject_id: subject_id.clone(),
                    task,
                    is_first_language: language == first_language,
                    language,
                    duration: t as f64 / f64::from(FRAME_RATE),
                    audio: None,
                    embedding: store.entry(&clip_id).map(|e| e.file.clone()),
                });
            }
            center -= &task_offsets[task.index()];
        }
        if is_test {
            reviewed.insert(subject_clips.choose(&mut rng).expect("at least one clip").clone());
        }
    }
    let manifest = enforce_split(&CorpusManifest::new(subjects, clips)?, &reviewed)?;
    Ok(SyntheticCorpus { manifest, store, reviewed, direction })
}

fn unit_gaussian(d: usize, rng: &mut impl Rng) -> Array1<f64> {
    let v: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = v.dot(&v).sqrt();
    v / norm
}

/// Subjects grouped by split.
pub fn subjects_by_split(m: &CorpusManifest) -> BTreeMap<&'static str, BTreeSet<String>> {
    let mut out: BTreeMap<&'static str, BTreeSet<String>> = BTreeMap::new();
    for s in m.subjects() {
        let key = match s.split {
            Some(Split::Train) => "train",
            Some(Split::Test) => "test",
            None => "unassigned",
        };
        out.entry(key).or_default().insert(s.subject_id.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_SUBJECTS: &str = r#"{"kind":"subject","subject_id":"A","status":"PD","sex":"male","age":64,"severity":"mild","first_language":"en"}
{"kind":"subject","subject_id":"B","status":"HC","sex":"female","age":58,"first_language":"fr"}
{"kind":"clip","clip_id":"A1","subject_id":"A","task":"SVP","language":"en","is_first_language":true,"duration":3.5}
{"kind":"clip","clip_id":"A2","subject_id":"A","task":"Read","language":"fr","is_first_language":false,"duration":12.0}
{"kind":"clip","clip_id":"B1","subject_id":"B","task":"DPT","language":"fr","is_first_language":true,"duration":29.0}
"#;

    fn parse(s: &str) -> Result<CorpusManifest, CorpusError> {
        CorpusManifest::from_jsonl(s.as_bytes())
    }

    #[test]
    fn loads_two_subjects() {
        let m = parse(TWO_SUBJECTS).unwrap();
        assert_eq!(m.subjects().len(), 2);
        assert_eq!(m.clips().len(), 3);
        assert_eq!(m.status_of("B1"), Some(Status::HC));
        assert_eq!(parse(&m.to_jsonl()).unwrap(), m);
    }

    #[test]
    fn rejects_dangling_and_duplicates() {
        let dangling = format!("{TWO_SUBJECTS}{}", r#"{"kind":"clip","clip_id":"Z","subject_id":"nobody","task":"SVP","language":"en","is_first_language":true,"duration":1}"#);
        assert!(matches!(parse(&dangling), Err(CorpusError::DanglingSubject { .. })));
        let dup = format!("{TWO_SUBJECTS}{}", r#"{"kind":"clip","clip_id":"A1","subject_id":"A","task":"SVP","language":"en","is_first_language":true,"duration":1}"#);
        assert!(matches!(parse(&dup), Err(CorpusError::DuplicateClip(_))));
        let long = TWO_SUBJECTS.replace("29.0", "31.0");
        assert!(matches!(parse(&long), Err(CorpusError::Invalid(_))));
        let bad_task = TWO_SUBJECTS.replace("\"DPT\"", "\"Singing\"");
        assert!(matches!(parse(&bad_task), Err(CorpusError::Parse { line: 5, .. })));
    }

    #[test]
    fn one_reviewed_clip_moves_subject_to_test() {
        let m = parse(TWO_SUBJECTS).unwrap();
        let split = enforce_split(&m, &BTreeSet::from(["A2".to_string()])).unwrap();
        assert_eq!(split.subject("A").unwrap().split, Some(Split::Test));
        assert_eq!(split.subject("B").unwrap().split, Some(Split::Train));
        assert_eq!(split.clips_in(Split::Test).count(), 2);
    }

    #[test]
    fn empty_and_full_review_sets() {
        let m = parse(TWO_SUBJECTS).unwrap();
        let none = enforce_split(&m, &BTreeSet::new()).unwrap();
        assert!(none.subjects().iter().all(|s| s.split == Some(Split::Train)));
        let all: BTreeSet<String> = m.clips().iter().map(|c| c.clip_id.clone()).collect();
        let full = enforce_split(&m, &all).unwrap();
        assert_eq!(full.clips_in(Split::Train).count(), 0);
        assert!(matches!(enforce_split(&m, &BTreeSet::from(["nope".to_string()])), Err(CorpusError::UnknownClip(_))));
    }

    #[test]
    fn synthetic_corpus_is_deterministic() {
        let spec = SyntheticSpec { train_subjects: 4, test_subjects: 2, clips_per_task: 1, dim: 8, ..Default::default() };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ca = generate_synthetic_corpus(&spec, Seed(11), a.path()).unwrap();
        let cb = generate_synthetic_corpus(&spec, Seed(11), b.path()).unwrap();
        assert_eq!(ca.manifest, cb.manifest);
        for clip in ca.manifest.clips() {
            assert_eq!(ca.store.read_embedding(&clip.clip_id).unwrap(), cb.store.read_embedding(&clip.clip_id).unwrap());
            assert!(clip.embedding.is_some());
        }
        assert_eq!(ca.manifest.clips_in(Split::Test).count(), 2 * 5);
        assert_eq!(ca.reviewed.len(), 2);
    }

    #[test]
    fn synthetic_spec_validation() {
        let dir = tempfile::tempdir().unwrap();
        let bad = SyntheticSpec { train_subjects: 1, ..Default::default() };
        assert!(matches!(generate_synthetic_corpus(&bad, Seed(0), dir.path()), Err(CorpusError::InvalidSpec(_))));
        let bad = SyntheticSpec { separation: -1.0, ..Default::default() };
        assert!(generate_synthetic_corpus(&bad, Seed(0), dir.path()).is_err());
    }
}
