//! Balanced epoch sampling, the training loop, and the multi-trial protocol.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Clip, CorpusManifest, Split, Status, Task};
use crate::dsp::{augment_clip, load_wav, AugmentConfig, DspError, Waveform};
use crate::embed::{synthetic_encode, EmbedError, EmbeddingSequence, EmbeddingStore};
use crate::eval::{self, PredictionRecord};
use crate::head::{
    adam_step, backward_batch, bce_loss, forward, forward_batch, init_params, AdamState, ForwardTrace, HeadError, HeadHyper, HeadParams,
    Mode,
};
use crate::stats;
use crate::Seed;

/// Number of (status, task) cells the sampler balances over.
pub const CELLS: usize = 10;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no train clips for status {status} and task {task}")]
    EmptyCell { status: Status, task: Task },
    #[error("sampled clip {0} is not in the train split")]
    Leakage(String),
    #[error("no embedding source for clip {0}")]
    MissingEmbedding(String),
    #[error("loss became non-finite at epoch {epoch}, batch {batch} (last finite mean loss {last_loss:?})")]
    NonFiniteLoss { epoch: usize, batch: usize, last_loss: Option<f64> },
    #[error("trial {index} failed: {message}")]
    TrialFailed { index: usize, message: String },
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epoch_size: usize,
    pub batch_size: usize,
    pub max_clip_seconds: f64,
    pub trials: usize,
    pub epochs: usize,
    /// Fraction of train subjects held out per status for the per-epoch validation F1.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epoch_size: 1024,
            batch_size: 32,
            max_clip_seconds: 30.0,
            trials: 6,
            epochs: 30,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || self.epoch_size == 0 || self.epoch_size % self.batch_size != 0 {
            return bad(format!("epoch_size {} must be a positive multiple of batch_size {}", self.epoch_size, self.batch_size));
        }
        if self.trials < 2 {
            return bad(format!("trials must be >= 2, got {}", self.trials));
        }
        if !(self.max_clip_seconds > 0.0) {
            return bad("max_clip_seconds must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)".into());
        }
        Ok(())
    }
}

fn cell_index(status: Status, task: Task) -> usize {
    let s = match status {
        Status::PD => 0,
        Status::HC => 1,
    };
    s * Task::ALL.len() + task.index()
}

fn cell_of(index: usize) -> (Status, Task) {
    (Status::ALL[index / Task::ALL.len()], Task::ALL[index % Task::ALL.len()])
}

/// Train clips (duration-eligible) grouped into the ten (status, task) cells.
fn train_cells<'a>(m: &'a CorpusManifest, max_seconds: f64) -> Result<Vec<Vec<&'a Clip>>, TrainError> {
    let mut cells: Vec<Vec<&Clip>> = vec![Vec::new(); CELLS];
    for clip in m.clips_in(Split::Train).filter(|c| c.duration <= max_seconds) {
        cells[cell_index(m.owner(clip).status, clip.task)].push(clip);
    }
    if let Some(empty) = cells.iter().position(Vec::is_empty) {
        let (status, task) = cell_of(empty);
        return Err(TrainError::EmptyCell { status, task });
    }
    Ok(cells)
}

/// Draws `n` train clips with replacement, balanced over the ten
/// (status, task) cells.
///
/// Every cell receives `n / 10` draws; the `n % 10` leftover draws go to
/// consecutive cells in fixed cyclic order starting at a seeded offset.
/// The returned list is shuffled.
pub fn balanced_epoch(m: &CorpusManifest, n: usize, seed: Seed) -> Result<Vec<String>, TrainError> {
    balanced_epoch_within(m, n, f64::INFINITY, seed)
}

fn balanced_epoch_within(m: &CorpusManifest, n: usize, max_seconds: f64, seed: Seed) -> Result<Vec<String>, TrainError> {
    let cells = train_cells(m, max_seconds)?;
    let mut rng = seed.rng();
    let base = n / CELLS;
    let extra = n % CELLS;
    let start = rng.random_range(0..CELLS);
    let mut out = Vec::with_capacity(n);
    for (i, cell) in cells.iter().enumerate() {
        let bonus = usize::from((i + CELLS - start) % CELLS < extra);
        for _ in 0..base + bonus {
            out.push(cell.choose(&mut rng).expect("cells are non-empty").clip_id.clone());
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Splits an epoch into consecutive batches of exactly `batch_size` items.
pub fn partition_batches<T>(items: &[T], batch_size: usize) -> Result<std::slice::Chunks<'_, T>, TrainError> {
    if batch_size == 0 || items.len() % batch_size != 0 {
        return Err(TrainError::Config(format!(
            "{} items do not split into batches of {batch_size}",
            items.len()
        )));
    }
    Ok(items.chunks(batch_size))
}

/// Supplies the head's input for a clip.
pub trait ClipSource: Sync {
    /// Channel count of produced embeddings.
    fn dim(&self) -> usize;

    /// Embedding for `clip`. `augment` is set for training presentations;
    /// sources backed by raw audio apply waveform augmentation seeded by `seed`.
    fn embedding(&self, clip: &Clip, augment: bool, seed: Seed) -> Result<Arc<EmbeddingSequence>, TrainError>;
}

/// Precomputed embeddings held in memory.
#[derive(Debug, Default)]
pub struct StoreSource {
    dim: usize,
    embeddings: HashMap<String, Arc<EmbeddingSequence>>,
}

impl StoreSource {
    /// Loads every listed clip from the store.
    pub fn load<'a>(store: &EmbeddingStore, clips: impl IntoIterator<Item = &'a Clip>) -> Result<Self, TrainError> {
        let mut embeddings = HashMap::new();
        for clip in clips {
            if !store.contains(&clip.clip_id) {
                return Err(TrainError::MissingEmbedding(clip.clip_id.clone()));
            }
            embeddings.insert(clip.clip_id.clone(), Arc::new(store.read_embedding(&clip.clip_id)?));
        }
        let dim = store.dim().unwrap_or(0);
        Ok(StoreSource { dim, embeddings })
    }

    pub fn from_embeddings(embeddings: impl IntoIterator<Item = EmbeddingSequence>) -> Self {
        let embeddings: HashMap<_, _> = embeddings.into_iter().map(|e| (e.clip_id.clone(), Arc::new(e))).collect();
        let dim = embeddings.values().next().map_or(0, |e| e.dim());
        StoreSource { dim, embeddings }
    }
}

impl ClipSource for StoreSource {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embedding(&self, clip: &Clip, _augment: bool, _seed: Seed) -> Result<Arc<EmbeddingSequence>, TrainError> {
        self.embeddings.get(&clip.clip_id).cloned().ok_or_else(|| TrainError::MissingEmbedding(clip.clip_id.clone()))
    }
}

/// Raw-audio source: loads each clip's WAV, augments it on training
/// presentations, and encodes it with the synthetic encoder.
pub struct AudioSource {
    audio_root: PathBuf,
    noise_bank: Vec<Waveform>,
    augment: AugmentConfig,
    dim: usize,
    encoder_seed: Seed,
    cache: Mutex<HashMap<String, Arc<Waveform>>>,
}

impl AudioSource {
    pub fn new(audio_root: impl Into<PathBuf>, noise_bank: Vec<Waveform>, augment: AugmentConfig, dim: usize, encoder_seed: Seed) -> Self {
        AudioSource { audio_root: audio_root.into(), noise_bank, augment, dim, encoder_seed, cache: Mutex::new(HashMap::new()) }
    }

    fn waveform(&self, clip: &Clip) -> Result<Arc<Waveform>, TrainError> {
        if let Some(w) = self.cache.lock().expect("cache lock").get(&clip.clip_id) {
            return Ok(w.clone());
        }
        let rel = clip.audio.as_ref().ok_or_else(|| TrainError::MissingEmbedding(clip.clip_id.clone()))?;
        let wave = Arc::new(load_wav(self.audio_root.join(rel))?);
        self.cache.lock().expect("cache lock").insert(clip.clip_id.clone(), wave.clone());
        Ok(wave)
    }
}

impl ClipSource for AudioSource {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embedding(&self, clip: &Clip, augment: bool, seed: Seed) -> Result<Arc<EmbeddingSequence>, TrainError> {
        let wave = self.waveform(clip)?;
        let input = if augment {
            augment_clip(&wave, &self.noise_bank, seed.derive("augment"), &self.augment)?.waveform
        } else {
            (*wave).clone()
        };
        Ok(Arc::new(synthetic_encode(&clip.clip_id, &input, self.dim, self.encoder_seed)?))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: HeadParams,
    pub adam: AdamState,
    pub history: Vec<EpochLog>,
}

/// Splits off `fraction` of each status's train subjects for validation.
///
/// Returns `None` for the validation part when the fraction rounds to zero
/// subjects or when holding them out would empty a (status, task) cell.
pub fn split_validation(
    m: &CorpusManifest,
    fraction: f64,
    seed: Seed,
) -> (CorpusManifest, Option<CorpusManifest>) {
    let mut rng = seed.rng();
    let mut held = BTreeSet::new();
    for status in Status::ALL {
        let mut ids: Vec<&str> = m
            .subjects()
            .iter()
            .filter(|s| s.status == status && s.split == Some(Split::Train))
            .map(|s| s.subject_id.as_str())
            .collect();
        ids.shuffle(&mut rng);
        let k = (ids.len() as f64 * fraction).round() as usize;
        held.extend(ids.into_iter().take(k).map(String::from));
    }
    if held.is_empty() {
        return (m.clone(), None);
    }
    let keep: BTreeSet<String> =
        m.subjects().iter().map(|s| s.subject_id.clone()).filter(|id| !held.contains(id)).collect();
    let train = m.restrict_subjects(&keep);
    if train_cells(&train, f64::INFINITY).is_err() {
        return (m.clone(), None);
    }
    (train, Some(m.restrict_subjects(&held)))
}

/// Trains a fresh head on the train split of `m`.
pub fn train_head(
    cfg: &TrainConfig,
    m: &CorpusManifest,
    source: &dyn ClipSource,
    hy: &HeadHyper,
    seed: Seed,
) -> Result<TrainOutcome, TrainError> {
    train_head_logged(cfg, m, source, hy, seed, |_| Ok(()))
}

/// [`train_head`] with a callback invoked after every epoch.
pub fn train_head_logged(
    cfg: &TrainConfig,
    m: &CorpusManifest,
    source: &dyn ClipSource,
    hy: &HeadHyper,
    seed: Seed,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    if cfg.batch_size == 0 || cfg.epoch_size % cfg.batch_size != 0 {
        return Err(TrainError::Config("epoch_size must be a positive multiple of batch_size".into()));
    }
    hy.validate()?;
    let (train, validation) = split_validation(m, cfg.validation_fraction, seed.derive("validation"));
    train_cells(&train, cfg.max_clip_seconds)?;
    let mut params = init_params(source.dim(), hy.hidden, seed.derive("init"))?;
    let mut adam = AdamState::new(&params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last_loss = None;

    for epoch in 0..cfg.epochs {
        let epoch_seed = seed.derive_indexed("epoch", epoch as u64);
        let ids = balanced_epoch_within(&train, cfg.epoch_size, cfg.max_clip_seconds, epoch_seed.derive("sample"))?;
        let mut clips = Vec::with_capacity(ids.len());
        for id in &ids {
            let clip = train.clip(id).ok_or_else(|| TrainError::Leakage(id.clone()))?;
            if train.split_of(clip) != Some(Split::Train) {
                return Err(TrainError::Leakage(id.clone()));
            }
            clips.push((clip, train.owner(clip).status.is_pd()));
        }
        let mut epoch_loss = 0.0;
        for (b, batch) in partition_batches(&clips, cfg.batch_size)?.enumerate() {
            let batch_seed = epoch_seed.derive_indexed("batch", b as u64);
            let (loss, grads) = batch_gradient(&params, hy, batch, source, batch_seed)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b, last_loss });
            }
            adam_step(&mut params, &grads, &mut adam, hy)?;
            epoch_loss += loss;
            last_loss = Some(loss);
        }
        let n_batches = (cfg.epoch_size / cfg.batch_size) as f64;
        let val_f1 = match &validation {
            Some(val) => {
                let records = predict(&params, hy, val, val.clips().iter(), source)?;
                eval::f1(&records).ok().flatten()
            }
            None => None,
        };
        let log = EpochLog { epoch, mean_loss: epoch_loss / n_batches, val_f1 };
        on_epoch(&log)?;
        history.push(log);
    }
    Ok(TrainOutcome { params, adam, history })
}

/// Mean loss and mean gradient over one batch.
fn batch_gradient(
    params: &HeadParams,
    hy: &HeadHyper,
    batch: &[(&Clip, bool)],
    source: &dyn ClipSource,
    seed: Seed,
) -> Result<(f64, HeadParams), TrainError> {
    let item_seeds: Vec<Seed> = (0..batch.len()).map(|i| seed.derive_indexed("item", i as u64)).collect();
    let inputs: Vec<Array2<f64>> = batch
        .par_iter()
        .zip(&item_seeds)
        .map(|(&(clip, _), s)| Ok(source.embedding(clip, true, s.derive("source"))?.frames.mapv(f64::from)))
        .collect::<Result<_, TrainError>>()?;
    let dropout_seeds: Vec<Seed> = item_seeds.iter().map(|s| s.derive("dropout")).collect();
    let outputs = forward_batch(params, hy, inputs, Mode::Train, &dropout_seeds)?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut upstream = Vec::with_capacity(batch.len());
    for ((logit, _), &(_, label)) in outputs.iter().zip(batch) {
        let (l, dlogit) = bce_loss(*logit, label);
        loss += l * scale;
        upstream.push(dlogit * scale);
    }
    let traces: Vec<ForwardTrace> = outputs.into_iter().map(|(_, t)| t).collect();
    let mut grads = params.zeros_like();
    backward_batch(params, hy, &traces, &upstream, &mut grads)?;
    Ok((loss, grads))
}

/// Eval-mode predictions (`logit > 0` means PD) for the given clips.
pub fn predict<'a>(
    params: &HeadParams,
    hy: &HeadHyper,
    m: &CorpusManifest,
    clips: impl Iterator<Item = &'a Clip>,
    source: &dyn ClipSource,
) -> Result<Vec<PredictionRecord>, TrainError> {
    let clips: Vec<&Clip> = clips.collect();
    clips
        .par_iter()
        .map(|clip| {
            let emb = source.embedding(clip, false, Seed(0))?;
            let (logit, _) = forward(params, hy, &emb, Mode::Eval, Seed(0))?;
            let truth = m.owner(clip).status;
            let predicted = if logit > 0.0 { Status::PD } else { Status::HC };
            Ok(PredictionRecord::model(&clip.clip_id, predicted, truth, logit))
        })
        .collect()
}

/// Summary of repeated train+evaluate cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trials: usize,
    pub seeds: Vec<Seed>,
    pub scores: Vec<f64>,
    pub mean: f64,
    /// `margin_k` times the sample standard deviation of `scores`.
    pub margin: f64,
    pub margin_k: f64,
}

/// Multiplier on the sample SD for model trial margins.
pub const MODEL_MARGIN_K: f64 = 2.0;

/// Runs `cfg.trials` independent cycles of `evaluate(trial_index, trial_seed)`
/// in parallel and reports mean and 2 x sample SD.
pub fn run_trials<F, E>(cfg: &TrainConfig, seed: Seed, evaluate: F) -> Result<TrialReport, TrainError>
where
    F: Fn(usize, Seed) -> Result<f64, E> + Sync,
    E: std::fmt::Display,
{
    if cfg.trials < 2 {
        return Err(TrainError::Config(format!("trials must be >= 2, got {}", cfg.trials)));
    }
    let seeds: Vec<Seed> = (0..cfg.trials).map(|i| seed.derive_indexed("trial", i as u64)).collect();
    run_trials_with_seeds(&seeds, evaluate)
}

/// [`run_trials`] with explicit per-trial seeds.
pub fn run_trials_with_seeds<F, E>(seeds: &[Seed], evaluate: F) -> Result<TrialReport, TrainError>
where
    F: Fn(usize, Seed) -> Result<f64, E> + Sync,
    E: std::fmt::Display,
{
    if seeds.len() < 2 {
        return Err(TrainError::Config(format!("trials must be >= 2, got {}", seeds.len())));
    }
    let scores: Vec<f64> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| evaluate(i, s).map_err(|e| TrainError::TrialFailed { index: i, message: e.to_string() }))
        .collect::<Result<_, _>>()?;
    let (mean, margin) = stats::mean_margin(&scores, MODEL_MARGIN_K);
    Ok(TrialReport { trials: seeds.len(), seeds: seeds.to_vec(), scores, mean, margin, margin_k: MODEL_MARGIN_K })
}

pub fn write_epoch_log(path: &Path, history: &[EpochLog]) -> Result<(), TrainError> {
    let io = |source| TrainError::Io { path: path.to_path_buf(), source };
    let mut f = std::fs::File::create(path).map_err(io)?;
    for entry in history {
        let line = serde_json::to_string(entry).expect("epoch log serializes");
        writeln!(f, "{line}").map_err(io)?;
    }
    Ok(())
}
