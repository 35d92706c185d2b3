//! Python bindings: waveforms and augmentation, manifests, synthetic data,
//! head training and inference, metrics, and listening-test assignment.
//!
//! Structured values cross the boundary as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::de::DeserializeOwned;
use serde::Serialize;

use speechbench::corpus::{self, CorpusManifest, Split, SyntheticSpec};
use speechbench::dsp::{self, AugmentConfig};
use speechbench::embed::EmbeddingStore;
use speechbench::eval::{self, group_by_clip, Metric, MeanMargin, PredictionRecord};
use speechbench::head::{self, Checkpoint, HeadHyper};
use speechbench::service;
use speechbench::training::{self, EpochLog, StoreSource, TrainConfig};
use speechbench::Seed;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

fn from_py_or_default<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    obj.map_or_else(|| Ok(T::default()), from_py)
}

fn parse_split(split: Option<&str>) -> PyResult<Option<Split>> {
    match split {
        None => Ok(None),
        Some("train") => Ok(Some(Split::Train)),
        Some("test") => Ok(Some(Split::Test)),
        Some(other) => Err(err(format!("split must be \"train\" or \"test\", got {other:?}"))),
    }
}

/// Mono audio at a fixed sample rate.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
pub struct Waveform {
    inner: dsp::Waveform,
}

#[pymethods]
impl Waveform {
    #[new]
    fn new(samples: Vec<f32>, sample_rate: u32) -> PyResult<Self> {
        Ok(Waveform { inner: dsp::Waveform::new(samples, sample_rate).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Waveform { inner: dsp::load_wav(path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        dsp::write_wav(path, &self.inner).map_err(err)
    }

    #[getter]
    fn samples(&self) -> Vec<f32> {
        self.inner.samples().to_vec()
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.inner.sample_rate()
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration_secs()
    }

    fn rms(&self) -> f64 {
        self.inner.rms()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Waveform({} samples @ {} Hz)", self.inner.len(), self.inner.sample_rate())
    }
}

/// Applies the stochastic augmentation chain once.
///
/// Returns the augmented waveform and a dict describing what was applied.
#[pyfunction]
#[pyo3(signature = (wave, seed, noise_bank=None, config=None))]
fn augment(
    py: Python<'_>,
    wave: &Waveform,
    seed: u64,
    noise_bank: Option<Vec<Waveform>>,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<(Waveform, Py<PyAny>)> {
    let cfg: AugmentConfig = from_py_or_default(config)?;
    let bank: Vec<dsp::Waveform> = noise_bank.unwrap_or_default().into_iter().map(|w| w.inner).collect();
    let out = dsp::augment_clip(&wave.inner, &bank, Seed(seed), &cfg).map_err(err)?;
    let info = serde_json::json!({
        "noise": out.noise.as_ref().map(|n| serde_json::json!({
            "bank_index": n.bank_index, "snr_db": n.snr_db, "offset": n.offset, "gain": n.gain,
        })),
        "notch_centers_hz": out.notch_centers,
        "dropped_spans": out.chunk_spans.as_ref().map(|s| s.iter().map(|r| [r.start, r.end]).collect::<Vec<_>>()),
    });
    Ok((Waveform { inner: out.waveform }, to_py(py, &info)?))
}

/// Subjects and clips with a subject-disjoint train/test split.
#[pyclass(frozen)]
pub struct Manifest {
    inner: CorpusManifest,
}

#[pymethods]
impl Manifest {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Manifest { inner: corpus::load_manifest(path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        corpus::write_manifest(path, &self.inner).map_err(err)
    }

    /// Clip ids, optionally restricted to "train" or "test".
    #[pyo3(signature = (split=None))]
    fn clip_ids(&self, split: Option<&str>) -> PyResult<Vec<String>> {
        let ids = match parse_split(split)? {
            Some(s) => self.inner.clips_in(s).map(|c| c.clip_id.clone()).collect(),
            None => self.inner.clips().iter().map(|c| c.clip_id.clone()).collect(),
        };
        Ok(ids)
    }

    fn status_of(&self, clip_id: &str) -> PyResult<String> {
        let status = self.inner.status_of(clip_id).ok_or_else(|| PyIndexError::new_err(clip_id.to_string()))?;
        Ok(format!("{status:?}"))
    }

    fn subjects(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.subjects())
    }

    fn __len__(&self) -> usize {
        self.inner.clips().len()
    }

    fn __repr__(&self) -> String {
        format!("Manifest({} subjects, {} clips)", self.inner.subjects().len(), self.inner.clips().len())
    }
}

/// Generates a synthetic corpus with embeddings under `out_dir/embeddings`
/// and the manifest at `out_dir/manifest.jsonl`.
#[pyfunction]
#[pyo3(signature = (out_dir, seed, spec=None))]
fn synth_data(out_dir: PathBuf, seed: u64, spec: Option<&Bound<'_, PyAny>>) -> PyResult<Manifest> {
    let spec: SyntheticSpec = from_py_or_default(spec)?;
    let corpus = corpus::generate_synthetic_corpus(&spec, Seed(seed), out_dir.join("embeddings")).map_err(err)?;
    corpus::write_manifest(out_dir.join("manifest.jsonl"), &corpus.manifest).map_err(err)?;
    Ok(Manifest { inner: corpus.manifest })
}

fn store_source(m: &CorpusManifest, embeddings: &PathBuf) -> PyResult<StoreSource> {
    let store = EmbeddingStore::open(embeddings).map_err(err)?;
    StoreSource::load(&store, m.clips().iter()).map_err(err)
}

/// A trained classification head.
#[pyclass(frozen)]
pub struct Model {
    ckpt: Checkpoint,
    history: Vec<EpochLog>,
}

#[pymethods]
impl Model {
    /// Trains a head on the manifest's train split.
    #[staticmethod]
    #[pyo3(signature = (manifest, embeddings, seed, train=None, head=None))]
    fn train(
        py: Python<'_>,
        manifest: &Manifest,
        embeddings: PathBuf,
        seed: u64,
        train: Option<&Bound<'_, PyAny>>,
        head: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Self> {
        let cfg: TrainConfig = from_py_or_default(train)?;
        let hy: HeadHyper = from_py_or_default(head)?;
        let m = &manifest.inner;
        let source = store_source(m, &embeddings)?;
        let out = py.detach(|| training::train_head(&cfg, m, &source, &hy, Seed(seed))).map_err(err)?;
        Ok(Model { ckpt: Checkpoint { params: out.params, hyper: hy, step: out.adam.step }, history: out.history })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model { ckpt: head::load_checkpoint(path).map_err(err)?, history: Vec::new() })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        head::save_checkpoint(path, &self.ckpt).map_err(err)
    }

    /// Per-clip prediction records for one split.
    #[pyo3(signature = (manifest, embeddings, split="test"))]
    fn predict(&self, py: Python<'_>, manifest: &Manifest, embeddings: PathBuf, split: &str) -> PyResult<Py<PyAny>> {
        let split = parse_split(Some(split))?.expect("split given");
        let m = &manifest.inner;
        let source = store_source(m, &embeddings)?;
        let records = py
            .detach(|| training::predict(&self.ckpt.params, &self.ckpt.hyper, m, m.clips_in(split), &source))
            .map_err(err)?;
        to_py(py, &records)
    }

    /// Per-epoch loss and validation F1 from training; empty for loaded models.
    #[getter]
    fn history(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.history)
    }

    #[getter]
    fn hyper(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.ckpt.hyper)
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.ckpt.step
    }
}

fn records(obj: &Bound<'_, PyAny>) -> PyResult<Vec<PredictionRecord>> {
    from_py(obj)
}

/// PD-positive F1 of prediction records; None when undefined.
#[pyfunction]
fn f1(records_: &Bound<'_, PyAny>) -> PyResult<Option<f64>> {
    eval::f1(&records(records_)?).map_err(err)
}

#[pyfunction]
fn accuracy(records_: &Bound<'_, PyAny>) -> PyResult<f64> {
    eval::accuracy(&records(records_)?).map_err(err)
}

/// Formats scores in [0, 1] as "mean±margin" in percent with a k-SD margin.
#[pyfunction]
fn mean_margin(scores: Vec<f64>, k: f64) -> PyResult<String> {
    if scores.is_empty() {
        return Err(err("no scores"));
    }
    Ok(MeanMargin::from_scores(&scores, k).percent())
}

/// Resamples one human response per clip per trial and scores each trial.
#[pyfunction]
#[pyo3(signature = (records_, trials, seed, metric="f1"))]
fn human_resample(
    py: Python<'_>,
    records_: &Bound<'_, PyAny>,
    trials: usize,
    seed: u64,
    metric: &str,
) -> PyResult<Py<PyAny>> {
    let metric = match metric {
        "f1" => Metric::F1,
        "accuracy" => Metric::Accuracy,
        other => return Err(err(format!("metric must be \"f1\" or \"accuracy\", got {other:?}"))),
    };
    let recs = records(records_)?;
    let report = eval::human_resample(&group_by_clip(&recs), trials, metric, Seed(seed)).map_err(err)?;
    to_py(py, &report)
}

/// Balanced 64-clip listening-test assignments, one per participant.
#[pyfunction]
fn build_assignment(py: Python<'_>, manifest: &Manifest, participants: Vec<String>, seed: u64) -> PyResult<Py<PyAny>> {
    let assignments = service::build_assignment(&manifest.inner, &participants, Seed(seed)).map_err(err)?;
    to_py(py, &assignments)
}

#[pymodule(name = "speechbench")]
fn speechbench_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Waveform>()?;
    m.add_class::<Manifest>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(augment, m)?)?;
    m.add_function(wrap_pyfunction!(synth_data, m)?)?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(mean_margin, m)?)?;
    m.add_function(wrap_pyfunction!(human_resample, m)?)?;
    m.add_function(wrap_pyfunction!(build_assignment, m)?)?;
    m.add("CANONICAL_RATE", dsp::CANONICAL_RATE)?;
    Ok(())
}
