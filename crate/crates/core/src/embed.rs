//! The frozen-encoder boundary.
//!
//! Encoder outputs live in an [`EmbeddingStore`]: one binary file per clip
//! plus a JSON Lines manifest. The binary layout (all little-endian) is
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EMB1"
//! 4       4     u32 version = 1
//! 8       4     u32 T (frames)
//! 12      4     u32 D (channels)
//! 16      4     f32 frame_rate
//! 20      4*T*D f32 values, frame-major (row t holds D channels)
//! ```
//!
//! [`synthetic_encode`] is a deterministic stand-in for the real encoder so
//! the bench runs without any neural network.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsp::Waveform;
use crate::Seed;

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;
/// Encoder output rate: 30 s of audio map to 1500 frames.
pub const FRAME_RATE: f32 = 50.0;
/// Width of the real encoder's output.
pub const DEFAULT_DIM: usize = 768;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Number of hand-crafted per-frame features expanded by the projection.
const BASE_FEATURES: usize = 4;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("clip id must be non-empty")]
    EmptyClipId,
    #[error("embedding for clip {0:?} already exists")]
    Duplicate(String),
    #[error("no embedding for clip {0:?}")]
    NotFound(String),
    #[error("{path}: bad magic bytes {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: header declares {expected} payload bytes, file has {actual}")]
    Truncated { path: PathBuf, expected: usize, actual: usize },
    #[error("dimension mismatch: store holds D = {store}, embedding has D = {found}")]
    DimMismatch { store: usize, found: usize },
    #[error("invalid embedding: {0}")]
    Invalid(String),
    #[error("manifest line {line}: {source}")]
    Manifest {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmbedError + '_ {
    move |source| EmbedError::Io { path: path.to_path_buf(), source }
}

/// Encoder output for one clip: `T x D` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub clip_id: String,
    pub frames: Array2<f32>,
    pub frame_rate: f32,
}

impl EmbeddingSequence {
    pub fn new(clip_id: impl Into<String>, frames: Array2<f32>, frame_rate: f32) -> Result<Self, EmbedError> {
        let emb = EmbeddingSequence { clip_id: clip_id.into(), frames, frame_rate };
        emb.validate()?;
        Ok(emb)
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.frames.nrows() == 0 || self.frames.ncols() == 0 {
            return Err(EmbedError::Invalid("embedding needs T >= 1 and D >= 1".into()));
        }
        if !self.frames.iter().all(|v| v.is_finite()) {
            return Err(EmbedError::Invalid("non-finite entry".into()));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(EmbedError::Invalid("frame rate must be positive".into()));
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    /// Serializes to the `EMB1` byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (t, d) = self.frames.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * t * d);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(t as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&self.frame_rate.to_le_bytes());
        for v in self.frames.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses the `EMB1` byte layout. `path` is only used for error messages.
    pub fn from_bytes(clip_id: &str, bytes: &[u8], path: &Path) -> Result<Self, EmbedError> {
        if bytes.len() < HEADER_LEN {
            return Err(EmbedError::Truncated { path: path.into(), expected: HEADER_LEN, actual: bytes.len() });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice"));
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[..4]);
        if &magic != MAGIC {
            return Err(EmbedError::BadMagic { path: path.into(), found: magic });
        }
        let version = word(4);
        if version != FORMAT_VERSION {
            return Err(EmbedError::UnsupportedVersion { path: path.into(), version });
        }
        let (t, d) = (word(8) as usize, word(12) as usize);
        let frame_rate = f32::from_bits(word(16));
        let payload = &bytes[HEADER_LEN..];
        let expected = 4 * t * d;
        if payload.len() != expected {
            return Err(EmbedError::Truncated { path: path.into(), expected, actual: payload.len() });
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        let frames = Array2::from_shape_vec((t, d), values).map_err(|e| EmbedError::Invalid(e.to_string()))?;
        EmbeddingSequence::new(clip_id, frames, frame_rate)
    }
}

/// One line of the store manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub file: String,
    pub t: usize,
    pub d: usize,
}

/// Directory of per-clip embedding files with a JSON Lines manifest.
///
/// Reads may happen concurrently; writes require `&mut self`, so one store
/// handle has one writer.
#[derive(Debug)]
pub struct EmbeddingStore {
    dir: PathBuf,
    dim: Option<usize>,
    entries: BTreeMap<String, ManifestEntry>,
}

impl EmbeddingStore {
    /// Opens (creating if needed) a store rooted at `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let manifest = dir.join(MANIFEST_FILE);
        let mut entries = BTreeMap::new();
        let mut dim = None;
        if manifest.exists() {
            let file = fs::File::open(&manifest).map_err(io_err(&manifest))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err(&manifest))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: ManifestEntry =
                    serde_json::from_str(&line).map_err(|source| EmbedError::Manifest { line: i + 1, source })?;
                match dim {
                    None => dim = Some(entry.d),
                    Some(d) if d != entry.d => return Err(EmbedError::DimMismatch { store: d, found: entry.d }),
                    _ => {}
                }
                if !dir.join(&entry.file).exists() {
                    return Err(EmbedError::NotFound(entry.clip_id));
                }
                entries.insert(entry.clip_id.clone(), entry);
            }
        }
        Ok(EmbeddingStore { dir, dim, entries })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Store-level channel count, fixed by the first write.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, clip_id: &str) -> bool {
        self.entries.contains_key(clip_id)
    }

    pub fn entry(&self, clip_id: &str) -> Option<&ManifestEntry> {
        self.entries.get(clip_id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.values()
    }

    pub fn write_embedding(&mut self, emb: &EmbeddingSequence) -> Result<(), EmbedError> {
        if emb.clip_id.is_empty() {
            return Err(EmbedError::EmptyClipId);
        }
        emb.validate()?;
        if self.entries.contains_key(&emb.clip_id) {
            return Err(EmbedError::Duplicate(emb.clip_id.clone()));
        }
        if let Some(d) = self.dim {
            if d != emb.dim() {
                return Err(EmbedError::DimMismatch { store: d, found: emb.dim() });
            }
        }
        let file = file_name_for(&emb.clip_id);
        let path = self.dir.join(&file);
        fs::write(&path, emb.to_bytes()).map_err(io_err(&path))?;

        let entry = ManifestEntry { clip_id: emb.clip_id.clone(), file, t: emb.num_frames(), d: emb.dim() };
        self.entries.insert(entry.clip_id.clone(), entry);
        if let Err(e) = self.flush_manifest() {
            self.entries.remove(&emb.clip_id);
            return Err(e);
        }
        self.dim = Some(emb.dim());
        Ok(())
    }

    pub fn read_embedding(&self, clip_id: &str) -> Result<EmbeddingSequence, EmbedError> {
        let entry = self.entries.get(clip_id).ok_or_else(|| EmbedError::NotFound(clip_id.to_string()))?;
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let emb = EmbeddingSequence::from_bytes(clip_id, &bytes, &path)?;
        if emb.dim() != entry.d || emb.num_frames() != entry.t {
            return Err(EmbedError::Invalid(format!(
                "{}: header {}x{} disagrees with manifest {}x{}",
                path.display(),
                emb.num_frames(),
                emb.dim(),
                entry.t,
                entry.d
            )));
        }
        Ok(emb)
    }

    // Rewrites the whole manifest through a temp file + rename.
    fn flush_manifest(&self) -> Result<(), EmbedError> {
        let tmp = self.dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut out = Vec::new();
        for entry in self.entries.values() {
            serde_json::to_writer(&mut out, entry).expect("manifest entry serializes");
            out.push(b'\n');
        }
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&out).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        let manifest = self.dir.join(MANIFEST_FILE);
        fs::rename(&tmp, &manifest).map_err(io_err(&manifest))
    }
}

fn file_name_for(clip_id: &str) -> String {
    let stem: String = clip_id
        .chars()
        .take(48)
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let digest = Sha256::digest(clip_id.as_bytes());
    let tag: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
    format!("{stem}-{tag}.emb")
}

/// Deterministic stand-in encoder.
///
/// Each 20 ms frame yields four base features (log energy, zero-crossing
/// rate, spectral centroid, spectral flatness) which a seeded Gaussian
/// projection expands to `d` channels.
pub fn synthetic_encode(clip_id: &str, wave: &Waveform, d: usize, seed: Seed) -> Result<EmbeddingSequence, EmbedError> {
    if d < BASE_FEATURES {
        return Err(EmbedError::Invalid(format!("synthetic encoder needs d >= {BASE_FEATURES}, got {d}")));
    }
    let rate = f64::from(wave.sample_rate());
    let hop = rate / f64::from(FRAME_RATE);
    let t = (wave.duration_secs() * f64::from(FRAME_RATE)).floor() as usize;
    if t == 0 {
        return Err(EmbedError::Invalid("waveform shorter than one 20 ms frame".into()));
    }
    let mut rng = seed.rng();
    let projection: Vec<[f64; BASE_FEATURES]> = (0..d)
        .map(|_| std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) / (BASE_FEATURES as f64).sqrt()))
        .collect();

    let frame_len = hop.ceil() as usize;
    let n_fft = frame_len.next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let window: Vec<f64> = (0..frame_len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / frame_len as f64).cos())
        .collect();
    let samples = wave.samples();
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut frames = Array2::<f32>::zeros((t, d));
    for (n, mut row) in frames.rows_mut().into_iter().enumerate() {
        let start = (n as f64 * hop).floor() as usize;
        let end = (((n + 1) as f64 * hop).floor() as usize).min(samples.len());
        let frame = &samples[start..end];
        let features = frame_features(frame, &window, &mut buf, fft.as_ref(), rate);
        for (out, weights) in row.iter_mut().zip(&projection) {
            *out = weights.iter().zip(&features).map(|(w, f)| w * f).sum::<f64>() as f32;
        }
    }
    EmbeddingSequence::new(clip_id, frames, FRAME_RATE)
}

fn frame_features(
    frame: &[f32],
    window: &[f64],
    buf: &mut [Complex<f64>],
    fft: &dyn rustfft::Fft<f64>,
    rate: f64,
) -> [f64; BASE_FEATURES] {
    let n = frame.len().max(1) as f64;
    let energy = frame.iter().map(|&s| f64::from(s).powi(2)).sum::<f64>() / n;
    let crossings = frame.windows(2).filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0)).count();
    let zcr = crossings as f64 / (n - 1.0).max(1.0);

    buf.fill(Complex::new(0.0, 0.0));
    for ((slot, &s), &w) in buf.iter_mut().zip(frame).zip(window) {
        slot.re = f64::from(s) * w;
    }
    fft.process(buf);
    let bins = buf.len() / 2 + 1;
    let power: Vec<f64> = buf[..bins].iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    let nyquist = rate / 2.0;
    let centroid = if total > 0.0 {
        let bin_hz = rate / buf.len() as f64;
        power.iter().enumerate().map(|(k, p)| k as f64 * bin_hz * p).sum::<f64>() / total / nyquist
    } else {
        0.0
    };
    const EPS: f64 = 1e-12;
    let log_mean = power.iter().map(|p| (p + EPS).ln()).sum::<f64>() / bins as f64;
    let flatness = log_mean.exp() / (total / bins as f64 + EPS);

    [(energy + 1e-10).ln() / 10.0 + 1.0, zcr, centroid, flatness]
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn seq(id: &str, t: usize, d: usize) -> EmbeddingSequence {
        let frames = Array2::from_shape_fn((t, d), |(i, j)| (i * d + j) as f32 * 0.5 - 3.0);
        EmbeddingSequence::new(id, frames, FRAME_RATE).unwrap()
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = EmbeddingStore::open(dir.path()).unwrap();
        let e = seq("clip/1", 3, 5);
        store.write_embedding(&e).unwrap();
        assert_eq!(store.read_embedding("clip/1").unwrap(), e);
        let reopened = EmbeddingStore::open(dir.path()).unwrap();
        assert_eq!(reopened.read_embedding("clip/1").unwrap(), e);
        assert_eq!(reopened.dim(), Some(5));
    }

    #[test]
    fn duplicate_and_dim_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = EmbeddingStore::open(dir.path()).unwrap();
        store.write_embedding(&seq("a", 2, 4)).unwrap();
        assert!(matches!(store.write_embedding(&seq("a", 2, 4)), Err(EmbedError::Duplicate(_))));
        assert!(matches!(store.write_embedding(&seq("b", 2, 6)), Err(EmbedError::DimMismatch { .. })));
        assert!(matches!(store.write_embedding(&seq("", 2, 4)), Err(EmbedError::EmptyClipId)));
    }

    #[test]
    fn single_frame_payload_is_sixteen_bytes() {
        let e = EmbeddingSequence::new("x", array![[1.0f32, 2.0, 3.0, 4.0]], FRAME_RATE).unwrap();
        assert_eq!(e.to_bytes().len() - HEADER_LEN, 16);
    }

    #[test]
    fn read_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = EmbeddingStore::open(dir.path()).unwrap();
        assert!(matches!(store.read_embedding("nope"), Err(EmbedError::NotFound(_))));

        store.write_embedding(&seq("m", 2, 4)).unwrap();
        let file = dir.path().join(&store.entries().next().unwrap().file);
        let mut bytes = fs::read(&file).unwrap();
        bytes[0] = b'X';
        fs::write(&file, &bytes).unwrap();
        assert!(matches!(store.read_embedding("m"), Err(EmbedError::BadMagic { .. })));

        bytes[0] = b'E';
        bytes.truncate(bytes.len() - 4);
        fs::write(&file, &bytes).unwrap();
        assert!(matches!(store.read_embedding("m"), Err(EmbedError::Truncated { .. })));
    }

    #[test]
    fn synthetic_encode_shape_and_determinism() {
        let w = Waveform::sine(300.0, 0.4, 16_000, 16_000).unwrap();
        let a = synthetic_encode("c", &w, 16, Seed(1)).unwrap();
        assert_eq!(a.frames.dim(), (50, 16));
        assert_eq!(a, synthetic_encode("c", &w, 16, Seed(1)).unwrap());
        assert_ne!(a.frames, synthetic_encode("c", &w, 16, Seed(2)).unwrap().frames);
        assert!(synthetic_encode("c", &w, 3, Seed(1)).is_err());
    }

    #[test]
    fn silence_gives_constant_frames() {
        let w = Waveform::new(vec![0.0; 8000], 16_000).unwrap();
        let e = synthetic_encode("s", &w, 8, Seed(4)).unwrap();
        assert_eq!(e.num_frames(), 25);
        let first = e.frames.row(0).to_owned();
        assert!(e.frames.rows().into_iter().all(|r| r == first));
    }
}
