//! The JSON run configuration and its path resolution.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use speechbench::corpus::SyntheticSpec;
use speechbench::dsp::AugmentConfig;
use speechbench::embed::DEFAULT_DIM;
use speechbench::eval::ReasonKind;
use speechbench::head::HeadHyper;
use speechbench::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub audio_root: Option<PathBuf>,
    pub noise_bank: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Resampling draws for human scores.
    pub human_trials: usize,
    /// Age band edges; quartiles of the evaluated subjects when absent.
    pub age_edges: Option<Vec<u32>>,
    /// Reasons shown in the reason table.
    pub reasons: Vec<ReasonKind>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            human_trials: 6,
            age_edges: None,
            reasons: vec![
                ReasonKind::VoiceQuality,
                ReasonKind::SpeechProsody,
                ReasonKind::LanguageUse,
                ReasonKind::TypicalSpeech,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSettings {
    pub addr: String,
    pub assignments: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeSettings {
    fn default() -> Self {
        ServeSettings { addr: "127.0.0.1:8080".into(), assignments: None, store: None, static_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    /// Channel count when encoding raw audio with the synthetic encoder.
    pub encoder_dim: usize,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub head: HeadHyper,
    pub synthetic: SyntheticSpec,
    pub evaluation: EvalSettings,
    pub serve: ServeSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            paths: Paths::default(),
            encoder_dim: DEFAULT_DIM,
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            head: HeadHyper::default(),
            synthetic: SyntheticSpec::default(),
            evaluation: EvalSettings::default(),
            serve: ServeSettings::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        let Paths { manifest, embeddings, audio_root, noise_bank, output } = &mut self.paths;
        for p in [manifest, embeddings, audio_root, noise_bank, output] {
            fix(p);
        }
        fix(&mut self.serve.assignments);
        fix(&mut self.serve.store);
        fix(&mut self.serve.static_dir);
    }
}

/// Returns a configured path, checking that it exists.
pub fn existing(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let Some(p) = path else {
        bail!("no {what} path configured (set paths in --config or pass it on the command line)");
    };
    if !p.exists() {
        bail!("{what} not found: {}", p.display());
    }
    Ok(p.clone())
}
