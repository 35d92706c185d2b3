//! Speech-biomarker screening bench.
//!
//! The crate covers the full model-side pipeline for binary PD/HC speech
//! screening on top of a frozen speech encoder, and the tooling needed to
//! collect expert listening-test judgments so both can be scored under the
//! same stratified reports:
//!
//! - [`dsp`]: WAV ingestion and the three stochastic waveform augmentations.
//! - [`embed`]: the encoder boundary (binary embedding store, synthetic encoder).
//! - [`head`]: linear / attention pooling / linear / logit classifier with manual gradients.
//! - [`corpus`]: subjects, clips, the expert-exclusion split and a synthetic corpus.
//! - [`training`]: balanced epochs, the training loop, multi-trial protocol.
//! - [`eval`]: metrics, stratified reports, reason tables, human resampling.
//! - [`service`]: rater assignments, sessions, append-only response store and HTTP API.

pub mod corpus;
pub mod dsp;
pub mod embed;
pub mod eval;
pub mod head;
pub mod seed;
pub mod service;
pub mod stats;
pub mod training;

pub use seed::Seed;
