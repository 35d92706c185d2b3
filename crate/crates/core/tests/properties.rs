mod common;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use speechbench::corpus::{enforce_split, generate_synthetic_corpus, CorpusManifest, Split, SyntheticSpec};
use speechbench::dsp::{augment_clip, AugmentConfig, Waveform};
use speechbench::embed::EmbeddingSequence;
use speechbench::eval::{f1, format_mean_margin, PredictionRecord};
use speechbench::head::{attention_pool, decode_checkpoint, encode_checkpoint, init_params, Checkpoint, HeadHyper};
use speechbench::service::session_token;
use speechbench::stats;
use speechbench::training::balanced_epoch;
use speechbench::Seed;

fn synthetic_manifest() -> &'static CorpusManifest {
    use std::sync::OnceLock;
    static M: OnceLock<(tempfile::TempDir, CorpusManifest)> = OnceLock::new();
    &M.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec { dim: 4, clips_per_task: 1, ..SyntheticSpec::default() };
        let c = generate_synthetic_corpus(&spec, Seed(1), dir.path()).unwrap();
        (dir, c.manifest)
    })
    .1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn split_is_exclusive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, reviewed) = common::random_manifest(&mut rng, 25);
        let split = enforce_split(&m, &reviewed).unwrap();
        for s in split.subjects() {
            let has_reviewed = reviewed.iter().any(|id| split.clip(id).unwrap().subject_id == s.subject_id);
            prop_assert_eq!(s.split, Some(if has_reviewed { Split::Test } else { Split::Train }));
        }
        prop_assert!(split.clips_in(Split::Train).all(|c| !reviewed.contains(&c.clip_id)));
    }

    #[test]
    fn manifest_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, reviewed) = common::random_manifest(&mut rng, 10);
        let m = enforce_split(&m, &reviewed).unwrap();
        let back = CorpusManifest::from_jsonl(m.to_jsonl().as_bytes()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn attention_weights_are_a_distribution(
        t in 1usize..30, h in 1usize..12, seed in any::<u64>(), spread in 0.01f64..20.0,
    ) {
        let mut rng = Seed(seed).rng();
        use rand::Rng;
        let frames = Array2::from_shape_fn((t, h), |_| spread * rng.random_range(-1.0..1.0));
        let v = Array1::from_shape_fn(h, |_| spread * rng.random_range(-1.0..1.0));
        let (pooled, alpha) = attention_pool(frames.view(), v.view());
        prop_assert!(alpha.iter().all(|&a| a >= 0.0 && a.is_finite()));
        prop_assert!((alpha.sum() - 1.0).abs() <= 1e-6);
        // The pooled vector is a convex combination of the frames.
        for j in 0..h {
            let col = frames.column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(pooled[j] >= lo - 1e-9 && pooled[j] <= hi + 1e-9);
        }
    }

    #[test]
    fn embedding_bytes_round_trip(
        t in 1usize..20, d in 1usize..16, values in prop::collection::vec(-1e6f32..1e6, 320),
        rate in 1.0f32..200.0,
    ) {
        let frames = Array2::from_shape_fn((t, d), |(i, j)| values[(i * d + j) % values.len()]);
        let e = EmbeddingSequence::new("clip", frames, rate).unwrap();
        let back = EmbeddingSequence::from_bytes("clip", &e.to_bytes(), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn checkpoint_round_trips(d in 1usize..10, h in 1usize..10, seed in any::<u64>(), step in any::<u64>()) {
        let mut params = init_params(d, h, Seed(seed)).unwrap();
        // Stored as f32; start from representable values.
        for t in params.tensors_mut() {
            t.iter_mut().for_each(|w| *w = f64::from(*w as f32));
        }
        let ckpt = Checkpoint { params, hyper: HeadHyper { hidden: h, ..HeadHyper::default() }, step };
        let back = decode_checkpoint(&encode_checkpoint(&ckpt)).unwrap();
        prop_assert_eq!(back.params, ckpt.params);
        prop_assert_eq!(back.hyper, ckpt.hyper);
        prop_assert_eq!(back.step, step);
    }

    #[test]
    fn balanced_epoch_spreads_any_size(n in 0usize..3000, seed in any::<u64>()) {
        let m = synthetic_manifest();
        let ids = balanced_epoch(m, n, Seed(seed)).unwrap();
        prop_assert_eq!(ids.len(), n);
        let mut cells: BTreeMap<_, usize> = BTreeMap::new();
        for id in &ids {
            let c = m.clip(id).unwrap();
            prop_assert_eq!(m.split_of(c), Some(Split::Train));
            *cells.entry((m.owner(c).status, c.task)).or_default() += 1;
        }
        let base = n / 10;
        let total_cells = if base == 0 { n % 10 } else { 10 };
        prop_assert_eq!(cells.len(), total_cells);
        prop_assert!(cells.values().all(|&k| k == base || k == base + 1));
    }

    #[test]
    fn augmentation_preserves_shape_and_is_seeded(
        len in 2_000usize..20_000, seed in any::<u64>(), p in 0.0f64..=1.0,
    ) {
        let signal = Waveform::sine(330.0, 0.5, len, 16_000).unwrap();
        let noise = vec![Waveform::sine(1234.5, 0.2, 5_000, 16_000).unwrap()];
        let cfg = AugmentConfig { per_augmentation_probability: p, ..AugmentConfig::default() };
        let a = augment_clip(&signal, &noise, Seed(seed), &cfg).unwrap();
        let b = augment_clip(&signal, &noise, Seed(seed), &cfg).unwrap();
        prop_assert_eq!(a.waveform.len(), len);
        prop_assert_eq!(a.waveform.sample_rate(), 16_000);
        prop_assert!(a.waveform.samples().iter().all(|x| x.is_finite()));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn f1_is_a_fraction(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..40)) {
        use speechbench::corpus::Status::{HC, PD};
        let recs: Vec<PredictionRecord> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(p, t))| PredictionRecord::human(&i.to_string(), if p { PD } else { HC }, if t { PD } else { HC }, None))
            .collect();
        let pred: Vec<bool> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let got = f1(&recs).unwrap();
        prop_assert_eq!(got.is_some(), common::f1_oracle(common::counts(&pred, &truth)).is_some());
        if let Some(v) = got {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn margins_are_nonnegative(values in prop::collection::vec(-1e3f64..1e3, 2..20), k in 0.0f64..5.0) {
        let (mean, margin) = stats::mean_margin(&values, k);
        let (m2, sd) = common::mean_and_sample_sd(&values);
        prop_assert!(margin >= 0.0);
        prop_assert!((mean - m2).abs() <= 1e-9 * (1.0 + m2.abs()));
        prop_assert!((margin - k * sd).abs() <= 1e-9 * (1.0 + k * sd));
    }

    #[test]
    fn constant_scores_have_zero_margin(v in -1e3f64..1e3, n in 2usize..10) {
        prop_assert_eq!(stats::sample_sd(&vec![v; n]), 0.0);
    }

    #[test]
    fn formatting_never_shows_negative_zero(mean in -0.05f64..100.0, margin in 0.0f64..50.0) {
        let s = format_mean_margin(mean, margin).unwrap();
        prop_assert!(!s.starts_with("-0.0"));
        let (a, b) = s.split_once('±').unwrap();
        prop_assert_eq!(a.split_once('.').unwrap().1.len(), 1);
        prop_assert_eq!(b.split_once('.').unwrap().1.len(), 1);
    }

    #[test]
    fn session_tokens_are_stable_hex(seed in any::<u64>(), pid in "[a-z0-9]{1,12}") {
        let t = session_token(Seed(seed), &pid);
        prop_assert_eq!(t.len(), 32);
        prop_assert!(t.chars().all(|c| c.is_ascii_hexdigit()));
        prop_assert_eq!(&t, &session_token(Seed(seed), &pid));
        prop_assert_ne!(&t, &session_token(Seed(seed), &format!("{pid}x")));
    }
}
