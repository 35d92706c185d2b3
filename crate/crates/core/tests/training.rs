mod common;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use speechbench::corpus::{generate_synthetic_corpus, Split, SyntheticSpec};
use speechbench::dsp::{write_wav, AugmentConfig, Waveform};
use speechbench::eval::accuracy;
use speechbench::head::{backward, bce_loss, forward_frames, init_params, HeadHyper, HeadParams, Mode};
use speechbench::training::{
    partition_batches, predict, run_trials_with_seeds, train_head, train_head_logged, write_epoch_log, AudioSource,
    ClipSource, StoreSource, TrainConfig, TrainError,
};
use speechbench::Seed;

fn small_run() -> (tempfile::TempDir, speechbench::corpus::SyntheticCorpus) {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { train_subjects: 20, test_subjects: 10, clips_per_task: 1, dim: 16, ..SyntheticSpec::default() };
    let c = generate_synthetic_corpus(&spec, Seed(4), dir.path()).unwrap();
    (dir, c)
}

fn quick_cfg() -> TrainConfig {
    TrainConfig { epoch_size: 128, batch_size: 32, epochs: 4, ..TrainConfig::default() }
}

fn quick_hyper() -> HeadHyper {
    let mut hy = HeadHyper { hidden: 16, ..HeadHyper::default() };
    hy.adam.learning_rate = 1e-2;
    hy
}

#[test]
fn training_is_deterministic_under_seed() {
    let (_d, c) = small_run();
    let src = StoreSource::load(&c.store, c.manifest.clips().iter()).unwrap();
    let a = train_head(&quick_cfg(), &c.manifest, &src, &quick_hyper(), Seed(3)).unwrap();
    let b = train_head(&quick_cfg(), &c.manifest, &src, &quick_hyper(), Seed(3)).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
    let other = train_head(&quick_cfg(), &c.manifest, &src, &quick_hyper(), Seed(4)).unwrap();
    assert_ne!(a.params, other.params);
}

#[test]
fn loss_decreases_and_test_accuracy_is_high() {
    let (_d, c) = small_run();
    let src = StoreSource::load(&c.store, c.manifest.clips().iter()).unwrap();
    let cfg = TrainConfig { epochs: 10, ..quick_cfg() };
    let out = train_head(&cfg, &c.manifest, &src, &quick_hyper(), Seed(1)).unwrap();
    assert_eq!(out.history.len(), 10);
    assert!(out.history[9].mean_loss < out.history[0].mean_loss);
    assert_eq!(out.adam.step, 40);
    let recs = predict(&out.params, &quick_hyper(), &c.manifest, c.manifest.clips_in(Split::Test), &src).unwrap();
    assert_eq!(recs.len(), c.manifest.clips_in(Split::Test).count());
    assert!(accuracy(&recs).unwrap() >= 0.9);
}

#[test]
fn epoch_log_is_written_per_epoch() {
    let (dir, c) = small_run();
    let src = StoreSource::load(&c.store, c.manifest.clips().iter()).unwrap();
    let mut seen = Vec::new();
    let out = train_head_logged(&quick_cfg(), &c.manifest, &src, &quick_hyper(), Seed(1), |log| {
        seen.push(log.epoch);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![0, 1, 2, 3]);
    let path = dir.path().join("log.jsonl");
    write_epoch_log(&path, &out.history).unwrap();
    assert_eq!(std::fs::read_to_string(path).unwrap().lines().count(), 4);
}

#[test]
fn test_clips_are_never_trained_on() {
    struct Guard<'a>(&'a StoreSource, &'a speechbench::corpus::CorpusManifest);
    impl ClipSource for Guard<'_> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn embedding(
            &self,
            clip: &speechbench::corpus::Clip,
            augment: bool,
            seed: Seed,
        ) -> Result<std::sync::Arc<speechbench::embed::EmbeddingSequence>, TrainError> {
            assert_eq!(self.1.split_of(clip), Some(Split::Train), "{} leaked into training", clip.clip_id);
            self.0.embedding(clip, augment, seed)
        }
    }
    let (_d, c) = small_run();
    let src = StoreSource::load(&c.store, c.manifest.clips().iter()).unwrap();
    train_head(&quick_cfg(), &c.manifest, &Guard(&src, &c.manifest), &quick_hyper(), Seed(2)).unwrap();
}

#[test]
fn configuration_errors() {
    let (_d, c) = small_run();
    let src = StoreSource::load(&c.store, c.manifest.clips().iter()).unwrap();
    let bad = TrainConfig { epoch_size: 100, ..quick_cfg() };
    assert!(matches!(train_head(&bad, &c.manifest, &src, &quick_hyper(), Seed(1)), Err(TrainError::Config(_))));
    assert!(partition_batches(&[1, 2, 3], 2).is_err());
    assert!(partition_batches(&[1, 2, 3, 4], 0).is_err());
    assert_eq!(partition_batches(&[1, 2, 3, 4], 2).unwrap().count(), 2);

    let empty = StoreSource::default();
    assert!(matches!(
        train_head(&quick_cfg(), &c.manifest, &empty, &quick_hyper(), Seed(1)),
        Err(TrainError::MissingEmbedding(_)) | Err(TrainError::Head(_))
    ));
}

#[test]
fn diverging_run_reports_the_batch() {
    let (_d, c) = small_run();
    let src = StoreSource::load(&c.store, c.manifest.clips().iter()).unwrap();
    let mut hy = quick_hyper();
    hy.adam.learning_rate = f64::MAX;
    match train_head(&quick_cfg(), &c.manifest, &src, &hy, Seed(1)) {
        Err(TrainError::NonFiniteLoss { epoch, batch, last_loss }) => {
            assert_eq!(epoch, 0);
            assert!(batch >= 1);
            assert!(last_loss.is_some());
        }
        Err(TrainError::Head(_)) => {}
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn trial_margin_is_twice_the_sample_sd() {
    let seeds: Vec<Seed> = (0..6).map(Seed).collect();
    let scores = [0.9, 0.95, 0.85, 1.0, 0.92, 0.88];
    let r = run_trials_with_seeds(&seeds, |i, _| Ok::<_, String>(scores[i])).unwrap();
    let (mean, sd) = common::mean_and_sample_sd(&scores);
    assert!((r.mean - mean).abs() < 1e-15);
    assert!((r.margin - 2.0 * sd).abs() < 1e-15);
    let failed = run_trials_with_seeds(&seeds, |i, _| if i == 3 { Err("boom") } else { Ok(0.5) });
    assert!(matches!(failed, Err(TrainError::TrialFailed { index: 3, .. })));
    assert!(run_trials_with_seeds(&seeds[..1], |_, _| Ok::<_, String>(1.0)).is_err());
}

#[test]
fn audio_source_augments_only_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let wave = Waveform::sine(200.0, 0.5, 16_000, 16_000).unwrap();
    write_wav(dir.path().join("a.wav"), &wave).unwrap();
    let noise = vec![Waveform::sine(3000.0, 0.3, 4_000, 16_000).unwrap()];
    let cfg = AugmentConfig { per_augmentation_probability: 1.0, ..AugmentConfig::default() };
    let src = AudioSource::new(dir.path(), noise, cfg, 8, Seed(1));
    let clip = speechbench::corpus::Clip {
        clip_id: "a".into(),
        subject_id: "s".into(),
        task: speechbench::corpus::Task::Read,
        language: "en".into(),
        is_first_language: true,
        duration: 1.0,
        audio: Some("a.wav".into()),
        embedding: None,
    };
    let clean = src.embedding(&clip, false, Seed(5)).unwrap();
    assert_eq!(clean.frames, src.embedding(&clip, false, Seed(6)).unwrap().frames);
    let aug = src.embedding(&clip, true, Seed(5)).unwrap();
    assert_eq!(aug.dim(), 8);
    assert_ne!(aug.frames, clean.frames);
    assert_eq!(aug.frames, src.embedding(&clip, true, Seed(5)).unwrap().frames);
}

/// Central differences against the manual backward pass, including train
/// mode with a fixed dropout mask.
#[test]
fn gradients_match_finite_differences() {
    let mut rng = Seed(77).rng();
    for case in 0..20 {
        let d = rng.random_range(1..12);
        let h = rng.random_range(1..12);
        let t = rng.random_range(1..25);
        let mode = if case % 2 == 0 { Mode::Eval } else { Mode::Train };
        let hy = HeadHyper { hidden: h, dropout_rate: 0.3, ..HeadHyper::default() };
        let mut p = init_params(d, h, Seed(case)).unwrap();
        for tensor in p.tensors_mut() {
            tensor.iter_mut().for_each(|w| *w += 0.2 * rng.sample::<f64, _>(StandardNormal));
        }
        let x = Array2::from_shape_fn((t, d), |_| rng.sample::<f64, _>(StandardNormal));
        let label = rng.random_bool(0.5);
        let seed = Seed(1000 + case);
        let (logit, trace) = forward_frames(&p, &hy, x.clone(), mode, seed).unwrap();
        if trace.z1.iter().chain(trace.z2.iter()).any(|z| z.abs() < 1e-4) {
            continue;
        }
        let g = backward(&p, &hy, &trace, bce_loss(logit, label).1).unwrap();
        let loss = |p: &HeadParams| bce_loss(forward_frames(p, &hy, x.clone(), mode, seed).unwrap().0, label).0;
        for ti in 0..7 {
            for j in 0..p.tensors()[ti].len() {
                let orig = p.tensors()[ti][j];
                p.tensors_mut()[ti][j] = orig + 1e-5;
                let up = loss(&p);
                p.tensors_mut()[ti][j] = orig - 1e-5;
                let down = loss(&p);
                p.tensors_mut()[ti][j] = orig;
                let numeric = (up - down) / 2e-5;
                let analytic = g.tensors()[ti][j];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
                assert!(rel < 1e-4, "case {case} tensor {ti}[{j}]: {analytic} vs {numeric}");
            }
        }
    }
}
