//! Subcommand implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::json;

use speechbench::corpus::{generate_synthetic_corpus, load_manifest, write_manifest, CorpusManifest, Split};
use speechbench::dsp::{augment_clip, load_wav, write_wav, Waveform};
use speechbench::embed::{synthetic_encode, EmbeddingSequence, EmbeddingStore};
use speechbench::eval::{
    accuracy, default_age_edges, f1, group_by_clip, human_resample, reason_breakdown, reason_f1_table,
    stratified_report, MeanMargin, Metric, PredictionRecord, HUMAN_MARGIN_K,
};
use speechbench::head::{load_checkpoint, save_checkpoint, Checkpoint};
use speechbench::service::http::{self, HttpConfig};
use speechbench::service::{build_assignment, parse_export, Assignment, ListeningTest, ResponseStore};
use speechbench::training::{
    predict, run_trials, train_head_logged, write_epoch_log, AudioSource, ClipSource, StoreSource, TrainError,
    MODEL_MARGIN_K,
};
use speechbench::Seed;

use crate::config::{existing, RunConfig};
use crate::{Cli, Command};

pub enum Failure {
    Usage(String),
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Domain(e)
    }
}

type Result<T, E = Failure> = std::result::Result<T, E>;

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    seed: Option<u64>,
}

impl Ctx {
    /// The command's own seed, split from the base seed by component name.
    fn seed(&self, component: &str) -> Result<Seed> {
        match self.seed {
            Some(s) => Ok(Seed(s).derive(component)),
            None => Err(Failure::Usage("this command needs a seed (--seed or \"seed\" in --config)".into())),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn manifest(&self) -> anyhow::Result<CorpusManifest> {
        let path = existing(&self.cfg.paths.manifest, "manifest")?;
        load_manifest(&path).with_context(|| format!("loading manifest {}", path.display()))
    }

    fn noise_bank(&self) -> anyhow::Result<Vec<Waveform>> {
        let Some(path) = &self.cfg.paths.noise_bank else {
            return Ok(Vec::new());
        };
        let path = existing(&Some(path.clone()), "noise bank")?;
        if path.is_file() {
            return Ok(vec![load_wav(&path)?]);
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        files.iter().map(|f| load_wav(f).with_context(|| format!("loading noise {}", f.display()))).collect()
    }

    /// Embeddings from the configured store, or raw audio encoded on the fly.
    fn source(&self, m: &CorpusManifest) -> Result<Box<dyn ClipSource>> {
        if self.cfg.paths.embeddings.is_some() {
            let dir = existing(&self.cfg.paths.embeddings, "embedding store")?;
            let store = EmbeddingStore::open(&dir).with_context(|| format!("opening store {}", dir.display()))?;
            return Ok(Box::new(StoreSource::load(&store, m.clips().iter()).map_err(anyhow::Error::from)?));
        }
        if self.cfg.paths.audio_root.is_some() {
            let root = existing(&self.cfg.paths.audio_root, "audio root")?;
            return Ok(Box::new(AudioSource::new(
                root,
                self.noise_bank()?,
                self.cfg.augment.clone(),
                self.cfg.encoder_dim,
                self.seed("encoder")?,
            )));
        }
        Err(Failure::Domain(anyhow!("configure paths.embeddings or paths.audio_root")))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    write_text(path, &text)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn summary(scores: &[f64], k: f64) -> serde_json::Value {
    if scores.is_empty() {
        return json!({ "scores": [], "mean": null, "margin": null, "display": speechbench::eval::UNDEFINED });
    }
    let mm = MeanMargin::from_scores(scores, k);
    json!({ "scores": scores, "mean": mm.mean, "margin": mm.margin, "display": mm.percent() })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::SynthData { .. } => "synth-data",
        Command::Augment { .. } => "augment",
        Command::EmbedImport { .. } => "embed-import",
        Command::Train { .. } => "train",
        Command::Trials { .. } => "trials",
        Command::Evaluate { .. } => "evaluate",
        Command::Compare { .. } => "compare",
        Command::Assign { .. } => "assign",
        Command::Serve { .. } => "serve",
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.paths.output.clone())
        .ok_or_else(|| Failure::Usage("an output directory is required (--out or paths.output)".into()))?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = Ctx { seed: cli.seed.or(cfg.seed), cfg, out };
    let started = chrono::Utc::now();
    let meta = |finished: Option<chrono::DateTime<chrono::Utc>>| {
        json!({
            "command": command_name(&cli.command),
            "argv": std::env::args().collect::<Vec<_>>(),
            "seed": ctx.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "started_at": started,
            "finished_at": finished,
        })
    };
    if matches!(cli.command, Command::Serve { .. }) {
        write_json(&ctx.path("run_meta.json"), &meta(None))?;
    }
    match &cli.command {
        Command::SynthData { separation, dim, train_subjects, test_subjects } => {
            synth_data(&ctx, *separation, *dim, *train_subjects, *test_subjects)
        }
        Command::Augment { input, variants } => augment(&ctx, input, *variants),
        Command::EmbedImport { from, encode, dim } => embed_import(&ctx, from.as_deref(), *encode, *dim),
        Command::Train { epochs } => train(&ctx, *epochs),
        Command::Trials { trials, epochs } => trials_cmd(&ctx, *trials, *epochs),
        Command::Evaluate { checkpoint } => evaluate(&ctx, checkpoint),
        Command::Compare { model, human } => compare(&ctx, model, human),
        Command::Assign { participants } => assign(&ctx, participants),
        Command::Serve { assignments, store, addr, static_dir, admin_token_env } => {
            serve(&ctx, assignments.as_deref(), store.as_deref(), addr.as_deref(), static_dir.as_deref(), admin_token_env)
        }
    }?;
    write_json(&ctx.path("run_meta.json"), &meta(Some(chrono::Utc::now())))?;
    Ok(())
}

fn synth_data(
    ctx: &Ctx,
    separation: Option<f64>,
    dim: Option<usize>,
    train_subjects: Option<usize>,
    test_subjects: Option<usize>,
) -> Result<()> {
    let mut spec = ctx.cfg.synthetic.clone();
    if let Some(v) = separation {
        spec.separation = v;
    }
    if let Some(v) = dim {
        spec.dim = v;
    }
    if let Some(v) = train_subjects {
        spec.train_subjects = v;
    }
    if let Some(v) = test_subjects {
        spec.test_subjects = v;
    }
    let seed = ctx.seed("synth-data")?;
    let corpus = generate_synthetic_corpus(&spec, seed, ctx.path("embeddings")).map_err(anyhow::Error::from)?;
    write_manifest(ctx.path("manifest.jsonl"), &corpus.manifest).map_err(anyhow::Error::from)?;
    write_json(&ctx.path("reviewed.json"), &corpus.reviewed)?;
    // A ready-to-use config for the follow-up commands.
    let mut follow = ctx.cfg.clone();
    follow.seed = ctx.seed;
    follow.synthetic = spec;
    follow.paths.manifest = Some("manifest.jsonl".into());
    follow.paths.embeddings = Some("embeddings".into());
    follow.paths.output = None;
    write_json(&ctx.path("config.json"), &follow)?;
    let test = corpus.manifest.clips_in(Split::Test).count();
    println!(
        "{} subjects, {} clips ({} test) -> {}",
        corpus.manifest.subjects().len(),
        corpus.manifest.clips().len(),
        test,
        ctx.out.display()
    );
    Ok(())
}

fn augment(ctx: &Ctx, input: &Path, variants: usize) -> Result<()> {
    if variants == 0 {
        return Err(Failure::Usage("--variants must be at least 1".into()));
    }
    ctx.cfg.augment.validate().map_err(anyhow::Error::from)?;
    if !input.exists() {
        return Err(Failure::Domain(anyhow!("input not found: {}", input.display())));
    }
    let wave = load_wav(input).with_context(|| format!("loading {}", input.display()))?;
    let bank = ctx.noise_bank()?;
    let seed = ctx.seed("augment")?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
    let dir = ctx.path("augmented");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut records = Vec::with_capacity(variants);
    for i in 0..variants {
        let outcome = augment_clip(&wave, &bank, seed.derive_indexed("variant", i as u64), &ctx.cfg.augment)
            .with_context(|| format!("augmenting variant {i}"))?;
        let name = format!("{stem}-{i:03}.wav");
        write_wav(dir.join(&name), &outcome.waveform).map_err(anyhow::Error::from)?;
        records.push(json!({
            "variant": i,
            "file": format!("augmented/{name}"),
            "noise": outcome.noise.map(|n| json!({
                "bank_index": n.bank_index, "snr_db": n.snr_db, "offset": n.offset, "gain": n.gain,
            })),
            "notch_centers_hz": outcome.notch_centers,
            "dropped_spans": outcome.chunk_spans.map(|s| s.iter().map(|r| [r.start, r.end]).collect::<Vec<_>>()),
        }));
    }
    write_json(&ctx.path("augment.json"), &records)?;
    println!("{variants} variant(s) -> {}", dir.display());
    Ok(())
}

fn embed_import(ctx: &Ctx, from: Option<&Path>, encode: bool, dim: usize) -> Result<()> {
    if from.is_none() && !encode {
        return Err(Failure::Usage("embed-import needs --from <dir> or --encode".into()));
    }
    let m = ctx.manifest()?;
    let mut store = EmbeddingStore::open(ctx.path("embeddings")).map_err(anyhow::Error::from)?;
    let mut imported = 0;
    if let Some(dir) = from {
        if !dir.is_dir() {
            return Err(Failure::Domain(anyhow!("embedding directory not found: {}", dir.display())));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "emb"))
            .collect();
        files.sort();
        for file in files {
            let clip_id = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            if m.clip(&clip_id).is_none() {
                return Err(Failure::Domain(anyhow!("{}: clip {clip_id} is not in the manifest", file.display())));
            }
            let bytes = fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let emb = EmbeddingSequence::from_bytes(&clip_id, &bytes, &file).map_err(anyhow::Error::from)?;
            store.write_embedding(&emb).map_err(anyhow::Error::from)?;
            imported += 1;
        }
    } else {
        let root = existing(&ctx.cfg.paths.audio_root, "audio root")?;
        let seed = ctx.seed("encoder")?;
        for clip in m.clips() {
            let Some(rel) = &clip.audio else { continue };
            let path = root.join(rel);
            let wave = load_wav(&path).with_context(|| format!("loading {}", path.display()))?;
            let emb = synthetic_encode(&clip.clip_id, &wave, dim, seed).map_err(anyhow::Error::from)?;
            store.write_embedding(&emb).map_err(anyhow::Error::from)?;
            imported += 1;
        }
    }
    let missing: Vec<&str> =
        m.clips().iter().map(|c| c.clip_id.as_str()).filter(|id| !store.contains(id)).collect();
    if !missing.is_empty() {
        log::warn!("{} manifest clips have no embedding", missing.len());
    }
    write_json(&ctx.path("embed_import.json"), &json!({ "imported": imported, "dim": store.dim(), "missing": missing }))?;
    println!("imported {imported} embedding(s) -> {}", ctx.path("embeddings").display());
    Ok(())
}

fn train(ctx: &Ctx, epochs: Option<usize>) -> Result<()> {
    let mut cfg = ctx.cfg.train.clone();
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let m = ctx.manifest()?;
    let seed = ctx.seed("train")?;
    let source = ctx.source(&m)?;
    let hy = ctx.cfg.head;
    let out = train_head_logged(&cfg, &m, source.as_ref(), &hy, seed, |log| {
        log::info!("epoch {} loss {:.4} val F1 {:?}", log.epoch, log.mean_loss, log.val_f1);
        Ok(())
    })
    .map_err(anyhow::Error::from)?;
    let ckpt = Checkpoint { params: out.params, hyper: hy, step: out.adam.step };
    save_checkpoint(ctx.path("head.ckpt"), &ckpt).map_err(anyhow::Error::from)?;
    write_epoch_log(&ctx.path("epoch_log.jsonl"), &out.history).map_err(anyhow::Error::from)?;
    let last = out.history.last();
    write_json(
        &ctx.path("train.json"),
        &json!({
            "train": cfg,
            "head": hy,
            "steps": ckpt.step,
            "final_loss": last.map(|l| l.mean_loss),
            "final_val_f1": last.and_then(|l| l.val_f1),
        }),
    )?;
    println!("trained {} epochs ({} steps) -> {}", cfg.epochs, ckpt.step, ctx.path("head.ckpt").display());
    Ok(())
}

fn trials_cmd(ctx: &Ctx, trials: Option<usize>, epochs: Option<usize>) -> Result<()> {
    let mut cfg = ctx.cfg.train.clone();
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let m = ctx.manifest()?;
    let seed = ctx.seed("trials")?;
    let source = ctx.source(&m)?;
    let hy = ctx.cfg.head;
    let records: Mutex<BTreeMap<usize, Vec<PredictionRecord>>> = Mutex::new(BTreeMap::new());
    let report = run_trials(&cfg, seed, |i, s| {
        let out = train_head_logged(&cfg, &m, source.as_ref(), &hy, s, |_| Ok(()))?;
        let mut recs = predict(&out.params, &hy, &m, m.clips_in(Split::Test), source.as_ref())?;
        recs.iter_mut().for_each(|r| r.trial = Some(i));
        let acc = accuracy(&recs).map_err(|e| TrainError::Config(e.to_string()))?;
        records.lock().expect("records lock").insert(i, recs);
        Ok::<_, TrainError>(acc)
    })
    .map_err(anyhow::Error::from)?;
    let records = records.into_inner().expect("records lock");
    let f1_scores: Vec<Option<f64>> = records.values().map(|r| f1(r).ok().flatten()).collect();
    let defined: Vec<f64> = f1_scores.iter().flatten().copied().collect();
    let accuracy_summary = summary(&report.scores, MODEL_MARGIN_K);
    let f1_summary = summary(&defined, MODEL_MARGIN_K);
    write_json(
        &ctx.path("trials.json"),
        &json!({
            "trials": report.trials,
            "seeds": report.seeds,
            "margin_k": report.margin_k,
            "test_clips": m.clips_in(Split::Test).count(),
            "accuracy": accuracy_summary,
            "f1": f1_summary,
            "f1_per_trial": f1_scores,
        }),
    )?;
    let all: Vec<PredictionRecord> = records.into_values().flatten().collect();
    write_jsonl(&ctx.path("predictions.jsonl"), &all)?;
    println!(
        "{} trials: accuracy {}, F1 {}",
        report.trials, accuracy_summary["display"].as_str().unwrap_or(""), f1_summary["display"].as_str().unwrap_or("")
    );
    Ok(())
}

fn age_edges(ctx: &Ctx, m: &CorpusManifest, clip_ids: &BTreeSet<&str>) -> Vec<u32> {
    if let Some(e) = &ctx.cfg.evaluation.age_edges {
        return e.clone();
    }
    let subjects: BTreeSet<&str> =
        clip_ids.iter().filter_map(|id| m.clip(id)).map(|c| c.subject_id.as_str()).collect();
    let ages: Vec<f64> = subjects.iter().filter_map(|s| m.subject(s)).map(|s| s.age).collect();
    default_age_edges(&ages)
}

fn evaluate(ctx: &Ctx, checkpoint: &Path) -> Result<()> {
    if !checkpoint.exists() {
        return Err(Failure::Domain(anyhow!("checkpoint not found: {}", checkpoint.display())));
    }
    let ckpt = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let m = ctx.manifest()?;
    let source = ctx.source(&m)?;
    let records =
        predict(&ckpt.params, &ckpt.hyper, &m, m.clips_in(Split::Test), source.as_ref()).map_err(anyhow::Error::from)?;
    if records.is_empty() {
        return Err(Failure::Domain(anyhow!("the manifest has no test clips")));
    }
    let ids: BTreeSet<&str> = records.iter().map(|r| r.clip_id.as_str()).collect();
    let edges = age_edges(ctx, &m, &ids);
    let report = stratified_report("model", std::slice::from_ref(&records), &m, Some(&edges), MODEL_MARGIN_K)
        .map_err(anyhow::Error::from)?;
    let acc = accuracy(&records).map_err(anyhow::Error::from)?;
    let f = f1(&records).map_err(anyhow::Error::from)?;
    write_jsonl(&ctx.path("predictions.jsonl"), &records)?;
    write_json(&ctx.path("metrics.json"), &json!({ "clips": records.len(), "accuracy": acc, "f1": f }))?;
    write_json(&ctx.path("stratified.json"), &report)?;
    write_text(&ctx.path("stratified.txt"), &report.to_text())?;
    write_text(&ctx.path("stratified.csv"), &report.to_csv())?;
    println!("{} test clips: accuracy {:.1}%, F1 {}", records.len(), acc * 100.0, f.map_or("—".into(), |v| format!("{:.1}%", v * 100.0)));
    Ok(())
}

fn compare(ctx: &Ctx, model: &Path, human: &Path) -> Result<()> {
    for p in [model, human] {
        if !p.exists() {
            return Err(Failure::Domain(anyhow!("input not found: {}", p.display())));
        }
    }
    let m = ctx.manifest()?;
    let seed = ctx.seed("human-resample")?;
    let text = fs::read_to_string(human).with_context(|| format!("reading {}", human.display()))?;
    let responses = parse_export(&text).with_context(|| format!("parsing {}", human.display()))?;
    let human_records: Vec<PredictionRecord> = responses
        .iter()
        .map(|r| r.to_prediction(&m))
        .collect::<Result<_, _>>()
        .map_err(anyhow::Error::from)?;
    if human_records.is_empty() {
        return Err(Failure::Domain(anyhow!("{} has no responses", human.display())));
    }
    let rated: BTreeSet<&str> = human_records.iter().map(|r| r.clip_id.as_str()).collect();

    // Model scores are computed on the clips the humans rated.
    let mut model_sets: BTreeMap<Option<usize>, Vec<PredictionRecord>> = BTreeMap::new();
    for r in read_jsonl::<PredictionRecord>(model)? {
        if rated.contains(r.clip_id.as_str()) {
            model_sets.entry(r.trial).or_default().push(r);
        }
    }
    if model_sets.is_empty() {
        return Err(Failure::Domain(anyhow!("no clip has both a model prediction and a human response")));
    }
    let model_sets: Vec<Vec<PredictionRecord>> = model_sets.into_values().collect();

    let trials = ctx.cfg.evaluation.human_trials;
    let groups = group_by_clip(&human_records);
    let human_f1 = human_resample(&groups, trials, Metric::F1, seed).map_err(anyhow::Error::from)?;
    let human_acc = human_resample(&groups, trials, Metric::Accuracy, seed).map_err(anyhow::Error::from)?;
    let model_f1: Vec<f64> = model_sets.iter().filter_map(|s| f1(s).ok().flatten()).collect();
    let model_acc: Vec<f64> = model_sets.iter().map(|s| accuracy(s)).collect::<Result<_, _>>().map_err(anyhow::Error::from)?;

    let edges = age_edges(ctx, &m, &rated);
    let strat_h = stratified_report("human", &human_acc.selections, &m, Some(&edges), HUMAN_MARGIN_K)
        .map_err(anyhow::Error::from)?;
    let strat_m =
        stratified_report("model", &model_sets, &m, Some(&edges), MODEL_MARGIN_K).map_err(anyhow::Error::from)?;
    let reasons = &ctx.cfg.evaluation.reasons;
    let breakdown = reason_breakdown(&human_records, &m, reasons).map_err(anyhow::Error::from)?;
    let rows = reason_f1_table(reasons, &human_records, &human_f1.selections, HUMAN_MARGIN_K, &model_sets, MODEL_MARGIN_K);

    let overall = json!({
        "clips": rated.len(),
        "human_responses": human_records.len(),
        "human": {
            "trials": trials,
            "f1": summary(&human_f1.scores, HUMAN_MARGIN_K),
            "accuracy": summary(&human_acc.scores, HUMAN_MARGIN_K),
        },
        "model": {
            "trials": model_sets.len(),
            "f1": summary(&model_f1, MODEL_MARGIN_K),
            "accuracy": summary(&model_acc, MODEL_MARGIN_K),
        },
    });
    write_json(
        &ctx.path("compare.json"),
        &json!({
            "overall": overall,
            "reasons": breakdown,
            "reason_f1": rows,
            "stratified": { "human": strat_h, "model": strat_m },
        }),
    )?;
    write_text(&ctx.path("stratified_human.csv"), &strat_h.to_csv())?;
    write_text(&ctx.path("stratified_model.csv"), &strat_m.to_csv())?;
    let mut report = format!(
        "Overall F1: human {} (3 SD), model {} (2 SD)\nOverall accuracy: human {}, model {}\n\n",
        overall["human"]["f1"]["display"].as_str().unwrap_or(""),
        overall["model"]["f1"]["display"].as_str().unwrap_or(""),
        overall["human"]["accuracy"]["display"].as_str().unwrap_or(""),
        overall["model"]["accuracy"]["display"].as_str().unwrap_or(""),
    );
    report.push_str(&breakdown.to_text(Some(&rows), "Model"));
    report.push('\n');
    report.push_str(&strat_h.to_text());
    report.push('\n');
    report.push_str(&strat_m.to_text());
    write_text(&ctx.path("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn assign(ctx: &Ctx, participants: &[String]) -> Result<()> {
    let m = ctx.manifest()?;
    let seed = ctx.seed("assign")?;
    let assignments = build_assignment(&m, participants, seed).map_err(anyhow::Error::from)?;
    write_json(&ctx.path("assignments.json"), &assignments)?;
    for a in &assignments {
        println!("{}\t{}", a.participant_id, a.token);
    }
    Ok(())
}

fn serve(
    ctx: &Ctx,
    assignments: Option<&Path>,
    store: Option<&Path>,
    addr: Option<&str>,
    static_dir: Option<&Path>,
    admin_token_env: &str,
) -> Result<()> {
    let settings = &ctx.cfg.serve;
    let assignments_path = assignments
        .map(Path::to_path_buf)
        .or_else(|| settings.assignments.clone())
        .unwrap_or_else(|| ctx.path("assignments.json"));
    let assignments_path = existing(&Some(assignments_path), "assignments file")?;
    let text = fs::read_to_string(&assignments_path).with_context(|| format!("reading {}", assignments_path.display()))?;
    let parsed: Vec<Assignment> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", assignments_path.display()))?;
    let store_path =
        store.map(Path::to_path_buf).or_else(|| settings.store.clone()).unwrap_or_else(|| ctx.path("responses.jsonl"));
    let static_dir = static_dir.map(Path::to_path_buf).or_else(|| settings.static_dir.clone());
    if let Some(dir) = &static_dir {
        existing(&Some(dir.clone()), "static asset directory")?;
    }
    let addr: std::net::SocketAddr = addr
        .unwrap_or(&settings.addr)
        .parse()
        .map_err(|e| Failure::Usage(format!("invalid --addr: {e}")))?;
    let admin_token = std::env::var(admin_token_env).unwrap_or_default();
    if admin_token.is_empty() {
        log::warn!("{admin_token_env} is not set; the export endpoint is disabled");
    }

    let m = ctx.manifest()?;
    let store = ResponseStore::open(&store_path).map_err(anyhow::Error::from)?;
    let audio_root = ctx.cfg.paths.audio_root.clone();
    let test = Arc::new(ListeningTest::new(m, parsed, store, audio_root).map_err(anyhow::Error::from)?);
    let http_cfg = HttpConfig { admin_token, static_dir };
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    eprintln!("serving on http://{addr}");
    runtime.block_on(http::serve(test, &http_cfg, addr)).with_context(|| format!("serving on {addr}"))?;
    Ok(())
}
