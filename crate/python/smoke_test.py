"""Smoke test for the speechbench Python extension.

Build the module first, e.g. `maturin develop -m crates/py/Cargo.toml --features extension-module`,
or copy the cdylib (libspeechbench_py.so) from `cargo build -p speechbench-py --features extension-module`
onto PYTHONPATH as speechbench.so.
"""

import math
import tempfile
from pathlib import Path

import speechbench as sb


def check_waveform(tmp: Path) -> None:
    rate = sb.CANONICAL_RATE
    tone = [0.5 * math.sin(2 * math.pi * 440 * n / rate) for n in range(rate)]
    wave = sb.Waveform(tone, rate)
    assert len(wave) == rate and abs(wave.duration - 1.0) < 1e-9
    assert abs(wave.rms() - 0.5 / math.sqrt(2)) < 1e-3
    path = tmp / "tone.wav"
    wave.save(path)
    assert len(sb.Waveform.load(path)) == rate

    noise = sb.Waveform([0.1 * ((n * 7919) % 13 - 6) / 6 for n in range(rate // 2)], rate)
    cfg = {"per_augmentation_probability": 1.0}
    a, info = sb.augment(wave, seed=3, noise_bank=[noise], config=cfg)
    b, again = sb.augment(wave, seed=3, noise_bank=[noise], config=cfg)
    assert a.samples == b.samples and info == again
    assert len(a) == len(wave) and info["noise"] is not None


def check_pipeline(tmp: Path) -> None:
    spec = {"train_subjects": 10, "test_subjects": 6, "dim": 8, "separation": 3.0}
    manifest = sb.synth_data(tmp / "data", seed=11, spec=spec)
    test_ids = manifest.clip_ids("test")
    assert len(test_ids) == 60 and len(manifest) == 160
    assert manifest.status_of(test_ids[0]) in ("PD", "HC")

    model = sb.Model.train(
        manifest, tmp / "data" / "embeddings", seed=5,
        train={"epochs": 3}, head={"hidden": 16, "adam": {"learning_rate": 1e-3}},
    )
    assert len(model.history) == 3
    records = model.predict(manifest, tmp / "data" / "embeddings")
    assert [r["clip_id"] for r in records] == test_ids
    acc = sb.accuracy(records)
    assert acc > 0.8, acc

    model.save(tmp / "head.ckpt")
    reloaded = sb.Model.load(tmp / "head.ckpt")
    # Checkpoints store f32 weights.
    for r, q in zip(records, reloaded.predict(manifest, tmp / "data" / "embeddings")):
        assert abs(r["logit"] - q["logit"]) < 1e-4

    human = [dict(r, source="human", logit=None, participant_id=p) for r in records for p in ("a", "b")]
    report = sb.human_resample(human, trials=6, seed=2, metric="accuracy")
    assert len(report["scores"]) == 6 and report["mean"] == acc
    assert sb.mean_margin([0.7, 0.8], 2.0) == "75.0±14.1"

    tokens = {a["token"] for a in sb.build_assignment(manifest, ["p1", "p2"], seed=9)}
    assert len(tokens) == 2
    print(f"ok: test accuracy {acc:.3f}, F1 {sb.f1(records)}")


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as d:
        check_waveform(Path(d))
        check_pipeline(Path(d))
