"""End-to-end learning run shared by the acceptance suite and a cache builder.

The full run (default phantom, 100/50 split, 1000 training epochs) takes
hours of CPU time, so its results are cached on disk keyed by a hash of
every knob that influences the outcome.  The acceptance test calls
``load_or_run()``: on a cache hit it replays the recorded metrics, on a
miss it performs the identical computation inline.  Running this module
as a script builds the cache entry ahead of time:

    python3 tests/acceptance_c4.py
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from pathlib import Path

import numpy as np

from echosynth.datatypes import AcquisitionConfig
from echosynth.kde import fit_kde, predict_kde, select_bandwidth
from echosynth.lrcn import make_model
from echosynth.pca import project
from echosynth.phantom import BreathingParams, ScattererField, gen_dataset
from echosynth.pipeline import (
    align_and_split,
    build_stream,
    make_arch,
    patches_of,
    predict_coeffs,
    prepare_targets,
)
from echosynth.train import TrainConfig, train

DURATION_S = 180.0
SNR_DB = 30.0
N_TRAIN = 100
N_TEST = 50
N_COMPONENTS = 10
MODEL_SEED = 0

# Full-batch training: with 100 samples per step the 1000-epoch budget is
# 1000 Adam updates, which is the only schedule whose wall clock is even
# in the neighborhood of the 30-minute target on one CPU core.  The
# learning rate is raised accordingly (mini-scale sweeps: 1e-3 is far too
# slow at 1000 full-batch steps, 1e-2 saturates the tanh stack and stalls).
TRAIN_CFG = TrainConfig(
    learning_rate=3e-3,
    epochs=1000,
    batch_size=100,
    target_normalization="off",
)

CACHE_DIR = Path(__file__).resolve().parent.parent / ".acceptance_cache"


def config_key() -> str:
    """Hash of every setting that determines the run's numeric results."""
    cfg = AcquisitionConfig()
    arch = make_arch(cfg, n_components=N_COMPONENTS)
    knobs = {
        "acquisition": dataclasses.asdict(cfg),
        "field": dataclasses.asdict(ScattererField()),
        "breathing": dataclasses.asdict(BreathingParams()),
        "duration_s": DURATION_S,
        "snr_db": SNR_DB,
        "split": [N_TRAIN, N_TEST],
        "arch": dataclasses.asdict(arch),
        "model_seed": MODEL_SEED,
        "train": dataclasses.asdict(TRAIN_CFG),
        "n_components": N_COMPONENTS,
        "kde": "loo-cv-bandwidth",
    }
    blob = json.dumps(knobs, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def cache_path() -> Path:
    return CACHE_DIR / f"end_to_end_{config_key()}.json"


def run(progress=None) -> dict:
    """The criterion-4 pipeline; returns JSON-serializable metrics.

    progress, if given, is called with one status string per stage and
    every 25th training epoch.
    """

    def say(msg: str) -> None:
        if progress is not None:
            progress(msg)

    cfg = AcquisitionConfig()
    say(f"rendering phantom recording ({DURATION_S:.0f} s)")
    traces, images = gen_dataset(
        cfg, ScattererField(), BreathingParams(), DURATION_S, snr_db=SNR_DB
    )
    say("computing speed stream")
    stream = build_stream(traces, cfg)
    del traces  # the raw recording is ~1.4 GB; only the stream is needed now
    train_split, test_split, _ = align_and_split(
        stream, images, cfg.patch_len, N_TRAIN, N_TEST
    )
    del images  # the splits hold copies of their frames

    space, targets = prepare_targets(
        train_split.images, N_COMPONENTS, TRAIN_CFG.target_normalization
    )
    test_raw = project(space.pca, test_split.images)  # (n_test, k) float64

    arch = make_arch(cfg, n_components=N_COMPONENTS)
    model = make_model(arch, seed=MODEL_SEED)

    def on_epoch(epoch: int, loss: float) -> None:
        if epoch == 1 or epoch % 25 == 0:
            say(f"epoch {epoch:4d}  loss {loss:.6f}")

    say(f"training: {TRAIN_CFG.epochs} epochs, batch {TRAIN_CFG.batch_size}")
    report = train(
        model, stream.data, train_split.ends, targets, TRAIN_CFG, callback=on_epoch
    )

    say("evaluating on the test split")
    pred = predict_coeffs(model, stream, test_split.ends, space)
    sse_lrcn = float(np.sum((pred - test_raw) ** 2))
    sse_mean = float(np.sum((space.train_target_mean - test_raw) ** 2))

    say("kernel regression baseline (leave-one-out bandwidth selection)")
    train_patches = patches_of(stream, train_split.ends, cfg.patch_len)
    test_patches = patches_of(stream, test_split.ends, cfg.patch_len)
    train_raw = project(space.pca, train_split.images)
    bandwidth, cv_scores = select_bandwidth(train_patches, train_raw)
    kde = fit_kde(train_patches, train_raw, bandwidth=bandwidth)
    pred_kde = predict_kde(kde, test_patches).astype(np.float64)
    sse_kde = float(np.sum((pred_kde - test_raw) ** 2))

    return {
        "key": config_key(),
        "n_train": N_TRAIN,
        "n_test": N_TEST,
        "epochs": TRAIN_CFG.epochs,
        "elapsed_train_s": report.elapsed_s,
        "losses": [float(x) for x in report.losses],
        "sse_lrcn": sse_lrcn,
        "sse_mean_predictor": sse_mean,
        "sse_kde": sse_kde,
        "lrcn_over_mean": sse_lrcn / sse_mean,
        "lrcn_over_kde": sse_lrcn / sse_kde,
        "kde_bandwidth": bandwidth,
        "kde_cv_scores": {f"{h:.6g}": s for h, s in cv_scores.items()},
    }


def load_or_run(progress=None) -> dict:
    path = cache_path()
    if path.exists():
        result = json.loads(path.read_text())
        if result.get("key") == config_key():
            return result
    result = run(progress=progress)
    CACHE_DIR.mkdir(exist_ok=True)
    path.write_text(json.dumps(result, indent=1, sort_keys=True))
    return result


if __name__ == "__main__":
    t0 = time.time()

    def stamp(msg: str) -> None:
        print(f"[{time.time() - t0:8.1f}s] {msg}", flush=True)

    result = load_or_run(progress=stamp)
    stamp(f"cached at {cache_path()}")
    for k in (
        "elapsed_train_s",
        "sse_lrcn",
        "sse_mean_predictor",
        "sse_kde",
        "lrcn_over_mean",
        "lrcn_over_kde",
        "kde_bandwidth",
    ):
        print(f"{k} = {result[k]}")
