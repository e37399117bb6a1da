"""Command-line interface: phantom, train, infer, eval, kde, bench.

Every command writes a manifest next to its outputs with the config
snapshot needed to re-run it.  Runtime failures print a single
"error: ..." line to stderr and exit 1; argparse handles usage errors
with exit 2.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .datatypes import AcquisitionConfig, ImageSeries, TraceSeries
from .evalbench import bench_latency, evaluate, mmode_extract
from .fileio import (
    export_pgm_series,
    read_images,
    read_model,
    read_traces,
    write_csv,
    write_images,
    write_manifest,
    write_metrics,
    write_model,
    write_pgm,
    write_traces,
)
from .kde import fit_kde, predict_kde
from .lrcn import forward_stream, make_model, param_count
from .pca import PcaModel, project, reconstruct
from .phantom import BreathingParams, ScattererField, gen_dataset
from .pipeline import (
    TargetSpace,
    align_and_split,
    build_stream,
    make_arch,
    patches_of,
    predict_coeffs,
    prepare_targets,
)
from .train import TrainConfig, train
from . import plots


def _acquisition_for(traces: TraceSeries, base: AcquisitionConfig | None = None) -> AcquisitionConfig:
    base = base or AcquisitionConfig()
    return replace(
        base,
        fs_hz=traces.fs_hz,
        f0_hz=traces.f0_hz,
        tr_s=traces.tr_s,
        trace_len=traces.trace_len,
    )


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# --------------------------------------------------------------------------
# phantom


def cmd_phantom(args) -> int:
    cfg = AcquisitionConfig(f0_hz=args.f0_hz)
    breathing = BreathingParams(
        period_s=args.breathing_period_s,
        amplitude_mm=args.amplitude_mm,
        drift_mm_per_min=args.drift_mm_per_min,
        period_jitter=args.period_jitter,
        amplitude_jitter=args.amplitude_jitter,
        seed=args.seed,
    )
    field = ScattererField()
    traces, images = gen_dataset(cfg, field, breathing, args.duration_s, snr_db=args.snr_db)

    out = _out_dir(args.out_dir)
    trace_path = out / "traces.ocmt"
    image_path = out / "images.ocmi"
    write_traces(trace_path, traces)
    write_images(image_path, images)
    write_manifest(
        out / "manifest.json",
        command="phantom",
        config={
            "acquisition": asdict(cfg),
            "breathing": asdict(breathing),
            "scatterers": asdict(field),
            "duration_s": args.duration_s,
            "snr_db": args.snr_db,
            "seed": args.seed,
        },
        outputs={"traces": trace_path.name, "images": image_path.name},
    )
    print(f"wrote {traces.n_traces} traces to {trace_path}")
    print(f"wrote {images.n_images} images to {image_path}")
    return 0


# --------------------------------------------------------------------------
# train


def _model_header_extra(
    seed: int,
    cfg: AcquisitionConfig,
    space: TargetSpace,
    tcfg: TrainConfig,
    split: dict,
) -> dict:
    return {
        "seeds": {"init": seed, "train": tcfg.seed},
        "acquisition": asdict(cfg),
        "target_normalization": {
            "mode": space.norm_mode,
            "mean": [float(v) for v in space.norm_mean],
            "scale": [float(v) for v in space.norm_scale],
        },
        "train_target_mean": [float(v) for v in space.train_target_mean],
        "train_config": {
            "epochs": tcfg.epochs,
            "batch_size": tcfg.batch_size,
            "learning_rate": tcfg.learning_rate,
            "beta1": tcfg.beta1,
            "beta2": tcfg.beta2,
            "epsilon": tcfg.epsilon,
        },
        "split": split,
    }


def cmd_train(args) -> int:
    traces = read_traces(args.traces)
    images = read_images(args.images)
    cfg = _acquisition_for(traces)

    t0 = time.perf_counter()
    stream = build_stream(traces, cfg)
    stream_s = time.perf_counter() - t0

    train_side, test_side, alignment = align_and_split(
        stream, images, cfg.patch_len, args.train_pairs, args.test_pairs
    )
    space, targets = prepare_targets(
        train_side.images, args.pca_components, args.target_normalization
    )
    arch = make_arch(cfg, args.pca_components, args.kernel_size, args.dropout_rate)
    model = make_model(arch, seed=args.seed)
    tcfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
        target_normalization=args.target_normalization,
    )

    log_every = max(1, args.log_every)

    def progress(epoch: int, loss: float) -> None:
        if (epoch + 1) % log_every == 0 or epoch == 0:
            print(f"epoch {epoch + 1}/{tcfg.epochs} loss {loss:.6g}", flush=True)

    report = train(model, stream.data, train_side.ends, targets, tcfg, callback=progress)

    model_path = Path(args.out_model)
    if model_path.parent != Path(""):
        model_path.parent.mkdir(parents=True, exist_ok=True)
    split = {
        "n_train": args.train_pairs,
        "n_test": args.test_pairs,
        "train_image_indices": [int(i) for i in train_side.image_indices],
        "test_image_indices": [int(i) for i in test_side.image_indices],
        "n_aligned": len(alignment.pairs),
        "n_dropped": alignment.n_dropped,
    }
    write_model(
        model_path,
        model,
        space.pca,
        extra=_model_header_extra(args.seed, cfg, space, tcfg, split),
    )

    stem = model_path.stem
    out = model_path.parent
    metrics = {
        "command": "train",
        "epochs": tcfg.epochs,
        "final_loss": report.final_loss,
        "loss_curve": [float(v) for v in report.losses],
        "param_count": param_count(arch),
        "seed": args.seed,
        "target_normalization": args.target_normalization,
        "split": {"n_train": args.train_pairs, "n_test": args.test_pairs},
        "timing": {"train_s": report.elapsed_s, "stream_s": stream_s},
    }
    write_metrics(out / f"{stem}_metrics.json", metrics)
    write_csv(
        out / f"{stem}_loss.csv",
        ["epoch", "loss"],
        [(i + 1, float(v)) for i, v in enumerate(report.losses)],
    )
    plots.save_loss_curve(out / f"{stem}_loss.png", report.losses)
    write_manifest(
        out / f"{stem}_manifest.json",
        command="train",
        config={
            "epochs": tcfg.epochs,
            "batch_size": tcfg.batch_size,
            "lr": tcfg.learning_rate,
            "seed": args.seed,
            "kernel_size": args.kernel_size,
            "dropout_rate": args.dropout_rate,
            "pca_components": args.pca_components,
            "target_normalization": args.target_normalization,
            "train_pairs": args.train_pairs,
            "test_pairs": args.test_pairs,
        },
        inputs={"traces": str(args.traces), "images": str(args.images)},
        outputs={
            "model": model_path.name,
            "metrics": f"{stem}_metrics.json",
            "loss_csv": f"{stem}_loss.csv",
            "loss_png": f"{stem}_loss.png",
        },
    )
    print(
        f"trained {param_count(arch)} parameters for {tcfg.epochs} epochs, "
        f"final loss {report.final_loss:.6g}"
    )
    print(f"wrote model to {model_path}")
    return 0


# --------------------------------------------------------------------------
# infer


def _space_from_header(pca: PcaModel, header: dict) -> TargetSpace:
    tn = header["target_normalization"]
    return TargetSpace(
        pca=pca,
        norm_mode=tn["mode"],
        norm_mean=np.asarray(tn["mean"], dtype=np.float64),
        norm_scale=np.asarray(tn["scale"], dtype=np.float64),
        train_target_mean=np.asarray(header["train_target_mean"], dtype=np.float64),
    )


def _check_compatible(traces: TraceSeries, header: dict) -> AcquisitionConfig:
    acq = header["acquisition"]
    for field, value in (
        ("fs_hz", traces.fs_hz),
        ("f0_hz", traces.f0_hz),
        ("tr_s", traces.tr_s),
        ("trace_len", traces.trace_len),
    ):
        if acq[field] != value:
            raise ValueError(
                f"trace metadata incompatible with model: {field} is {value}, "
                f"model expects {acq[field]}"
            )
    return AcquisitionConfig(**acq)


def cmd_infer(args) -> int:
    bundle = read_model(args.model)
    traces = read_traces(args.traces)
    cfg = _check_compatible(traces, bundle.header)
    if args.every < 1:
        raise ValueError("--every must be >= 1")

    stream = build_stream(traces, cfg)
    ends = np.arange(cfg.patch_len - 1, traces.n_traces, args.every, dtype=np.int64)
    if ends.size == 0:
        raise ValueError(
            f"trace series too short: need at least {cfg.patch_len} traces "
            f"for one patch, found {traces.n_traces}"
        )
    space = _space_from_header(bundle.pca, bundle.header)

    t0 = time.perf_counter()
    coeffs = predict_coeffs(bundle.model, stream, ends, space)
    infer_s = time.perf_counter() - t0

    frames = reconstruct(bundle.pca, coeffs).astype(np.float32)
    timestamps = traces.t0_s + ends.astype(np.float64) * traces.tr_s
    series = ImageSeries(data=frames, timestamps=timestamps)
    out_path = Path(args.out)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    write_images(out_path, series)

    outputs = {"images": out_path.name}
    if args.coeff_csv:
        k = coeffs.shape[1]
        write_csv(
            args.coeff_csv,
            ["frame", "end_trace_index", "time_s"] + [f"c{i}" for i in range(k)],
            [
                (i, int(ends[i]), float(timestamps[i]), *[float(v) for v in coeffs[i]])
                for i in range(ends.size)
            ],
        )
        outputs["coeff_csv"] = str(args.coeff_csv)
    write_manifest(
        str(out_path) + ".manifest.json",
        command="infer",
        config={"every": args.every},
        inputs={"model": str(args.model), "traces": str(args.traces)},
        outputs=outputs,
        extra={"timing": {"infer_s": infer_s}, "n_frames": int(ends.size)},
    )
    print(f"wrote {ends.size} frames to {out_path}")
    return 0


# --------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    bundle = read_model(args.model)
    traces = read_traces(args.traces)
    images = read_images(args.images)
    cfg = _check_compatible(traces, bundle.header)
    split = bundle.header["split"]

    stream = build_stream(traces, cfg)
    train_side, test_side, _ = align_and_split(
        stream, images, cfg.patch_len, split["n_train"], split["n_test"]
    )
    space = _space_from_header(bundle.pca, bundle.header)
    true_coeffs = project(bundle.pca, test_side.images)

    t0 = time.perf_counter()
    lrcn_coeffs = predict_coeffs(bundle.model, stream, test_side.ends, space)
    lrcn_s = time.perf_counter() - t0
    predictions = {
        "lrcn": lrcn_coeffs,
        "baseline": np.tile(space.train_target_mean, (test_side.ends.size, 1)),
    }
    timing = {"lrcn_s": lrcn_s}
    if args.kde:
        train_patches = patches_of(stream, train_side.ends, cfg.patch_len)
        train_targets = project(bundle.pca, train_side.images)
        t0 = time.perf_counter()
        kmodel = fit_kde(train_patches, train_targets, bandwidth=args.bandwidth, seed=args.seed)
        test_patches = patches_of(stream, test_side.ends, cfg.patch_len)
        predictions["kde"] = predict_kde(kmodel, test_patches)
        timing["kde_s"] = time.perf_counter() - t0

    metrics = evaluate(bundle.pca, true_coeffs, test_side.images, predictions)
    metrics["command"] = "eval"
    metrics["split"] = {"n_train": split["n_train"], "n_test": split["n_test"]}
    metrics["timing"] = timing

    out = _out_dir(args.out_dir)
    write_metrics(out / "metrics.json", metrics)

    rows = []
    for name, m in metrics["methods"].items():
        for i, (si, sr, sc) in enumerate(
            zip(
                m["sse_image"]["per_image"],
                m["sse_image_raw"]["per_image"],
                m["sse_coeff"]["per_image"],
            )
        ):
            rows.append((i, name, si, sr, sc))
    write_csv(
        out / "sse.csv",
        ["image_index", "method", "sse_image", "sse_image_raw", "sse_coeff"],
        rows,
    )
    plots.save_sse_comparison(
        out / "sse.png",
        {
            name: np.asarray(m["sse_image"]["per_image"])
            for name, m in metrics["methods"].items()
        },
    )

    # M-mode strips and difference images
    col = args.mmode_column if args.mmode_column is not None else images.image_shape[1] // 2
    truth_pca = reconstruct(bundle.pca, true_coeffs)
    recon = {name: reconstruct(bundle.pca, c) for name, c in predictions.items()}
    strips = {"truth_raw": mmode_extract(test_side.images, col)}
    strips["truth_pca"] = mmode_extract(truth_pca, col)
    for name in predictions:
        strips[name] = mmode_extract(recon[name], col)
    plots.save_mmode(out / "mmode.png", strips)

    pgm_dir = out / "pgm"
    pgm_records: dict[str, object] = {}
    pgm_dir.mkdir(exist_ok=True)
    for name, strip in strips.items():
        lo, hi = write_pgm(pgm_dir / f"mmode_{name}.pgm", strip)
        pgm_records[f"mmode_{name}"] = {"path": f"mmode_{name}.pgm", "min": lo, "max": hi}
    pgm_records["diff_lrcn"] = export_pgm_series(
        pgm_dir, "diff_lrcn", recon["lrcn"] - truth_pca
    )

    write_manifest(
        out / "manifest.json",
        command="eval",
        config={
            "kde": bool(args.kde),
            "bandwidth": args.bandwidth,
            "mmode_column": col,
            "seed": args.seed,
        },
        inputs={
            "model": str(args.model),
            "traces": str(args.traces),
            "images": str(args.images),
        },
        outputs={
            "metrics": "metrics.json",
            "sse_csv": "sse.csv",
            "sse_png": "sse.png",
            "mmode_png": "mmode.png",
            "pgm": pgm_records,
        },
    )
    lm = metrics["methods"]["lrcn"]["sse_image"]["mean"]
    bm = metrics["methods"]["baseline"]["sse_image"]["mean"]
    print(f"lrcn mean SSE {lm:.6g} vs baseline {bm:.6g} over {metrics['n_test']} images")
    if args.kde:
        km = metrics["methods"]["kde"]["sse_image"]["mean"]
        print(f"kde mean SSE {km:.6g}")
    return 0


# --------------------------------------------------------------------------
# kde


def cmd_kde(args) -> int:
    traces = read_traces(args.traces)
    images = read_images(args.images)
    cfg = _acquisition_for(traces)

    stream = build_stream(traces, cfg)
    train_side, test_side, _ = align_and_split(
        stream, images, cfg.patch_len, args.train_pairs, args.test_pairs
    )
    space, _ = prepare_targets(train_side.images, args.pca_components, "off")
    train_targets = project(space.pca, train_side.images)
    train_patches = patches_of(stream, train_side.ends, cfg.patch_len)
    kmodel = fit_kde(train_patches, train_targets, bandwidth=args.bandwidth, seed=args.seed)

    if args.queries == "train":
        q_side, q_targets = train_side, train_targets
    else:
        q_side = test_side
        q_targets = project(space.pca, test_side.images)
    query_patches = patches_of(stream, q_side.ends, cfg.patch_len)
    t0 = time.perf_counter()
    pred = predict_kde(kmodel, query_patches)
    predict_s = time.perf_counter() - t0

    predictions = {
        "kde": pred,
        "baseline": np.tile(space.train_target_mean, (q_side.ends.size, 1)),
    }
    metrics = evaluate(space.pca, q_targets, q_side.images, predictions)
    metrics["command"] = "kde"
    metrics["bandwidth"] = kmodel.bandwidth
    metrics["queries"] = args.queries
    metrics["timing"] = {"predict_s": predict_s}

    out = _out_dir(args.out_dir)
    write_metrics(out / "metrics.json", metrics)
    write_manifest(
        out / "manifest.json",
        command="kde",
        config={
            "bandwidth": args.bandwidth,
            "seed": args.seed,
            "train_pairs": args.train_pairs,
            "test_pairs": args.test_pairs,
            "pca_components": args.pca_components,
            "queries": args.queries,
        },
        inputs={"traces": str(args.traces), "images": str(args.images)},
        outputs={"metrics": "metrics.json"},
        extra={"fitted_bandwidth": kmodel.bandwidth},
    )
    km = metrics["methods"]["kde"]["sse_image"]["mean"]
    print(
        f"kde mean SSE {km:.6g} over {metrics['n_test']} {args.queries} queries "
        f"(bandwidth {kmodel.bandwidth:.6g})"
    )
    return 0


# --------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    cfg = AcquisitionConfig()
    arch = make_arch(cfg, args.pca_components, args.kernel_size)
    model = make_model(arch, seed=args.seed)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))

    p = cfg.image_size * cfg.image_size
    k = args.pca_components
    basis = np.linalg.qr(rng.standard_normal((p, k)))[0].T
    pca = PcaModel(
        mean=np.zeros(p),
        components=np.ascontiguousarray(basis),
        variances=np.linspace(float(k), 1.0, k),
        image_shape=(cfg.image_size, cfg.image_size),
    )

    n_max = max(args.n_list)
    features = rng.standard_normal((n_max, arch.input_d, arch.input_n)).astype(np.float32)
    targets = rng.standard_normal((n_max, k))
    queries = list(
        rng.standard_normal((args.queries, arch.input_d, arch.input_n)).astype(np.float32)
    )
    end = np.asarray([arch.input_n - 1], dtype=np.int64)

    def lrcn_predict(q: np.ndarray) -> np.ndarray:
        y, _ = forward_stream(model, q, end, mode="infer", keep_tape=False)
        return reconstruct(pca, y[0])

    def make_predictors(n: int) -> dict:
        kmodel = fit_kde(features[:n], targets[:n], seed=args.seed)

        def kde_predict(q: np.ndarray) -> np.ndarray:
            return reconstruct(pca, predict_kde(kmodel, q))

        return {"lrcn": lrcn_predict, "kde": kde_predict}

    report = bench_latency(
        make_predictors, args.n_list, queries, reps=args.reps, warmup=args.warmup
    )
    report["command"] = "bench"
    report["config"] = {
        "seed": args.seed,
        "kernel_size": args.kernel_size,
        "pca_components": args.pca_components,
    }

    out = _out_dir(args.out_dir)
    write_metrics(out / "metrics.json", report)
    rows = []
    for name, entry in report["methods"].items():
        for row in entry["per_n"]:
            rows.append((name, row["n"], row["mean_s"], row["p50_s"], row["p95_s"]))
    write_csv(out / "timing.csv", ["method", "n", "mean_s", "p50_s", "p95_s"], rows)
    plots.save_timing_sweep(out / "timing.png", report)
    write_manifest(
        out / "manifest.json",
        command="bench",
        config={
            "n_list": args.n_list,
            "queries": args.queries,
            "reps": args.reps,
            "warmup": args.warmup,
            "seed": args.seed,
        },
        outputs={"metrics": "metrics.json", "timing_csv": "timing.csv", "timing_png": "timing.png"},
    )
    kde_fit = report["methods"]["kde"]["fit"]
    lrcn_spread = report["methods"]["lrcn"]["spread"]
    print(
        f"kde slope {kde_fit['slope_s_per_sample']:.3e} s/sample "
        f"(r2 {kde_fit['r_squared']:.4f}); lrcn spread {lrcn_spread:.4f}"
    )
    return 0


# --------------------------------------------------------------------------
# parser


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid integer list {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty integer list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="echosynth",
        description="Synthesize MR-like images from single-element ultrasound traces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="render a synthetic breathing recording")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration-s", type=float, default=180.0)
    p.add_argument("--f0-hz", type=float, default=1e6)
    p.add_argument("--breathing-period-s", type=float, default=4.0)
    p.add_argument("--amplitude-mm", type=float, default=5.0)
    p.add_argument("--drift-mm-per-min", type=float, default=0.1)
    p.add_argument("--period-jitter", type=float, default=0.05)
    p.add_argument("--amplitude-jitter", type=float, default=0.05)
    p.add_argument("--snr-db", type=float, default=30.0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="fit the network on a trace/image recording")
    p.add_argument("--traces", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel-size", type=int, default=9)
    p.add_argument("--dropout-rate", type=float, default=0.2)
    p.add_argument("--pca-components", type=int, default=10)
    p.add_argument(
        "--target-normalization", choices=("off", "per-component"), default="off"
    )
    p.add_argument("--train-pairs", type=int, default=100)
    p.add_argument("--test-pairs", type=int, default=50)
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="reconstruct images from traces with a model")
    p.add_argument("--model", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--every", type=int, default=1)
    p.add_argument("--coeff-csv", default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a model against ground-truth images")
    p.add_argument("--model", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--kde", action="store_true", help="include the kernel baseline")
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--mmode-column", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("kde", help="fit and score the kernel regression baseline")
    p.add_argument("--traces", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-pairs", type=int, default=100)
    p.add_argument("--test-pairs", type=int, default=50)
    p.add_argument("--pca-components", type=int, default=10)
    p.add_argument("--queries", choices=("test", "train"), default="test")
    p.set_defaults(func=cmd_kde)

    p = sub.add_parser("bench", help="per-query latency sweep over database sizes")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-list", type=_int_list, default=[100, 200, 400, 800])
    p.add_argument("--queries", type=int, default=30)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel-size", type=int, default=9)
    p.add_argument("--pca-components", type=int, default=10)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
