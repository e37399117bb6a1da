"""Bit-exact file formats: traces, images, models, metrics, PGM export.

All binary formats are little-endian with a 4-byte ASCII magic and a
version byte, so files are self-describing and byte-identical across
runs for identical inputs.  Metrics are JSON with sorted keys; every
wall-clock quantity lives under a key named "timing" so determinism
comparisons can strip it with strip_timing.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .datatypes import ImageSeries, TraceSeries
from .lrcn import ArchSpec, LrcnModel, param_count
from .pca import PcaModel

TRACE_MAGIC = b"OCMT"
IMAGE_MAGIC = b"OCMI"
MODEL_MAGIC = b"OCMM"
FORMAT_VERSION = 1


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated file: expected {n} bytes of {what}")
    return buf


def _check_magic(f, magic: bytes, kind: str) -> None:
    got = _read_exact(f, 4, "magic")
    if got != magic:
        article = "an" if kind[0] in "aeiou" else "a"
        raise ValueError(f"not {article} {kind} file (magic {got!r})")
    version = _read_exact(f, 1, "version")[0]
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported {kind} version {version}")


# --------------------------------------------------------------------------
# Traces.


def write_traces(path, series: TraceSeries) -> None:
    data = np.ascontiguousarray(series.data, dtype="<f4")
    with open(path, "wb") as f:
        f.write(TRACE_MAGIC)
        f.write(struct.pack("<B", FORMAT_VERSION))
        f.write(struct.pack("<II", series.n_traces, series.trace_len))
        f.write(struct.pack("<dddd", series.fs_hz, series.f0_hz, series.tr_s, series.t0_s))
        f.write(data.tobytes())


def read_traces(path) -> TraceSeries:
    with open(path, "rb") as f:
        _check_magic(f, TRACE_MAGIC, "trace")
        n, samples = struct.unpack("<II", _read_exact(f, 8, "trace counts"))
        fs, f0, tr, t0 = struct.unpack("<dddd", _read_exact(f, 32, "trace header"))
        payload = _read_exact(f, 4 * n * samples, "trace payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(n, samples)
    return TraceSeries(data=data, fs_hz=fs, f0_hz=f0, tr_s=tr, t0_s=t0)


# --------------------------------------------------------------------------
# Images.


def write_images(path, series: ImageSeries) -> None:
    data = np.ascontiguousarray(series.data, dtype="<f4")
    stamps = np.ascontiguousarray(series.timestamps, dtype="<f8")
    n, h, w = data.shape
    with open(path, "wb") as f:
        f.write(IMAGE_MAGIC)
        f.write(struct.pack("<B", FORMAT_VERSION))
        f.write(struct.pack("<III", n, h, w))
        f.write(stamps.tobytes())
        f.write(data.tobytes())


def read_images(path) -> ImageSeries:
    with open(path, "rb") as f:
        _check_magic(f, IMAGE_MAGIC, "image")
        n, h, w = struct.unpack("<III", _read_exact(f, 12, "image counts"))
        stamps = np.frombuffer(_read_exact(f, 8 * n, "timestamps"), dtype="<f8")
        payload = _read_exact(f, 4 * n * h * w, "image payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(n, h, w)
    return ImageSeries(data=data, timestamps=stamps)


# --------------------------------------------------------------------------
# Model bundle: PCA + network in one file.


@dataclass
class ModelBundle:
    model: LrcnModel
    pca: PcaModel
    header: dict


def write_model(path, model: LrcnModel, pca: PcaModel, extra: dict | None = None) -> None:
    """Serialize the network and its frozen PCA with a JSON header.

    extra entries (seeds, acquisition snapshot, training config, target
    normalization) are merged into the header and round-trip untouched.
    """
    arch = model.arch
    header = {
        "arch": {
            "input_d": arch.input_d,
            "input_n": arch.input_n,
            "conv_channels": list(arch.conv_channels),
            "kernel_size": arch.kernel_size,
            "lstm_units": list(arch.lstm_units),
            "output_dim": arch.output_dim,
            "dropout_rate": arch.dropout_rate,
        },
        "param_count": param_count(arch),
        "pca": {
            "n_components": int(pca.n_components),
            "feature_len": int(pca.n_features),
            "image_shape": list(pca.image_shape) if pca.image_shape else None,
            "degenerate": bool(pca.degenerate),
        },
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<B", FORMAT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(np.ascontiguousarray(pca.mean, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(pca.components, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(pca.variances, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(model.params, dtype="<f4").tobytes())


def read_model(path) -> ModelBundle:
    with open(path, "rb") as f:
        _check_magic(f, MODEL_MAGIC, "model")
        (header_len,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        header = json.loads(_read_exact(f, header_len, "header").decode("utf-8"))
        a = header["arch"]
        arch = ArchSpec(
            input_d=a["input_d"],
            input_n=a["input_n"],
            conv_channels=tuple(a["conv_channels"]),
            kernel_size=a["kernel_size"],
            lstm_units=tuple(a["lstm_units"]),
            output_dim=a["output_dim"],
            dropout_rate=a["dropout_rate"],
        )
        k = header["pca"]["n_components"]
        p = header["pca"]["feature_len"]
        mean = np.frombuffer(_read_exact(f, 4 * p, "pca mean"), dtype="<f4")
        comps = np.frombuffer(_read_exact(f, 4 * k * p, "pca basis"), dtype="<f4")
        variances = np.frombuffer(_read_exact(f, 4 * k, "pca variances"), dtype="<f4")
        n_params = param_count(arch)
        if header["param_count"] != n_params:
            raise ValueError(
                f"header param_count {header['param_count']} does not match "
                f"the architecture ({n_params})"
            )
        params = np.frombuffer(_read_exact(f, 4 * n_params, "parameters"), dtype="<f4")
    shape = header["pca"]["image_shape"]
    pca = PcaModel(
        mean=mean,
        components=comps.reshape(k, p),
        variances=variances,
        image_shape=tuple(shape) if shape else None,
        degenerate=bool(header["pca"]["degenerate"]),
    )
    model = LrcnModel(arch=arch, params=params.copy())
    return ModelBundle(model=model, pca=pca, header=header)


# --------------------------------------------------------------------------
# Metrics JSON and manifests.


def write_metrics(path, metrics: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(metrics, f, sort_keys=True, indent=2)
        f.write("\n")


def read_metrics(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def strip_timing(obj):
    """Copy of a JSON-able object with every 'timing' key removed."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k != "timing"}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def write_manifest(
    path,
    command: str,
    config: dict,
    inputs: dict | None = None,
    outputs: dict | None = None,
    extra: dict | None = None,
) -> dict:
    """Run manifest: enough to re-run the command (timing aside)."""
    from . import __version__

    manifest = {
        "command": command,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "config": config,
        "inputs": inputs or {},
        "outputs": outputs or {},
    }
    if extra:
        manifest.update(extra)
    write_metrics(path, manifest)
    return manifest


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


# --------------------------------------------------------------------------
# PGM export.


def write_pgm(path, image: np.ndarray) -> tuple[float, float]:
    """8-bit binary PGM, min-max normalized; returns the (lo, hi) range."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("PGM export expects a single 2-D image")
    lo, hi = float(image.min()), float(image.max())
    if hi > lo:
        scaled = np.rint((image - lo) * (255.0 / (hi - lo)))
    else:
        scaled = np.zeros_like(image)
    data = scaled.astype(np.uint8)
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())
    return lo, hi


def read_pgm(path) -> np.ndarray:
    """Read back a binary 8-bit PGM written by write_pgm."""
    with open(path, "rb") as f:
        blob = f.read()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise ValueError("not an 8-bit binary PGM produced by this tool")
    w, h = (int(v) for v in parts[1].split())
    data = np.frombuffer(parts[3][: w * h], dtype=np.uint8)
    if data.size != w * h:
        raise ValueError("truncated PGM payload")
    return data.reshape(h, w)


def export_pgm_series(out_dir, stem: str, images: np.ndarray) -> list[dict]:
    """Write one PGM per frame; returns per-frame path and value range."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, frame in enumerate(np.asarray(images)):
        path = out_dir / f"{stem}_{i:04d}.pgm"
        lo, hi = write_pgm(path, frame)
        records.append({"path": path.name, "min": lo, "max": hi})
    return records
