"""Shared plumbing between the CLI commands and the test harness.

Covers the path from raw traces to training-ready arrays: speed stream,
trace/image alignment, train/test split, PCA target preparation with
optional normalization, and batched coefficient prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datatypes import AcquisitionConfig, AlignmentResult, ImageSeries, TraceSeries
from .lrcn import ArchSpec, LrcnModel, encode_stream, predict_from_encodings
from .pca import PcaModel, fit_pca, project
from .sigproc import align_pairs, compute_speed_stream
from .train import compute_target_norm

PREDICT_BATCH = 256


def build_stream(traces: TraceSeries, cfg: AcquisitionConfig):
    """Doppler speed stream for a trace series (metadata taken from it)."""
    return compute_speed_stream(traces, cfg)


def make_arch(
    cfg: AcquisitionConfig,
    n_components: int = 10,
    kernel_size: int = 9,
    dropout_rate: float = 0.2,
) -> ArchSpec:
    return ArchSpec(
        input_d=cfg.depth_bins,
        input_n=cfg.patch_len,
        kernel_size=kernel_size,
        output_dim=n_components,
        dropout_rate=dropout_rate,
    )


@dataclass(frozen=True)
class SplitData:
    """One side of the split, as parallel arrays over aligned pairs."""

    ends: np.ndarray  # (m,) window end trace indices
    image_indices: np.ndarray  # (m,) indices into the image series
    images: np.ndarray  # (m, H, W)


def split_alignment(
    alignment: AlignmentResult,
    images: ImageSeries,
    n_train: int,
    n_test: int,
) -> tuple[SplitData, SplitData]:
    """First n_train aligned pairs train, the next n_test test."""
    pairs = alignment.pairs
    if len(pairs) < n_train + n_test:
        raise ValueError(
            f"need {n_train + n_test} aligned pairs, found {len(pairs)} "
            f"({alignment.n_dropped} dropped for insufficient history)"
        )

    def side(sel) -> SplitData:
        ends = np.asarray([p.patch.end_trace_index for p in sel], dtype=np.int64)
        idx = np.asarray([p.image_index for p in sel], dtype=np.int64)
        return SplitData(ends=ends, image_indices=idx, images=images.data[idx])

    return side(pairs[:n_train]), side(pairs[n_train : n_train + n_test])


def align_and_split(
    stream,
    images: ImageSeries,
    patch_len: int,
    n_train: int,
    n_test: int,
) -> tuple[SplitData, SplitData, AlignmentResult]:
    alignment = align_pairs(stream, images, patch_len)
    train, test = split_alignment(alignment, images, n_train, n_test)
    return train, test, alignment


def patches_of(stream, ends: np.ndarray, patch_len: int) -> np.ndarray:
    """Stack the (d, patch_len) windows ending at each index: (m, d, n)."""
    idx = np.asarray(ends, dtype=np.int64)
    return np.stack(
        [stream.data[:, e - patch_len + 1 : e + 1] for e in idx], axis=0
    )


@dataclass(frozen=True)
class TargetSpace:
    """Frozen PCA plus the normalization applied to its coefficients."""

    pca: PcaModel
    norm_mode: str
    norm_mean: np.ndarray  # (k,)
    norm_scale: np.ndarray  # (k,)
    train_target_mean: np.ndarray  # (k,) mean raw train coefficient vector

    def normalize(self, coeffs: np.ndarray) -> np.ndarray:
        return (coeffs - self.norm_mean) / self.norm_scale

    def denormalize(self, outputs: np.ndarray) -> np.ndarray:
        return outputs * self.norm_scale + self.norm_mean


def prepare_targets(
    train_images: np.ndarray,
    n_components: int,
    norm_mode: str,
) -> tuple[TargetSpace, np.ndarray]:
    """Fit PCA on the training images; returns the space and the
    normalized (m, k) training targets."""
    pca = fit_pca(train_images, n_components)
    raw = project(pca, train_images)
    mean, scale = compute_target_norm(raw, norm_mode)
    space = TargetSpace(
        pca=pca,
        norm_mode=norm_mode,
        norm_mean=mean,
        norm_scale=scale,
        train_target_mean=raw.mean(axis=0, dtype=np.float64),
    )
    return space, space.normalize(raw)


def predict_coeffs(
    model: LrcnModel,
    stream,
    ends: np.ndarray,
    space: TargetSpace | None = None,
    batch: int = PREDICT_BATCH,
) -> np.ndarray:
    """Denormalized (m, k) coefficient predictions for window ends.

    The conv encodings are computed once over the stream; the recurrent
    head runs in batches to bound the gathered-window memory.
    """
    ends = np.asarray(ends, dtype=np.int64)
    enc = encode_stream(model, stream.data)
    outs = []
    for b0 in range(0, ends.size, batch):
        outs.append(predict_from_encodings(model, enc, ends[b0 : b0 + batch]))
    raw = np.concatenate(outs, axis=0).astype(np.float64)
    return space.denormalize(raw) if space is not None else raw
