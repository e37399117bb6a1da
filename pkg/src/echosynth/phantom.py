"""Deterministic synthetic respiratory phantom.

A small set of point scatterers sits at fixed depths; a quasi-periodic
breathing waveform displaces each one along the beam axis with its own
motion gain.  The same waveform drives both the rendered A-mode traces
and the rendered images, so trace/image pairs are consistent by
construction.  All randomness (cycle jitter, additive trace noise) is
derived from a single seed.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .datatypes import (
    SPEED_OF_SOUND_MM_S,
    AcquisitionConfig,
    ImageSeries,
    TraceSeries,
)

# Gabor echo pulse: Gaussian envelope over a carrier at f0.  Sigma is
# expressed in carrier wavelengths; the pulse is evaluated out to 4 sigma.
GABOR_SIGMA_WAVELENGTHS = 2.0
GABOR_SUPPORT_SIGMAS = 4.0

# Image blobs: row extent in pixels, column extent as a fraction of width.
BLOB_SIGMA_ROWS_PX = 2.5
BLOB_SIGMA_COLS_FRAC = 0.06

# Jitter draws are clipped at this many standard deviations so extreme
# draws cannot produce non-positive cycle periods or amplitudes.
JITTER_CLIP_SIGMAS = 2.5

_RENDER_CHUNK = 512


@dataclass(frozen=True)
class BreathingParams:
    """Quasi-periodic breathing: jittered sine plus a slow linear drift."""

    period_s: float = 4.0
    amplitude_mm: float = 5.0
    drift_mm_per_min: float = 0.1
    period_jitter: float = 0.05
    amplitude_jitter: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.period_s <= 0:
            raise ValueError("period_s must be positive")
        if self.amplitude_mm < 0:
            raise ValueError("amplitude_mm must be non-negative")
        if not (0 <= self.period_jitter < 0.4 / JITTER_CLIP_SIGMAS):
            raise ValueError("period_jitter out of range")
        if not (0 <= self.amplitude_jitter < 0.4 / JITTER_CLIP_SIGMAS):
            raise ValueError("amplitude_jitter out of range")


def _layered_depths() -> tuple[float, ...]:
    return tuple(9.0 + 2.0 * k for k in range(26))


def _layered_reflectivities() -> tuple[float, ...]:
    # Deterministic smooth variation so layers differ in echo strength.
    return tuple(0.55 + 0.45 * math.cos(2.0 * math.pi * k / 9.0) ** 2 for k in range(26))


def _layered_gains() -> tuple[float, ...]:
    # Superficial layers are fixed to the probe; coupling to the breathing
    # displacement ramps up smoothly with depth until the organ moves rigidly.
    out = []
    for d in _layered_depths():
        x = min(max((d - 12.0) / (45.0 - 12.0), 0.0), 1.0)
        out.append(x * x * (3.0 - 2.0 * x))
    return tuple(out)


@dataclass(frozen=True)
class ScattererField:
    """Point scatterers: depth at rest, echo strength, motion coupling.

    The default is a dense layered medium: 26 scatterers every 2 mm from
    9 to 59 mm, spanning the depth window analysed by the preprocessing
    crop, with motion coupling ramping from 0 (superficial, fixed to the
    probe) to 1 (deep organ following the full breathing displacement).
    Dense coverage keeps echo energy in every depth bin so phase-derived
    speeds are signal-dominated rather than noise-dominated.
    """

    depths_mm: tuple[float, ...] = dataclasses.field(default_factory=_layered_depths)
    reflectivities: tuple[float, ...] = dataclasses.field(default_factory=_layered_reflectivities)
    motion_gains: tuple[float, ...] = dataclasses.field(default_factory=_layered_gains)

    def __post_init__(self) -> None:
        n = len(self.depths_mm)
        if len(self.reflectivities) != n or len(self.motion_gains) != n:
            raise ValueError("scatterer attribute tuples must have equal length")
        if any(d <= 0 for d in self.depths_mm):
            raise ValueError("depths must be positive")

    @property
    def n_scatterers(self) -> int:
        return len(self.depths_mm)


def _breathing_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))


def gen_breathing(params: BreathingParams, times_s: np.ndarray) -> np.ndarray:
    """Scatterer displacement in mm at the given times (float64).

    The waveform is amplitude * sin(phi(t)) + drift * t / 60 where the
    instantaneous frequency is linearly interpolated between one jittered
    knot per nominal cycle and integrated in closed form, so the result
    is C1-smooth and independent of the evaluation grid.  With both
    jitters at zero it reduces exactly to a sine started at zero phase.
    """
    times = np.asarray(times_s, dtype=np.float64)
    if times.ndim != 1:
        raise ValueError("times must be 1-D")
    if times.size == 0:
        return np.zeros(0, dtype=np.float64)
    if np.any(times < 0):
        raise ValueError("times must be non-negative")

    t_max = float(times[-1])
    n_knots = int(np.ceil(t_max / params.period_s)) + 2
    rng = _breathing_rng(params.seed, 0)
    period_draws = np.clip(
        rng.standard_normal(n_knots), -JITTER_CLIP_SIGMAS, JITTER_CLIP_SIGMAS
    )
    amp_draws = np.clip(
        rng.standard_normal(n_knots), -JITTER_CLIP_SIGMAS, JITTER_CLIP_SIGMAS
    )
    knot_t = params.period_s * np.arange(n_knots, dtype=np.float64)
    knot_f = 1.0 / (params.period_s * (1.0 + params.period_jitter * period_draws))
    knot_a = params.amplitude_mm * (1.0 + params.amplitude_jitter * amp_draws)

    # Closed-form phase: piecewise-quadratic integral of the piecewise-
    # linear instantaneous frequency.
    seg_len = np.diff(knot_t)
    seg_phase = 2.0 * np.pi * 0.5 * (knot_f[:-1] + knot_f[1:]) * seg_len
    knot_phase = np.concatenate([[0.0], np.cumsum(seg_phase)])

    seg = np.clip(np.searchsorted(knot_t, times, side="right") - 1, 0, n_knots - 2)
    tau = times - knot_t[seg]
    delta = seg_len[seg]
    f0 = knot_f[seg]
    f1 = knot_f[seg + 1]
    phase = knot_phase[seg] + 2.0 * np.pi * (f0 * tau + (f1 - f0) * tau * tau / (2.0 * delta))
    amplitude = np.interp(times, knot_t, knot_a)
    drift = params.drift_mm_per_min * times / 60.0
    return amplitude * np.sin(phase) + drift


def _echo_centers_samples(
    cfg: AcquisitionConfig, field: ScattererField, displacement_mm: np.ndarray
) -> np.ndarray:
    """Fractional echo-center sample index per (trace, scatterer)."""
    disp = np.asarray(displacement_mm, dtype=np.float64)
    depths = np.asarray(field.depths_mm, dtype=np.float64)
    gains = np.asarray(field.motion_gains, dtype=np.float64)
    round_trip_mm = 2.0 * (depths[None, :] + gains[None, :] * disp[:, None])
    return round_trip_mm * cfg.fs_hz / SPEED_OF_SOUND_MM_S


def _render_clean_traces(
    cfg: AcquisitionConfig, field: ScattererField, displacement_mm: np.ndarray
) -> np.ndarray:
    """Noiseless traces for a batch of displacements, float64 (m, trace_len)."""
    disp = np.atleast_1d(np.asarray(displacement_mm, dtype=np.float64))
    m = disp.shape[0]
    sigma = GABOR_SIGMA_WAVELENGTHS * cfg.fs_hz / cfg.f0_hz
    half = GABOR_SUPPORT_SIGMAS * sigma
    omega = 2.0 * np.pi * cfg.f0_hz / cfg.fs_hz
    centers = _echo_centers_samples(cfg, field, disp)
    if centers.size and (centers.min() < 0.0 or centers.max() > cfg.trace_len - 1):
        raise ValueError(
            "displaced scatterer falls outside the depth range covered by the trace"
        )
    out = np.zeros((m, cfg.trace_len), dtype=np.float64)
    refl = field.reflectivities
    for j in range(field.n_scatterers):
        c = centers[:, j]
        lo = max(int(np.floor(c.min() - half)), 0)
        hi = min(int(np.ceil(c.max() + half)) + 1, cfg.trace_len)
        if hi <= lo:
            continue
        k = np.arange(lo, hi, dtype=np.float64)
        x = k[None, :] - c[:, None]
        out[:, lo:hi] += refl[j] * np.exp(-0.5 * (x / sigma) ** 2) * np.cos(omega * x)
    return out


def render_trace(
    cfg: AcquisitionConfig,
    field: ScattererField,
    displacement_mm: float,
    snr_db: float | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One A-mode trace at the given displacement, float32.

    Echo delays are kept fractional (no rounding to the sample grid) so
    sub-sample motion shows up in the echo phase.  If snr_db is given,
    white Gaussian noise is added with standard deviation
    rms(clean) * 10^(-snr_db / 20); pass an explicit rng for
    reproducibility (defaults to a fresh seed-0 generator).
    """
    clean = _render_clean_traces(cfg, field, np.asarray([displacement_mm]))[0]
    if snr_db is not None:
        if rng is None:
            rng = np.random.default_rng(0)
        rms = float(np.sqrt(np.mean(clean**2)))
        clean = clean + rng.standard_normal(cfg.trace_len) * (rms * 10.0 ** (-snr_db / 20.0))
    return clean.astype(np.float32)


def render_image(
    cfg: AcquisitionConfig, field: ScattererField, displacement_mm: float
) -> np.ndarray:
    """One MR-like image at the given displacement, float32 (H, W).

    Each scatterer appears as a separable Gaussian blob whose row center
    tracks (depth + gain * displacement) / pixel_pitch continuously, so
    sub-pixel motion is preserved.  Columns are fixed per scatterer.
    """
    size = cfg.image_size
    pitch = cfg.pixel_pitch_mm
    rows = np.arange(size, dtype=np.float64)
    cols = np.arange(size, dtype=np.float64)
    sigma_c = BLOB_SIGMA_COLS_FRAC * size
    image = np.zeros((size, size), dtype=np.float64)
    n = field.n_scatterers
    for j in range(n):
        row_c = (field.depths_mm[j] + field.motion_gains[j] * displacement_mm) / pitch
        col_c = size * (j + 1.0) / (n + 1.0)
        er = np.exp(-0.5 * ((rows - row_c) / BLOB_SIGMA_ROWS_PX) ** 2)
        ec = np.exp(-0.5 * ((cols - col_c) / sigma_c) ** 2)
        image += field.reflectivities[j] * np.outer(er, ec)
    return image.astype(np.float32)


def n_images_for_duration(cfg: AcquisitionConfig, duration_s: float) -> int:
    """How many whole image windows fit in a recording of duration_s."""
    if duration_s < cfg.image_window_s:
        return 0
    return int(np.floor((duration_s - cfg.image_window_s) / cfg.image_period_s)) + 1


def gen_dataset(
    cfg: AcquisitionConfig,
    field: ScattererField,
    breathing: BreathingParams,
    duration_s: float,
    snr_db: float | None = 30.0,
) -> tuple[TraceSeries, ImageSeries]:
    """Render a full trace/image recording of the given duration.

    Traces are produced every tr_s seconds (round(duration / tr) of
    them).  Image windows start every image_period_s from t = 0; each
    image is stamped and rendered at its window center, and only windows
    that fit entirely inside the recording are kept.  Trace noise is
    drawn from a dedicated stream of the breathing seed, one chunk at a
    time in fixed order, so results are bit-reproducible.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    if n_images_for_duration(cfg, duration_s) < 1:
        raise ValueError(
            f"duration {duration_s} s is shorter than one image window "
            f"({cfg.image_window_s} s)"
        )
    n_traces = int(round(duration_s / cfg.tr_s))
    if n_traces < 1:
        raise ValueError("duration too short for a single trace")

    trace_times = cfg.tr_s * np.arange(n_traces, dtype=np.float64)
    disp_traces = gen_breathing(breathing, trace_times)

    noise_rng = _breathing_rng(breathing.seed, 1)
    noise_gain = None if snr_db is None else 10.0 ** (-snr_db / 20.0)
    traces = np.empty((n_traces, cfg.trace_len), dtype=np.float32)
    for start in range(0, n_traces, _RENDER_CHUNK):
        stop = min(start + _RENDER_CHUNK, n_traces)
        clean = _render_clean_traces(cfg, field, disp_traces[start:stop])
        if noise_gain is not None:
            rms = np.sqrt(np.mean(clean**2, axis=1, keepdims=True))
            clean += noise_rng.standard_normal(clean.shape) * (rms * noise_gain)
        traces[start:stop] = clean.astype(np.float32)

    n_images = n_images_for_duration(cfg, duration_s)
    timestamps = cfg.image_period_s * np.arange(n_images, dtype=np.float64) + (
        cfg.image_window_s / 2.0
    )
    disp_images = gen_breathing(breathing, timestamps) if n_images else np.zeros(0)
    frames = np.zeros((n_images, cfg.image_size, cfg.image_size), dtype=np.float32)
    for i in range(n_images):
        frames[i] = render_image(cfg, field, float(disp_images[i]))

    series = TraceSeries(
        data=traces, fs_hz=cfg.fs_hz, f0_hz=cfg.f0_hz, tr_s=cfg.tr_s, t0_s=0.0
    )
    images = ImageSeries(data=frames, timestamps=timestamps)
    return series, images
