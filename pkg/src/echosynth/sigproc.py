"""Doppler-style preprocessing of A-mode traces into axial-speed streams.

The chain per trace is: Fermi-filtered analytic transform along depth,
phase extraction in degrees, trace-to-trace phase differencing converted
to axial speed, then depth cropping and area-weighted binning.  The
binning runs on the speed map, not on raw phase, because averaging
wrapped phase across depth is meaningless near echo boundaries.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .datatypes import (
    SPEED_OF_SOUND_MM_S,
    AcquisitionConfig,
    AlignedPair,
    AlignmentResult,
    ImageSeries,
    SpeedPatch,
    SpeedStream,
    TraceSeries,
)

# Fermi low-pass: cutoff at 10 carrier frequencies, rolloff width at 5%
# of the cutoff.
FERMI_CUTOFF_MULT = 10.0
FERMI_ROLLOFF_FRAC = 0.05


def fermi_weights(
    n_samples: int,
    fs_hz: float,
    f0_hz: float,
    cutoff_mult: float = FERMI_CUTOFF_MULT,
    rolloff_frac: float = FERMI_ROLLOFF_FRAC,
    dc_weight: float = 1.0,
) -> np.ndarray:
    """Spectral weights: Fermi low-pass with negative frequencies zeroed.

    Returns a float64 vector w of length n_samples indexed like
    np.fft.fftfreq: w(f) = sigmoid((fc - |f|) / width) for f > 0, 0 for
    f < 0 and exactly dc_weight at f = 0, with fc = cutoff_mult * f0 and
    width = rolloff_frac * fc.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    cutoff_hz = cutoff_mult * f0_hz
    width_hz = rolloff_frac * cutoff_hz
    if cutoff_hz <= 0 or width_hz <= 0:
        raise ValueError("cutoff and rolloff must be positive")
    freqs = np.fft.fftfreq(n_samples, d=1.0 / fs_hz)
    weights = expit((cutoff_hz - np.abs(freqs)) / width_hz)
    weights[freqs < 0] = 0.0
    weights[0] = dc_weight
    return weights


def analytic_transform(traces: np.ndarray, fs_hz: float, f0_hz: float) -> np.ndarray:
    """Fermi-filtered analytic signal of each trace (last axis = depth).

    float32 input stays in complex64; float64 input uses complex128.
    Phases are unaffected by the one-sided spectrum convention (no
    factor-two restoration of positive frequencies is applied).  Odd
    lengths are zero-padded to even for the transform and trimmed back.
    """
    traces = np.asarray(traces)
    n = traces.shape[-1]
    if n < 16:
        raise ValueError("traces must have at least 16 samples")
    if not np.all(np.isfinite(traces)):
        raise ValueError("traces contain non-finite values")
    n_fft = n + (n % 2)
    weights = fermi_weights(n_fft, fs_hz, f0_hz)
    if traces.dtype == np.float32:
        weights = weights.astype(np.float32)
    if n_fft != n:
        pad = [(0, 0)] * (traces.ndim - 1) + [(0, 1)]
        traces = np.pad(traces, pad)
    spectrum = np.fft.fft(traces, axis=-1)
    spectrum *= weights
    return np.fft.ifft(spectrum, axis=-1)[..., :n]


def phase_map(analytic: np.ndarray) -> np.ndarray:
    """Instantaneous phase in degrees, wrapped into [-180, 180)."""
    theta = np.degrees(np.angle(analytic))
    return wrap_degrees(theta)


def wrap_degrees(theta_deg: np.ndarray) -> np.ndarray:
    """Wrap angles in degrees into [-180, 180)."""
    return (np.asarray(theta_deg) + 180.0) % 360.0 - 180.0


def phase_speed(theta_deg: np.ndarray, wavelength_mm: float) -> np.ndarray:
    """Axial speed from a phase map (axis 0 = traces), degrees in.

    v[t] = alpha * wrap(theta[t] - theta[t-1]) / 2 with
    alpha = 0.5 * wavelength_mm / 360.  Row 0 is zero.  Units are mm per
    repetition interval, still carrying the factor-two division; the
    physical speed toward the transducer is v * 2 / tr_s in mm/s.
    """
    theta = np.asarray(theta_deg)
    if theta.ndim < 1 or theta.shape[0] < 1:
        raise ValueError("phase map must have at least one trace row")
    alpha = 0.5 * wavelength_mm / 360.0
    out = np.zeros_like(theta, dtype=theta.dtype if theta.dtype.kind == "f" else np.float64)
    if theta.shape[0] > 1:
        dtheta = wrap_degrees(np.diff(theta, axis=0))
        out[1:] = (alpha / 2.0) * dtheta
    return out


def crop_downscale(
    values: np.ndarray,
    crop_lo: int,
    crop_hi: int,
    depth_bins: int,
) -> np.ndarray:
    """Crop the depth axis (last) and bin it into depth_bins equal bins.

    Bin edges are uniform in the cropped window; fractional edges are
    handled by area weighting, so every input sample contributes with
    weight proportional to its overlap with the bin.  Accumulation runs
    in float64; the output keeps the input dtype.
    """
    values = np.asarray(values)
    n = values.shape[-1]
    if not (0 <= crop_lo < crop_hi <= n):
        raise ValueError("crop window out of range")
    length = crop_hi - crop_lo
    if not (0 < depth_bins <= length):
        raise ValueError("depth_bins must be in [1, crop window length]")
    window = values[..., crop_lo:crop_hi]
    width = length / depth_bins

    cumsum = np.zeros(window.shape[:-1] + (length + 1,), dtype=np.float64)
    np.cumsum(window, axis=-1, dtype=np.float64, out=cumsum[..., 1:])
    edges = np.arange(depth_bins + 1, dtype=np.float64) * width
    idx = np.minimum(edges.astype(np.int64), length - 1)
    frac = edges - idx
    # cumsum value at fractional position e: cumsum[floor(e)] + frac * window[floor(e)]
    cs_at_edges = cumsum[..., idx] + frac * window[..., idx].astype(np.float64)
    binned = np.diff(cs_at_edges, axis=-1) / width
    return binned.astype(values.dtype, copy=False)


def compute_speed_stream(
    traces: TraceSeries,
    cfg: AcquisitionConfig,
    chunk_traces: int = 512,
) -> SpeedStream:
    """Full preprocessing chain from raw traces to a speed stream.

    Processes traces in chunks to bound FFT memory; one phase row is
    carried across chunk boundaries so the trace-to-trace differencing
    is seamless.  Output is (depth_bins, n_traces) float32 with column 0
    zero.
    """
    if traces.trace_len != cfg.trace_len:
        raise ValueError(
            f"trace length {traces.trace_len} does not match config {cfg.trace_len}"
        )
    n_traces = traces.n_traces
    if n_traces < 1:
        raise ValueError("need at least one trace")
    wavelength_mm = SPEED_OF_SOUND_MM_S / traces.f0_hz

    out = np.zeros((cfg.depth_bins, n_traces), dtype=np.float32)
    prev_theta: np.ndarray | None = None
    for start in range(0, n_traces, chunk_traces):
        stop = min(start + chunk_traces, n_traces)
        z = analytic_transform(traces.data[start:stop], traces.fs_hz, traces.f0_hz)
        theta = phase_map(z)
        if prev_theta is None:
            block = theta
            first_out = start + 1  # column 0 stays zero
        else:
            block = np.concatenate([prev_theta[None, :], theta], axis=0)
            first_out = start
        speed_full = phase_speed(block, wavelength_mm)[1:]
        if speed_full.shape[0]:
            binned = crop_downscale(speed_full, cfg.crop_lo, cfg.crop_hi, cfg.depth_bins)
            out[:, first_out:stop] = binned.T
        prev_theta = theta[-1]
    return SpeedStream(data=out, tr_s=traces.tr_s, t0_s=traces.t0_s)


def extract_patch(stream: SpeedStream, end_trace_index: int, patch_len: int) -> SpeedPatch:
    """The patch_len most recent columns ending at end_trace_index (inclusive)."""
    if patch_len <= 0:
        raise ValueError("patch_len must be positive")
    if end_trace_index < patch_len - 1:
        raise ValueError(
            f"end index {end_trace_index} has fewer than {patch_len} columns of history"
        )
    if end_trace_index >= stream.n_traces:
        raise ValueError("end index beyond stream")
    sl = stream.data[:, end_trace_index - patch_len + 1 : end_trace_index + 1]
    return SpeedPatch(
        data=sl,
        end_trace_index=end_trace_index,
        end_time_s=stream.t0_s + end_trace_index * stream.tr_s,
    )


def align_pairs(
    stream: SpeedStream,
    images: ImageSeries,
    patch_len: int,
) -> AlignmentResult:
    """Match each image to the speed patch ending at its timestamp.

    The patch for an image stamped at time t ends at trace index
    floor((t - t0) / tr).  Images whose patch would reach before the
    start of the stream (or past its end) are dropped and counted.
    """
    pairs: list[AlignedPair] = []
    dropped: list[int] = []
    for j in range(images.n_images):
        t = float(images.timestamps[j])
        end_idx = int(np.floor((t - stream.t0_s) / stream.tr_s))
        if end_idx < patch_len - 1 or end_idx >= stream.n_traces:
            dropped.append(j)
            continue
        pairs.append(AlignedPair(patch=extract_patch(stream, end_idx, patch_len), image_index=j))
    return AlignmentResult(
        pairs=tuple(pairs), n_dropped=len(dropped), dropped_indices=tuple(dropped)
    )
