"""Shared data containers and acquisition geometry.

All arrays are kept in C order.  Trace payloads and image payloads are
float32; timestamps and derived scalars are float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Speed of sound in soft tissue, expressed in mm/s so that
# wavelength_mm = SPEED_OF_SOUND_MM_S / f0_hz comes out in mm.
SPEED_OF_SOUND_MM_S = 1.54e6


@dataclass(frozen=True)
class AcquisitionConfig:
    """Geometry and timing of the single-element ultrasound acquisition.

    The defaults describe a 100 traces/s A-mode acquisition sampled at
    100 MHz, cropped to the depth window [crop_lo, crop_hi) and binned
    down to depth_bins rows.  Images arrive at image_rate_fps, each one
    assembled from lines_per_image consecutive acquisition slots.
    """

    fs_hz: float = 1e8
    f0_hz: float = 1e6
    tr_s: float = 0.01
    trace_len: int = 20000
    crop_lo: int = 1000
    crop_hi: int = 8000
    depth_bins: int = 560
    patch_len: int = 300
    image_rate_fps: float = 0.85
    image_size: int = 192
    image_fov_mm: float = 153.6
    lines_per_image: int = 60

    def __post_init__(self) -> None:
        if self.fs_hz <= 0 or self.f0_hz <= 0 or self.tr_s <= 0:
            raise ValueError("fs_hz, f0_hz and tr_s must be positive")
        if self.f0_hz >= self.fs_hz / 2:
            raise ValueError("f0_hz must lie below the Nyquist frequency")
        if self.trace_len <= 0:
            raise ValueError("trace_len must be positive")
        if not (0 <= self.crop_lo < self.crop_hi <= self.trace_len):
            raise ValueError("crop window must satisfy 0 <= lo < hi <= trace_len")
        if self.depth_bins <= 0 or self.depth_bins > self.crop_hi - self.crop_lo:
            raise ValueError("depth_bins must be in [1, crop window length]")
        if self.patch_len <= 0:
            raise ValueError("patch_len must be positive")
        if self.image_rate_fps <= 0 or self.image_size <= 0 or self.image_fov_mm <= 0:
            raise ValueError("image geometry values must be positive")
        if self.lines_per_image <= 0:
            raise ValueError("lines_per_image must be positive")

    @property
    def wavelength_mm(self) -> float:
        return SPEED_OF_SOUND_MM_S / self.f0_hz

    @property
    def trace_rate_hz(self) -> float:
        return 1.0 / self.tr_s

    @property
    def image_period_s(self) -> float:
        return 1.0 / self.image_rate_fps

    @property
    def image_window_s(self) -> float:
        """Time spanned by the lines_per_image acquisition slots of one image."""
        return self.lines_per_image * self.tr_s

    @property
    def pixel_pitch_mm(self) -> float:
        return self.image_fov_mm / self.image_size


@dataclass
class TraceSeries:
    """A stack of A-mode traces, one row per repetition interval."""

    data: np.ndarray  # (n_traces, trace_len) float32
    fs_hz: float
    f0_hz: float
    tr_s: float
    t0_s: float = 0.0

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError("trace data must be 2-D (n_traces, trace_len)")

    @property
    def n_traces(self) -> int:
        return self.data.shape[0]

    @property
    def trace_len(self) -> int:
        return self.data.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0_s + self.tr_s * np.arange(self.n_traces, dtype=np.float64)


@dataclass
class ImageSeries:
    """A stack of images with one timestamp per frame (window centers)."""

    data: np.ndarray  # (n_images, height, width) float32
    timestamps: np.ndarray  # (n_images,) float64, seconds

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.timestamps = np.ascontiguousarray(self.timestamps, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError("image data must be 3-D (n_images, height, width)")
        if self.timestamps.shape != (self.data.shape[0],):
            raise ValueError("need exactly one timestamp per image")

    @property
    def n_images(self) -> int:
        return self.data.shape[0]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


@dataclass
class SpeedStream:
    """Depth-binned axial speed map, one column per trace.

    Column t holds the speed between traces t-1 and t in the convention
    of phase_speed (mm per repetition interval, carrying the factor-two
    division); column 0 is defined as zero.  Multiply by 2/tr_s to get
    physical mm/s toward the transducer.
    """

    data: np.ndarray  # (depth_bins, n_traces) float32
    tr_s: float
    t0_s: float = 0.0

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError("speed stream must be 2-D (depth_bins, n_traces)")

    @property
    def depth_bins(self) -> int:
        return self.data.shape[0]

    @property
    def n_traces(self) -> int:
        return self.data.shape[1]


@dataclass
class SpeedPatch:
    """The most recent patch_len columns of a speed stream ending at a trace."""

    data: np.ndarray  # (depth_bins, patch_len) float32
    end_trace_index: int
    end_time_s: float = 0.0


@dataclass(frozen=True)
class AlignedPair:
    """One (speed patch, image index) training example."""

    patch: SpeedPatch
    image_index: int


@dataclass(frozen=True)
class AlignmentResult:
    pairs: tuple[AlignedPair, ...]
    n_dropped: int = 0
    dropped_indices: tuple[int, ...] = field(default_factory=tuple)
