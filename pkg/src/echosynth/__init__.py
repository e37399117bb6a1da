"""Learn to synthesize MR-like images from single-element ultrasound traces.

The pipeline: Doppler-style phase processing turns raw A-mode traces
into a depth-time speed stream; a small convolutional-recurrent network
maps sliding windows of that stream to the PCA coefficients of the
target images; a kernel-regression baseline and a latency benchmark
provide the accuracy/cost comparison.
"""

__version__ = "0.1.0"

from .datatypes import (
    AcquisitionConfig,
    AlignedPair,
    AlignmentResult,
    ImageSeries,
    SpeedPatch,
    SpeedStream,
    TraceSeries,
)
from .evalbench import bench_latency, evaluate, mmode_extract, sse_per_image
from .kde import KdeModel, fit_kde, median_pairwise_distance, predict_kde, select_bandwidth
from .lrcn import (
    ArchSpec,
    LrcnModel,
    backward,
    backward_stream,
    forward,
    forward_stream,
    init_params,
    layout,
    make_model,
    param_count,
    param_views,
)
from .pca import PcaModel, fit_pca, project, reconstruct
from .phantom import BreathingParams, ScattererField, gen_breathing, gen_dataset
from .sigproc import (
    align_pairs,
    analytic_transform,
    compute_speed_stream,
    crop_downscale,
    extract_patch,
    fermi_weights,
    phase_map,
    phase_speed,
)
from .train import TrainConfig, TrainReport, adam_step, grad_check, mse, mse_grad, train

__all__ = [
    "AcquisitionConfig",
    "AlignedPair",
    "AlignmentResult",
    "ArchSpec",
    "BreathingParams",
    "ImageSeries",
    "KdeModel",
    "LrcnModel",
    "PcaModel",
    "ScattererField",
    "SpeedPatch",
    "SpeedStream",
    "TraceSeries",
    "TrainConfig",
    "TrainReport",
    "__version__",
    "adam_step",
    "align_pairs",
    "analytic_transform",
    "backward",
    "backward_stream",
    "bench_latency",
    "compute_speed_stream",
    "crop_downscale",
    "evaluate",
    "extract_patch",
    "fermi_weights",
    "fit_kde",
    "median_pairwise_distance",
    "select_bandwidth",
    "fit_pca",
    "forward",
    "forward_stream",
    "gen_breathing",
    "gen_dataset",
    "grad_check",
    "init_params",
    "layout",
    "make_model",
    "mmode_extract",
    "mse",
    "mse_grad",
    "param_count",
    "param_views",
    "phase_map",
    "phase_speed",
    "predict_kde",
    "project",
    "reconstruct",
    "sse_per_image",
    "train",
]
