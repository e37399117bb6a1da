"""Accuracy metrics and the inference-latency benchmark.

Accuracy is reported as per-image pixel SSE against the PCA-space
round-trip of the ground truth (plus raw-pixel SSE for transparency)
and in coefficient space.  The benchmark times per-query prediction
cost over growing database sizes to expose the kernel baseline's linear
scaling against the network's constant cost.
"""

from __future__ import annotations

import time

import numpy as np
from scipy import stats as _stats

from .pca import PcaModel, reconstruct

MIN_BENCH_QUERIES = 30
MIN_BENCH_REPS = 3


# --------------------------------------------------------------------------
# Accuracy.


def sse_per_image(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-frame sum of squared pixel differences; frames must match."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    diff = (pred - truth).reshape(pred.shape[0], -1)
    return np.einsum("ij,ij->i", diff, diff)


def coeff_sse(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-sample sum of squared coefficient differences."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return np.sum((pred - truth) ** 2, axis=1)


def mmode_extract(images: np.ndarray, column: int) -> np.ndarray:
    """Stack one image column over time: (n, H, W) -> (n, H) strip."""
    images = np.asarray(images)
    if images.ndim != 3:
        raise ValueError("images must be (n, H, W)")
    if not (0 <= column < images.shape[2]):
        raise ValueError(f"column {column} out of range for width {images.shape[2]}")
    return np.ascontiguousarray(images[:, :, column])


def _summ(values: np.ndarray) -> dict:
    return {
        "per_image": [float(v) for v in values],
        "mean": float(values.mean()),
        "std": float(values.std()),
    }


def evaluate(
    pca: PcaModel,
    true_coeffs: np.ndarray,
    true_images: np.ndarray,
    predictions: dict[str, np.ndarray],
) -> dict:
    """SSE metrics for several coefficient predictors on one test set.

    predictions maps method name to (n, k) predicted coefficients.  The
    pixel-space ground truth is the PCA round-trip of the true images,
    so a perfect coefficient predictor scores zero; SSE against the raw
    images is reported alongside (it bottoms out at the PCA residual).
    """
    true_coeffs = np.asarray(true_coeffs, dtype=np.float64)
    true_images = np.asarray(true_images, dtype=np.float64)
    truth_pca = reconstruct(pca, true_coeffs)
    methods = {}
    for name, coeffs in predictions.items():
        rec = reconstruct(pca, np.asarray(coeffs, dtype=np.float64))
        methods[name] = {
            "sse_image": _summ(sse_per_image(rec, truth_pca)),
            "sse_image_raw": _summ(sse_per_image(rec, true_images)),
            "sse_coeff": _summ(coeff_sse(coeffs, true_coeffs)),
        }
    return {"n_test": int(true_coeffs.shape[0]), "methods": methods}


# --------------------------------------------------------------------------
# Latency.


def time_per_query(fn, queries, reps: int, warmup: int = 1) -> np.ndarray:
    """Wall time of fn(query) for each query and repetition: (Q, reps).

    Warm-up calls on the first query are run first and not recorded.
    """
    queries = list(queries)
    for _ in range(max(0, warmup)):
        fn(queries[0])
    times = np.empty((len(queries), reps), dtype=np.float64)
    for r in range(reps):
        for qi, q in enumerate(queries):
            t0 = time.perf_counter()
            fn(q)
            times[qi, r] = time.perf_counter() - t0
    return times


def timing_stats(times: np.ndarray) -> dict:
    """Mean/median/p95 over queries of the per-query median over reps."""
    med = np.median(times, axis=1)
    return {
        "mean_s": float(med.mean()),
        "p50_s": float(np.percentile(med, 50)),
        "p95_s": float(np.percentile(med, 95)),
        "n_queries": int(times.shape[0]),
        "reps": int(times.shape[1]),
    }


def fit_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line fit; returns (slope, intercept, r_squared)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def spearman_corr(x: np.ndarray, y: np.ndarray) -> float:
    return float(_stats.spearmanr(x, y).statistic)


def bench_latency(
    make_predictors,
    n_list,
    queries,
    reps: int = MIN_BENCH_REPS,
    warmup: int = 1,
) -> dict:
    """Per-query latency sweep over database sizes.

    make_predictors(n) returns {method name: fn(query) -> prediction}
    built on an n-sample database; every method is timed on the same
    queries at every n.  Reports per-n stats per method, a linear fit of
    mean time vs n, and the relative spread of the means.
    """
    n_list = [int(n) for n in n_list]
    queries = list(queries)
    if len(queries) < MIN_BENCH_QUERIES:
        raise ValueError(f"need at least {MIN_BENCH_QUERIES} queries")
    if reps < MIN_BENCH_REPS:
        raise ValueError(f"need at least {MIN_BENCH_REPS} repetitions")
    if not n_list:
        raise ValueError("empty database size sweep")

    per_method: dict[str, list[dict]] = {}
    for n in n_list:
        predictors = make_predictors(n)
        if not predictors:
            raise ValueError("empty predictor set")
        for name, fn in predictors.items():
            stats = timing_stats(time_per_query(fn, queries, reps, warmup))
            per_method.setdefault(name, []).append({"n": n, **stats})

    methods = {}
    narr = np.asarray(n_list, dtype=np.float64)
    for name, rows in per_method.items():
        means = np.asarray([row["mean_s"] for row in rows])
        slope, intercept, r2 = fit_line(narr, means)
        entry = {
            "per_n": rows,
            "fit": {
                "slope_s_per_sample": slope,
                "intercept_s": intercept,
                "r_squared": r2,
                "spearman": spearman_corr(narr, means) if len(n_list) > 1 else 1.0,
            },
            "spread": float((means.max() - means.min()) / means.mean()),
        }
        methods[name] = entry
    return {
        "n_values": n_list,
        "n_queries": len(queries),
        "reps": int(reps),
        "methods": methods,
    }
