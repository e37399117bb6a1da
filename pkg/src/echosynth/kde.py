"""Nadaraya-Watson kernel regression baseline over flattened patches.

Stores the training patches verbatim and predicts a kernel-weighted
average of their targets, so a single prediction costs O(N * d * n) in
the database size: the scaling the latency benchmark contrasts with the
network's constant-cost forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BANDWIDTH_SAMPLE_PAIRS = 2000


@dataclass(frozen=True)
class KdeModel:
    """Gaussian-kernel regression database.

    features: (N, p) flattened training patches.
    targets: (N, k) regression targets.
    bandwidth: Gaussian kernel width h; weights are exp(-d^2 / (2 h^2)).
    """

    features: np.ndarray
    targets: np.ndarray
    bandwidth: float

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.targets.ndim != 2:
            raise ValueError("features and targets must be 2-D")
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError("features and targets row counts differ")
        if self.features.shape[0] < 1:
            raise ValueError("need at least one training sample")
        if not (self.bandwidth > 0):
            raise ValueError("bandwidth must be positive")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]


def _flatten(patches: np.ndarray) -> np.ndarray:
    patches = np.asarray(patches)
    if patches.ndim < 2:
        raise ValueError("patches must be at least 2-D (n_samples first)")
    return np.ascontiguousarray(
        patches.reshape(patches.shape[0], -1), dtype=np.float64
    )


def median_pairwise_distance(
    features: np.ndarray, max_pairs: int = BANDWIDTH_SAMPLE_PAIRS, seed: int = 0
) -> float:
    """Median Euclidean distance over at most max_pairs sampled pairs.

    All pairs are used when there are few enough; otherwise a seeded
    sample of distinct pairs, so the heuristic is deterministic.
    """
    n = features.shape[0]
    if n < 2:
        return 0.0
    total = n * (n - 1) // 2
    if total <= max_pairs:
        ii, jj = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        flat = rng.choice(total, size=max_pairs, replace=False)
        # invert the row-major upper-triangle enumeration
        ii = (
            n
            - 2
            - np.floor(np.sqrt(-8.0 * flat + 4.0 * n * (n - 1) - 7.0) / 2.0 - 0.5)
        ).astype(np.int64)
        jj = flat + ii + 1 - (ii * (2 * n - ii - 1)) // 2
    dists = np.empty(ii.size, dtype=np.float64)
    chunk = max(1, 2**22 // max(1, features.shape[1]))
    for c0 in range(0, ii.size, chunk):
        sl = slice(c0, c0 + chunk)
        diff = features[ii[sl]] - features[jj[sl]]
        dists[sl] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return float(np.median(dists))


def fit_kde(
    patches: np.ndarray,
    targets: np.ndarray,
    bandwidth: float | None = None,
    seed: int = 0,
) -> KdeModel:
    """Build the regression database; patches are flattened per sample.

    Without an explicit bandwidth, h is the median pairwise distance of
    the (sampled) training features, falling back to 1.0 when that
    median is zero (all-identical patches).
    """
    features = _flatten(patches)
    targets = np.ascontiguousarray(np.atleast_2d(np.asarray(targets, dtype=np.float64)))
    if bandwidth is None:
        h = median_pairwise_distance(features, seed=seed)
        if h <= 0.0:
            h = 1.0
    else:
        h = float(bandwidth)
    return KdeModel(features=features, targets=targets, bandwidth=h)


DEFAULT_BANDWIDTH_FACTORS = (0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0)


def select_bandwidth(
    patches: np.ndarray,
    targets: np.ndarray,
    factors: tuple[float, ...] = DEFAULT_BANDWIDTH_FACTORS,
    seed: int = 0,
) -> tuple[float, dict[float, float]]:
    """Pick a bandwidth by leave-one-out cross-validation on the
    training set.

    Candidates are multiples of the median pairwise distance; for each,
    every training sample is predicted from the others and the mean
    squared error is recorded.  Returns the winning bandwidth and the
    full candidate -> LOO-MSE table.  Deterministic given the seed
    (which only affects the median-distance pair sample).
    """
    features = _flatten(patches)
    t = np.ascontiguousarray(np.atleast_2d(np.asarray(targets, dtype=np.float64)))
    n = features.shape[0]
    if n < 2:
        raise ValueError("leave-one-out selection needs at least two samples")
    med = median_pairwise_distance(features, seed=seed)
    if med <= 0.0:
        med = 1.0
    sq = np.einsum("ij,ij->i", features, features)
    d2 = sq[:, None] - 2.0 * (features @ features.T) + sq[None, :]
    np.maximum(d2, 0.0, out=d2)
    scores: dict[float, float] = {}
    best_h, best_mse = med, np.inf
    for fac in factors:
        h = fac * med
        e = d2 / (-2.0 * h * h)
        np.fill_diagonal(e, -np.inf)  # leave self out
        e -= e.max(axis=1, keepdims=True)
        w = np.exp(e)
        pred = (w @ t) / w.sum(axis=1)[:, None]
        mse = float(np.mean((pred - t) ** 2))
        scores[h] = mse
        if mse < best_mse:
            best_h, best_mse = h, mse
    return best_h, scores


def predict_kde(model: KdeModel, queries: np.ndarray) -> np.ndarray:
    """Kernel-weighted target average for each query patch.

    queries may be a single patch or a stack; returns (k,) or (M, k).
    Weight exponents are shifted by their per-query maximum before
    exponentiation, so the nearest sample always keeps weight 1 and the
    denominator can never underflow to zero.
    """
    q = np.asarray(queries)
    p = model.features.shape[1]
    if q.ndim >= 2 and int(np.prod(q.shape[1:])) == p:
        single = False  # leading axis enumerates queries
    elif q.size == p:
        single = True  # one patch, flat or shaped
        q = q.reshape(1, -1)
    else:
        raise ValueError(
            f"query shape {np.asarray(queries).shape} does not match the "
            f"database feature length {p}"
        )
    qf = _flatten(q)
    f = model.features
    d2 = (
        np.einsum("ij,ij->i", qf, qf)[:, None]
        - 2.0 * (qf @ f.T)
        + np.einsum("ij,ij->i", f, f)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    e = d2 / (-2.0 * model.bandwidth * model.bandwidth)
    e -= e.max(axis=1, keepdims=True)
    w = np.exp(e)
    pred = (w @ model.targets) / w.sum(axis=1)[:, None]
    return pred[0] if single else pred
