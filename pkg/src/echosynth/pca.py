"""Principal-component compression of image stacks.

Components are computed from the n x n Gram matrix of the centered
frames rather than the p x p covariance, since the number of frames is
far below the pixel count.  Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Eigendecomposition sanity bound: ||G q - lam q|| <= EIGH_RESIDUAL_TOL * ||G||_F.
EIGH_RESIDUAL_TOL = 1e-10
# Eigenvalues at or below this fraction of the largest are treated as zero.
ZERO_VARIANCE_REL_TOL = 1e-12


@dataclass
class PcaModel:
    """Mean, orthonormal components (rows) and per-component variances."""

    mean: np.ndarray  # (p,) float64
    components: np.ndarray  # (k, p) float64, rows orthonormal
    variances: np.ndarray  # (k,) float64, descending
    image_shape: tuple[int, int] | None = None
    degenerate: bool = False

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.components.shape[1]


def _as_matrix(data: np.ndarray) -> tuple[np.ndarray, tuple[int, int] | None]:
    data = np.asarray(data)
    if data.ndim == 3:
        shape = (data.shape[1], data.shape[2])
        return data.reshape(data.shape[0], -1).astype(np.float64, copy=False), shape
    if data.ndim == 2:
        return data.astype(np.float64, copy=False), None
    raise ValueError("expected (n, p) or (n, H, W) data")


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Deterministic orientation: the largest-magnitude entry is positive.

    np.argmax takes the first index on ties, which pins the convention
    completely.
    """
    for row in components:
        idx = int(np.argmax(np.abs(row)))
        if row[idx] < 0:
            row *= -1.0
    return components


def _complete_orthonormal(components: list[np.ndarray], p: int, needed: int) -> list[np.ndarray]:
    """Extend a partial orthonormal set with canonical-basis directions."""
    out: list[np.ndarray] = []
    basis = components + out
    e = 0
    while len(out) < needed:
        if e >= p:
            raise ValueError("cannot complete orthonormal basis: too few dimensions")
        v = np.zeros(p, dtype=np.float64)
        v[e] = 1.0
        e += 1
        for b in components + out:
            v -= (b @ v) * b
        norm = np.linalg.norm(v)
        if norm > 0.5:  # canonical vector not already (nearly) spanned
            out.append(v / norm)
    return out


def fit_pca(data: np.ndarray, n_components: int) -> PcaModel:
    """Fit a PCA model with n_components to frames (n, H, W) or rows (n, p).

    Uses the Gram-matrix eigendecomposition (n x n), then maps the
    eigenvectors back to pixel space.  Raises if the requested rank
    exceeds the number of frames or pixels, or if the eigensolver result
    fails its residual check.  Rank deficiency does not raise: missing
    directions are filled with a deterministic orthonormal completion,
    zero variance, and the model is flagged degenerate.
    """
    x, image_shape = _as_matrix(data)
    n, p = x.shape
    if n_components <= 0:
        raise ValueError("n_components must be positive")
    if n_components > min(n, p):
        raise ValueError(
            f"n_components={n_components} exceeds min(n_frames, n_features)={min(n, p)}"
        )
    mean = x.mean(axis=0)
    xc = x - mean

    gram = xc @ xc.T
    eigvals, eigvecs = np.linalg.eigh(gram)

    gram_norm = np.linalg.norm(gram)
    residual = gram @ eigvecs - eigvecs * eigvals
    max_residual = float(np.abs(residual).max())
    if max_residual > EIGH_RESIDUAL_TOL * max(gram_norm, 1e-300):
        raise RuntimeError(
            f"eigendecomposition residual {max_residual:.3e} exceeds "
            f"{EIGH_RESIDUAL_TOL:.0e} * ||G||"
        )

    order = np.argsort(eigvals)[::-1][:n_components]
    lam = eigvals[order]
    vecs = eigvecs[:, order]

    zero_cut = ZERO_VARIANCE_REL_TOL * max(float(lam[0]), 0.0)
    kept: list[np.ndarray] = []
    variances: list[float] = []
    degenerate = False
    for i in range(n_components):
        if lam[i] > zero_cut and lam[i] > 0.0:
            comp = xc.T @ vecs[:, i] / np.sqrt(lam[i])
            comp /= np.linalg.norm(comp)  # guards accumulated rounding
            kept.append(comp)
            variances.append(float(lam[i]) / (n - 1) if n > 1 else 0.0)
        else:
            degenerate = True
    if degenerate:
        fillers = _complete_orthonormal(kept, p, n_components - len(kept))
        kept.extend(fillers)
        variances.extend([0.0] * len(fillers))

    components = _fix_signs(np.vstack(kept))
    return PcaModel(
        mean=mean,
        components=components,
        variances=np.asarray(variances, dtype=np.float64),
        image_shape=image_shape,
        degenerate=degenerate,
    )


def project(model: PcaModel, data: np.ndarray) -> np.ndarray:
    """Coefficients of data in the model basis.

    Accepts a single frame (H, W) or (p,), or stacks (m, H, W) / (m, p).
    """
    x = np.asarray(data, dtype=np.float64)
    single = False
    if model.image_shape is not None and x.shape == model.image_shape:
        x = x.reshape(1, -1)
        single = True
    elif x.ndim == 1:
        x = x.reshape(1, -1)
        single = True
    elif x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    if x.shape[-1] != model.n_features:
        raise ValueError("data feature size does not match the model")
    coeffs = (x - model.mean) @ model.components.T
    return coeffs[0] if single else coeffs


def reconstruct(model: PcaModel, coeffs: np.ndarray) -> np.ndarray:
    """Map coefficients back to pixel space (image-shaped if known)."""
    c = np.asarray(coeffs, dtype=np.float64)
    single = c.ndim == 1
    if single:
        c = c.reshape(1, -1)
    if c.shape[-1] != model.n_components:
        raise ValueError("coefficient size does not match the model")
    flat = c @ model.components + model.mean
    if model.image_shape is not None:
        out = flat.reshape((-1,) + model.image_shape)
    else:
        out = flat
    return out[0] if single else out
