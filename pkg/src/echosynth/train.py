"""Mean-squared-error training with Adam, plus a finite-difference checker.

Training runs over a speed stream with per-sample window end indices so
overlapping patches share one convolutional pass per batch.  Everything
is seeded: the shuffle order and the per-batch dropout seeds come from
independent child sequences of the training seed, which makes runs
bit-reproducible for a fixed dtype and batch layout.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .lrcn import LrcnModel, backward_stream, forward_stream, layout, param_count


TARGET_NORM_MODES = ("off", "per-component")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 20
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    target_normalization: str = "off"

    def __post_init__(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must be in [0, 1)")
        if self.target_normalization not in TARGET_NORM_MODES:
            raise ValueError(f"target_normalization must be one of {TARGET_NORM_MODES}")


def compute_target_norm(targets: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """(mean, scale) so that (targets - mean) / scale is what the net learns.

    Mode 'off' is the identity; 'per-component' standardizes each output
    component (zero-std components get scale 1 to stay invertible).
    """
    if mode not in TARGET_NORM_MODES:
        raise ValueError(f"target_normalization must be one of {TARGET_NORM_MODES}")
    k = targets.shape[-1]
    if mode == "off":
        return np.zeros(k, dtype=np.float64), np.ones(k, dtype=np.float64)
    mean = targets.mean(axis=0, dtype=np.float64)
    scale = targets.std(axis=0, dtype=np.float64)
    scale[scale <= 0.0] = 1.0
    return mean, scale


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over every element of the batch."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(diff * diff))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d mse / d pred, matching mse's all-element mean."""
    diff = pred - target
    return (2.0 / diff.size) * diff


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_params(cls, params: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params))


def adam_step(
    params: np.ndarray, grad: np.ndarray, state: AdamState, cfg: TrainConfig
) -> None:
    """One bias-corrected Adam update, in place on params."""
    if not np.all(np.isfinite(grad)):
        idx = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise ValueError(f"non-finite gradient at parameter index {idx}")
    state.t += 1
    b1 = params.dtype.type(cfg.beta1)
    b2 = params.dtype.type(cfg.beta2)
    state.m *= b1
    state.m += (1 - b1) * grad
    state.v *= b2
    state.v += (1 - b2) * np.square(grad)
    m_hat = state.m / params.dtype.type(1.0 - cfg.beta1**state.t)
    v_hat = state.v / params.dtype.type(1.0 - cfg.beta2**state.t)
    params -= params.dtype.type(cfg.learning_rate) * m_hat / (
        np.sqrt(v_hat) + params.dtype.type(cfg.epsilon)
    )


@dataclass
class TrainReport:
    epochs: int
    losses: np.ndarray  # per-epoch mean training loss
    elapsed_s: float

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


def train(
    model: LrcnModel,
    stream: np.ndarray,
    ends: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    callback=None,
) -> TrainReport:
    """Fit model in place on (stream windows -> targets) pairs.

    stream is (input_d, C); ends (N,) are inclusive window end columns;
    targets (N, output_dim).  callback, if given, is called as
    callback(epoch, loss) after each epoch.
    """
    ends = np.asarray(ends, dtype=np.int64)
    targets = np.ascontiguousarray(targets, dtype=model.dtype)
    n_samples = ends.shape[0]
    if targets.shape != (n_samples, model.arch.output_dim):
        raise ValueError("targets must be (n_samples, output_dim)")
    if n_samples == 0:
        raise ValueError("need at least one training sample")
    stream = np.ascontiguousarray(stream, dtype=model.dtype)
    # only the column range covered by the training windows matters
    lo = int(ends.min()) - (model.arch.input_n - 1)
    hi = int(ends.max()) + 1
    if lo < 0:
        raise ValueError("window end indices leave insufficient history")
    stream = np.ascontiguousarray(stream[:, lo:hi])
    ends = ends - lo

    shuffle_ss, dropout_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)

    state = AdamState.for_params(model.params)
    losses = np.empty(cfg.epochs, dtype=np.float64)
    n_in = model.arch.input_n
    t_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n_samples)
        loss_sum = 0.0
        for b0 in range(0, n_samples, cfg.batch_size):
            sel = perm[b0 : b0 + cfg.batch_size]
            drop_seed = int(dropout_rng.integers(0, 2**63))
            # the conv stack treats columns independently, so a batch is
            # run either over the shared stream span (cheap when windows
            # overlap heavily) or over its windows packed side by side
            e_sel = ends[sel]
            lo_b = int(e_sel.min()) - (n_in - 1)
            hi_b = int(e_sel.max()) + 1
            if e_sel.size * n_in < hi_b - lo_b:
                xb = np.concatenate(
                    [stream[:, e - n_in + 1 : e + 1] for e in e_sel], axis=1
                )
                ends_b = np.arange(1, e_sel.size + 1, dtype=np.int64) * n_in - 1
            elif lo_b == 0 and hi_b == stream.shape[1]:
                xb, ends_b = stream, e_sel
            else:
                xb = np.ascontiguousarray(stream[:, lo_b:hi_b])
                ends_b = e_sel - lo_b
            y, tape = forward_stream(
                model, xb, ends_b, mode="train", dropout_seed=drop_seed
            )
            t_batch = targets[sel]
            loss_sum += mse(y, t_batch) * sel.size
            grad = backward_stream(model, tape, mse_grad(y, t_batch))
            adam_step(model.params, grad, state, cfg)
        losses[epoch] = loss_sum / n_samples
        if not np.isfinite(losses[epoch]):
            raise RuntimeError(
                f"training diverged at epoch {epoch} (loss={losses[epoch]!r})"
            )
        if callback is not None:
            callback(epoch, losses[epoch])
    elapsed = time.perf_counter() - t_start
    return TrainReport(epochs=cfg.epochs, losses=losses, elapsed_s=elapsed)


@dataclass
class GradCheckReport:
    max_rel_err: float
    mean_rel_err: float
    n_checked: int
    worst_param: str


def grad_check(
    model: LrcnModel,
    n_check: int = 200,
    seed: int = 0,
    fd_eps: float = 1e-5,
    dropout_seed: int = 12345,
) -> GradCheckReport:
    """Compare the analytic gradient against central differences.

    Runs in float64 regardless of the model dtype.  The loss is MSE in
    train mode with a fixed dropout seed, so architectures with dropout
    get that path checked too.  Indices cover at least one element of
    every parameter tensor, with the remainder sampled at random.
    Parameters where analytic and numeric gradients are both below
    1e-10 are excluded (the relative error there is pure noise).
    """
    arch = model.arch
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_params = param_count(arch)
    n_check = min(n_check, n_params)

    model64 = LrcnModel(arch=arch, params=model.params.astype(np.float64))
    n_cols = arch.input_n + 3
    stream = rng.standard_normal((arch.input_d, n_cols))
    ends = np.arange(arch.input_n - 1, n_cols, dtype=np.int64)
    targets = rng.standard_normal((ends.size, arch.output_dim))

    def loss_at(params: np.ndarray) -> float:
        m = LrcnModel(arch=arch, params=params)
        y, _ = forward_stream(
            m, stream, ends, mode="train", dropout_seed=dropout_seed, keep_tape=False
        )
        return mse(y, targets)

    y, tape = forward_stream(
        model64, stream, ends, mode="train", dropout_seed=dropout_seed
    )
    analytic = backward_stream(model64, tape, mse_grad(y, targets))

    entries = layout(arch)
    picked = {e.offset + int(rng.integers(e.size)) for e in entries}
    while len(picked) < n_check:
        picked.add(int(rng.integers(n_params)))
    indices = np.array(sorted(picked), dtype=np.int64)

    name_of = np.empty(n_params, dtype=object)
    for e in entries:
        name_of[e.offset : e.offset + e.size] = e.name

    params = model64.params.copy()
    rel_errs: list[float] = []
    names: list[str] = []
    for idx in indices:
        orig = params[idx]
        params[idx] = orig + fd_eps
        up = loss_at(params)
        params[idx] = orig - fd_eps
        down = loss_at(params)
        params[idx] = orig
        numeric = (up - down) / (2.0 * fd_eps)
        ga = analytic[idx]
        if abs(ga) < 1e-10 and abs(numeric) < 1e-10:
            continue
        rel_errs.append(abs(ga - numeric) / max(abs(ga), abs(numeric), 1e-10))
        names.append(str(name_of[idx]))
    errs = np.asarray(rel_errs)
    worst = int(np.argmax(errs))
    return GradCheckReport(
        max_rel_err=float(errs[worst]),
        mean_rel_err=float(errs.mean()),
        n_checked=int(indices.size),
        worst_param=names[worst],
    )
