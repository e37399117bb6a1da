"""Long-term recurrent convolutional network on speed patches.

Architecture: a stack of 1-D convolutions along the depth axis (tanh
activations, dropout, average-pool-2 between layers), whose per-column
encodings feed a stacked LSTM over the time axis, finished by a linear
head on the last time step.  Forward and backward passes are written
against a flat parameter vector with a fixed layout so models serialize
bit-exactly.

The convolutional stack treats time columns independently, so patches
that overlap in time (sliding windows over one recording) can share one
encoding pass: forward_stream/backward_stream run the conv stack once
over a whole stream and let each sample gather its window.  Columns are
processed in cache-sized blocks; the heavy products go through BLAS
gemm into preallocated buffers, which must be exactly shaped and
C-contiguous or scipy would silently operate on copies.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy.linalg import blas as _blas

GATE_NAMES = ("input", "forget", "cell", "output")

# Columns per conv block; chosen so one block's working set stays cache-resident.
_CONV_BLOCK_COLS = 192

# At or below this cin * kernel product the conv layer uses a small im2col
# GEMM instead of the tap-stacked product (mainly the 1-channel first layer).
_IM2COL_MAX_K = 32


@dataclass(frozen=True)
class ArchSpec:
    """Shape of the network; every derived dimension comes from here."""

    input_d: int = 560
    input_n: int = 300
    conv_channels: tuple[int, ...] = (64, 32, 16, 1)
    kernel_size: int = 9
    lstm_units: tuple[int, ...] = (10, 10)
    output_dim: int = 10
    dropout_rate: float = 0.2

    def __post_init__(self) -> None:
        if self.input_d <= 0 or self.input_n <= 0 or self.output_dim <= 0:
            raise ValueError("input_d, input_n and output_dim must be positive")
        if len(self.conv_channels) == 0 or any(c <= 0 for c in self.conv_channels):
            raise ValueError("conv_channels must be non-empty and positive")
        if self.kernel_size <= 0 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and positive")
        if any(u <= 0 for u in self.lstm_units):
            raise ValueError("lstm_units must be positive")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.input_d % (2**self.n_pools) != 0:
            raise ValueError(
                f"input_d={self.input_d} must be divisible by 2^{self.n_pools} "
                "(one average-pool-2 between consecutive conv layers)"
            )

    @property
    def n_conv_layers(self) -> int:
        return len(self.conv_channels)

    @property
    def n_pools(self) -> int:
        return len(self.conv_channels) - 1

    @property
    def conv_out_d(self) -> int:
        return self.input_d // (2**self.n_pools)

    @property
    def encoding_dim(self) -> int:
        return self.conv_channels[-1] * self.conv_out_d

    @property
    def dense_in(self) -> int:
        return self.lstm_units[-1] if self.lstm_units else self.encoding_dim

    def conv_depths(self) -> tuple[int, ...]:
        """Depth rows entering each conv layer."""
        return tuple(self.input_d // (2**i) for i in range(self.n_conv_layers))


@dataclass(frozen=True)
class ParamEntry:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def layout(arch: ArchSpec) -> tuple[ParamEntry, ...]:
    """Flat parameter layout: conv layers (weight then bias), LSTM layers
    (per gate in GATE_NAMES order: input weights, recurrent weights,
    bias), then the dense head (weight, bias)."""
    entries: list[ParamEntry] = []
    offset = 0

    def add(name: str, shape: tuple[int, ...]) -> None:
        nonlocal offset
        entries.append(ParamEntry(name=name, shape=shape, offset=offset))
        offset += int(np.prod(shape))

    cin = 1
    for i, cout in enumerate(arch.conv_channels):
        add(f"conv{i}.weight", (cout, cin, arch.kernel_size))
        add(f"conv{i}.bias", (cout,))
        cin = cout
    in_dim = arch.encoding_dim
    for j, units in enumerate(arch.lstm_units):
        for gate in GATE_NAMES:
            add(f"lstm{j}.{gate}.w_in", (units, in_dim))
            add(f"lstm{j}.{gate}.w_rec", (units, units))
            add(f"lstm{j}.{gate}.bias", (units,))
        in_dim = units
    add("dense.weight", (arch.output_dim, arch.dense_in))
    add("dense.bias", (arch.output_dim,))
    return tuple(entries)


def param_count(arch: ArchSpec) -> int:
    entries = layout(arch)
    last = entries[-1]
    return last.offset + last.size


def param_views(params: np.ndarray, arch: ArchSpec) -> dict[str, np.ndarray]:
    """Named views into the flat vector (no copies)."""
    if params.ndim != 1 or params.shape[0] != param_count(arch):
        raise ValueError("parameter vector does not match the architecture")
    return {
        e.name: params[e.offset : e.offset + e.size].reshape(e.shape)
        for e in layout(arch)
    }


def init_params(arch: ArchSpec, seed: int = 0, dtype: str | np.dtype = "float32") -> np.ndarray:
    """Glorot-uniform weights, zero biases, forget-gate bias of one.

    Tensors are drawn in layout order from a generator seeded with
    SeedSequence(seed), so initialization is bit-reproducible.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    params = np.zeros(param_count(arch), dtype=dtype)
    views = param_views(params, arch)
    for e in layout(arch):
        view = views[e.name]
        if e.name.endswith(".bias"):
            if ".forget." in e.name:
                view[:] = 1.0
            continue
        if e.name.endswith(".w_rec"):
            fan_in = fan_out = e.shape[0]
        elif e.name.startswith("conv"):
            cout, cin, k = e.shape
            fan_in, fan_out = cin * k, cout * k
        else:  # lstm w_in and dense weight: (out, in)
            fan_out, fan_in = e.shape
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        view[:] = rng.uniform(-lim, lim, size=e.shape)
    return params


@dataclass
class LrcnModel:
    arch: ArchSpec
    params: np.ndarray  # flat, float32 or float64

    def __post_init__(self) -> None:
        self.params = np.ascontiguousarray(self.params)
        if self.params.shape != (param_count(self.arch),):
            raise ValueError("parameter vector does not match the architecture")

    @property
    def dtype(self) -> np.dtype:
        return self.params.dtype


def make_model(arch: ArchSpec, seed: int = 0, dtype: str | np.dtype = "float32") -> LrcnModel:
    return LrcnModel(arch=arch, params=init_params(arch, seed=seed, dtype=dtype))


# --------------------------------------------------------------------------
# BLAS helpers.  Row-major C = A @ B (+ beta * C): scipy's gemm wants
# Fortran order, so operands are fed transposed ((A@B)^T = B^T A^T); the
# callers guarantee C-contiguity.


def _gemm(dtype: np.dtype):
    return _blas.dgemm if dtype == np.float64 else _blas.sgemm


def _mm_acc(c: np.ndarray, a: np.ndarray, b: np.ndarray, beta: float) -> None:
    """c = a @ b + beta * c for C-contiguous 2-D arrays."""
    _gemm(c.dtype)(1.0, b.T, a.T, beta=beta, c=c.T, overwrite_c=True)


def _mm_tap(c: np.ndarray, at: np.ndarray, b: np.ndarray) -> None:
    """c = at.T @ b... no: c^T = at @ b with at, b, c C-contiguous.

    Computes c (rows x cols) where c.T = at @ b, used for the stacked
    tap product: at is the (N, cin) padded-input matrix, b the (cin, R)
    transposed weight stack, c the (R, N) output.
    """
    _gemm(c.dtype)(1.0, at.T, b, beta=0.0, c=c.T, overwrite_c=True, trans_a=True)


# --------------------------------------------------------------------------
# Conv stack over a column stream.


def _block_ranges(n_cols: int, block: int = _CONV_BLOCK_COLS) -> list[tuple[int, int]]:
    return [(c0, min(c0 + block, n_cols)) for c0 in range(0, n_cols, block)]


def _dropout_mask(seed: int, layer: int, block: int, n: int, keep: float) -> np.ndarray:
    """Deterministic keep-mask of n bools for one (layer, column block).

    P(keep) = floor(keep * 2^32) / 2^32 on raw uint32 draws, so the same
    (seed, layer, block) always yields the same mask.
    """
    bitgen = np.random.SFC64(np.random.SeedSequence(entropy=seed, spawn_key=(layer, block)))
    raw = bitgen.random_raw((n + 1) // 2)
    return raw.view(np.uint32)[:n] < np.uint32(int(keep * 2**32))


class _Workspace:
    """Reusable scratch arrays keyed by (tag, layer, ncols).

    Buffers are exactly shaped: BLAS output buffers must be C-contiguous
    views, so sliced oversize buffers are not an option.  Zero-requested
    buffers are zeroed once; users only ever overwrite the same interior
    region, so padding borders stay zero across reuses.
    """

    def __init__(self) -> None:
        self._cache: dict[tuple, np.ndarray] = {}

    def get(self, key: tuple, shape: tuple[int, ...], dtype: np.dtype, zero: bool = False) -> np.ndarray:
        arr = self._cache.get(key)
        if arr is None:
            arr = np.zeros(shape, dtype=dtype) if zero else np.empty(shape, dtype=dtype)
            self._cache[key] = arr
        return arr


def _wstack(w: np.ndarray) -> np.ndarray:
    """(cout, cin, k) -> (k * cout, cin), tap-major."""
    return np.ascontiguousarray(w.transpose(2, 0, 1).reshape(-1, w.shape[1]))


def _conv_layer_block(
    w: np.ndarray,
    wstack: np.ndarray,
    x_block: np.ndarray,
    ws: _Workspace,
    layer_key,
    ncols: int,
) -> np.ndarray:
    """Convolve one column block: x_block (cin, d, ncols) -> (cout, d, ncols).

    The depth-padded input is kept in (depth, col, channel) order so both
    this product and the weight-gradient taps can slice it contiguously.
    Returns a workspace array (overwritten on the next call).
    """
    cout, cin, k = w.shape
    d = x_block.shape[1]
    pad = k // 2
    dtype = x_block.dtype
    xt = ws.get(("xt", layer_key, ncols), (d + k - 1, ncols, cin), dtype, zero=True)
    xt[pad : pad + d] = x_block.transpose(1, 2, 0)
    z = ws.get(("z", layer_key, ncols), (cout, d, ncols), dtype)
    if cin * k <= _IM2COL_MAX_K:
        xcol = ws.get(("xcol", layer_key, ncols), (cin * k, d * ncols), dtype)
        xc4 = xcol.reshape(cin, k, d, ncols)
        for t in range(k):
            xc4[:, t] = xt[t : t + d].transpose(2, 0, 1)
        _mm_acc(z.reshape(cout, -1), w.reshape(cout, -1), xcol, beta=0.0)
    else:
        ys = ws.get(("ys", layer_key, ncols), (k * cout, (d + k - 1) * ncols), dtype)
        _mm_tap(ys, xt.reshape(-1, cin), wstack.T)
        ys4 = ys.reshape(k, cout, d + k - 1, ncols)
        np.copyto(z, ys4[0, :, 0:d, :])
        for t in range(1, k):
            z += ys4[t, :, t : t + d, :]
    return z


def _apply_pool(a: np.ndarray) -> np.ndarray:
    ch, d, n = a.shape
    return a.reshape(ch, d // 2, 2, n).mean(axis=2)


@dataclass
class LrcnTape:
    """Everything backward needs.

    Conv activations are deliberately absent: they are recomputed block
    by block during the backward pass from the taped stream and dropout
    seed (bitwise identical to the forward pass), which keeps the tape's
    footprint independent of the stream width.
    """

    stream: np.ndarray  # (d, C) input columns
    ends: np.ndarray  # (B,) window end indices
    train: bool
    dropout_seed: int
    lstm_x: list[np.ndarray]  # per layer input (n, B, in)
    lstm_gates: list[np.ndarray]  # per layer (n, B, 4u) post-activation, [i|f|g|o]
    lstm_c: list[np.ndarray]  # per layer (n, B, u) cell states
    lstm_ct: list[np.ndarray]  # per layer (n, B, u) tanh(cell)
    lstm_h: list[np.ndarray]  # per layer (n, B, u) hidden states
    dense_in: np.ndarray  # (B, dense_in)
    outputs: np.ndarray  # (B, k)
    params_crc: int  # checksum of the parameter vector at forward time


def _conv_layers(
    views: dict[str, np.ndarray], arch: ArchSpec
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(weight, tap-stacked weight, bias) for every conv layer."""
    out = []
    for i in range(arch.n_conv_layers):
        w = views[f"conv{i}.weight"]
        stacked = _wstack(w) if w.shape[1] * arch.kernel_size > _IM2COL_MAX_K else w
        out.append((w, stacked, views[f"conv{i}.bias"]))
    return out


def _conv_block_forward(
    layers: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    arch: ArchSpec,
    x0_block: np.ndarray,
    train: bool,
    dropout_seed: int,
    bi: int,
    ws: _Workspace,
) -> list[np.ndarray]:
    """Post-dropout activations of every conv layer for one column block.

    x0_block is (1, input_d, nc) for block index bi.  The returned
    arrays are workspace buffers overwritten by the next block's call.
    """
    dtype = x0_block.dtype
    nc = x0_block.shape[2]
    drop = train and arch.dropout_rate > 0.0
    scale = dtype.type(1.0 / (1.0 - arch.dropout_rate)) if drop else dtype.type(1.0)
    acts: list[np.ndarray] = []
    cur = x0_block
    for l, (w, wstack, b) in enumerate(layers):
        z = _conv_layer_block(w, wstack, cur, ws, l, nc)
        z += b[:, None, None]
        np.tanh(z, out=z)
        if drop:
            keep = 1.0 - arch.dropout_rate
            mask = _dropout_mask(dropout_seed, l, bi, z.size, keep).reshape(z.shape)
            maskf = ws.get(("maskf", l, nc), z.shape, dtype)
            np.multiply(mask, scale, out=maskf)
            z *= maskf
        acts.append(z)
        cur = _apply_pool(z) if l < arch.n_conv_layers - 1 else z
    return acts


def _conv_stack_forward(
    views: dict[str, np.ndarray],
    arch: ArchSpec,
    stream: np.ndarray,
    train: bool,
    dropout_seed: int,
    keep_acts: bool = False,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run the conv stack over all columns; returns (E, post-dropout acts).

    E is (encoding_dim, C).  Full-stream activations are only
    materialized on request (white-box inspection); production callers
    keep just the encodings.
    """
    dtype = stream.dtype
    n_cols = stream.shape[1]
    ws = _Workspace()
    layers = _conv_layers(views, arch)

    acts: list[np.ndarray] = []
    if keep_acts:
        for d_l, cout in zip(arch.conv_depths(), arch.conv_channels):
            acts.append(np.empty((cout, d_l, n_cols), dtype=dtype))
    enc = np.empty((arch.encoding_dim, n_cols), dtype=dtype)

    for bi, (c0, c1) in enumerate(_block_ranges(n_cols)):
        block_acts = _conv_block_forward(
            layers, arch, stream[None, :, c0:c1], train, dropout_seed, bi, ws
        )
        if keep_acts:
            for l in range(arch.n_conv_layers):
                acts[l][:, :, c0:c1] = block_acts[l]
        enc[:, c0:c1] = block_acts[-1].reshape(-1, c1 - c0)
    return enc, acts


def _conv_stack_backward(
    views: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    arch: ArchSpec,
    tape: LrcnTape,
    d_enc: np.ndarray,
) -> None:
    """Backprop through the conv stack, accumulating into grads views.

    Recomputes pooled layer inputs and dropout masks per block instead of
    storing them; the tape only holds the post-dropout activations.
    """
    dtype = d_enc.dtype
    stream = tape.stream
    n_cols = stream.shape[1]
    n_layers = arch.n_conv_layers
    k = arch.kernel_size
    pad = k // 2
    depths = arch.conv_depths()
    drop = tape.train and arch.dropout_rate > 0.0
    scale = dtype.type(1.0 / (1.0 - arch.dropout_rate)) if drop else dtype.type(1.0)
    inv_scale = dtype.type(1.0) / scale

    ws = _Workspace()
    layers = _conv_layers(views, arch)
    weights = [w for w, _, _ in layers]
    # Transposed, tap-flipped weights turn the input-gradient correlation
    # into the same tap-stacked product as the forward pass.
    wt_stacks = [
        _wstack(np.ascontiguousarray(w.transpose(1, 0, 2)[:, :, ::-1])) for w in weights
    ]
    dw_acc = [np.zeros((k,) + weights[l].shape[:2], dtype=dtype) for l in range(n_layers)]
    db_acc = [np.zeros(weights[l].shape[0], dtype=np.float64) for l in range(n_layers)]

    d_enc3 = d_enc.reshape(arch.conv_channels[-1], arch.conv_out_d, n_cols)

    for bi, (c0, c1) in enumerate(_block_ranges(n_cols)):
        nc = c1 - c0
        # Checkpointing: replay this block's forward (identical GEMM
        # shapes and dropout masks, so bitwise identical activations).
        block_acts = _conv_block_forward(
            layers, arch, stream[None, :, c0:c1], tape.train, tape.dropout_seed, bi, ws
        )
        d_act = d_enc3[:, :, c0:c1].copy()
        for l in range(n_layers - 1, -1, -1):
            act = block_acts[l]
            # d_act is the gradient at the post-dropout activation; undo
            # dropout and tanh to reach the pre-activation.  The
            # activation is scale * tanh where kept, so tanh^2 is
            # act^2 / scale^2 there; where dropped, d_act is zeroed and
            # the tanh term is irrelevant.
            tmp = ws.get(("tanh2", l, nc), act.shape, dtype)
            np.multiply(act, act, out=tmp)
            if drop:
                keep = 1.0 - arch.dropout_rate
                mask = _dropout_mask(tape.dropout_seed, l, bi, act.size, keep).reshape(act.shape)
                maskf = ws.get(("maskf", l, nc), act.shape, dtype)
                np.multiply(mask, scale, out=maskf)
                d_act *= maskf
                tmp *= inv_scale * inv_scale
            np.subtract(dtype.type(1.0), tmp, out=tmp)
            d_act *= tmp
            dz = d_act
            db_acc[l] += dz.sum(axis=(1, 2), dtype=np.float64)

            # weight gradient, sharing the forward's padded-input layout
            if l == 0:
                x_in = stream[None, :, c0:c1]
            else:
                prev = block_acts[l - 1]
                x_in = prev[:, 0::2, :] + prev[:, 1::2, :]
                x_in *= dtype.type(0.5)
            cin = weights[l].shape[1]
            d_l = depths[l]
            xt = ws.get(("xt", l, nc), (d_l + k - 1, nc, cin), dtype, zero=True)
            xt[pad : pad + d_l] = x_in.transpose(1, 2, 0)
            dz_flat = dz.reshape(dz.shape[0], -1)
            for t in range(k):
                xt_view = xt[t : t + d_l].reshape(d_l * nc, cin)
                _mm_acc(dw_acc[l][t], dz_flat, xt_view, beta=1.0)

            if l > 0:
                # input gradient via the tap-stacked correlation
                cout = weights[l].shape[0]
                dzt = ws.get(("dzt", l, nc), (d_l + k - 1, nc, cout), dtype, zero=True)
                dzt[pad : pad + d_l] = dz.transpose(1, 2, 0)
                dy = ws.get(("dy", l, nc), (k * cin, (d_l + k - 1) * nc), dtype)
                _mm_tap(dy, dzt.reshape(-1, cout), wt_stacks[l].T)
                dy4 = dy.reshape(k, cin, d_l + k - 1, nc)
                dx = dy4[0, :, 0:d_l, :].copy()
                for t in range(1, k):
                    dx += dy4[t, :, t : t + d_l, :]
                # through the average pool: each input row pair shares the
                # gradient of its mean
                d_prev = np.empty((cin, 2 * d_l, nc), dtype=dtype)
                dp4 = d_prev.reshape(cin, d_l, 2, nc)
                dx *= dtype.type(0.5)
                dp4[:, :, 0, :] = dx
                dp4[:, :, 1, :] = dx
                d_act = d_prev

    for l in range(n_layers):
        grads[f"conv{l}.weight"][...] += dw_acc[l].transpose(1, 2, 0)
        grads[f"conv{l}.bias"][...] += db_acc[l].astype(dtype)


# --------------------------------------------------------------------------
# LSTM stack and dense head.


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    np.negative(x, out=out)
    np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


def _fused_lstm_weights(
    views: dict[str, np.ndarray], j: int, units: int, in_dim: int, dtype: np.dtype
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    wx = np.empty((4 * units, in_dim), dtype=dtype)
    wh = np.empty((4 * units, units), dtype=dtype)
    b = np.empty(4 * units, dtype=dtype)
    for g, gate in enumerate(GATE_NAMES):
        sl = slice(g * units, (g + 1) * units)
        wx[sl] = views[f"lstm{j}.{gate}.w_in"]
        wh[sl] = views[f"lstm{j}.{gate}.w_rec"]
        b[sl] = views[f"lstm{j}.{gate}.bias"]
    return wx, wh, b


def _lstm_layer_forward(
    x_all: np.ndarray, wx: np.ndarray, wh: np.ndarray, b: np.ndarray, units: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """x_all (n, B, in) -> (gates, c, ct, h), each (n, B, ...).

    Gates are stored post-activation in [input | forget | cell | output]
    column order; initial hidden and cell states are zero.
    """
    n, bsz, in_dim = x_all.shape
    dtype = x_all.dtype
    xp = x_all.reshape(n * bsz, in_dim) @ wx.T
    xp += b
    xp = xp.reshape(n, bsz, 4 * units)
    gates = np.empty((n, bsz, 4 * units), dtype=dtype)
    c_all = np.empty((n, bsz, units), dtype=dtype)
    ct_all = np.empty((n, bsz, units), dtype=dtype)
    h_all = np.empty((n, bsz, units), dtype=dtype)
    h = np.zeros((bsz, units), dtype=dtype)
    c = np.zeros((bsz, units), dtype=dtype)
    u = units
    for t in range(n):
        z = xp[t] + h @ wh.T
        gi = _sigmoid(z[:, :u])
        gf = _sigmoid(z[:, u : 2 * u])
        gg = np.tanh(z[:, 2 * u : 3 * u])
        go = _sigmoid(z[:, 3 * u :])
        c = gf * c + gi * gg
        ct = np.tanh(c)
        h = go * ct
        gates[t, :, :u] = gi
        gates[t, :, u : 2 * u] = gf
        gates[t, :, 2 * u : 3 * u] = gg
        gates[t, :, 3 * u :] = go
        c_all[t] = c
        ct_all[t] = ct
        h_all[t] = h
    return gates, c_all, ct_all, h_all


def _lstm_layer_backward(
    x_all: np.ndarray,
    gates: np.ndarray,
    c_all: np.ndarray,
    ct_all: np.ndarray,
    h_all: np.ndarray,
    wx: np.ndarray,
    wh: np.ndarray,
    dh_all: np.ndarray,
    units: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx_all, dwx, dwh, db); dh_all may carry grads at any steps."""
    n, bsz, in_dim = x_all.shape
    dtype = x_all.dtype
    u = units
    dz_all = np.empty((n, bsz, 4 * u), dtype=dtype)
    dh = np.zeros((bsz, u), dtype=dtype)
    dc = np.zeros((bsz, u), dtype=dtype)
    zeros_c = np.zeros((bsz, u), dtype=dtype)
    for t in range(n - 1, -1, -1):
        dh = dh + dh_all[t]
        gi = gates[t, :, :u]
        gf = gates[t, :, u : 2 * u]
        gg = gates[t, :, 2 * u : 3 * u]
        go = gates[t, :, 3 * u :]
        ct = ct_all[t]
        c_prev = c_all[t - 1] if t > 0 else zeros_c
        do = dh * ct
        dc = dc + dh * go * (1.0 - ct * ct)
        dz = dz_all[t]
        dz[:, :u] = (dc * gg) * gi * (1.0 - gi)
        dz[:, u : 2 * u] = (dc * c_prev) * gf * (1.0 - gf)
        dz[:, 2 * u : 3 * u] = (dc * gi) * (1.0 - gg * gg)
        dz[:, 3 * u :] = do * go * (1.0 - go)
        dh = dz @ wh
        dc = dc * gf
    dz_flat = dz_all.reshape(n * bsz, 4 * u)
    dwx = dz_flat.T @ x_all.reshape(n * bsz, in_dim)
    h_prev = np.zeros_like(h_all)
    h_prev[1:] = h_all[:-1]
    dwh = dz_flat.T @ h_prev.reshape(n * bsz, u)
    db = dz_flat.sum(axis=0)
    dx_all = (dz_flat @ wx).reshape(n, bsz, in_dim)
    return dx_all, dwx, dwh, db


# --------------------------------------------------------------------------
# Public forward / backward.


def forward_stream(
    model: LrcnModel,
    stream: np.ndarray,
    ends: np.ndarray,
    mode: str = "infer",
    dropout_seed: int = 0,
    keep_tape: bool = True,
) -> tuple[np.ndarray, LrcnTape | None]:
    """Forward over a column stream with one output per window end index.

    stream is (input_d, C); ends holds inclusive window end columns, each
    needing input_n columns of history.  Returns (outputs (B, k), tape).
    """
    arch = model.arch
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    train = mode == "train"
    stream = np.ascontiguousarray(stream, dtype=model.dtype)
    if stream.ndim != 2 or stream.shape[0] != arch.input_d:
        raise ValueError(f"stream must be ({arch.input_d}, C)")
    ends = np.atleast_1d(np.asarray(ends, dtype=np.int64))
    n = arch.input_n
    if ends.size == 0:
        raise ValueError("need at least one window end index")
    if ends.min() < n - 1 or ends.max() >= stream.shape[1]:
        raise ValueError("window end indices out of range for the stream")

    views = param_views(model.params, arch)
    enc, _ = _conv_stack_forward(views, arch, stream, train, dropout_seed)

    idx = ends[:, None] - (n - 1) + np.arange(n)[None, :]
    x_all = np.ascontiguousarray(enc[:, idx].transpose(2, 1, 0))  # (n, B, enc)

    lstm_x: list[np.ndarray] = []
    lstm_gates: list[np.ndarray] = []
    lstm_c: list[np.ndarray] = []
    lstm_ct: list[np.ndarray] = []
    lstm_h: list[np.ndarray] = []
    cur = x_all
    in_dim = arch.encoding_dim
    for j, units in enumerate(arch.lstm_units):
        wx, wh, b = _fused_lstm_weights(views, j, units, in_dim, model.dtype)
        gates, c_all, ct_all, h_all = _lstm_layer_forward(cur, wx, wh, b, units)
        lstm_x.append(cur)
        lstm_gates.append(gates)
        lstm_c.append(c_all)
        lstm_ct.append(ct_all)
        lstm_h.append(h_all)
        cur = h_all
        in_dim = units

    dense_in = np.ascontiguousarray(cur[-1])  # (B, dense_in), last time step
    y = dense_in @ views["dense.weight"].T + views["dense.bias"]

    tape = None
    if keep_tape:
        tape = LrcnTape(
            stream=stream,
            ends=ends,
            train=train,
            dropout_seed=dropout_seed,
            lstm_x=lstm_x,
            lstm_gates=lstm_gates,
            lstm_c=lstm_c,
            lstm_ct=lstm_ct,
            lstm_h=lstm_h,
            dense_in=dense_in,
            outputs=y,
            params_crc=zlib.crc32(model.params.tobytes()),
        )
    return y, tape


def backward_stream(model: LrcnModel, tape: LrcnTape, d_outputs: np.ndarray) -> np.ndarray:
    """Gradient of the loss wrt the flat parameters, given d loss/d outputs.

    d_outputs is (B, k) matching tape.outputs; contributions from all
    windows are accumulated (overlapping windows share conv columns).
    """
    arch = model.arch
    dtype = model.dtype
    d_out = np.ascontiguousarray(d_outputs, dtype=dtype)
    if d_out.shape != tape.outputs.shape:
        raise ValueError("d_outputs shape does not match the forward outputs")
    if zlib.crc32(model.params.tobytes()) != tape.params_crc:
        raise ValueError("stale tape: model parameters changed since the forward pass")
    views = param_views(model.params, arch)
    grad_flat = np.zeros_like(model.params)
    grads = param_views(grad_flat, arch)

    grads["dense.weight"][...] = d_out.T @ tape.dense_in
    grads["dense.bias"][...] = d_out.sum(axis=0)
    dh_last = d_out @ views["dense.weight"]  # (B, dense_in)

    n = arch.input_n
    bsz = tape.ends.shape[0]
    d_cur: np.ndarray | None = None
    for j in range(len(arch.lstm_units) - 1, -1, -1):
        units = arch.lstm_units[j]
        in_dim = arch.encoding_dim if j == 0 else arch.lstm_units[j - 1]
        wx, wh, _ = _fused_lstm_weights(views, j, units, in_dim, dtype)
        if d_cur is None:
            d_cur = np.zeros((n, bsz, units), dtype=dtype)
            d_cur[-1] = dh_last
        dx_all, dwx, dwh, db = _lstm_layer_backward(
            tape.lstm_x[j], tape.lstm_gates[j], tape.lstm_c[j], tape.lstm_ct[j],
            tape.lstm_h[j], wx, wh, d_cur, units,
        )
        for g, gate in enumerate(GATE_NAMES):
            sl = slice(g * units, (g + 1) * units)
            grads[f"lstm{j}.{gate}.w_in"][...] = dwx[sl]
            grads[f"lstm{j}.{gate}.w_rec"][...] = dwh[sl]
            grads[f"lstm{j}.{gate}.bias"][...] = db[sl]
        d_cur = dx_all

    if arch.lstm_units:
        d_x0 = d_cur  # (n, B, encoding_dim)
    else:
        d_x0 = np.zeros((n, bsz, arch.encoding_dim), dtype=dtype)
        d_x0[-1] = dh_last

    d_enc = np.zeros((arch.encoding_dim, tape.stream.shape[1]), dtype=dtype)
    for b in range(bsz):
        e = int(tape.ends[b])
        d_enc[:, e - n + 1 : e + 1] += d_x0[:, b, :].T

    _conv_stack_backward(views, grads, arch, tape, d_enc)
    return grad_flat


def forward(
    model: LrcnModel,
    patch: np.ndarray,
    mode: str = "infer",
    dropout_seed: int = 0,
) -> tuple[np.ndarray, LrcnTape]:
    """Forward one (input_d, input_n) patch; returns (y (output_dim,), tape)."""
    arch = model.arch
    patch = np.asarray(patch)
    if patch.shape != (arch.input_d, arch.input_n):
        raise ValueError(f"patch must be ({arch.input_d}, {arch.input_n})")
    y, tape = forward_stream(
        model, patch, np.asarray([arch.input_n - 1]), mode=mode, dropout_seed=dropout_seed
    )
    assert tape is not None
    return y[0], tape


def backward(model: LrcnModel, tape: LrcnTape, d_output: np.ndarray) -> np.ndarray:
    """Gradient for a single-patch forward; d_output is (output_dim,)."""
    d_output = np.asarray(d_output)
    if d_output.ndim == 1:
        d_output = d_output[None, :]
    return backward_stream(model, tape, d_output)


def encode_stream(model: LrcnModel, stream: np.ndarray) -> np.ndarray:
    """Inference-mode conv encodings (encoding_dim, C) without a tape."""
    views = param_views(model.params, model.arch)
    stream = np.ascontiguousarray(stream, dtype=model.dtype)
    enc, _ = _conv_stack_forward(
        views, model.arch, stream, train=False, dropout_seed=0, keep_acts=False
    )
    return enc


def predict_from_encodings(
    model: LrcnModel, enc: np.ndarray, ends: np.ndarray
) -> np.ndarray:
    """Run the recurrent head over windows of precomputed encodings."""
    arch = model.arch
    views = param_views(model.params, model.arch)
    ends = np.atleast_1d(np.asarray(ends, dtype=np.int64))
    n = arch.input_n
    if ends.size == 0:
        return np.zeros((0, arch.output_dim), dtype=model.dtype)
    if ends.min() < n - 1 or ends.max() >= enc.shape[1]:
        raise ValueError("window end indices out of range for the encodings")
    idx = ends[:, None] - (n - 1) + np.arange(n)[None, :]
    cur = np.ascontiguousarray(enc[:, idx].transpose(2, 1, 0))
    in_dim = arch.encoding_dim
    for j, units in enumerate(arch.lstm_units):
        wx, wh, b = _fused_lstm_weights(views, j, units, in_dim, model.dtype)
        _, _, _, h_all = _lstm_layer_forward(cur, wx, wh, b, units)
        cur = h_all
        in_dim = units
    return cur[-1] @ views["dense.weight"].T + views["dense.bias"]
