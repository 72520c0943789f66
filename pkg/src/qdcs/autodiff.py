"""Minimal reverse-mode engine over float64 numpy arrays.

Only the primitives the community-search network needs: (sparse x dense)
matmul, elementwise activations, batch normalization, inverted dropout,
row concat/split (for cross-query batch statistics), column concat and
entrywise aggregation (for fusion), and the binary cross-entropy loss.

Ops record onto the innermost active ``Tape``; with no tape active they
run eagerly, which is the inference fast path.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

_ACTIVE_TAPES: list["Tape"] = []

_CHECK_FINITE = os.environ.get("QDCS_CHECK_FINITE") == "1"


def check_finite_enabled() -> bool:
    # re-read so tests can toggle the env var
    return _CHECK_FINITE or os.environ.get("QDCS_CHECK_FINITE") == "1"


class Tensor:
    """Dense row-major float64 matrix, optionally trainable."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        if self.data.ndim == 1:
            self.data = self.data.reshape(-1, 1)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class SparseTensor:
    """Compressed-row sparse matrix; never trainable."""

    __slots__ = ("csr",)

    def __init__(self, matrix):
        csr = sp.csr_matrix(matrix, dtype=np.float64)
        csr.sort_indices()
        csr.eliminate_zeros()
        self.csr = csr

    @property
    def shape(self):
        return self.csr.shape

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def transpose(self) -> "SparseTensor":
        return SparseTensor(self.csr.T)


class Tape:
    """Records primitive ops in forward order; backward replays in reverse."""

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.pop()
        return False

    def _record(self, out: Tensor, backward_fn):
        self._records.append((out, backward_fn))

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every trainable leaf."""
        if loss.data.size != 1:
            raise ValueError("backward target must be a scalar")
        if not self._records:
            raise RuntimeError("backward before forward: tape is empty")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

        def push(t: Tensor, g: np.ndarray):
            # trainable tensors are leaves (never op outputs): accumulate directly
            if t.requires_grad:
                _accumulate(t, g)
                return
            cur = grads.get(id(t))
            grads[id(t)] = g if cur is None else cur + g

        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
        for out, backward_fn in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            backward_fn(g, push)


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _emit(data: np.ndarray, backward_fn) -> Tensor:
    if check_finite_enabled() and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by an op")
    out = Tensor(data)
    if _ACTIVE_TAPES:
        _ACTIVE_TAPES[-1]._record(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor | SparseTensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if isinstance(a, SparseTensor):
        data = a.csr @ b.data

        def backward(g, push):
            push(b, a.csr.T @ g)

        return _emit(data, backward)

    data = a.data @ b.data

    def backward(g, push):
        push(a, g @ b.data.T)
        push(b, a.data.T @ g)

    return _emit(data, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    data = a.data + b.data

    def backward(g, push):
        push(a, g)
        push(b, g)

    return _emit(data, backward)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a 1 x c bias row to every row of x."""
    if bias.shape != (1, x.shape[1]):
        raise ValueError(f"bias shape {bias.shape} does not match {x.shape}")
    data = x.data + bias.data

    def backward(g, push):
        push(x, g)
        push(bias, g.sum(axis=0, keepdims=True))

    return _emit(data, backward)


def scale(x: Tensor, s: float) -> Tensor:
    data = x.data * s

    def backward(g, push):
        push(x, g * s)

    return _emit(data, backward)


def relu(x: Tensor) -> Tensor:
    if not _ACTIVE_TAPES:  # eager fast path: no mask needed
        return _emit(np.maximum(x.data, 0.0), None)
    mask = x.data > 0
    data = np.where(mask, x.data, 0.0)

    def backward(g, push):
        push(x, g * mask)

    return _emit(data, backward)


def sigmoid(x: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g, push):
        push(x, g * data * (1.0 - data))

    return _emit(data, backward)


def concat_cols(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat_cols needs at least one input")
    data = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.shape[1] for p in parts]

    def backward(g, push):
        off = 0
        for p, w in zip(parts, widths):
            push(p, g[:, off:off + w])
            off += w

    return _emit(data, backward)


def concat_rows(parts: list[Tensor]) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=0)
    heights = [p.shape[0] for p in parts]

    def backward(g, push):
        off = 0
        for p, h in zip(parts, heights):
            push(p, g[off:off + h, :])
            off += h

    return _emit(data, backward)


def split_rows(x: Tensor, sizes: list[int]) -> list[Tensor]:
    if sum(sizes) != x.shape[0]:
        raise ValueError("split sizes do not cover the rows")
    outs = []
    off = 0
    for h in sizes:
        lo = off

        def backward(g, push, lo=lo, h=h):
            full = np.zeros_like(x.data)
            full[lo:lo + h, :] = g
            push(x, full)

        outs.append(_emit(x.data[off:off + h, :], backward))
        off += h
    return outs


def agg_sum(parts: list[Tensor]) -> Tensor:
    out = parts[0]
    for p in parts[1:]:
        out = add(out, p)
    return out


def agg_mean(parts: list[Tensor]) -> Tensor:
    return scale(agg_sum(parts), 1.0 / len(parts))


def _agg_extreme(parts: list[Tensor], take_max: bool) -> Tensor:
    stacked = np.stack([p.data for p in parts], axis=0)
    idx = np.argmax(stacked, axis=0) if take_max else np.argmin(stacked, axis=0)
    data = np.take_along_axis(stacked, idx[None, ...], axis=0)[0]

    def backward(g, push):
        for k, p in enumerate(parts):
            push(p, g * (idx == k))

    return _emit(data, backward)


def agg_max(parts: list[Tensor]) -> Tensor:
    return _agg_extreme(parts, take_max=True)


def agg_min(parts: list[Tensor]) -> Tensor:
    return _agg_extreme(parts, take_max=False)


# ---------------------------------------------------------------------------
# dropout


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if mode != "train" or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    factor = keep / (1.0 - rate)
    data = x.data * factor

    def backward(g, push):
        push(x, g * factor)

    return _emit(data, backward)


def dropout_sparse(x: SparseTensor, rate: float, mode: str,
                   rng: np.random.Generator) -> SparseTensor:
    """Inverted dropout on the stored nonzeros of a non-trainable operand."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if mode != "train" or rate == 0.0:
        return x
    csr = x.csr.copy()
    keep = rng.random(csr.data.shape) >= rate
    csr.data = csr.data * keep / (1.0 - rate)
    return SparseTensor(csr)


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormState:
    """Trainable scale/shift plus running statistics for one normalized tensor."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones((1, channels)), requires_grad=True)
        self.beta = Tensor(np.zeros((1, channels)), requires_grad=True)
        self.running_mean = np.zeros((1, channels))
        self.running_var = np.ones((1, channels))
        self.momentum = momentum
        self.eps = eps

    @property
    def channels(self) -> int:
        return self.gamma.shape[1]


def batch_norm(x: Tensor, state: BatchNormState, mode: str) -> Tensor:
    if x.shape[1] != state.channels:
        raise ValueError(f"batch_norm channel mismatch: {x.shape[1]} vs {state.channels}")
    if x.shape[0] == 0:
        raise ValueError("batch_norm on zero rows")
    gamma, beta = state.gamma, state.beta
    if mode == "train":
        m = x.shape[0]
        mu = x.data.mean(axis=0, keepdims=True)
        var = ((x.data - mu) ** 2).mean(axis=0, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mu) * inv_std
        state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mu
        state.running_var = (1 - state.momentum) * state.running_var + state.momentum * var
        data = gamma.data * xhat + beta.data

        def backward(g, push):
            push(beta, g.sum(axis=0, keepdims=True))
            push(gamma, (g * xhat).sum(axis=0, keepdims=True))
            gh = g * gamma.data
            push(x, inv_std * (gh - gh.mean(axis=0, keepdims=True)
                               - xhat * (gh * xhat).mean(axis=0, keepdims=True)))

        return _emit(data, backward)

    if mode == "infer":
        # folded into one scale/shift pass; inference is latency sensitive
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        scale = gamma.data * inv_std
        shift = beta.data - state.running_mean * scale
        data = x.data * scale + shift

        def backward(g, push):
            push(beta, g.sum(axis=0, keepdims=True))
            push(gamma, (g * (x.data - state.running_mean) * inv_std)
                 .sum(axis=0, keepdims=True))
            push(x, g * scale)

        return _emit(data, backward)

    raise ValueError(f"unknown batch_norm mode {mode!r}")


# ---------------------------------------------------------------------------
# loss

BCE_EPS = 1e-7


def bce_loss(z: Tensor, y: np.ndarray) -> Tensor:
    """Sum of per-entry binary cross entropies; y is a 0/1 indicator."""
    y = np.asarray(y, dtype=np.float64).reshape(z.shape)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bce_loss targets must be 0/1")
    zc = np.clip(z.data, BCE_EPS, 1.0 - BCE_EPS)
    inside = (z.data > BCE_EPS) & (z.data < 1.0 - BCE_EPS)
    data = np.array([[-(y * np.log(zc) + (1 - y) * np.log(1 - zc)).sum()]])

    def backward(g, push):
        dz = (-(y / zc) + (1 - y) / (1 - zc)) * inside
        push(z, g[0, 0] * dz)

    return _emit(data, backward)


def add_scalars(losses: list[Tensor]) -> Tensor:
    total = losses[0]
    for piece in losses[1:]:
        total = add(total, piece)
    return total
