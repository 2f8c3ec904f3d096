"""Minimal reverse-mode tensor engine: exactly the primitives the reasoning
module needs, recorded on an explicit single-use tape.

Values are float32 by default (float64 inputs pass through unchanged, which
the gradient-check oracle relies on). Loss and normalization reductions
accumulate in float64 before casting back. Every forward output is checked
finite while CHECK_FINITE is on.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError

CHECK_FINITE = True
NEG_INF = -1e9


class SingleUseError(RuntimeError):
    """Backward was called twice on one tape."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=np.float32):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"


class Tape:
    """Ordered operation record; the reverse walk visits each node once."""

    __slots__ = ("nodes", "consumed")

    def __init__(self):
        self.nodes: list[tuple] = []
        self.consumed = False

    def record(self, backward_fn, inputs: tuple, out: Tensor) -> None:
        self.nodes.append((backward_fn, inputs, out))


def _finite_or_raise(arr: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by {op}")


def _make(tape: Tape | None, data: np.ndarray, op: str, inputs: tuple, backward_fn) -> Tensor:
    _finite_or_raise(data, op)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires, dtype=data.dtype)
    if tape is not None and requires:
        tape.record(backward_fn, inputs, out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --- elementwise and structural primitives ---------------------------------

def add(tape, a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(tape, data, "add", (a, b), bwd)


def mul(tape, a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _make(tape, data, "mul", (a, b), bwd)


def scale(tape, a: Tensor, s: float) -> Tensor:
    data = a.data * s

    def bwd(g):
        return (g * s,)

    return _make(tape, data, "scale", (a,), bwd)


def matmul(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise NumericError("matmul expects >= 2-d operands")
    if b.data.ndim == 2 and a.data.ndim > 2:
        # Flatten leading axes so BLAS sees one large GEMM instead of a
        # batch of small ones; the weight gradient then needs no reduction.
        k = a.data.shape[-1]
        lead = a.data.shape[:-1]
        a2 = a.data.reshape(-1, k)
        data = (a2 @ b.data).reshape(*lead, b.data.shape[-1])

        def bwd_flat(g):
            g2 = g.reshape(-1, b.data.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.data.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _make(tape, data, "matmul", (a, b), bwd_flat)
    data = a.data @ b.data

    def bwd(g):
        ga = gb = None
        if a.requires_grad:
            ga = _reduce_batch(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            gb = _reduce_batch(gb, b.data.shape)
        return ga, gb

    return _make(tape, data, "matmul", (a, b), bwd)


def _reduce_batch(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i in range(len(shape) - 2) if shape[i] == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def transpose(tape, a: Tensor, axes: tuple | None = None) -> Tensor:
    perm = tuple(axes) if axes is not None else tuple(reversed(range(a.data.ndim)))
    data = np.transpose(a.data, perm)
    inverse = np.argsort(perm)

    def bwd(g):
        return (np.transpose(g, inverse),)

    return _make(tape, data, "transpose", (a,), bwd)


def reshape(tape, a: Tensor, shape: tuple) -> Tensor:
    data = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return _make(tape, data, "reshape", (a,), bwd)


def concat(tape, tensors: list[Tensor], axis: int) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _make(tape, data, "concat", tuple(tensors), bwd)


def slice_axis(tape, a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    data = a.data[index]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(tape, data, "slice", (a,), bwd)


def embedding_lookup(tape, table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    data = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return (gt,)

    return _make(tape, data, "embedding_lookup", (table,), bwd)


def gather_rows(tape, a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx)
    data = a.data[idx]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(tape, data, "gather_rows", (a,), bwd)


def relu(tape, a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def bwd(g):
        return (g * (a.data > 0),)

    return _make(tape, data, "relu", (a,), bwd)


def sum_all(tape, a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(dtype=np.float64), dtype=a.data.dtype)

    def bwd(g):
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype),)

    return _make(tape, data, "sum_all", (a,), bwd)


# --- normalization and attention -------------------------------------------

def layer_norm(tape, x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    # Per-row statistics accumulate in float64; the arrays stay in the
    # working dtype.
    mu = x.data.mean(axis=-1, keepdims=True, dtype=np.float64)
    diff = x.data - mu.astype(x.data.dtype)
    var = np.mean(diff * diff, axis=-1, keepdims=True, dtype=np.float64)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
    x_hat = diff * inv_std
    data = x_hat * gamma.data + beta.data
    d = x.data.shape[-1]

    def bwd(g):
        gx = ggamma = gbeta = None
        if gamma.requires_grad:
            ggamma = (g * x_hat).reshape(-1, d).sum(axis=0, dtype=np.float64).astype(gamma.data.dtype)
        if beta.requires_grad:
            gbeta = g.reshape(-1, d).sum(axis=0, dtype=np.float64).astype(beta.data.dtype)
        if x.requires_grad:
            dxh = g * gamma.data
            mean_dxh = dxh.mean(axis=-1, keepdims=True, dtype=np.float64).astype(x.data.dtype)
            mean_dxh_xh = np.mean(dxh * x_hat, axis=-1, keepdims=True, dtype=np.float64).astype(x.data.dtype)
            gx = inv_std * (dxh - mean_dxh - x_hat * mean_dxh_xh)
        return gx, ggamma, gbeta

    return _make(tape, data, "layer_norm", (x, gamma, beta), bwd)


def softmax(tape, x: Tensor, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Softmax with an optional additive mask (use NEG_INF entries to drop
    keys; they come out exactly zero). Each row must keep one live entry."""
    logits = x.data if mask is None else (x.data + mask).astype(x.data.dtype)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=axis, keepdims=True, dtype=np.float64)
    data = (exp / denom).astype(x.data.dtype)

    def bwd(g):
        inner = np.sum(g * data, axis=axis, keepdims=True, dtype=np.float64).astype(x.data.dtype)
        return (data * (g - inner),)

    return _make(tape, data, "softmax", (x,), bwd)


def scaled_dot_attention(tape, q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d) + mask) v, composed from taped primitives."""
    d = q.data.shape[-1]
    perm = tuple(range(k.data.ndim - 2)) + (k.data.ndim - 1, k.data.ndim - 2)
    scores = scale(tape, matmul(tape, q, transpose(tape, k, perm)), 1.0 / np.sqrt(d))
    weights = softmax(tape, scores, mask=mask, axis=-1)
    return matmul(tape, weights, v)


def dropout_mask(tape, a: Tensor, mask: np.ndarray, keep_prob: float) -> Tensor:
    scaled_mask = mask.astype(a.data.dtype) / keep_prob
    data = a.data * scaled_mask

    def bwd(g):
        return (g * scaled_mask,)

    return _make(tape, data, "dropout", (a,), bwd)


def dropout(tape, a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    if rate <= 0.0:
        return a
    if rate >= 1.0:
        raise NumericError("dropout rate must be < 1")
    mask = rng.random(a.data.shape) >= rate
    return dropout_mask(tape, a, mask, 1.0 - rate)


# --- losses -----------------------------------------------------------------

def cross_entropy(tape, logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over rows; targets are class indices."""
    raw = logits.data if logits.data.ndim == 2 else logits.data[None, :]
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n, _c = raw.shape
    if targets.shape != (n,):
        raise NumericError(f"cross_entropy: {n} rows but {targets.shape} targets")
    x = raw.astype(np.float64)
    shifted = x - x.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[np.arange(n), targets].mean()
    data = np.asarray(loss, dtype=logits.data.dtype)

    def bwd(g):
        probs = np.exp(log_probs)
        probs[np.arange(n), targets] -= 1.0
        gx = (probs * (float(g) / n)).astype(logits.data.dtype)
        return (gx.reshape(logits.data.shape),)

    return _make(tape, data, "cross_entropy", (logits,), bwd)


def bce_with_logits(tape, logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on raw logits, numerically stable."""
    x = np.atleast_1d(logits.data).astype(np.float64)
    t = np.broadcast_to(np.asarray(targets, dtype=np.float64), x.shape)
    loss = (np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))).mean()
    data = np.asarray(loss, dtype=logits.data.dtype)
    n = x.size

    def bwd(g):
        sig = 1.0 / (1.0 + np.exp(-x))
        gx = ((sig - t) * (float(g) / n)).astype(logits.data.dtype)
        return (gx.reshape(logits.data.shape),)

    return _make(tape, data, "bce_with_logits", (logits,), bwd)


# --- reverse pass ------------------------------------------------------------

def backward(tape: Tape, loss: Tensor, params: dict[str, Tensor] | None = None) -> list[str]:
    """Populate .grad for every requires-grad tensor reachable from `loss`.

    The tape is consumed. When `params` is given, returns the names of
    parameters left disconnected (their gradient is defined as zero).
    """
    if tape.consumed:
        raise SingleUseError("this tape has already been differentiated")
    if loss.data.shape != ():
        raise NumericError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    tape.consumed = True
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for bwd_fn, inputs, out in reversed(tape.nodes):
        g = out.grad
        if g is None:
            continue
        grads = bwd_fn(g)
        for t, gt in zip(inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.array(gt, dtype=t.data.dtype, copy=True)
            else:
                t.grad += gt
    tape.nodes.clear()
    if params is None:
        return []
    return [name for name, p in params.items() if p.grad is None]
