"""Dense tensor ops with reverse-mode differentiation.

A small numpy-backed engine: each op records a vector-Jacobian closure so a
scalar loss can backpropagate into every parameter. 32-bit floats are the
working precision; 64-bit is available (and used by gradient checking, where
finite differences at h=1e-3 would otherwise drown in float32 roundoff).

The additive attention-mask surrogate for minus infinity is -1e9: after
per-row max subtraction the masked entries underflow exp() to exactly 0.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

NEG_INF = -1.0e9

_deterministic = os.environ.get("DORM_DETERMINISTIC") == "1"


def set_deterministic(on: bool) -> None:
    """Toggle deterministic mode (fixed seeds, single ordered pipeline).

    The engine itself is sequential and bit-reproducible for fixed inputs;
    this switch is consulted by callers that would otherwise introduce
    nondeterministic ordering (data pipelines, unseeded rngs).
    """
    global _deterministic
    _deterministic = bool(on)


def is_deterministic() -> bool:
    return _deterministic


class NumericError(ArithmeticError):
    """Numerical contract violation (non-finite loss, fully-masked row...)."""


class ShapeError(NumericError):
    """Operand shapes are incompatible."""


class Tensor:
    """A dense array with an optional gradient buffer and autodiff record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise NumericError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, contrib in zip(node._parents, node._vjp(node.grad)):
                if contrib is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += contrib

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def _result(data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(data, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * a.data.dtype.type(s)

    def vjp(g):
        return (g * a.data.dtype.type(s),)

    return _result(data, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy's leading-batch broadcast semantics."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    data = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(data, (a, b), vjp)


def permute(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"permute axes {axes} invalid for shape {a.shape}")
    data = np.transpose(a.data, axes)
    inverse = np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _result(data, (a,), vjp)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        index = [slice(None)] * g.ndim
        out = []
        for k in range(len(parts)):
            index[axis] = slice(bounds[k], bounds[k + 1])
            out.append(g[tuple(index)])
        return tuple(out)

    return _result(data, tuple(parts), vjp)


def transpose_last(a: Tensor) -> Tensor:
    if a.data.ndim < 2:
        raise ShapeError(f"transpose needs >=2 dims, got {a.shape}")
    data = np.swapaxes(a.data, -1, -2)

    def vjp(g):
        return (np.swapaxes(g, -1, -2),)

    return _result(data, (a,), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return _result(data, (a,), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = a.data[index]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _result(data, (a,), vjp)


def rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Embedding lookup: out[..., :] = table[idx[...], :]."""
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(
            f"index out of range for table with {table.shape[0]} rows"
        )
    data = table.data[idx]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _result(data, (table,), vjp)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        dx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner
        return (g * dx,)

    return _result(data, (a,), vjp)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return a
    if rate >= 1.0:
        raise NumericError("dropout rate must be < 1")
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype) / a.data.dtype.type(
        1.0 - rate
    )
    data = a.data * keep

    def vjp(g):
        return (g * keep,)

    return _result(data, (a,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} "
            f"do not match feature dim of {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = xhat * gain.data + bias.data

    def vjp(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv_std
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(data, (x, gain, bias), vjp)


def masked_softmax(logits: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis after adding an additive mask.

    Mask entries at the NEG_INF surrogate produce exactly-zero weights; a row
    with every position masked cannot be normalized and raises NumericError.
    """
    z = logits.data if mask is None else logits.data + np.asarray(mask, logits.data.dtype)
    m = z.max(axis=-1, keepdims=True)
    if np.any(m <= NEG_INF / 2):
        raise NumericError("masked_softmax: a row is entirely masked")
    e = np.exp(z - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return _result(y, (logits,), vjp)


def _log_softmax_raw(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(
    logits: Tensor, labels: np.ndarray, ignore_index: int = -1
) -> Tensor:
    """Mean negative log-likelihood over non-ignored positions.

    logits: (positions, classes); labels: (positions,) int ids. Positions
    labeled ``ignore_index`` contribute neither loss nor count.
    """
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy expects (P,V) logits and (P,) labels, "
            f"got {logits.shape} and {labels.shape}"
        )
    valid = labels != ignore_index
    count = int(valid.sum())
    if count == 0:
        raise NumericError("cross_entropy: all positions ignored")
    if labels[valid].min() < 0 or labels[valid].max() >= logits.shape[1]:
        raise NumericError("cross_entropy: label id out of range")
    logp = _log_softmax_raw(logits.data)
    safe = np.where(valid, labels, 0)
    picked = logp[np.arange(labels.shape[0]), safe]
    loss = -(picked * valid).sum() / count
    data = np.asarray(loss, dtype=logits.data.dtype)

    def vjp(g):
        p = np.exp(logp)
        p[np.arange(labels.shape[0]), safe] -= 1.0
        p *= (valid / count)[:, None]
        return (p * g,)

    return _result(data, (logits,), vjp)


def bidirectional_kl(
    p_logits: Tensor, q_logits: Tensor, valid: np.ndarray | None = None
) -> Tensor:
    """Mean over positions of (KL(P||Q) + KL(Q||P)) / 2, P/Q = softmax rows.

    Computed in log space from both logit sets; gradients flow to both.
    ``valid`` (bool, per position) excludes padding from the mean.
    """
    if p_logits.shape != q_logits.shape:
        raise ShapeError(
            f"bidirectional_kl shape mismatch: {p_logits.shape} vs {q_logits.shape}"
        )
    if p_logits.data.ndim != 2:
        raise ShapeError("bidirectional_kl expects (positions, classes)")
    n = p_logits.shape[0]
    valid = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        raise NumericError("bidirectional_kl: no valid positions")
    lp = _log_softmax_raw(p_logits.data)
    lq = _log_softmax_raw(q_logits.data)
    p = np.exp(lp)
    q = np.exp(lq)
    diff = lp - lq
    kl_pq = (p * diff).sum(axis=-1)
    kl_qp = -(q * diff).sum(axis=-1)
    per_pos = 0.5 * (kl_pq + kl_qp)
    data = np.asarray((per_pos * valid).sum() / count, dtype=p_logits.data.dtype)

    def vjp(g):
        w = (valid / count)[:, None] * g
        gp = 0.5 * (p * (diff - kl_pq[:, None]) + (p - q)) * w
        gq = 0.5 * (q * (-diff - kl_qp[:, None]) + (q - p)) * w
        return gp, gq

    return _result(data, (p_logits, q_logits), vjp)


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    worst_index: int
    n_checked: int


def check_gradients(
    fn: Callable[[], Tensor],
    params: dict[str, Tensor] | Iterable[tuple[str, Tensor]],
    h: float = 1e-3,
    sample_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of fn() against central finite differences.

    fn must rebuild its graph from the given parameter tensors on every call
    and be deterministic (no dropout). Only the listed parameters are
    perturbed and reported. Returns the worst relative error found.

    Each coordinate's error is measured against the larger of the two
    estimates there or the sup norm of that parameter's analytic gradient.
    The scale floor keeps near-zero components of a healthy gradient from
    inflating the ratio with pure truncation noise, while a genuinely wrong
    tensor (scale set by the disagreement itself) still reports errors near 1.
    """
    params = dict(params)
    for p in params.values():
        p.zero_grad()
    out = fn()
    if not np.isfinite(out.data):
        raise NumericError("check_gradients: non-finite loss")
    out.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    worst = GradCheckReport(0.0, "", -1, 0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.shape[0]
        if sample_per_param is not None and sample_per_param < n:
            gen = rng or np.random.default_rng(0)
            indices = gen.choice(n, size=sample_per_param, replace=False)
        else:
            indices = np.arange(n)
        a_flat = analytic[name].reshape(-1)
        scale = float(np.abs(a_flat).max())
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn().item()
            flat[i] = orig - h
            f_minus = fn().item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2 * h)
            denom = max(abs(fd), abs(a_flat[i]), scale)
            rel = 0.0 if denom < 1e-8 else abs(fd - a_flat[i]) / denom
            worst.n_checked += 1
            if rel > worst.max_rel_err:
                worst.max_rel_err = rel
                worst.worst_param = name
                worst.worst_index = int(i)
    return worst


def global_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm."""
    params = list(params)
    norm = global_grad_norm(params)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(factor)
    return norm


def truncated_normal(
    rng: np.random.Generator, shape: tuple[int, ...], std: float, dtype=np.float32
) -> np.ndarray:
    """Normal(0, std) with draws beyond 2 std redrawn."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)
