"""Dense float64 tensors with reverse-mode differentiation.

Every differentiable op builds a node holding its inputs and a closure that
maps the output gradient to input gradients. ``backward`` orders the nodes
reachable from a scalar loss topologically (the tape) and replays them in
reverse. Leaf tensors accumulate into ``.grad`` across calls; call
``zero_grad`` between optimizer steps.

Broadcasting is limited to scalars and row-vector bias adds so that every
backward rule stays explicit.
"""

from __future__ import annotations

import contextlib
import math
import threading

import numpy as np

from .errors import NumericError, ShapeError, ValidationError

__all__ = [
    "Tensor",
    "add",
    "attention",
    "backward",
    "cross_entropy_rows",
    "dropout",
    "embedding",
    "gelu",
    "layer_norm",
    "linear",
    "matmul",
    "mul",
    "no_grad",
    "scale",
    "sigmoid_bce",
    "softmax",
    "softmax_cross_entropy",
    "sum_all",
    "take_row",
    "tape_of",
]

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference only)."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float64 array plus the bookkeeping needed for autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return self._backward is None

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    """Wrap an op result, recording the node only when it is needed."""
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)


def tape_of(loss: Tensor) -> list[Tensor]:
    """Nodes reachable from ``loss`` in execution (topological) order."""
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires grad and feeds ``loss``."""
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape_of(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may be a row vector broadcast over rows of ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        def bw(g):
            return g, g
    elif b.data.ndim == 1 and a.data.ndim == 2 and b.shape[0] == a.shape[1]:
        def bw(g):
            return g, g.sum(axis=0)
    elif b.data.ndim == 0:
        def bw(g):
            return g, np.asarray(g.sum())
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data + b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g * bd, g * ad

    return _make(ad * bd, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        return (g * c,)

    return _make(a.data * c, (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape

    def bw(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum()), (a,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_C * xd * (1.0 + 0.044715 * x2))
    out = 0.5 * xd * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _make(out, (x,), bw)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. ``rng=None`` or ``p=0`` is the identity."""
    if rng is None or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout probability must be in [0, 1), got {p}")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def bw(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), bw)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product of a (m×k) and b (k×n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.T if a.requires_grad else None), (ad.T @ g if b.requires_grad else None)

    return _make(ad @ bd, (a, b), bw)


def linear(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ w.T (+ bias)`` with ``w`` stored as (out, in).

    ``x`` may be a single row (1-D) or a matrix of rows.
    """
    xd, wd = x.data, w.data
    if wd.ndim != 2 or xd.shape[-1] != wd.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    out = xd @ wd.T
    if bias is not None:
        if bias.shape != (wd.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {w.shape}")
        out = out + bias.data
    x2 = xd.reshape(-1, wd.shape[1])

    def bw(g):
        g2 = g.reshape(-1, wd.shape[0])
        gx = (g2 @ wd).reshape(xd.shape) if x.requires_grad else None
        gw = g2.T @ x2 if w.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, bw)


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ValidationError(f"token id out of range for vocabulary of {vocab}")

    def bw(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids, g)
        return (gw,)

    return _make(weight.data[ids], (weight,), bw)


def take_row(x: Tensor, index: int) -> Tensor:
    rows = x.shape[0]

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    if not -rows <= index < rows:
        raise ShapeError(f"row {index} out of range for {rows} rows")
    return _make(x.data[index].copy(), (x,), bw)


# ---------------------------------------------------------------- normalisation


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis."""
    p = _softmax_rows(x.data)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = xd.shape[-1]

    def bw(g):
        gh = g * gamma.data
        gx = inv / n * (n * gh - gh.sum(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).sum(axis=-1, keepdims=True))
        g2 = g.reshape(-1, n)
        return gx, (g2 * xhat.reshape(-1, n)).sum(axis=0), g2.sum(axis=0)

    return _make(out, (x, gamma, beta), bw)


def attention(q: Tensor, k: Tensor, v: Tensor, num_heads: int, seq_len: int | None = None) -> Tensor:
    """Causal multi-head scaled dot-product attention over (T, d) inputs.

    Heads are contiguous column blocks of width d / num_heads; the output
    concatenates them back into (T, d). With ``seq_len`` the rows are read
    as consecutive independent sequences of that length, so a batch of
    equal-length sequences can be stacked into one matrix.
    """
    if not (q.shape == k.shape == v.shape) or q.data.ndim != 2:
        raise ShapeError(f"attention: q/k/v shapes {q.shape}, {k.shape}, {v.shape}")
    rows, d = q.shape
    if d % num_heads:
        raise ShapeError(f"attention: width {d} not divisible by {num_heads} heads")
    t = rows if seq_len is None else seq_len
    if t < 1 or rows % t:
        raise ShapeError(f"attention: {rows} rows do not divide into sequences of {t}")
    nb = rows // t
    dh = d // num_heads
    inv = 1.0 / math.sqrt(dh)

    def split(a):
        return a.reshape(nb, t, num_heads, dh).transpose(0, 2, 1, 3)

    def merge(a):
        return a.transpose(0, 2, 1, 3).reshape(rows, d)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scores = (qh @ kh.swapaxes(-1, -2)) * inv
    future = np.triu(np.ones((t, t), dtype=bool), 1)
    scores[..., future] = -np.inf
    p = _softmax_rows(scores)
    out = merge(p @ vh)

    def bw(g):
        gh = split(g)
        gv = p.swapaxes(-1, -2) @ gh
        gp = gh @ vh.swapaxes(-1, -2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * inv
        return merge(gs @ kh), merge(gs.swapaxes(-1, -2) @ qh), merge(gv)

    return _make(out, (q, k, v), bw)


# ---------------------------------------------------------------- losses


def _check_finite(z: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(z)):
        raise NumericError(f"{what}: non-finite logits")


def softmax_cross_entropy(logits: Tensor, target: int) -> Tensor:
    """``-log softmax(z)[target]`` for a single logit vector."""
    z = logits.data
    if z.ndim != 1:
        raise ShapeError(f"softmax_cross_entropy expects 1-D logits, got {logits.shape}")
    n = z.shape[0]
    target = int(target)
    if not 0 <= target < n:
        raise ValidationError(f"target {target} outside [0, {n})")
    _check_finite(z, "softmax_cross_entropy")
    m = z.max()
    lse = m + math.log(np.exp(z - m).sum())
    loss = lse - z[target]

    def bw(g):
        grad = np.exp(z - lse)
        grad[target] -= 1.0
        return (g * grad,)

    return _make(np.asarray(loss), (logits,), bw)


def sigmoid_bce(logits: Tensor, targets) -> Tensor:
    """Summed binary cross-entropy of ``sigmoid(z)`` against 0/1 targets."""
    z = logits.data
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != z.shape:
        raise ShapeError(f"sigmoid_bce: targets {t.shape} vs logits {z.shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValidationError("sigmoid_bce targets must be 0 or 1")
    _check_finite(z, "sigmoid_bce")
    loss = np.sum(np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z))))

    def bw(g):
        sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))
        return (g * (sig - t),)

    return _make(np.asarray(loss), (logits,), bw)


def cross_entropy_rows(logits: Tensor, targets, mask) -> Tensor:
    """Sum of per-row ``-log softmax`` at ``targets`` over rows where ``mask``."""
    z = logits.data
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if z.ndim != 2 or targets.shape != (z.shape[0],) or mask.shape != (z.shape[0],):
        raise ShapeError(
            f"cross_entropy_rows: logits {logits.shape}, targets {targets.shape}, mask {mask.shape}"
        )
    if not mask.any():
        raise ValidationError("loss mask selects zero positions")
    rows = np.nonzero(mask)[0]
    sel = z[rows]
    _check_finite(sel, "cross_entropy_rows")
    tgt = targets[rows]
    if tgt.min() < 0 or tgt.max() >= z.shape[1]:
        raise ValidationError("target token id out of range")
    m = sel.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(sel - m).sum(axis=1, keepdims=True))
    loss = float(np.sum(lse[:, 0] - sel[np.arange(len(rows)), tgt]))

    def bw(g):
        grad = np.zeros_like(z)
        p = np.exp(sel - lse)
        p[np.arange(len(rows)), tgt] -= 1.0
        grad[rows] = p
        return (g * grad,)

    return _make(np.asarray(loss), (logits,), bw)
