"""Dense tensors with reverse-mode automatic differentiation.

Forward ops compute on numpy arrays wrapped in :class:`Tensor`. While a
:class:`Tape` is active, every op whose inputs require gradients records a
backward closure; :func:`backward` replays the records in exact reverse
execution order, accumulating gradients additively wherever a tensor fans
out into several consumers. With no tape active, ops run forward-only,
which is what evaluation-mode code paths use.

Gradient arrays are never mutated in place (rebind-only accumulation), so
backward closures may hand out views or alias the upstream gradient.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

NEG_INF = -1e30  # finite stand-in for -inf; exp() underflows to exactly 0

_DTYPE = np.float32


def set_dtype(name: str) -> None:
    """Select the float width for newly created tensors ("float32"/"float64")."""
    global _DTYPE
    if name not in ("float32", "float64"):
        raise ValueError(f"unsupported dtype {name!r}")
    _DTYPE = np.float32 if name == "float32" else np.float64


def current_dtype() -> np.dtype:
    return np.dtype(_DTYPE)


@contextmanager
def using_dtype(name: str):
    prev = "float64" if _DTYPE is np.float64 else "float32"
    set_dtype(name)
    try:
        yield
    finally:
        set_dtype(prev)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "grad_owned")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.grad_owned = False  # True once .grad is a private buffer safe to mutate

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable tensor with Adam accumulators; gradient starts at zero.

    Frozen parameters (trainable=False) take no part in backward at all.
    """

    __slots__ = ("name", "adam_m", "adam_v", "trainable")

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)
        self.grad_owned = True
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        if self.grad is None or not self.grad_owned:
            self.grad = np.zeros_like(self.data)
            self.grad_owned = True
        else:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def uniform_param(name: str, shape: Sequence[int], rng: np.random.Generator,
                  fan_in: int | None = None, trainable: bool = True) -> Parameter:
    """Uniform init in +-1/sqrt(fan_in); fan_in defaults to the first dim."""
    if fan_in is None:
        fan_in = shape[0]
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    data = rng.uniform(-bound, bound, size=tuple(shape)).astype(_DTYPE)
    return Parameter(data, name, trainable=trainable)


def normal_param(name: str, shape: Sequence[int], rng: np.random.Generator,
                 trainable: bool = True) -> Parameter:
    """Unit-normal init; the customary default for embedding tables."""
    data = rng.normal(size=tuple(shape)).astype(_DTYPE)
    return Parameter(data, name, trainable=trainable)


class Tape:
    """Execution-ordered record of differentiable ops for one forward pass."""

    _active: "Tape | None" = None

    def __init__(self):
        self.records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise RuntimeError("a Tape is already active; tapes do not nest")
        Tape._active = self
        return self

    def __exit__(self, *exc) -> None:
        Tape._active = None


def _acc(t: Tensor, g: np.ndarray) -> None:
    # first contribution aliases g; the second makes a private buffer which
    # later contributions update in place
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
        t.grad_owned = False
    elif t.grad_owned:
        t.grad += g
    else:
        t.grad = t.grad + g
        t.grad_owned = True


def _record(out: Tensor, inputs: Iterable[Tensor], bwd: Callable[[np.ndarray], None]) -> None:
    tape = Tape._active
    if tape is None:
        return
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append((out, bwd))


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate gradients of everything `loss` depends on via `tape`."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, bwd in reversed(tape.records):
        if out.grad is not None:
            bwd(out.grad)


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def bwd(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    _record(out, (a, b), bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def bwd(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(-g, b.data.shape))

    _record(out, (a, b), bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def bwd(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    _record(out, (a, b), bwd)
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    _record(out, (a,), lambda g: _acc(a, -g))
    return out


def cmul(a: Tensor, c) -> Tensor:
    """Multiply by a constant scalar or array (no gradient for the constant)."""
    c = np.asarray(c, dtype=a.data.dtype)
    out = Tensor(a.data * c)
    _record(out, (a,), lambda g: _acc(a, _unbroadcast(g * c, a.data.shape)))
    return out


def scale(a: Tensor, s: float) -> Tensor:
    return cmul(a, float(s))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        if a.requires_grad:
            _acc(a, g @ b.data.T)
        if b.requires_grad:
            _acc(b, a.data.T @ g)

    _record(out, (a, b), bwd)
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T)
    _record(out, (a,), lambda g: _acc(a, g.T))
    return out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return add(y, b) if b is not None else y


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    _record(out, (a,), lambda g: _acc(a, g * (a.data > 0)))
    return out


def sigmoid(a: Tensor) -> Tensor:
    # clip keeps exp finite; saturation error at |x|=40 is below float precision
    z = np.exp(np.clip(a.data, -40.0, 40.0))
    out = Tensor(z / (1.0 + z))
    yd = out.data
    _record(out, (a,), lambda g: _acc(a, g * yd * (1.0 - yd)))
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data))
    yd = out.data
    _record(out, (a,), lambda g: _acc(a, g * (1.0 - yd * yd)))
    return out


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not xs:
        raise ValueError("concat of empty list")
    out = Tensor(np.concatenate([x.data for x in xs], axis=axis))
    sizes = [x.data.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for x, piece in zip(xs, np.split(g, splits, axis=axis)):
            _acc(x, piece)

    _record(out, tuple(xs), bwd)
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx])

    def bwd(g):
        buf = np.zeros_like(a.data)
        buf[idx] = g
        _acc(a, buf)

    _record(out, (a,), bwd)
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape))
    _record(out, (a,), lambda g: _acc(a, g.reshape(a.data.shape)))
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())
    _record(out, (a,), lambda g: _acc(a, np.broadcast_to(g, a.data.shape)))
    return out


def add_n(xs: Sequence[Tensor]) -> Tensor:
    total = xs[0]
    for x in xs[1:]:
        total = add(total, x)
    return total


def pick(a: Tensor, index: int) -> Tensor:
    """Select one element of a 1-D tensor as a scalar."""
    if a.data.ndim != 1:
        raise ValueError(f"pick expects a vector, got shape {a.data.shape}")
    out = Tensor(a.data[index])

    def bwd(g):
        buf = np.zeros_like(a.data)
        buf[index] = g
        _acc(a, buf)

    _record(out, (a,), bwd)
    return out


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of `table`; `ids` is an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[ids])

    def bwd(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
            table.grad_owned = True
        elif not table.grad_owned:
            table.grad = table.grad.copy()
            table.grad_owned = True
        np.add.at(table.grad, ids, g)

    _record(out, (table,), bwd)
    return out


def embedding_lookup_dense(table: Tensor, ids, scatter: np.ndarray) -> Tensor:
    """embedding_lookup with a precomputed scatter matrix for the backward pass.

    `scatter` must be the (ids.size, rows) one-hot of `ids`; the gradient
    lands as one matrix product, which beats index-wise accumulation when a
    small table is gathered at many positions (relation embeddings).
    """
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[ids])
    d = table.data.shape[-1]

    def bwd(g):
        if table.requires_grad:
            _acc(table, scatter.T @ g.reshape(-1, d))

    _record(out, (table,), bwd)
    return out


def one_hot(ids, rows: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    out = np.zeros((ids.size, rows), dtype=_DTYPE)
    out[np.arange(ids.size), ids] = 1.0
    return out


def dropout(a: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate); identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate out of range: {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(a.data.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)
    return cmul(a, mask)


def mask_fill(a: Tensor, keep: np.ndarray, value: float = NEG_INF) -> Tensor:
    """Replace entries where `keep` is False by `value` (no grad there)."""
    keep = np.asarray(keep, dtype=bool)
    out = Tensor(np.where(keep, a.data, value))
    _record(out, (a,), lambda g: _acc(a, g * keep))
    return out


# ---------------------------------------------------------------------------
# fused ops with hand-derived backward rules
# ---------------------------------------------------------------------------

def softmax(a: Tensor) -> Tensor:
    """Stable softmax over the last axis (max-subtraction inside)."""
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)
    yd = out.data

    def bwd(g):
        dot = (g * yd).sum(axis=-1, keepdims=True)
        _acc(a, (g - dot) * yd)

    _record(out, (a,), bwd)
    return out


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = Tensor(z - lse)
    yd = out.data

    def bwd(g):
        _acc(a, g - np.exp(yd) * g.sum(axis=-1, keepdims=True))

    _record(out, (a,), bwd)
    return out


LAYER_NORM_EPS = 1e-5


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale + shift."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        _acc(gain, (g * xhat).sum(axis=lead) if lead else g * xhat)
        _acc(bias, g.sum(axis=lead) if lead else g)
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        _acc(a, dx)

    _record(out, (a, gain, bias), bwd)
    return out


def _heads_view(x: np.ndarray, heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, heads, d // heads)


def mh_scores(q: Tensor, k: Tensor, heads: int) -> Tensor:
    """Per-head scaled dot-product scores: (heads, m, n) from (m,d) x (n,d)."""
    d = q.data.shape[1]
    if d % heads or k.data.shape[1] != d:
        raise ValueError(f"mh_scores shapes {q.data.shape} x {k.data.shape} with {heads} heads")
    inv = 1.0 / math.sqrt(d // heads)
    qh, kh = _heads_view(q.data, heads), _heads_view(k.data, heads)
    out = Tensor(np.einsum("mhd,nhd->hmn", qh, kh) * inv)

    def bwd(g):
        if q.requires_grad:
            _acc(q, (np.einsum("hmn,nhd->mhd", g, kh) * inv).reshape(q.data.shape))
        if k.requires_grad:
            _acc(k, (np.einsum("hmn,mhd->nhd", g, qh) * inv).reshape(k.data.shape))

    _record(out, (q, k), bwd)
    return out


def mh_scores_rel(q: Tensor, k: Tensor, rk: Tensor, heads: int) -> Tensor:
    """mh_scores plus a relation term: rk is (m, n, d/heads), shared across heads."""
    d = q.data.shape[1]
    inv = 1.0 / math.sqrt(d // heads)
    qh, kh = _heads_view(q.data, heads), _heads_view(k.data, heads)
    s = np.einsum("mhd,nhd->hmn", qh, kh) + np.einsum("mhd,mnd->hmn", qh, rk.data)
    out = Tensor(s * inv)

    def bwd(g):
        dq = np.einsum("hmn,nhd->mhd", g, kh) + np.einsum("hmn,mnd->mhd", g, rk.data)
        _acc(q, (dq * inv).reshape(q.data.shape))
        _acc(k, (np.einsum("hmn,mhd->nhd", g, qh) * inv).reshape(k.data.shape))
        _acc(rk, np.einsum("hmn,mhd->mnd", g, qh) * inv)

    _record(out, (q, k, rk), bwd)
    return out


def mh_mix(attn: Tensor, v: Tensor, heads: int) -> Tensor:
    """Head-weighted sums of values: (heads,m,n) x (n,d) -> (m,d), heads concatenated."""
    vh = _heads_view(v.data, heads)
    m = attn.data.shape[1]
    out = Tensor(np.einsum("hmn,nhd->mhd", attn.data, vh).reshape(m, v.data.shape[1]))

    def bwd(g):
        gh = g.reshape(m, heads, -1)
        _acc(attn, np.einsum("mhd,nhd->hmn", gh, vh))
        _acc(v, np.einsum("hmn,mhd->nhd", attn.data, gh).reshape(v.data.shape))

    _record(out, (attn, v), bwd)
    return out


def mh_mix_rel(attn: Tensor, v: Tensor, rv: Tensor, heads: int) -> Tensor:
    """mh_mix plus a relation term: rv is (m, n, d/heads), shared across heads."""
    vh = _heads_view(v.data, heads)
    m = attn.data.shape[1]
    z = (np.einsum("hmn,nhd->mhd", attn.data, vh)
         + np.einsum("hmn,mnd->mhd", attn.data, rv.data))
    out = Tensor(z.reshape(m, v.data.shape[1]))

    def bwd(g):
        gh = g.reshape(m, heads, -1)
        da = (np.einsum("mhd,nhd->hmn", gh, vh)
              + np.einsum("mhd,mnd->hmn", gh, rv.data))
        _acc(attn, da)
        _acc(v, np.einsum("hmn,mhd->nhd", attn.data, gh).reshape(v.data.shape))
        _acc(rv, np.einsum("hmn,mhd->mnd", attn.data, gh))

    _record(out, (attn, v, rv), bwd)
    return out


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central finite differences.

    `fn` re-runs the forward pass from the current values of `inputs`; it must
    be deterministic. Requires 64-bit mode for meaningful tolerances.
    """
    if current_dtype() != np.float64:
        raise RuntimeError("grad_check requires float64 mode (set_dtype('float64'))")
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = fn()
    backward(loss, tape)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        gn = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn().data.item()
            flat[i] = orig - eps
            dn = fn().data.item()
            flat[i] = orig
            gn[i] = (up - dn) / (2.0 * eps)
        gn = gn.reshape(t.data.shape)
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1e-8)
        worst = max(worst, float(np.max(np.abs(ga - gn) / denom)))
    return worst
