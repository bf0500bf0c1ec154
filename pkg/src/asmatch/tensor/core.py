"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` only when one is
open and at least one input requires a gradient, so inference outside a
tape builds no graph.  Broadcasting is limited to adding or multiplying a
1-D vector along the last axis; everything else needs matching shapes.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import NonFinite, NotScalar, ShapeMismatch

_ACTIVE: list = []
# when a list, piecewise ops append their branch masks (see gradcheck)
_BRANCHES: list | None = None


def _branch(mask: np.ndarray) -> None:
    if _BRANCHES is not None:
        _BRANCHES.append(np.packbits(mask).tobytes())


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_scalar(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Records operations in execution order, which is a topological order."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def backward(self, loss: Tensor, params: Sequence[Tensor] = ()) -> None:
        """Accumulate d(loss)/d(x) into ``x.grad`` for every reachable leaf.

        Parameters listed in ``params`` that the loss does not reach get a
        zero gradient.
        """
        if loss.data.size != 1:
            raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None or node._backward is None:
                continue
            grads = node._backward(g)
            for parent, pg in zip(node._parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                parent.grad = pg if parent.grad is None else parent.grad + pg
            node.grad = None
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad, name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op: str, data: np.ndarray, parents: tuple, backward) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFinite(f"{op} produced non-finite values")
    out = Tensor(data)
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        _ACTIVE[-1].nodes.append(out)
    return out


def _unbroadcast_vec(g: np.ndarray) -> np.ndarray:
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


def _check_vec_or_same(op: str, a: Tensor, b: Tensor) -> bool:
    """True when ``b`` is a last-axis vector to broadcast over ``a``."""
    if a.shape == b.shape:
        return False
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return True
    raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


# -- elementwise ------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    vec = _check_vec_or_same("add", a, b)

    def back(g):
        return g, (_unbroadcast_vec(g) if vec else g)
    return _result("add", a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    vec = _check_vec_or_same("sub", a, b)

    def back(g):
        return g, -(_unbroadcast_vec(g) if vec else g)
    return _result("sub", a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; a 1-D ``b`` scales the last axis (layer scale)."""
    vec = _check_vec_or_same("mul", a, b)

    def back(g):
        gb = g * a.data
        return g * b.data, (_unbroadcast_vec(gb) if vec else gb)
    return _result("mul", a.data * b.data, (a, b), back)


layer_scale = mul


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _result("add_scalar", a.data + c, (a,), lambda g: (g,))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return _result("mul_scalar", a.data * c, (a,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _branch(mask)
    return _result("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _result("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _result("log", out, (x,), lambda g: (g / x.data,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"minimum: shapes {a.shape} and {b.shape} differ")
    take_a = a.data <= b.data
    _branch(take_a)
    return _result("minimum", np.where(take_a, a.data, b.data), (a, b),
                   lambda g: (g * take_a, g * ~take_a))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    _branch(inside)
    return _result("clip", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# -- shape ------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _result("swapaxes", np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    ax = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(x.shape[i] != xs[0].shape[i] for i in range(x.ndim) if i != ax):
            raise ShapeMismatch(f"concat: shapes {xs[0].shape} and {x.shape} differ off axis {axis}")
    sizes = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=ax))
    return _result("concat", np.concatenate([x.data for x in xs], axis=ax), tuple(xs), back)


def expand(x: Tensor, n: int, axis: int = 0) -> Tensor:
    """Repeat ``x`` ``n`` times along a new axis inserted at ``axis``."""
    data = np.repeat(np.expand_dims(x.data, axis), n, axis=axis)
    return _result("expand", data, (x,), lambda g: (g.sum(axis=axis),))


def _scatter_matrix(idx: np.ndarray, n: int) -> np.ndarray:
    s = np.zeros((n, idx.shape[0]))
    s[idx, np.arange(idx.shape[0])] = 1.0
    return s


def _scatter(g: np.ndarray, idx: np.ndarray, n: int, ax: int) -> np.ndarray:
    """Sum slices of ``g`` along ``ax`` into ``n`` buckets given by ``idx``."""
    moved = np.moveaxis(g, ax, -2) if g.ndim > 1 else g[:, None]
    lead, last = moved.shape[:-2], moved.shape[-1]
    flat = np.moveaxis(moved, -2, 0).reshape(idx.shape[0], -1)
    out = (_scatter_matrix(idx, n) @ flat).reshape((n,) + lead + (last,))
    out = np.moveaxis(out, 0, -2)
    return np.moveaxis(out, -2, ax) if g.ndim > 1 else out[:, 0]


def take(x: Tensor, idx: np.ndarray, axis: int) -> Tensor:
    """Gather slices ``idx`` along ``axis``; repeated indices accumulate."""
    idx = np.asarray(idx, dtype=np.int64)
    ax = axis % x.ndim
    n = x.shape[ax]
    return _result("take", np.take(x.data, idx, axis=ax), (x,), lambda g: (_scatter(g, idx, n, ax),))


def segment_sum(x: Tensor, idx: np.ndarray, n: int, axis: int) -> Tensor:
    """Sum slices of ``x`` along ``axis`` into ``n`` buckets given by ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    ax = axis % x.ndim
    if x.shape[ax] != idx.shape[0]:
        raise ShapeMismatch(f"segment_sum: {x.shape[ax]} slices but {idx.shape[0]} indices")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeMismatch(f"segment_sum: indices outside [0, {n})")
    return _result("segment_sum", _scatter(x.data, idx, n, ax), (x,), lambda g: (np.take(g, idx, axis=ax),))


def pick(x: Tensor, idx: np.ndarray) -> Tensor:
    """Row ``idx[b]`` of ``x[b]`` for a ``(B, n, d)`` input -> ``(B, d)``."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.shape[0])

    def back(g):
        out = np.zeros_like(x.data)
        out[rows, idx] = g
        return (out,)
    return _result("pick", x.data[rows, idx], (x,), back)


def pick_last(x: Tensor, idx: np.ndarray) -> Tensor:
    """Entry ``x[b, idx[b]]`` of a ``(B, n)`` input -> ``(B,)``."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.shape[0])

    def back(g):
        out = np.zeros_like(x.data)
        out[rows, idx] = g
        return (out,)
    return _result("pick_last", x.data[rows, idx], (x,), back)


# -- reductions -------------------------------------------------------------

def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)
    return _result("sum", np.asarray(x.data.sum(axis=axis)), (x,), back)


def mean(x: Tensor, axis=None) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    return mul_scalar(sum(x, axis), 1.0 / count)


mean_pool = mean


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``(..., n, k) @ (k, m)`` or batched ``(..., n, k) @ (..., k, m)``."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul: batch shapes {a.shape[:-2]} and {b.shape[:-2]} differ")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb
    return _result("matmul", a.data @ b.data, (a, b), back)


def bilinear(x: Tensor, w: Tensor, y: Tensor) -> Tensor:
    """Per-slice bilinear form ``x^T W[:, :, f] y``.

    ``x`` is ``(B, d)``, ``w`` is ``(d, d, F)`` and ``y`` is ``(B, m, d)``;
    the result is ``(B, m, F)``.  1-D ``x``/``y`` give an ``(F,)`` result.
    """
    if x.ndim == 1 and y.ndim == 1:
        out = bilinear(reshape(x, (1, -1)), w, reshape(y, (1, 1, -1)))
        return reshape(out, (w.shape[2],))
    if (x.ndim != 2 or y.ndim != 3 or w.ndim != 3 or x.shape[0] != y.shape[0]
            or w.shape[0] != x.shape[1] or w.shape[1] != y.shape[2]):
        raise ShapeMismatch(f"bilinear: shapes {x.shape}, {w.shape}, {y.shape} are incompatible")
    xw = np.einsum("bi,ijf->bjf", x.data, w.data)
    out = np.einsum("bmj,bjf->bmf", y.data, xw)

    def back(g):
        gy = np.einsum("bmf,bjf->bmj", g, xw)
        gxw = np.einsum("bmj,bmf->bjf", y.data, g)
        gx = np.einsum("bjf,ijf->bi", gxw, w.data)
        gw = np.einsum("bi,bjf->ijf", x.data, gxw)
        return gx, gw, gy
    return _result("bilinear", out, (x, w, y), back)


# -- normalisation / activation families ------------------------------------

def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax over the last axis.

    Masked-out entries (``mask == False``) get probability 0; rows with no
    allowed entry come out all zero.
    """
    z = x.data
    if mask is None:
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        p = e / e.sum(axis=-1, keepdims=True)
    else:
        mask = np.broadcast_to(mask, z.shape)
        z = np.where(mask, z, -np.inf)
        zmax = np.max(z, axis=-1, keepdims=True)
        zmax[~np.isfinite(zmax)] = 0.0
        e = np.exp(z - zmax)
        s = e.sum(axis=-1, keepdims=True)
        p = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)
    return _result("softmax", p, (x,), back)


def log_softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise log-softmax; masked entries are returned as 0 and get no gradient."""
    z = x.data
    if mask is None:
        mask = np.ones(z.shape, dtype=bool)
    mask = np.broadcast_to(mask, z.shape)
    zm = np.where(mask, z, -np.inf)
    zmax = np.max(zm, axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.where(mask, np.exp(zm - zmax), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    logz = zmax + np.log(np.where(s > 0, s, 1.0))
    out = np.where(mask, z - logz, 0.0)
    p = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def back(g):
        g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=-1, keepdims=True),)
    return _result("log_softmax", out, (x,), back)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true with ``value``."""
    mask = np.broadcast_to(mask, x.shape)
    return _result("masked_fill", np.where(mask, value, x.data), (x,), lambda g: (np.where(mask, 0.0, g),))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result("dropout", x.data * keep, (x,), lambda g: (g * keep,))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize every row over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    def back(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast_vec(g * xhat), _unbroadcast_vec(g)
    return _result("layer_norm", xhat * gamma.data + beta.data, (x, gamma, beta), back)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Normalize each channel (last axis) over all leading positions.

    In training mode batch statistics are used and the running buffers are
    updated in place; in eval mode the running statistics give a fixed
    affine map.
    """
    c = x.shape[-1]
    flat = x.data.reshape(-1, c)
    if training:
        mu = flat.mean(axis=0)
        var = flat.var(axis=0)
        count = flat.shape[0]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * count / max(count - 1, 1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (flat - mu) * inv

    def back(g):
        g2 = g.reshape(-1, c)
        gbeta = g2.sum(axis=0)
        ggamma = (g2 * xhat).sum(axis=0)
        gx_hat = g2 * gamma.data
        if training:
            gx = inv * (gx_hat - gx_hat.mean(axis=0) - xhat * (gx_hat * xhat).mean(axis=0))
        else:
            gx = gx_hat * inv
        return gx.reshape(x.shape), ggamma, gbeta
    out = (xhat * gamma.data + beta.data).reshape(x.shape)
    return _result("batch_norm", out, (x, gamma, beta), back)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None,
              return_weights: bool = False):
    """Scaled dot-product attention over the last two axes.

    ``q`` is ``(..., n, dk)``, ``k`` is ``(..., m, dk)``, ``v`` is
    ``(..., m, dv)`` and ``mask`` (broadcastable to ``(..., n, m)``) marks
    the keys each query may attend to.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"attention: shapes {q.shape}, {k.shape}, {v.shape} are incompatible")
    scores = mul_scalar(matmul(q, swapaxes(k, -1, -2)), 1.0 / np.sqrt(q.shape[-1]))
    weights = softmax(scores, mask)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def cross_entropy(logits: Tensor, target: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood of ``target[b]`` under row ``b`` of ``logits``."""
    logp = log_softmax(logits, mask)
    return mul_scalar(sum(pick_last(logp, target)), -1.0 / logits.shape[0])
