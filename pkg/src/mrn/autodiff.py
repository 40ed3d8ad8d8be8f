"""Dense float64 tensors with a reverse-mode computation graph.

Values are computed eagerly when a node is created.  Every node keeps its
forward rule, so :func:`eval_graph` can re-run a whole graph from its leaves.

Spatial ops work on ``(batch, channels, *spatial)`` arrays with one or two
spatial axes; the 1D and 2D networks share the same code path.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import GradientError, ShapeError

PRIMITIVES = (
    "linear",
    "conv2d",
    "relu",
    "avg_pool_2x2",
    "upsample_duplicate_2x",
    "add",
    "scale",
    "concat_channels",
    "mse_loss",
    "frobenius_norm",
    "total",
)


class Tensor:
    """A node in the computation graph.

    Leaves have ``op == "leaf"`` and no parents.  ``grad`` is filled in by
    :func:`backward` for every node that requires a gradient.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_fwd", "_bwd", "name", "_acc")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = "leaf"
        self.parents = ()
        self._fwd = None
        self._bwd = None
        self.name = name
        self._acc = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(op, parents, fwd, bwd):
    out = Tensor(fwd(*[p.data for p in parents]))
    out.op = op
    out.parents = tuple(parents)
    out._fwd = fwd
    out._bwd = bwd
    for p in parents:
        if p.requires_grad:
            out.requires_grad = True
            break
    return out


def _spatial(x, op):
    nd = x.ndim - 2
    if nd not in (1, 2):
        raise ShapeError(op, x.shape, detail="expected (batch, channels, *spatial) with 1 or 2 spatial axes")
    return nd


# --------------------------------------------------------------------- primitives


def linear(x, weight, bias=None):
    """Dense affine map over the channel axis: ``y[n, o, ...] = W[o, i] x[n, i, ...] + b[o]``.

    Applied to ``(batch, features)`` input this is an ordinary dense layer;
    applied to images it acts as a 1x1 convolution.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim < 2 or weight.data.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError("linear", x.shape, weight.shape)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError("linear", weight.shape, bias.shape, detail="bias length")
        parents.append(bias)
    extra = x.data.ndim - 2

    def fwd(xv, wv, bv=None):
        if extra == 0:
            y = xv @ wv.T
            return y if bv is None else y + bv
        y = np.moveaxis(np.tensordot(wv, xv, axes=([1], [1])), 0, 1)
        if bv is not None:
            y = y + bv.reshape((1, -1) + (1,) * extra)
        return y

    def bwd(g, xv, wv, bv=None):
        if extra == 0:
            gx, gw, axes = g @ wv, g.T @ xv, (0,)
        else:
            gx = np.moveaxis(np.tensordot(wv, g, axes=([0], [1])), 0, 1)
            axes = tuple([0] + list(range(2, g.ndim)))
            gw = np.tensordot(g, xv, axes=(axes, axes))
        if bv is None:
            return gx, gw
        return gx, gw, g.sum(axis=axes)

    return _node("linear", parents, fwd, bwd)


def _im2col(xv, nd):
    pad = [(0, 0), (0, 0)] + [(1, 1)] * nd
    xp = np.pad(xv, pad)
    spatial = xv.shape[2:]
    cols = []
    for off in itertools.product(range(3), repeat=nd):
        sl = (slice(None), slice(None)) + tuple(slice(o, o + s) for o, s in zip(off, spatial))
        cols.append(xp[sl])
    # (N, C, K, *S) with K = 3**nd taps in row-major order of the kernel
    return np.stack(cols, axis=2)


def conv2d(x, weight, bias=None):
    """3-tap (1D) or 3x3 (2D) convolution, stride 1, zero padding 1.

    ``weight`` has shape ``(out, in, 3)`` or ``(out, in, 3, 3)``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    nd = _spatial(x.data, "conv2d")
    if weight.data.ndim != 2 + nd or weight.shape[2:] != (3,) * nd or weight.shape[1] != x.shape[1]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError("conv2d", weight.shape, bias.shape, detail="bias length")
        parents.append(bias)
    k = 3**nd

    def fwd(xv, wv, bv=None):
        n, c = xv.shape[:2]
        cols = _im2col(xv, nd).reshape((n, c * k) + xv.shape[2:])
        y = np.moveaxis(np.tensordot(wv.reshape(wv.shape[0], c * k), cols, axes=([1], [1])), 0, 1)
        if bv is not None:
            y = y + bv.reshape((1, -1) + (1,) * nd)
        return y

    def bwd(g, xv, wv, bv=None):
        n, c = xv.shape[:2]
        spatial = xv.shape[2:]
        cols = _im2col(xv, nd).reshape((n, c * k) + spatial)
        axes = [0] + list(range(2, g.ndim))
        gw = np.tensordot(g, cols, axes=(axes, axes)).reshape(wv.shape)
        gcols = np.moveaxis(np.tensordot(wv.reshape(wv.shape[0], c * k), g, axes=([0], [1])), 0, 1)
        gcols = gcols.reshape((n, c, k) + spatial)
        gxp = np.zeros((n, c) + tuple(s + 2 for s in spatial))
        for t, off in enumerate(itertools.product(range(3), repeat=nd)):
            sl = (slice(None), slice(None)) + tuple(slice(o, o + s) for o, s in zip(off, spatial))
            gxp[sl] += gcols[:, :, t]
        gx = gxp[(slice(None), slice(None)) + (slice(1, -1),) * nd]
        if bv is None:
            return gx, gw
        return gx, gw, g.sum(axis=tuple(axes))

    return _node("conv2d", parents, fwd, bwd)


def relu(x):
    x = as_tensor(x)
    return _node(
        "relu",
        [x],
        lambda xv: np.maximum(xv, 0.0),
        lambda g, xv: (g * (xv > 0),),
    )


def _pool(xv, nd):
    shape = xv.shape[:2]
    for s in xv.shape[2:]:
        shape += (s // 2, 2)
    axes = tuple(3 + 2 * a for a in range(nd))
    return xv.reshape(shape).mean(axis=axes)


def _dup(xv, nd):
    for a in range(nd):
        xv = np.repeat(xv, 2, axis=2 + a)
    return xv


def avg_pool_2x2(x):
    """Average non-overlapping blocks of 2 cells along every spatial axis."""
    x = as_tensor(x)
    nd = _spatial(x.data, "avg_pool_2x2")
    if any(s % 2 for s in x.shape[2:]):
        raise ShapeError("avg_pool_2x2", x.shape, detail="spatial sizes must be even")
    scale_ = 0.5**nd
    return _node(
        "avg_pool_2x2",
        [x],
        lambda xv: _pool(xv, nd),
        lambda g, xv: (_dup(g, nd) * scale_,),
    )


def upsample_duplicate_2x(x):
    """Copy every cell into its 2 (1D) or 2x2 (2D) children."""
    x = as_tensor(x)
    nd = _spatial(x.data, "upsample_duplicate_2x")
    mult = 2.0**nd
    return _node(
        "upsample_duplicate_2x",
        [x],
        lambda xv: _dup(xv, nd),
        lambda g, xv: (_pool(g, nd) * mult,),
    )


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)
    return _node("add", [a, b], lambda av, bv: av + bv, lambda g, av, bv: (g, g))


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return _node("scale", [x], lambda xv: xv * c, lambda g, xv: (g * c,))


def concat_channels(*xs):
    xs = [as_tensor(x) for x in xs]
    ref = xs[0].shape
    for x in xs[1:]:
        if x.data.ndim != len(ref) or x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise ShapeError("concat_channels", *(t.shape for t in xs))
    splits = np.cumsum([x.shape[1] for x in xs])[:-1]

    def bwd(g, *vals):
        return tuple(np.split(g, splits, axis=1))

    return _node("concat_channels", xs, lambda *vals: np.concatenate(vals, axis=1), bwd)


def mse_loss(pred, target):
    """Mean of squared differences over every entry."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError("mse_loss", pred.shape, target.shape)
    n = pred.size

    def bwd(g, pv, tv):
        d = (2.0 / n) * g * (pv - tv)
        return d, -d

    return _node("mse_loss", [pred, target], lambda pv, tv: np.asarray(np.mean((pv - tv) ** 2)), bwd)


def frobenius_norm(x):
    x = as_tensor(x)

    def fwd(xv):
        return np.asarray(math.sqrt(float(np.sum(xv * xv))))

    def bwd(g, xv):
        nrm = math.sqrt(float(np.sum(xv * xv)))
        if nrm == 0.0:
            return (np.zeros_like(xv),)
        return (g * xv / nrm,)

    return _node("frobenius_norm", [x], fwd, bwd)


def total(x):
    """Sum of all entries (scalar)."""
    x = as_tensor(x)
    return _node(
        "total",
        [x],
        lambda xv: np.asarray(np.sum(xv)),
        lambda g, xv: (np.full_like(xv, float(g)),),
    )


# --------------------------------------------------------------------- graph traversal


def topological_order(root):
    """Parents-before-children order of all nodes reachable from ``root``.

    Deterministic: parents are visited left to right.
    """
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def eval_graph(root):
    """Recompute every node of the graph from its leaves; returns the root value."""
    for node in topological_order(root):
        if node.parents:
            node.data = np.asarray(node._fwd(*[p.data for p in node.parents]), dtype=np.float64, order="C")
    return root


def backward(loss):
    """Reverse-mode sweep from a scalar ``loss``.

    Populates ``.grad`` on every node that requires a gradient and returns a
    dict mapping each such leaf to its gradient array.  Contributions from
    several children are summed in a fixed order (children visited in reverse
    topological order, parents left to right).
    """
    if loss.size != 1:
        raise ShapeError("backward", loss.shape, detail="loss must be scalar")
    order = topological_order(loss)
    for node in order:
        node._acc = None
    loss._acc = np.ones_like(loss.data)
    leaves = {}
    for node in reversed(order):
        g = node._acc
        node._acc = None
        if g is None or not node.requires_grad:
            continue
        node.grad = g
        if not node.parents:
            leaves[node] = g
            continue
        pgrads = node._bwd(g, *[p.data for p in node.parents])
        for p, pg in zip(node.parents, pgrads):
            if p.requires_grad:
                # never updated in place, so aliasing a child's gradient is safe
                p._acc = pg if p._acc is None else p._acc + pg
    return leaves


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


def grad_check(f, x, eps=1e-5):
    """Largest coordinatewise relative error between reverse-mode and central differences.

    ``x`` is an array or a tuple of arrays; ``f`` receives matching tensors and
    returns a scalar tensor.  The denominator is ``max(|analytic|, |numeric|, 1e-8)``.
    """
    xs = [np.array(v, dtype=np.float64) for v in (x if isinstance(x, (tuple, list)) else (x,))]
    leaves = [Tensor(v, requires_grad=True) for v in xs]
    out = f(*leaves)
    backward(out)
    analytic = [np.zeros_like(v) if t.grad is None else t.grad for t, v in zip(leaves, xs)]

    worst = 0.0
    for k, v in enumerate(xs):
        numeric = np.zeros_like(v)
        flat = v.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            fp = float(f(*[Tensor(a) for a in xs]).data)
            flat[idx] = orig - eps
            fm = float(f(*[Tensor(a) for a in xs]).data)
            flat[idx] = orig
            numeric.reshape(-1)[idx] = (fp - fm) / (2 * eps)
        a = analytic[k]
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(numeric))):
            raise GradientError("non-finite gradient in grad_check")
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    return worst


def init_uniform(shape, fan_in, rng):
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
