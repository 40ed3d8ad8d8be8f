"""Piecewise-constant multi-resolution functions and the H^1_0 hat basis.

A :class:`MultiResFunction` stores ``channels`` blocks of coefficients, channel
major.  On the interval and square, pixel coefficients are cell values on the
``2**i`` (per axis) grid; on the triangle they are cell values in codespace
address order (see :mod:`mrn.triangle`).

The ``h01`` basis on the interval reuses the Haar coefficient layout: slot
``2**k + j`` holds the coefficient of the hat ``phi_{k,j}`` and slot 0 is
always zero, since no hat has a constant derivative.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import wavelets as wv
from .errors import ResolutionError, ShapeError

DOMAINS = ("interval", "square", "rectangle", "triangle")
BASES = ("pixel", "haar", "h01")
_NDIM = {"interval": 1, "square": 2, "rectangle": 2, "triangle": 1}


def cells(domain, i):
    if domain == "interval":
        return 2**i
    if domain in ("square", "triangle"):
        return 4**i
    if domain == "rectangle":
        # two unit squares side by side: [0, 2] x [0, 1]
        return 2 * 4**i
    raise ValueError(f"unknown domain {domain!r}")


def cell_measure(domain, i):
    return {"interval": 1.0, "square": 1.0, "rectangle": 2.0, "triangle": 0.5}[domain] / cells(domain, i)


def grid_shape(domain, i):
    if domain == "interval":
        return (2**i,)
    if domain == "square":
        return (2**i, 2**i)
    if domain == "rectangle":
        return (2**i, 2 ** (i + 1))
    return (4**i,)


@dataclass
class MultiResFunction:
    domain: str
    resolution: int
    coeffs: np.ndarray
    channels: int = 1
    basis: str = "pixel"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.basis not in BASES:
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.resolution < 0:
            raise ResolutionError(f"negative resolution {self.resolution}")
        self.coeffs = np.ascontiguousarray(self.coeffs, dtype=np.float64).reshape(-1)
        n = cells(self.domain, self.resolution) * self.channels
        if self.coeffs.size != n:
            raise ShapeError("MultiResFunction", self.coeffs.shape, (n,),
                             detail=f"{self.domain} at resolution {self.resolution} x {self.channels} channels")

    @classmethod
    def from_grid(cls, values, domain="interval", basis="pixel"):
        """Build from an array shaped ``grid`` or ``(channels, *grid)``."""
        values = np.asarray(values, dtype=np.float64)
        nd = 1 if domain in ("interval", "triangle") else 2
        if values.ndim == nd:
            values = values[None]
        n = values.shape[-1]
        if domain == "triangle":
            i = int(round(np.log(n) / np.log(4))) if n > 1 else 0
        elif domain == "rectangle":
            i = int(n // 2).bit_length() - 1
        else:
            i = int(n).bit_length() - 1
        return cls(domain, i, values.reshape(-1), channels=values.shape[0], basis=basis)

    @property
    def grid(self):
        """Coefficients shaped ``(channels, *grid)`` (a view)."""
        return self.coeffs.reshape((self.channels,) + grid_shape(self.domain, self.resolution))

    def replace(self, **kw):
        d = dict(domain=self.domain, resolution=self.resolution, coeffs=self.coeffs,
                 channels=self.channels, basis=self.basis)
        d.update(kw)
        return MultiResFunction(**d)


# --------------------------------------------------------------------- basis changes


def to_basis(f, basis):
    """Convert between ``pixel`` and ``haar`` coefficients."""
    if f.basis == basis:
        return f
    if {f.basis, basis} != {"pixel", "haar"}:
        raise ValueError(f"no conversion {f.basis} -> {basis}")
    i = f.resolution
    g = f.grid
    if f.domain == "interval":
        out = wv.pixel_to_haar(g, i) if basis == "haar" else wv.haar_to_pixel(g, i)
    elif f.domain == "square":
        out = wv.pixel_to_haar_2d(g, i) if basis == "haar" else wv.haar_to_pixel_2d(g, i)
    elif f.domain == "triangle":
        from . import triangle

        out = triangle.tri_haar_array(g, i) if basis == "haar" else triangle.tri_haar_inverse_array(g, i)
    else:
        raise ValueError(f"no Haar transform on {f.domain}")
    return f.replace(coeffs=out, basis=basis)


# --------------------------------------------------------------------- projection / inclusion


def project(f, to_i):
    """Orthogonal projection onto resolution ``to_i``.

    Pixel basis: average pooling.  Haar basis: coefficient truncation.
    """
    if to_i > f.resolution:
        raise ResolutionError(f"project: cannot go up from {f.resolution} to {to_i}; use include")
    if to_i < 0:
        raise ResolutionError(f"project: negative resolution {to_i}")
    i = f.resolution
    g = f.grid
    if f.basis == "h01":
        raise ValueError("project: h01 functions are not piecewise constant")
    if f.domain == "triangle":
        from . import triangle

        if f.basis == "pixel":
            out = triangle.tri_pool_array(g, i, to_i)
        else:
            out = g[..., : 4**to_i]
    elif f.domain == "rectangle":
        if f.basis != "pixel":
            raise ValueError("project: rectangle supports pixel basis only")
        left, right = g[..., : 2**i], g[..., 2**i :]
        out = np.concatenate([wv.avg_pool_downsample(left, i, to_i, 2),
                              wv.avg_pool_downsample(right, i, to_i, 2)], axis=-1)
    elif f.basis == "pixel":
        out = wv.avg_pool_downsample(g, i, to_i, _NDIM[f.domain])
    elif f.domain == "interval":
        out = g[..., : 2**to_i]
    else:
        out = g[..., : 2**to_i, : 2**to_i]
    return f.replace(resolution=to_i, coeffs=out)


def include(f, to_i=None):
    """Natural inclusion into a finer resolution (value-preserving)."""
    to_i = f.resolution + 1 if to_i is None else to_i
    if to_i < f.resolution:
        raise ResolutionError(f"include: target {to_i} below {f.resolution}")
    i = f.resolution
    g = f.grid
    if f.basis == "h01":
        raise ValueError("include: h01 functions are not piecewise constant")
    if f.domain == "triangle":
        if f.basis == "pixel":
            out = np.repeat(g, 4 ** (to_i - i), axis=-1)
        else:
            out = np.zeros(g.shape[:-1] + (4**to_i,))
            out[..., : 4**i] = g
    elif f.domain == "rectangle":
        if f.basis != "pixel":
            raise ValueError("include: rectangle supports pixel basis only")
        left, right = g[..., : 2**i], g[..., 2**i :]
        out = np.concatenate([wv.duplicate_upsample(left, i, to_i, 2),
                              wv.duplicate_upsample(right, i, to_i, 2)], axis=-1)
    elif f.basis == "pixel":
        out = wv.duplicate_upsample(g, i, to_i, _NDIM[f.domain])
    elif f.domain == "interval":
        out = np.zeros(g.shape[:-1] + (2**to_i,))
        out[..., : 2**i] = g
    else:
        out = np.zeros(g.shape[:-2] + (2**to_i, 2**to_i))
        out[..., : 2**i, : 2**i] = g
    return f.replace(resolution=to_i, coeffs=out)


def coarse_part(f, to_i):
    """``Q f``: projection to ``to_i`` included back at ``f``'s resolution."""
    return include(project(f, to_i), f.resolution)


def detail_part(f, to_i):
    """``Q^perp f = f - Q f``."""
    return f.replace(coeffs=f.coeffs - coarse_part(f, to_i).coeffs)


def inner(f, g):
    """L2 inner product of two pixel-basis functions on the same grid."""
    if (f.domain, f.resolution, f.channels) != (g.domain, g.resolution, g.channels):
        raise ShapeError("inner", f.coeffs.shape, g.coeffs.shape)
    f, g = to_basis(f, "pixel"), to_basis(g, "pixel")
    return float(np.dot(f.coeffs, g.coeffs)) * cell_measure(f.domain, f.resolution)


def l2_norm(f):
    return float(np.sqrt(inner(f, f)))


def l2_loss(predictions, targets, resolution=None):
    """``sqrt(mean_n ||w_n - U(v_n)||^2)`` with the cell-measure-weighted L2 norm."""
    predictions, targets = list(predictions), list(targets)
    if not predictions:
        raise ValueError("l2_loss: empty dataset")
    if len(predictions) != len(targets):
        raise ShapeError("l2_loss", (len(predictions),), (len(targets),))
    total = 0.0
    for p, t in zip(predictions, targets):
        if resolution is not None and (p.resolution != resolution or t.resolution != resolution):
            raise ResolutionError(f"l2_loss: expected resolution {resolution}")
        d = p.replace(coeffs=to_basis(p, "pixel").coeffs - to_basis(t, "pixel").coeffs, basis="pixel")
        total += inner(d, d)
    return float(np.sqrt(total / len(predictions)))


def l2_loss_arrays(pred, target, measure):
    """Array form of :func:`l2_loss`: rows are samples, columns cells (all channels)."""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("l2_loss", pred.shape, target.shape)
    if pred.shape[0] == 0:
        raise ValueError("l2_loss: empty dataset")
    d = (pred - target).reshape(pred.shape[0], -1)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1) * measure)))


# --------------------------------------------------------------------- H^1_0 hats


def _check_hat(k, j):
    if k < 0 or not 0 <= j < 2**k:
        raise IndexError(f"hat index (k={k}, j={j}) out of range")


def h01_eval(k, j, x):
    """Hat supported on ``[j 2^-k, (j+1) 2^-k]`` with peak 1 at its midpoint."""
    _check_hat(k, j)
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < 0) | (x > 1)):
        raise ValueError("h01_eval: x outside [0, 1]")
    y = 2.0**k * x - j
    return np.where((y >= 0) & (y <= 1), 1.0 - np.abs(2.0 * y - 1.0), 0.0)


def h01_derivative(k, j, level):
    """Derivative of ``phi_{k,j}`` as cell values on the ``2**level`` grid (``level > k``)."""
    _check_hat(k, j)
    if level <= k:
        raise ResolutionError("h01_derivative: grid must be finer than the hat")
    d = np.zeros(2**level)
    w = 2 ** (level - k - 1)
    slope = 2.0 ** (k + 1)
    start = j * 2 * w
    d[start : start + w] = slope
    d[start + w : start + 2 * w] = -slope
    return d


def h01_inner(a, b):
    """``int_0^1 phi_a' phi_b' dx`` computed exactly on a common dyadic grid."""
    level = max(a[0], b[0]) + 1
    da, db = h01_derivative(*a, level), h01_derivative(*b, level)
    return float(np.dot(da, db)) * 2.0**-level


def h01_indices(i):
    """Hat indices spanning resolution ``i``: ``k = 0..i-1``, ``j = 0..2**k - 1``."""
    return [(k, j) for k in range(i) for j in range(2**k)]


def _load_integrals(fvals, r, i):
    """Exact ``int phi_{k,j} f`` for piecewise-constant ``f`` on the ``2**r`` grid, ``r >= i``."""
    h = 2.0**-r
    nodes = np.arange(2**r + 1) * h
    out = np.zeros(2**i)
    for k, j in h01_indices(i):
        phi = h01_eval(k, j, nodes)
        # phi is linear on every cell of a grid at least as fine as 2**(k+1)
        out[2**k + j] = float(np.dot(fvals, (phi[:-1] + phi[1:]) * 0.5)) * h
    return out


def galerkin_solve_elliptic(f, i):
    """Solve ``u'' = f`` on [0, 1] with ``u(0) = u(1) = 0`` in the resolution-``i`` hat basis.

    The hats are mutually orthogonal in the energy inner product, so the
    stiffness matrix is diagonal and ``c_a = -(int phi_a f) / <phi_a, phi_a>``.
    Returns a single-channel ``h01`` function at resolution ``i``.
    """
    if f.domain != "interval":
        raise ValueError("galerkin_solve_elliptic: interval domain only")
    if i < 1:
        raise ResolutionError("galerkin_solve_elliptic: resolution 0 has an empty hat basis")
    if f.basis == "h01":
        raise ValueError("galerkin_solve_elliptic: right-hand side must be piecewise constant")
    f = to_basis(f, "pixel")
    r = f.resolution
    vals = f.grid
    if r < i:
        vals = wv.duplicate_upsample(vals, r, i)
        r = i
    out = []
    for ch in range(f.channels):
        loads = _load_integrals(vals[ch], r, i)
        c = np.zeros(2**i)
        for k, j in h01_indices(i):
            c[2**k + j] = -loads[2**k + j] / h01_inner((k, j), (k, j))
        out.append(c)
    return MultiResFunction("interval", i, np.concatenate(out), channels=f.channels, basis="h01")


def h01_function_eval(u, x):
    """Evaluate an ``h01`` function (first channel unless it has one) at points ``x``."""
    if u.basis != "h01":
        raise ValueError("h01_function_eval: expects an h01 function")
    x = np.asarray(x, dtype=np.float64)
    vals = np.zeros((u.channels,) + x.shape)
    g = u.grid
    for k, j in h01_indices(u.resolution):
        phi = h01_eval(k, j, x)
        vals += g[:, 2**k + j].reshape((-1,) + (1,) * x.ndim) * phi
    return vals[0] if u.channels == 1 else vals


def elliptic_exact(f, x):
    """Exact solution of ``u'' = f``, ``u(0) = u(1) = 0`` for piecewise-constant ``f`` (first channel).

    Integrates twice in closed form cell by cell; independent of the hat basis.
    """
    f = to_basis(f, "pixel")
    if f.domain != "interval":
        raise ValueError("elliptic_exact: interval domain only")
    fv = f.grid[0]
    n = fv.size
    h = 1.0 / n
    S = np.concatenate([[0.0], np.cumsum(fv) * h])  # F1 at nodes
    T = np.zeros(n + 1)  # F2 at nodes
    for m in range(n):
        T[m + 1] = T[m] + S[m] * h + fv[m] * h * h / 2
    x = np.asarray(x, dtype=np.float64)
    m = np.minimum((x * n).astype(np.int64), n - 1)
    s = x - m * h
    F2 = T[m] + S[m] * s + fv[m] * s * s / 2
    return F2 - x * T[n]
