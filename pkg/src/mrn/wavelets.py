"""Haar multi-resolution transforms on dyadic grids.

The pixel-to-Haar map here uses the averaging convention: the first
coefficient of a length-``2**i`` signal is its mean, and a band-``j`` detail
coefficient is half the difference of the two half-block means it straddles.
In matrix form this is ``T_i = diag(lam) @ H`` with ``H`` an integer matrix of
``0, +1, -1`` entries (see :func:`haar_matrix`).  Coefficients are ordered
father first, then band 1 (one coefficient), band 2 (two), ... band ``i``.

The orthonormal filter-bank convention lives in :mod:`mrn.filterbank`.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ResolutionError, ShapeError

MAX_MATRIX_RESOLUTION = 16


@dataclass(frozen=True)
class HaarTransform:
    resolution: int
    H: np.ndarray
    lam: np.ndarray

    @property
    def T(self):
        return self.lam[:, None] * self.H

    @property
    def T_inv(self):
        # rows of H are mutually orthogonal with squared norms = nonzero counts
        counts = np.count_nonzero(self.H, axis=1)
        return (self.H.T / counts) / self.lam


def band_of_index(k):
    """Band of the 0-based coefficient index ``k`` (0 is the father)."""
    return 0 if k == 0 else int(k).bit_length()


def band_slices(i):
    """Slices of the coefficient vector for bands ``0..i``."""
    out = [slice(0, 1)]
    for j in range(1, i + 1):
        out.append(slice(2 ** (j - 1), 2**j))
    return out


def band_scale(i, j):
    """Diagonal scaling for band ``j`` at resolution ``i``."""
    return 2.0 ** (-i) if j == 0 else 2.0 ** (-i + j - 1)


@lru_cache(maxsize=None)
def _haar_integer_matrix(i):
    if i == 0:
        return np.ones((1, 1), dtype=np.int8)
    prev = _haar_integer_matrix(i - 1)
    top = np.kron(prev, np.array([[1, 1]], dtype=np.int8))
    bottom = np.kron(np.eye(2 ** (i - 1), dtype=np.int8), np.array([[1, -1]], dtype=np.int8))
    H = np.vstack([top, bottom])
    H.setflags(write=False)
    return H


@lru_cache(maxsize=None)
def haar_matrix(i):
    """The cached transform ``T_i = diag(lam) @ H`` at resolution ``i``."""
    if not 0 <= i <= MAX_MATRIX_RESOLUTION:
        raise ResolutionError(f"haar_matrix: resolution {i} outside [0, {MAX_MATRIX_RESOLUTION}]")
    H = _haar_integer_matrix(i)
    lam = np.array([band_scale(i, band_of_index(k)) for k in range(2**i)])
    lam.setflags(write=False)
    return HaarTransform(i, H, lam)


def _check_length(v, i, axis=-1):
    if i < 0 or v.shape[axis] != 2**i:
        raise ShapeError("haar", v.shape, detail=f"axis {axis} must have length 2**{i}")


def pixel_to_haar(v, i, axis=-1):
    """Apply ``T_i`` along ``axis`` (fast O(n) cascade, no matrix)."""
    v = np.moveaxis(np.asarray(v, dtype=np.float64), axis, -1)
    _check_length(v, i)
    a = v
    details = []
    for _ in range(i):
        even, odd = a[..., 0::2], a[..., 1::2]
        details.append((even - odd) / 2.0)
        a = (even + odd) / 2.0
    out = np.concatenate([a] + details[::-1], axis=-1)
    return np.moveaxis(out, -1, axis)


def haar_to_pixel(c, i, axis=-1):
    """Inverse of :func:`pixel_to_haar`."""
    c = np.moveaxis(np.asarray(c, dtype=np.float64), axis, -1)
    _check_length(c, i)
    a = c[..., :1]
    for j in range(1, i + 1):
        d = c[..., 2 ** (j - 1) : 2**j]
        nxt = np.empty(a.shape[:-1] + (2 * a.shape[-1],))
        nxt[..., 0::2] = a + d
        nxt[..., 1::2] = a - d
        a = nxt
    return np.moveaxis(a, -1, axis)


def pixel_to_haar_2d(v, i):
    """Separable transform over the last two axes of a ``2**i x 2**i`` image."""
    return pixel_to_haar(pixel_to_haar(v, i, axis=-1), i, axis=-2)


def haar_to_pixel_2d(c, i):
    return haar_to_pixel(haar_to_pixel(c, i, axis=-2), i, axis=-1)


def truncate_haar(c, from_i, to_i, axis=-1):
    """Keep the leading ``2**to_i`` coefficients: projection onto the coarser space."""
    if to_i > from_i:
        raise ResolutionError(f"truncate_haar: cannot go from {from_i} up to {to_i}")
    c = np.moveaxis(np.asarray(c, dtype=np.float64), axis, -1)
    _check_length(c, from_i)
    return np.moveaxis(c[..., : 2**to_i], -1, axis)


def avg_pool_downsample(v, from_i, to_i, ndim=1):
    """Average blocks of ``2**(from_i - to_i)`` cells per axis over the last ``ndim`` axes."""
    if to_i > from_i:
        raise ResolutionError(f"avg_pool_downsample: to_i={to_i} exceeds from_i={from_i}")
    v = np.asarray(v, dtype=np.float64)
    n = 2**from_i
    if v.ndim < ndim or any(s != n for s in v.shape[v.ndim - ndim :]):
        raise ShapeError("avg_pool_downsample", v.shape, detail=f"last {ndim} axes must be {n}")
    f = 2 ** (from_i - to_i)
    lead = v.shape[: v.ndim - ndim]
    shape = lead
    for _ in range(ndim):
        shape += (2**to_i, f)
    axes = tuple(len(lead) + 2 * a + 1 for a in range(ndim))
    return v.reshape(shape).mean(axis=axes)


def duplicate_upsample(v, from_i, to_i, ndim=1):
    """Copy each cell into its ``2**(to_i - from_i)`` children per axis."""
    if to_i < from_i:
        raise ResolutionError(f"duplicate_upsample: to_i={to_i} below from_i={from_i}")
    v = np.asarray(v, dtype=np.float64)
    f = 2 ** (to_i - from_i)
    for a in range(ndim):
        v = np.repeat(v, f, axis=v.ndim - ndim + a)
    return v


def soft_threshold(c, lam):
    """``sign(c) * max(|c| - lam, 0)`` elementwise; ``lam`` may broadcast."""
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise ValueError("soft_threshold: threshold must be non-negative")
    c = np.asarray(c, dtype=np.float64)
    return np.sign(c) * np.maximum(np.abs(c) - lam, 0.0)
