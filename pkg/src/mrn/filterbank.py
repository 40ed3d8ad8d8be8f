"""Orthogonal two-channel filter banks and the periodic multi-level DWT.

Convention: orthonormal taps (Haar lowpass is ``(1/sqrt2, 1/sqrt2)``), periodic
boundary.  With the Haar bank the level-``l`` coarse band equals the
average-pooled signal times ``2**(l/2)`` in 1D and ``2**l`` in 2D (see
:func:`haar_coarse_scale`).  Details are stored finest level first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class FilterBank:
    name: str
    lowpass: np.ndarray
    highpass: np.ndarray = field(default=None)

    def __post_init__(self):
        lo = np.asarray(self.lowpass, dtype=np.float64)
        object.__setattr__(self, "lowpass", lo)
        if self.highpass is None:
            object.__setattr__(self, "highpass", quadrature_mirror(lo))
        else:
            object.__setattr__(self, "highpass", np.asarray(self.highpass, dtype=np.float64))

    def orthogonality_defect(self):
        """Largest violation of the double-shift orthonormality conditions."""
        h, g = self.lowpass, self.highpass
        L = len(h)
        worst = abs(np.dot(h, h) - 1.0)
        worst = max(worst, abs(np.dot(g, g) - 1.0))
        for m in range(-(L // 2), L // 2 + 1):
            s = 2 * m
            hh = sum(h[k] * h[k + s] for k in range(L) if 0 <= k + s < L)
            gg = sum(g[k] * g[k + s] for k in range(L) if 0 <= k + s < L)
            hg = sum(h[k] * g[k + s] for k in range(L) if 0 <= k + s < L)
            if m != 0:
                worst = max(worst, abs(hh), abs(gg))
            worst = max(worst, abs(hg))
        worst = max(worst, float(np.max(np.abs(g - quadrature_mirror(h)))))
        return worst


def quadrature_mirror(h):
    """Alternating-sign reversal ``g[k] = (-1)**k h[L-1-k]``."""
    h = np.asarray(h, dtype=np.float64)
    signs = (-1.0) ** np.arange(len(h))
    return signs * h[::-1]


def haar_bank():
    r = 1.0 / math.sqrt(2.0)
    return FilterBank("haar", np.array([r, r]))


def daubechies2_bank():
    """Four-tap Daubechies filter from its closed form."""
    s3 = math.sqrt(3.0)
    d = 4.0 * math.sqrt(2.0)
    taps = np.array([1.0 + s3, 3.0 + s3, 3.0 - s3, 1.0 - s3]) / d
    return FilterBank("db2", taps)


_REGISTRY = {}


def register_filter_bank(bank, tol=1e-12):
    """Add an orthogonal bank under ``bank.name``; rejects non-orthogonal taps."""
    defect = bank.orthogonality_defect()
    if defect > tol:
        raise ValueError(f"filter bank {bank.name!r} is not orthogonal (defect {defect:.3g})")
    _REGISTRY[bank.name] = bank
    return bank


def get_filter_bank(name):
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown filter bank {name!r}; known: {sorted(_REGISTRY)}") from None


def registered_banks():
    return dict(_REGISTRY)


register_filter_bank(haar_bank())
register_filter_bank(daubechies2_bank())


def _analysis(x, h, g, axis):
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    half = np.arange(n // 2)
    a = np.zeros(x.shape[:-1] + (n // 2,))
    d = np.zeros_like(a)
    for k in range(len(h)):
        xs = x[..., (2 * half + k) % n]
        a += h[k] * xs
        d += g[k] * xs
    return np.moveaxis(a, -1, axis), np.moveaxis(d, -1, axis)


def _synthesis(a, d, h, g, axis):
    a = np.moveaxis(a, axis, -1)
    d = np.moveaxis(d, axis, -1)
    half = a.shape[-1]
    n = 2 * half
    out = np.zeros(a.shape[:-1] + (n,))
    idx0 = 2 * np.arange(half)
    for k in range(len(h)):
        out[..., (idx0 + k) % n] += h[k] * a + g[k] * d
    return np.moveaxis(out, -1, axis)


@dataclass
class WaveletPyramid:
    coarse: np.ndarray
    details: list
    levels: int
    bank: str
    ndim: int

    def to_dict(self):
        if self.ndim == 1:
            dets = [d.tolist() for d in self.details]
        else:
            dets = [{k: b.tolist() for k, b in zip(("LH", "HL", "HH"), d)} for d in self.details]
        return {
            "bank": self.bank,
            "levels": self.levels,
            "ndim": self.ndim,
            "coarse": self.coarse.tolist(),
            "details": dets,
        }

    def rows(self):
        """``(band, index, value)`` triples; coarse band first, then details coarsest first."""
        out = [(f"A{self.levels}", k, float(v)) for k, v in enumerate(self.coarse.ravel())]
        for lvl in range(self.levels, 0, -1):
            d = self.details[lvl - 1]
            if self.ndim == 1:
                out += [(f"D{lvl}", k, float(v)) for k, v in enumerate(d.ravel())]
            else:
                for name, b in zip(("LH", "HL", "HH"), d):
                    out += [(f"{name}{lvl}", k, float(v)) for k, v in enumerate(b.ravel())]
        return out


def _check_dyadic(x, levels):
    for s in x.shape:
        if s < 2**levels or s & (s - 1):
            raise ShapeError("multilevel_dwt", x.shape, detail=f"sides must be powers of two >= 2**{levels}")


def multilevel_dwt(x, levels, bank="haar"):
    """Periodic orthonormal DWT of a 1D signal or square 2D image."""
    bank = get_filter_bank(bank) if isinstance(bank, str) else bank
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2):
        raise ShapeError("multilevel_dwt", x.shape, detail="expected 1D or 2D input")
    if levels < 0:
        raise ValueError("levels must be non-negative")
    _check_dyadic(x, levels)
    h, g = bank.lowpass, bank.highpass
    a = x
    details = []
    for _ in range(levels):
        if x.ndim == 1:
            a, d = _analysis(a, h, g, 0)
            details.append(d)
        else:
            lo, hi = _analysis(a, h, g, 0)
            ll, lh = _analysis(lo, h, g, 1)
            hl, hh = _analysis(hi, h, g, 1)
            a = ll
            details.append((lh, hl, hh))
    return WaveletPyramid(a, details, levels, bank.name, x.ndim)


def inverse_dwt(pyr, bank=None):
    bank = get_filter_bank(bank or pyr.bank) if not isinstance(bank, FilterBank) else bank
    h, g = bank.lowpass, bank.highpass
    a = pyr.coarse
    for d in reversed(pyr.details):
        if pyr.ndim == 1:
            a = _synthesis(a, d, h, g, 0)
        else:
            lh, hl, hh = d
            lo = _synthesis(a, lh, h, g, 1)
            hi = _synthesis(hl, hh, h, g, 1)
            a = _synthesis(lo, hi, h, g, 0)
    return a


def haar_coarse_scale(level, ndim=1):
    """Factor between the orthonormal Haar coarse band and the average-pooled signal."""
    return 2.0 ** (level * ndim / 2.0)
