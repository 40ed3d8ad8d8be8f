"""Forward noising process and its spectrum in the Haar basis.

The per-cell process is ``X(t) = sqrt(1 - a_t) X0 + sqrt(a_t) eps`` with
standard normal ``eps``.  Monte Carlo estimates draw samples in fixed-size
chunks; chunk ``c`` uses the stream ``SeedSequence(seed, spawn_key=(stream, c))``,
so results do not depend on how chunks are spread across workers.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import wavelets as wv
from .errors import ResolutionError, ShapeError
from .spaces import MultiResFunction

CHUNK = 4096
Z95 = 1.959963984540054


@dataclass(frozen=True)
class DiffusionSchedule:
    """``alpha(t)`` on [0, 1]: ``linear`` is ``t``; ``exp`` is ``1 - exp(-rate t)``."""

    kind: str = "linear"
    rate: float = 5.0

    def __post_init__(self):
        if self.kind not in ("linear", "exp"):
            raise ValueError(f"unknown schedule {self.kind!r}")

    def alpha(self, t):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t={t} outside [0, 1]")
        if self.kind == "linear":
            return float(t)
        return float(1.0 - math.exp(-self.rate * t))


def _schedule(s):
    return DiffusionSchedule(s) if isinstance(s, str) else s


def max_workers():
    env = os.environ.get("MRN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _stream(seed, stream, chunk):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, chunk)))


def forward_sample(x0, t, schedule="linear", seed=0, noise_scale=1.0):
    """One draw of the noised function (pixel basis)."""
    a = _schedule(schedule).alpha(t)
    if x0.basis != "pixel":
        raise ValueError("forward_sample: x0 must be in the pixel basis")
    eps = _stream(seed, 0, 0).standard_normal(x0.coeffs.shape)
    vals = math.sqrt(1.0 - a) * x0.coeffs + noise_scale * math.sqrt(a) * eps
    return x0.replace(coeffs=vals)


class _Moments:
    """Chunk-mergeable mean / second central moment (Chan et al. update)."""

    def __init__(self, shape):
        self.n = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def add_chunk(self, x):
        k = x.shape[0]
        mean = x.mean(axis=0)
        m2 = ((x - mean) ** 2).sum(axis=0)
        if self.n == 0:
            self.n, self.mean, self.m2 = k, mean, m2
            return
        n = self.n + k
        delta = mean - self.mean
        self.mean = self.mean + delta * (k / n)
        self.m2 = self.m2 + m2 + delta**2 * (self.n * k / n)
        self.n = n

    @property
    def var(self):
        return self.m2 / (self.n - 1)


def _chunks(n):
    return [min(CHUNK, n - s) for s in range(0, n, CHUNK)]


def _sample_moments(draw, n, shape):
    """Run ``draw(chunk_index, size)`` over all chunks; merge moments in chunk order."""
    sizes = _chunks(n)
    with ThreadPoolExecutor(max_workers=max_workers()) as pool:
        results = list(pool.map(lambda cs: draw(*cs), enumerate(sizes)))
    mom = _Moments(shape)
    for r in results:
        mom.add_chunk(r)
    return mom


@dataclass
class SpectrumReport:
    resolution: int
    t: float
    alpha: float
    samples: int
    seed: int
    schedule: str
    bands: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def variances(self):
        return np.array([b["variance"] for b in self.bands])

    def ratios(self):
        return np.array([np.nan if b["ratio"] is None else b["ratio"] for b in self.bands])

    def csv_rows(self):
        return [(b["band"], b["variance"], b["ratio"], b["ci"]) for b in self.bands]


def _band_record(label, var, analytic, base_var, base_analytic, m, n):
    ratio = None if base_var == 0 else var / base_var
    return {
        "band": label,
        "variance": float(var),
        "analytic": float(analytic),
        "ratio": None if ratio is None else float(ratio),
        "analytic_ratio": None if base_analytic == 0 else float(analytic / base_analytic),
        "ci": float(Z95 * var * math.sqrt(2.0 / (n - 1) / m)),
        "coefficients": int(m),
    }


def spectrum_variance(x0, t, schedule="linear", samples=100_000, seed=0):
    """Per-band variance of the Haar coefficients of ``X(t)``.

    1D input gives bands ``0..i`` (father first).  A square input is analysed
    separably and reports bands labelled ``"jy,jx"``.
    """
    if samples < 100:
        raise ValueError("spectrum_variance: need at least 100 samples")
    sched = _schedule(schedule)
    a = sched.alpha(t)
    i = x0.resolution
    if x0.channels != 1 or x0.basis != "pixel":
        raise ShapeError("spectrum_variance", x0.coeffs.shape, detail="single-channel pixel input")
    base = math.sqrt(1.0 - a) * x0.grid[0]
    sa = math.sqrt(a)

    if x0.domain == "interval":
        def draw(c, k):
            eps = _stream(seed, 0, c).standard_normal((k, 2**i))
            return wv.pixel_to_haar(base + sa * eps, i)

        mom = _sample_moments(draw, samples, (2**i,))
        var = mom.var
        sl = wv.band_slices(i)
        v0 = float(var[sl[0]].mean())
        bands = [
            _band_record(str(j), float(var[s].mean()), a * wv.band_scale(i, j), v0, a * wv.band_scale(i, 0),
                         s.stop - s.start, samples)
            for j, s in enumerate(sl)
        ]
    elif x0.domain == "square":
        n = 2**i

        def draw(c, k):
            eps = _stream(seed, 0, c).standard_normal((k, n, n))
            return wv.pixel_to_haar_2d(base + sa * eps, i)

        mom = _sample_moments(draw, samples, (n, n))
        var = mom.var
        sl = wv.band_slices(i)
        v0 = float(var[0, 0])
        a0 = a * wv.band_scale(i, 0) ** 2
        bands = []
        for jy, sy in enumerate(sl):
            for jx, sx in enumerate(sl):
                block = var[sy, sx]
                bands.append(_band_record(f"{jy},{jx}", float(block.mean()),
                                          a * wv.band_scale(i, jy) * wv.band_scale(i, jx), v0, a0,
                                          block.size, samples))
    else:
        raise ValueError(f"spectrum_variance: unsupported domain {x0.domain}")
    return SpectrumReport(i, float(t), a, samples, seed, sched.kind, bands)


def cross_resolution_consistency(x0_fine, t, coarse, schedule="linear", samples=100_000, seed=0):
    """Compare ``P_coarse X_fine(t)`` with ``X_coarse(t)`` cell by cell.

    The fine process uses noise scaled by ``2**((fine - coarse) / 2)``; the
    coarse initial data is the average-pooled fine data.
    """
    j = x0_fine.resolution
    if coarse > j:
        raise ResolutionError(f"cross_resolution_consistency: coarse {coarse} exceeds fine {j}")
    if samples < 100:
        raise ValueError("cross_resolution_consistency: need at least 100 samples")
    if x0_fine.domain != "interval" or x0_fine.channels != 1:
        raise ShapeError("cross_resolution_consistency", x0_fine.coeffs.shape, detail="1D single channel")
    sched = _schedule(schedule)
    a = sched.alpha(t)
    x0f = x0_fine.grid[0]
    x0c = wv.avg_pool_downsample(x0f, j, coarse)
    sa = math.sqrt(a)
    keep = math.sqrt(1.0 - a)
    scale = 2.0 ** ((j - coarse) / 2.0)

    def pooled(c, k):
        eps = _stream(seed, 1, c).standard_normal((k, 2**j))
        return wv.avg_pool_downsample(keep * x0f + scale * sa * eps, j, coarse)

    def direct(c, k):
        eps = _stream(seed, 2, c).standard_normal((k, 2**coarse))
        return keep * x0c + sa * eps

    mp = _sample_moments(pooled, samples, (2**coarse,))
    md = _sample_moments(direct, samples, (2**coarse,))
    vp, vd = mp.var, md.var
    se = np.sqrt((vp + vd) / samples)
    diff = np.abs(mp.mean - md.mean)
    z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), 0.0)
    ratio = np.where(vd > 0, vp / np.where(vd > 0, vd, 1.0), np.where(vp > 0, np.inf, 1.0))
    return {
        "fine": j,
        "coarse": coarse,
        "t": float(t),
        "alpha": a,
        "schedule": sched.kind,
        "samples": samples,
        "seed": seed,
        "noise_scale": scale,
        "max_mean_discrepancy": float(diff.max()),
        "max_mean_z": float(z.max()),
        "variance_ratio": [float(r) for r in ratio],
        "max_variance_ratio_error": float(np.max(np.abs(ratio - 1.0))),
        "pooled_variance": [float(v) for v in vp],
        "direct_variance": [float(v) for v in vd],
        "expected_variance": a,
    }


def universal_thresholds(i, alpha, c=math.sqrt(2.0)):
    """Per-coefficient thresholds: 0 on the father, ``c sqrt(alpha 2^(-i+j-1) log 2^i)`` on band ``j``."""
    lam = np.zeros(2**i)
    if i == 0:
        return lam
    for j, s in enumerate(wv.band_slices(i)):
        if j:
            lam[s] = c * math.sqrt(alpha * wv.band_scale(i, j) * math.log(2.0**i))
    return lam


def denoise_soft_threshold(x_t, t, schedule="linear", c=math.sqrt(2.0), lam=None, rescale=True):
    """Soft-threshold the Haar details of ``x_t`` and map back to pixels.

    ``lam`` overrides the per-coefficient thresholds (scalar or array; the
    father coefficient is never thresholded).  With ``rescale`` the result is
    divided by ``sqrt(1 - alpha)`` to estimate ``x0`` itself.
    """
    a = _schedule(schedule).alpha(t)
    i = x_t.resolution
    if x_t.domain != "interval":
        raise ValueError("denoise_soft_threshold: interval domain only")
    coeffs = wv.pixel_to_haar(x_t.grid, i)
    if lam is None:
        thr = universal_thresholds(i, a, c)
    else:
        thr = np.broadcast_to(np.asarray(lam, dtype=np.float64), (2**i,)).copy()
        thr[0] = 0.0
    # an infinite threshold zeroes the coefficient: max(|c| - inf, 0) = 0
    shrunk = wv.soft_threshold(coeffs, thr)
    out = wv.haar_to_pixel(shrunk, i)
    if rescale and a < 1.0:
        out = out / math.sqrt(1.0 - a)
    return x_t.replace(coeffs=out)


def equal_energy_signal(i, level=1.0):
    """Signal whose Haar coefficients all equal ``level`` (same energy per coefficient in every band)."""
    return MultiResFunction("interval", i, wv.haar_to_pixel(np.full(2**i, level), i))


def band_snr(x0, report):
    """Signal energy per coefficient over measured noise variance, per band (1D)."""
    i = x0.resolution
    c = wv.pixel_to_haar(x0.grid[0], i)
    keep = 1.0 - report.alpha
    out = []
    for j, s in enumerate(wv.band_slices(i)):
        sig = keep * float(np.mean(c[s] ** 2))
        out.append(sig / report.bands[j]["variance"])
    return np.array(out)
