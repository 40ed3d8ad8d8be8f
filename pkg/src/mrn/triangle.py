"""Self-similar right triangle: codespace addresses, encoding map, pooling, Haar.

The root triangle has vertices ``(0,0), (1,0), (0,1)``.  Each cell splits at
its edge midpoints into four children:

* digit 1: corner child at the right-angle vertex,
* digit 2: corner child at the x-extreme vertex,
* digit 3: corner child at the y-extreme vertex,
* digit 4: the inverted central child.

Triangle functions are stored as :class:`~mrn.spaces.MultiResFunction` with
``domain="triangle"``, values in lexicographic address order, so the four
children of a cell are always contiguous.
"""
from __future__ import annotations

import numpy as np

from .errors import ResolutionError, ShapeError
from .spaces import MultiResFunction

MAX_LAYOUT_DEPTH = 8
_ROOT = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

# orthogonal 4-point rows; W @ W.T = 4 I
WALSH = np.array(
    [
        [1, 1, 1, 1],
        [1, 1, -1, -1],
        [1, -1, 1, -1],
        [1, -1, -1, 1],
    ],
    dtype=np.float64,
)


def address_index(address):
    """Lexicographic position of an address among all addresses of its depth."""
    idx = 0
    for ch in address:
        d = int(ch)
        if not 1 <= d <= 4:
            raise ValueError(f"bad codespace digit {ch!r} in {address!r}")
        idx = 4 * idx + (d - 1)
    return idx


def index_address(idx, depth):
    digits = []
    for _ in range(depth):
        idx, r = divmod(idx, 4)
        digits.append(str(r + 1))
    return "".join(reversed(digits))


def all_addresses(depth):
    return [index_address(k, depth) for k in range(4**depth)]


def codespace_layout(depth):
    """Square grid of addresses: each digit picks a quadrant ``[[1, 2], [3, 4]]``."""
    if not 0 <= depth <= MAX_LAYOUT_DEPTH:
        raise ResolutionError(f"codespace_layout: depth {depth} outside [0, {MAX_LAYOUT_DEPTH}]")
    n = 2**depth
    grid = []
    for r in range(n):
        row = []
        for c in range(n):
            digits = []
            for level in range(depth - 1, -1, -1):
                digits.append(str(1 + 2 * ((r >> level) & 1) + ((c >> level) & 1)))
            row.append("".join(digits))
        grid.append(row)
    return grid


def _layout_permutation(depth):
    """``perm[r * n + c]`` = lexicographic index of the address at grid cell ``(r, c)``."""
    n = 2**depth
    r, c = np.divmod(np.arange(n * n), n)
    idx = np.zeros(n * n, dtype=np.int64)
    for level in range(depth - 1, -1, -1):
        idx = 4 * idx + 2 * ((r >> level) & 1) + ((c >> level) & 1)
    return idx


def encode(values, depth):
    """Lexicographic array(s) ``(..., 4**depth)`` to codespace grid(s) ``(..., 2**d, 2**d)``."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != 4**depth:
        raise ShapeError("tri encode", values.shape, detail=f"last axis must be 4**{depth}")
    n = 2**depth
    return values[..., _layout_permutation(depth)].reshape(values.shape[:-1] + (n, n))


def decode(grid, depth):
    grid = np.asarray(grid, dtype=np.float64)
    n = 2**depth
    if grid.shape[-2:] != (n, n):
        raise ShapeError("tri decode", grid.shape, detail=f"last axes must be {n}x{n}")
    flat = grid.reshape(grid.shape[:-2] + (n * n,))
    out = np.empty_like(flat)
    out[..., _layout_permutation(depth)] = flat
    return out


def cell_vertices(depth):
    """Vertex triples of every cell in address order, shape ``(4**depth, 3, 2)``."""
    V = _ROOT[None]
    for _ in range(depth):
        A, B, C = V[:, 0], V[:, 1], V[:, 2]
        mab, mac, mbc = (A + B) / 2, (A + C) / 2, (B + C) / 2
        kids = np.stack(
            [
                np.stack([A, mab, mac], axis=1),
                np.stack([mab, B, mbc], axis=1),
                np.stack([mac, mbc, C], axis=1),
                np.stack([mbc, mac, mab], axis=1),
            ],
            axis=1,
        )
        V = kids.reshape(-1, 3, 2)
    return V


def centroids(depth):
    return cell_vertices(depth).mean(axis=1)


def tri_sample(g, depth):
    """Sample ``g(x, y)`` at every cell centroid; ``g`` must accept arrays."""
    c = centroids(depth)
    vals = np.broadcast_to(np.asarray(g(c[:, 0], c[:, 1]), dtype=np.float64), (4**depth,))
    return MultiResFunction("triangle", depth, vals.copy())


def tri_pool_array(values, from_d, to_d):
    if to_d > from_d:
        raise ResolutionError(f"tri_avg_pool: to_depth {to_d} exceeds depth {from_d}")
    values = np.asarray(values, dtype=np.float64)
    return values.reshape(values.shape[:-1] + (4**to_d, 4 ** (from_d - to_d))).mean(axis=-1)


def tri_avg_pool(f, to_depth):
    """Parent value = mean of its four (equal-area) children, repeated to ``to_depth``."""
    if to_depth < 0:
        raise ResolutionError("tri_avg_pool: negative depth")
    return f.replace(resolution=to_depth, coeffs=tri_pool_array(f.grid, f.resolution, to_depth))


def tri_haar_array(values, depth):
    """Recursive 4-point Walsh transform along the last axis (averaging convention).

    Layout: father, then level 1 details (3), level 2 details (3 * 4), ...;
    within a level, parents in address order, three details per parent.
    """
    if depth < 1:
        raise ResolutionError("tri_haar: depth must be at least 1")
    a = np.asarray(values, dtype=np.float64)
    if a.shape[-1] != 4**depth:
        raise ShapeError("tri_haar", a.shape, detail=f"last axis must be 4**{depth}")
    lead = a.shape[:-1]
    details = []
    for _ in range(depth):
        blocks = a.reshape(lead + (-1, 4))
        coef = blocks @ WALSH.T / 4.0
        details.append(coef[..., 1:].reshape(lead + (-1,)))
        a = coef[..., 0]
    return np.concatenate([a] + details[::-1], axis=-1)


def tri_haar_inverse_array(coeffs, depth):
    if depth < 1:
        raise ResolutionError("tri_haar: depth must be at least 1")
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape[-1] != 4**depth:
        raise ShapeError("tri_haar", c.shape, detail=f"last axis must be 4**{depth}")
    lead = c.shape[:-1]
    a = c[..., :1]
    for level in range(1, depth + 1):
        lo, hi = 4 ** (level - 1), 4**level
        d = c[..., lo:hi].reshape(lead + (-1, 3))
        full = np.concatenate([a[..., None], d], axis=-1)
        a = (full @ WALSH).reshape(lead + (-1,))
    return a


def tri_haar(f):
    """Triangle Haar coefficients of a pixel-basis triangle function."""
    return tri_haar_array(f.grid, f.resolution)


def tri_haar_inverse(coeffs, depth, channels=1):
    vals = tri_haar_inverse_array(np.asarray(coeffs).reshape(channels, 4**depth), depth)
    return MultiResFunction("triangle", depth, vals, channels=channels)


def tri_haar_matrix(depth):
    """Explicit transform matrix (rows = coefficients); for analysis and tests."""
    return tri_haar_array(np.eye(4**depth), depth).T


def tri_detail_level(k):
    """Detail level of coefficient index ``k`` (0 for the father)."""
    level = 0
    while k >= 4**level:
        level += 1
    return level


def tri_band_variance(depth, level):
    """Variance of a level-``level`` coefficient under unit white noise."""
    return 4.0**-depth if level == 0 else 4.0 ** -(depth - level + 1)


def tri_synth(kind, depth):
    """Synthetic triangle data: ``constant``, ``plane`` or ``bump``."""
    if kind == "constant":
        return tri_sample(lambda x, y: np.ones_like(x), depth)
    if kind == "plane":
        return tri_sample(lambda x, y: x + 2.0 * y, depth)
    if kind == "bump":
        return tri_sample(lambda x, y: np.exp(-((x - 1 / 3) ** 2 + (y - 1 / 3) ** 2) / 0.02), depth)
    raise ValueError(f"unknown synthetic kind {kind!r}")
