"""Generalized U-Nets as a recursive hierarchy of residual operators.

Levels are numbered ``1..J`` from coarse to fine, with the bottleneck ``U_0``
at level 0.  Level ``l >= 1`` works on the grid of resolution
``base_resolution + l - 1``; the bottleneck shares the coarsest grid, so
``P_0`` is the identity.  With ``multi_subspace=False`` every level uses the
finest grid and all projections are identities.

The forward pass at level ``i`` is::

    v~_i = E_i(v_i)                      (v_i + residual, or v_i for Multi-ResNets)
    w_{i-1} = U_{i-1}(P_{i-1}(v~_i))
    U_i(v_i) = D_i(w_{i-1} | v~_i) = incl(w_{i-1}) + residual([incl(w_{i-1}), v~_i])
"""
from __future__ import annotations

import io
import json
import re
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import triangle as tri
from .errors import FormatError, ResolutionError, ShapeError
from .spaces import MultiResFunction

ENCODERS = ("resnet", "identity")
PROJECTIONS = ("avg_pool", "orthogonal_haar")
SKIPS = ("normal", "zeroed")
BOTTLENECKS = ("identity", "resnet", "linear")
_DIMS = {"interval": 1, "square": 2, "triangle": 2}


@dataclass(frozen=True)
class UNetSpec:
    J: int = 3
    domain: str = "interval"
    in_channels: int = 1
    out_channels: int = 1
    base_resolution: int = 0
    width: int = 4
    encoder: str = "resnet"
    projection: str = "avg_pool"
    bottleneck: str = "identity"
    skip_mode: str = "normal"
    multi_subspace: bool = True
    heads: bool = False

    def __post_init__(self):
        if self.J < 1:
            raise ValueError("UNetSpec: J must be at least 1")
        if self.domain not in _DIMS:
            raise ValueError(f"UNetSpec: unsupported domain {self.domain!r}")
        for name, val, allowed in (
            ("encoder", self.encoder, ENCODERS),
            ("projection", self.projection, PROJECTIONS),
            ("skip_mode", self.skip_mode, SKIPS),
            ("bottleneck", self.bottleneck, BOTTLENECKS),
        ):
            if val not in allowed:
                raise ValueError(f"UNetSpec: {name} must be one of {allowed}, got {val!r}")
        if self.bottleneck in ("identity", "resnet") and self.in_channels != self.out_channels:
            raise ShapeError("UNetSpec", (self.in_channels,), (self.out_channels,),
                             detail=f"level 0: bottleneck {self.bottleneck!r} needs equal channel counts")
        if self.base_resolution < 0 or self.width < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("UNetSpec: resolutions, widths and channels must be positive")

    @property
    def dims(self):
        return _DIMS[self.domain]

    @property
    def is_multiresnet(self):
        return self.encoder == "identity"

    def grid_resolution(self, level):
        if not 0 <= level <= self.J:
            raise ResolutionError(f"level {level} outside [0, {self.J}]")
        if not self.multi_subspace:
            return self.base_resolution + self.J - 1
        return self.base_resolution + max(level, 1) - 1

    def level_of_resolution(self, res):
        for lvl in range(self.J, 0, -1):
            if self.grid_resolution(lvl) == res:
                return lvl
        raise ResolutionError(f"no U-Net level works at grid resolution {res}")

    def hidden_width(self, level):
        return self.width * 2 ** (self.J - max(level, 1))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class UNetState:
    spec: UNetSpec
    params: dict
    frozen: set = field(default_factory=set)

    def level_params(self, level):
        return [t for name, t in self.params.items() if param_level(name) == level]

    def trainable(self, max_level):
        return [
            (name, t)
            for name, t in self.params.items()
            if param_level(name) <= max_level and param_level(name) not in self.frozen
        ]

    def snapshot(self):
        return {k: t.data.copy() for k, t in self.params.items()}

    def count(self, prefix=""):
        return int(sum(t.size for k, t in self.params.items() if k.startswith(prefix)))


def param_level(name):
    """Level owning parameter ``name`` (``enc3.w1`` -> 3, ``bott.w`` -> 0)."""
    head = name.split(".", 1)[0]
    if head == "bott":
        return 0
    return int(re.fullmatch(r"(?:enc|dec|head|tail)(\d+)", head).group(1))


# --------------------------------------------------------------------- construction


def _conv_params(params, prefix, cin, cout, dims, rng, suffix):
    fan_in = cin * 3**dims
    params[f"{prefix}.w{suffix}"] = ad.Tensor(ad.init_uniform((cout, cin) + (3,) * dims, fan_in, rng), True)
    params[f"{prefix}.b{suffix}"] = ad.Tensor(ad.init_uniform((cout,), fan_in, rng), True)


def build_unet(spec, seed=0):
    """Allocate and initialize parameters deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    d = spec.dims
    cin, cout = spec.in_channels, spec.out_channels
    params = {}
    if spec.bottleneck == "resnet":
        h = spec.hidden_width(0)
        _conv_params(params, "bott", cin, h, d, rng, 1)
        _conv_params(params, "bott", h, cin, d, rng, 2)
    elif spec.bottleneck == "linear":
        params["bott.w"] = ad.Tensor(ad.init_uniform((cout, cin), cin, rng), True)
        params["bott.b"] = ad.Tensor(ad.init_uniform((cout,), cin, rng), True)
    for lvl in range(1, spec.J + 1):
        h = spec.hidden_width(lvl)
        if spec.encoder == "resnet":
            _conv_params(params, f"enc{lvl}", cin, h, d, rng, 1)
            _conv_params(params, f"enc{lvl}", h, cin, d, rng, 2)
        _conv_params(params, f"dec{lvl}", cout + cin, h, d, rng, 1)
        _conv_params(params, f"dec{lvl}", h, cout, d, rng, 2)
        if spec.heads:
            # adapters start as the identity map
            params[f"head{lvl}.w"] = ad.Tensor(np.eye(cin), True)
            params[f"head{lvl}.b"] = ad.Tensor(np.zeros(cin), True)
            params[f"tail{lvl}.w"] = ad.Tensor(np.eye(cout), True)
            params[f"tail{lvl}.b"] = ad.Tensor(np.zeros(cout), True)
    return UNetState(spec, params)


def zero_residuals(state, parts=("enc", "dec", "bott")):
    """Zero the last layer of the chosen residual bodies so they output 0."""
    for name, t in state.params.items():
        head, leaf = name.split(".")
        kind = head.rstrip("0123456789")
        if kind in parts and leaf in ("w2", "b2"):
            t.data = np.zeros_like(t.data)
    return state


# --------------------------------------------------------------------- forward pass


def _body(state, prefix, x):
    p = state.params
    h = ad.relu(ad.conv2d(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
    return ad.conv2d(h, p[f"{prefix}.w2"], p[f"{prefix}.b2"])


def _bottleneck(state, x):
    kind = state.spec.bottleneck
    if kind == "identity":
        return x
    if kind == "linear":
        return ad.linear(x, state.params["bott.w"], state.params["bott.b"])
    return ad.add(x, _body(state, "bott", x))


def encode(state, x, level):
    """``v~_i = E_i(v_i)``."""
    if state.spec.encoder == "identity":
        return x
    return ad.add(x, _body(state, f"enc{level}", x))


def _project_down(state, x, level):
    """``P_{level-1}`` applied to a level-``level`` tensor."""
    spec = state.spec
    if spec.grid_resolution(level - 1) == spec.grid_resolution(level):
        return x
    # average pooling and Haar truncation agree on piecewise-constant carriers
    return ad.avg_pool_2x2(x)


def _include_up(state, w, level):
    """Natural inclusion of a level-``level - 1`` output into level ``level``."""
    spec = state.spec
    if spec.grid_resolution(level - 1) == spec.grid_resolution(level):
        return w
    return ad.upsample_duplicate_2x(w)


def core_forward(state, x, level, parts=None):
    """Graph of ``U_level`` (no head/tail adapters) on a batch tensor.

    If ``parts`` is a dict it receives the preconditioner ``incl(w_{i-1})``
    and the decoder residual for ``level``.
    """
    if level == 0:
        return _bottleneck(state, x)
    vt = encode(state, x, level)
    w = core_forward(state, _project_down(state, vt, level), level - 1)
    up = _include_up(state, w, level)
    skip = vt if state.spec.skip_mode == "normal" else ad.Tensor(np.zeros(vt.shape))
    res = _body(state, f"dec{level}", ad.concat_channels(up, skip))
    if parts is not None:
        parts["pre"], parts["res"] = up, res
    return ad.add(up, res)


def forward_graph(state, x, level):
    """Graph of the level-``level`` U-Net including head/tail adapters if present."""
    spec = state.spec
    if spec.heads and level >= 1:
        x = ad.linear(x, state.params[f"head{level}.w"], state.params[f"head{level}.b"])
    y = core_forward(state, x, level)
    if spec.heads and level >= 1:
        y = ad.linear(y, state.params[f"tail{level}.w"], state.params[f"tail{level}.b"])
    return y


def _check_batch(state, x, level, channels):
    spec = state.spec
    n = 2 ** spec.grid_resolution(level)
    want = (channels,) + (n,) * spec.dims
    if x.ndim != 2 + spec.dims or x.shape[1:] != want:
        raise ShapeError("unet_forward", x.shape, ("N",) + want, detail=f"level {level}")


def _to_batch(state, v, level):
    spec = state.spec
    if isinstance(v, MultiResFunction):
        if spec.domain == "triangle":
            if v.domain != "triangle":
                raise ShapeError("unet_forward", v.coeffs.shape, detail="triangle net needs triangle input")
            arr = tri.encode(v.grid, v.resolution)[None]
        else:
            arr = v.grid[None]
    else:
        arr = np.asarray(v, dtype=np.float64)
    _check_batch(state, arr, level, spec.in_channels)
    return arr


def _from_batch(state, y, like):
    if not isinstance(like, MultiResFunction):
        return y
    res = like.resolution
    if state.spec.domain == "triangle":
        vals = tri.decode(y[0], res)
        return MultiResFunction("triangle", res, vals, channels=y.shape[1])
    return MultiResFunction(like.domain, res, y[0], channels=y.shape[1])


def unet_forward(state, v, level=None):
    """Evaluate ``U_level`` on ``v`` (a :class:`MultiResFunction` or a batch array)."""
    spec = state.spec
    if level is None:
        level = spec.J
    if not 0 <= level <= spec.J:
        raise ResolutionError(f"unet_forward: level {level} exceeds J={spec.J}")
    x = _to_batch(state, v, level)
    y = forward_graph(state, ad.Tensor(x), level).data
    return _from_batch(state, y, v)


def precondition_split(state, v, level):
    """Split ``U_i(v)`` into the preconditioner ``incl(U_{i-1}(P_{i-1}E_i v))`` and the residual.

    The preconditioner is evaluated through a separate call of the
    level-``i-1`` network; the residual is the decoder body.
    """
    if level < 1:
        raise ResolutionError("precondition_split: level 0 has no lower resolution")
    if state.spec.heads:
        raise ValueError("precondition_split: applies to the adapter-free core network")
    x = ad.Tensor(_to_batch(state, v, level))
    vt = encode(state, x, level)
    lower = core_forward(state, _project_down(state, vt, level), level - 1)
    pre = _include_up(state, lower, level).data
    parts = {}
    core_forward(state, x, level, parts)
    res = parts["res"].data
    return _from_batch(state, pre, v), _from_batch(state, res, v)


def multiresnet_skips(v, coarsest=0):
    """Skip functions of a Multi-ResNet: ``v`` average-pooled to each coarser resolution.

    Ordered finest first, ``[v, P(v), P(P(v)), ...]``, ending at ``coarsest``.
    No parameters are involved.
    """
    from .spaces import project

    if not 0 <= coarsest <= v.resolution:
        raise ResolutionError(f"multiresnet_skips: coarsest {coarsest} outside [0, {v.resolution}]")
    return [project(v, r) for r in range(v.resolution, coarsest - 1, -1)]


# --------------------------------------------------------------------- serialization

UNS_MAGIC = b"UNS1"
UNS_VERSION = 1


def dumps(state):
    buf = io.BytesIO()
    header = json.dumps({"spec": state.spec.to_dict(), "frozen": sorted(state.frozen)}, sort_keys=True).encode()
    buf.write(UNS_MAGIC)
    buf.write(struct.pack("<II", UNS_VERSION, len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(state.params)))
    for name in sorted(state.params):
        t = state.params[name].data
        key = name.encode()
        buf.write(struct.pack("<I", len(key)))
        buf.write(key)
        buf.write(struct.pack("<I", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(t.astype("<f8").tobytes())
    return buf.getvalue()


def loads(data):
    mv = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(mv):
            raise FormatError("uns: truncated file")
        out = bytes(mv[pos : pos + n])
        pos += n
        return out

    if take(4) != UNS_MAGIC:
        raise FormatError("uns: bad magic")
    version, hlen = struct.unpack("<II", take(8))
    if version != UNS_VERSION:
        raise FormatError(f"uns: unsupported version {version}")
    try:
        header = json.loads(take(hlen))
        spec = UNetSpec.from_dict(header["spec"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"uns: bad header ({exc})") from None
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (klen,) = struct.unpack("<I", take(4))
        name = take(klen).decode()
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        params[name] = ad.Tensor(arr, True)
    if pos != len(mv):
        raise FormatError("uns: trailing bytes")
    expected = build_unet(spec, 0).params
    if set(expected) != set(params) or any(expected[k].shape != params[k].shape for k in params):
        raise FormatError("uns: parameter set does not match the stored spec")
    return UNetState(spec, params, set(header.get("frozen", [])))


def save_unet(path, state):
    with open(path, "wb") as fh:
        fh.write(dumps(state))


def load_unet(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
