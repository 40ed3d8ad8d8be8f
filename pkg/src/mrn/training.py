"""Regression training, staged multi-resolution training, and the brute-force oracle.

Losses follow the function-space convention: for a batch of targets ``w`` and
predictions ``u`` on a grid with ``cells`` cells per channel,
``L = sqrt(mean_n ||w_n - u_n||^2)`` where the squared norm weights every cell
by ``1 / cells``.  Gradients are taken of the plain mean squared error, which
is ``L**2 / channels``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from . import unet as un
from . import wavelets as wv
from .errors import ResolutionError, ShapeError
from .optim import OptimizerConfig, optimizer_step
from .spaces import MultiResFunction


@dataclass
class Dataset:
    """Paired inputs/targets on a common dyadic grid.

    ``v`` has shape ``(N, C_in, *grid)`` and ``w`` has ``(N, C_out, *grid)``.
    """

    v: np.ndarray
    w: np.ndarray
    resolution: int
    domain: str = "interval"

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        nd = self.ndim
        n = 2**self.resolution
        for a in (self.v, self.w):
            if a.ndim != 2 + nd or a.shape[2:] != (n,) * nd:
                raise ShapeError("Dataset", a.shape, detail=f"expected (N, C) + {(n,) * nd}")
        if self.v.shape[0] != self.w.shape[0]:
            raise ShapeError("Dataset", self.v.shape, self.w.shape, detail="sample counts differ")

    @property
    def ndim(self):
        return 1 if self.domain == "interval" else 2

    def __len__(self):
        return self.v.shape[0]

    def project(self, to_res):
        """``S_i = {(P_i v, Q_i w)}``."""
        return Dataset(
            wv.avg_pool_downsample(self.v, self.resolution, to_res, self.ndim),
            wv.avg_pool_downsample(self.w, self.resolution, to_res, self.ndim),
            to_res,
            self.domain,
        )

    def pairs(self):
        dom = "interval" if self.ndim == 1 else "square"
        return [
            (MultiResFunction(dom, self.resolution, v, channels=v.shape[0]),
             MultiResFunction(dom, self.resolution, w, channels=w.shape[0]))
            for v, w in zip(self.v, self.w)
        ]


def function_loss(pred, target):
    """Measure-weighted L2 loss between two batch arrays (see module docstring)."""
    d = (np.asarray(pred) - np.asarray(target)).reshape(pred.shape[0], pred.shape[1], -1)
    cells = d.shape[-1]
    return float(np.sqrt(np.mean(np.sum(d * d, axis=(1, 2)) / cells)))


@dataclass
class TrainConfig:
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    steps: int = 200
    seed: int = 0
    freeze: bool = False
    stages: tuple = ()
    batch_size: int | None = None

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("TrainConfig: steps must be non-negative")
        if list(self.stages) != sorted(set(self.stages)):
            raise ValueError("TrainConfig: stages must be strictly increasing")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        opt = OptimizerConfig.from_dict(d.pop("optimizer", {}))
        stages = tuple(d.pop("stages", ()))
        keep = {k: d[k] for k in ("steps", "seed", "freeze", "batch_size") if k in d}
        return cls(optimizer=opt, stages=stages, **keep)


def used_parameters(state, level):
    """Parameters that the level-``level`` network (with its own adapters) depends on."""
    out = []
    for name, t in state.params.items():
        head = name.split(".", 1)[0]
        lvl = un.param_level(name)
        if head.startswith(("head", "tail")):
            if lvl == level:
                out.append((name, t))
        elif lvl <= level:
            out.append((name, t))
    return out


def train(state, data, cfg, level=None):
    """Minimize the mean squared error of ``U_level`` on ``data``.

    Frozen levels are skipped.  Returns ``(state, trace)`` where ``trace`` holds
    the function loss before every step and after the last one.
    """
    spec = state.spec
    level = spec.J if level is None else level
    if len(data) == 0:
        raise ValueError("train: empty dataset")
    res = spec.grid_resolution(level)
    if data.resolution < res:
        raise ResolutionError(f"train: data resolution {data.resolution} below level-{level} grid {res}")
    if data.resolution > res:
        data = data.project(res)
    params = [t for name, t in used_parameters(state, level) if un.param_level(name) not in state.frozen]
    rng = np.random.default_rng(cfg.seed)
    opt_state = None
    trace = []
    n = len(data)
    for _ in range(cfg.steps):
        if cfg.batch_size and cfg.batch_size < n:
            idx = np.sort(rng.choice(n, size=cfg.batch_size, replace=False))
            xb, yb = data.v[idx], data.w[idx]
        else:
            xb, yb = data.v, data.w
        ad.zero_grad(state.params.values())
        pred = un.forward_graph(state, ad.Tensor(xb), level)
        loss = ad.mse_loss(pred, ad.Tensor(yb))
        trace.append(function_loss(pred.data, yb))
        if not params:
            continue
        ad.backward(loss)
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
        opt_state = optimizer_step(params, grads, cfg.optimizer, opt_state)
    trace.append(evaluate(state, data, level))
    return state, trace


def evaluate(state, data, level=None):
    level = state.spec.J if level is None else level
    res = state.spec.grid_resolution(level)
    if data.resolution > res:
        data = data.project(res)
    pred = un.forward_graph(state, ad.Tensor(data.v), level).data
    return function_loss(pred, data.w)


def staged_train(state, datasets, cfg):
    """Train levels ``1..J`` in order, each preconditioned on the one below.

    ``datasets`` maps level -> :class:`Dataset` (or is one dataset, projected
    per level).  With ``cfg.freeze`` the levels below the current stage are
    fixed.  Returns ``(state, traces)`` with one loss trace per stage.
    """
    spec = state.spec
    stages = list(cfg.stages) or list(range(1, spec.J + 1))
    traces = {}
    for lvl in stages:
        if isinstance(datasets, Dataset):
            data = datasets
        elif lvl in datasets:
            data = datasets[lvl]
        else:
            raise KeyError(f"staged_train: no dataset for stage {lvl}")
        if cfg.freeze:
            state.frozen = set(range(0, lvl))
        stage_cfg = TrainConfig(cfg.optimizer, cfg.steps, cfg.seed + lvl, cfg.freeze, (), cfg.batch_size)
        state, traces[lvl] = train(state, data, stage_cfg, level=lvl)
    if cfg.freeze:
        state.frozen = set(range(0, spec.J + 1))
    return state, traces


# --------------------------------------------------------------------- toy datasets


def identity_dataset(n, resolution, domain="interval", channels=1, seed=0):
    """White-noise inputs with targets equal to the inputs."""
    rng = np.random.default_rng(seed)
    nd = 1 if domain == "interval" else 2
    v = rng.standard_normal((n, channels) + (2**resolution,) * nd)
    return Dataset(v, v.copy(), resolution, domain)


# --------------------------------------------------------------------- synthetic preconditioning

_TARGETS = {"square": lambda v: v**2, "cube": lambda v: v**3}
_PRECONDITIONERS = {"identity": lambda v: v, "abs": np.abs}


@dataclass(frozen=True)
class SyntheticConfig:
    target: str = "square"
    pre: str = "abs"
    n: int = 50
    hidden: int = 20
    depth: int = 100
    steps: int = 2000
    lr: float = 1e-3
    norm_bound: float = 1.0
    residual: bool = True

    def __post_init__(self):
        if self.target not in _TARGETS or self.pre not in _PRECONDITIONERS:
            raise ValueError(f"unknown target {self.target!r} or preconditioner {self.pre!r}")
        if self.n < 1 or self.hidden < 1 or self.depth < 0 or self.steps < 0:
            raise ValueError("SyntheticConfig: sizes must be non-negative")


def _renormalize(weights, bound):
    for W in weights:
        nrm = math.sqrt(float(np.sum(W.data * W.data)))
        if nrm >= bound:
            W.data = W.data / (nrm / bound * (1.0 + 1e-6))


def synthetic_experiment(cfg, seed=0, return_model=False):
    """Fit ``w(v)`` on a grid in [-1, 1] with ``R(v) = z_D`` where ``z_0 = pre(v)``
    and ``z_{k+1} = z_k + g(z_k)`` for one weight-shared three-layer ReLU body ``g``.

    Every weight matrix is kept strictly inside the unit Frobenius ball.
    Returns a dict with the final mean squared error and the loss trace.
    """
    v = np.linspace(-1.0, 1.0, cfg.n)
    target = _TARGETS[cfg.target](v)[:, None]
    z0 = _PRECONDITIONERS[cfg.pre](v)[:, None]
    if not cfg.residual:
        mse = float(np.mean((z0 - target) ** 2))
        return {"mse": mse, "trace": [mse], "max_weight_norm": 0.0}

    rng = np.random.default_rng(seed)
    h = cfg.hidden
    W1 = ad.Tensor(ad.init_uniform((h, 1), 1, rng), True)
    b1 = ad.Tensor(ad.init_uniform((h,), 1, rng), True)
    W2 = ad.Tensor(ad.init_uniform((h, h), h, rng), True)
    b2 = ad.Tensor(ad.init_uniform((h,), h, rng), True)
    W3 = ad.Tensor(ad.init_uniform((1, h), h, rng), True)
    b3 = ad.Tensor(ad.init_uniform((1,), h, rng), True)
    weights = [W1, W2, W3]
    params = [W1, b1, W2, b2, W3, b3]
    _renormalize(weights, cfg.norm_bound)
    opt = OptimizerConfig("adam", lr=cfg.lr)

    def forward():
        z = ad.Tensor(z0)
        for _ in range(cfg.depth):
            a = ad.relu(ad.linear(z, W1, b1))
            a = ad.relu(ad.linear(a, W2, b2))
            z = ad.add(z, ad.linear(a, W3, b3))
        return z

    state = None
    trace = []
    max_norm = 0.0
    for _ in range(cfg.steps):
        ad.zero_grad(params)
        loss = ad.mse_loss(forward(), ad.Tensor(target))
        trace.append(float(loss.data))
        ad.backward(loss)
        state = optimizer_step(params, [p.grad for p in params], opt, state)
        _renormalize(weights, cfg.norm_bound)
        max_norm = max(max_norm, max(math.sqrt(float(np.sum(W.data**2))) for W in weights))
    out = forward().data
    mse = float(np.mean((out - target) ** 2))
    trace.append(mse)
    result = {"mse": mse, "trace": trace, "max_weight_norm": max_norm}
    if return_model:
        result["prediction"] = out[:, 0]
        result["grid"] = v
    return result


# --------------------------------------------------------------------- conditional-mean oracle


@dataclass
class OracleResult:
    """Per-bin conditional means of the resolution-``i`` targets given resolution-``j`` inputs."""

    i: int
    j: int
    keys: list
    means: np.ndarray
    assignment: np.ndarray
    loss_sq: Fraction
    measure: Fraction
    exact_targets: list = field(repr=False, default_factory=list)
    exact_means: list = field(repr=False, default_factory=list)

    @property
    def loss(self):
        return math.sqrt(self.loss_sq)

    def predictions(self):
        return self.means[self.assignment]


def _frac_rows(a):
    return [[Fraction(float(x)) for x in row] for row in a]


def _exact_sq_loss(targets, preds, measure):
    total = Fraction(0)
    for trow, prow in zip(targets, preds):
        for t, p in zip(trow, prow):
            d = t - p
            total += d * d
    return total * measure / len(targets)


def regression_oracle(data, i, j):
    """Exact empirical L2 minimizer among functions of ``P_j(v)``, predicting ``Q_i(w)``.

    Groups samples by exact equality of their projected inputs and predicts the
    bin mean.  Losses are computed in rational arithmetic.
    """
    if max(i, j) > data.resolution:
        raise ResolutionError(f"regression_oracle: ({i}, {j}) exceeds data resolution {data.resolution}")
    n = len(data)
    if n == 0:
        raise ValueError("regression_oracle: empty dataset")
    vj = data.project(j).v.reshape(n, -1)
    wi = data.project(i).w.reshape(n, -1)
    keys, assignment = [], np.zeros(n, dtype=np.int64)
    index = {}
    for k, row in enumerate(vj):
        key = row.tobytes()
        if key not in index:
            index[key] = len(keys)
            keys.append(key)
        assignment[k] = index[key]
    tf = _frac_rows(wi)
    measure = Fraction(1, wi.shape[1] // data.w.shape[1])
    sums = [[Fraction(0)] * wi.shape[1] for _ in keys]
    counts = [0] * len(keys)
    for k, b in enumerate(assignment):
        counts[b] += 1
        sums[b] = [s + t for s, t in zip(sums[b], tf[k])]
    exact_means = [[s / counts[b] for s in sums[b]] for b in range(len(keys))]
    loss_sq = _exact_sq_loss(tf, [exact_means[b] for b in assignment], measure)
    means = np.array([[float(x) for x in m] for m in exact_means])
    return OracleResult(i, j, keys, means, assignment, loss_sq, measure, tf, exact_means)


def perturbation_check(result, deltas=(Fraction(1, 1024), Fraction(-1, 3))):
    """True if shifting any single bin output in any coordinate strictly increases the loss.

    Only the loss terms of the affected bin change, so just those are recomputed.
    """
    n = len(result.assignment)
    members = [[] for _ in result.keys]
    for k, b in enumerate(result.assignment):
        members[b].append(k)
    for b, rows in enumerate(members):
        for c, m in enumerate(result.exact_means[b]):
            old = sum((result.exact_targets[k][c] - m) ** 2 for k in rows)
            for d in deltas:
                new = sum((result.exact_targets[k][c] - (m + d)) ** 2 for k in rows)
                if not result.loss_sq + (new - old) * result.measure / n > result.loss_sq:
                    return False
    return True


def highfreq_target(v):
    """``v`` plus products of neighbouring cells: depends on fine-scale detail."""
    pair = v.reshape(v.shape[:-1] + (-1, 2))
    prod = (pair[..., 0] * pair[..., 1])[..., None]
    sign = np.array([1.0, -1.0])
    return v + (prod * sign).reshape(v.shape)


def theorem1_dataset(n, resolution, target="identity", levels=(0, 1), seed=0):
    """Inputs with entries drawn from ``levels`` (dyadic, so projections are exact)."""
    rng = np.random.default_rng(seed)
    v = rng.choice(np.asarray(levels, dtype=np.float64), size=(n, 1, 2**resolution))
    if target == "identity":
        w = v.copy()
    elif target == "highfreq":
        w = highfreq_target(v)
    else:
        raise ValueError(f"unknown target {target!r}")
    return Dataset(v, w, resolution)


def theorem1_suite(data, resolutions=None, measurable_levels=None):
    """Table of conditional-mean losses ``L_{i|j}`` plus the structural checks.

    Checks, all in exact arithmetic:

    * ``monotone_in_input``: for fixed ``i``, losses never increase with ``j``;
    * ``bounded_by_full``: ``L_{i|j} <= L_{|j}`` (full-resolution targets);
    * ``monotone_in_target``: for fixed ``j``, losses never decrease with ``i``;
    * ``measurable_match``: for ``i`` in ``measurable_levels`` the level-``i``
      oracle reproduces ``Q_i w`` on every sample to 1e-12;
    * ``perturbation``: moving any oracle output strictly increases the loss.
    """
    R = data.resolution
    resolutions = list(range(R + 1)) if resolutions is None else list(resolutions)
    results = {}
    for i in resolutions:
        for j in resolutions:
            results[(i, j)] = regression_oracle(data, i, j)
    full = {j: regression_oracle(data, R, j) for j in resolutions}
    rows = []
    for (i, j), r in sorted(results.items()):
        rows.append({"i": i, "j": j, "loss": r.loss, "bins": len(r.keys), "full_loss": full[j].loss})

    checks = {
        "monotone_in_input": all(
            results[(i, a)].loss_sq >= results[(i, b)].loss_sq
            for i in resolutions for a, b in zip(resolutions, resolutions[1:])
        ),
        "bounded_by_full": all(results[(i, j)].loss_sq <= full[j].loss_sq for (i, j) in results),
        "monotone_in_target": all(
            results[(a, j)].loss_sq <= results[(b, j)].loss_sq
            for j in resolutions for a, b in zip(resolutions, resolutions[1:])
        ),
        "perturbation": all(perturbation_check(r) for r in results.values()),
    }
    if measurable_levels:
        ok = True
        for i in measurable_levels:
            r = results[(i, i)]
            want = data.project(i).w.reshape(len(data), -1)
            ok &= bool(np.max(np.abs(r.predictions() - want)) <= 1e-12)
        checks["measurable_match"] = ok
    return rows, checks
