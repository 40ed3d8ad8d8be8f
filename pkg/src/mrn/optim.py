"""SGD and Adam updates over lists of parameter tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GradientError


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("kind", "lr", "b1", "b2", "eps") if k in d})


@dataclass
class OptimizerState:
    """Adam moment estimates, aligned with the parameter list."""

    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def optimizer_step(params, grads, config, state=None):
    """Update ``params`` (a list of tensors) from ``grads``; returns the new state.

    Each parameter gets a fresh data array, so any caller that snapshotted the
    old arrays still holds the pre-step values.
    """
    if len(grads) != len(params):
        raise GradientError(f"{len(params)} params but {len(grads)} grads")
    for k, g in enumerate(grads):
        if g is None:
            raise GradientError(f"missing gradient for parameter {k}")
    state = state if state is not None else OptimizerState()

    if config.kind == "sgd":
        for p, g in zip(params, grads):
            p.data = p.data - config.lr * g
        state.step += 1
        return state

    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - config.b1**t
    c2 = 1.0 - config.b2**t
    for k, (p, g) in enumerate(zip(params, grads)):
        m = config.b1 * state.m[k] + (1.0 - config.b1) * g
        v = config.b2 * state.v[k] + (1.0 - config.b2) * g * g
        state.m[k], state.v[k] = m, v
        p.data = p.data - config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return state
