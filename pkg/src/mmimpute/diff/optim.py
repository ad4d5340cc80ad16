"""Adam with bias correction."""
from dataclasses import dataclass

import numpy as np

from mmimpute.diff.params import TrainingError


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 200

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


def adam_step(params, grads, cfg, t=None):
    """One in-place Adam update of ``params``; returns ``params``.

    ``t`` is the 1-based step count used for bias correction; by default the
    ParamSet's own counter is advanced.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name!r}")
    if t is None:
        params.step += 1
        t = params.step
    else:
        params.step = t
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        dt = p.data.dtype
        g = g.astype(dt, copy=False)
        m = params.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = params.v[name]
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        params.m[name] = m.astype(dt, copy=False)
        params.v[name] = v.astype(dt, copy=False)
        upd = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        p.data = (p.data - upd).astype(dt, copy=False)
    return params
