"""AdaDelta (Zeiler, 2012).

Per scalar, with decay ``rho`` and conditioning constant ``eps``::

    Eg2  <- rho * Eg2  + (1 - rho) * g**2
    step  = -sqrt(Edx2 + eps) / sqrt(Eg2 + eps) * g
    Edx2 <- rho * Edx2 + (1 - rho) * step**2
    x    <- x + step
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumericalError(FloatingPointError):
    pass


@dataclass
class AdaDeltaState:
    rho: float = 0.95
    eps: float = 1e-6
    sq_grad: dict = field(default_factory=dict)
    sq_step: dict = field(default_factory=dict)


def adadelta_step(params: dict, grads: dict, state: AdaDeltaState) -> tuple[dict, AdaDeltaState]:
    """Update ``params`` in place for every name present in ``grads``."""
    rho, eps = state.rho, state.eps
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
        eg = state.sq_grad.get(name)
        if eg is None:
            eg = state.sq_grad[name] = np.zeros_like(p)
            state.sq_step[name] = np.zeros_like(p)
        ex = state.sq_step[name]
        eg *= rho
        eg += (1.0 - rho) * g * g
        step = -np.sqrt(ex + eps) / np.sqrt(eg + eps) * g
        ex *= rho
        ex += (1.0 - rho) * step * step
        p += step
    return params, state


class AdaDelta:
    def __init__(self, params: dict, rho: float = 0.95, eps: float = 1e-6):
        self.params = params
        self.state = AdaDeltaState(rho, eps)

    def step(self, grads: dict) -> None:
        adadelta_step(self.params, grads, self.state)
