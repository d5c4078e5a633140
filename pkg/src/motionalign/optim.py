"""AdamW with decoupled weight decay, written as a pure function over dicts of arrays."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation, ValidationError


@dataclass(frozen=True)
class AdamWHyper:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.lr < 0:
            raise ValidationError(f"lr must be >= 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("betas must lie in [0, 1)")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ValidationError("eps must be > 0 and weight_decay >= 0")


@dataclass
class AdamWState:
    hyper: AdamWHyper
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, params: dict[str, np.ndarray], hyper: AdamWHyper) -> "AdamWState":
        return cls(
            hyper=hyper,
            step=0,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adamw_step(params, grads, state: AdamWState):
    """One AdamW update. Returns ``(new_params, new_state)``; inputs are not mutated."""
    h = state.hyper
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ContractViolation("params, grads and optimizer moments must share keys")
    step = state.step + 1
    bc1 = 1.0 - h.beta1**step
    bc2 = 1.0 - h.beta2**step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ContractViolation(f"shape mismatch for parameter {name}")
        m = h.beta1 * state.m[name] + (1.0 - h.beta1) * g
        v = h.beta2 * state.v[name] + (1.0 - h.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = p - h.lr * h.weight_decay * p - h.lr * m_hat / (np.sqrt(v_hat) + h.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, replace(state, step=step, m=new_m, v=new_v)
