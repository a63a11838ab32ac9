"""Adam with bias correction, gradient clipping, and the step-decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float | None = None) -> None:
    """One in-place Adam update over a named parameter dict.

    ``lr`` overrides the state's base rate (used by the schedule); the
    moment buffers are created lazily on first touch.
    """
    rate = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    for name in params:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        params[name] -= rate * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    sq = 0.0
    for g in grads.values():
        sq += float(np.sum(g * g))
    norm = float(np.sqrt(sq))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def lr_schedule(epoch: int, milestones, factor: float, base_lr: float) -> float:
    """Base rate divided by ``factor`` once per milestone the epoch has reached."""
    passed = sum(1 for m in milestones if epoch >= m)
    return base_lr / (factor ** passed)
