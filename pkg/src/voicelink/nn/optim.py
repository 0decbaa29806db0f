"""Adam with global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import DivergenceError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def clip_global_norm(grads: dict[str, np.ndarray], clip: float) -> dict[str, np.ndarray]:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if clip is None or total <= clip or total == 0.0:
        return grads
    scale = clip / total
    return {k: g * scale for k, g in grads.items()}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> dict[str, np.ndarray]:
    """Standard Adam update with bias correction; mutates state, returns the
    updated parameter dict (inputs untouched)."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {k!r}")
        if params[k].shape != g.shape:
            raise ValueError(f"shape mismatch for {k!r}: {params[k].shape} vs {g.shape}")
    grads = clip_global_norm(grads, state.clip_norm)
    state.step += 1
    t = state.step
    bc1 = 1 - state.beta1 ** t
    bc2 = 1 - state.beta2 ** t
    out = {}
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k)
        if m is None:
            m = np.zeros_like(p)
            state.m[k] = m
            state.v[k] = np.zeros_like(p)
        state.m[k] = state.beta1 * m + (1 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1 - state.beta2) * g * g
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        out[k] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out
