"""Adam with decoupled weight decay, plus gradient utilities.

One :class:`AdamState` serves one parameter group sharing a single weight
decay coefficient; the trainer keeps separate groups for the denoiser and
the word decoder. The decay is decoupled: it subtracts
``lr * weight_decay * param`` directly instead of being added to the
gradient, so the adaptive moments never see it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Graph, Tensor, backward
from .errors import NumericsError

__all__ = ["AdamState", "adam_step", "clip_global_norm", "gradient_check"]

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Optimizer state for one parameter group."""

    lr: float = 6.4710e-5
    beta1: float = 0.8
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> AdamState:
    """Apply one bias-corrected Adam update in place and return the state.

    Every parameter in ``params`` must have a gradient in ``grads``. Moment
    buffers are created lazily on the first step and keep the parameter's
    dtype, so checkpoints round-trip bit-exactly.
    """
    for name in params:
        if grads.get(name) is None:
            raise ValueError(f"adam_step: missing gradient for parameter '{name}'")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(
                f"adam_step: gradient shape {g.shape} does not match parameter '{name}' {p.data.shape}"
            )
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        decay = state.weight_decay * p.data if state.weight_decay else 0.0
        p.data = p.data - state.lr * update - state.lr * decay
    return state


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    total = 0.0
    for g in grads.values():
        flat = g.ravel()
        total += float(flat @ flat)
    norm = math.sqrt(total)
    if not math.isfinite(norm):
        raise NumericsError("clip_global_norm: gradient norm is not finite")
    if norm > max_norm > 0.0:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def gradient_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` must rebuild the forward pass from the current parameter
    values on every call and return a scalar tensor. Returns the worst
    relative error ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)``
    over every scalar parameter. Build the parameters in float64 for
    meaningful tolerances; call this outside any active graph context.

    Parameter gradients are cleared before and after the analytic pass.
    """
    if h <= 0.0:
        raise ValueError(f"gradient_check: step size must be positive, got {h}")
    for p in params.values():
        p.zero_grad()
    with Graph() as g:
        loss = loss_fn()
    if not np.isfinite(loss.data):
        raise NumericsError("gradient_check: loss is not finite")
    backward(loss, g)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    for p in params.values():
        p.zero_grad()

    worst = 0.0
    worst_at = ""
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = float(loss_fn().data)
            flat[i] = orig - h
            minus = float(loss_fn().data)
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * h)
            denom = max(abs(ana[i]), abs(numeric), 1e-6)
            rel = abs(ana[i] - numeric) / denom
            if rel > worst:
                worst = rel
                worst_at = f"{name}[{i}]"
    if worst_at:
        log.debug("gradient_check: worst relative error %.3e at %s", worst, worst_at)
    return worst
