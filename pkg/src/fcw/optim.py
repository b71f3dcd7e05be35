"""Parameter storage, Adam, cosine learning-rate schedule, gradient checking."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Tensor, parameter


class ParameterStore:
    """Named parameter tensors; paths are unique, gradients live on the tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, path: str, data) -> Tensor:
        if path in self._params:
            raise ValueError(f"duplicate parameter path: {path}")
        t = parameter(data)
        self._params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def paths(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_scalars(self) -> int:
        return sum(t.data.size for t in self._params.values())


@dataclass
class OptimizerState:
    """Adam moments and step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterStore, state: OptimizerState, lr: float) -> None:
    """Bias-corrected Adam update in place; missing gradients count as zero."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for path, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if path not in state.m:
            state.m[path] = np.zeros_like(p.data)
            state.v[path] = np.zeros_like(p.data)
        m = state.m[path]
        v = state.v[path]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        p.data -= lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class LRSchedule:
    base_rate: float = 1e-3
    min_rate: float = 0.0
    total_epochs: int = 200


def cosine_lr(epoch: int, sched: LRSchedule) -> float:
    """Cosine annealing from base to min over total_epochs."""
    if not 0 <= epoch <= sched.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {sched.total_epochs}]")
    span = sched.base_rate - sched.min_rate
    return sched.min_rate + 0.5 * span * (1.0 + math.cos(math.pi * epoch / sched.total_epochs))


def grad_check(
    f: Callable[[], Tensor],
    params: ParameterStore,
    h: float = 1e-5,
    max_coords_per_param: int = 10,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar-valued closure over ``params``.
    Samples up to ``max_coords_per_param`` coordinates per parameter.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    rng = rng or np.random.default_rng(0)

    params.zero_grad()
    out = f()
    if not np.isfinite(out.item()):
        raise FloatingPointError("non-finite function value in grad_check")
    out.backward()

    worst = 0.0
    for _, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_coords_per_param:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp = f().item()
            flat[c] = orig - h
            fm = f().item()
            flat[c] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("non-finite function value in grad_check")
            numeric = (fp - fm) / (2.0 * h)
            a = analytic.reshape(-1)[c]
            err = abs(a - numeric) / max(1.0, abs(a))
            worst = max(worst, err)
    return worst
