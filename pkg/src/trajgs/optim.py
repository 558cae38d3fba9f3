"""Parameter groups, Adam, learning-rate schedules and the finite-difference oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class StepDecay:
    """``base_lr * decay_factor ** floor(it / decay_every)`` (PyTorch StepLR)."""

    base_lr: float
    decay_factor: float = 1.0
    decay_every: int = 1

    def __call__(self, it: int) -> float:
        return self.base_lr * self.decay_factor ** (it // self.decay_every)

    def to_dict(self):
        return {"kind": "step", "base_lr": self.base_lr,
                "decay_factor": self.decay_factor, "decay_every": self.decay_every}


@dataclass
class ExpDecay:
    """Log-linear interpolation from ``base_lr`` to ``final_lr`` over ``max_steps``."""

    base_lr: float
    final_lr: float
    max_steps: int

    def __call__(self, it: int) -> float:
        t = min(max(it / max(self.max_steps, 1), 0.0), 1.0)
        return math.exp(math.log(self.base_lr) * (1 - t) + math.log(self.final_lr) * t)

    def to_dict(self):
        return {"kind": "exp", "base_lr": self.base_lr,
                "final_lr": self.final_lr, "max_steps": self.max_steps}


def schedule_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    return StepDecay(**d) if kind == "step" else ExpDecay(**d)


@dataclass
class ParamGroup:
    """A named parameter array with its schedule and Adam moments.

    ``values`` may have any shape; Adam treats it elementwise.
    """

    name: str
    values: np.ndarray
    lr_schedule: StepDecay | ExpDecay
    m: np.ndarray = None
    v: np.ndarray = None
    step: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.m is None:
            self.m = np.zeros_like(self.values)
        if self.v is None:
            self.v = np.zeros_like(self.values)

    def lr(self, it: int | None = None) -> float:
        return self.lr_schedule(self.step if it is None else it)


@dataclass(frozen=True)
class AdamHyper:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(group: ParamGroup, grads, hyper: AdamHyper = AdamHyper(),
              it: int | None = None) -> ParamGroup:
    """One bias-corrected Adam update in place. Returns ``group``.

    The learning rate comes from the group's schedule evaluated at ``it``
    (the global iteration) or, when omitted, at the group's own step count.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != group.values.shape:
        raise ValueError(f"gradient shape {grads.shape} does not match "
                         f"parameter group {group.name!r} {group.values.shape}")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError(f"non-finite gradient in parameter group {group.name!r}")
    lr = group.lr(it)
    group.step += 1
    b1, b2 = hyper.beta1, hyper.beta2
    group.m = b1 * group.m + (1 - b1) * grads
    group.v = b2 * group.v + (1 - b2) * grads * grads
    m_hat = group.m / (1 - b1 ** group.step)
    v_hat = group.v / (1 - b2 ** group.step)
    group.values = group.values - lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return group


def fd_gradient(loss_fn: Callable[[], float], group: ParamGroup, h: float = 1e-5,
                indices=None) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. ``group.values``.

    ``loss_fn`` must read the group's current values. Only the flat
    coordinates in ``indices`` are probed when given; the rest stay zero.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    flat = group.values.reshape(-1)
    out = np.zeros(flat.size)
    coords = range(flat.size) if indices is None else indices
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(loss_fn())
        flat[i] = orig - h
        fm = float(loss_fn())
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FloatingPointError(f"non-finite loss while probing {group.name!r}[{i}]")
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(group.values.shape)


def relative_error(a, f) -> float:
    """``|a - f| / max(|a|, |f|, 1e-8)`` on Euclidean norms."""
    a = np.asarray(a, dtype=np.float64).ravel()
    f = np.asarray(f, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(f), 1e-8)
    return float(np.linalg.norm(a - f) / denom)


@dataclass
class GradReport:
    name: str
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: float = field(init=False)

    def __post_init__(self):
        self.rel_error = relative_error(self.analytic, self.numeric)

    def __str__(self):
        return f"{self.name:<24s} rel_err={self.rel_error:.3e}"
