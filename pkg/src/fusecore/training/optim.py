"""AdamW with decoupled weight decay, warmup-cosine schedule, norm clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LrSchedule:
    warmup_steps: int
    total_steps: int
    base_lr: float
    floor_lr: float = 0.0

    def __post_init__(self):
        if self.warmup_steps < 0 or self.total_steps < self.warmup_steps:
            raise ValueError("need 0 <= warmup_steps <= total_steps")
        if not 0.0 <= self.floor_lr <= self.base_lr:
            raise ValueError("need 0 <= floor_lr <= base_lr")

    def __call__(self, step: int) -> float:
        return cosine_lr(step, self)


def cosine_lr(step: int, schedule: LrSchedule) -> float:
    """Linear warmup from 0 to ``base_lr``, then half-cosine down to ``floor_lr``.

    Steps past ``total_steps`` clamp to the floor.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    s = schedule
    if step < s.warmup_steps:
        return s.base_lr * step / s.warmup_steps
    if step == s.warmup_steps:
        return s.base_lr
    if step >= s.total_steps:
        return s.floor_lr
    progress = (step - s.warmup_steps) / (s.total_steps - s.warmup_steps)
    return s.floor_lr + (s.base_lr - s.floor_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Moments are keyed by parameter name so the state survives re-binding."""

    def __init__(self, params: dict, betas=(0.9, 0.98), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = dict(params)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if p.frozen or p.grad is None:
                continue
            g = p.grad
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = p.data - lr * (update + self.weight_decay * p.data)

    def state(self) -> dict:
        return {"step": self.step_count, "betas": [self.beta1, self.beta2], "eps": self.eps,
                "weight_decay": self.weight_decay}

    def load_moments(self, m: dict, v: dict, step: int) -> None:
        if set(m) != set(self.params) or set(v) != set(self.params):
            raise KeyError("optimizer moments do not match the trainable parameters")
        for name, p in self.params.items():
            if m[name].shape != p.data.shape or v[name].shape != p.data.shape:
                raise ValueError(f"moment shape mismatch for {name}")
        self.m = {n: np.array(a) for n, a in m.items()}
        self.v = {n: np.array(a) for n, a in v.items()}
        self.step_count = int(step)


def adamw_update(params: dict, grads: dict, state: AdamW, lr: float) -> AdamW:
    """Functional form: copy ``grads`` onto ``params`` and take one step."""
    for name, p in params.items():
        p.grad = grads.get(name)
    state.step(lr)
    return state


def global_norm(params) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``.
    Returns the norm before clipping."""
    params = list(params)
    norm = global_norm(params)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm
