"""Low-rank adapters on linear layers."""
from __future__ import annotations

import numpy as np

from .. import nn
from .. import tensor as T
from ..tensor import Parameter, Tensor


class LoRALinear(nn.Module):
    """``W x + b + (alpha / r) * B (A x)`` with ``W`` and ``b`` frozen.

    ``B`` starts at zero, so a fresh adapter leaves the layer's output
    unchanged.
    """

    def __init__(self, base: nn.Linear, r: int, alpha: float, rng: np.random.Generator):
        if r < 1:
            raise ValueError("LoRA rank must be >= 1")
        self.base = base
        self.base.freeze()
        self.r = r
        self.alpha = float(alpha)
        self.lora_a = Parameter(rng.normal(0.0, 1.0 / np.sqrt(base.d_in), (r, base.d_in)))
        self.lora_b = Parameter(np.zeros((base.d_out, r)))

    @property
    def d_in(self) -> int:
        return self.base.d_in

    @property
    def d_out(self) -> int:
        return self.base.d_out

    @property
    def scaling(self) -> float:
        return self.alpha / self.r

    def delta(self) -> np.ndarray:
        return self.scaling * (self.lora_b.data @ self.lora_a.data)

    def forward(self, x: Tensor) -> Tensor:
        y = self.base(x)
        return y + T.mul(T.linear(T.linear(x, self.lora_a), self.lora_b), self.scaling)


def linear_paths(model: nn.Module) -> list:
    """Paths of every plain :class:`~fusecore.nn.Linear` in ``model``."""
    return [path for path, m in model.named_modules() if isinstance(m, nn.Linear) and path]


def adapter_paths(model: nn.Module) -> list:
    return [path for path, m in model.named_modules() if isinstance(m, LoRALinear)]


def apply_lora(model: nn.Module, targets, r: int, alpha: float, rng: np.random.Generator) -> nn.Module:
    """Wrap each target linear layer in place; returns ``model``."""
    known = set(linear_paths(model))
    for path in targets:
        if path not in known:
            raise KeyError(f"unknown LoRA target {path!r}")
    for path in targets:
        model.set_submodule(path, LoRALinear(model.get_submodule(path), r, alpha, rng))
    return model


def merge_lora(model: nn.Module) -> nn.Module:
    """Fold every adapter into its base weight, in place; returns ``model``."""
    paths = adapter_paths(model)
    if not paths:
        raise ValueError("no LoRA adapter present (already merged?)")
    for path in paths:
        lora = model.get_submodule(path)
        base = lora.base
        base.weight.data = base.weight.data + lora.delta()
        model.set_submodule(path, base)
    return model
