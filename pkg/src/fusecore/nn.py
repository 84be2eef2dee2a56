"""Small module system on top of :mod:`fusecore.tensor`."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Base class: parameters and submodules are discovered from attributes.

    Lists of modules are walked by index, so ``blocks.0.attn.w_q.weight`` is a
    valid parameter path.
    """

    def _children(self):
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix: str = ""):
        for key, value in self._children():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(path + ".")

    def named_modules(self, prefix: str = ""):
        yield prefix.rstrip("."), self
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{key}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def bind_names(self, prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self, frozen: bool = True) -> None:
        for p in self.parameters():
            p.frozen = frozen

    def get_submodule(self, path: str) -> "Module":
        node = self
        for part in path.split("."):
            node = node[int(part)] if isinstance(node, list) else getattr(node, part)
        return node

    def set_submodule(self, path: str, module: "Module") -> None:
        parent_path, _, last = path.rpartition(".")
        parent = self.get_submodule(parent_path) if parent_path else self
        if isinstance(parent, list):
            parent[int(last)] = module
        else:
            setattr(parent, last, module)

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if strict and (missing or extra):
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in own.items():
            if name in state:
                value = np.asarray(state[name], dtype=np.float64)
                if value.shape != p.shape:
                    raise T.ShapeError(f"{name}: checkpoint shape {value.shape} != {p.shape}")
                p.data = value.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, std: float = 0.02):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Parameter(normal(rng, (d_out, d_in), std))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator, std: float = 0.02):
        self.w1 = Linear(d, hidden, rng, std=std)
        self.w2 = Linear(hidden, d, rng, std=std)

    def forward(self, x: Tensor) -> Tensor:
        return self.w2(T.gelu(self.w1(x)))


class MultiHeadAttention(Module):
    """Projections around :func:`fusecore.tensor.attention`.

    ``w_q`` maps the query stream (width ``d_q``) and ``w_k``/``w_v`` the
    context stream (width ``d_kv``) into ``d_model``.
    """

    def __init__(self, d_q: int, d_kv: int, d_model: int, n_heads: int, rng: np.random.Generator, std: float = 0.02):
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.w_q = Linear(d_q, d_model, rng, std=std)
        self.w_k = Linear(d_kv, d_model, rng, std=std)
        self.w_v = Linear(d_kv, d_model, rng, std=std)
        self.w_o = Linear(d_model, d_model, rng, std=std)

    def forward(self, x: Tensor, context: Tensor, mask=None) -> Tensor:
        heads = T.attention(self.w_q(x), self.w_k(context), self.w_v(context), self.n_heads, mask)
        return self.w_o(heads)

    def weights(self, x: Tensor, context: Tensor, mask=None) -> np.ndarray:
        with T.no_grad():
            q = self.w_q(x).data
            k = self.w_k(context).data
        return T.attention_weights(q, k, self.n_heads, mask)


def block_mask(q_sizes, k_sizes, causal: bool = False) -> np.ndarray:
    """Boolean [sum(q) x sum(k)] mask letting segment i attend only to segment i.

    With ``causal`` the query and key segments are the same sequence and row
    ``t`` of a segment sees keys ``<= t``.
    """
    nq = int(np.sum(q_sizes))
    nk = int(np.sum(k_sizes))
    mask = np.zeros((nq, nk), dtype=bool)
    qo = ko = 0
    for a, b in zip(q_sizes, k_sizes):
        if causal:
            mask[qo:qo + a, ko:ko + b] = np.tril(np.ones((a, b), dtype=bool))
        else:
            mask[qo:qo + a, ko:ko + b] = True
        qo += a
        ko += b
    return mask
