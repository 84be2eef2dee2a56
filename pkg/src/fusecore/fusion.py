"""Query-based fusion core.

A fixed bank of ``N_q`` learnable queries runs through ``L_f`` pre-norm layers
(self-attention among queries, cross-attention over the vision tokens,
feed-forward), then a linear projection maps the result into the language
model's embedding width. Vision tokens carry no positional encoding here, so
the output is invariant to their order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .perception import VisionTokens
from .tensor import Parameter, Tensor


@dataclass(frozen=True)
class FusionConfig:
    n_queries: int = 8
    d_query: int = 64
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    d_vision: int = 64
    d_llm: int = 128

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("fusion core needs at least one layer")
        if self.d_query != self.d_model:
            raise ValueError("query width must equal d_model (residual stream)")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by {self.n_heads} heads")


class QueryBank(nn.Module):
    def __init__(self, n_queries: int, d_query: int, rng: np.random.Generator):
        self.queries = Parameter(rng.normal(0.0, 0.02, (n_queries, d_query)))

    @property
    def n_queries(self) -> int:
        return self.queries.shape[0]


@dataclass
class FusedEmbeddings:
    tokens: Tensor  # [N_q x D_llm]


class FusionLayer(nn.Module):
    def __init__(self, cfg: FusionConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.ln_self = nn.LayerNorm(d)
        self.self_attn = nn.MultiHeadAttention(d, d, d, cfg.n_heads, rng)
        self.ln_cross = nn.LayerNorm(d)
        self.cross_attn = nn.MultiHeadAttention(d, cfg.d_vision, d, cfg.n_heads, rng)
        self.ln_ffn = nn.LayerNorm(d)
        self.ffn = nn.FeedForward(d, cfg.ffn_mult * d, rng)

    def forward(self, x: Tensor, vision: Tensor, self_mask=None, cross_mask=None) -> Tensor:
        h = self.ln_self(x)
        x = x + self.self_attn(h, h, self_mask)
        x = cross_attend(x, vision, self, cross_mask)
        return x + self.ffn(self.ln_ffn(x))


def cross_attend(queries: Tensor, vision: Tensor, layer: FusionLayer, mask=None) -> Tensor:
    """Residual cross-attention step: ``queries + CrossAttn(LN(queries), vision)``."""
    if vision.shape[1] != layer.cross_attn.w_k.d_in:
        raise T.ShapeError(f"vision width {vision.shape[1]} != expected {layer.cross_attn.w_k.d_in}")
    return queries + layer.cross_attn(layer.ln_cross(queries), vision, mask)


class FusionCore(nn.Module):
    def __init__(self, cfg: FusionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.bank = QueryBank(cfg.n_queries, cfg.d_query, rng)
        self.layers = [FusionLayer(cfg, rng) for _ in range(cfg.n_layers)]
        self.ln_out = nn.LayerNorm(cfg.d_model)
        self.proj = nn.Linear(cfg.d_model, cfg.d_llm, rng)

    def project_to_llm(self, q_out: Tensor) -> Tensor:
        return self.proj(q_out)

    def forward(self, vision) -> FusedEmbeddings:
        z = vision.combined if isinstance(vision, VisionTokens) else vision
        return FusedEmbeddings(self.fuse_batch([z])[0])

    def fuse_packed(self, visions) -> Tensor:
        """Fuse several ``Z_vision`` matrices in one packed pass; returns the
        stacked [B*N_q x D_llm] embeddings, sample ``i`` at rows ``i*N_q..``."""
        nq = self.cfg.n_queries
        b = len(visions)
        sizes = [v.shape[0] for v in visions]
        x = T.take_rows(self.bank.queries, np.tile(np.arange(nq), b))
        z = T.concat_rows(visions) if b > 1 else visions[0]
        self_mask = nn.block_mask([nq] * b, [nq] * b) if b > 1 else None
        cross_mask = nn.block_mask([nq] * b, sizes) if b > 1 else None
        for layer in self.layers:
            x = layer(x, z, self_mask, cross_mask)
        return self.project_to_llm(self.ln_out(x))

    def fuse_batch(self, visions) -> list:
        """Like :meth:`fuse_packed` but split into one [N_q x D_llm] tensor per input."""
        nq = self.cfg.n_queries
        out = self.fuse_packed(visions)
        if len(visions) == 1:
            return [out]
        return [T.take_rows(out, np.arange(i * nq, (i + 1) * nq)) for i in range(len(visions))]


def fuse(core: FusionCore, vision) -> FusedEmbeddings:
    return core(vision)
