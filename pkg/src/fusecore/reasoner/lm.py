"""Tiny decoder-only causal language model with a tied output head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nn
from .. import tensor as T
from ..tensor import Parameter, Tensor
from .tokenizer import BOS, TokenSequence


class SequenceLengthError(ValueError):
    pass


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int = 0
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 256
    ffn_mult: int = 4


class DecoderBlock(nn.Module):
    def __init__(self, cfg: LMConfig, rng):
        d = cfg.d_model
        self.ln1 = nn.LayerNorm(d)
        self.attn = nn.MultiHeadAttention(d, d, d, cfg.n_heads, rng)
        self.ln2 = nn.LayerNorm(d)
        self.ffn = nn.FeedForward(d, cfg.ffn_mult * d, rng)

    def forward(self, x: Tensor, mask) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, mask)
        return x + self.ffn(self.ln2(x))


class DecoderLM(nn.Module):
    def __init__(self, cfg: LMConfig, rng: np.random.Generator):
        if cfg.vocab_size < 4:
            raise ValueError("vocab_size must include the reserved tokens")
        self.cfg = cfg
        self.tok_emb = Parameter(rng.normal(0.0, 0.02, (cfg.vocab_size, cfg.d_model)))
        self.pos_emb = Parameter(rng.normal(0.0, 0.02, (cfg.max_len, cfg.d_model)))
        self.blocks = [DecoderBlock(cfg, rng) for _ in range(cfg.n_layers)]
        self.ln_f = nn.LayerNorm(cfg.d_model)

    def embed(self, ids) -> Tensor:
        return T.take_rows(self.tok_emb, ids)

    def forward_packed(self, x: Tensor, sizes, rows=None) -> Tensor:
        """Logits for packed sequences ``x`` [sum(sizes) x D].

        Each segment is an independent causal sequence with positions from 0.
        ``rows`` optionally selects which rows get logits (the head is the
        expensive part at small widths).
        """
        if max(sizes) > self.cfg.max_len:
            raise SequenceLengthError(f"sequence of {max(sizes)} exceeds max_len={self.cfg.max_len}")
        positions = np.concatenate([np.arange(s) for s in sizes])
        h = x + T.take_rows(self.pos_emb, positions)
        mask = nn.block_mask(sizes, sizes, causal=True)
        for blk in self.blocks:
            h = blk(h, mask)
        h = self.ln_f(h)
        if rows is not None:
            h = T.take_rows(h, rows)
        return T.linear(h, self.tok_emb)

    def forward_logits(self, e_input: Tensor) -> Tensor:
        """[len x |V|] next-token logits for one embedded sequence."""
        return self.forward_packed(e_input, [e_input.shape[0]])


def build_input(fused: Tensor, prompt: TokenSequence, lm: DecoderLM):
    """``E_input = [E_vision; E_text]`` and its loss mask (false on vision rows)."""
    if not prompt.ids or prompt.ids[0] != BOS:
        raise ValueError("prompt must be non-empty and start with BOS")
    n = fused.shape[0] + len(prompt.ids)
    if n > lm.cfg.max_len:
        raise SequenceLengthError(f"input of {n} rows exceeds max_len={lm.cfg.max_len}")
    e = T.concat_rows([fused, lm.embed(prompt.ids)])
    return e, [False] * fused.shape[0] + list(prompt.loss_mask)


def forward_logits(lm: DecoderLM, e_input: Tensor) -> Tensor:
    return lm.forward_logits(e_input)
