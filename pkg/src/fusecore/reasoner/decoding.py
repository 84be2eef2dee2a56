"""Autoregressive decoding: greedy, nucleus (top-p) and beam search."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from .lm import DecoderLM
from .tokenizer import BOS, EOS


@dataclass(frozen=True)
class GenerationConfig:
    strategy: str = "greedy"
    top_p: float = 0.9
    temperature: float = 1.0
    beam_width: int = 4
    max_new_tokens: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("greedy", "nucleus", "beam"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must lie in (0, 1]")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if self.beam_width < 1 or self.max_new_tokens < 1:
            raise ValueError("beam_width and max_new_tokens must be >= 1")


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def next_logits(lm: DecoderLM, fused: np.ndarray, prefixes) -> np.ndarray:
    """Last-position logits [len(prefixes) x |V|] for each token prefix."""
    parts, sizes = [], []
    for ids in prefixes:
        parts.append(fused)
        parts.append(lm.tok_emb.data[np.asarray(ids, dtype=np.int64)])
        sizes.append(fused.shape[0] + len(ids))
    with T.no_grad():
        x = Tensor(np.concatenate(parts))
        rows = np.cumsum(sizes) - 1
        return lm.forward_packed(x, sizes, rows=rows).data


def nucleus_pick(logits: np.ndarray, top_p: float, temperature: float, rng: np.random.Generator) -> int:
    """Sample from the smallest probability-sorted prefix with mass >= top_p."""
    probs = np.exp(log_softmax(logits / temperature))
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    k = int(np.searchsorted(cum, top_p, side="left")) + 1
    keep = order[:min(k, order.size)]
    p = probs[keep] / probs[keep].sum()
    return int(keep[rng.choice(keep.size, p=p)])


def _greedy_or_nucleus(lm, fused, prompt_ids, cfg):
    rng = np.random.default_rng(cfg.seed)
    ids = list(prompt_ids)
    out = []
    for _ in range(cfg.max_new_tokens):
        logits = next_logits(lm, fused, [ids])[0]
        if cfg.strategy == "greedy":
            tok = int(np.argmax(logits))  # first max = lowest id
        else:
            tok = nucleus_pick(logits, cfg.top_p, cfg.temperature, rng)
        out.append(tok)
        ids.append(tok)
        if tok == EOS:
            break
    return out


def _beam(lm, fused, prompt_ids, cfg):
    """Beams are ranked by summed log-probability; finished hypotheses are
    compared by log-probability per generated token."""
    k = cfg.beam_width
    alive = [([], 0.0)]
    finished = []
    for _ in range(cfg.max_new_tokens):
        logits = next_logits(lm, fused, [prompt_ids + seq for seq, _ in alive])
        logp = log_softmax(logits / cfg.temperature)
        cands = []
        for b, (seq, score) in enumerate(alive):
            for t in np.argsort(-logp[b], kind="stable")[:k]:
                cands.append((score + float(logp[b, t]), seq + [int(t)]))
        # sort is stable: ties keep beam order, then lowest token id
        cands.sort(key=lambda c: -c[0])
        alive = []
        for score, seq in cands[:k]:
            (finished if seq[-1] == EOS else alive).append((seq, score))
        if len(finished) >= k or not alive:
            break
    pool = finished if finished else alive
    best = max(pool, key=lambda c: c[1] / len(c[0]))
    return best[0]


def generate(lm: DecoderLM, fused, prompt_ids, cfg: GenerationConfig = GenerationConfig()) -> list:
    """Generate token ids after ``prompt_ids`` (which start with BOS).

    Stops after EOS (included in the output) or ``max_new_tokens``.
    """
    fused = fused.data if isinstance(fused, Tensor) else np.asarray(fused, dtype=np.float64)
    prompt_ids = list(prompt_ids)
    if not prompt_ids or prompt_ids[0] != BOS:
        raise ValueError("prompt must start with BOS")
    if cfg.strategy == "beam":
        return _beam(lm, fused, prompt_ids, cfg)
    return _greedy_or_nucleus(lm, fused, prompt_ids, cfg)
