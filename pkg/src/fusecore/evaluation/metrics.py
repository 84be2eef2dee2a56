"""Text metrics: MCQ accuracy, corpus BLEU, ROUGE-L and CIDEr.

All text metrics tokenize with :func:`fusecore.reasoner.tokenizer.word_segment`
(lowercased words and punctuation marks).
"""
from __future__ import annotations

import math
from collections import Counter

import numpy as np

from .. import kernels
from ..reasoner.tokenizer import word_segment

BLEU_EPSILON = 1e-9
ROUGE_BETA = 1.2
CIDER_SCALE = 10.0


def accuracy_mcq(predictions, answers) -> float:
    if len(predictions) != len(answers):
        raise ValueError(f"{len(predictions)} predictions for {len(answers)} answers")
    if not answers:
        raise ValueError("no items to score")
    return sum(int(p) == int(a) for p, a in zip(predictions, answers)) / len(answers)


def _tokens(text) -> list:
    return word_segment(text) if isinstance(text, str) else list(text)


def ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# -- BLEU ------------------------------------------------------------------------

def bleu_stats(hypothesis, reference, max_n: int = 4) -> dict:
    """Sufficient statistics of one pair: clipped matches and hypothesis
    n-gram totals per order, plus both lengths."""
    h, r = _tokens(hypothesis), _tokens(reference)
    matches, totals = [], []
    for n in range(1, max_n + 1):
        hc, rc = ngrams(h, n), ngrams(r, n)
        matches.append(sum(min(c, rc[g]) for g, c in hc.items()))
        totals.append(max(len(h) - n + 1, 0))
    return {"matches": matches, "totals": totals, "hyp_len": len(h), "ref_len": len(r)}


def bleu_from_stats(stats) -> float:
    stats = list(stats)
    if not stats:
        raise ValueError("empty corpus")
    max_n = len(stats[0]["matches"])
    c = sum(s["hyp_len"] for s in stats)
    r = sum(s["ref_len"] for s in stats)
    if c == 0:
        return 0.0
    log_p = 0.0
    for k in range(max_n):
        m = sum(s["matches"][k] for s in stats)
        t = sum(s["totals"][k] for s in stats)
        p = m / t if t and m else BLEU_EPSILON
        log_p += math.log(p)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p / max_n)


def bleu(hypotheses, references, max_n: int = 4) -> float:
    """Corpus BLEU with add-epsilon smoothing of zero precisions."""
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references differ in length")
    if not hypotheses:
        raise ValueError("empty hypothesis set")
    return bleu_from_stats(bleu_stats(h, r, max_n) for h, r in zip(hypotheses, references))


# -- ROUGE-L ---------------------------------------------------------------------

def lcs(a, b) -> int:
    vocab: dict = {}
    ia = np.array([vocab.setdefault(t, len(vocab)) for t in a], dtype=np.int64)
    ib = np.array([vocab.setdefault(t, len(vocab)) for t in b], dtype=np.int64)
    return int(kernels.lcs_length(ia, ib))


def rouge_l(hypothesis, reference, beta: float = ROUGE_BETA) -> float:
    """LCS F-measure, recall weighted by ``beta``; 0 if either side is empty."""
    h, r = _tokens(hypothesis), _tokens(reference)
    if not h or not r:
        return 0.0
    m = lcs(h, r)
    if m == 0:
        return 0.0
    p, rec = m / len(h), m / len(r)
    b2 = beta * beta
    return (1.0 + b2) * p * rec / (rec + b2 * p)


def rouge_l_corpus(hypotheses, references) -> float:
    if len(hypotheses) != len(references) or not hypotheses:
        raise ValueError("need equally many hypotheses and references, at least one")
    return sum(rouge_l(h, r) for h, r in zip(hypotheses, references)) / len(hypotheses)


# -- CIDEr -----------------------------------------------------------------------

def cider_scores(hypotheses, references, max_n: int = 4) -> list:
    """Per-sample CIDEr: mean over n of the TF-IDF cosine, times 10.

    Document frequencies come from the references, one reference per sample.
    """
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references differ in length")
    if len(references) < 2:
        raise ValueError("CIDEr needs a corpus of at least 2 samples")
    hyps = [_tokens(h) for h in hypotheses]
    refs = [_tokens(r) for r in references]
    log_n = math.log(len(refs))
    scores = [0.0] * len(refs)
    for n in range(1, max_n + 1):
        ref_counts = [ngrams(r, n) for r in refs]
        df = Counter(g for rc in ref_counts for g in rc)
        for i, (h, rc) in enumerate(zip(hyps, ref_counts)):
            hc = ngrams(h, n)
            idf = {g: log_n - math.log(max(1, df[g])) for g in set(hc) | set(rc)}
            dot = sum(c * rc[g] * idf[g] ** 2 for g, c in hc.items() if g in rc)
            nh = math.sqrt(sum((c * idf[g]) ** 2 for g, c in hc.items()))
            nr = math.sqrt(sum((c * idf[g]) ** 2 for g, c in rc.items()))
            if nh > 0 and nr > 0:
                scores[i] += dot / (nh * nr)
    return [CIDER_SCALE * s / max_n for s in scores]


def cider(hypotheses, references, max_n: int = 4) -> float:
    scores = cider_scores(hypotheses, references, max_n)
    return sum(scores) / len(scores)
