import math
from functools import lru_cache

import numpy as np
import pytest

from fusecore.evaluation import metrics
from fusecore.synth.vocab import WORDS

TOL = 1e-10


def _random_corpus(seed, n=2):
    rng = np.random.default_rng(seed)
    words = list(WORDS[:12])

    def sent():
        return " ".join(rng.choice(words, size=int(rng.integers(1, 12))))

    return [sent() for _ in range(n)], [sent() for _ in range(n)]


# -- independent oracles ------------------------------------------------------------

def bleu_oracle(hyps, refs, max_n=4):
    clipped = [0] * max_n
    total = [0] * max_n
    c = r = 0
    for h, ref in zip(hyps, refs):
        h, ref = h.split(), ref.split()
        c += len(h)
        r += len(ref)
        for n in range(1, max_n + 1):
            hc, rc = {}, {}
            for i in range(len(h) - n + 1):
                hc[tuple(h[i:i + n])] = hc.get(tuple(h[i:i + n]), 0) + 1
            for i in range(len(ref) - n + 1):
                rc[tuple(ref[i:i + n])] = rc.get(tuple(ref[i:i + n]), 0) + 1
            for g in hc:
                clipped[n - 1] += min(hc[g], rc.get(g, 0))
            total[n - 1] += max(0, len(h) - n + 1)
    precisions = [clipped[k] / total[k] if clipped[k] > 0 else 1e-9 for k in range(max_n)]
    geo = math.exp(sum(math.log(p) for p in precisions) / max_n)
    bp = math.exp(1 - r / c) if c < r else 1.0
    return bp * geo


def rouge_oracle(h, r, beta=1.2):
    h, r = h.split(), r.split()

    @lru_cache(maxsize=None)
    def L(i, j):
        if i == len(h) or j == len(r):
            return 0
        if h[i] == r[j]:
            return 1 + L(i + 1, j + 1)
        return max(L(i + 1, j), L(i, j + 1))

    m = L(0, 0)
    if m == 0:
        return 0.0
    p, rec = m / len(h), m / len(r)
    return ((1 + beta ** 2) * p * rec) / (rec + beta ** 2 * p)


def cider_oracle(hyps, refs, max_n=4):
    N = len(refs)
    out = []
    for i in range(N):
        total = 0.0
        for n in range(1, max_n + 1):
            def grams(s):
                t = s.split()
                return [tuple(t[k:k + n]) for k in range(len(t) - n + 1)]
            ref_sets = [set(grams(r)) for r in refs]
            hv, rv = {}, {}
            for g in grams(hyps[i]):
                hv[g] = hv.get(g, 0) + 1
            for g in grams(refs[i]):
                rv[g] = rv.get(g, 0) + 1
            keys = set(hv) | set(rv)

            def idf(g):
                df = sum(1 for s in ref_sets if g in s)
                return math.log(N / max(1.0, df))
            a = np.array([hv.get(g, 0) * idf(g) for g in sorted(keys)])
            b = np.array([rv.get(g, 0) * idf(g) for g in sorted(keys)])
            na, nb = np.linalg.norm(a), np.linalg.norm(b)
            total += float(a @ b / (na * nb)) if na > 0 and nb > 0 else 0.0
        out.append(10.0 * total / max_n)
    return out


# -- agreement with oracles ---------------------------------------------------------

@pytest.mark.parametrize("seed", range(100))
def test_bleu_matches_oracle(seed):
    hyps, refs = _random_corpus(seed, n=1 + seed % 3)
    assert abs(metrics.bleu(hyps, refs) - bleu_oracle(hyps, refs)) <= TOL


@pytest.mark.parametrize("seed", range(100))
def test_rouge_matches_oracle(seed):
    (h,), (r,) = _random_corpus(1000 + seed, n=1)
    assert abs(metrics.rouge_l(h, r) - rouge_oracle(h, r)) <= TOL


@pytest.mark.parametrize("seed", range(100))
def test_cider_matches_oracle(seed):
    hyps, refs = _random_corpus(2000 + seed, n=2 + seed % 4)
    got = metrics.cider_scores(hyps, refs)
    for a, b in zip(got, cider_oracle(hyps, refs)):
        assert abs(a - b) <= TOL


# -- fixed points ---------------------------------------------------------------------

def test_identical_text_scores():
    refs = ["the red square moves left", "the blue circle stays still", "nothing moves"]
    assert metrics.bleu(refs, refs) == pytest.approx(1.0, abs=1e-12)
    assert metrics.rouge_l_corpus(refs, refs) == pytest.approx(1.0, abs=1e-12)
    perfect = metrics.cider(refs, refs)
    rng = np.random.default_rng(0)
    for _ in range(20):
        hyps = [" ".join(rng.choice(r.split(), size=3)) for r in refs]
        assert metrics.cider(hyps, refs) <= perfect + 1e-12


def test_bleu_smoothing_and_brevity():
    score = metrics.bleu(["red blue"], ["blue red"])
    assert 0.0 < score < 1e-2
    assert metrics.bleu(["the red"], ["the red square moves left"]) < 1.0
    assert metrics.bleu([""], ["the red"]) == 0.0
    with pytest.raises(ValueError):
        metrics.bleu([], [])


def test_rouge_empty_cases():
    assert metrics.rouge_l("", "") == 0.0
    assert metrics.rouge_l("red", "") == 0.0


def test_cider_needs_a_corpus():
    with pytest.raises(ValueError):
        metrics.cider(["a"], ["a"])


def test_accuracy():
    assert metrics.accuracy_mcq([0, 1, 2, 3], [0, 1, 2, 3]) == 1.0
    assert metrics.accuracy_mcq([0, 1, 2, 3], [0, 1, 0, 0]) == 0.5
    with pytest.raises(ValueError):
        metrics.accuracy_mcq([0], [0, 1])
    rng = np.random.default_rng(0)
    p, a = rng.integers(0, 4, 1000), rng.integers(0, 4, 1000)
    hits = 0
    for x, y in zip(p, a):
        hits += int(x == y)
    assert metrics.accuracy_mcq(list(p), list(a)) == hits / 1000


def test_bleu_is_recomputable_from_stats():
    hyps, refs = _random_corpus(7, n=5)
    stats = [metrics.bleu_stats(h, r) for h, r in zip(hyps, refs)]
    assert metrics.bleu_from_stats(stats) == metrics.bleu(hyps, refs)
