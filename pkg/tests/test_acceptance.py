"""Ten end-to-end acceptance checks.

Each test records one line ``[PASS|FAIL] <n>. <name>: <detail>``; the lines
are printed together at the end of the pytest run (see ``conftest.py``) and
when this file is run as a script.
"""
import copy
import dataclasses
import math
import sys
import time

import numpy as np
import pytest

from fusecore import tensor as T
from fusecore.config import from_dict, load_preset
from fusecore.evaluation import metrics
from fusecore.evaluation.runner import answer_mcq
from fusecore.fusion import FusionConfig, FusionCore, fuse
from fusecore.model import VideoReasoner
from fusecore.nn import Linear
from fusecore.perception import ClipPlan, EncoderConfig, ObjectMask, Video, VideoEncoder, perceive
from fusecore.reasoner.decoding import GenerationConfig, generate
from fusecore.reasoner.lm import DecoderLM, LMConfig
from fusecore.reasoner.lora import LoRALinear, adapter_paths, apply_lora, linear_paths, merge_lora
from fusecore.reasoner.tokenizer import EOS
from fusecore.synth.dataset import emit_dataset, make_sample
from fusecore.tensor import Parameter, Tensor
from fusecore.training.optim import AdamW, LrSchedule
from fusecore.training.trainer import (Trainer, VisionCache, load_bundle, mean_loss, stage_examples,
                                       start_stage)

from conftest import check_grads, tiny_overrides
from test_metrics import _random_corpus, bleu_oracle, cider_oracle, rouge_oracle

RESULTS: dict = {}


def record(n: int, name: str, ok: bool, detail: str) -> None:
    RESULTS[n] = f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}: {detail}"
    assert ok, RESULTS[n]


def summary_lines() -> list:
    return [RESULTS[k] for k in sorted(RESULTS)]


def _wsum(out, w):
    return T.sum(T.mul(out, Tensor(w)))


# 1 -------------------------------------------------------------------------------

def _grad_cases(seed):
    rng = np.random.default_rng(seed)
    cases = {}

    q, k, v = (Tensor(rng.normal(size=s)) for s in ((3, 4), (5, 4), (5, 4)))
    mask = rng.random((3, 5)) < 0.6
    mask[:, 0] = True
    w = rng.normal(size=(3, 4))
    cases["attention"] = (lambda: _wsum(T.attention(q, k, v, 2, mask), w), [q, k, v])

    x, g, b = Tensor(rng.normal(size=(3, 6))), Tensor(rng.normal(size=6)), Tensor(rng.normal(size=6))
    w2 = rng.normal(size=(3, 6))
    cases["layer norm"] = (lambda: _wsum(T.layer_norm(x, g, b), w2), [x, g, b])

    xp, wp, bp = Tensor(rng.normal(size=(4, 5))), Tensor(rng.normal(size=(3, 5))), Tensor(rng.normal(size=3))
    w3 = rng.normal(size=(4, 3))
    cases["projection"] = (lambda: _wsum(T.linear(xp, wp, bp), w3), [xp, wp, bp])

    h, table = Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(7, 4)))
    tgt = rng.integers(0, 7, size=5)
    lm_mask = rng.random(5) < 0.7
    lm_mask[0] = True
    cases["LM head"] = (lambda: T.cross_entropy_rows(T.linear(h, table), tgt, lm_mask), [h, table])

    layer = LoRALinear(Linear(4, 3, rng), r=2, alpha=3.0, rng=rng)
    layer.lora_b.data = rng.normal(size=layer.lora_b.shape)
    xl = Tensor(rng.normal(size=(3, 4)))
    w4 = rng.normal(size=(3, 3))
    cases["LoRA path"] = (lambda: _wsum(layer(xl), w4), [layer.lora_a, layer.lora_b, xl])
    return cases


def test_01_gradients():
    t0 = time.perf_counter()
    worst = {}
    for i in range(20):
        for name, (build, tensors) in _grad_cases(9000 + i).items():
            worst[name] = max(worst.get(name, 0.0), check_grads(build, tensors, eps=1e-5))
    elapsed = time.perf_counter() - t0
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(1, "gradient correctness", ok, f"20 instances each, worst rel err {detail}; {elapsed:.1f}s")


# 2 -------------------------------------------------------------------------------

def test_02_shape_contract():
    rng = np.random.default_rng(2)
    bad = 0
    for _ in range(100):
        patch = int(rng.choice([2, 4, 8]))
        side = patch * int(rng.integers(1, 4))
        n_t = int(rng.integers(1, 4))
        fpc = int(rng.integers(1, 4))
        frames = n_t * fpc + int(rng.integers(0, 3))
        heads = int(rng.choice([1, 2]))
        d_v = heads * int(rng.integers(2, 5))
        enc = VideoEncoder(EncoderConfig(height=side, width=side, channels=int(rng.choice([1, 3])), patch=patch,
                                         max_frames=frames, d_v=d_v, n_layers=1, n_heads=heads),
                           np.random.default_rng(int(rng.integers(1 << 30))))
        plan = ClipPlan.make(frames, n_t, fpc, patch)
        video = Video(rng.random((frames, side, side, enc.cfg.channels)))
        n_o = int(rng.integers(0, 5))
        masks = []
        for j in range(n_o):
            m = rng.random((side, side)) < 0.3
            m[int(rng.integers(side)), int(rng.integers(side))] = True
            masks.append(ObjectMask(int(rng.choice(plan.keyframe_indices)), m, j))
        z = perceive(video, masks, enc, plan).combined
        n_q = int(rng.integers(1, 6))
        f_heads = int(rng.choice([1, 2]))
        d_q = f_heads * int(rng.integers(2, 5))
        d_llm = int(rng.integers(3, 10))
        core = FusionCore(FusionConfig(n_queries=n_q, d_query=d_q, d_model=d_q, n_layers=1, n_heads=f_heads,
                                       d_vision=d_v, d_llm=d_llm), np.random.default_rng(int(rng.integers(1 << 30))))
        e = fuse(core, z).tokens
        bad += z.shape != (n_t + n_o, d_v) or e.shape != (n_q, d_llm)
    record(2, "shape contract", bad == 0, f"{100 - bad}/100 random configurations")


# 3 -------------------------------------------------------------------------------

def test_03_permutation_invariance():
    rng = np.random.default_rng(3)
    core = FusionCore(FusionConfig(n_queries=8, d_query=16, d_model=16, n_layers=2, n_heads=4, d_vision=12,
                                   d_llm=20), rng)
    worst = 0.0
    for _ in range(50):
        z = rng.normal(size=(int(rng.integers(1, 15)), 12))
        perm = rng.permutation(len(z))
        a, b = fuse(core, Tensor(z)).tokens.data, fuse(core, Tensor(z[perm])).tokens.data
        worst = max(worst, float(np.max(np.abs(a - b))))
    record(3, "fusion permutation invariance", worst <= 1e-12, f"max |dE| {worst:.1e} over 50 permutations")


# 4 -------------------------------------------------------------------------------

def test_04_freeze_contract():
    cfg = from_dict(tiny_overrides(), apply_env=False)
    samples = [make_sample(s) for s in range(8)]
    b = VideoReasoner(cfg)
    cache = VisionCache(b)
    checked, changed = 0, []
    completed = ()
    for stage in (0, 1, 2):
        ex = stage_examples(b, stage, samples, cache)
        sc = dataclasses.replace(cfg.training.stage(stage), steps=200, batch_size=4, warmup=10)
        tr = start_stage(b, stage, ex, sc, completed)
        before = {n: p.data.copy() for n, p in b.named_parameters()}
        tr.run()
        for n, p in b.named_parameters():
            if tr.plan.frozen[n]:
                checked += 1
                if p.data.tobytes() != before[n].tobytes():
                    changed.append(f"stage {stage}: {n}")
        completed = tuple(tr.completed_stages())
    record(4, "freeze contract", not changed and checked > 0,
           f"{checked} frozen tensors checked after 200 steps in stages 0, 1, 2; {len(changed)} changed")


# 5 -------------------------------------------------------------------------------

def test_05_lora():
    rng = np.random.default_rng(5)
    cfg = LMConfig(vocab_size=40, d_model=16, n_layers=2, n_heads=2, max_len=32)
    lm = DecoderLM(cfg, rng)
    for p in lm.parameters():
        p.data = rng.normal(size=p.shape) * 0.3
    x = Tensor(rng.normal(size=(7, 16)))
    base = lm.forward_logits(x).data
    apply_lora(lm, linear_paths(lm), 4, 8, rng)
    identical = np.array_equal(lm.forward_logits(x).data, base)
    for path in adapter_paths(lm):
        a = lm.get_submodule(path)
        a.lora_b.data = rng.normal(size=a.lora_b.shape) * 0.1
    adapted = lm.forward_logits(x).data
    merge_lora(lm)
    merge_err = float(np.max(np.abs(lm.forward_logits(x).data - adapted)))
    paper = load_preset("paper").training.stage2.lora
    layer = LoRALinear(Linear(4, 4, rng), r=paper.r, alpha=paper.alpha, rng=rng)
    ok = identical and merge_err <= 1e-10 and layer.scaling == 2.0
    record(5, "LoRA contracts", ok, f"zero-init bit-identical {identical}; merge err {merge_err:.1e}; "
           f"paper r={paper.r} alpha={paper.alpha} scaling {layer.scaling}")


# 6, 7 ----------------------------------------------------------------------------

TOY = load_preset("toy")
TRAIN_SEEDS = TOY.data.splits["train"][0]
TEST_START, TEST_COUNT = TOY.data.splits["test"]


@pytest.fixture(scope="module")
def pretrained(tmp_path_factory):
    """Stage-0 checkpoint of the toy model (the from-scratch stand-in for a
    pretrained language model)."""
    cfg = from_dict({}, apply_env=False)
    b = VideoReasoner(cfg)
    start, count = cfg.data.splits["lm_corpus"]
    corpus = [make_sample(s) for s in range(start, start + count)]
    t0 = time.perf_counter()
    tr = start_stage(b, 0, stage_examples(b, 0, corpus), cfg.training.pretrain)
    path = tmp_path_factory.mktemp("stage0") / "stage0.fckp"
    tr.run(checkpoint_path=path)
    return path, time.perf_counter() - t0


def _run_stages(stage0_path, n_train):
    b, state = load_bundle(stage0_path)
    cache = VisionCache(b)
    samples = [make_sample(s) for s in range(TRAIN_SEEDS, TRAIN_SEEDS + n_train)]
    t0 = time.perf_counter()
    ex1 = stage_examples(b, 1, samples, cache)
    tr1 = start_stage(b, 1, ex1, b.cfg.training.stage1, state["completed_stages"])
    tr1.run()
    loss1 = mean_loss(b, ex1)
    ex2 = stage_examples(b, 2, samples, cache)
    tr2 = start_stage(b, 2, ex2, b.cfg.training.stage2, tr1.completed_stages())
    tr2.run()
    loss2 = mean_loss(b, ex2)
    elapsed = time.perf_counter() - t0
    return b, cache, samples, ex2, (tr1, loss1), (tr2, loss2), elapsed


def test_06_overfit(pretrained):
    path, t_pre = pretrained
    b, _, samples, ex2, (tr1, loss1), (tr2, loss2), elapsed = _run_stages(path, 64)
    gen = GenerationConfig(strategy="greedy", max_new_tokens=b.cfg.generation.max_new_tokens)
    exact = 0
    for s, e in zip(samples, ex2):
        ids = generate(b.lm, b.fused(e.vision), b.prompt_ids(s.task), gen)
        exact += bool(ids) and ids[-1] == EOS and b.vocab.decode(ids[:-1]).strip() == s.response
    rate = exact / len(samples)
    ok = (tr1.total_steps <= 500 and loss1 < 0.5 and tr2.total_steps <= 1000 and loss2 < 0.5
          and rate >= 0.9 and elapsed < 15 * 60)
    record(6, "end-to-end overfit", ok,
           f"stage 1 loss {loss1:.3f} after {tr1.total_steps} steps; stage 2 loss {loss2:.3f} after "
           f"{tr2.total_steps} steps; exact greedy {rate:.0%}; stages 1-2 {elapsed / 60:.1f} min "
           f"(stage-0 pretraining {t_pre / 60:.1f} min)")


def test_07_generalization(pretrained):
    path, _ = pretrained
    b, cache, *_ = _run_stages(path, 256)
    correct = 0
    for s in range(TEST_START, TEST_START + TEST_COUNT):
        smp = make_sample(s)
        correct += answer_mcq(b, cache.get(smp.seed, smp.video), smp.mcq.options) == smp.mcq.answer
    acc = correct / TEST_COUNT
    record(7, "generalization smoke test", acc >= 0.45,
           f"MCQ accuracy {acc:.0%} on {TEST_COUNT} held-out items (baseline 25%, bar 45%)")


# 8 -------------------------------------------------------------------------------

def test_08_metric_oracles():
    worst = {"bleu": 0.0, "rouge_l": 0.0, "cider": 0.0}
    for seed in range(100):
        hyps, refs = _random_corpus(seed, n=1 + seed % 3)
        worst["bleu"] = max(worst["bleu"], abs(metrics.bleu(hyps, refs) - bleu_oracle(hyps, refs)))
        (h,), (r,) = _random_corpus(1000 + seed, n=1)
        worst["rouge_l"] = max(worst["rouge_l"], abs(metrics.rouge_l(h, r) - rouge_oracle(h, r)))
        hyps, refs = _random_corpus(2000 + seed, n=2 + seed % 4)
        for a, c in zip(metrics.cider_scores(hyps, refs), cider_oracle(hyps, refs)):
            worst["cider"] = max(worst["cider"], abs(a - c))
    refs = ["the red square moves left", "the blue circle stays still", "nothing moves"]
    ident_bleu = metrics.bleu(refs, refs)
    ident_rouge = metrics.rouge_l_corpus(refs, refs)
    per = metrics.cider_scores(refs, refs)
    rng = np.random.default_rng(8)
    cider_max = True
    for _ in range(50):
        hyps = [" ".join(rng.choice(r.split(), size=int(rng.integers(1, 6)))) for r in refs]
        cider_max &= all(x <= y + 1e-12 for x, y in zip(metrics.cider_scores(hyps, refs), per))
    ok = (max(worst.values()) <= 1e-10 and abs(ident_bleu - 1) <= 1e-12 and abs(ident_rouge - 1) <= 1e-12
          and cider_max)
    record(8, "metric oracles", ok, "max err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + f"; identical text BLEU {ident_bleu:.6f} ROUGE-L {ident_rouge:.6f} CIDEr max {cider_max}")


# 9 -------------------------------------------------------------------------------

def test_09_optimizer_schedule():
    rng = np.random.default_rng(9)
    p0, g = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    lr, b1, b2, eps, wd = 3e-3, 0.9, 0.98, 1e-8, 0.05
    p = Parameter(p0.copy())
    opt = AdamW({"w": p}, (b1, b2), eps, wd)
    p.grad = g
    opt.step(lr)
    # one step from zero moments: m_hat = g, v_hat = g^2
    expected = p0 - lr * (g / (np.abs(g) + eps) + wd * p0)
    adam_err = float(np.max(np.abs(p.data - expected)))
    worst_cont, exact = 0.0, True
    for warmup, total, base, floor in ((100, 1000, 1.0, 0.0), (50, 500, 3e-3, 0.0), (7, 40, 2e-3, 1e-4)):
        s = LrSchedule(warmup, total, base, floor)
        exact &= s(warmup) == base
        warm = base * warmup / warmup
        cos = floor + (base - floor) * 0.5 * (1 + math.cos(math.pi * 0))
        worst_cont = max(worst_cont, abs(warm - s(warmup)), abs(cos - s(warmup)))
    ok = adam_err <= 1e-12 and exact and worst_cont <= 1e-12
    record(9, "optimizer and schedule", ok,
           f"AdamW step err {adam_err:.1e}; lr(warmup) == base {exact}; boundary gap {worst_cont:.1e}")


# 10 ------------------------------------------------------------------------------

def test_10_determinism(tmp_path):
    over = {**tiny_overrides(), "training": {"stage2": {"steps": 12, "batch_size": 3, "warmup": 3}}}
    cfg = from_dict(over, apply_env=False)
    samples = [make_sample(s) for s in range(6)]

    def fresh():
        b = VideoReasoner(cfg)
        return start_stage(b, 2, stage_examples(b, 2, samples), cfg.training.stage2, (0, 1))

    a, c = fresh(), fresh()
    same_trace = a.run() == c.run()
    part = fresh()
    part.run(steps=5, checkpoint_path=tmp_path / "mid.fckp")
    resumed = Trainer.resume(tmp_path / "mid.fckp", copy.copy(part.examples))
    resumed.run()
    same_resume = resumed.losses == a.losses and all(
        x.data.tobytes() == y.data.tobytes()
        for (_, x), (_, y) in zip(a.bundle.named_parameters(), resumed.bundle.named_parameters()))
    splits = {"train": [0, 3], "val": [100000, 2], "test": [200000, 2], "lm_corpus": [300000, 3]}
    enc, vocab = cfg.model.encoder, VideoReasoner(cfg).vocab

    def emit(d):
        paths = emit_dataset(d, splits, cfg.data.world, enc.height, enc.width, enc.channels, vocab)
        return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()} if paths else {}

    first, second = emit(tmp_path / "d1"), emit(tmp_path / "d2")
    same_data = first == second and len(first) > 0
    record(10, "determinism and persistence", same_trace and same_resume and same_data,
           f"loss traces identical {same_trace}; resume identical {same_resume}; "
           f"{len(first)} emitted files identical {same_data}")


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
