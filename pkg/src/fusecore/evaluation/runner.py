"""Evaluation over a dataset split: generation, MCQ ranking and metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..model import VideoReasoner
from ..reasoner.decoding import GenerationConfig, generate, log_softmax
from ..reasoner.tokenizer import EOS
from ..synth.dataset import atomic_write, load_video, read_dataset, vocab_digest
from ..training.trainer import caption_example, load_bundle, pack_batch
from . import metrics

RESERVED = ("meteor", "bertscore")


class VocabularyMismatchError(ValueError):
    pass


@dataclass
class EvalReport:
    scores: dict
    records: list
    config: dict
    bleu_stats: list = field(default_factory=list)

    def summary(self) -> dict:
        return {"scores": self.scores, "n": len(self.records), "config": self.config}

    def to_lines(self) -> str:
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        lines.append(json.dumps({"summary": self.summary(), "bleu_stats": self.bleu_stats}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        atomic_write(path, self.to_lines().encode("utf-8"))


def option_logprobs(bundle: VideoReasoner, z_vision, options) -> list:
    """Summed log-probability of each option (as a caption, EOS included)."""
    batch = [caption_example(bundle.vocab, z_vision, o) for o in options]
    with T.no_grad():
        x, sizes, rows, targets = pack_batch(bundle, batch)
        logits = bundle.lm.forward_packed(x, sizes, rows=rows).data
    lp = log_softmax(logits)[np.arange(len(targets)), targets]
    out, start = [], 0
    for ex in batch:
        n = sum(ex.loss_mask[1:])
        out.append(float(lp[start:start + n].sum()))
        start += n
    return out


def answer_mcq(bundle: VideoReasoner, z_vision, options) -> int:
    """Index of the most likely option (lowest index on ties)."""
    scores = option_logprobs(bundle, z_vision, options)
    return int(np.argmax(scores))


def score(hypotheses, references, predictions=None, answers=None) -> tuple:
    """``(scores, per-sample metric dicts, bleu stats)`` for one corpus."""
    stats = [metrics.bleu_stats(h, r) for h, r in zip(hypotheses, references)]
    rouge = [metrics.rouge_l(h, r) for h, r in zip(hypotheses, references)]
    cider = metrics.cider_scores(hypotheses, references) if len(references) >= 2 else [None] * len(references)
    scores = {
        "bleu": metrics.bleu_from_stats(stats),
        "rouge_l": sum(rouge) / len(rouge),
        "cider": sum(cider) / len(cider) if cider and cider[0] is not None else None,
        "accuracy": metrics.accuracy_mcq(predictions, answers) if answers else None,
    }
    for name in RESERVED:
        scores[name] = None
    per = [{"rouge_l": r, "cider": c, "bleu_stats": s} for r, c, s in zip(rouge, cider, stats)]
    return scores, per, stats


def evaluate_bundle(bundle: VideoReasoner, records, frames_of, gen: GenerationConfig, hypotheses=None) -> EvalReport:
    """Generate (unless ``hypotheses`` is given), answer MCQs and score.

    ``frames_of(record)`` returns that record's video array.
    """
    hyps, preds = [], []
    for i, rec in enumerate(records):
        z = bundle.vision_tokens(frames_of(rec)).combined.data
        if hypotheses is None:
            fused = bundle.fused(z)
            ids = generate(bundle.lm, fused, bundle.prompt_ids(rec.get("task", "caption")), gen)
            if ids and ids[-1] == EOS:
                ids = ids[:-1]
            hyps.append(bundle.vocab.decode(ids).strip())
        else:
            hyps.append(hypotheses[i])
        preds.append(answer_mcq(bundle, z, rec["mcq"]["options"]))
    refs = [rec["response"] for rec in records]
    answers = [rec["mcq"]["answer"] for rec in records]
    scores, per, stats = score(hyps, refs, preds, answers)
    out = []
    for rec, h, p, m in zip(records, hyps, preds, per):
        out.append({"id": rec["seed"], "task": rec.get("task"), "reference": rec["response"], "hypothesis": h,
                    "mcq_prediction": p, "mcq_answer": rec["mcq"]["answer"],
                    "rouge_l": m["rouge_l"], "cider": m["cider"], "bleu_stats": m["bleu_stats"]})
    cfg = {"generation": gen.__dict__, "seed": bundle.cfg.seed}
    return EvalReport(scores, out, cfg, stats)


def run_eval(checkpoint, split_path, gen: GenerationConfig, out=None, limit=None) -> EvalReport:
    """Evaluate a checkpoint on a dataset split file and optionally write
    the report (records, then one summary line)."""
    if not Path(checkpoint).exists():
        raise FileNotFoundError(f"checkpoint {checkpoint} not found")
    header, records = read_dataset(split_path)
    bundle, _ = load_bundle(checkpoint)
    if header["vocab_sha256"] != vocab_digest(bundle.vocab):
        raise VocabularyMismatchError("dataset and checkpoint were built with different vocabularies")
    if limit is not None:
        records = records[:limit]
    report = evaluate_bundle(bundle, records, lambda r: load_video(split_path, r), gen)
    report.config["checkpoint"] = str(checkpoint)
    report.config["split"] = str(split_path)
    if out is not None:
        report.write(out)
    return report
