"""Staged training.

Stage 0 pretrains the language model, together with a disposable fusion core,
on videos from a separate seed range; it stands in for starting from an LLM
that already knows how to read its context. The fusion core is
re-initialised before stage 1 so alignment starts from scratch. Stage 1 aligns the
fusion core on captions with everything else frozen. Stage 2 tunes the fusion
core plus LoRA adapters on instruction/response pairs.

Every sequence is ``[vision (N_q rows); BOS; text; EOS]``; a batch packs its
sequences into one block-causal pass.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..config import Config, StageConfig, from_dict
from ..model import VideoReasoner
from ..reasoner.lora import adapter_paths
from ..reasoner.prompts import load_template
from ..reasoner.tokenizer import BOS, EOS, TokenSequence, Vocabulary
from ..synth.dataset import corpus_task
from ..tensor import Tensor
from . import checkpoint as ckpt_io
from .losses import lm_loss
from .optim import AdamW, LrSchedule, clip_grad_norm

STAGES = (0, 1, 2)


class StageOrderError(RuntimeError):
    pass


class EmptyDatasetError(ValueError):
    pass


@dataclass
class Example:
    key: int
    vision: np.ndarray | None  # Z_vision [(N_t + N_o) x D_v], None for text-only
    ids: list
    loss_mask: list


# -- example construction ------------------------------------------------------

def caption_example(vocab: Vocabulary, vision, caption: str, key: int = 0) -> Example:
    """Loss on the caption and EOS."""
    body = vocab.encode(load_template("caption").text + caption)
    ids = [BOS] + body + [EOS]
    return Example(key, vision, ids, [False] + [True] * (len(ids) - 1))


def instruction_example(vocab: Vocabulary, vision, task: str, response: str, key: int = 0,
                        prompt_loss: bool = False) -> Example:
    """Loss on the response and EOS; with ``prompt_loss`` on the prompt too."""
    prompt = [BOS] + vocab.encode(load_template(task).text)
    answer = vocab.encode(" " + response) + [EOS]
    mask = [False] + [prompt_loss] * (len(prompt) - 1) + [True] * len(answer)
    return Example(key, vision, prompt + answer, mask)


def task_example(vocab: Vocabulary, vision, task: str, text: str, key: int = 0, prompt_loss: bool = False):
    if task == "caption":
        return caption_example(vocab, vision, text, key)
    return instruction_example(vocab, vision, task, text, key, prompt_loss)


class VisionCache:
    """``Z_vision`` per video key. Valid because the encoder never trains."""

    def __init__(self, bundle: VideoReasoner):
        self.bundle = bundle
        self.store: dict = {}

    def get(self, key, frames, masks=None) -> np.ndarray:
        if key not in self.store:
            self.store[key] = self.bundle.vision_tokens(frames, masks).combined.data
        return self.store[key]


def stage_examples(bundle: VideoReasoner, stage: int, samples, cache: VisionCache | None = None) -> list:
    """Training examples from samples with ``seed``, ``video`` and text fields.

    Stage 0 trains on each sample's pretraining task (loss on every text
    token), stage 1 on captions, stage 2 on the sample's instruction task.
    """
    cache = cache or VisionCache(bundle)
    out = []
    for s in samples:
        z = cache.get(s.seed, s.video)
        if stage == 0:
            task = corpus_task(s.seed)
            out.append(task_example(bundle.vocab, z, task, s.text_for(task), s.seed, prompt_loss=True))
        elif stage == 1:
            out.append(caption_example(bundle.vocab, z, s.caption, s.seed))
        else:
            out.append(instruction_example(bundle.vocab, z, s.task, s.response, s.seed))
    return out


# -- loss ------------------------------------------------------------------------

def pack_batch(bundle: VideoReasoner, batch) -> tuple:
    """Packed input rows, per-sequence sizes, logit rows and their targets."""
    nq = bundle.fusion.cfg.n_queries
    d = bundle.lm.cfg.d_model
    b = len(batch)
    if all(ex.vision is None for ex in batch):
        fused = Tensor(np.zeros((b * nq, d)))
    elif any(ex.vision is None for ex in batch):
        raise ValueError("cannot mix text-only and video examples in one batch")
    else:
        fused = bundle.fusion.fuse_packed([Tensor(ex.vision) for ex in batch])
    all_ids = np.concatenate([np.asarray(ex.ids, dtype=np.int64) for ex in batch])
    pool = T.concat_rows([fused, bundle.lm.embed(all_ids)])
    order, sizes, rows, targets = [], [], [], []
    text_off = b * nq
    seq_off = 0
    for i, ex in enumerate(batch):
        n = len(ex.ids)
        order.extend(range(i * nq, (i + 1) * nq))
        order.extend(range(text_off, text_off + n))
        for j in range(1, n):
            if ex.loss_mask[j]:
                rows.append(seq_off + nq + j - 1)
                targets.append(ex.ids[j])
        text_off += n
        seq_off += nq + n
        sizes.append(nq + n)
    x = T.take_rows(pool, np.asarray(order))
    return x, sizes, np.asarray(rows, dtype=np.int64), targets


def batch_loss(bundle: VideoReasoner, batch) -> Tensor:
    """Mean next-token NLL over every loss-masked position in ``batch``."""
    x, sizes, rows, targets = pack_batch(bundle, batch)
    if rows.size == 0:
        raise T.InvalidBatchError("batch has no loss-bearing positions")
    logits = bundle.lm.forward_packed(x, sizes, rows=rows)
    return lm_loss(logits, TokenSequence(list(targets), [True] * len(targets)))


def mean_loss(bundle: VideoReasoner, examples, batch_size: int = 16) -> float:
    """Token-weighted mean loss over ``examples`` without recording a graph."""
    total, count = 0.0, 0
    with T.no_grad():
        for i in range(0, len(examples), batch_size):
            batch = examples[i:i + batch_size]
            x, sizes, rows, targets = pack_batch(bundle, batch)
            logits = bundle.lm.forward_packed(x, sizes, rows=rows)
            total += float(T.cross_entropy_rows(logits, targets, reduction="sum").data)
            count += len(targets)
    return total / count


# -- freezing -----------------------------------------------------------------

@dataclass
class FreezePlan:
    stage: int
    frozen: dict  # parameter path -> bool

    @classmethod
    def for_stage(cls, bundle: VideoReasoner, stage: int, full_unfreeze: bool = False) -> "FreezePlan":
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage}")
        frozen = {}
        for name, _ in bundle.named_parameters():
            part = name.split(".", 1)[0]
            if part == "encoder":
                trainable = False
            elif part == "fusion":
                trainable = True
            elif stage == 0:
                trainable = True
            elif stage == 2:
                trainable = full_unfreeze or name.endswith((".lora_a", ".lora_b"))
            else:
                trainable = False
            frozen[name] = not trainable
        return cls(stage, frozen)

    def apply(self, bundle: VideoReasoner) -> None:
        for name, p in bundle.named_parameters():
            p.frozen = self.frozen[name]

    def trainable(self) -> list:
        return [n for n, f in self.frozen.items() if not f]


# -- batching -------------------------------------------------------------------

class BatchSampler:
    """Fixed-size batches over reshuffled epochs, drawn from one generator."""

    def __init__(self, n: int, batch_size: int, seed):
        if n < 1:
            raise EmptyDatasetError("dataset is empty")
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = np.random.default_rng(seed)
        self.order = self.rng.permutation(n).tolist()
        self.pos = 0

    def next(self) -> list:
        out = []
        while len(out) < self.batch_size:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n).tolist()
                self.pos = 0
            take = min(self.batch_size - len(out), self.n - self.pos)
            out.extend(self.order[self.pos:self.pos + take])
            self.pos += take
        return out

    def state(self) -> dict:
        return {"bit_generator": self.rng.bit_generator.state, "order": self.order, "pos": self.pos, "n": self.n}

    def load_state(self, state: dict) -> None:
        if state["n"] != self.n:
            raise ValueError(f"sampler state is for {state['n']} examples, dataset has {self.n}")
        self.rng.bit_generator.state = state["bit_generator"]
        self.order = list(state["order"])
        self.pos = int(state["pos"])


# -- trainer --------------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    lr: float
    loss: float
    wall_time: float


@dataclass
class Trainer:
    """One stage of training over a fixed example list."""

    bundle: VideoReasoner
    stage: int
    examples: list
    config: StageConfig
    completed: tuple = ()
    override: bool = False
    log_path: str | None = None
    losses: list = field(default_factory=list)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage}")
        if not self.examples:
            raise EmptyDatasetError("dataset is empty")
        needed = self.stage - 1
        if self.stage > 0 and needed not in self.completed and not self.override:
            raise StageOrderError(f"stage {self.stage} needs a completed stage-{needed} checkpoint "
                                  f"(or an explicit override)")
        cfg = self.config
        if self.stage == 2 and not cfg.full_unfreeze and not self.bundle.has_lora:
            if cfg.lora is None:
                raise ValueError("stage 2 needs a lora section unless full_unfreeze is set")
            self.bundle.add_lora(cfg.lora.r, cfg.lora.alpha, cfg.lora.targets)
        self.plan = FreezePlan.for_stage(self.bundle, self.stage, cfg.full_unfreeze)
        self.plan.apply(self.bundle)
        params = dict(self.bundle.named_parameters())
        self.trainable = {n: params[n] for n in self.plan.trainable()}
        self.optimizer = AdamW(self.trainable, cfg.betas, cfg.eps, cfg.weight_decay)
        self.total_steps = cfg.total_steps(len(self.examples))
        self.schedule = LrSchedule(min(cfg.warmup, self.total_steps), self.total_steps, cfg.lr, cfg.floor_lr)
        seed_seq = np.random.SeedSequence([self.bundle.cfg.seed, 1000 + self.stage])
        self.sampler = BatchSampler(len(self.examples), cfg.batch_size, seed_seq)
        self.step_count = 0
        self._t0 = time.perf_counter()

    @property
    def done(self) -> bool:
        return self.step_count >= self.total_steps

    def train_step(self) -> StepRecord:
        batch = [self.examples[i] for i in self.sampler.next()]
        for p in self.trainable.values():
            p.grad = None
        loss = batch_loss(self.bundle, batch)
        T.backward(loss)
        if self.config.grad_clip is not None:
            clip_grad_norm(self.trainable.values(), self.config.grad_clip)
        lr = self.schedule(self.step_count + 1)
        self.optimizer.step(lr)
        self.step_count += 1
        value = float(loss.data)
        self.losses.append(value)
        rec = StepRecord(self.step_count, lr, value, time.perf_counter() - self._t0)
        if self.log_path:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"stage": self.stage, **rec.__dict__}) + "\n")
        return rec

    def run(self, steps: int | None = None, checkpoint_path=None) -> list:
        """Train until ``steps`` more updates or the end of the stage.

        With ``checkpoint_path`` a checkpoint is written every
        ``checkpoint_every`` steps and when the loop stops.
        """
        limit = self.total_steps if steps is None else min(self.total_steps, self.step_count + steps)
        every = self.config.checkpoint_every
        while self.step_count < limit:
            self.train_step()
            if checkpoint_path and every and self.step_count % every == 0:
                self.save(checkpoint_path)
        if checkpoint_path:
            self.save(checkpoint_path)
        return self.losses

    # -- persistence --

    def completed_stages(self) -> list:
        done = set(self.completed)
        if self.done:
            done.add(self.stage)
        return sorted(done)

    def to_checkpoint(self) -> ckpt_io.Checkpoint:
        ck = ckpt_io.Checkpoint()
        for name, p in self.bundle.named_parameters():
            ck.entries[name] = p.data
        for name in self.trainable:
            ck.entries[f"optim.m.{name}"] = self.optimizer.m[name]
            ck.entries[f"optim.v.{name}"] = self.optimizer.v[name]
        ck.set_json("state", {
            "stage": self.stage,
            "step": self.step_count,
            "total_steps": self.total_steps,
            "completed_stages": self.completed_stages(),
            "override": self.override,
            "trainable": sorted(self.trainable),
            "optimizer": self.optimizer.state(),
            "lora": lora_state(self.bundle),
            "config": self.bundle.cfg.to_dict(),
            "vocab": self.bundle.vocab.tokens,
            "loss_trace": self.losses,
        })
        ck.set_json("rng", self.sampler.state())
        return ck

    def save(self, path) -> None:
        ckpt_io.save(path, self.to_checkpoint())

    @classmethod
    def resume(cls, path, examples, log_path=None) -> "Trainer":
        """Rebuild the bundle, optimizer and sampler exactly as saved."""
        ck = ckpt_io.load(path)
        bundle, state = bundle_from_checkpoint(ck)
        stage = state["stage"]
        trainer = cls(bundle, stage, examples, bundle.cfg.training.stage(stage),
                      completed=tuple(s for s in state["completed_stages"] if s != stage),
                      override=state["override"], log_path=log_path)
        if sorted(trainer.trainable) != state["trainable"]:
            raise ckpt_io.CheckpointError("trainable parameter set differs from the checkpoint")
        m = {n: ck.entries[f"optim.m.{n}"] for n in trainer.trainable}
        v = {n: ck.entries[f"optim.v.{n}"] for n in trainer.trainable}
        trainer.optimizer.load_moments(m, v, state["optimizer"]["step"])
        trainer.sampler.load_state(ck.json_blob("rng"))
        trainer.step_count = state["step"]
        trainer.losses = list(state["loss_trace"])
        return trainer


def lora_state(bundle: VideoReasoner):
    paths = adapter_paths(bundle.lm)
    if not paths:
        return None
    first = bundle.lm.get_submodule(paths[0])
    return {"r": first.r, "alpha": first.alpha, "targets": paths}


def bundle_from_checkpoint(ck: ckpt_io.Checkpoint) -> tuple:
    """``(VideoReasoner, state)`` with the saved weights loaded."""
    state = ck.json_blob("state")
    cfg: Config = from_dict(state["config"], apply_env=False)
    bundle = VideoReasoner(cfg, Vocabulary(state["vocab"]))
    if state["lora"]:
        lo = state["lora"]
        bundle.add_lora(lo["r"], lo["alpha"], lo["targets"])
    params = {k: v for k, v in ck.entries.items() if not k.startswith("optim.")}
    bundle.load_state_dict(params)
    return bundle, state


def load_bundle(path) -> tuple:
    return bundle_from_checkpoint(ckpt_io.load(path))


def start_stage(bundle: VideoReasoner, stage: int, examples, config: StageConfig, completed=(),
                override: bool = False, log_path=None) -> Trainer:
    """A fresh :class:`Trainer`; stage 1 first discards the stage-0 fusion core."""
    if stage == 1:
        bundle.reset_fusion()
    return Trainer(bundle, stage, examples, config, tuple(completed), override, log_path)


def train_stage(stage: int, bundle: VideoReasoner, examples, config: StageConfig, completed=(),
                override: bool = False, checkpoint_path=None, log_path=None) -> Trainer:
    """Run a whole stage; returns the finished :class:`Trainer` (its
    ``losses`` is the per-step trace)."""
    trainer = start_stage(bundle, stage, examples, config, completed, override, log_path)
    trainer.run(checkpoint_path=checkpoint_path)
    return trainer
