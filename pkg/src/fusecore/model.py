"""The assembled pipeline: video encoder, fusion core and language model."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import Config
from .fusion import FusionConfig, FusionCore
from .perception import ClipPlan, EncoderConfig, Video, VideoEncoder, keyframe_masks, perceive
from .reasoner.decoding import GenerationConfig, generate
from .reasoner.lm import DecoderLM, LMConfig
from .reasoner.lora import adapter_paths, apply_lora, linear_paths
from .reasoner.prompts import TASKS, all_templates, load_template
from .reasoner.tokenizer import BOS, EOS, Vocabulary
from .synth.vocab import PUNCTUATION, WORDS
from .tensor import Tensor


def build_vocabulary() -> Vocabulary:
    """The closed corpus vocabulary plus every word of the prompt templates."""
    return Vocabulary.build(texts=[t.text for t in all_templates()], words=WORDS + PUNCTUATION)


def fusion_config(cfg: Config) -> FusionConfig:
    f = cfg.model.fusion
    return FusionConfig(n_queries=f.n_queries, d_query=f.d_model, d_model=f.d_model, n_layers=f.n_layers,
                        n_heads=f.n_heads, ffn_mult=f.ffn_mult, d_vision=cfg.model.encoder.d_v,
                        d_llm=cfg.model.lm.d_model)


def lm_config(cfg: Config, vocab_size: int) -> LMConfig:
    m = cfg.model.lm
    return LMConfig(vocab_size=vocab_size, d_model=m.d_model, n_layers=m.n_layers, n_heads=m.n_heads,
                    max_len=m.max_len, ffn_mult=m.ffn_mult)


def lora_targets(lm: DecoderLM, targets) -> list:
    if targets == "all":
        return linear_paths(lm)
    if isinstance(targets, str):
        targets = [targets]
    return list(targets)


class VideoReasoner:
    """Bundle of the three networks with the inference procedure.

    Each network draws its initial weights from its own child of
    ``SeedSequence(cfg.seed)``, so resizing one does not reshuffle the others.
    """

    def __init__(self, cfg: Config, vocab: Vocabulary | None = None):
        self.cfg = cfg
        self.vocab = vocab if vocab is not None else build_vocabulary()
        seeds = np.random.SeedSequence(cfg.seed).spawn(4)
        self.encoder = VideoEncoder(cfg.model.encoder, np.random.default_rng(seeds[0]))
        self.fusion = FusionCore(fusion_config(cfg), np.random.default_rng(seeds[1]))
        self.lm = DecoderLM(lm_config(cfg, len(self.vocab)), np.random.default_rng(seeds[2]))
        self._fusion_seed = seeds[1]
        self._lora_seed = seeds[3]
        self.encoder.freeze()
        enc = cfg.model.encoder
        clips = cfg.model.clips
        self.plan = ClipPlan.make(cfg.data.world.steps, clips.count, clips.frames_per_clip, enc.patch)
        self.bind_names()

    def bind_names(self) -> None:
        for prefix, module in self.modules().items():
            module.bind_names(prefix + ".")

    def modules(self) -> dict:
        return {"encoder": self.encoder, "fusion": self.fusion, "lm": self.lm}

    def named_parameters(self):
        for prefix, module in self.modules().items():
            yield from module.named_parameters(prefix + ".")

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise T.ShapeError(f"{name}: {state[name].shape} != {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def reset_fusion(self) -> None:
        """Re-draw the fusion core from its initial seed."""
        self.fusion = FusionCore(fusion_config(self.cfg), np.random.default_rng(self._fusion_seed))
        self.bind_names()

    # -- LoRA ------------------------------------------------------------------

    @property
    def has_lora(self) -> bool:
        return bool(adapter_paths(self.lm))

    def add_lora(self, r: int, alpha: float, targets="all") -> list:
        paths = lora_targets(self.lm, targets)
        apply_lora(self.lm, paths, r, alpha, np.random.default_rng(self._lora_seed))
        self.bind_names()
        return paths

    # -- inference -------------------------------------------------------------

    def video(self, frames) -> Video:
        return Video(frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=np.float64)))

    def vision_tokens(self, frames, masks=None):
        """``Z_vision`` for one video. Without explicit masks, objects are
        segmented by colour on the plan's keyframes."""
        video = self.video(frames)
        if masks is None:
            masks = keyframe_masks(video, self.plan)
        return perceive(video, masks, self.encoder, self.plan)

    def prompt_ids(self, task: str) -> list:
        return [BOS] + self.vocab.encode(load_template(task).text)

    def fused(self, z_vision) -> np.ndarray:
        with T.no_grad():
            return self.fusion.fuse_batch([Tensor(np.asarray(z_vision))])[0].data

    def infer(self, frames, task: str = "reasoning", gen: GenerationConfig | None = None, masks=None) -> str:
        """Perceive, fuse, prompt and decode; returns the generated text."""
        if task not in TASKS:
            raise KeyError(f"unknown task {task!r}")
        gen = gen if gen is not None else self.cfg.generation
        z = self.vision_tokens(frames, masks).combined.data
        ids = generate(self.lm, self.fused(z), self.prompt_ids(task), gen)
        if ids and ids[-1] == EOS:
            ids = ids[:-1]
        return self.vocab.decode(ids).strip()


def parameter_count(module) -> int:
    return int(sum(p.data.size for p in module.parameters()))


def build_paper_fusion(cfg: Config) -> FusionCore:
    """The reference-scale fusion core (the only reference-scale part that is
    built here)."""
    return FusionCore(fusion_config(cfg), np.random.default_rng(cfg.seed))


__all__ = ["VideoReasoner", "build_vocabulary", "fusion_config", "lm_config", "EncoderConfig"]
