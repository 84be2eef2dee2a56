"""Perception backbone: clip-level global tokens and mask-pooled object tokens.

A video [T x H x W x C] is cut into ``N_t`` clips of ``F`` frames. Each clip is
patchified, embedded, given spatial and temporal position embeddings and a
leading [CLS] token, and run through pre-norm transformer blocks with full
spatiotemporal attention. The final [CLS] state is the clip's global token;
object tokens average the final patch states of a keyframe under an object
mask. ``Z_vision`` is the row-wise concatenation ``[global; objects]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Parameter, Tensor


class InsufficientFramesError(ValueError):
    pass


@dataclass
class Video:
    frames: Tensor  # [T x H x W x C], values in [0, 1]

    def __post_init__(self):
        if not isinstance(self.frames, Tensor):
            self.frames = Tensor(self.frames)
        if self.frames.ndim != 4:
            raise T.ShapeError(f"video must be [T x H x W x C], got {self.frames.shape}")
        if self.frames.shape[0] < 1 or self.frames.shape[3] not in (1, 3):
            raise T.ShapeError(f"bad video shape {self.frames.shape}")

    @property
    def shape(self):
        return self.frames.shape

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class ClipPlan:
    clip_count: int
    frames_per_clip: int
    patch_size: int
    clip_frames: tuple  # per clip, the sampled absolute frame indices
    keyframe_indices: tuple

    @classmethod
    def make(cls, num_frames: int, clip_count: int, frames_per_clip: int, patch_size: int) -> "ClipPlan":
        if clip_count < 1 or frames_per_clip < 1:
            raise ValueError("clip_count and frames_per_clip must be positive")
        if clip_count * frames_per_clip > num_frames:
            raise InsufficientFramesError(
                f"{num_frames} frames cannot hold {clip_count} clips of {frames_per_clip}"
            )
        clips = []
        for i in range(clip_count):
            start = i * num_frames // clip_count
            length = (i + 1) * num_frames // clip_count - start
            # centred uniform sampling inside the segment
            clips.append(tuple(start + int((j + 0.5) * length / frames_per_clip) for j in range(frames_per_clip)))
        keys = tuple(c[frames_per_clip // 2] for c in clips)
        return cls(clip_count, frames_per_clip, patch_size, tuple(clips), keys)

    def validate(self, video: Video) -> None:
        t, h, w, _ = video.shape
        if h % self.patch_size or w % self.patch_size:
            raise T.ShapeError(f"frame {h}x{w} not divisible by patch {self.patch_size}")
        if self.clip_count * self.frames_per_clip > t or max(max(c) for c in self.clip_frames) >= t:
            raise InsufficientFramesError(f"plan needs more than the video's {t} frames")


@dataclass
class ObjectMask:
    frame_index: int
    mask: np.ndarray  # bool [H x W]
    object_id: int

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise ValueError(f"object mask {self.object_id} at frame {self.frame_index} is empty")


@dataclass
class VisionTokens:
    global_tokens: Tensor  # [N_t x D_v]
    objects: Tensor  # [N_o x D_v]
    combined: Tensor = field(init=False)

    def __post_init__(self):
        self.combined = build_combined(self.global_tokens, self.objects)

    @property
    def num_rows(self) -> int:
        return self.combined.shape[0]


def build_combined(global_tokens: Tensor, objects: Tensor) -> Tensor:
    if objects.shape[0] == 0:
        return global_tokens
    if global_tokens.shape[1] != objects.shape[1]:
        raise T.ShapeError(f"global width {global_tokens.shape[1]} != object width {objects.shape[1]}")
    return T.concat_rows([global_tokens, objects])


def build_vision_tokens(global_tokens: Tensor, objects: Tensor) -> VisionTokens:
    return VisionTokens(global_tokens, objects)


def split_clips(video: Video, plan: ClipPlan) -> list:
    """Return the ``N_t`` clips as numpy arrays [F x H x W x C], in order."""
    plan.validate(video)
    return [video.frames.data[list(idx)] for idx in plan.clip_frames]


def patchify(frame: np.ndarray, patch: int) -> np.ndarray:
    """[H x W x C] -> [(H/P * W/P) x (P*P*C)], patches in row-major order."""
    h, w, c = frame.shape
    x = frame.reshape(h // patch, patch, w // patch, patch, c).transpose(0, 2, 1, 3, 4)
    return x.reshape((h // patch) * (w // patch), patch * patch * c)


def patch_centers(height: int, width: int, patch: int) -> list:
    return [(pr * patch + patch // 2, pc * patch + patch // 2)
            for pr in range(height // patch) for pc in range(width // patch)]


@dataclass(frozen=True)
class EncoderConfig:
    height: int = 32
    width: int = 32
    channels: int = 3
    patch: int = 8
    max_frames: int = 16
    d_v: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    pos_std: float = 0.3


class EncoderBlock(nn.Module):
    def __init__(self, d: int, n_heads: int, ffn: int, rng):
        self.ln1 = nn.LayerNorm(d)
        self.attn = nn.MultiHeadAttention(d, d, d, n_heads, rng, std=1.0 / np.sqrt(d))
        self.ln2 = nn.LayerNorm(d)
        self.ffn = nn.FeedForward(d, ffn, rng, std=1.0 / np.sqrt(d))

    def forward(self, x: Tensor, mask) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, mask)
        return x + self.ffn(self.ln2(x))


class VideoEncoder(nn.Module):
    """Micro video transformer standing in for the frozen foundation model.

    Temporal position embeddings are indexed by absolute frame number so the
    clip a token came from stays recoverable downstream.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        patch_dim = cfg.patch * cfg.patch * cfg.channels
        n_patches = (cfg.height // cfg.patch) * (cfg.width // cfg.patch)
        self.patch_embed = nn.Linear(patch_dim, cfg.d_v, rng, std=1.0 / np.sqrt(patch_dim))
        self.pos_space = Parameter(rng.normal(0.0, cfg.pos_std, (n_patches, cfg.d_v)))
        self.pos_time = Parameter(rng.normal(0.0, cfg.pos_std, (cfg.max_frames, cfg.d_v)))
        self.cls = Parameter(rng.normal(0.0, cfg.pos_std, (1, cfg.d_v)))
        self.blocks = [EncoderBlock(cfg.d_v, cfg.n_heads, cfg.ffn_mult * cfg.d_v, rng) for _ in range(cfg.n_layers)]
        self.ln_f = nn.LayerNorm(cfg.d_v)

    @property
    def n_patches(self) -> int:
        return (self.cfg.height // self.cfg.patch) * (self.cfg.width // self.cfg.patch)

    def _clip_tokens(self, clip: np.ndarray, frame_ids) -> Tensor:
        cfg = self.cfg
        f = clip.shape[0]
        if clip.shape[1:] != (cfg.height, cfg.width, cfg.channels):
            raise T.ShapeError(f"clip frames {clip.shape[1:]} do not match encoder {cfg.height, cfg.width, cfg.channels}")
        if max(frame_ids) >= cfg.max_frames:
            raise T.ShapeError(f"frame index {max(frame_ids)} exceeds max_frames={cfg.max_frames}")
        patches = np.concatenate([patchify(fr, cfg.patch) for fr in clip])
        x = self.patch_embed(Tensor(patches))
        space = T.take_rows(self.pos_space, np.tile(np.arange(self.n_patches), f))
        time = T.take_rows(self.pos_time, np.repeat(np.asarray(frame_ids), self.n_patches))
        return T.concat_rows([self.cls, x + space + time])

    def encode_clips(self, clips, frame_ids_list):
        """Encode several clips in one packed pass.

        Returns ``(cls [N x D_v], patch_states)`` where ``patch_states[i]`` is the
        [F*Np x D_v] final-block output of clip ``i`` (after the final norm).
        """
        seqs = [self._clip_tokens(c, ids) for c, ids in zip(clips, frame_ids_list)]
        sizes = [s.shape[0] for s in seqs]
        x = T.concat_rows(seqs)
        mask = nn.block_mask(sizes, sizes)
        for blk in self.blocks:
            x = blk(x, mask)
        x = self.ln_f(x)
        offsets = np.cumsum([0] + sizes)
        cls_rows = offsets[:-1]
        cls = T.take_rows(x, cls_rows)
        states = [x.data[offsets[i] + 1:offsets[i + 1]] for i in range(len(seqs))]
        return cls, states

    def encode_clip(self, clip: np.ndarray, frame_ids=None) -> Tensor:
        """Final [CLS] state [D_v] of a single clip."""
        ids = list(range(clip.shape[0])) if frame_ids is None else list(frame_ids)
        cls, _ = self.encode_clips([clip], [ids])
        return T.reshape(cls, (self.cfg.d_v,))


def pool_mask(patch_states: np.ndarray, mask: np.ndarray, patch: int) -> np.ndarray:
    """Average the patch rows whose centre pixel lies in ``mask``.

    If no centre is covered, the patch with the largest overlap is used
    (lowest patch index on ties).
    """
    h, w = mask.shape
    centers = patch_centers(h, w, patch)
    members = [i for i, (r, c) in enumerate(centers) if mask[r, c]]
    if not members:
        overlap = mask.reshape(h // patch, patch, w // patch, patch).sum(axis=(1, 3)).reshape(-1)
        members = [int(np.argmax(overlap))]
    return patch_states[members].mean(axis=0)


def _plan_lookup(plan: ClipPlan, frame_index: int) -> tuple:
    for ci, frames in enumerate(plan.clip_frames):
        if frame_index in frames:
            return ci, frames.index(frame_index)
    raise ValueError(f"frame {frame_index} is not sampled by any clip")


def perceive(video: Video, masks, encoder: VideoEncoder, plan: ClipPlan) -> VisionTokens:
    """Global and object tokens from one packed encoder pass over all clips."""
    clips = split_clips(video, plan)
    with T.no_grad():
        cls, states = encoder.encode_clips(clips, plan.clip_frames)
    np_ = encoder.n_patches
    rows = []
    for m in masks:
        ci, fi = _plan_lookup(plan, m.frame_index)
        rows.append(pool_mask(states[ci][fi * np_:(fi + 1) * np_], m.mask, plan.patch_size))
    objects = Tensor(np.array(rows).reshape(len(rows), encoder.cfg.d_v))
    return VisionTokens(Tensor(cls.data), objects)


def extract_object_tokens(video: Video, masks, encoder: VideoEncoder, plan: ClipPlan) -> Tensor:
    return perceive(video, masks, encoder, plan).objects


def encode_global(video: Video, encoder: VideoEncoder, plan: ClipPlan) -> Tensor:
    return perceive(video, [], encoder, plan).global_tokens


def synthetic_mask_oracle(world_state, keyframe_index: int, height: int = 32, width: int = 32) -> list:
    """Exact masks standing in for a promptable segmenter.

    ``world_state`` is a trajectory (list of per-frame entity lists). Pixels
    covered by several shapes belong to the topmost (last drawn) one; shapes
    with no visible pixel produce no mask.
    """
    from .synth.render import owner_map

    if not world_state:
        return []
    entities = world_state[keyframe_index]
    owner = owner_map(entities, height, width)
    out = []
    for e in entities:
        px = owner == e.id
        if px.any():
            out.append(ObjectMask(keyframe_index, px, e.id))
    return out


def segment_by_color(frame: np.ndarray, frame_index: int) -> list:
    """Masks from a rendered frame by exact palette colour.

    Each micro-world entity has a unique colour, so on synthetic frames this
    reproduces :func:`synthetic_mask_oracle` without the world state.
    """
    from .synth.world import COLORS

    out = []
    for idx, rgb in enumerate(COLORS.values()):
        if frame.shape[-1] == 3:
            px = np.all(frame == np.asarray(rgb), axis=-1)
        else:
            px = frame[..., 0] == np.mean(rgb)
        if px.any():
            out.append(ObjectMask(frame_index, px, idx))
    return out


def keyframe_masks(video: Video, plan: ClipPlan) -> list:
    masks = []
    for k in plan.keyframe_indices:
        masks.extend(segment_by_color(video.frames.data[k], k))
    return masks
