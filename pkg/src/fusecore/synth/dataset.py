"""Samples, multiple-choice items and the on-disk dataset layout.

Every file starts with one JSON header line followed by one JSON record per
line. Videos live next to the records as ``videos/<seed>.fvid``:

    bytes 0-3    b"FVID"
    bytes 4-19   T, H, W, C as little-endian u32
    bytes 20-    T*H*W*C float64 values, little-endian, C order
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..reasoner.prompts import load_template
from .narrate import caption, caption_from, describe, narrate
from .render import render
from .vocab import MCQ_QUESTION
from .world import COLORS, DIRECTIONS, SHAPES, WorldConfig, simulate

FVID_MAGIC = b"FVID"
DATASET_FORMAT = "fusecore-dataset"
DATASET_VERSION = 1
SPLIT_FILES = {"train": ("stage1", "stage2"), "val": ("val",), "test": ("eval",), "lm_corpus": ("lm_corpus",)}
N_OPTIONS = 4


class SplitOverlapError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


def task_for_seed(seed: int) -> str:
    return "reasoning" if seed % 2 == 0 else "prediction"


def corpus_task(seed: int) -> str:
    """Pretraining records cycle through all three tasks."""
    return ("caption", "reasoning", "prediction")[seed % 3]


@dataclass
class MCQ:
    question: str
    options: list
    answer: int

    def to_dict(self) -> dict:
        return {"question": self.question, "options": list(self.options), "answer": self.answer}


@dataclass
class Sample:
    seed: int
    video: np.ndarray  # [T x H x W x C]
    masks: dict  # keyframe index -> list of ObjectMask
    caption: str
    explanation: str
    prediction: str
    mcq: MCQ

    @property
    def task(self) -> str:
        return task_for_seed(self.seed)

    @property
    def response(self) -> str:
        return self.text_for(self.task)

    def text_for(self, task: str) -> str:
        return {"caption": self.caption, "reasoning": self.explanation, "prediction": self.prediction}[task]


def _perturbations(descs: list, moving: bool) -> list:
    """Captions that differ from the truth in exactly one fact of one entity."""
    used = {d.color for d in descs}
    out = []
    for i, d in enumerate(descs):
        variants = [dataclasses.replace(d, color=c) for c in COLORS if c not in used]
        variants += [dataclasses.replace(d, shape=s) for s in SHAPES if s != d.shape]
        for state in ("still",) + tuple(DIRECTIONS):
            if state == d.first:
                continue
            last = state if d.last == d.first else d.last
            variants.append(dataclasses.replace(d, first=state, last=last))
        for v in variants:
            if not moving and v.first == "still":
                # any all-still caption would also be true of a static scene
                continue
            out.append(caption_from(descs[:i] + [v] + descs[i + 1:]))
    return out


def make_mcq(seed: int, log) -> MCQ:
    """Four caption options; three distractors perturb one fact each.

    The answer slot comes from a per-block permutation of ``0..3`` so that
    every aligned run of four seeds uses each slot exactly once.
    """
    truth = caption(log)
    descs = describe(log)
    cands = sorted(set(_perturbations(descs, bool(log.events))) - {truth})
    rng = np.random.default_rng([seed, 7])
    picks = [cands[i] for i in rng.choice(len(cands), size=N_OPTIONS - 1, replace=False)]
    block = np.random.default_rng([seed // N_OPTIONS, 11]).permutation(N_OPTIONS)
    answer = int(block[seed % N_OPTIONS])
    options = picks[:answer] + [truth] + picks[answer:]
    return MCQ(MCQ_QUESTION, options, answer)


def make_sample(seed: int, world: WorldConfig = WorldConfig(), height: int = 32, width: int = 32,
                channels: int = 3, keyframes=()) -> Sample:
    if world.grid != height or world.grid != width:
        raise ValueError(f"world grid {world.grid} does not fit frames {height}x{width}")
    trajectory, log = simulate(seed, world.steps, world)
    frames, masks = render(trajectory, height, width, channels, keyframes)
    cap, expl, pred = narrate(log)
    return Sample(seed, frames, masks, cap, expl, pred, make_mcq(seed, log))


def corpus_entry(seed: int, world: WorldConfig = WorldConfig()) -> tuple:
    """``(task, text)`` of one pretraining record."""
    _, log = simulate(seed, world.steps, world)
    task = corpus_task(seed)
    return task, dict(zip(("caption", "reasoning", "prediction"), narrate(log)))[task]


# -- FVID ----------------------------------------------------------------------

def write_fvid(path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f8")
    if frames.ndim != 4:
        raise ValueError(f"video must be 4-D, got shape {frames.shape}")
    payload = FVID_MAGIC + struct.pack("<4I", *frames.shape) + frames.tobytes()
    atomic_write(path, payload)


def read_fvid(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FVID_MAGIC:
        raise DatasetFormatError(f"{path}: not an FVID file")
    dims = struct.unpack("<4I", data[4:20])
    n = int(np.prod(dims))
    if len(data) != 20 + 8 * n:
        raise DatasetFormatError(f"{path}: payload size does not match dims {dims}")
    return np.frombuffer(data, dtype="<f8", offset=20).reshape(dims).astype(np.float64)


def atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- dataset files -------------------------------------------------------------

def check_splits(splits: dict) -> None:
    """Reject unknown split names, negative sizes and overlapping seed ranges."""
    ranges = []
    for name, rng in splits.items():
        if name not in SPLIT_FILES:
            raise ValueError(f"unknown split {name!r}")
        start, count = int(rng[0]), int(rng[1])
        if start < 0 or count < 0:
            raise ValueError(f"split {name!r} has a negative start or count")
        ranges.append((start, start + count, name))
    ranges.sort()
    for (a0, a1, an), (b0, b1, bn) in zip(ranges, ranges[1:]):
        if b0 < a1 and a1 > a0 and b1 > b0:
            raise SplitOverlapError(f"seed ranges of {an!r} [{a0}, {a1}) and {bn!r} [{b0}, {b1}) overlap")


def vocab_digest(vocab) -> str:
    return hashlib.sha256("\n".join(vocab.tokens).encode("utf-8")).hexdigest()


def _line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _record(s: Sample, kind: str) -> dict:
    if kind == "stage1":
        instruction, response = load_template("caption").text, s.caption
    else:
        instruction, response = load_template(s.task).text, s.response
    rec = {"seed": s.seed, "video_path": f"videos/{s.seed}.fvid", "caption": s.caption,
           "instruction": instruction, "response": response, "mcq": s.mcq.to_dict()}
    if kind != "stage1":
        rec["task"] = s.task
    return rec


def emit_dataset(out_dir, splits: dict, world: WorldConfig, height: int, width: int, channels: int,
                 vocab, force: bool = False) -> list:
    """Write every split under ``out_dir``; returns the written file paths.

    Seed ranges are validated before anything touches the disk. Each file is
    written to a temporary name and renamed into place.
    """
    check_splits(splits)
    out = Path(out_dir)
    targets = [out / f"{kind}.jsonl" for name in splits for kind in SPLIT_FILES[name]]
    if not force:
        existing = [str(p) for p in targets if p.exists()]
        if existing:
            raise FileExistsError(f"refusing to overwrite {existing} (use --force)")
    (out / "videos").mkdir(parents=True, exist_ok=True)
    digest = vocab_digest(vocab)
    written = []
    for name, (start, count) in splits.items():
        seeds = range(int(start), int(start) + int(count))
        for kind in SPLIT_FILES[name]:
            header = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "kind": kind, "split": name,
                      "seeds": [int(start), int(count)], "count": int(count), "vocab_sha256": digest,
                      "world": dataclasses.asdict(world), "frame": [world.steps, height, width, channels]}
            lines = [_line(header)]
            if kind == "lm_corpus":
                # videos are re-rendered from the seed when needed
                lines += [_line(dict(zip(("seed", "task", "text"), (s,) + corpus_entry(s, world)))) for s in seeds]
            else:
                for s in seeds:
                    sample = make_sample(s, world, height, width, channels)
                    vpath = out / "videos" / f"{s}.fvid"
                    if kind != "stage2":  # stage2 reuses the stage1 videos
                        write_fvid(vpath, sample.video)
                    lines.append(_line(_record(sample, kind)))
            path = out / f"{kind}.jsonl"
            atomic_write(path, "".join(lines).encode("utf-8"))
            written.append(path)
    return written


def read_dataset(path) -> tuple:
    """Return ``(header, records)`` for one dataset file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file {path} not found")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: missing header")
    header = json.loads(lines[0])
    if header.get("format") != DATASET_FORMAT or header.get("version") != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: unsupported header {header}")
    records = [json.loads(x) for x in lines[1:] if x]
    if len(records) != header["count"]:
        raise DatasetFormatError(f"{path}: header count {header['count']} != {len(records)} records")
    return header, records


def load_video(dataset_path, record: dict) -> np.ndarray:
    return read_fvid(Path(dataset_path).parent / record["video_path"])
