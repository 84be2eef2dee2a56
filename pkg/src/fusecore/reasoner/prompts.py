"""Task prompt templates, stored as plain-text assets next to this module."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

TASKS = ("reasoning", "prediction", "caption")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str


@lru_cache(maxsize=None)
def load_template(name: str) -> PromptTemplate:
    if name not in TASKS:
        raise KeyError(f"unknown task {name!r}; expected one of {TASKS}")
    text = resources.files("fusecore.reasoner").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")
    return PromptTemplate(name, text)


def all_templates() -> list:
    return [load_template(n) for n in TASKS]
