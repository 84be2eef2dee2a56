"""Rule grammar turning an :class:`EventLog` into caption, explanation and
prediction text. Phrasing is deliberately rigid."""
from __future__ import annotations

from dataclasses import dataclass

from .world import DIRECTIONS, Entity, EventLog, boxes_overlap, direction_name

HORIZON = 4
CONFIDENCE = {"keep": "high", "wall": "medium", "entity": "low"}
STILL = "the scene stays still"
_ORDER = ("high", "medium", "low")


@dataclass(frozen=True)
class Descriptor:
    """First/last state of one entity, the unit captions are built from."""

    color: str
    shape: str
    first: str  # a direction name or "still"
    last: str

    @property
    def name(self) -> str:
        return f"{self.color} {self.shape}"


def _state(e: Entity) -> str:
    return direction_name(e.vel) or "still"


def describe(log: EventLog) -> list:
    final = {e.id: e for e in log.final}
    return [Descriptor(e.color, e.shape, _state(e), _state(final[e.id])) for e in log.initial]


def caption_clause(d: Descriptor) -> str:
    first = "stays still" if d.first == "still" else f"moves {d.first}"
    if d.last == d.first:
        return f"the {d.name} {first}"
    last = "stops" if d.last == "still" else f"moves {d.last}"
    return f"the {d.name} {first} then {last}"


def caption_from(descriptors) -> str:
    if not descriptors:
        return "nothing moves"
    return " and ".join(caption_clause(d) for d in descriptors)


def explain(log: EventLog) -> str:
    names = {e.id: e.name for e in log.initial}
    clauses = []
    for ev in log.causal():
        if ev.kind == "bounce":
            clauses.append(f"the {names[ev.participants[0]]} hit the wall, so it turned {ev.direction}")
        elif ev.kind == "collide":
            a, b = ev.participants
            clauses.append(f"the {names[a]} hit the {names[b]}, so both stopped")
        else:
            a, b = ev.participants
            clauses.append(f"the {names[a]} hit the {names[b]}, so the {names[b]} moved {ev.direction}")
    if not clauses:
        return "no events occurred"
    return ", then ".join(clauses)


def _outlook(e: Entity, others, grid: int) -> tuple:
    dr, dc = e.vel
    for k in range(1, HORIZON + 1):
        box = e.box(e.row + k * dr, e.col + k * dc)
        if box[0] < 0 or box[1] < 0 or box[2] >= grid or box[3] >= grid:
            return "wall", f"the {e.name} will hit the wall"
        for o in others:
            if boxes_overlap(box, o.box()):
                return "entity", f"the {e.name} will hit the {o.name}"
    return "keep", f"the {e.name} keeps moving {direction_name(e.vel)}"


def predict(log: EventLog) -> str:
    kinds, clauses = [], []
    for e in log.final:
        if not e.moving:
            continue
        others = [o for o in log.final if o.id != e.id]
        kind, text = _outlook(e, others, log.grid)
        kinds.append(kind)
        clauses.append(text)
    if not clauses:
        return STILL
    word = max((CONFIDENCE[k] for k in kinds), key=_ORDER.index)
    return f"{' and '.join(clauses)}, confidence {word}"


def caption(log: EventLog) -> str:
    """A scene where nothing ever moves has an empty log and one fixed caption."""
    return caption_from(describe(log) if log.events else [])


def narrate(log: EventLog) -> tuple:
    """Return ``(caption, explanation, prediction)``."""
    return caption(log), explain(log), predict(log)


MOTION_STATES = ("still",) + tuple(DIRECTIONS)
