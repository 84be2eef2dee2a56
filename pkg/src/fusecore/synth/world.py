"""Deterministic shape-physics micro-world.

Entities are axis-aligned sprites on a square pixel grid moving one pixel per
step along a single axis. Rules, applied once per step:

* walls: an entity whose leading edge touches a wall reverses (``bounce``);
* two moving entities whose next boxes overlap both stop (``collide``);
* a moving entity running into a static one stops and hands its velocity to
  the static one (``push``).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "purple": (1.0, 0.0, 1.0),
    "cyan": (0.0, 1.0, 1.0),
}
SHAPES = ("square", "circle", "triangle")
DIRECTIONS = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}
EVENT_KINDS = ("move", "bounce", "collide", "push", "stop")


def direction_name(vel) -> str | None:
    for name, v in DIRECTIONS.items():
        if tuple(vel) == v:
            return name
    return None


@dataclass
class Entity:
    id: int
    shape: str
    color: str
    row: int
    col: int
    vel: tuple = (0, 0)
    size: int = 6

    @property
    def moving(self) -> bool:
        return self.vel != (0, 0)

    @property
    def name(self) -> str:
        return f"{self.color} {self.shape}"

    def box(self, row=None, col=None) -> tuple:
        r = self.row if row is None else row
        c = self.col if col is None else col
        return (r, c, r + self.size - 1, c + self.size - 1)


def boxes_overlap(a, b) -> bool:
    return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])


@dataclass
class Event:
    time: int
    kind: str
    participants: tuple
    direction: str | None = None


@dataclass
class EventLog:
    """Events plus the first and last entity states they refer to."""

    events: list = field(default_factory=list)
    initial: list = field(default_factory=list)
    final: list = field(default_factory=list)
    grid: int = 32

    def __len__(self) -> int:
        return len(self.events)

    def causal(self) -> list:
        return [e for e in self.events if e.kind in ("bounce", "collide", "push")]


@dataclass(frozen=True)
class WorldConfig:
    grid: int = 32
    sprite: int = 6
    min_entities: int = 1
    max_entities: int = 3
    steps: int = 16
    p_moving: float = 0.75

    def __post_init__(self):
        if not 1 <= self.min_entities <= self.max_entities <= 4:
            raise ValueError("entity counts must satisfy 1 <= min <= max <= 4")
        if self.sprite > self.grid:
            raise ValueError("sprite larger than grid")


class MicroWorld:
    def __init__(self, grid: int, entities):
        self.grid = grid
        self.entities = [copy.copy(e) for e in entities]
        for e in self.entities:
            if not self.in_grid(e.box()):
                raise ValueError(f"entity {e.id} starts outside the grid")

    def in_grid(self, box) -> bool:
        return box[0] >= 0 and box[1] >= 0 and box[2] < self.grid and box[3] < self.grid

    def snapshot(self) -> list:
        return [copy.copy(e) for e in self.entities]

    def _walls(self, t: int, log: list) -> None:
        for e in self.entities:
            if not e.moving:
                continue
            dr, dc = e.vel
            if not self.in_grid(e.box(e.row + dr, e.col + dc)):
                e.vel = (-dr, -dc)
                log.append(Event(t, "bounce", (e.id,), direction_name(e.vel)))

    def step(self, t: int, log: list) -> None:
        ents = self.entities
        prop = {e.id: (e.row + e.vel[0], e.col + e.vel[1]) for e in ents}
        changed = True
        while changed:
            changed = False
            for i in range(len(ents)):
                for j in range(i + 1, len(ents)):
                    a, b = ents[i], ents[j]
                    if not boxes_overlap(a.box(*prop[a.id]), b.box(*prop[b.id])):
                        continue
                    a_moves = prop[a.id] != (a.row, a.col)
                    b_moves = prop[b.id] != (b.row, b.col)
                    if a_moves and b_moves:
                        a.vel = b.vel = (0, 0)
                        prop[a.id] = (a.row, a.col)
                        prop[b.id] = (b.row, b.col)
                        log.append(Event(t, "collide", (a.id, b.id)))
                        log.append(Event(t, "stop", (a.id,)))
                        log.append(Event(t, "stop", (b.id,)))
                    elif a_moves or b_moves:
                        mover, other = (a, b) if a_moves else (b, a)
                        other.vel = mover.vel
                        mover.vel = (0, 0)
                        prop[mover.id] = (mover.row, mover.col)
                        log.append(Event(t, "push", (mover.id, other.id), direction_name(other.vel)))
                        log.append(Event(t, "stop", (mover.id,)))
                    else:
                        continue
                    changed = True
        for e in ents:
            e.row, e.col = prop[e.id]
        self._walls(t, log)


def simulate_world(world: MicroWorld, steps: int):
    """Run ``steps`` frames (``steps - 1`` transitions). Returns
    ``(trajectory, EventLog)`` where ``trajectory[t]`` is the entity list at
    frame ``t``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    events: list = []
    initial = world.snapshot()
    for e in world.entities:
        if e.moving:
            events.append(Event(0, "move", (e.id,), direction_name(e.vel)))
    world._walls(0, events)
    trajectory = [world.snapshot()]
    for t in range(1, steps):
        world.step(t, events)
        trajectory.append(world.snapshot())
    log = EventLog(events=events, initial=initial, final=world.snapshot(), grid=world.grid)
    return trajectory, log


def random_world(seed: int, config: WorldConfig = WorldConfig()) -> MicroWorld:
    """Sample a non-overlapping starting layout from ``seed``."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(config.min_entities, config.max_entities + 1))
    colors = list(rng.permutation(list(COLORS))[:n])
    dirs = list(DIRECTIONS)
    ents: list = []
    limit = config.grid - config.sprite
    while len(ents) < n:
        i = len(ents)
        r, c = (int(v) for v in rng.integers(0, limit + 1, size=2))
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        vel = DIRECTIONS[dirs[int(rng.integers(4))]] if rng.random() < config.p_moving else (0, 0)
        cand = Entity(i, shape, str(colors[i]), r, c, vel, config.sprite)
        # keep a one-pixel gap so no pair starts in contact
        grown = (r - 1, c - 1, r + config.sprite, c + config.sprite)
        if any(boxes_overlap(grown, e.box()) for e in ents):
            continue
        ents.append(cand)
    # ids follow palette order, so which entity a caption clause refers to
    # can be read off its colour alone
    ents.sort(key=lambda e: list(COLORS).index(e.color))
    for i, e in enumerate(ents):
        e.id = i
    return MicroWorld(config.grid, ents)


def simulate(seed: int, steps: int, config: WorldConfig = WorldConfig()):
    return simulate_world(random_world(seed, config), steps)
