"""Deterministic grid-house simulator for fetch-and-place goals.

The house is a graph of rooms. Objects live in exactly one place at a
time: loose in a room, inside a container, on a surface, or in an
agent's hands. Agents act in lockstep; :func:`step` resolves all submitted
actions in ascending agent id order, so earlier agents win conflicts.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Any, Iterable, Mapping, NamedTuple, Union

import numpy as np

__all__ = [
    "ConfigError",
    "UnknownAgent",
    "DuplicateAgent",
    "GoalPredicate",
    "HouseLayout",
    "Place",
    "AgentBody",
    "WorldState",
    "MoveTo",
    "Open",
    "Close",
    "Grab",
    "PutOn",
    "PutIn",
    "Idle",
    "PrimitiveAction",
    "ActionOutcome",
    "Observation",
    "GoalProgress",
    "default_world_config",
    "init_world",
    "observe",
    "step",
    "goal_progress",
    "drop_agent",
    "add_agent",
    "world_digest",
    "action_to_dict",
]

HAND_CAPACITY = 2


class ConfigError(ValueError):
    """Invalid world or scenario configuration.

    ``pointer`` is a JSON pointer to the offending field.
    """

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer
        self.message = message


class UnknownAgent(KeyError):
    pass


class DuplicateAgent(ValueError):
    pass


@dataclass(frozen=True)
class GoalPredicate:
    """``count`` objects of ``object_kind`` on ``surface``."""

    object_kind: str
    surface: str
    count: int = 1
    kind: str = "OnSurface"

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("goal count must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "object_kind": self.object_kind,
                "surface": self.surface, "count": self.count}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GoalPredicate":
        return cls(object_kind=d["object_kind"], surface=d["surface"],
                   count=int(d.get("count", 1)), kind=d.get("kind", "OnSurface"))

    def __str__(self) -> str:
        return f"{self.count} {self.object_kind} ON {self.surface}"


class Place(NamedTuple):
    """Where an object is. ``type`` is room, container, surface or agent."""

    type: str
    ref: Union[str, int]


@dataclass(frozen=True)
class HouseLayout:
    """Static house structure: rooms, adjacency and fixture placement."""

    rooms: tuple
    adjacency: Mapping[str, tuple]
    container_rooms: Mapping[str, str]
    surface_rooms: Mapping[str, str]
    spawn_room: str
    _dist: dict = field(default=None, repr=False, compare=False)
    _hop: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        dist: dict = {}
        hop: dict = {}
        for src in self.rooms:
            # BFS from src; the first hop of each path is inherited from the
            # parent, neighbours visited in declaration order.
            d = {src: 0}
            first: dict = {src: src}
            queue = deque([src])
            while queue:
                r = queue.popleft()
                for n in self.adjacency[r]:
                    if n not in d:
                        d[n] = d[r] + 1
                        first[n] = n if r == src else first[r]
                        queue.append(n)
            for dst in self.rooms:
                dist[src, dst] = d.get(dst)
                hop[src, dst] = first.get(dst)
        object.__setattr__(self, "_dist", dist)
        object.__setattr__(self, "_hop", hop)

    def distance(self, a: str, b: str) -> int:
        return self._dist[a, b]

    def next_hop(self, a: str, b: str) -> str:
        return self._hop[a, b]

    def is_connected(self) -> bool:
        return all(v is not None for v in self._dist.values())

    def room_index(self, room: str) -> int:
        return self.rooms.index(room)

    def place_room(self, place: Place) -> str | None:
        if place.type == "room":
            return place.ref
        if place.type == "container":
            return self.container_rooms[place.ref]
        if place.type == "surface":
            return self.surface_rooms[place.ref]
        return None

    def containers_in(self, room: str) -> list[str]:
        return [c for c, r in self.container_rooms.items() if r == room]

    def surfaces_in(self, room: str) -> list[str]:
        return [s for s, r in self.surface_rooms.items() if r == room]


@dataclass(frozen=True)
class AgentBody:
    room: str
    carrying: tuple = ()


@dataclass
class WorldState:
    layout: HouseLayout
    tick: int
    kinds: dict            # object id -> kind
    where: dict            # object id -> Place
    open: dict             # container id -> bool
    agents_env: dict       # agent id -> AgentBody
    rng_seed: int = 0
    rng_state: dict = field(default_factory=dict)
    dropped: frozenset = frozenset()

    def copy(self) -> "WorldState":
        return replace(self, where=dict(self.where), open=dict(self.open),
                       agents_env=dict(self.agents_env))

    @property
    def containers(self) -> dict:
        return {c: (room, self.open[c], self.contents(Place("container", c)))
                for c, room in self.layout.container_rooms.items()}

    @property
    def surfaces(self) -> dict:
        return {s: (room, self.contents(Place("surface", s)))
                for s, room in self.layout.surface_rooms.items()}

    @property
    def loose_objects(self) -> dict:
        return {o: (self.kinds[o], p.ref) for o, p in self.where.items() if p.type == "room"}

    def contents(self, place: Place) -> list[str]:
        return [o for o, p in self.where.items() if p == place]

    def object_room(self, obj: str) -> str:
        p = self.where[obj]
        if p.type == "agent":
            return self.agents_env[p.ref].room
        return self.layout.place_room(p)

    def visible_in(self, obj: str, room: str) -> bool:
        p = self.where[obj]
        if p.type == "room":
            return p.ref == room
        if p.type == "surface":
            return self.layout.surface_rooms[p.ref] == room
        if p.type == "container":
            return self.layout.container_rooms[p.ref] == room and self.open[p.ref]
        return False


# -- actions ------------------------------------------------------------------

@dataclass(frozen=True)
class MoveTo:
    room: str


@dataclass(frozen=True)
class Open:
    container: str


@dataclass(frozen=True)
class Close:
    container: str


@dataclass(frozen=True)
class Grab:
    obj: str


@dataclass(frozen=True)
class PutOn:
    obj: str
    surface: str


@dataclass(frozen=True)
class PutIn:
    obj: str
    container: str


@dataclass(frozen=True)
class Idle:
    pass


PrimitiveAction = Union[MoveTo, Open, Close, Grab, PutOn, PutIn, Idle]

_ACTION_TYPES = {cls.__name__: cls for cls in (MoveTo, Open, Close, Grab, PutOn, PutIn, Idle)}


def action_to_dict(action: PrimitiveAction) -> dict[str, Any]:
    d = {"type": type(action).__name__}
    d.update(action.__dict__)
    return d


def action_from_dict(d: Mapping[str, Any]) -> PrimitiveAction:
    d = dict(d)
    return _ACTION_TYPES[d.pop("type")](**d)


@dataclass(frozen=True)
class ActionOutcome:
    agent: int
    action: PrimitiveAction
    success: bool
    reason: str | None = None

    def __post_init__(self) -> None:
        if not self.success and self.reason is None:
            raise ValueError("failed outcome needs a reason")

    def to_dict(self) -> dict[str, Any]:
        return {"action": action_to_dict(self.action), "success": self.success,
                "reason": self.reason}


@dataclass(frozen=True)
class Observation:
    """What an agent perceives: only its current room."""

    tick: int
    room: str
    visible_objects: tuple = ()      # (object id, kind, Place)
    visible_containers: tuple = ()   # (container id, open)
    visible_surfaces: tuple = ()
    co_located_agents: tuple = ()
    carrying: tuple = ()             # (object id, kind) in own hands


# -- construction -------------------------------------------------------------

def default_world_config() -> dict[str, Any]:
    """The default four-room house (kitchen, livingroom, bedroom, bathroom)."""
    text = resources.files("drama").joinpath("data/house_cwah.json").read_text()
    return json.loads(text)


def _place_of(ref: str, layout: HouseLayout, pointer: str) -> Place:
    if ref in layout.container_rooms:
        return Place("container", ref)
    if ref in layout.surface_rooms:
        return Place("surface", ref)
    if ref in layout.adjacency:
        return Place("room", ref)
    raise ConfigError(pointer, f"unknown place {ref!r}")


def _layout_from_config(config: Mapping[str, Any]) -> HouseLayout:
    rooms_cfg = config.get("rooms")
    if not isinstance(rooms_cfg, list) or not rooms_cfg:
        raise ConfigError("/rooms", "at least one room is required")
    rooms: list[str] = []
    adj: dict[str, list[str]] = {}
    for i, r in enumerate(rooms_cfg):
        rid = r.get("id") if isinstance(r, Mapping) else None
        if not isinstance(rid, str):
            raise ConfigError(f"/rooms/{i}/id", "room id must be a string")
        if rid in adj:
            raise ConfigError(f"/rooms/{i}/id", f"duplicate room {rid!r}")
        rooms.append(rid)
        adj[rid] = []
    for i, r in enumerate(rooms_cfg):
        for j, n in enumerate(r.get("adjacent", [])):
            if n not in adj:
                raise ConfigError(f"/rooms/{i}/adjacent/{j}", f"unknown room {n!r}")
            # adjacency is undirected
            if n not in adj[r["id"]]:
                adj[r["id"]].append(n)
            if r["id"] not in adj[n]:
                adj[n].append(r["id"])
    order = {r: i for i, r in enumerate(rooms)}
    adjacency = {r: tuple(sorted(ns, key=order.__getitem__)) for r, ns in adj.items()}

    fixtures: dict[str, dict[str, str]] = {"containers": {}, "surfaces": {}}
    for section in ("containers", "surfaces"):
        for i, c in enumerate(config.get(section, [])):
            cid, room = c.get("id"), c.get("room")
            if not isinstance(cid, str):
                raise ConfigError(f"/{section}/{i}/id", "id must be a string")
            if cid in adj or cid in fixtures["containers"] or cid in fixtures["surfaces"]:
                raise ConfigError(f"/{section}/{i}/id", f"duplicate place id {cid!r}")
            if room not in adj:
                raise ConfigError(f"/{section}/{i}/room", f"unknown room {room!r}")
            fixtures[section][cid] = room

    spawn = config.get("spawn_room", rooms[0])
    if spawn not in adj:
        raise ConfigError("/spawn_room", f"unknown room {spawn!r}")
    layout = HouseLayout(rooms=tuple(rooms), adjacency=adjacency,
                         container_rooms=fixtures["containers"],
                         surface_rooms=fixtures["surfaces"], spawn_room=spawn)
    if not layout.is_connected():
        raise ConfigError("/rooms", "room graph is not connected")
    return layout


def init_world(config: Mapping[str, Any], seed: int = 0) -> WorldState:
    """Build a world from a config mapping.

    An object's ``location`` may be a single place id or a list of
    candidate places; with a list, the seed picks one uniformly. Objects
    may instead be listed in a container's or surface's ``contents``.
    """
    if not 0 <= seed < 2**64:
        raise ConfigError("/seed", "seed must be an unsigned 64-bit integer")
    layout = _layout_from_config(config)
    rng = np.random.default_rng(seed)

    kinds: dict[str, str] = {}
    where: dict[str, Place] = {}
    for i, o in enumerate(config.get("objects", [])):
        oid, kind = o.get("id"), o.get("kind")
        if not isinstance(oid, str) or not isinstance(kind, str):
            raise ConfigError(f"/objects/{i}", "object needs string id and kind")
        if oid in kinds:
            raise ConfigError(f"/objects/{i}/id", f"duplicate object {oid!r}")
        kinds[oid] = kind
        loc = o.get("location")
        if loc is None:
            continue
        if isinstance(loc, list):
            if not loc:
                raise ConfigError(f"/objects/{i}/location", "empty candidate list")
            for j, ref in enumerate(loc):
                _place_of(ref, layout, f"/objects/{i}/location/{j}")
            loc = loc[int(rng.integers(len(loc)))]
        where[oid] = _place_of(loc, layout, f"/objects/{i}/location")

    for section, ptype in (("containers", "container"), ("surfaces", "surface")):
        for i, c in enumerate(config.get(section, [])):
            for j, oid in enumerate(c.get("contents", [])):
                pointer = f"/{section}/{i}/contents/{j}"
                if oid not in kinds:
                    raise ConfigError(pointer, f"unknown object {oid!r}")
                if oid in where:
                    raise ConfigError(pointer, f"object {oid!r} placed twice")
                where[oid] = Place(ptype, c["id"])

    for i, oid in enumerate(kinds):
        if oid not in where:
            raise ConfigError(f"/objects/{i}/location", f"object {oid!r} has no location")
    # declaration order, not placement order
    where = {oid: where[oid] for oid in kinds}

    opened = {c["id"]: bool(c.get("open", False)) for c in config.get("containers", [])}
    return WorldState(layout=layout, tick=0, kinds=kinds, where=where, open=opened,
                      agents_env={}, rng_seed=seed, rng_state=rng.bit_generator.state)


def world_digest(world: WorldState) -> str:
    """sha256 over object kinds and placements."""
    payload = [[o, world.kinds[o], p.type, p.ref] for o, p in world.where.items()]
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def add_agent(world: WorldState, agent: int, room: str | None = None,
              tick: int | None = None) -> WorldState:
    if agent in world.agents_env or agent in world.dropped:
        raise DuplicateAgent(agent)
    room = room or world.layout.spawn_room
    if room not in world.layout.adjacency:
        raise ConfigError("/spawn_room", f"unknown room {room!r}")
    w = world.copy()
    w.agents_env[agent] = AgentBody(room=room)
    return w


def drop_agent(world: WorldState, agent: int, tick: int | None = None) -> WorldState:
    """Remove an agent silently; whatever it carried falls loose in its room."""
    if agent not in world.agents_env:
        raise UnknownAgent(agent)
    w = world.copy()
    body = w.agents_env.pop(agent)
    for o in body.carrying:
        w.where[o] = Place("room", body.room)
    w.dropped = world.dropped | {agent}
    return w


# -- dynamics -----------------------------------------------------------------

def observe(world: WorldState, agent: int) -> Observation:
    if agent not in world.agents_env:
        raise UnknownAgent(agent)
    room = world.agents_env[agent].room
    layout = world.layout
    visible = tuple((o, world.kinds[o], p) for o, p in world.where.items()
                    if p.type != "agent" and world.visible_in(o, room))
    return Observation(
        tick=world.tick,
        room=room,
        visible_objects=visible,
        visible_containers=tuple((c, world.open[c]) for c in layout.containers_in(room)),
        visible_surfaces=tuple(layout.surfaces_in(room)),
        co_located_agents=tuple(a for a, b in world.agents_env.items()
                                if a != agent and b.room == room),
        carrying=tuple((o, world.kinds[o]) for o in world.agents_env[agent].carrying),
    )


def step(world: WorldState, actions: Mapping[int, PrimitiveAction]) -> tuple[WorldState, dict]:
    """Advance one tick. Returns the new world and an outcome per acting agent."""
    for a in actions:
        if a not in world.agents_env:
            raise UnknownAgent(a)
    w = world.copy()
    layout = w.layout
    grabbed: set[str] = set()
    outcomes: dict[int, ActionOutcome] = {}

    def fail(a: int, act: PrimitiveAction, reason: str) -> None:
        outcomes[a] = ActionOutcome(a, act, False, reason)

    for a in sorted(actions):
        act = actions[a]
        body = w.agents_env[a]
        room = body.room
        if isinstance(act, Idle):
            pass
        elif isinstance(act, MoveTo):
            if act.room not in layout.adjacency:
                fail(a, act, "invalid_target")
                continue
            if act.room != room:
                w.agents_env[a] = replace(body, room=layout.next_hop(room, act.room))
        elif isinstance(act, (Open, Close)):
            c = act.container
            if c not in layout.container_rooms:
                fail(a, act, "invalid_target")
                continue
            if layout.container_rooms[c] != room:
                fail(a, act, "not_colocated")
                continue
            w.open[c] = isinstance(act, Open)
        elif isinstance(act, Grab):
            o = act.obj
            if o not in w.kinds:
                fail(a, act, "invalid_target")
                continue
            if o in grabbed:
                fail(a, act, "contended")
                continue
            if not w.visible_in(o, room):
                fail(a, act, "not_visible")
                continue
            if len(body.carrying) >= HAND_CAPACITY:
                fail(a, act, "hands_full")
                continue
            grabbed.add(o)
            w.where[o] = Place("agent", a)
            w.agents_env[a] = replace(body, carrying=body.carrying + (o,))
        elif isinstance(act, (PutOn, PutIn)):
            o = act.obj
            if isinstance(act, PutOn):
                target, rooms, ptype = act.surface, layout.surface_rooms, "surface"
            else:
                target, rooms, ptype = act.container, layout.container_rooms, "container"
            if o not in w.kinds or target not in rooms:
                fail(a, act, "invalid_target")
                continue
            if o not in body.carrying:
                fail(a, act, "not_carrying")
                continue
            if rooms[target] != room:
                fail(a, act, "not_colocated")
                continue
            if ptype == "container" and not w.open[target]:
                fail(a, act, "closed")
                continue
            w.where[o] = Place(ptype, target)
            w.agents_env[a] = replace(body, carrying=tuple(x for x in body.carrying if x != o))
        else:
            fail(a, act, "invalid_target")
            continue
        outcomes[a] = ActionOutcome(a, act, True)

    w.tick = world.tick + 1
    return w, outcomes


@dataclass(frozen=True)
class GoalProgress:
    units: tuple
    fractions: tuple
    all_done: bool


def goal_progress(world: WorldState, goals: Iterable[GoalPredicate]) -> GoalProgress:
    goals = list(goals)
    units = []
    for g in goals:
        on = sum(1 for o, p in world.where.items()
                 if p == ("surface", g.surface) and world.kinds[o] == g.object_kind)
        units.append(min(on, g.count))
    fractions = tuple(u / g.count for u, g in zip(units, goals))
    return GoalProgress(tuple(units), fractions, all(f == 1.0 for f in fractions))
