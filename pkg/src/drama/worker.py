"""Worker agents: memory, task decomposition and action selection.

A worker holds a set of assigned tasks and works on one of them at a
time. It keeps a two-tier memory: full records for the tasks it is
working on, a bounded ring of summaries for everything else. Each tick
it turns the head of its subgoal queue into one primitive action.

The rule-based policy here is deterministic. Any object with the same
``decompose`` / ``next_action`` / ``update_memory`` surface can replace it.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Protocol

from .bus import Directive, IntentionClaim
from .resources import LIVE, AgentLifecycle, TaskObject
from .sim import (ActionOutcome, Grab, HouseLayout, Idle, MoveTo, Observation, Open, Place,
                  PrimitiveAction, PutOn)

__all__ = [
    "MemoryRecord",
    "MemoryStore",
    "Subgoal",
    "StatusReport",
    "AgentView",
    "UnknownGoalKind",
    "RefuseOverload",
    "update_memory",
    "decompose",
    "next_action",
    "satisfied_units",
    "check_queue",
    "RulePolicy",
    "WorkerPolicy",
    "Worker",
]


class UnknownGoalKind(ValueError):
    pass


class RefuseOverload(RuntimeError):
    pass


# -- memory -------------------------------------------------------------------

@dataclass(frozen=True)
class MemoryRecord:
    tick: int
    kind: str
    key: str
    outcome: str


class MemoryStore:
    """Detailed records for focus tasks, a ring of summaries for the rest.

    ``index`` maps an object kind to ``{object id: (room, Place)}`` for every
    object the agent believes is lying somewhere it could be picked up.
    """

    def __init__(self, capacity: int = 32):
        self.capacity = capacity
        self.detailed: dict[int, list[MemoryRecord]] = {}
        self.summarized: deque[MemoryRecord] = deque()
        self.discarded_count = 0
        self.focus: dict[int, tuple[str, str]] = {}   # task -> (kind, goal surface)
        self.goal_surfaces: dict[str, set[str]] = {}  # kind -> surfaces, never forgotten
        self.index: dict[str, dict[str, tuple[str, Place]]] = {}
        self.kinds: dict[str, str] = {}
        self.containers_open: dict[str, bool] = {}
        self.explored: set[str] = set()
        self.room: str | None = None

    def summarize(self, record: MemoryRecord) -> None:
        self.summarized.append(record)
        if len(self.summarized) > self.capacity:
            self.summarized.popleft()
            self.discarded_count += 1

    def focus_on(self, task: int, kind: str, surface: str) -> None:
        self.focus[task] = (kind, surface)
        self.goal_surfaces.setdefault(kind, set()).add(surface)
        self.detailed.setdefault(task, [])

    def release(self, task: int, tick: int, outcome: str) -> None:
        """Fold a task's detailed records into one summary."""
        records = self.detailed.pop(task, [])
        self.focus.pop(task, None)
        self.summarize(MemoryRecord(tick, "task", f"task:{task}",
                                    f"{outcome} ({len(records)} records)"))

    def focus_kinds(self) -> set[str]:
        return {k for k, _ in self.focus.values()}

    def goal_places(self, kind: str) -> set[Place]:
        return {Place("surface", s) for s in self.goal_surfaces.get(kind, ())}

    def rooms_of(self, kind: str) -> set[str]:
        return {room for room, _ in self.index.get(kind, {}).values()}

    def count_on(self, kind: str, surface: str) -> int:
        target = Place("surface", surface)
        return sum(1 for _, p in self.index.get(kind, {}).values() if p == target)

    def candidates(self, kind: str, exclude: Iterable[str] = ()) -> list[tuple[str, str, Place]]:
        """Known instances of ``kind`` that are not already on a goal surface."""
        exclude = set(exclude)
        goals = self.goal_places(kind)
        return [(o, room, p) for o, (room, p) in self.index.get(kind, {}).items()
                if o not in exclude and p not in goals]

    def record_count(self) -> int:
        return sum(len(r) for r in self.detailed.values()) + len(self.summarized)

    def _record(self, tasks: Iterable[int], record: MemoryRecord) -> None:
        tasks = list(tasks)
        for t in tasks:
            self.detailed[t].append(record)
        if not tasks:
            self.summarize(record)


def update_memory(memory: MemoryStore, item: Any, tick: int | None = None) -> MemoryStore:
    """File an observation, action outcome or directive into ``memory``."""
    if isinstance(item, Observation):
        memory.room = item.room
        seen = {o: (kind, place) for o, kind, place in item.visible_objects}
        for c, is_open in item.visible_containers:
            memory.containers_open[c] = is_open
        for kind, objs in memory.index.items():
            for o, (room, place) in list(objs.items()):
                if room != item.room or o in seen:
                    continue
                if place.type == "container" and not memory.containers_open.get(place.ref, False):
                    continue
                del objs[o]
        for o, (kind, place) in seen.items():
            memory.kinds[o] = kind
            memory.index.setdefault(kind, {})[o] = (item.room, place)
        for o, kind in item.carrying:
            memory.kinds[o] = kind
            memory.index.get(kind, {}).pop(o, None)
        hits = {k for k, _ in seen.values()}
        tasks = [t for t, (k, _) in memory.focus.items() if k in hits]
        memory._record(tasks, MemoryRecord(item.tick, "observation", item.room,
                                           f"{len(seen)} objects"))
    elif isinstance(item, ActionOutcome):
        act = item.action
        obj = getattr(act, "obj", None)
        kind = memory.kinds.get(obj) if obj else None
        if isinstance(act, Grab) and item.success and kind:
            memory.index.get(kind, {}).pop(obj, None)
        if isinstance(act, Open) and item.success:
            memory.containers_open[act.container] = True
        if isinstance(act, PutOn) and item.success and kind:
            place = Place("surface", act.surface)
            # a PutOn only succeeds in the surface's room, where we last looked
            memory.index.setdefault(kind, {})[obj] = (memory.room, place)
        tasks = [t for t, (k, _) in memory.focus.items() if kind and k == kind]
        result = "ok" if item.success else item.reason
        memory._record(tasks, MemoryRecord(tick if tick is not None else -1, "action",
                                           type(act).__name__, result))
    elif isinstance(item, Directive):
        tasks = [item.task] if item.task in memory.focus else []
        memory._record(tasks, MemoryRecord(tick if tick is not None else -1, "directive",
                                           f"task:{item.task}", item.op))
    else:
        raise TypeError(f"cannot file {type(item).__name__} into memory")
    return memory


# -- subgoals -----------------------------------------------------------------

@dataclass(frozen=True)
class Subgoal:
    """One queue entry. ``target`` is a room, container, object or surface."""

    op: str
    kind: str | None = None
    target: str | None = None

    @classmethod
    def locate(cls, kind: str) -> "Subgoal":
        return cls("locate", kind)

    @classmethod
    def goto(cls, room: str) -> "Subgoal":
        return cls("goto", None, room)

    @classmethod
    def open(cls, container: str) -> "Subgoal":
        return cls("open", None, container)

    @classmethod
    def grab(cls, kind: str, obj: str | None = None) -> "Subgoal":
        return cls("grab", kind, obj)

    @classmethod
    def deliver(cls, surface: str, kind: str) -> "Subgoal":
        return cls("deliver", kind, surface)


def check_queue(queue: list[Subgoal], carried_kinds: Iterable[str] = ()) -> None:
    """Assert dependency order: each Deliver has a Grab (or carried unit) before it."""
    available = list(carried_kinds)
    for sg in queue:
        if sg.op == "grab":
            available.append(sg.kind)
        elif sg.op == "deliver":
            if sg.kind not in available:
                raise AssertionError(f"Deliver({sg.target}) of {sg.kind} before any Grab")
            available.remove(sg.kind)


@dataclass(frozen=True)
class AgentView:
    """What a policy may know about its own agent."""

    index: int
    room: str
    layout: HouseLayout
    carrying: Mapping[str, str] = field(default_factory=dict)   # object -> kind
    state: AgentLifecycle = AgentLifecycle.ACTIVE
    hand_capacity: int = 2


def satisfied_units(task: TaskObject, memory: MemoryStore) -> int:
    """Units already on the goal surface, per the last report or own observation."""
    g = task.goal
    return min(g.count, max(task.units_done, memory.count_on(g.object_kind, g.surface)))


def decompose(task: TaskObject, memory: MemoryStore, agent: AgentView,
              peer_intentions: Iterable[str] = ()) -> list[Subgoal]:
    g = task.goal
    if g.kind != "OnSurface":
        raise UnknownGoalKind(g.kind)
    kind, layout = g.object_kind, agent.layout
    remaining = g.count - satisfied_units(task, memory)
    queue: list[Subgoal] = []

    carried = [o for o, k in agent.carrying.items() if k == kind][:max(remaining, 0)]
    queue += [Subgoal.deliver(g.surface, kind) for _ in carried]
    remaining -= len(carried)

    goal_room = layout.surface_rooms[g.surface]
    pool = memory.candidates(kind, exclude=peer_intentions)
    origin = agent.room
    for _ in range(max(remaining, 0)):
        if pool:
            pool.sort(key=lambda c: (layout.distance(origin, c[1]), c[0]))
            obj, room, place = pool.pop(0)
            queue.append(Subgoal.goto(room))
            if place.type == "container" and not memory.containers_open.get(place.ref, False):
                queue.append(Subgoal.open(place.ref))
            queue.append(Subgoal.grab(kind, obj))
        else:
            queue += [Subgoal.locate(kind), Subgoal.grab(kind)]
        queue.append(Subgoal.deliver(g.surface, kind))
        origin = goal_room
    return queue


def _next_unexplored(layout: HouseLayout, room: str, explored: set[str]) -> str | None:
    n = len(layout.rooms)
    start = layout.room_index(room)
    for k in range(1, n + 1):
        r = layout.rooms[(start + k) % n]
        if r not in explored:
            return r
    return None


def _grabbable_here(memory: MemoryStore, kind: str, room: str,
                    exclude: set[str]) -> list[str]:
    out = []
    for o, r, p in memory.candidates(kind, exclude):
        if r != room:
            continue
        if p.type == "container" and not memory.containers_open.get(p.ref, False):
            continue
        out.append(o)
    return sorted(out)


def next_action(agent: AgentView, memory: MemoryStore, queue: list[Subgoal],
                peer_intentions: Iterable[str] = ()) -> PrimitiveAction:
    """Turn the head of ``queue`` into one primitive action, consuming it.

    ``peer_intentions`` holds objects claimed by lower-id peers; those are
    never grabbed.
    """
    if agent.state not in LIVE:
        return Idle()
    claimed = set(peer_intentions)
    layout = agent.layout
    for _ in range(4 * len(queue) + 8):
        if not queue:
            return Idle()
        head = queue[0]

        if head.op == "goto":
            if agent.room == head.target:
                queue.pop(0)
                continue
            return MoveTo(head.target)

        if head.op == "open":
            c = head.target
            if memory.containers_open.get(c, False):
                queue.pop(0)
                continue
            room = layout.container_rooms[c]
            if room != agent.room:
                queue.insert(0, Subgoal.goto(room))
                continue
            queue.pop(0)
            return Open(c)

        if head.op == "locate":
            found = memory.candidates(head.kind, claimed)
            if found:
                found.sort(key=lambda c: (layout.distance(agent.room, c[1]), c[0]))
                obj, room, place = found[0]
                steps = [Subgoal.goto(room)]
                if place.type == "container" and not memory.containers_open.get(place.ref, False):
                    steps.append(Subgoal.open(place.ref))
                queue[0:1] = steps
                # aim the following Grab at the instance we just found
                i = len(steps)
                if i < len(queue) and queue[i].op == "grab" and queue[i].target is None:
                    queue[i] = Subgoal.grab(head.kind, obj)
                continue
            closed = [c for c in layout.containers_in(agent.room)
                      if not memory.containers_open.get(c, False)]
            if closed:
                return Open(closed[0])
            memory.explored.add(agent.room)
            nxt = _next_unexplored(layout, agent.room, memory.explored)
            if nxt is None:
                # everything searched; objects may have moved since
                memory.explored = {agent.room}
                nxt = _next_unexplored(layout, agent.room, memory.explored)
                if nxt is None:
                    return Idle()
            return MoveTo(nxt)

        if head.op == "grab":
            if len(agent.carrying) >= agent.hand_capacity:
                queue.pop(0)
                continue
            here = _grabbable_here(memory, head.kind, agent.room, claimed)
            if here:
                obj = head.target if head.target in here else here[0]
                queue.pop(0)
                return Grab(obj)
            known = memory.index.get(head.kind, {}).get(head.target) if head.target else None
            if known is not None and head.target not in claimed and known[0] != agent.room:
                queue.insert(0, Subgoal.goto(known[0]))
                continue
            # target gone or claimed by a lower-id peer: look for another one
            queue[0:1] = [Subgoal.locate(head.kind), Subgoal.grab(head.kind)]
            continue

        if head.op == "deliver":
            objs = sorted(o for o, k in agent.carrying.items() if k == head.kind)
            if not objs:
                queue.pop(0)
                continue
            room = layout.surface_rooms[head.target]
            if agent.room != room:
                return MoveTo(room)
            queue.pop(0)
            return PutOn(objs[0], head.target)

        raise ValueError(f"unknown subgoal {head.op!r}")
    return Idle()


class WorkerPolicy(Protocol):
    def decompose(self, task: TaskObject, memory: MemoryStore, agent: AgentView,
                  peer_intentions: Iterable[str] = ()) -> list[Subgoal]: ...

    def next_action(self, agent: AgentView, memory: MemoryStore, queue: list[Subgoal],
                    peer_intentions: Iterable[str] = ()) -> PrimitiveAction: ...

    def update_memory(self, memory: MemoryStore, item: Any,
                      tick: int | None = None) -> MemoryStore: ...


class RulePolicy:
    name = "rule"

    decompose = staticmethod(decompose)
    next_action = staticmethod(next_action)
    update_memory = staticmethod(update_memory)


# -- runtime ------------------------------------------------------------------

@dataclass(frozen=True)
class StatusReport:
    agent: int
    tick: int
    location: str
    carrying: tuple = ()
    task: int | None = None
    progress: float | None = None
    intentions: tuple = ()

    def to_dict(self) -> dict[str, Any]:
        return {"agent": self.agent, "tick": self.tick, "location": self.location,
                "carrying": list(self.carrying), "task": self.task,
                "progress": self.progress, "intentions": list(self.intentions)}


class Worker:
    """One agent's runtime state between ticks.

    The coordinator drives it: :meth:`receive` bus messages,
    :meth:`perceive` the room, :meth:`act`, then :meth:`observe_outcome`.
    """

    def __init__(self, index: int, layout: HouseLayout, room: str, *,
                 capabilities: Iterable[str] = (), max_load: int = 4,
                 hand_capacity: int = 2, memory_capacity: int = 32,
                 policy: WorkerPolicy | None = None):
        self.index = index
        self.layout = layout
        self.room = room
        self.capabilities = frozenset(capabilities)
        self.max_load = max_load
        self.hand_capacity = hand_capacity
        self.policy = policy or RulePolicy()
        self.state = AgentLifecycle.ACTIVE
        self.memory = MemoryStore(memory_capacity)
        self.carrying: dict[str, str] = {}
        self.work: dict[int, TaskObject] = {}
        self.current: int | None = None
        self.queue: list[Subgoal] = []
        self.intentions: tuple = ()
        self.peer_claims: dict[int, tuple] = {}
        self.grabbed_for: dict[str, str] = {}
        self.completed: deque[int] = deque()
        self._dirty = True
        self._tick = 0

    def view(self) -> AgentView:
        return AgentView(self.index, self.room, self.layout, dict(self.carrying),
                         self.state, self.hand_capacity)

    # inbound

    def receive(self, messages: Iterable[Any]) -> None:
        self.peer_claims = {}
        for m in messages:
            p = m.payload
            if isinstance(p, IntentionClaim):
                self.peer_claims[p.agent] = p.objects
            elif isinstance(p, Directive) and p.agent == self.index:
                if p.op == "assign":
                    try:
                        self.accept_takeover(p)
                    except RefuseOverload:
                        # the control plane sees the task never start and
                        # reclaims it once it stalls
                        pass
                elif p.op == "evict":
                    self._drop_task(p.task)
                    self.policy.update_memory(self.memory, p, self._tick)

    def accept_takeover(self, directive: Directive) -> None:
        """Adopt a task at whatever progress it has reached."""
        task = directive.view
        if task.index in self.work:
            self.work[task.index] = task
            return
        if len(self.work) >= self.max_load:
            raise RefuseOverload(f"agent:{self.index} already holds {len(self.work)} tasks")
        self.work[task.index] = task
        self.memory.focus_on(task.index, task.goal.object_kind, task.goal.surface)
        self.policy.update_memory(self.memory, directive, self._tick)
        self._dirty = True

    def _drop_task(self, task: int) -> None:
        if self.work.pop(task, None) is not None:
            self.memory.release(task, self._tick, "evicted")
            if self.current == task:
                self.current = None
            self._dirty = True

    def perceive(self, obs: Observation) -> None:
        self._tick = obs.tick
        self.room = obs.room
        self.carrying = dict(obs.carrying)
        self.policy.update_memory(self.memory, obs, obs.tick)
        self._sweep_completed()

    def _sweep_completed(self) -> None:
        for idx, task in list(self.work.items()):
            if satisfied_units(task, self.memory) >= task.goal.count:
                self.work.pop(idx)
                self.memory.release(idx, self._tick, "completed")
                self.completed.append(idx)
                if self.current == idx:
                    self.current = None
                self._dirty = True

    # decision

    def _pick_current(self) -> int | None:
        if self.current in self.work:
            return self.current
        if not self.work:
            return None
        carried = set(self.carrying.values())
        return min(self.work, key=lambda i: (self.work[i].goal.object_kind not in carried,
                                             -self.work[i].priority, i))

    def _rebuild(self, claimed: set[str]) -> None:
        self.current = self._pick_current()
        held_kinds = {t.goal.object_kind for t in self.work.values()}
        queue = []
        for o, k in sorted(self.carrying.items()):
            if k in held_kinds:
                continue
            surface = self.grabbed_for.get(o) or self._nearest_surface()
            queue.append(Subgoal.deliver(surface, k))
        if self.current is not None:
            queue += self.policy.decompose(self.work[self.current], self.memory,
                                           self.view(), claimed)
        self.queue = queue
        self._dirty = False

    def _nearest_surface(self) -> str:
        surfaces = sorted(self.layout.surface_rooms,
                          key=lambda s: (self.layout.distance(self.room, self.layout.surface_rooms[s]), s))
        return surfaces[0]

    def claimed_by_peers(self) -> set[str]:
        return {o for a, objs in self.peer_claims.items() if a < self.index for o in objs}

    def act(self) -> PrimitiveAction:
        if self.state not in LIVE:
            return Idle()
        claimed = self.claimed_by_peers()
        if self._dirty or not self.queue:
            self._rebuild(claimed)
        action = self.policy.next_action(self.view(), self.memory, self.queue, claimed)
        if isinstance(action, Grab):
            self.intentions = (action.obj,)
        else:
            self.intentions = tuple(sg.target for sg in self.queue
                                    if sg.op == "grab" and sg.target)[:1]
        return action

    def observe_outcome(self, outcome: ActionOutcome) -> None:
        self.policy.update_memory(self.memory, outcome, self._tick)
        act = outcome.action
        if outcome.success and isinstance(act, MoveTo) and act.room != self.room:
            self.room = self.layout.next_hop(self.room, act.room)
        if outcome.success and isinstance(act, Grab):
            self.carrying[act.obj] = self.memory.kinds.get(act.obj, "")
            if self.current is not None:
                self.grabbed_for[act.obj] = self.work[self.current].goal.surface
        if outcome.success and isinstance(act, PutOn):
            self.grabbed_for.pop(act.obj, None)
            self.carrying.pop(act.obj, None)
            self._sweep_completed()
        if not outcome.success:
            self._dirty = True

    # outbound

    def progress_of(self, task: int) -> float:
        t = self.work[task]
        return satisfied_units(t, self.memory) / t.goal.count

    def make_report(self, tick: int) -> StatusReport:
        """Status for the control plane; finished tasks are reported first."""
        if self.completed:
            task, progress = self.completed.popleft(), 1.0
        elif self.current in self.work:
            task, progress = self.current, self.progress_of(self.current)
        else:
            task, progress = None, None
        return StatusReport(agent=self.index, tick=tick, location=self.room,
                            carrying=tuple(sorted(self.carrying)), task=task,
                            progress=progress, intentions=self.intentions)
