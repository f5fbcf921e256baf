"""Control plane: liveness monitoring, affinity scoring, Planner-Critic scheduling.

The control plane owns the :class:`~drama.resources.Registry`. It learns
about the worker plane only through bus messages (heartbeats, status
reports, join requests) and talks back with Assign/Evict directives.
Rescheduling happens only in response to a :class:`TriggerEvent`.
"""

from __future__ import annotations

import enum
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Protocol

import numpy as np

from .bus import CONTROL, Bus, Directive, Heartbeat
from .resources import (HELD, LIVE, AgentLifecycle, AgentObject, AttributeSnapshot,
                        DuplicateResource, Registry, ResourceId, ResourceKind, TaskLifecycle,
                        TaskObject, snapshot)
from .sim import ConfigError, GoalPredicate, HouseLayout, UnknownAgent
from .worker import StatusReport

log = logging.getLogger(__name__)

__all__ = [
    "MonitorConfig",
    "SchedulerConfig",
    "load_control_config",
    "EventKind",
    "TriggerEvent",
    "Assignment",
    "Violation",
    "CriticVerdict",
    "ScheduleResult",
    "UnknownSubject",
    "Monitor",
    "affinity",
    "plan",
    "critic",
    "schedule",
    "ControlPlane",
]


@dataclass(frozen=True)
class MonitorConfig:
    heartbeat_period: int = 1
    suspect_after: int = 3
    dead_after: int = 6
    stall_after: int = 15

    def __post_init__(self) -> None:
        if not 0 < self.heartbeat_period <= self.suspect_after < self.dead_after:
            raise ValueError("need 0 < heartbeat_period <= suspect_after < dead_after")
        if self.stall_after <= 0:
            raise ValueError("stall_after must be positive")


@dataclass(frozen=True)
class SchedulerConfig:
    max_load: int = 4
    w_loc: float = 0.5
    w_load: float = 0.5
    max_rounds: int = 3
    # "lowest" breaks affinity ties by agent id, "random" by a seeded draw
    tie_break: str = "lowest"
    tie_seed: int = 0

    def __post_init__(self) -> None:
        if self.max_load < 1:
            raise ValueError("max_load must be >= 1")
        if self.w_loc < 0 or self.w_load < 0 or self.w_loc + self.w_load <= 0:
            raise ValueError("affinity weights must be non-negative and not both zero")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")
        if self.tie_break not in ("lowest", "random"):
            raise ValueError(f"unknown tie_break {self.tie_break!r}")


_MONITOR_KEYS = ("heartbeat_period", "suspect_after", "dead_after", "stall_after")
_SCHED_KEYS = ("max_load", "w_loc", "w_load", "max_rounds", "tie_break", "tie_seed")


def load_control_config(block: Mapping[str, Any] | None,
                        pointer: str = "/config") -> tuple[MonitorConfig, SchedulerConfig]:
    block = dict(block or {})
    for key in block:
        if key not in _MONITOR_KEYS + _SCHED_KEYS:
            raise ConfigError(f"{pointer}/{key}", "unknown control-plane setting")
    try:
        mon = MonitorConfig(**{k: block[k] for k in _MONITOR_KEYS if k in block})
    except (TypeError, ValueError) as e:
        raise ConfigError(pointer, str(e)) from None
    try:
        sched = SchedulerConfig(**{k: block[k] for k in _SCHED_KEYS if k in block})
    except (TypeError, ValueError) as e:
        raise ConfigError(pointer, str(e)) from None
    return mon, sched


class EventKind(str, enum.Enum):
    AGENT_DEAD = "AgentDead"
    AGENT_DEPARTED = "AgentDeparted"
    AGENT_JOINED = "AgentJoined"
    TASK_STALLED = "TaskStalled"
    TASK_COMPLETED = "TaskCompleted"
    TASK_ARRIVED = "TaskArrived"


@dataclass(frozen=True)
class TriggerEvent:
    """A discrete change that may warrant rescheduling.

    ``attrs`` carries registration data for AgentJoined (location,
    capabilities) and TaskArrived (goal, priority, required capabilities).
    """

    tick: int
    kind: EventKind
    subject: ResourceId
    attrs: Mapping[str, Any] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        want = ResourceKind.AGENT if self.kind.value.startswith("Agent") else ResourceKind.TASK
        if self.subject.kind is not want:
            raise ValueError(f"{self.kind.value} needs a {want.value} subject")

    def to_dict(self) -> dict[str, Any]:
        return {"tick": self.tick, "kind": self.kind.value, "subject": str(self.subject)}


@dataclass(frozen=True)
class Assignment:
    epoch: int
    map: Mapping[int, int]   # task index -> agent index


@dataclass(frozen=True)
class Violation:
    rule: int
    subject: ResourceId
    message: str

    @property
    def rule_name(self) -> str:
        return RULE_NAMES[self.rule]


RULE_NAMES = {1: "live_assignee", 2: "max_load", 3: "capabilities", 4: "coverage"}


@dataclass(frozen=True)
class CriticVerdict:
    violations: tuple = ()

    @property
    def accepted(self) -> bool:
        return not self.violations


class UnknownSubject(KeyError):
    pass


def _layout(world: Any) -> HouseLayout:
    return getattr(world, "layout", world)


# -- scoring and planning -----------------------------------------------------

def affinity(agent: AgentObject, task: TaskObject, world: Any,
             config: SchedulerConfig | None = None) -> float | None:
    """Suitability of ``agent`` for ``task``; None when the agent lacks a capability.

    Inverse hop distance to the goal's room and inverse workload, mixed by
    ``w_loc``/``w_load``. With the default weights the score is in (0, 1].
    """
    if not task.required_capabilities <= agent.capabilities:
        return None
    cfg = config or SchedulerConfig()
    layout = _layout(world)
    d = layout.distance(agent.location, layout.surface_rooms[task.goal.surface])
    return cfg.w_loc / (1 + d) + cfg.w_load / (1 + agent.workload)


def _order(tasks) -> list[TaskObject]:
    return sorted(tasks, key=lambda t: (-t.priority, t.index))


class Planner(Protocol):
    def __call__(self, snap: AttributeSnapshot, world: Any, config: SchedulerConfig, *,
                 epoch: int = 0, fixed: Mapping[int, int] | None = None) -> Assignment: ...


def plan(snap: AttributeSnapshot, world: Any, config: SchedulerConfig | None = None, *,
         epoch: int = 0, fixed: Mapping[int, int] | None = None) -> Assignment:
    """Greedy candidate allocation.

    Tasks InProgress on a live agent keep it (or, when ``fixed`` is given,
    exactly the ``fixed`` entries are kept). Remaining tasks are taken in
    (priority desc, id asc) order and go to the highest-affinity agent under
    ``max_load``, with workloads updated as the plan fills up.
    """
    cfg = config or SchedulerConfig()
    live = {a.index: a for a in snap.live_agents()}
    load = dict.fromkeys(live, 0)
    mapping: dict[int, int] = {}
    for t in snap.tasks:
        if fixed is not None:
            keep = fixed.get(t.index)
        else:
            keep = t.assignee if t.state is TaskLifecycle.IN_PROGRESS else None
        if keep in live:
            mapping[t.index] = keep
            load[keep] += 1

    rng = np.random.default_rng([cfg.tie_seed, epoch]) if cfg.tie_break == "random" else None
    for t in _order(x for x in snap.tasks if x.index not in mapping):
        best: list[int] = []
        best_score = -math.inf
        for i in sorted(live):
            if load[i] >= cfg.max_load:
                continue
            s = affinity(replace(live[i], workload=load[i]), t, world, cfg)
            if s is None:
                continue
            if best and math.isclose(s, best_score, rel_tol=1e-9):
                best.append(i)
            elif s > best_score:
                best, best_score = [i], s
        if not best:
            continue
        pick = best[int(rng.integers(len(best)))] if rng is not None else best[0]
        mapping[t.index] = pick
        load[pick] += 1
    return Assignment(epoch, dict(sorted(mapping.items())))


def critic(candidate: Assignment, snap: AttributeSnapshot, world: Any = None,
           config: SchedulerConfig | None = None) -> CriticVerdict:
    """Check a candidate against the four allocation rules; report every breach."""
    cfg = config or SchedulerConfig()
    agents = {a.index: a for a in snap.agents + snap.archived_agents}
    tasks = {t.index: t for t in snap.tasks}
    out: list[Violation] = []

    for ti, ai in candidate.map.items():
        a = agents.get(ai)
        if a is None or a.state not in LIVE:
            state = a.state.value if a else "unregistered"
            out.append(Violation(1, ResourceId.task(ti), f"mapped to {state} agent:{ai}"))
        elif ti not in tasks:
            out.append(Violation(1, ResourceId.task(ti), "task is not schedulable"))

    counts = Counter(candidate.map.values())
    for ai, n in sorted(counts.items()):
        if n > cfg.max_load:
            out.append(Violation(2, ResourceId.agent(ai), f"{n} tasks > max_load {cfg.max_load}"))

    for ti, ai in candidate.map.items():
        t, a = tasks.get(ti), agents.get(ai)
        if t is not None and a is not None and not t.required_capabilities <= a.capabilities:
            missing = sorted(t.required_capabilities - a.capabilities)
            out.append(Violation(3, ResourceId.task(ti), f"agent:{ai} lacks {missing}"))

    for t in _order(tasks.values()):
        if t.index in candidate.map:
            continue
        if any(a.state in LIVE and t.required_capabilities <= a.capabilities
               and counts[a.index] < cfg.max_load for a in agents.values()):
            out.append(Violation(4, ResourceId.task(t.index), "feasible task left unmapped"))
    return CriticVerdict(tuple(out))


def _drop_violations(candidate: Assignment, verdict: CriticVerdict,
                     rules: set[int], max_load: int) -> dict[int, int]:
    mapping = dict(candidate.map)
    for v in verdict.violations:
        if v.rule not in rules:
            continue
        if v.rule == 2:
            # shed the overloaded agent's lowest-priority mappings
            mine = [ti for ti, ai in mapping.items() if ai == v.subject.index]
            for ti in sorted(mine, reverse=True)[: max(len(mine) - max_load, 0)]:
                del mapping[ti]
        elif v.subject.kind is ResourceKind.TASK:
            mapping.pop(v.subject.index, None)
    return mapping


@dataclass(frozen=True)
class ScheduleResult:
    assignment: Assignment
    rounds: int
    violations_repaired: int
    degraded: bool = False


def schedule(snap: AttributeSnapshot, world: Any, config: SchedulerConfig | None = None, *,
             epoch: int = 1, planner: Planner = plan) -> ScheduleResult:
    """Plan, critique, repair; never returns a mapping onto a dead agent.

    A rejected candidate has its violating entries removed and the planner
    fills the residual, up to ``max_rounds`` times. If it is still rejected,
    live-assignee and max-load violations are stripped and the partial
    result is returned as degraded.
    """
    cfg = config or SchedulerConfig()
    candidate = planner(snap, world, cfg, epoch=epoch)
    verdict = critic(candidate, snap, world, cfg)
    rounds, repaired = 1, 0
    while not verdict.accepted and rounds <= cfg.max_rounds:
        repaired += len(verdict.violations)
        keep = _drop_violations(candidate, verdict, {1, 2, 3}, cfg.max_load)
        candidate = planner(snap, world, cfg, epoch=epoch, fixed=keep)
        verdict = critic(candidate, snap, world, cfg)
        rounds += 1
    if verdict.accepted:
        return ScheduleResult(candidate, rounds, repaired)
    log.warning("degraded schedule at epoch %d after %d rounds: %s", epoch, rounds,
                [(v.rule_name, str(v.subject)) for v in verdict.violations])
    stripped = _drop_violations(candidate, verdict, {1, 2}, cfg.max_load)
    return ScheduleResult(Assignment(epoch, stripped), rounds, repaired, degraded=True)


# -- monitoring ---------------------------------------------------------------

class Monitor:
    """Heartbeat bookkeeping and the failure/stall sweep."""

    def __init__(self, registry: Registry, config: MonitorConfig | None = None):
        self.registry = registry
        self.config = config or MonitorConfig()
        self._stalls: set[tuple[int, int]] = set()

    def record_heartbeat(self, agent: int, tick: int) -> AgentObject:
        a = self.registry.agents.get(agent)
        if a is None:
            raise UnknownAgent(agent)
        if a.state is AgentLifecycle.DEPARTED:
            raise ValueError(f"heartbeat from departed agent:{agent}")
        a = self.registry.update_agent(agent, last_heartbeat=max(a.last_heartbeat, tick))
        if a.state is AgentLifecycle.SUSPECT:
            a = self.registry.transition_agent(agent, AgentLifecycle.ACTIVE)
        return a

    def detect_failures(self, now: int) -> list[TriggerEvent]:
        cfg = self.config
        events = []
        for i in sorted(self.registry.agents):
            a = self.registry.agents[i]
            if a.state not in LIVE:
                continue
            silent = now - a.last_heartbeat
            if silent >= cfg.dead_after:
                if a.state is AgentLifecycle.ACTIVE:
                    self.registry.transition_agent(i, AgentLifecycle.SUSPECT)
                self.registry.transition_agent(i, AgentLifecycle.DEAD)
                events.append(TriggerEvent(now, EventKind.AGENT_DEAD, ResourceId.agent(i)))
            elif silent >= cfg.suspect_after and a.state is AgentLifecycle.ACTIVE:
                self.registry.transition_agent(i, AgentLifecycle.SUSPECT)
        for j in sorted(self.registry.tasks):
            t = self.registry.tasks[j]
            if t.state is not TaskLifecycle.IN_PROGRESS:
                continue
            if self.registry.agents[t.assignee].state not in LIVE:
                continue
            key = (j, t.last_progress_tick)
            if now - t.last_progress_tick >= cfg.stall_after and key not in self._stalls:
                self._stalls.add(key)
                events.append(TriggerEvent(now, EventKind.TASK_STALLED, ResourceId.task(j)))
        return events


# -- the loop -----------------------------------------------------------------

class ControlPlane:
    """Event-driven allocator.

    Subclasses change *when* to reschedule by overriding
    :meth:`reschedule_on`; lifecycle bookkeeping is shared.
    """

    name = "drama"

    def __init__(self, world: Any, monitor_config: MonitorConfig | None = None,
                 scheduler_config: SchedulerConfig | None = None, *,
                 bus: Bus | None = None, registry: Registry | None = None,
                 planner: Planner = plan, trace: Callable[[dict], None] | None = None,
                 check_invariants: bool = False):
        self.layout = _layout(world)
        self.registry = registry if registry is not None else Registry()
        self.monitor = Monitor(self.registry, monitor_config)
        self.config = scheduler_config or SchedulerConfig()
        self.bus = bus
        if bus is not None:
            bus.register(CONTROL)
        self.planner = planner
        self.trace = trace
        self.check_invariants = check_invariants
        self.now = 0
        self.epoch = 0
        self.events: list[TriggerEvent] = []
        self.assignments: list[Assignment] = []
        self.completions_with_pending = 0

    # registration

    def register_agent(self, index: int, location: str, capabilities=(), tick: int = 0) -> AgentObject:
        self.registry.add_agent(AgentObject(index=index, capabilities=frozenset(capabilities),
                                            location=location, last_heartbeat=tick))
        return self.registry.transition_agent(index, AgentLifecycle.ACTIVE)

    def register_task(self, index: int, goal: GoalPredicate, priority: int = 0,
                      required_capabilities=(), tick: int = 0) -> TaskObject:
        return self.registry.add_task(TaskObject(
            index=index, goal=goal, priority=priority,
            required_capabilities=frozenset(required_capabilities), last_progress_tick=tick))

    # per-tick processing

    def step(self, now: int) -> list[Assignment]:
        """Drain the bus, sweep for failures, handle every resulting event."""
        self.now = now
        queued: list[TriggerEvent] = []
        for m in self.bus.drain(CONTROL, now) if self.bus is not None else ():
            p = m.payload
            if isinstance(p, Heartbeat):
                a = self.registry.agents.get(p.agent)
                if a is not None and a.state in LIVE:
                    self.monitor.record_heartbeat(p.agent, now)
            elif isinstance(p, StatusReport):
                queued += self.ingest_report(p)
            elif isinstance(p, TriggerEvent):
                queued.append(replace(p, tick=now))
        swept = self.monitor.detect_failures(now)
        # deaths first: the sweep has already marked those agents Dead, and
        # their tasks must be evicted before anything else is handled
        dead = [e for e in swept if e.kind is EventKind.AGENT_DEAD]
        queued = dead + queued + [e for e in swept if e.kind is not EventKind.AGENT_DEAD]
        out = []
        for e in queued:
            result = self.handle_event(e)
            if result is not None:
                out.append(result)
        return out

    def ingest_report(self, r: StatusReport) -> list[TriggerEvent]:
        a = self.registry.agents.get(r.agent)
        if a is None or a.state not in LIVE:
            return []
        self.registry.update_agent(r.agent, location=r.location, carrying=tuple(r.carrying))
        t = self.registry.tasks.get(r.task) if r.task is not None else None
        if t is None or t.assignee != r.agent or t.state not in HELD:
            return []
        if t.state is TaskLifecycle.ASSIGNED:
            t = self.registry.transition_task(t.index, TaskLifecycle.IN_PROGRESS, tick=self.now)
        if r.progress is not None and r.progress >= 1.0:
            return [TriggerEvent(self.now, EventKind.TASK_COMPLETED, t.id)]
        if r.progress is not None and r.progress > t.progress:
            self.registry.update_task(t.index, progress=r.progress, last_progress_tick=self.now)
        return []

    # events

    def reschedule_on(self, event: TriggerEvent) -> bool:
        if event.kind is EventKind.TASK_COMPLETED:
            return any(t.state in (TaskLifecycle.PENDING, TaskLifecycle.EVICTED)
                       for t in self.registry.tasks.values())
        return True

    def handle_event(self, event: TriggerEvent) -> Assignment | None:
        """Apply an event's lifecycle effects, then reschedule if the policy says so."""
        reg = self.registry
        kind, idx = event.kind, event.subject.index
        attrs = event.attrs or {}
        if kind is EventKind.AGENT_JOINED:
            if idx in reg.agents:
                raise DuplicateResource(str(event.subject))
            self.register_agent(idx, attrs.get("location", self.layout.spawn_room),
                                attrs.get("capabilities", ()), tick=self.now)
        elif kind is EventKind.TASK_ARRIVED:
            if idx in reg.tasks:
                raise DuplicateResource(str(event.subject))
            self.register_task(idx, GoalPredicate.from_dict(attrs["goal"]),
                               attrs.get("priority", 0), attrs.get("required_capabilities", ()),
                               tick=self.now)
        elif event.subject.kind is ResourceKind.AGENT and idx not in reg.agents:
            raise UnknownSubject(str(event.subject))
        elif event.subject.kind is ResourceKind.TASK and idx not in reg.tasks:
            raise UnknownSubject(str(event.subject))

        self.events.append(event)
        if kind is EventKind.AGENT_DEAD:
            a = reg.agents[idx]
            if a.state is AgentLifecycle.ACTIVE:
                reg.transition_agent(idx, AgentLifecycle.SUSPECT)
            if reg.agents[idx].state is AgentLifecycle.SUSPECT:
                reg.transition_agent(idx, AgentLifecycle.DEAD)
            self._evict_all(idx)
        elif kind is EventKind.AGENT_DEPARTED:
            if reg.agents[idx].state in LIVE:
                reg.transition_agent(idx, AgentLifecycle.DEPARTED)
            self._evict_all(idx)
        elif kind is EventKind.TASK_COMPLETED:
            t = reg.tasks[idx]
            if t.state is TaskLifecycle.ASSIGNED:
                reg.transition_task(idx, TaskLifecycle.IN_PROGRESS, tick=self.now)
            if reg.tasks[idx].state is TaskLifecycle.IN_PROGRESS:
                reg.transition_task(idx, TaskLifecycle.COMPLETED)

        result = None
        if self.reschedule_on(event):
            if kind is EventKind.TASK_STALLED and reg.tasks[idx].state in HELD:
                self._evict(idx)
            if kind is EventKind.TASK_COMPLETED:
                self.completions_with_pending += 1
            result = self.schedule(trigger=event)
        if self.check_invariants:
            reg.check()
        return result

    def _evict(self, task: int) -> None:
        t = self.registry.tasks[task]
        owner = t.assignee
        self.registry.transition_task(task, TaskLifecycle.EVICTED)
        if owner is not None and self.registry.agents[owner].state in LIVE:
            self._send(owner, Directive("evict", task, owner))

    def _evict_all(self, agent: int) -> None:
        for t in sorted(self.registry.held_by(agent), key=lambda t: t.index):
            self._evict(t.index)

    def _send(self, agent: int, directive: Directive) -> None:
        if self.bus is not None:
            self.bus.send(CONTROL, directive, self.now, recipient=agent)

    # scheduling

    def snapshot(self) -> AttributeSnapshot:
        return snapshot(self.registry, self.now)

    def schedule(self, trigger: TriggerEvent | None = None) -> Assignment:
        """Run Planner-Critic on the current state and apply the result."""
        self.epoch += 1
        result = schedule(self.snapshot(), self.layout, self.config,
                          epoch=self.epoch, planner=self.planner)
        self._apply(result.assignment)
        self.assignments.append(result.assignment)
        if self.trace is not None:
            self.trace({
                "type": "epoch",
                "epoch": self.epoch,
                "tick": self.now,
                "trigger": trigger.kind.value if trigger else "initial",
                "map": {str(k): v for k, v in result.assignment.map.items()},
                "violations_repaired": result.violations_repaired,
            })
        return result.assignment

    def _apply(self, assignment: Assignment) -> None:
        reg = self.registry
        for ti in sorted(reg.tasks):
            t = reg.tasks[ti]
            if t.state is TaskLifecycle.COMPLETED:
                continue
            new = assignment.map.get(ti)
            if t.state in HELD and new != t.assignee:
                self._evict(ti)
                t = reg.tasks[ti]
            if new is not None and t.state in (TaskLifecycle.PENDING, TaskLifecycle.EVICTED):
                t = reg.transition_task(ti, TaskLifecycle.ASSIGNED, assignee=new, tick=self.now)
                self._send(new, Directive("assign", ti, new, t))
