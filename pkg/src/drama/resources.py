"""Agents and tasks as resource objects with validated lifecycles.

Resource objects are immutable values. Lifecycle changes go through
:func:`transition`, which returns a new object; the :class:`Registry`
stores the current version of every object and keeps derived fields
(agent workload) in sync.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Any, Union

from .sim import GoalPredicate

__all__ = [
    "ResourceKind",
    "ResourceId",
    "AgentLifecycle",
    "TaskLifecycle",
    "AGENT_EDGES",
    "TASK_EDGES",
    "LIVE",
    "HELD",
    "AgentObject",
    "TaskObject",
    "AttributeSnapshot",
    "Registry",
    "IllegalTransition",
    "DanglingReference",
    "DuplicateResource",
    "UnknownResource",
    "InvariantViolation",
    "transition",
    "snapshot",
    "resource_to_dict",
    "agent_from_dict",
    "task_from_dict",
]


class ResourceKind(str, enum.Enum):
    AGENT = "Agent"
    TASK = "Task"


@dataclass(frozen=True, order=True)
class ResourceId:
    kind: ResourceKind
    index: int

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"resource index must be non-negative, got {self.index}")

    @classmethod
    def agent(cls, index: int) -> "ResourceId":
        return cls(ResourceKind.AGENT, index)

    @classmethod
    def task(cls, index: int) -> "ResourceId":
        return cls(ResourceKind.TASK, index)

    def __str__(self) -> str:
        return f"{self.kind.value.lower()}:{self.index}"

    @classmethod
    def parse(cls, text: str) -> "ResourceId":
        kind, _, index = text.partition(":")
        return cls(ResourceKind(kind.capitalize()), int(index))


class AgentLifecycle(str, enum.Enum):
    JOINING = "Joining"
    ACTIVE = "Active"
    SUSPECT = "Suspect"
    DEAD = "Dead"
    DEPARTED = "Departed"


class TaskLifecycle(str, enum.Enum):
    PENDING = "Pending"
    ASSIGNED = "Assigned"
    IN_PROGRESS = "InProgress"
    COMPLETED = "Completed"
    EVICTED = "Evicted"


_A = AgentLifecycle
_T = TaskLifecycle

AGENT_EDGES = frozenset({
    (_A.JOINING, _A.ACTIVE),
    (_A.ACTIVE, _A.SUSPECT),
    (_A.SUSPECT, _A.ACTIVE),
    (_A.SUSPECT, _A.DEAD),
    (_A.ACTIVE, _A.DEPARTED),
    (_A.SUSPECT, _A.DEPARTED),
})

TASK_EDGES = frozenset({
    (_T.PENDING, _T.ASSIGNED),
    (_T.ASSIGNED, _T.IN_PROGRESS),
    (_T.ASSIGNED, _T.EVICTED),
    (_T.IN_PROGRESS, _T.EVICTED),
    (_T.IN_PROGRESS, _T.COMPLETED),
    (_T.EVICTED, _T.ASSIGNED),
})

# agent states that may hold and receive work
LIVE = frozenset({_A.ACTIVE, _A.SUSPECT})
# task states that carry an assignee
HELD = frozenset({_T.ASSIGNED, _T.IN_PROGRESS})


class IllegalTransition(Exception):
    def __init__(self, source: enum.Enum, target: enum.Enum):
        super().__init__(f"illegal transition {source.value} -> {target.value}")
        self.source = source
        self.target = target

    @property
    def edge(self) -> tuple:
        return (self.source, self.target)


class DanglingReference(Exception):
    pass


class DuplicateResource(Exception):
    pass


class UnknownResource(KeyError):
    pass


class InvariantViolation(AssertionError):
    pass


@dataclass(frozen=True)
class AgentObject:
    """Attribute set of one agent.

    ``location``, ``carrying`` and ``workload`` are the agent's local state as
    last reported to the control plane; ``policy`` names the worker policy the
    agent runs.
    """

    index: int
    capabilities: frozenset = frozenset()
    location: str | None = None
    carrying: tuple = ()
    workload: int = 0
    state: AgentLifecycle = AgentLifecycle.JOINING
    last_heartbeat: int = 0
    policy: str = "rule"
    hand_capacity: int = 2

    @property
    def id(self) -> ResourceId:
        return ResourceId.agent(self.index)


@dataclass(frozen=True)
class TaskObject:
    index: int
    goal: GoalPredicate
    required_capabilities: frozenset = frozenset()
    priority: int = 0
    state: TaskLifecycle = TaskLifecycle.PENDING
    assignee: int | None = None
    progress: float = 0.0
    last_progress_tick: int = 0

    @property
    def id(self) -> ResourceId:
        return ResourceId.task(self.index)

    @property
    def units_done(self) -> int:
        return min(self.goal.count, int(round(self.progress * self.goal.count)))


Resource = Union[AgentObject, TaskObject]


def transition(obj: Resource, target: enum.Enum, *, assignee: int | None = None,
               tick: int | None = None) -> Resource:
    """Return ``obj`` moved along the lifecycle edge ``obj.state -> target``.

    Task edges fix up the assignee: entering Assigned requires one, entering
    Evicted or Completed clears it. ``tick`` stamps ``last_progress_tick``
    when a task is (re)assigned or started.
    """
    if isinstance(obj, AgentObject):
        target = AgentLifecycle(target)
        if (obj.state, target) not in AGENT_EDGES:
            raise IllegalTransition(obj.state, target)
        return replace(obj, state=target)

    target = TaskLifecycle(target)
    if (obj.state, target) not in TASK_EDGES:
        raise IllegalTransition(obj.state, target)
    changes: dict[str, Any] = {"state": target}
    if target is TaskLifecycle.ASSIGNED:
        if assignee is None:
            raise ValueError("Assign edge needs an assignee")
        changes["assignee"] = assignee
    elif target in (TaskLifecycle.EVICTED, TaskLifecycle.COMPLETED):
        changes["assignee"] = None
    if target is TaskLifecycle.COMPLETED:
        changes["progress"] = 1.0
    if tick is not None and target in HELD:
        changes["last_progress_tick"] = tick
    return replace(obj, **changes)


@dataclass(frozen=True)
class AttributeSnapshot:
    """Immutable view of every resource object at one tick.

    ``agents`` and ``tasks`` hold the non-terminal objects (agents that are
    not Dead/Departed, tasks that are not Completed); terminal ones are kept
    in the archival tuples.
    """

    tick: int
    agents: tuple = ()
    tasks: tuple = ()
    archived_agents: tuple = ()
    archived_tasks: tuple = ()

    def live_agents(self) -> tuple:
        return tuple(a for a in self.agents if a.state in LIVE)

    def agent(self, index: int) -> AgentObject | None:
        for a in self.agents + self.archived_agents:
            if a.index == index:
                return a
        return None


class Registry:
    """Current version of every agent and task object."""

    def __init__(self) -> None:
        self.agents: dict[int, AgentObject] = {}
        self.tasks: dict[int, TaskObject] = {}

    def add_agent(self, agent: AgentObject) -> AgentObject:
        if agent.index in self.agents:
            raise DuplicateResource(str(agent.id))
        self.agents[agent.index] = replace(agent, workload=0)
        return self.agents[agent.index]

    def add_task(self, task: TaskObject) -> TaskObject:
        if task.index in self.tasks:
            raise DuplicateResource(str(task.id))
        if task.state is not TaskLifecycle.PENDING or task.assignee is not None:
            raise ValueError("new tasks enter the registry as Pending and unassigned")
        self.tasks[task.index] = task
        return task

    def agent(self, index: int) -> AgentObject:
        try:
            return self.agents[index]
        except KeyError:
            raise UnknownResource(str(ResourceId.agent(index))) from None

    def task(self, index: int) -> TaskObject:
        try:
            return self.tasks[index]
        except KeyError:
            raise UnknownResource(str(ResourceId.task(index))) from None

    def transition_agent(self, index: int, target: AgentLifecycle) -> AgentObject:
        self.agents[index] = transition(self.agent(index), target)
        return self.agents[index]

    def transition_task(self, index: int, target: TaskLifecycle, *,
                        assignee: int | None = None, tick: int | None = None) -> TaskObject:
        old = self.task(index)
        if target is TaskLifecycle.ASSIGNED and assignee is not None and assignee not in self.agents:
            raise DanglingReference(f"{old.id} assigned to unregistered agent:{assignee}")
        new = transition(old, target, assignee=assignee, tick=tick)
        self.tasks[index] = new
        self._sync_workload(old.assignee, new.assignee)
        return new

    def update_agent(self, index: int, **changes: Any) -> AgentObject:
        if "state" in changes or "workload" in changes:
            raise ValueError("state and workload change only through transitions")
        self.agents[index] = replace(self.agent(index), **changes)
        return self.agents[index]

    def update_task(self, index: int, **changes: Any) -> TaskObject:
        if "state" in changes or "assignee" in changes:
            raise ValueError("state and assignee change only through transitions")
        self.tasks[index] = replace(self.task(index), **changes)
        return self.tasks[index]

    def held_by(self, agent: int) -> list[TaskObject]:
        return [t for t in self.tasks.values() if t.assignee == agent and t.state in HELD]

    def _sync_workload(self, *agents: int | None) -> None:
        for a in set(agents):
            if a is not None and a in self.agents:
                self.agents[a] = replace(self.agents[a], workload=len(self.held_by(a)))

    def check(self) -> None:
        """Raise InvariantViolation if any object invariant is broken."""
        for t in self.tasks.values():
            if t.state in HELD:
                if t.assignee is None:
                    raise InvariantViolation(f"{t.id} is {t.state.value} without assignee")
                owner = self.agents.get(t.assignee)
                if owner is None or owner.state not in LIVE:
                    state = owner.state.value if owner else "unregistered"
                    raise InvariantViolation(f"{t.id} held by {state} agent:{t.assignee}")
            elif t.assignee is not None:
                raise InvariantViolation(f"{t.id} is {t.state.value} but has an assignee")
            if (t.progress >= 1.0) != (t.state is TaskLifecycle.COMPLETED):
                raise InvariantViolation(f"{t.id} progress {t.progress} in state {t.state.value}")
            if not 0.0 <= t.progress <= 1.0:
                raise InvariantViolation(f"{t.id} progress {t.progress} out of range")
        for a in self.agents.values():
            if a.workload != len(self.held_by(a.index)):
                raise InvariantViolation(f"{a.id} workload {a.workload} out of sync")
            if len(a.carrying) > a.hand_capacity:
                raise InvariantViolation(f"{a.id} carries more than {a.hand_capacity}")


def snapshot(registry: Registry, tick: int) -> AttributeSnapshot:
    for t in registry.tasks.values():
        if t.assignee is not None and t.assignee not in registry.agents:
            raise DanglingReference(f"{t.id} refers to unregistered agent:{t.assignee}")
    agents = sorted(registry.agents.values(), key=lambda a: a.index)
    tasks = sorted(registry.tasks.values(), key=lambda t: t.index)
    terminal = {AgentLifecycle.DEAD, AgentLifecycle.DEPARTED}
    return AttributeSnapshot(
        tick=tick,
        agents=tuple(a for a in agents if a.state not in terminal),
        tasks=tuple(t for t in tasks if t.state is not TaskLifecycle.COMPLETED),
        archived_agents=tuple(a for a in agents if a.state in terminal),
        archived_tasks=tuple(t for t in tasks if t.state is TaskLifecycle.COMPLETED),
    )


# -- JSON ---------------------------------------------------------------------

def resource_to_dict(obj: Resource) -> dict[str, Any]:
    if isinstance(obj, AgentObject):
        return {
            "id": str(obj.id),
            "capabilities": sorted(obj.capabilities),
            "location": obj.location,
            "carrying": list(obj.carrying),
            "workload": obj.workload,
            "state": obj.state.value,
            "last_heartbeat": obj.last_heartbeat,
            "policy": obj.policy,
            "hand_capacity": obj.hand_capacity,
        }
    return {
        "id": str(obj.id),
        "goal": obj.goal.to_dict(),
        "required_capabilities": sorted(obj.required_capabilities),
        "priority": obj.priority,
        "state": obj.state.value,
        "assignee": None if obj.assignee is None else str(ResourceId.agent(obj.assignee)),
        "progress": obj.progress,
        "last_progress_tick": obj.last_progress_tick,
    }


def agent_from_dict(d: dict[str, Any]) -> AgentObject:
    return AgentObject(
        index=ResourceId.parse(d["id"]).index,
        capabilities=frozenset(d.get("capabilities", ())),
        location=d.get("location"),
        carrying=tuple(d.get("carrying", ())),
        workload=d.get("workload", 0),
        state=AgentLifecycle(d.get("state", "Joining")),
        last_heartbeat=d.get("last_heartbeat", 0),
        policy=d.get("policy", "rule"),
        hand_capacity=d.get("hand_capacity", 2),
    )


def task_from_dict(d: dict[str, Any]) -> TaskObject:
    assignee = d.get("assignee")
    return TaskObject(
        index=ResourceId.parse(d["id"]).index,
        goal=GoalPredicate.from_dict(d["goal"]),
        required_capabilities=frozenset(d.get("required_capabilities", ())),
        priority=d.get("priority", 0),
        state=TaskLifecycle(d.get("state", "Pending")),
        assignee=None if assignee is None else ResourceId.parse(assignee).index,
        progress=d.get("progress", 0.0),
        last_progress_tick=d.get("last_progress_tick", 0),
    )
