"""Scenario runner, baseline allocators and episode metrics.

One episode is a lockstep loop over ticks. Each tick the control plane
drains its inbox and handles events, every live worker drains its own
inbox, looks around and picks one action, and the world steps once.
An agent accrues one step for every tick it is present, idle or not.
"""

from __future__ import annotations

import csv
import enum
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .bus import CONTROL, Bus, Heartbeat, IntentionClaim
from .control import ControlPlane, EventKind, TriggerEvent, load_control_config
from .resources import ResourceId
from .sim import (ConfigError, GoalPredicate, PutOn, action_to_dict, add_agent,
                  default_world_config, drop_agent, goal_progress, init_world, observe, step)
from .worker import Worker

__all__ = [
    "Dynamics",
    "Allocator",
    "AgentSpec",
    "GoalSpec",
    "ScenarioSpec",
    "EpisodeResult",
    "SuiteSummary",
    "StaticControlPlane",
    "CompletionReallocControlPlane",
    "allocator_static",
    "allocator_completion_realloc",
    "control_plane_for",
    "load_scenario",
    "scenario_from_dict",
    "run_episode",
    "run_suite",
    "summarize",
    "load_manifest",
]


class Dynamics(str, enum.Enum):
    STATIC = "Static"
    DROPOUT = "Dropout"
    ADDITION = "Addition"

    @classmethod
    def parse(cls, text: str) -> "Dynamics":
        if isinstance(text, cls):
            return text
        for d in cls:
            if d.value.lower() == str(text).lower():
                return d
        raise ValueError(f"unknown dynamics {text!r}")


class Allocator(str, enum.Enum):
    DRAMA = "drama"
    STATIC = "static"
    COMPLETION = "completion"

    @classmethod
    def parse(cls, text: str) -> "Allocator":
        if isinstance(text, cls):
            return text
        key = str(text).lower().replace("-", "").replace("_", "")
        aliases = {"drama": cls.DRAMA, "static": cls.STATIC, "completion": cls.COMPLETION,
                   "completionrealloc": cls.COMPLETION}
        if key not in aliases:
            raise ValueError(f"unknown allocator {text!r}")
        return aliases[key]


# -- baseline allocators ------------------------------------------------------

class StaticControlPlane(ControlPlane):
    """Computes the initial assignment and never revises it."""

    name = "static"

    def reschedule_on(self, event: TriggerEvent) -> bool:
        return False


class CompletionReallocControlPlane(ControlPlane):
    """Reschedules on task completion and ignores every other trigger."""

    name = "completion"

    def reschedule_on(self, event: TriggerEvent) -> bool:
        return event.kind is EventKind.TASK_COMPLETED


def allocator_static(cp: ControlPlane):
    """Initial assignment for a static control plane (fixed thereafter)."""
    return cp.schedule()


def allocator_completion_realloc(cp: ControlPlane, event: TriggerEvent):
    """Handle ``event`` on a completion-only control plane."""
    return cp.handle_event(event)


_PLANES = {Allocator.DRAMA: ControlPlane, Allocator.STATIC: StaticControlPlane,
           Allocator.COMPLETION: CompletionReallocControlPlane}


def control_plane_for(allocator: Allocator | str) -> type[ControlPlane]:
    return _PLANES[Allocator.parse(allocator)]


# -- scenarios ----------------------------------------------------------------

@dataclass(frozen=True)
class AgentSpec:
    room: str | None = None
    capabilities: frozenset = frozenset()


@dataclass(frozen=True)
class GoalSpec:
    predicate: GoalPredicate
    priority: int = 0
    requires: frozenset = frozenset()


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    goals: tuple
    agents: tuple
    world: Mapping[str, Any] = field(default_factory=default_world_config, repr=False)
    world_ref: str = "default"
    dynamics: Dynamics = Dynamics.STATIC
    change_window: tuple = (5, 10)
    step_budget: int = 200
    seed: int = 0
    allocator: Allocator = Allocator.DRAMA
    config: Mapping[str, Any] = field(default_factory=dict)
    added_agent: AgentSpec = AgentSpec()
    # pins object placement so that ``seed`` only varies the dynamics
    world_seed: int | None = None

    def __post_init__(self) -> None:
        if not self.goals:
            raise ConfigError("/goals", "at least one goal is required")
        if not self.agents:
            raise ConfigError("/agents", "at least one agent is required")
        if self.dynamics is Dynamics.DROPOUT and len(self.agents) < 2:
            raise ConfigError("/agents", "Dropout needs at least 2 initial agents")
        lo, hi = self.change_window
        if not 0 <= lo <= hi:
            raise ConfigError("/change_window", "need 0 <= lo <= hi")
        if self.step_budget < 1:
            raise ConfigError("/step_budget", "must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("/seed", "seed must be an unsigned 64-bit integer")

    def with_(self, **changes: Any) -> "ScenarioSpec":
        from dataclasses import replace
        return replace(self, **changes)


def _agent_spec(d: Any, pointer: str) -> AgentSpec:
    if not isinstance(d, Mapping):
        raise ConfigError(pointer, "agent spec must be an object")
    caps = d.get("capabilities", [])
    if not isinstance(caps, list) or not all(isinstance(c, str) for c in caps):
        raise ConfigError(f"{pointer}/capabilities", "must be a list of strings")
    return AgentSpec(d.get("room"), frozenset(caps))


def scenario_from_dict(d: Mapping[str, Any], base: Path | None = None) -> ScenarioSpec:
    """Validate a scenario mapping; errors carry a JSON pointer."""
    if not isinstance(d, Mapping):
        raise ConfigError("", "scenario must be a JSON object")
    world_ref = d.get("world", "default")
    if world_ref == "default":
        world = default_world_config()
    elif isinstance(world_ref, Mapping):
        world, world_ref = dict(world_ref), "inline"
    else:
        path = Path(world_ref)
        if base is not None and not path.is_absolute():
            path = base / path
        try:
            world = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError("/world", f"cannot read world config: {e}") from None

    goals = []
    for i, g in enumerate(d.get("goals", [])):
        p = f"/goals/{i}"
        try:
            pred = GoalPredicate(g["object_kind"], g["surface"], int(g.get("count", 1)))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(p, f"bad goal: {e}") from None
        surfaces = {s["id"] for s in world.get("surfaces", [])}
        if pred.surface not in surfaces:
            raise ConfigError(f"{p}/surface", f"unknown surface {pred.surface!r}")
        available = sum(1 for o in world.get("objects", []) if o.get("kind") == pred.object_kind)
        if pred.count > available:
            raise ConfigError(f"{p}/count",
                              f"needs {pred.count} {pred.object_kind}, world has {available}")
        goals.append(GoalSpec(pred, int(g.get("priority", 0)), frozenset(g.get("requires", []))))

    raw_agents = d.get("agents", [])
    if isinstance(raw_agents, int):
        raw_agents = [{} for _ in range(raw_agents)]
    agents = tuple(_agent_spec(a, f"/agents/{i}") for i, a in enumerate(raw_agents))

    try:
        dynamics = Dynamics.parse(d.get("dynamics", "Static"))
    except ValueError as e:
        raise ConfigError("/dynamics", str(e)) from None
    try:
        allocator = Allocator.parse(d.get("allocator", "drama"))
    except ValueError as e:
        raise ConfigError("/allocator", str(e)) from None
    window = d.get("change_window", [5, 10])
    if not (isinstance(window, list) and len(window) == 2 and all(isinstance(x, int) for x in window)):
        raise ConfigError("/change_window", "must be [lo, hi] integers")
    config = d.get("config", {})
    load_control_config(config)   # validate early

    spec = ScenarioSpec(
        name=str(d.get("name", "scenario")),
        goals=tuple(goals),
        agents=agents,
        world=world,
        world_ref=str(world_ref),
        dynamics=dynamics,
        change_window=tuple(window),
        step_budget=int(d.get("step_budget", 200)),
        seed=int(d.get("seed", 0)),
        allocator=allocator,
        config=dict(config),
        added_agent=_agent_spec(d.get("added_agent", {}), "/added_agent"),
        world_seed=None if d.get("world_seed") is None else int(d["world_seed"]),
    )
    # surface world errors (bad rooms, disconnected graph) at load time
    layout = init_world(world, spec.seed).layout
    for i, a in enumerate(spec.agents + (spec.added_agent,)):
        if a.room is not None and a.room not in layout.adjacency:
            ptr = f"/agents/{i}/room" if i < len(spec.agents) else "/added_agent/room"
            raise ConfigError(ptr, f"unknown room {a.room!r}")
    return spec


def load_scenario(path: str | Path) -> ScenarioSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError("", f"cannot read scenario: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError("", f"invalid JSON: {e}") from None
    return scenario_from_dict(data, base=path.parent)


# -- episodes -----------------------------------------------------------------

@dataclass
class EpisodeResult:
    scenario: str
    allocator: str
    seed: int
    success: bool
    AS: int | None
    TS: int
    ticks_used: int
    assignment_epochs: int
    events: list = field(default_factory=list)
    change_tick: int | None = None
    changed_agent: int | None = None
    orphaned_tasks: list = field(default_factory=list)
    completions_with_pending: int = 0
    finisher: int | None = None
    steps: dict = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d = dict(self.__dict__)
        d["events"] = [e.to_dict() for e in self.events]
        d["steps"] = {str(k): v for k, v in sorted(self.steps.items())}
        return d


def _dynamics_draw(spec: ScenarioSpec) -> tuple[int | None, int | None]:
    """Change tick and affected agent, from a stream separate from world placement."""
    if spec.dynamics is Dynamics.STATIC:
        return None, None
    rng = np.random.default_rng([spec.seed, 1])
    lo, hi = spec.change_window
    tick = int(rng.integers(lo, hi + 1))
    if spec.dynamics is Dynamics.DROPOUT:
        return tick, int(rng.integers(len(spec.agents)))
    return tick, len(spec.agents)


def _finisher(pre_units: Sequence[int], goals: Sequence[GoalPredicate], outcomes: Mapping,
              kinds: Mapping[str, str]) -> int | None:
    """Agent whose PutOn completed the last missing unit this tick."""
    units = list(pre_units)
    for a in sorted(outcomes):
        o = outcomes[a]
        if not (o.success and isinstance(o.action, PutOn)):
            continue
        for gi, g in enumerate(goals):
            if g.surface == o.action.surface and g.object_kind == kinds[o.action.obj] \
                    and units[gi] < g.count:
                units[gi] += 1
                break
        if all(u >= g.count for u, g in zip(units, goals)):
            return a
    return None


def run_episode(spec: ScenarioSpec, *, trace: Callable[[dict], None] | None = None,
                check_invariants: bool = False) -> EpisodeResult:
    """Play one episode to success or budget exhaustion. Deterministic in ``spec``."""
    monitor_cfg, sched_cfg = load_control_config(spec.config)
    world = init_world(spec.world, spec.seed if spec.world_seed is None else spec.world_seed)
    layout = world.layout
    goals = [g.predicate for g in spec.goals]
    bus = Bus()
    cp = control_plane_for(spec.allocator)(layout, monitor_cfg, sched_cfg, bus=bus,
                                           trace=trace, check_invariants=check_invariants)
    if trace is not None:
        trace({"type": "header", "scenario": spec.name, "allocator": cp.name, "seed": spec.seed,
               "goals": [g.to_dict() for g in goals], "kinds": dict(world.kinds)})

    workers: dict[int, Worker] = {}

    def spawn(index: int, a: AgentSpec) -> Worker:
        nonlocal world
        room = a.room or layout.spawn_room
        world = add_agent(world, index, room)
        bus.register(index)
        w = Worker(index, layout, room, capabilities=a.capabilities,
                   max_load=sched_cfg.max_load)
        workers[index] = w
        return w

    for i, a in enumerate(spec.agents):
        spawn(i, a)
        cp.register_agent(i, a.room or layout.spawn_room, a.capabilities, tick=0)
    for j, g in enumerate(spec.goals):
        cp.register_task(j, g.predicate, g.priority, g.requires, tick=0)

    change_tick, changed = _dynamics_draw(spec)
    joined_at = {i: 0 for i in workers}
    steps = dict.fromkeys(workers, 0)
    orphaned: list[int] = []
    success, finisher, ticks_used = False, None, 0
    progress = goal_progress(world, goals)

    for t in range(spec.step_budget):
        if t == change_tick and spec.dynamics is Dynamics.DROPOUT:
            orphaned = [task.index for task in cp.registry.held_by(changed)
                        if progress.fractions[task.index] < 1.0]
            world = drop_agent(world, changed, t)
            bus.drop(changed)
            del workers[changed]
        elif t == change_tick and spec.dynamics is Dynamics.ADDITION:
            spawn(changed, spec.added_agent)
            joined_at[changed] = t
            steps[changed] = 0

        cp.step(t)
        if t == 0:
            cp.schedule()

        actions = {}
        for i in sorted(workers):
            w = workers[i]
            w.receive(bus.drain(i, t))
            w.perceive(observe(world, i))
            actions[i] = w.act()

        pre_units = progress.units
        world, outcomes = step(world, actions)
        # workers report after acting, so a report reflects this tick's outcome
        for i in sorted(workers):
            w = workers[i]
            w.observe_outcome(outcomes[i])
            if joined_at[i] == t and t > 0:
                bus.send(i, TriggerEvent(t, EventKind.AGENT_JOINED, ResourceId.agent(i),
                                         {"location": w.room,
                                          "capabilities": sorted(w.capabilities)}),
                         t, CONTROL)
            else:
                if t % monitor_cfg.heartbeat_period == 0:
                    bus.send(i, Heartbeat(i), t, CONTROL)
                bus.send(i, w.make_report(t), t, CONTROL)
            bus.send(i, IntentionClaim(i, w.intentions), t)
        for i in workers:
            steps[i] += 1
        progress = goal_progress(world, goals)
        ticks_used = t + 1
        if trace is not None:
            trace({"type": "tick", "tick": t,
                   "actions": {str(i): action_to_dict(a) for i, a in sorted(actions.items())},
                   "outcomes": {str(i): o.to_dict() for i, o in sorted(outcomes.items())},
                   "goal_fractions": list(progress.fractions)})
        if progress.all_done:
            success = True
            finisher = _finisher(pre_units, goals, outcomes, world.kinds)
            break

    return EpisodeResult(
        scenario=spec.name,
        allocator=cp.name,
        seed=spec.seed,
        success=success,
        AS=steps.get(finisher) if success and finisher is not None else None,
        TS=sum(steps.values()),
        ticks_used=ticks_used,
        assignment_epochs=cp.epoch,
        events=list(cp.events),
        change_tick=change_tick,
        changed_agent=changed,
        orphaned_tasks=orphaned,
        completions_with_pending=cp.completions_with_pending,
        finisher=finisher,
        steps=steps,
    )


# -- suites -------------------------------------------------------------------

@dataclass(frozen=True)
class SuiteSummary:
    scenario: str
    allocator: str
    episodes: int
    successes: int
    SR: float
    mean_AS: float | None
    median_AS: float | None
    mean_TS: float | None
    median_TS: float | None
    iqr_TS: float | None


def _iqr(xs: Sequence[float]) -> float:
    q1, q3 = np.percentile(np.asarray(xs, dtype=float), [25, 75])
    return float(q3 - q1)


def summarize(results: Sequence[EpisodeResult]) -> list[SuiteSummary]:
    """Aggregate per (scenario, allocator); AS/TS over successful episodes only."""
    groups: dict[tuple[str, str], list[EpisodeResult]] = {}
    for r in results:
        groups.setdefault((r.scenario, r.allocator), []).append(r)
    out = []
    for (name, alloc), rs in groups.items():
        ok = [r for r in rs if r.success]
        as_ = [r.AS for r in ok if r.AS is not None]
        ts = [r.TS for r in ok]
        out.append(SuiteSummary(
            scenario=name, allocator=alloc, episodes=len(rs), successes=len(ok),
            SR=len(ok) / len(rs),
            mean_AS=statistics.fmean(as_) if as_ else None,
            median_AS=float(statistics.median(as_)) if as_ else None,
            mean_TS=statistics.fmean(ts) if ts else None,
            median_TS=float(statistics.median(ts)) if ts else None,
            iqr_TS=_iqr(ts) if ts else None,
        ))
    return out


def load_manifest(path: str | Path) -> tuple[list[ScenarioSpec], list[Allocator], list[int]]:
    """A manifest lists scenario files, allocators, and seeds (or a count)."""
    path = Path(path)
    try:
        m = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError("", f"cannot read manifest: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError("", f"invalid JSON: {e}") from None
    if not isinstance(m.get("scenarios"), list) or not m["scenarios"]:
        raise ConfigError("/scenarios", "need a non-empty list of scenario files")
    specs = []
    for i, ref in enumerate(m["scenarios"]):
        if isinstance(ref, Mapping):
            specs.append(scenario_from_dict(ref, base=path.parent))
            continue
        try:
            specs.append(load_scenario(path.parent / ref))
        except ConfigError as e:
            raise ConfigError(f"/scenarios/{i}{e.pointer}", e.message) from None
    try:
        allocators = [Allocator.parse(a) for a in m.get("allocators", ["drama"])]
    except ValueError as e:
        raise ConfigError("/allocators", str(e)) from None
    seeds = m.get("seeds", 1)
    if isinstance(seeds, int):
        if seeds < 1:
            raise ConfigError("/seeds", "need at least one episode")
        seeds = list(range(seeds))
    if not all(isinstance(s, int) and 0 <= s < 2**64 for s in seeds):
        raise ConfigError("/seeds", "seeds must be unsigned 64-bit integers")
    return specs, allocators, list(seeds)


def run_suite(specs: Iterable[ScenarioSpec], seeds: Sequence[int],
              allocators: Sequence[Allocator | str] | None = None, *,
              out: str | Path | None = None, trace: bool = False) -> list[EpisodeResult]:
    """Run every (scenario, allocator, seed) triple; seeds are paired across allocators.

    With ``out`` set, writes ``results.jsonl``, ``summary.csv`` and, if
    ``trace``, one ``trace/<scenario>_<allocator>_<seed>.jsonl`` per episode.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    out_dir = Path(out) if out is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        if trace:
            (out_dir / "trace").mkdir(exist_ok=True)
    results = []
    for spec in specs:
        allocs = [Allocator.parse(a) for a in allocators] if allocators else [spec.allocator]
        for alloc in allocs:
            for seed in seeds:
                s = spec.with_(allocator=alloc, seed=int(seed))
                if out_dir is not None and trace:
                    tpath = out_dir / "trace" / f"{s.name}_{alloc.value}_{seed}.jsonl"
                    with tpath.open("w") as fh:
                        results.append(run_episode(s, trace=lambda rec: fh.write(
                            json.dumps(rec, sort_keys=True) + "\n")))
                else:
                    results.append(run_episode(s))
    if out_dir is not None:
        write_results(results, out_dir)
    return results


def write_results(results: Sequence[EpisodeResult], out_dir: Path) -> None:
    with (out_dir / "results.jsonl").open("w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    rows = summarize(results)
    with (out_dir / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        names = list(SuiteSummary.__dataclass_fields__)
        writer.writerow(names)
        for row in rows:
            writer.writerow(["" if getattr(row, n) is None else getattr(row, n) for n in names])
