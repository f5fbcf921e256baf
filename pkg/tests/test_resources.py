from __future__ import annotations

import itertools
import random

import pytest

from drama.resources import (AGENT_EDGES, TASK_EDGES, AgentLifecycle, AgentObject,
                             DanglingReference, DuplicateResource, IllegalTransition,
                             InvariantViolation, Registry, ResourceId, ResourceKind,
                             TaskLifecycle, TaskObject, agent_from_dict, resource_to_dict,
                             snapshot, task_from_dict, transition)
from drama.sim import GoalPredicate

GOAL = GoalPredicate("cupcake", "coffeetable", 3)

# Written out by hand from the lifecycle tables, independently of the module.
LEGAL_AGENT = {("Joining", "Active"), ("Active", "Suspect"), ("Suspect", "Active"),
               ("Suspect", "Dead"), ("Active", "Departed"), ("Suspect", "Departed")}
LEGAL_TASK = {("Pending", "Assigned"), ("Assigned", "InProgress"), ("Assigned", "Evicted"),
              ("InProgress", "Evicted"), ("InProgress", "Completed"), ("Evicted", "Assigned")}


def _task(state=TaskLifecycle.PENDING, assignee=None, **kw):
    return TaskObject(index=0, goal=GOAL, state=state, assignee=assignee, **kw)


def test_resource_id_roundtrip():
    rid = ResourceId.agent(3)
    assert str(rid) == "agent:3"
    assert ResourceId.parse("task:12") == ResourceId(ResourceKind.TASK, 12)
    with pytest.raises(ValueError):
        ResourceId.agent(-1)


def test_pending_assign_sets_assignee():
    t = transition(_task(), TaskLifecycle.ASSIGNED, assignee=1)
    assert t.state is TaskLifecycle.ASSIGNED and t.assignee == 1


def test_completed_is_terminal():
    done = _task(TaskLifecycle.COMPLETED, progress=1.0)
    with pytest.raises(IllegalTransition) as exc:
        transition(done, TaskLifecycle.ASSIGNED, assignee=0)
    assert exc.value.edge == (TaskLifecycle.COMPLETED, TaskLifecycle.ASSIGNED)


def test_evicted_clears_assignee():
    t = transition(_task(TaskLifecycle.IN_PROGRESS, 2), TaskLifecycle.EVICTED)
    assert t.assignee is None


def test_completion_sets_full_progress():
    t = transition(_task(TaskLifecycle.IN_PROGRESS, 2, progress=0.5), TaskLifecycle.COMPLETED)
    assert t.progress == 1.0 and t.assignee is None


def test_assign_without_assignee_rejected():
    with pytest.raises(ValueError):
        transition(_task(), TaskLifecycle.ASSIGNED)


@pytest.mark.parametrize("src,dst", list(itertools.product(AgentLifecycle, AgentLifecycle)))
def test_agent_transition_matrix(src, dst):
    a = AgentObject(index=0, state=src)
    if (src.value, dst.value) in LEGAL_AGENT:
        assert transition(a, dst).state is dst
    else:
        with pytest.raises(IllegalTransition):
            transition(a, dst)


@pytest.mark.parametrize("src,dst", list(itertools.product(TaskLifecycle, TaskLifecycle)))
def test_task_transition_matrix(src, dst):
    held = src in (TaskLifecycle.ASSIGNED, TaskLifecycle.IN_PROGRESS)
    t = _task(src, 0 if held else None)
    if (src.value, dst.value) in LEGAL_TASK:
        assert transition(t, dst, assignee=1).state is dst
    else:
        with pytest.raises(IllegalTransition):
            transition(t, dst, assignee=1)


def test_declared_edges_match_tables():
    assert {(a.value, b.value) for a, b in AGENT_EDGES} == LEGAL_AGENT
    assert {(a.value, b.value) for a, b in TASK_EDGES} == LEGAL_TASK


def _registry(n_agents=2, n_tasks=1):
    reg = Registry()
    for i in range(n_agents):
        reg.add_agent(AgentObject(index=i, location="livingroom"))
        reg.transition_agent(i, AgentLifecycle.ACTIVE)
    for j in range(n_tasks):
        reg.add_task(TaskObject(index=j, goal=GOAL))
    return reg


def test_snapshot_empty():
    snap = snapshot(Registry(), 0)
    assert snap.agents == () and snap.tasks == ()


def test_snapshot_identity_projection():
    snap = snapshot(_registry(2, 1), 7)
    assert snap.tick == 7
    assert len(snap.live_agents()) == 2 and len(snap.tasks) == 1


def test_snapshot_archives_terminal_objects():
    reg = _registry(1, 1)
    reg.transition_task(0, TaskLifecycle.ASSIGNED, assignee=0)
    reg.transition_task(0, TaskLifecycle.IN_PROGRESS)
    reg.transition_task(0, TaskLifecycle.COMPLETED)
    reg.transition_agent(0, AgentLifecycle.SUSPECT)
    reg.transition_agent(0, AgentLifecycle.DEAD)
    snap = snapshot(reg, 3)
    assert snap.agents == () and snap.tasks == ()
    assert len(snap.archived_agents) + len(snap.archived_tasks) == 2


def test_snapshot_is_stable():
    reg = _registry(3, 4)
    assert snapshot(reg, 5) == snapshot(reg, 5)


def test_dangling_reference():
    reg = _registry(1, 1)
    with pytest.raises(DanglingReference):
        reg.transition_task(0, TaskLifecycle.ASSIGNED, assignee=9)
    reg.tasks[0] = _task(TaskLifecycle.ASSIGNED, 9)
    with pytest.raises(DanglingReference):
        snapshot(reg, 0)


def test_duplicates_rejected():
    reg = _registry(1, 1)
    with pytest.raises(DuplicateResource):
        reg.add_agent(AgentObject(index=0))
    with pytest.raises(DuplicateResource):
        reg.add_task(TaskObject(index=0, goal=GOAL))


def test_workload_tracks_held_tasks():
    reg = _registry(2, 3)
    for j in range(3):
        reg.transition_task(j, TaskLifecycle.ASSIGNED, assignee=j % 2)
    assert reg.agent(0).workload == 2 and reg.agent(1).workload == 1
    reg.transition_task(0, TaskLifecycle.EVICTED)
    assert reg.agent(0).workload == 1
    reg.check()


def test_check_flags_dead_holder():
    reg = _registry(1, 1)
    reg.transition_task(0, TaskLifecycle.ASSIGNED, assignee=0)
    reg.transition_agent(0, AgentLifecycle.SUSPECT)
    reg.transition_agent(0, AgentLifecycle.DEAD)
    with pytest.raises(InvariantViolation):
        reg.check()


def test_random_legal_walk_keeps_invariants():
    """10,000 random legal edges, invariants checked after each."""
    rng = random.Random(1234)
    reg = _registry(3, 4)
    for _ in range(10_000):
        if rng.random() < 0.3:
            i = rng.randrange(3)
            a = reg.agent(i)
            options = [dst for src, dst in AGENT_EDGES if src is a.state
                       and dst not in (AgentLifecycle.DEAD, AgentLifecycle.DEPARTED)]
            if options:
                reg.transition_agent(i, rng.choice(sorted(options)))
        else:
            j = rng.randrange(4)
            t = reg.task(j)
            options = [dst for src, dst in TASK_EDGES if src is t.state
                       and dst is not TaskLifecycle.COMPLETED]
            if not options:
                continue
            dst = rng.choice(sorted(options))
            reg.transition_task(j, dst, assignee=rng.randrange(3), tick=0)
        reg.check()


def test_json_roundtrip():
    a = AgentObject(index=2, capabilities=frozenset({"heavy_lift"}), location="kitchen",
                    carrying=("cupcake_1",), state=AgentLifecycle.SUSPECT, last_heartbeat=4)
    t = TaskObject(index=1, goal=GOAL, priority=2, state=TaskLifecycle.ASSIGNED, assignee=2,
                   progress=1 / 3, last_progress_tick=5)
    assert agent_from_dict(resource_to_dict(a)) == a
    assert task_from_dict(resource_to_dict(t)) == t
    assert resource_to_dict(t)["assignee"] == "agent:2"


def test_units_done():
    assert _task(progress=2 / 3).units_done == 2
