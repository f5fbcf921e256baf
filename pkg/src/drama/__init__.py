"""Dynamic multi-agent task allocation with a control plane and a worker plane."""

from .control import ControlPlane, SchedulerConfig, MonitorConfig, plan, critic, schedule, affinity
from .harness import (Allocator, Dynamics, EpisodeResult, ScenarioSpec, load_scenario,
                      run_episode, run_suite, summarize)
from .resources import AgentLifecycle, Registry, TaskLifecycle
from .sim import ConfigError, GoalPredicate, init_world

__version__ = "0.1.0"

__all__ = [
    "ControlPlane", "SchedulerConfig", "MonitorConfig", "plan", "critic", "schedule",
    "affinity", "Allocator", "Dynamics", "EpisodeResult", "ScenarioSpec", "load_scenario",
    "run_episode", "run_suite", "summarize", "AgentLifecycle", "Registry", "TaskLifecycle",
    "ConfigError", "GoalPredicate", "init_world",
]
