from __future__ import annotations

import pytest

from drama.sim import GoalPredicate, default_world_config, init_world


@pytest.fixture
def world():
    return init_world(default_world_config(), seed=0)


@pytest.fixture
def layout(world):
    return world.layout


@pytest.fixture
def cupcakes():
    return GoalPredicate("cupcake", "coffeetable", 3)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
