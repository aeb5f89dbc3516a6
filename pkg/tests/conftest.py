import random
import sys
from types import SimpleNamespace

import pytest

from episync.scenario import build_scenario, default_config
from episync.sync_model import LocalSyncStates
from episync.tasking import StateClass, TaskSiteAssignment
from episync.transition_system import AgentTransitionSystem, compose


def line_system(n, stay=True, rest=None):
    """States 0..n-1, moves to +-1 and optionally stay."""
    edges = [(a, b) for a in range(n) for b in range(n) if abs(a - b) == 1 or (stay and a == b)]
    return AgentTransitionSystem(range(n), edges, rest=rest)


def random_digraph(rng, n_states, density):
    states = list(range(n_states))
    edges = [(a, b) for a in states for b in states if rng.random() < density]
    return AgentTransitionSystem(states, edges)


def explicit_mission(agents, initial, classes, sync_preds, updates=None):
    """Minimal scenario-like object for the executor built from explicit systems."""
    return SimpleNamespace(
        system=compose(agents),
        assignment=TaskSiteAssignment(classes),
        sync=LocalSyncStates(sync_preds),
        initial=tuple(initial),
        updates=dict(updates or {}),
        config=None,
    )


def site(label, *states):
    return StateClass.of_states(label, states)


@pytest.fixture(scope="session")
def desk():
    return build_scenario(default_config())


@pytest.fixture
def rng():
    return random.Random(1234)


def rendezvous_mission(extra_edges, tasks):
    """A base that is always in sync and a rover that syncs only at home ``H``."""
    base = AgentTransitionSystem(["B"], [("B", "B")])
    rover_edges = [("H", "H"), ("H", "P1"), ("P2", "H")] + list(extra_edges)
    states = sorted({s for e in rover_edges for s in e})
    rover = AgentTransitionSystem(states, rover_edges, rest={"H"})
    return explicit_mission(
        [base, rover],
        ("B", "H"),
        [site(t, t) for t in tasks],
        [None, lambda x: x == "H"],
    )


def sync_mission():
    """Plan H P1 S P2 H; from P1 detour D reaches H two steps later, detour E three."""
    return rendezvous_mission(
        [("P1", "S"), ("S", "P2"), ("P1", "D"), ("D", "D2"), ("D2", "H"),
         ("P1", "E"), ("E", "E2"), ("E2", "E3"), ("E3", "H")],
        ["S"],
    )


def task_mission():
    """Plan H P1 Q S P2 H; detour D still reaches S at step 3, detour E does not."""
    return rendezvous_mission(
        [("P1", "Q"), ("Q", "S"), ("S", "P2"), ("P1", "D"), ("D", "S"),
         ("P1", "E"), ("E", "E2"), ("E2", "P2")],
        ["Q", "S"],
    )


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance")
        for line in mod.LINES:
            terminalreporter.write_line(line)
