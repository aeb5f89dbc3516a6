"""n-step backward reachability, recoverability and agent-side recovery."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .transition_system import TransitionSystem, Trajectory

DEFAULT_N_MAX = 64


class Unrecoverable(Exception):
    """The disturbed state cannot rejoin the eigen plan within the allowed steps."""


@dataclass(frozen=True)
class ReachQuery:
    system: TransitionSystem
    target: Any
    depth: int
    n_max: int = DEFAULT_N_MAX

    def __post_init__(self):
        self.system.require(self.target)
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if self.depth > self.n_max:
            raise ValueError(f"depth {self.depth} exceeds n_max {self.n_max}")


def backward_levels(system: TransitionSystem, target, depth: int) -> list[frozenset]:
    """levels[j] = states with a path of exactly j transitions into ``target``."""
    levels = [frozenset((target,))]
    for _ in range(depth):
        prev = levels[-1]
        nxt = set()
        for y in prev:
            nxt.update(system.predecessors(y))
        levels.append(frozenset(nxt))
    return levels


def forward_levels(system: TransitionSystem, source, depth: int) -> list[frozenset]:
    """levels[j] = states reachable from ``source`` by exactly j transitions."""
    levels = [frozenset((source,))]
    for _ in range(depth):
        nxt = set()
        for x in levels[-1]:
            nxt.update(system.successors(x))
        levels.append(frozenset(nxt))
        if not nxt:
            break
    return levels


def backward_reach(q: ReachQuery) -> frozenset:
    """Every state with a trajectory of exactly ``depth`` transitions ending in the target."""
    return backward_levels(q.system, q.target, q.depth)[q.depth]


def min_recovery_steps(
    system: TransitionSystem, disturbed, eigen: Trajectory, k: int, n_max: int | None = None
) -> int:
    """Smallest n >= 1 such that ``disturbed`` can reach the eigen plan's step k + n state in n steps.

    Tested from the disturbed state's side: x backward-reaches y in n steps
    exactly when y is forward-reachable from x in n steps.
    """
    system.require(disturbed)
    if eigen.covers(k) and eigen.at(k) == disturbed:
        raise ValueError(f"state at step {k} matches the eigen plan; not a disturbance")
    remaining = eigen.end_step - k
    limit = remaining if n_max is None else min(n_max, remaining)
    if limit < 1:
        raise Unrecoverable(f"eigen plan ends at step {eigen.end_step}; nothing left to rejoin")
    levels = forward_levels(system, disturbed, limit)
    for n in range(1, len(levels)):
        if eigen.at(k + n) in levels[n]:
            return n
    raise Unrecoverable(f"no rejoin within {limit} steps of step {k}")


def recovery_bridge(system: TransitionSystem, disturbed, target, n: int) -> tuple:
    """Lexicographically smallest path of exactly n transitions from ``disturbed`` to ``target``.

    Built from forward levels pruned backwards to the states that still reach
    the target on time, so only successor queries are needed.
    """
    levels = forward_levels(system, disturbed, n)
    if len(levels) <= n or target not in levels[n]:
        raise Unrecoverable(f"{target!r} is not reachable in exactly {n} steps")
    good = [frozenset()] * (n + 1)
    good[n] = frozenset((target,))
    for j in range(n - 1, -1, -1):
        after = good[j + 1]
        good[j] = frozenset(x for x in levels[j] if any(s in after for s in system.successors(x)))
    path = [disturbed]
    for j in range(1, n + 1):
        path.append(min(s for s in system.successors(path[-1]) if s in good[j]))
    return tuple(path)


def recover(
    system: TransitionSystem, disturbed, eigen: Trajectory, k: int, n_max: int | None = None
) -> tuple[Trajectory, int]:
    """New eigen plan from step k: a bridge onto the old plan and the old suffix after it."""
    n = min_recovery_steps(system, disturbed, eigen, k, n_max)
    bridge = recovery_bridge(system, disturbed, eigen.at(k + n), n)
    tail = eigen.states[k + n - eigen.start_step + 1:]
    return Trajectory(k, bridge + tail), n


def is_recoverable_within(system: TransitionSystem, disturbed, eigen: Trajectory, k: int, n: int) -> bool:
    """Whether ``disturbed`` is n-step recoverable onto ``eigen`` (reaches its step k + n state in exactly n steps)."""
    if n < 0 or not eigen.covers(k + n):
        return False
    levels = forward_levels(system, disturbed, n)
    return len(levels) > n and eigen.at(k + n) in levels[n]


@dataclass(frozen=True)
class DisturbanceRecord:
    """A realized state that differs from the agent's eigen plan at ``step``."""

    agent: int
    step: int
    planned: Any
    realized: Any
    n_star: int | None
    eigen: Trajectory

    def __post_init__(self):
        if self.planned == self.realized:
            raise ValueError("a disturbance needs the realized state to differ from the planned one")

    @property
    def recoverable(self) -> bool:
        return self.n_star is not None


@dataclass(frozen=True)
class RecoveryRecord:
    agent: int
    step: int
    n_star: int
    rejoin_step: int
    bridge: tuple
