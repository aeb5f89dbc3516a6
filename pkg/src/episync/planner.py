"""Replanning that honors the known plans of agents out of communication.

For every agent not in sync at step k the planner pins that agent's part of
the new plan to what it believes the agent is doing, up to the agent's next
sync step in the previous plan, and requires the new plan to pass through a
sync state there.  ``alg1`` constrains only the first future sync step;
``alg3`` constrains every future sync step of the previous plan.
"""

from __future__ import annotations

from dataclasses import dataclass

from .solver import ConstraintSolver, PinConstraint, SyncVisitConstraint
from .sync_model import PlanBeliefs, SyncStates, sync_steps
from .tasking import TaskSiteAssignment
from .transition_system import Trajectory

MODES = ("alg1", "alg3")


class NoFutureSync(Exception):
    """An absent agent's previous plan never reaches one of its sync states again."""

    def __init__(self, agent: int, step: int):
        super().__init__(f"agent {agent} has no sync state after step {step} in the previous plan")
        self.agent = agent
        self.step = step


@dataclass(frozen=True)
class PlanConstraints:
    """Pins, sync visits and the planning start state derived at one replan."""

    step: int
    start: tuple
    pins: tuple[PinConstraint, ...]
    sync_visits: tuple[SyncVisitConstraint, ...]
    absent: tuple[int, ...]
    next_sync: dict

    @property
    def empty(self) -> bool:
        return not self.pins and not self.sync_visits


def build_constraints(
    beliefs: PlanBeliefs, sync: SyncStates, x_k: tuple, k: int, mode: str = "alg3"
) -> PlanConstraints:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    old = beliefs.global_plan
    pins: list[PinConstraint] = []
    visits: list[SyncVisitConstraint] = []
    absent: list[int] = []
    next_sync: dict[int, int] = {}
    start = list(x_k)
    for i in range(beliefs.n_agents):
        if sync.contains(i, x_k):
            continue
        absent.append(i)
        future = sync_steps(old, sync, i, k)
        if not future:
            raise NoFutureSync(i, k)
        first = future[0]
        next_sync[i] = first
        belief = beliefs.planner_belief[i]
        # the planner does not observe an absent agent; it plans from its belief
        if belief.covers(k):
            start[i] = belief.at(k)
        for step in range(k, first + 1):
            if belief.covers(step):
                pins.append(PinConstraint(i, step, belief.at(step)))
        for step in future[:1] if mode == "alg1" else future:
            visits.append(SyncVisitConstraint(i, step, old.at(step)))
    # a visit at step k itself is already decided by the start state
    visits = [v for v in visits if v.step > k]
    return PlanConstraints(k, tuple(start), tuple(pins), tuple(visits), tuple(absent), next_sync)


def plan_with_sync(
    beliefs: PlanBeliefs,
    sync: SyncStates,
    x_k: tuple,
    assignment: TaskSiteAssignment,
    solver: ConstraintSolver,
    k: int,
    mode: str = "alg1",
) -> tuple[Trajectory, PlanConstraints]:
    """A new global plan from step k that keeps absent agents' known plans intact."""
    c = build_constraints(beliefs, sync, x_k, k, mode)
    plan = solver(c.start, k, assignment, c.pins, c.sync_visits)
    return plan, c


def plan_with_sync_disturbance(
    beliefs: PlanBeliefs,
    sync: SyncStates,
    x_k: tuple,
    assignment: TaskSiteAssignment,
    solver: ConstraintSolver,
    k: int,
) -> tuple[Trajectory, PlanConstraints]:
    """Like ``plan_with_sync`` but every future sync step of an absent agent is kept."""
    return plan_with_sync(beliefs, sync, x_k, assignment, solver, k, mode="alg3")


def audit_replan(plan: Trajectory, c: PlanConstraints, sync: SyncStates) -> list[str]:
    """Prefix preservation and sync visits of a replan; returns violations."""
    out = []
    for p in c.pins:
        if not plan.covers(p.step) or plan.at(p.step)[p.agent] != p.state:
            out.append(f"agent {p.agent} departs from its known plan at step {p.step}")
    for v in c.sync_visits:
        if not plan.covers(v.step) or not sync.contains(v.agent, plan.at(v.step)):
            out.append(f"agent {v.agent} misses its sync state at step {v.step}")
    return out
