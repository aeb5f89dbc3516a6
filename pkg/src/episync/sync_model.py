"""Synchronization states, the three plan beliefs, and the opportunistic sync rule."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Callable, Sequence

from .transition_system import Trajectory, project

AgentPredicate = Callable[[Any], bool]


class SyncStates:
    """Per-agent sync-state membership over joint states.

    ``requirements(i, witness)`` gives agent-local conditions that are jointly
    sufficient for membership; the solver uses them to split a sync-visit
    constraint across agents.  ``witness`` is a joint state known to be in
    agent i's sync states (typically the old plan's state at that step).
    The default pins every agent to the witness, which is always sufficient.
    """

    def __init__(self, n_agents: int, contains: Callable[[int, tuple], bool]):
        self.n_agents = n_agents
        self._contains = contains

    def contains(self, agent: int, joint: tuple) -> bool:
        return bool(self._contains(agent, joint))

    def members(self, joint: tuple) -> tuple[int, ...]:
        return tuple(i for i in range(self.n_agents) if self.contains(i, joint))

    def always(self, agent: int) -> bool:
        """True when every joint state is a sync state for ``agent``."""
        return False

    def requirements(self, agent: int, witness: tuple | None) -> dict[int, AgentPredicate]:
        if witness is None:
            raise ValueError("a joint sync predicate needs a witness state to decompose")
        return {j: _equals(witness[j]) for j in range(self.n_agents)}


class LocalSyncStates(SyncStates):
    """Membership of agent i depends only on agent i's own state."""

    def __init__(self, predicates: Sequence[AgentPredicate | None]):
        self._preds = tuple(predicates)
        super().__init__(len(self._preds), self._local_contains)

    def _local_contains(self, agent: int, joint: tuple) -> bool:
        pred = self._preds[agent]
        return True if pred is None else pred(joint[agent])

    def always(self, agent: int) -> bool:
        return self._preds[agent] is None

    def requirements(self, agent: int, witness: tuple | None) -> dict[int, AgentPredicate]:
        pred = self._preds[agent]
        return {} if pred is None else {agent: pred}


def _equals(value: Any) -> AgentPredicate:
    return lambda x: x == value


@dataclass(frozen=True)
class PlanBeliefs:
    """tau^k_plan, each tau^k_{i,eigen} and each tau^k_{i,plan} at step k."""

    step: int
    global_plan: Trajectory
    eigen: tuple[Trajectory, ...]
    planner_belief: tuple[Trajectory, ...]

    @classmethod
    def initial(cls, plan: Trajectory) -> PlanBeliefs:
        """Full synchronization at the plan's first step."""
        n = len(plan.states[0])
        parts = tuple(project(plan, i) for i in range(n))
        return cls(plan.start_step, plan, parts, parts)

    @property
    def n_agents(self) -> int:
        return len(self.eigen)


def _from_step(traj: Trajectory, k: int) -> Trajectory:
    return traj.suffix(k) if traj.covers(k) else traj


def sync_update(beliefs: PlanBeliefs, sync: SyncStates, x_k: tuple, k: int) -> PlanBeliefs:
    """One application of the two-case sync rule at step k.

    Agents whose joint state is in their sync set take the projection of the
    current global plan as both eigen plan and planner belief; everyone else
    keeps the previous step's trajectories.  At k = 0 every agent syncs.
    """
    eigen = list(beliefs.eigen)
    belief = list(beliefs.planner_belief)
    plan = beliefs.global_plan
    for i in range(beliefs.n_agents):
        if k == 0 or sync.contains(i, x_k):
            if plan.covers(k):
                eigen[i] = project(plan.suffix(k), i)
            else:
                eigen[i] = Trajectory(k, (x_k[i],))
            belief[i] = eigen[i]
        else:
            eigen[i] = _from_step(eigen[i], k)
            belief[i] = _from_step(belief[i], k)
    return PlanBeliefs(k, _from_step(plan, k), tuple(eigen), tuple(belief))


def upload(beliefs: PlanBeliefs, sync: SyncStates, x_k: tuple, k: int) -> PlanBeliefs:
    """Agents in sync report their current eigen plan to the planner."""
    belief = list(beliefs.planner_belief)
    for i in range(beliefs.n_agents):
        if sync.contains(i, x_k):
            belief[i] = _from_step(beliefs.eigen[i], k)
    return replace(beliefs, planner_belief=tuple(belief))


def next_sync_step(plan: Trajectory, sync: SyncStates, agent: int, after: int) -> int | None:
    """First step after ``after`` where the plan puts ``agent`` in sync, or None within the plan's span."""
    for j in range(max(after + 1, plan.start_step), plan.end_step + 1):
        if sync.contains(agent, plan.at(j)):
            return j
    return None


def sync_steps(plan: Trajectory, sync: SyncStates, agent: int, after: int) -> list[int]:
    """Every step after ``after`` in the plan's span where ``agent`` is in sync."""
    return [
        j
        for j in range(max(after + 1, plan.start_step), plan.end_step + 1)
        if sync.contains(agent, plan.at(j))
    ]


def divergence(beliefs: PlanBeliefs, agent: int) -> list[int]:
    """Steps (from the current one) where agent's eigen plan differs from the global plan."""
    eigen = beliefs.eigen[agent]
    plan = beliefs.global_plan
    lo = max(beliefs.step, eigen.start_step, plan.start_step)
    hi = min(eigen.end_step, plan.end_step)
    out = [j for j in range(lo, hi + 1) if eigen.at(j) != plan.at(j)[agent]]
    # one side ending early also counts from the point the other continues
    if eigen.end_step != plan.end_step and hi >= lo:
        out.extend(range(hi + 1, max(eigen.end_step, plan.end_step) + 1))
    return out
