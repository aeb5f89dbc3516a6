"""Constraint solver for task-satisfying joint plans with pinned and sync-visit steps.

Two strategies share one search core:

``joint``
    Time-expanded breadth-first search over the product system.  Exact and
    complete within the horizon; only practical for small explicit systems.

``decomposed``
    The same search run per agent, each agent tracking which task classes it
    has visited.  Sync-visit constraints are split into agent-local conditions
    via ``SyncStates.requirements``.  A dynamic program over partitions of the
    task classes then picks the assignment minimizing the completion step.

Both minimize the step at which the last task class is first occupied.  Plans
are extended past completion until every pinned/sync-visit step is covered and,
when ``require_rest`` is set, every agent stands in a rest state at the end.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import prod
from typing import Any, Callable, Iterable, Sequence

from .sync_model import SyncStates
from .tasking import StateClass, TaskSiteAssignment, satisfies
from .transition_system import (
    AgentTransitionSystem,
    MultiAgentTransitionSystem,
    TransitionSystem,
    Trajectory,
)

log = logging.getLogger(__name__)

JOINT_STATE_LIMIT = 20_000


class Infeasible(Exception):
    """No plan within the horizon meets every constraint.

    ``constraint`` names the first constraint class found violated: one of
    ``pin``, ``sync``, ``rest``, ``task``.
    """

    def __init__(self, constraint: str, detail: str = ""):
        super().__init__(f"infeasible ({constraint}): {detail}" if detail else f"infeasible ({constraint})")
        self.constraint = constraint
        self.detail = detail


class PlanAuditError(AssertionError):
    """A produced plan failed the independent constraint audit."""


@dataclass(frozen=True)
class PinConstraint:
    """Agent ``agent`` must be in ``state`` at ``step``."""

    agent: int
    step: int
    state: Any


@dataclass(frozen=True)
class SyncVisitConstraint:
    """The joint state at ``step`` must be a sync state for ``agent``.

    ``witness`` is a joint state known to satisfy the membership (the old
    plan's state at that step); it lets the decomposed solver derive
    agent-local sufficient conditions.
    """

    agent: int
    step: int
    witness: tuple | None = None


@dataclass(frozen=True)
class SolveRequest:
    system: MultiAgentTransitionSystem
    start: tuple
    start_step: int
    assignment: TaskSiteAssignment
    sync: SyncStates | None = None
    pins: tuple[PinConstraint, ...] = ()
    sync_visits: tuple[SyncVisitConstraint, ...] = ()
    horizon: int = 200
    require_rest: bool = True
    strategy: str = "auto"

    def __post_init__(self):
        object.__setattr__(self, "pins", tuple(self.pins))
        object.__setattr__(self, "sync_visits", tuple(self.sync_visits))
        if not isinstance(self.assignment, TaskSiteAssignment):
            object.__setattr__(self, "assignment", TaskSiteAssignment(self.assignment))
        self.system.require(self.start)
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        if self.strategy not in ("auto", "joint", "decomposed"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        for p in self.pins:
            if p.step < self.start_step:
                raise ValueError(f"pin {p} lies before the start step {self.start_step}")
            if p.step == self.start_step and self.start[p.agent] != p.state:
                raise ValueError(f"pin {p} contradicts the start state")
        for v in self.sync_visits:
            if v.step <= self.start_step:
                raise ValueError(f"sync visit {v} must lie after the start step {self.start_step}")
        if self.sync_visits and self.sync is None:
            raise ValueError("sync-visit constraints need the sync states")

    @property
    def end_limit(self) -> int:
        return self.start_step + self.horizon


# --------------------------------------------------------------------------
# search core


class _Label:
    __slots__ = ("state", "mask", "res", "parent")

    def __init__(self, state, mask, res, parent):
        self.state = state
        self.mask = mask
        self.res = res
        self.parent = parent

    def path(self) -> list:
        out = []
        lab = self
        while lab is not None:
            out.append(lab.state)
            lab = lab.parent
        out.reverse()
        return out


class _Layer:
    """One time layer of labels with Pareto pruning per dominance key."""

    def __init__(self):
        self.groups: dict[Any, list[_Label]] = {}

    def offer(self, key, lab: _Label) -> None:
        group = self.groups.get(key)
        if group is None:
            self.groups[key] = [lab]
            return
        m, r = lab.mask, lab.res
        for g in group:
            if (g.mask | m) == g.mask and g.res >= r:
                return
        group[:] = [g for g in group if not ((m | g.mask) == m and r >= g.res)]
        group.append(lab)

    def labels(self) -> list[_Label]:
        return [lab for group in self.groups.values() for lab in group]


class _Search:
    """Time-expanded search for one system (an agent, or the whole product)."""

    def __init__(
        self,
        system: TransitionSystem,
        start,
        start_step: int,
        constraints: dict[int, list[Callable[[Any], bool]]],
        classes: Sequence[Callable[[Any], bool]],
        last_exact: int,
        require_rest: bool,
        end_limit: int,
    ):
        self.system = system
        self.start = start
        self.k = start_step
        self.constraints = constraints
        self.classes = tuple(classes)
        self.full = (1 << len(self.classes)) - 1
        self.last_exact = last_exact
        self.last_constraint = max(constraints, default=start_step)
        self.require_rest = require_rest
        self.end_limit = end_limit
        self._bits: dict[Any, int] = {}
        self._succ: dict[Any, tuple] = {}
        self._cont: dict[tuple, tuple | None] = {}

    def ok(self, t: int, s) -> bool:
        preds = self.constraints.get(t)
        if preds is not None:
            for p in preds:
                if not p(s):
                    return False
        return not self.require_rest or self.system.rest_possible(s)

    def bits(self, s) -> int:
        b = self._bits.get(s)
        if b is None:
            b = 0
            for j, pred in enumerate(self.classes):
                if pred(s):
                    b |= 1 << j
            self._bits[s] = b
        return b

    def succ(self, s) -> tuple:
        out = self._succ.get(s)
        if out is None:
            out = self._succ[s] = tuple(self.system.successors(s))
        return out

    def keyed(self, t: int, s) -> tuple[Any, float]:
        if t <= self.last_exact:
            return s, 0
        return self.system.dominance(s)

    def at_rest(self, s) -> bool:
        return not self.require_rest or self.system.is_rest(s)

    def continuation(self, s, t: int, end_at: int | None = None) -> tuple | None:
        """States for steps t+1.. reaching rest after every constrained step, or None."""
        memo_key = None
        if end_at is None:
            memo_key = (s, t) if t < self.last_constraint else (s, None)
            if memo_key in self._cont:
                return self._cont[memo_key]
        result = self._continue(s, t, end_at)
        if memo_key is not None:
            self._cont[memo_key] = result
        return result

    def _continue(self, s, t: int, end_at: int | None) -> tuple | None:
        limit = self.end_limit if end_at is None else end_at
        layer = [_Label(s, 0, 0, None)]
        best_after: dict[Any, float] = {}
        tt = t
        while layer:
            if tt >= self.last_constraint and (end_at is None or tt == end_at):
                for lab in layer:
                    if self.at_rest(lab.state):
                        return tuple(lab.path()[1:])
            if tt >= limit:
                return None
            nxt = _Layer()
            free = tt + 1 > self.last_constraint and end_at is None
            for lab in layer:
                for s2 in self.succ(lab.state):
                    if not self.ok(tt + 1, s2):
                        continue
                    key, res = self.keyed(tt + 1, s2)
                    if free:
                        seen = best_after.get(key)
                        if seen is not None and seen >= res:
                            continue
                    nxt.offer(key, _Label(s2, 0, res, lab))
            layer = nxt.labels()
            if free:
                for lab in layer:
                    key, res = self.keyed(tt + 1, lab.state)
                    best_after[key] = max(res, best_after.get(key, res))
            tt += 1
        return None

    def explore(self, bound: int) -> dict[int, tuple[int, _Label, tuple]]:
        """First viable time for each visited-class mask, up to step ``bound``."""
        first: dict[int, tuple[int, _Label, tuple]] = {}
        if not self.ok(self.k, self.start):
            return first
        _, res0 = self.keyed(self.k, self.start)
        layer = [_Label(self.start, self.bits(self.start), res0, None)]
        t = self.k
        while layer:
            for lab in layer:
                m = lab.mask
                if m in first or any((f | m) == f for f in first):
                    continue
                cont = self.continuation(lab.state, t)
                if cont is not None:
                    first[m] = (t, lab, cont)
            if self.full in first or t >= bound:
                break
            nxt = _Layer()
            for lab in layer:
                for s2 in self.succ(lab.state):
                    if not self.ok(t + 1, s2):
                        continue
                    key, res = self.keyed(t + 1, s2)
                    nxt.offer(key, _Label(s2, lab.mask | self.bits(s2), res, lab))
            layer = nxt.labels()
            t += 1
        return first


# --------------------------------------------------------------------------
# strategies


def _class_pred(cls: StateClass, agent: int | None) -> Callable[[Any], bool]:
    if agent is None:
        return lambda x: x in cls
    return lambda x: cls.satisfied_by(agent, x)


def _equals(value) -> Callable[[Any], bool]:
    return lambda x: x == value


def _component_equals(agent: int, value) -> Callable[[Any], bool]:
    return lambda x: x[agent] == value


def _joint_member(sync: SyncStates, agent: int) -> Callable[[Any], bool]:
    return lambda x: sync.contains(agent, x)


def _diagnose(req: SolveRequest, search_factory) -> Infeasible:
    """Name the first constraint class that alone is unsatisfiable."""
    for name, keep_pins, keep_visits in (("pin", True, False), ("sync", True, True)):
        probe = search_factory(keep_pins, keep_visits, False)
        if all(probe_i.explore(probe_i.k) == {} for probe_i in probe):
            if any(p.explore(p.end_limit) == {} for p in probe):
                return Infeasible(name, "constraints cannot be met within the horizon")
    probe = search_factory(True, True, True)
    if any(p.explore(p.end_limit) == {} for p in probe):
        return Infeasible("rest", "no rest state reachable after the constrained steps")
    return Infeasible("task", "task classes cannot all be satisfied within the horizon")


def _solve_joint(req: SolveRequest) -> Trajectory:
    classes = list(req.assignment)

    def build(keep_pins: bool, keep_visits: bool, rest: bool) -> list[_Search]:
        constraints: dict[int, list] = {}
        last_exact = req.start_step - 1
        if keep_pins:
            for p in req.pins:
                constraints.setdefault(p.step, []).append(_component_equals(p.agent, p.state))
                last_exact = max(last_exact, p.step)
        if keep_visits:
            for v in req.sync_visits:
                constraints.setdefault(v.step, []).append(_joint_member(req.sync, v.agent))
        return [
            _Search(
                req.system,
                req.start,
                req.start_step,
                constraints,
                [] if not rest else [_class_pred(c, None) for c in classes],
                last_exact,
                req.require_rest and rest,
                req.end_limit,
            )
        ]

    search = build(True, True, True)[0]
    first = search.explore(req.end_limit)
    if search.full not in first:
        raise _diagnose(req, build)
    t, label, cont = first[search.full]
    return Trajectory(req.start_step, tuple(label.path()) + cont)


def _agent_constraints(req: SolveRequest, keep_pins=True, keep_visits=True):
    n = req.system.n_agents
    constraints: list[dict[int, list]] = [{} for _ in range(n)]
    last_exact = [req.start_step - 1] * n
    if keep_pins:
        for p in req.pins:
            constraints[p.agent].setdefault(p.step, []).append(_equals(p.state))
            last_exact[p.agent] = max(last_exact[p.agent], p.step)
    if keep_visits:
        for v in req.sync_visits:
            for j, pred in req.sync.requirements(v.agent, v.witness).items():
                constraints[j].setdefault(v.step, []).append(pred)
    return constraints, last_exact


def _solve_decomposed(req: SolveRequest) -> Trajectory:
    system = req.system
    n = system.n_agents
    classes = list(req.assignment)
    m = len(classes)
    full = (1 << m) - 1

    def build(keep_pins: bool, keep_visits: bool, rest: bool) -> list[_Search]:
        constraints, last_exact = _agent_constraints(req, keep_pins, keep_visits)
        return [
            _Search(
                system.agents[i],
                req.start[i],
                req.start_step,
                constraints[i],
                [_class_pred(c, i) for c in classes] if rest else [],
                last_exact[i],
                req.require_rest and rest,
                req.end_limit,
            )
            for i in range(n)
        ]

    searches = build(True, True, True)
    bound = req.end_limit
    firsts = []
    for s in searches:
        f = s.explore(bound)
        if not f:
            raise _diagnose(req, build)
        firsts.append(f)
        if full in f:
            bound = min(bound, f[full][0])

    inf = float("inf")
    # cost[i][S]: earliest viable time agent i has visited at least S, and the mask used
    cost: list[list[tuple[float, int]]] = []
    for f in firsts:
        row = []
        for S in range(full + 1):
            best = (inf, -1)
            for M, (t, _, _) in f.items():
                if (M & S) == S and (t, M) < best:
                    best = (t, M)
            row.append(best)
        cost.append(row)

    # g[i][U]: best max-completion covering U using agents 0..i
    g = [[(inf, None)] * (full + 1) for _ in range(n)]
    for U in range(full + 1):
        g[0][U] = (cost[0][U][0], U)
    for i in range(1, n):
        for U in range(full + 1):
            best = (inf, None)
            S = U
            while True:
                val = max(g[i - 1][U ^ S][0], cost[i][S][0])
                if val < best[0]:
                    best = (val, S)
                if S == 0:
                    break
                S = (S - 1) & U
            g[i][U] = best
    if g[n - 1][full][0] == inf:
        raise _diagnose(req, build)

    shares = [0] * n
    U = full
    for i in range(n - 1, -1, -1):
        S = g[i][U][1]
        shares[i] = S
        U ^= S

    paths = []
    for i, s in enumerate(searches):
        t, M = cost[i][shares[i]]
        _, label, cont = firsts[i][M]
        paths.append(label.path() + list(cont))
    end = max(len(p) for p in paths)
    for i, p in enumerate(paths):
        if len(p) < end:
            paths[i] = _pad(searches[i], p, req.start_step, end)
    return Trajectory(req.start_step, tuple(zip(*paths)))


def _pad(search: _Search, path: list, k: int, end: int) -> list:
    out = list(path)
    while len(out) < end:
        nxt = search.system.idle(out[-1])
        if nxt is None or not search.at_rest(nxt):
            break
        out.append(nxt)
    if len(out) == end:
        return out
    # idling is not enough: route again so the agent reaches rest exactly at the end
    t_done = k + len(path) - 1
    for cut in range(len(path) - 1, -1, -1):
        t = k + cut
        if t < search.last_constraint and cut != len(path) - 1:
            continue
        cont = search.continuation(path[cut], t, end_at=k + end - 1)
        if cont is not None:
            return list(path[: cut + 1]) + list(cont)
    raise Infeasible("rest", f"agent path ending at step {t_done} cannot be aligned to step {k + end - 1}")


def choose_strategy(req: SolveRequest) -> str:
    if req.strategy != "auto":
        return req.strategy
    agents = req.system.agents
    if all(isinstance(a, AgentTransitionSystem) for a in agents):
        if prod(len(a) for a in agents) <= JOINT_STATE_LIMIT:
            return "joint"
    return "decomposed"


def audit_plan(req: SolveRequest, plan: Trajectory) -> list[str]:
    """Independent re-check of a plan against a request; returns violations."""
    problems = []
    k = req.start_step
    if plan.start_step != k:
        problems.append(f"plan starts at {plan.start_step}, expected {k}")
        return problems
    if plan.at(k) != req.start:
        problems.append("plan does not start at the requested state")
    if plan.end_step > req.end_limit:
        problems.append(f"plan ends at {plan.end_step}, beyond the horizon {req.end_limit}")
    for j in range(plan.start_step, plan.end_step):
        if not req.system.has_transition(plan.at(j), plan.at(j + 1)):
            problems.append(f"no transition between steps {j} and {j + 1}")
            break
    ok, _ = satisfies(plan, req.assignment)
    if not ok:
        problems.append("plan does not satisfy the task site assignment")
    for p in req.pins:
        if not plan.covers(p.step) or plan.at(p.step)[p.agent] != p.state:
            problems.append(f"pin violated: agent {p.agent} at step {p.step}")
    for v in req.sync_visits:
        if not plan.covers(v.step) or not req.sync.contains(v.agent, plan.at(v.step)):
            problems.append(f"sync visit violated: agent {v.agent} at step {v.step}")
    if req.require_rest and not req.system.is_rest(plan.states[-1]):
        problems.append("plan does not end at rest")
    return problems


def solve(req: SolveRequest) -> Trajectory:
    """A task-satisfying plan honoring every pin and sync visit, or raise Infeasible."""
    strategy = choose_strategy(req)
    plan = _solve_joint(req) if strategy == "joint" else _solve_decomposed(req)
    problems = audit_plan(req, plan)
    if problems:
        raise PlanAuditError(f"{strategy} solver produced an invalid plan: {problems}")
    log.debug("solved from step %d with %s strategy: %d steps", req.start_step, strategy, plan.length)
    return plan


@dataclass
class ConstraintSolver:
    """A solver bound to one system; what the planner calls each replan."""

    system: MultiAgentTransitionSystem
    sync: SyncStates | None = None
    horizon: int = 200
    require_rest: bool = True
    strategy: str = "auto"
    calls: int = field(default=0, compare=False)

    def __call__(
        self,
        start: tuple,
        start_step: int,
        assignment: TaskSiteAssignment,
        pins: Iterable[PinConstraint] = (),
        sync_visits: Iterable[SyncVisitConstraint] = (),
    ) -> Trajectory:
        self.calls += 1
        return solve(
            SolveRequest(
                self.system,
                start,
                start_step,
                assignment,
                self.sync,
                tuple(pins),
                tuple(sync_visits),
                self.horizon,
                self.require_rest,
                self.strategy,
            )
        )
