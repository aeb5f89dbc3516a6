import pytest

from episync.planner import (
    NoFutureSync,
    audit_replan,
    build_constraints,
    plan_with_sync,
    plan_with_sync_disturbance,
)
from episync.solver import ConstraintSolver
from episync.sync_model import LocalSyncStates, PlanBeliefs, sync_update
from episync.tasking import TaskSiteAssignment
from episync.transition_system import Trajectory, compose

from conftest import line_system, site

SYSTEM = compose([line_system(5), line_system(5)])
SYNC = LocalSyncStates([None, lambda x: x == 0])
# agent 1 leaves home, visits 2 and comes back twice
OLD = Trajectory(0, tuple((0, y) for y in (0, 1, 2, 1, 0, 1, 0)))


def beliefs_at(k):
    b = sync_update(PlanBeliefs.initial(OLD), SYNC, OLD.at(0), 0)
    return PlanBeliefs(k, OLD, b.eigen, b.planner_belief)


def test_constraints_for_absent_agent():
    c = build_constraints(beliefs_at(1), SYNC, (0, 1), 1, "alg3")
    assert c.absent == (1,)
    assert c.next_sync == {1: 4}
    assert [(p.step, p.state) for p in c.pins] == [(1, 1), (2, 2), (3, 1), (4, 0)]
    assert [v.step for v in c.sync_visits] == [4, 6]
    c1 = build_constraints(beliefs_at(1), SYNC, (0, 1), 1, "alg1")
    assert [v.step for v in c1.sync_visits] == [4]
    assert c1.pins == c.pins


def test_no_constraints_when_everyone_in_sync():
    c = build_constraints(beliefs_at(4), SYNC, (0, 0), 4)
    assert c.empty and c.absent == ()


def test_planner_uses_belief_for_absent_start():
    c = build_constraints(beliefs_at(2), SYNC, (0, 3), 2)
    assert c.start == (0, 2)


def test_no_future_sync():
    lost = Trajectory(0, tuple((0, y) for y in (0, 1, 2)))
    b = sync_update(PlanBeliefs.initial(lost), SYNC, lost.at(0), 0)
    with pytest.raises(NoFutureSync):
        build_constraints(PlanBeliefs(1, lost, b.eigen, b.planner_belief), SYNC, (0, 1), 1)


def test_unknown_mode():
    with pytest.raises(ValueError):
        build_constraints(beliefs_at(1), SYNC, (0, 1), 1, "alg2")


@pytest.mark.parametrize("strategy", ["joint", "decomposed"])
def test_replan_preserves_absent_prefix(strategy):
    solver = ConstraintSolver(SYSTEM, SYNC, horizon=30, strategy=strategy)
    tasks = TaskSiteAssignment([site("far", 4)])
    for fn in (plan_with_sync, plan_with_sync_disturbance):
        plan, c = fn(beliefs_at(1), SYNC, (0, 1), tasks, solver, 1)
        assert audit_replan(plan, c, SYNC) == []
        assert [plan.at(j)[1] for j in range(1, 5)] == [1, 2, 1, 0]


def test_audit_replan_flags_departures():
    c = build_constraints(beliefs_at(1), SYNC, (0, 1), 1)
    bad = Trajectory(1, tuple((0, y) for y in (1, 2, 3, 2, 1, 0)))
    problems = audit_replan(bad, c, SYNC)
    assert any("departs" in p for p in problems)
    assert any("misses" in p for p in problems)
