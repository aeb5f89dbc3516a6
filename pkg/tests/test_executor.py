import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from episync.executor import (
    DisturbanceModel,
    EpisodeTrace,
    IncompleteTrace,
    ScriptedDisturbance,
    TraceOrderError,
    check_recovery_conditions,
    run_episode,
    sweep,
)
from episync.scenario import default_config
from episync.tasking import TaskUpdate, satisfies

from conftest import rendezvous_mission, site, sync_mission, task_mission


def scripted(agent, step, state):
    return DisturbanceModel(script=[ScriptedDisturbance(agent, step, state)])


def test_undisturbed_desk_episode(desk):
    r = run_episode(desk)
    assert r.satisfied and not r.aborted
    assert r.task_time == r.baseline_task_time == 5
    assert r.disturbances == 0 and r.replan_violations == []
    assert satisfies(r.realized, desk.assignment)[0]
    assert r.trace.terminal.event == "Done"
    report = check_recovery_conditions(r.trace, desk.system)
    assert report.passes and report.details == ()


def test_runs_are_deterministic(desk):
    a = run_episode(desk, DisturbanceModel(0.15, 1, "x"))
    b = run_episode(desk, DisturbanceModel(0.15, 1, "x"))
    assert a.trace.rows == b.trace.rows
    c = run_episode(desk, DisturbanceModel(0.15, 1, "y"))
    assert c.trace.rows != a.trace.rows


def test_scripted_disturbance_rows():
    r = run_episode(sync_mission(), scripted(1, 2, "D"))
    events = [(row.step, row.event, row.agent) for row in r.trace.rows if row.event != "State"]
    assert (2, "Disturbance", 1) in events and (2, "Recovery", 1) in events
    dist = r.trace.of("Disturbance")[0]
    assert dist.payload["planned"] == "S" and dist.payload["realized"] == "D"
    assert r.trace.of("Recovery")[0].payload["bridge"] == ["D", "D2", "H"]
    assert r.satisfied and r.replan_violations == []


def test_recovery_meets_sync_step_exactly():
    r = run_episode(sync_mission(), scripted(1, 2, "D"))
    assert [row.step for row in r.trace.of("Sync") if row.agent == 1] == [0, 4]


def test_recovery_one_step_too_slow_misses_sync_step():
    r = run_episode(sync_mission(), scripted(1, 2, "E"))
    assert r.trace.of("Disturbance")[0].payload["n_star"] == 3
    assert 4 not in [row.step for row in r.trace.of("Sync")]
    report = check_recovery_conditions(r.trace, sync_mission().system)
    assert not report.c2 and not report.passes


def test_recovery_meets_task_step_exactly():
    r = run_episode(task_mission(), scripted(1, 2, "D"))
    assert ("S", 3) in [(row.payload["label"], row.step) for row in r.trace.of("TaskSatisfied")]
    report = check_recovery_conditions(r.trace, task_mission().system)
    assert report.passes and r.satisfied


def test_recovery_one_step_too_slow_misses_task_step():
    r = run_episode(task_mission(), scripted(1, 2, "E"))
    assert ("S", 3) not in [(row.payload["label"], row.step) for row in r.trace.of("TaskSatisfied")]
    report = check_recovery_conditions(r.trace, task_mission().system)
    assert report.c2 and not report.c3


def test_unrecoverable_disturbance_aborts():
    m = rendezvous_mission([("P1", "S"), ("S", "P2"), ("P1", "X"), ("X", "X")], ["S"])
    r = run_episode(m, scripted(1, 2, "X"))
    assert r.aborted and r.abort_reason == "unrecoverable"
    assert r.trace.of("Disturbance")[0].payload["n_star"] is None
    assert r.trace.of("Recovery") == []
    assert not check_recovery_conditions(r.trace, m.system).premises


def test_infeasible_start_aborts():
    m = rendezvous_mission([("P1", "P2")], ["nowhere"])
    r = run_episode(m)
    assert r.abort_reason == "infeasible"
    assert r.trace.terminal.event == "Abort"


def test_scripted_state_must_be_a_transition():
    with pytest.raises(ValueError):
        run_episode(sync_mission(), scripted(1, 2, "H"))


def test_task_addition_violates_c1():
    m = sync_mission()
    m.updates[1] = TaskUpdate(added=(site("P2", "P2"),))
    r = run_episode(m)
    assert r.satisfied
    assert r.trace.of("TaskUpdateApplied")[0].payload["added"] == ["P2"]
    report = check_recovery_conditions(r.trace, m.system)
    assert not report.c1 and not report.passes


def test_task_removal_keeps_c1():
    m = task_mission()
    m.updates[1] = TaskUpdate(removed=frozenset({"Q"}))
    r = run_episode(m)
    assert r.satisfied and r.task_time == 3
    assert check_recovery_conditions(r.trace, m.system).c1


def test_checker_needs_a_finished_trace():
    with pytest.raises(IncompleteTrace):
        check_recovery_conditions(EpisodeTrace(), sync_mission().system)


def test_trace_ordering_is_enforced():
    t = EpisodeTrace()
    t.add(1, "Sync", 1)
    with pytest.raises(TraceOrderError):
        t.add(1, "Disturbance", 1)
    with pytest.raises(TraceOrderError):
        t.add(0, "State")
    t.add(2, "Done")
    with pytest.raises(TraceOrderError):
        t.add(2, "Done")


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 3), st.integers(0, 60))
def test_disturbances_are_nested_across_levels(p, q, agent, step):
    lo, hi = sorted((p, q))
    if DisturbanceModel(lo, seed="s").fires(agent, step):
        assert DisturbanceModel(hi, seed="s").fires(agent, step)


def test_disturbance_model_validation():
    with pytest.raises(ValueError):
        DisturbanceModel(1.5)
    with pytest.raises(ValueError):
        DisturbanceModel(0.1, magnitude=0)


def test_small_sweep():
    rows, agg = sweep(default_config(), [0.0, 0.2], 4, seed="t")
    assert len(rows) == 8
    assert [a["level"] for a in agg] == [0.0, 0.2]
    assert agg[0]["completed"] == 4 and agg[0]["mean_task_time"] == 5
    assert all(a["counterexamples"] == 0 for a in agg)
    with pytest.raises(ValueError):
        sweep(default_config(), [0.2, 0.0], 1)
