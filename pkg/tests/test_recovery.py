import random

import pytest

from episync.recovery import (
    ReachQuery,
    Unrecoverable,
    backward_reach,
    is_recoverable_within,
    min_recovery_steps,
    recover,
    recovery_bridge,
)
from episync.transition_system import Trajectory, validate_trajectory

from conftest import line_system, random_digraph


def paths_of_length(system, n, start=None):
    """Every state sequence with n transitions (optionally from ``start``)."""
    starts = [start] if start is not None else list(system.states)
    out = [(x,) for x in starts]
    for _ in range(n):
        out = [p + (y,) for p in out for y in system.successors(p[-1])]
    return out


def brute_reach(system, target, n):
    return frozenset(p[0] for p in paths_of_length(system, n) if p[-1] == target)


def test_reach_matches_brute_force_on_random_digraphs():
    rng = random.Random(7)
    for _ in range(100):
        size = rng.randint(2, 50)
        s = random_digraph(rng, size, rng.uniform(1.0 / size, min(1.0, 3.0 / size)))
        target = rng.randrange(size)
        n = rng.randint(0, 4)
        assert backward_reach(ReachQuery(s, target, n)) == brute_reach(s, target, n)


def test_reach_examples():
    s = line_system(4, stay=False)
    assert backward_reach(ReachQuery(s, 0, 0)) == {0}
    assert backward_reach(ReachQuery(s, 0, 2)) == {0, 2}
    with pytest.raises(ValueError):
        ReachQuery(s, 0, 5, n_max=4)


def test_min_recovery_is_minimal():
    rng = random.Random(11)
    checked = 0
    for _ in range(200):
        size = rng.randint(3, 12)
        s = random_digraph(rng, size, 0.35)
        walk = paths_of_length(s, 0, rng.randrange(size))[0]
        for _ in range(8):
            succ = list(s.successors(walk[-1]))
            if not succ:
                break
            walk += (rng.choice(succ),)
        eigen = Trajectory(0, walk)
        k = rng.randrange(len(walk))
        x = rng.randrange(size)
        if x == eigen.at(k):
            continue
        brute = [n for n in range(1, eigen.end_step - k + 1) if x in brute_reach(s, eigen.at(k + n), n)]
        try:
            n = min_recovery_steps(s, x, eigen, k)
        except Unrecoverable:
            assert brute == []
            continue
        checked += 1
        assert n == brute[0]
        assert is_recoverable_within(s, x, eigen, k, n)
        assert not any(is_recoverable_within(s, x, eigen, k, m) for m in range(1, n))
    assert checked > 30


def test_bridge_is_lexicographically_smallest():
    rng = random.Random(3)
    for _ in range(80):
        size = rng.randint(3, 8)
        s = random_digraph(rng, size, 0.4)
        x, n = rng.randrange(size), rng.randint(1, 4)
        candidates = [p for p in paths_of_length(s, n, x)]
        if not candidates:
            continue
        target = rng.choice(candidates)[-1]
        best = min(p for p in candidates if p[-1] == target)
        assert recovery_bridge(s, x, target, n) == best


def test_recover_rejoins_old_suffix():
    s = line_system(6)
    eigen = Trajectory(0, (0, 1, 2, 3, 4, 5))
    new, n = recover(s, 3, eigen, 1)
    assert n == 1
    assert new.start_step == 1 and new.states == (3, 2, 3, 4, 5)
    assert validate_trajectory(s, new.states)


def test_not_a_disturbance_and_unrecoverable():
    s = line_system(6, stay=False)
    eigen = Trajectory(0, (0, 1, 2, 3))
    with pytest.raises(ValueError):
        min_recovery_steps(s, 1, eigen, 1)
    with pytest.raises(Unrecoverable):
        min_recovery_steps(s, 4, eigen, 1)
    with pytest.raises(Unrecoverable):
        min_recovery_steps(s, 2, eigen, 3)


def test_recoverable_within_exact_count():
    s = line_system(6, stay=False)
    eigen = Trajectory(0, (0, 1, 2, 3, 2, 1))
    # from 5 at step 1 the plan is two cells away and keeps moving
    assert [n for n in range(6) if is_recoverable_within(s, 5, eigen, 1, n)] == [2, 3, 4]
    assert not is_recoverable_within(s, 5, eigen, 1, 9)
