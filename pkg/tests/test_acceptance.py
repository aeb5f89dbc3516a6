"""End-to-end acceptance checks; each prints one PASS/FAIL line.

Run with ``pytest -m acceptance -s`` or directly as ``python3 tests/test_acceptance.py``.
"""

import functools
import os
import random
import sys
import tempfile
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import random_digraph, sync_mission, task_mission  # noqa: E402
from test_recovery import brute_reach  # noqa: E402

from episync.executor import (  # noqa: E402
    EPISODE_COLUMNS,
    AGGREGATE_COLUMNS,
    DisturbanceModel,
    ScriptedDisturbance,
    check_recovery_conditions,
    run_episode,
    sweep,
)
from episync.recovery import ReachQuery, backward_reach  # noqa: E402
from episync.scenario import (  # noqa: E402
    EnergyConfig,
    build_scenario,
    default_config,
    power_uav,
    power_ugv,
    random_scenario_config,
)
from episync.traceio import csv_text, write_trace_jsonl  # noqa: E402

pytestmark = pytest.mark.acceptance

LEVELS = [0.0, 0.04, 0.08, 0.12, 0.16, 0.2]
DISTURBED_PROBS = [round(0.02 * j, 2) for j in range(1, 11)]
DUMP_DIR = Path(os.environ.get("EPISYNC_COUNTEREXAMPLES", tempfile.gettempdir())) / "episync-counterexamples"


# collected for the pytest terminal summary (see conftest)
LINES = []


def report(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    LINES.append(line)
    print(line, flush=True)
    return ok


def spearman(xs, ys):
    def ranks(v):
        order = sorted(range(len(v)), key=lambda i: v[i])
        r = [0.0] * len(v)
        i = 0
        while i < len(order):
            j = i
            while j + 1 < len(order) and v[order[j + 1]] == v[order[i]]:
                j += 1
            for t in range(i, j + 1):
                r[order[t]] = (i + j) / 2
            i = j + 1
        return r

    rx, ry = ranks(xs), ranks(ys)
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    var = (sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry)) ** 0.5
    return cov / var if var else 0.0


# cached suites, shared by the prefix-preservation check


@functools.lru_cache(maxsize=None)
def undisturbed_suite():
    t0 = time.perf_counter()
    out = []
    for e in range(200):
        sc = build_scenario(random_scenario_config(f"undisturbed:{e}"))
        out.append((sc, run_episode(sc)))
    return out, time.perf_counter() - t0


@functools.lru_cache(maxsize=None)
def disturbed_suite():
    t0 = time.perf_counter()
    out = []
    for e in range(500):
        sc = build_scenario(random_scenario_config(f"disturbed:{e}"))
        p = DISTURBED_PROBS[e % len(DISTURBED_PROBS)]
        r = run_episode(sc, DisturbanceModel(p, 1, f"disturbed:{e}"))
        out.append((sc, r, check_recovery_conditions(r.trace, sc.system)))
    return out, time.perf_counter() - t0


@functools.lru_cache(maxsize=None)
def desk_sweep():
    rows, agg = sweep(default_config(), LEVELS, 50, seed="desk", jobs=1)
    return rows, agg


# criteria


def check_undisturbed_satisfaction():
    results, elapsed = undisturbed_suite()
    done = sum(r.satisfied for _, r in results)
    ok = done == len(results) and elapsed < 60
    return report(
        "undisturbed satisfaction",
        ok,
        f"{done}/{len(results)} random episodes satisfied in {elapsed:.1f}s (need 100% in under 60s)",
    )


def check_disturbed_satisfaction():
    results, elapsed = disturbed_suite()
    passing = [(sc, r) for sc, r, c in results if c.passes]
    bad = [(sc, r) for sc, r in passing if not r.satisfied]
    for n, (_, r) in enumerate(bad):
        DUMP_DIR.mkdir(parents=True, exist_ok=True)
        write_trace_jsonl(r.trace, DUMP_DIR / f"counterexample-{n}.jsonl")
    ok = not bad and elapsed < 300 and passing
    where = f"; traces in {DUMP_DIR}" if bad else ""
    return report(
        "satisfaction when conditions hold",
        ok,
        f"{len(passing) - len(bad)}/{len(passing)} condition-passing episodes satisfied "
        f"({len(results)} run, {elapsed:.1f}s, need 100% in under 300s){where}",
    )


def check_recovery_bound_fixtures():
    def run(mission, detour):
        return run_episode(mission, DisturbanceModel(script=[ScriptedDisturbance(1, 2, detour)]))

    def sync_steps(r):
        return {row.step for row in r.trace.of("Sync") if row.agent == 1}

    def task_hits(r):
        return {(row.payload["label"], row.step) for row in r.trace.of("TaskSatisfied")}

    exact_sync = run(sync_mission(), "D")
    late_sync = run(sync_mission(), "E")
    exact_task = run(task_mission(), "D")
    late_task = run(task_mission(), "E")
    cases = {
        "sync reached when recovery ends on the sync step": 4 in sync_steps(exact_sync),
        "sync missed when recovery takes one step more": 4 not in sync_steps(late_sync),
        "task reached when recovery ends on the task step": ("S", 3) in task_hits(exact_task),
        "task missed when recovery takes one step more": ("S", 3) not in task_hits(late_task),
    }
    failed = [k for k, v in cases.items() if not v]
    return report("recovery bound fixtures", not failed, f"{4 - len(failed)}/4 cases as expected" + (f", failed: {failed}" if failed else ""))


def check_reach_oracle():
    rng = random.Random("reach-oracle")
    mismatches = 0
    for _ in range(100):
        size = rng.randint(2, 50)
        s = random_digraph(rng, size, rng.uniform(1.0 / size, min(1.0, 3.0 / size)))
        target, n = rng.randrange(size), rng.randint(0, 4)
        if backward_reach(ReachQuery(s, target, n)) != brute_reach(s, target, n):
            mismatches += 1
    return report("reach oracle", mismatches == 0, f"{mismatches} mismatches on 100 random digraphs (need 0)")


def check_prefix_preservation():
    undisturbed, _ = undisturbed_suite()
    disturbed, _ = disturbed_suite()
    rows, _ = desk_sweep()
    replans = sum(r.replans for _, r in undisturbed) + sum(r.replans for _, r, _ in disturbed)
    replans += sum(row["replans"] for row in rows)
    violations = sum(len(r.replan_violations) for _, r in undisturbed)
    violations += sum(len(r.replan_violations) for _, r, _ in disturbed)
    violations += sum(row["replan_violations"] for row in rows)
    return report("prefix preservation", violations == 0, f"{violations} violations over {replans} replans (need 0)")


def check_degradation_trend():
    _, agg = desk_sweep()
    means = [a["mean_task_time"] for a in agg]
    rho = spearman(LEVELS, means)
    aborts = [a["abort_rate"] for a in agg]
    inversions = sum(1 for a, b in zip(aborts, aborts[1:]) if b < a)
    ok = rho > 0.8 and inversions <= 1
    table = ", ".join(f"{lv}:{m:.2f}/{ab:.2f}" for lv, m, ab in zip(LEVELS, means, aborts))
    return report(
        "degradation with disturbance level",
        ok,
        f"spearman {rho:.3f} (need > 0.8), abort-rate inversions {inversions} (allow 1); "
        f"level:mean_task_time/abort_rate {table}",
    )


def check_determinism():
    rows, agg = desk_sweep()
    rows2, agg2 = sweep(default_config(), LEVELS, 50, seed="desk", jobs=1)
    same = csv_text(rows, EPISODE_COLUMNS) == csv_text(rows2, EPISODE_COLUMNS) and csv_text(
        agg, AGGREGATE_COLUMNS
    ) == csv_text(agg2, AGGREGATE_COLUMNS)
    return report("determinism", same, "repeated sweep CSVs " + ("identical" if same else "differ"))


def check_energy_constants():
    e = EnergyConfig()
    values = {
        "ugv power at rest": (power_ugv(0), 374.115),
        "uav power at rest": (power_uav(0), 241.08),
        "ugv power at 1 m/s": (power_ugv(1), 862.155),
        "ugv capacity J": (e.ugv_capacity_J, 25.01e6),
        "uav capacity J": (e.uav_capacity_J, 287.7e3),
    }
    off = [k for k, (got, want) in values.items() if abs(got - want) > 1e-9 * abs(want)]
    return report("energy constants", not off, f"{len(values) - len(off)}/{len(values)} within rel 1e-9" + (f", off: {off}" if off else ""))


CHECKS = [
    check_undisturbed_satisfaction,
    check_disturbed_satisfaction,
    check_recovery_bound_fixtures,
    check_reach_oracle,
    check_prefix_preservation,
    check_degradation_trend,
    check_determinism,
    check_energy_constants,
]


@pytest.mark.parametrize("check", CHECKS, ids=[c.__name__.removeprefix("check_") for c in CHECKS])
def test_acceptance(check):
    assert check()


if __name__ == "__main__":
    results = [c() for c in CHECKS]
    sys.exit(0 if all(results) else 1)
