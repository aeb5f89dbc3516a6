"""Command-line front end.

Exit codes: 0 episode satisfied (or command succeeded), 2 episode aborted or
a condition counterexample found by ``audit``, 1 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from pydantic import ValidationError

from .executor import (
    AGGREGATE_COLUMNS,
    EPISODE_COLUMNS,
    DisturbanceModel,
    ScriptedDisturbance,
    check_recovery_conditions,
    run_episode,
    sweep,
)
from .scenario import ScenarioConfig, build_scenario, default_config, load_config
from .traceio import (
    RENDER_COLUMNS,
    TRACE_COLUMNS,
    TraceFormatError,
    dump_csv,
    read_trace_jsonl,
    render_positions,
    trace_rows,
    write_csv,
    write_trace_jsonl,
)

EXIT_OK, EXIT_USAGE, EXIT_ABORTED = 0, 1, 2

log = logging.getLogger("episync")


class ConfigError(Exception):
    pass


def _describe(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        where = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{where}: {e['msg']}")
    return "; ".join(parts)


def _load_scenario_config(path: str | None) -> ScenarioConfig:
    if path is None:
        return default_config()
    try:
        return load_config(path)
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}") from None
    except ValidationError as e:
        raise ConfigError(f"invalid scenario {path}: {_describe(e)}") from None


def _with_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    planner = {}
    if getattr(args, "horizon", None) is not None:
        planner["horizon"] = args.horizon
    if getattr(args, "mode", None) is not None:
        planner["mode"] = args.mode
    if not planner:
        return cfg
    raw = cfg.model_dump(mode="json", by_alias=True)
    raw["planner"].update(planner)
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid option: {_describe(e)}") from None


def _load_script(path: str | None, scenario) -> tuple:
    if path is None:
        return ()
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read disturbance script {path}: {e}") from None
    out = []
    for n, d in enumerate(raw):
        try:
            agent = int(d["agent"])
            sysm = scenario.system.agents[agent]
            state = sysm.decode_state(d["state"])
            sysm.require(state)
            out.append(ScriptedDisturbance(agent, int(d["step"]), state))
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise ConfigError(f"disturbance script entry {n}: {e}") from None
    return tuple(out)


def _parse_levels(text: str) -> list[float]:
    try:
        levels = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"--levels: cannot parse {text!r}") from None
    if not levels:
        raise ConfigError("--levels: at least one level is required")
    if any(not 0.0 <= lv <= 1.0 for lv in levels):
        raise ConfigError("--levels: probabilities must lie in [0, 1]")
    if levels != sorted(levels):
        raise ConfigError("--levels: levels must be ascending")
    return levels


def cmd_run(args) -> int:
    cfg = _with_overrides(_load_scenario_config(args.scenario), args)
    scenario = build_scenario(cfg)
    try:
        model = DisturbanceModel(
            args.disturbance_prob, args.magnitude, args.seed, _load_script(args.disturbance_script, scenario)
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    result = run_episode(scenario, model)
    report = check_recovery_conditions(result.trace, scenario.system)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format in (None, "jsonl"):
        write_trace_jsonl(result.trace, out / "trace.jsonl")
    if args.format in (None, "csv"):
        write_csv(trace_rows(result.trace), TRACE_COLUMNS, out / "trace.csv")
    summary = {
        "satisfied": result.satisfied,
        "aborted": result.aborted,
        "abort_reason": result.abort_reason,
        "task_time": result.task_time,
        "baseline_task_time": result.baseline_task_time,
        "disturbances": result.disturbances,
        "replans": result.replans,
        "replan_violations": len(result.replan_violations),
        "conditions": {
            "c1": report.c1,
            "c2": report.c2,
            "c3": report.c3,
            "premises": report.premises,
            "passes": report.passes,
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK if result.satisfied else EXIT_ABORTED


def cmd_sweep(args) -> int:
    cfg = _with_overrides(_load_scenario_config(args.scenario), args)
    levels = _parse_levels(args.levels)
    if args.episodes < 1:
        raise ConfigError("--episodes must be at least 1")
    if args.magnitude < 1:
        raise ConfigError("--magnitude must be at least 1")
    rows, agg = sweep(cfg, levels, args.episodes, args.seed, cfg.planner.mode, args.magnitude, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rows, EPISODE_COLUMNS, out / "episodes.csv")
    write_csv(agg, AGGREGATE_COLUMNS, out / "aggregate.csv")
    dump_csv(agg, AGGREGATE_COLUMNS, sys.stdout)
    return EXIT_OK


def cmd_trace_render(args) -> int:
    try:
        rows = render_positions(read_trace_jsonl(args.trace))
    except TraceFormatError as e:
        raise ConfigError(f"corrupt trace {args.trace}: {e}") from None
    if args.out:
        write_csv(rows, RENDER_COLUMNS, args.out)
    else:
        dump_csv(rows, RENDER_COLUMNS, sys.stdout)
    return EXIT_OK


def cmd_audit(args) -> int:
    try:
        trace = read_trace_jsonl(args.trace)
    except TraceFormatError as e:
        raise ConfigError(f"corrupt trace {args.trace}: {e}") from None
    if args.scenario is not None:
        cfg = _load_scenario_config(args.scenario)
    elif "scenario" in trace.meta:
        try:
            cfg = ScenarioConfig.model_validate(trace.meta["scenario"])
        except ValidationError as e:
            raise ConfigError(f"trace header scenario: {_describe(e)}") from None
    else:
        raise ConfigError("trace header has no scenario; pass --scenario")
    report = check_recovery_conditions(trace, build_scenario(cfg).system)
    satisfied = trace.terminal.event == "Done"
    violations = sum(len(r.payload.get("violations", [])) for r in trace.of("PlanRevision"))
    out = {
        "satisfied": satisfied,
        "c1": report.c1,
        "c2": report.c2,
        "c3": report.c3,
        "premises": report.premises,
        "passes": report.passes,
        "replan_violations": violations,
        "details": list(report.details),
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    counterexample = (report.passes and not satisfied) or violations > 0
    return EXIT_ABORTED if counterexample else EXIT_OK


def cmd_schema(args) -> int:
    print(json.dumps(ScenarioConfig.model_json_schema(by_alias=True), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="episync", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", help="scenario JSON file (default: built-in desk scenario)")
        p.add_argument("--seed", default="0", help="random seed (any string)")
        p.add_argument("--mode", choices=("alg1", "alg3"), help="replanning constraint mode")
        p.add_argument("--horizon", type=int, help="maximum plan length in steps")
        p.add_argument("--magnitude", type=int, default=1, help="steps per disturbance burst")
        p.add_argument("--out", required=True, help="output directory")

    run = sub.add_parser("run", help="run one episode and write its trace")
    common(run)
    run.add_argument("--disturbance-prob", type=float, default=0.0)
    run.add_argument("--disturbance-script", help="JSON list of {agent, step, state}")
    run.add_argument("--format", choices=("csv", "jsonl"), help="write only this trace format")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="episodes over disturbance levels")
    common(sw)
    sw.add_argument("--levels", default="0,0.02,0.04,0.06,0.08,0.1,0.12,0.14,0.16,0.18,0.2")
    sw.add_argument("--episodes", type=int, default=50)
    sw.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    sw.set_defaults(func=cmd_sweep)

    tr = sub.add_parser("trace-render", help="per-step agent position table from a JSONL trace")
    tr.add_argument("trace")
    tr.add_argument("--out", help="CSV file (default: stdout)")
    tr.set_defaults(func=cmd_trace_render)

    au = sub.add_parser("audit", help="check the satisfaction conditions on a JSONL trace")
    au.add_argument("trace")
    au.add_argument("--scenario", help="scenario JSON file (default: the one in the trace header)")
    au.set_defaults(func=cmd_audit)

    sc = sub.add_parser("schema", help="print the scenario config JSON schema")
    sc.set_defaults(func=cmd_schema)
    return ap


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("EPISYNC_LOG", "WARNING").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else "WARNING",
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
