"""Trace and table serialization: line-delimited JSON, flat CSV, position tables."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import IO, Iterable

from .executor import EVENT_PRIORITY, TRACE_SCHEMA, EpisodeTrace, TraceOrderError

TRACE_COLUMNS = [
    "step",
    "event",
    "agent",
    "label",
    "state",
    "planned",
    "realized",
    "n_star",
    "rejoin_step",
    "removed",
    "added",
    "pins",
    "sync_visits",
    "plan_hash",
    "reason",
    "task_time",
]
RENDER_COLUMNS = ["step", "agent", "x", "y", "e", "synced", "event"]


class TraceFormatError(ValueError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def dump_trace_jsonl(trace: EpisodeTrace, out: IO[str]) -> None:
    out.write(_dumps({"schema": TRACE_SCHEMA, "meta": trace.meta}) + "\n")
    for row in trace.rows:
        out.write(_dumps(row.to_dict()) + "\n")


def write_trace_jsonl(trace: EpisodeTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        dump_trace_jsonl(trace, f)


def read_trace_jsonl(path: str | Path) -> EpisodeTrace:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise TraceFormatError(f"cannot read trace: {e}") from None
    if not lines:
        raise TraceFormatError("empty trace file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise TraceFormatError(f"line 1: {e}") from None
    if not isinstance(header, dict) or header.get("schema") != TRACE_SCHEMA:
        raise TraceFormatError(f"line 1: expected schema {TRACE_SCHEMA!r}")
    trace = EpisodeTrace(header.get("meta", {}))
    for n, line in enumerate(lines[1:], start=2):
        try:
            raw = json.loads(line)
            step, event, agent, payload = raw["step"], raw["event"], raw["agent"], raw["payload"]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise TraceFormatError(f"line {n}: malformed row ({e})") from None
        if event not in EVENT_PRIORITY or not isinstance(step, int) or not isinstance(payload, dict):
            raise TraceFormatError(f"line {n}: malformed row")
        try:
            trace.add(step, event, agent, **payload)
        except TraceOrderError as e:
            raise TraceFormatError(f"line {n}: {e}") from None
    if not trace.complete:
        raise TraceFormatError("trace has no terminal row")
    return trace


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (list, dict)):
        return _dumps(value)
    return str(value)


def trace_rows(trace: EpisodeTrace) -> list[dict]:
    out = []
    for r in trace.rows:
        p = r.payload
        out.append(
            {
                "step": r.step,
                "event": r.event,
                "agent": _cell(r.agent),
                "label": _cell(p.get("label")),
                "state": _cell(p.get("state")),
                "planned": _cell(p.get("planned")),
                "realized": _cell(p.get("realized")),
                "n_star": _cell(p.get("n_star")),
                "rejoin_step": _cell(p.get("rejoin_step")),
                "removed": _cell(p.get("removed")),
                "added": _cell(p.get("added")),
                "pins": _cell(p.get("pins")),
                "sync_visits": _cell(p.get("sync_visits")),
                "plan_hash": _cell(p.get("hash")),
                "reason": _cell(p.get("reason")),
                "task_time": _cell(p.get("task_time")),
            }
        )
    return out


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def dump_csv(rows: Iterable[dict], columns: list[str], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([format_value(row[c]) for c in columns])


def write_csv(rows: Iterable[dict], columns: list[str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        dump_csv(rows, columns, f)


def csv_text(rows: Iterable[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    dump_csv(rows, columns, buf)
    return buf.getvalue()


def render_positions(trace: EpisodeTrace) -> list[dict]:
    """Per step and agent: position, energy, sync status and that agent's events."""
    always = set(trace.meta.get("always_sync", []))
    synced: set[tuple[int, int]] = set()
    events: dict[tuple[int, int], list[str]] = {}
    states: list[tuple[int, list]] = []
    for r in trace.rows:
        if r.event == "State":
            states.append((r.step, r.payload["state"]))
        elif r.event == "Sync":
            synced.add((r.step, r.agent))
        if r.agent is not None and r.event != "Sync":
            events.setdefault((r.step, r.agent), []).append(r.event)
    if not states:
        raise TraceFormatError("trace has no state rows")
    out = []
    for step, joint in states:
        for i, xi in enumerate(joint):
            if not isinstance(xi, list) or len(xi) < 3:
                raise TraceFormatError(f"step {step}: agent {i} state {xi!r} has no position")
            out.append(
                {
                    "step": step,
                    "agent": i,
                    "x": xi[0],
                    "y": xi[1],
                    "e": xi[2],
                    "synced": i in always or (step, i) in synced,
                    "event": "+".join(events.get((step, i), [])),
                }
            )
    return out
