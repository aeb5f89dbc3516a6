"""Road-monitoring instance: UGVs on a road, UAVs flying freely, depots for recharging.

Agent state is ``VehicleState(px, py, e, f)`` with energy ``e`` counted in
integer quanta and ``f`` the vehicle type plus docking status.  One transition
is one time step of ``dt_s`` seconds: stay, or move to a 4-neighbor cell.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Literal, NamedTuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .sync_model import SyncStates
from .tasking import StateClass, TaskSiteAssignment, TaskUpdate
from .transition_system import MultiAgentTransitionSystem, TransitionSystem

SCHEMA_ID = "episync.scenario.v1"

UGV_CAPACITY_J = 25.01e6
UAV_CAPACITY_J = 287.7e3

Cell = tuple[int, int]


def power_ugv(v: float) -> float:
    """Ground vehicle power draw in watts at speed v (m/s)."""
    if v < 0:
        raise ValueError("speed must be non-negative")
    return 1.05 * (464.8 * v + 356.3)


def power_uav(v: float) -> float:
    """Aerial vehicle power draw in watts at speed v (m/s)."""
    if v < 0:
        raise ValueError("speed must be non-negative")
    return 1.05 * (0.0461 * v**3 - 0.5834 * v**2 - 1.8761 * v + 229.6)


POWER = {"UAV": power_uav, "UGV": power_ugv}


# --------------------------------------------------------------------------
# config


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MapConfig(_Strict):
    width: int = Field(6, ge=1)
    height: int = Field(6, ge=1)
    road: list[Cell]
    depots: dict[str, Cell]
    cell_m: float = Field(100.0, gt=0)

    @model_validator(mode="after")
    def _within_bounds(self):
        for name, cells in (("road", self.road), ("depots", list(self.depots.values()))):
            for x, y in cells:
                if not (0 <= x < self.width and 0 <= y < self.height):
                    raise ValueError(f"{name} cell {(x, y)} lies outside the {self.width}x{self.height} map")
        if not self.depots:
            raise ValueError("depots: at least one depot is required")
        return self


class AgentConfig(_Strict):
    type: Literal["UAV", "UGV"]
    start: Cell | str
    capacity_J: float | None = Field(None, gt=0)
    start_energy_J: float | None = Field(None, ge=0)
    coalition: int | None = None


class RechargeConfig(_Strict):
    """Charging power is fast below ``threshold`` of capacity and slow above it."""

    threshold: float = Field(0.8, gt=0, le=1)
    uav_fast_W: float = Field(2000.0, gt=0)
    uav_slow_W: float = Field(500.0, gt=0)
    ugv_fast_W: float = Field(50_000.0, gt=0)
    ugv_slow_W: float = Field(10_000.0, gt=0)


class EnergyConfig(_Strict):
    uav_capacity_J: float = Field(UAV_CAPACITY_J, gt=0)
    ugv_capacity_J: float = Field(UGV_CAPACITY_J, gt=0)
    uav_quantum_J: float = Field(1e3, gt=0)
    ugv_quantum_J: float = Field(1e5, gt=0)
    dt_s: float = Field(60.0, gt=0)
    recharge: RechargeConfig = RechargeConfig()


class TaskConfig(_Strict):
    label: str
    cells: list[Cell] = Field(min_length=1)


class TaskUpdateConfig(_Strict):
    step: int = Field(ge=1)
    remove: list[str] = []
    add: list[TaskConfig] = []


class PlannerConfig(_Strict):
    horizon: int = Field(200, ge=1)
    mode: Literal["alg1", "alg3"] = "alg3"
    strategy: Literal["auto", "joint", "decomposed"] = "auto"
    budget_factor: float = Field(5.0, gt=0)
    rest_tail: int = Field(10, ge=0)


class ScenarioConfig(_Strict):
    schema_id: Literal["episync.scenario.v1"] = Field(SCHEMA_ID, alias="schema")
    map: MapConfig
    agents: list[AgentConfig] = Field(min_length=1)
    energy: EnergyConfig = EnergyConfig()
    tasks: list[TaskConfig] = []
    task_updates: list[TaskUpdateConfig] = []
    planner: PlannerConfig = PlannerConfig()

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @field_validator("tasks")
    @classmethod
    def _unique_labels(cls, tasks):
        labels = [t.label for t in tasks]
        if len(set(labels)) != len(labels):
            raise ValueError("task labels must be unique")
        return tasks

    @model_validator(mode="after")
    def _consistent(self):
        road = set(self.map.road)
        for i, a in enumerate(self.agents):
            if isinstance(a.start, str) and a.start not in self.map.depots:
                raise ValueError(f"agents.{i}.start: unknown depot {a.start!r}")
            cell = self.map.depots[a.start] if isinstance(a.start, str) else a.start
            if a.type == "UGV" and cell not in road:
                raise ValueError(f"agents.{i}.start: UGV starts off the road at {cell}")
            if a.coalition is not None:
                if not 0 <= a.coalition < len(self.agents) or self.agents[a.coalition].type != "UGV":
                    raise ValueError(f"agents.{i}.coalition: {a.coalition} is not a UGV agent index")
        for t in self.tasks:
            for x, y in t.cells:
                if not (0 <= x < self.map.width and 0 <= y < self.map.height):
                    raise ValueError(f"tasks.{t.label}: cell {(x, y)} outside the map")
        return self

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), indent=2, sort_keys=True)


def load_config(path: str | Path) -> ScenarioConfig:
    return ScenarioConfig.model_validate_json(Path(path).read_text())


def default_config() -> ScenarioConfig:
    raw = resources.files("episync").joinpath("data/desk.json").read_text()
    return ScenarioConfig.model_validate_json(raw)


# --------------------------------------------------------------------------
# agent systems


class VehicleState(NamedTuple):
    px: int
    py: int
    e: int
    f: str

    @property
    def cell(self) -> Cell:
        return self.px, self.py

    @property
    def docked(self) -> bool:
        return self.f.endswith("/dock")


@dataclass(frozen=True)
class VehicleParams:
    kind: str
    capacity: int
    move_cost: int
    stay_cost: int
    quantum_J: float
    dt_s: float
    fast_W: float
    slow_W: float
    threshold: int


def _ceil_quanta(joules: float, quantum: float) -> int:
    return max(0, math.ceil(joules / quantum - 1e-9))


class VehicleAgentSystem(TransitionSystem):
    """One UAV or UGV on the grid, with energy bookkeeping in quanta."""

    def __init__(self, kind: str, width: int, height: int, road, depots, params: VehicleParams):
        self.kind = kind
        self.width = width
        self.height = height
        self.road = frozenset(map(tuple, road))
        self.depots = frozenset(map(tuple, depots))
        self.params = params
        self._succ: dict[VehicleState, tuple] = {}

    # geometry

    def cell_ok(self, c: Cell) -> bool:
        x, y = c
        if not (0 <= x < self.width and 0 <= y < self.height):
            return False
        return self.kind == "UAV" or c in self.road

    def flag(self, c: Cell) -> str:
        return f"{self.kind}/dock" if c in self.depots else f"{self.kind}/{'air' if self.kind == 'UAV' else 'road'}"

    def neighbors(self, c: Cell) -> list[Cell]:
        x, y = c
        return [n for n in ((x - 1, y), (x, y - 1), (x, y + 1), (x + 1, y)) if self.cell_ok(n)]

    def state(self, c: Cell, e: int) -> VehicleState:
        return VehicleState(c[0], c[1], e, self.flag(c))

    @cached_property
    def _depot_distance(self) -> dict[Cell, int]:
        # UAVs fly freely, so Manhattan distance is exact; UGVs use road BFS
        dist: dict[Cell, int] = {}
        frontier = [d for d in sorted(self.depots) if self.cell_ok(d)]
        for d in frontier:
            dist[d] = 0
        while frontier:
            nxt = []
            for c in frontier:
                for n in self.neighbors(c):
                    if n not in dist:
                        dist[n] = dist[c] + 1
                        nxt.append(n)
            frontier = nxt
        return dist

    # energy

    def charged(self, e: int) -> int:
        """Energy after one step of charging, monotone in e."""
        p = self.params
        q = p.quantum_J
        t = p.dt_s
        level = e * q
        if e < p.threshold:
            need = (p.threshold - e) * q / p.fast_W
            if need >= t:
                return min(p.capacity, math.floor((level + p.fast_W * t) / q + 1e-9))
            level = p.threshold * q
            t -= need
        return min(p.capacity, math.floor((level + p.slow_W * t) / q + 1e-9))

    @cached_property
    def _charge_preimage(self) -> dict[int, list[int]]:
        pre: dict[int, list[int]] = {}
        for e in range(self.params.capacity + 1):
            pre.setdefault(self.charged(e), []).append(e)
        return pre

    # TransitionSystem interface

    def __contains__(self, x: object) -> bool:
        if not isinstance(x, VehicleState):
            return False
        return (
            self.cell_ok(x.cell)
            and isinstance(x.e, int)
            and 0 <= x.e <= self.params.capacity
            and x.f == self.flag(x.cell)
        )

    def successors(self, x: VehicleState) -> tuple:
        out = self._succ.get(x)
        if out is not None:
            return out
        self.require(x)
        p = self.params
        found = []
        if x.cell in self.depots:
            found.append(self.state(x.cell, self.charged(x.e)))
        elif x.e >= p.stay_cost:
            found.append(self.state(x.cell, x.e - p.stay_cost))
        if x.e >= p.move_cost:
            found.extend(self.state(n, x.e - p.move_cost) for n in self.neighbors(x.cell))
        out = self._succ[x] = tuple(sorted(found))
        return out

    def predecessors(self, y: VehicleState) -> tuple:
        self.require(y)
        p = self.params
        found = set()
        if y.e + p.move_cost <= p.capacity:
            found.update(self.state(n, y.e + p.move_cost) for n in self.neighbors(y.cell))
        if y.cell in self.depots:
            found.update(self.state(y.cell, e) for e in self._charge_preimage.get(y.e, ()))
        elif y.e + p.stay_cost <= p.capacity:
            found.add(self.state(y.cell, y.e + p.stay_cost))
        return tuple(sorted(found))

    def has_transition(self, x, y) -> bool:
        self.require(x)
        self.require(y)
        return y in self.successors(x)

    def idle(self, x: VehicleState) -> VehicleState | None:
        if x.cell in self.depots:
            return self.state(x.cell, self.charged(x.e))
        if x.e >= self.params.stay_cost:
            return self.state(x.cell, x.e - self.params.stay_cost)
        return None

    def is_rest(self, x: VehicleState) -> bool:
        return self.kind == "UGV" or x.cell in self.depots

    def rest_possible(self, x: VehicleState) -> bool:
        if self.kind == "UGV":
            return True
        d = self._depot_distance.get(x.cell)
        return d is not None and x.e >= d * self.params.move_cost

    def dominance(self, x: VehicleState):
        return (x.px, x.py, x.f), x.e

    def encode_state(self, x: VehicleState) -> list:
        return [x.px, x.py, x.e, x.f]

    def decode_state(self, raw: Any) -> VehicleState:
        px, py, e, f = raw
        return VehicleState(int(px), int(py), int(e), str(f))

    def __repr__(self) -> str:
        return f"VehicleAgentSystem({self.kind}, {self.width}x{self.height})"


class VehicleSyncStates(SyncStates):
    """UGVs are always in sync; a UAV is in sync docked at a depot or sharing a cell with its coalition UGV."""

    def __init__(self, kinds: list[str], coalition: list[int | None], depots):
        self.kinds = list(kinds)
        self.coalition = list(coalition)
        self.depots = frozenset(map(tuple, depots))
        super().__init__(len(kinds), self._member)

    def _member(self, i: int, joint: tuple) -> bool:
        if self.kinds[i] == "UGV":
            return True
        x = joint[i]
        if x.cell in self.depots:
            return True
        j = self.coalition[i]
        return j is not None and joint[j].cell == x.cell

    def always(self, agent: int) -> bool:
        return self.kinds[agent] == "UGV"

    def requirements(self, agent: int, witness: tuple | None) -> dict:
        if self.kinds[agent] == "UGV":
            return {}
        depots = self.depots
        if witness is None or witness[agent].cell in depots:
            return {agent: lambda x: x.cell in depots}
        cell = witness[agent].cell
        j = self.coalition[agent]
        return {agent: lambda x: x.cell == cell, j: lambda x: x.cell == cell}


# --------------------------------------------------------------------------
# assembly


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    system: MultiAgentTransitionSystem
    assignment: TaskSiteAssignment
    sync: VehicleSyncStates
    initial: tuple
    updates: dict

    def __iter__(self):
        return iter((self.system, self.assignment, self.sync, self.initial))


def task_class(label: str, cells) -> StateClass:
    members = frozenset(map(tuple, cells))
    return StateClass(label, lambda _i, x: (x[0], x[1]) in members, tuple(sorted(members)))


def _params(kind: str, cfg: ScenarioConfig, capacity_J: float | None) -> VehicleParams:
    en = cfg.energy
    q = en.uav_quantum_J if kind == "UAV" else en.ugv_quantum_J
    cap_J = capacity_J if capacity_J is not None else (en.uav_capacity_J if kind == "UAV" else en.ugv_capacity_J)
    capacity = math.floor(cap_J / q + 1e-9)
    v = cfg.map.cell_m / en.dt_s
    power = POWER[kind]
    rc = en.recharge
    fast, slow = (rc.uav_fast_W, rc.uav_slow_W) if kind == "UAV" else (rc.ugv_fast_W, rc.ugv_slow_W)
    return VehicleParams(
        kind=kind,
        capacity=capacity,
        move_cost=_ceil_quanta(power(v) * en.dt_s, q),
        stay_cost=_ceil_quanta(power(0.0) * en.dt_s, q),
        quantum_J=q,
        dt_s=en.dt_s,
        fast_W=fast,
        slow_W=slow,
        threshold=math.floor(rc.threshold * capacity),
    )


def build_scenario(cfg: ScenarioConfig | dict) -> Scenario:
    if isinstance(cfg, dict):
        cfg = ScenarioConfig.model_validate(cfg)
    m = cfg.map
    depots = list(m.depots.values())
    agents, initial = [], []
    for a in cfg.agents:
        sysm = VehicleAgentSystem(a.type, m.width, m.height, m.road, depots, _params(a.type, cfg, a.capacity_J))
        cell = m.depots[a.start] if isinstance(a.start, str) else tuple(a.start)
        if a.start_energy_J is None:
            e = sysm.params.capacity
        else:
            e = min(sysm.params.capacity, math.floor(a.start_energy_J / sysm.params.quantum_J + 1e-9))
        agents.append(sysm)
        initial.append(sysm.state(cell, e))
    system = MultiAgentTransitionSystem(agents)
    assignment = TaskSiteAssignment(task_class(t.label, t.cells) for t in cfg.tasks)
    sync = VehicleSyncStates([a.type for a in cfg.agents], [a.coalition for a in cfg.agents], depots)
    updates = {
        u.step: TaskUpdate(frozenset(u.remove), tuple(task_class(t.label, t.cells) for t in u.add))
        for u in cfg.task_updates
    }
    return Scenario(cfg, system, assignment, sync, tuple(initial), updates)


def random_scenario_config(seed: int | str, n_uavs: int = 2, **planner) -> ScenarioConfig:
    """A desk-scale map (5x5 to 8x8) with a cross-shaped road, 1 UGV, n UAVs and 2 to 5 tasks."""
    rng = random.Random(f"scenario:{seed}")
    w = rng.randint(5, 8)
    h = rng.randint(5, 8)
    row = rng.randrange(h)
    col = rng.randrange(w)
    road = sorted({(x, row) for x in range(w)} | {(col, y) for y in range(h)})
    ugv_depot = rng.choice(road)
    off_road = [(x, y) for x in range(w) for y in range(h) if (x, y) not in set(road)]
    air_depots = rng.sample(off_road, k=min(2, len(off_road)))
    depots = {"A": ugv_depot, **{chr(ord("B") + i): c for i, c in enumerate(air_depots)}}
    n_tasks = rng.randint(2, 5)
    sites = rng.sample([c for c in road if c != ugv_depot], k=n_tasks)
    uav_depots = sorted(depots)[1:] or ["A"]
    agents = [{"type": "UGV", "start": "A"}]
    for i in range(n_uavs):
        agents.append({"type": "UAV", "start": uav_depots[i % len(uav_depots)], "coalition": 0})
    return ScenarioConfig.model_validate(
        {
            "schema": SCHEMA_ID,
            "map": {"width": w, "height": h, "road": road, "depots": depots},
            "agents": agents,
            "tasks": [{"label": f"T{j}", "cells": [c]} for j, c in enumerate(sites)],
            "planner": planner,
        }
    )
