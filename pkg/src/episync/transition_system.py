"""Explicit-state agent and multi-agent transition systems, and trajectories over them.

Agents are indexed from 0.  Joint states are plain tuples holding one agent
state per agent; the product system is never materialized.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, Hashable, Iterable, Iterator, Sequence

State = Hashable
JointState = tuple


class UnknownStateError(ValueError):
    """A state was used that does not belong to the system's state set."""


class TransitionSystem:
    """Interface shared by agent systems and the (virtual) product system.

    Subclasses implement ``successors``, ``predecessors`` and ``__contains__``.
    The remaining hooks have conservative defaults:

    * ``idle(x)`` is the state reached by "doing nothing" for one step, or
      ``None`` when the system has no such transition.
    * ``is_rest(x)`` marks states a plan may safely end in.
    * ``dominance(x)`` returns ``(key, resource)``; two states with the same key
      where one has at least the other's resource are interchangeable for
      position-only constraints, with the richer one never worse.
    * ``rest_possible(x)`` is a cheap necessary condition for reaching a rest
      state at all; returning ``True`` is always sound.
    """

    def successors(self, x: State) -> tuple:
        raise NotImplementedError

    def predecessors(self, x: State) -> tuple:
        raise NotImplementedError

    def __contains__(self, x: object) -> bool:
        raise NotImplementedError

    def has_transition(self, x: State, y: State) -> bool:
        self.require(x)
        self.require(y)
        return y in self.successors(x)

    def require(self, x: State) -> None:
        if x not in self:
            raise UnknownStateError(f"state {x!r} is not in the state set")

    def idle(self, x: State) -> State | None:
        return x if x in self.successors(x) else None

    def is_rest(self, x: State) -> bool:
        return True

    def dominance(self, x: State) -> tuple[Hashable, float]:
        return x, 0

    def rest_possible(self, x: State) -> bool:
        return True

    def encode_state(self, x: State) -> Any:
        return x

    def decode_state(self, raw: Any) -> State:
        return raw


class AgentTransitionSystem(TransitionSystem):
    """S_i = (X_i, T_i) with both sets listed explicitly.

    ``rest`` optionally lists the states a plan may end in (default: all).
    """

    def __init__(
        self,
        states: Iterable[State],
        transitions: Iterable[tuple[State, State]],
        rest: Iterable[State] | None = None,
    ):
        self._states = frozenset(states)
        self._rest = None if rest is None else frozenset(rest)
        if self._rest is not None and not self._rest <= self._states:
            raise UnknownStateError("rest states must belong to the state set")
        succ: dict[State, set] = {x: set() for x in self._states}
        pred: dict[State, set] = {x: set() for x in self._states}
        edges = set()
        for x, y in transitions:
            if x not in self._states or y not in self._states:
                raise UnknownStateError(f"transition ({x!r}, {y!r}) leaves the state set")
            succ[x].add(y)
            pred[y].add(x)
            edges.add((x, y))
        self._succ = {x: tuple(sorted(ys)) for x, ys in succ.items()}
        self._pred = {x: tuple(sorted(ys)) for x, ys in pred.items()}
        self._edges = frozenset(edges)

    @property
    def states(self) -> frozenset:
        return self._states

    @property
    def transitions(self) -> frozenset:
        return self._edges

    def __contains__(self, x: object) -> bool:
        try:
            return x in self._states
        except TypeError:
            return False

    def __len__(self) -> int:
        return len(self._states)

    def successors(self, x: State) -> tuple:
        try:
            return self._succ[x]
        except (KeyError, TypeError):
            raise UnknownStateError(f"state {x!r} is not in the state set") from None

    def predecessors(self, x: State) -> tuple:
        try:
            return self._pred[x]
        except (KeyError, TypeError):
            raise UnknownStateError(f"state {x!r} is not in the state set") from None

    def has_transition(self, x: State, y: State) -> bool:
        self.require(x)
        self.require(y)
        return (x, y) in self._edges

    def is_rest(self, x: State) -> bool:
        return self._rest is None or x in self._rest

    def decode_state(self, raw: Any) -> State:
        return tuple(raw) if isinstance(raw, list) else raw

    def __repr__(self) -> str:
        return f"AgentTransitionSystem({len(self._states)} states, {len(self._edges)} transitions)"


class MultiAgentTransitionSystem(TransitionSystem):
    """Product S = S_1 x ... x S_N, evaluated componentwise on demand."""

    def __init__(self, agents: Sequence[TransitionSystem]):
        if not agents:
            raise ValueError("a multi-agent system needs at least one agent")
        self.agents: tuple[TransitionSystem, ...] = tuple(agents)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def __contains__(self, x: object) -> bool:
        if not isinstance(x, tuple) or len(x) != len(self.agents):
            return False
        return all(xi in a for a, xi in zip(self.agents, x))

    def require(self, x: State) -> None:
        if not isinstance(x, tuple) or len(x) != len(self.agents):
            raise UnknownStateError(f"{x!r} is not a joint state of {len(self.agents)} agents")
        for i, (a, xi) in enumerate(zip(self.agents, x)):
            if xi not in a:
                raise UnknownStateError(f"agent {i} state {xi!r} is not in its state set")

    def has_transition(self, x: JointState, y: JointState) -> bool:
        self.require(x)
        self.require(y)
        return all(a.has_transition(xi, yi) for a, xi, yi in zip(self.agents, x, y))

    def successors(self, x: JointState) -> Iterator[JointState]:
        # lexicographic, since every factor is sorted
        return itertools.product(*(a.successors(xi) for a, xi in zip(self.agents, x)))

    def predecessors(self, x: JointState) -> Iterator[JointState]:
        return itertools.product(*(a.predecessors(xi) for a, xi in zip(self.agents, x)))

    def idle(self, x: JointState) -> JointState | None:
        out = []
        for a, xi in zip(self.agents, x):
            nxt = a.idle(xi)
            if nxt is None:
                return None
            out.append(nxt)
        return tuple(out)

    def is_rest(self, x: JointState) -> bool:
        return all(a.is_rest(xi) for a, xi in zip(self.agents, x))

    def rest_possible(self, x: JointState) -> bool:
        return all(a.rest_possible(xi) for a, xi in zip(self.agents, x))

    def encode_state(self, x: JointState) -> list:
        return [a.encode_state(xi) for a, xi in zip(self.agents, x)]

    def decode_state(self, raw: Any) -> JointState:
        return tuple(a.decode_state(r) for a, r in zip(self.agents, raw))

    def __repr__(self) -> str:
        return f"MultiAgentTransitionSystem({self.agents!r})"


def compose(agents: Sequence[TransitionSystem]) -> MultiAgentTransitionSystem:
    return MultiAgentTransitionSystem(agents)


@dataclass(frozen=True)
class Trajectory:
    """States x_k ... x_{k+N} addressed by absolute time index."""

    start_step: int
    states: tuple

    def __post_init__(self):
        if self.start_step < 0:
            raise ValueError("start_step must be non-negative")
        if not self.states:
            raise ValueError("a trajectory holds at least one state")
        if not isinstance(self.states, tuple):
            object.__setattr__(self, "states", tuple(self.states))

    @property
    def length(self) -> int:
        return len(self.states) - 1

    @property
    def end_step(self) -> int:
        return self.start_step + len(self.states) - 1

    def covers(self, j: int) -> bool:
        return self.start_step <= j <= self.end_step

    def at(self, j: int):
        if not self.covers(j):
            raise IndexError(f"step {j} outside [{self.start_step}, {self.end_step}]")
        return self.states[j - self.start_step]

    def suffix(self, j: int) -> Trajectory:
        """tau(j+): the trajectory from step j onward."""
        if not self.covers(j):
            raise IndexError(f"step {j} outside [{self.start_step}, {self.end_step}]")
        if j == self.start_step:
            return self
        return Trajectory(j, self.states[j - self.start_step:])

    def window(self, a: int, b: int) -> tuple:
        return tuple(self.at(j) for j in range(a, b + 1))

    def steps(self) -> range:
        return range(self.start_step, self.end_step + 1)

    def items(self) -> Iterator[tuple[int, Any]]:
        return zip(self.steps(), self.states)

    def then(self, more: Iterable) -> Trajectory:
        return Trajectory(self.start_step, self.states + tuple(more))

    def extended(self, system: TransitionSystem, until: int) -> Trajectory:
        """Continue with idle transitions until ``until`` (or as far as idling allows)."""
        if until <= self.end_step:
            return self
        tail = []
        x = self.states[-1]
        for _ in range(until - self.end_step):
            x = system.idle(x)
            if x is None:
                break
            tail.append(x)
        return self.then(tail) if tail else self


class RealizedTrajectory:
    """zeta: grown one validated transition at a time from step 0."""

    def __init__(self, system: TransitionSystem, initial: State):
        system.require(initial)
        self.system = system
        self._states = [initial]

    def append(self, x: State) -> None:
        if not self.system.has_transition(self._states[-1], x):
            raise ValueError(f"({self._states[-1]!r}, {x!r}) is not a transition")
        self._states.append(x)

    @property
    def last_step(self) -> int:
        return len(self._states) - 1

    def at(self, j: int):
        if not 0 <= j < len(self._states):
            raise IndexError(f"step {j} not realized yet")
        return self._states[j]

    def __len__(self) -> int:
        return len(self._states)

    def snapshot(self) -> Trajectory:
        return Trajectory(0, tuple(self._states))


def validate_trajectory(system: TransitionSystem, seq: Sequence) -> bool:
    """True iff each consecutive pair of ``seq`` is a transition of ``system``.

    Raises UnknownStateError for a state outside the system rather than
    returning False.
    """
    for x in seq:
        system.require(x)
    return all(system.has_transition(a, b) for a, b in zip(seq, seq[1:]))


def project(traj: Trajectory, agent: int) -> Trajectory:
    if not traj.states or not 0 <= agent < len(traj.states[0]):
        raise IndexError(f"agent index {agent} out of range")
    return Trajectory(traj.start_step, tuple(x[agent] for x in traj.states))


def combine(parts: Sequence[Trajectory]) -> Trajectory:
    """Inverse of projection: zip per-agent trajectories with equal spans."""
    if not parts:
        raise ValueError("nothing to combine")
    spans = {(p.start_step, p.end_step) for p in parts}
    if len(spans) != 1:
        raise ValueError(f"per-agent trajectories cover different spans: {sorted(spans)}")
    return Trajectory(parts[0].start_step, tuple(zip(*(p.states for p in parts))))
