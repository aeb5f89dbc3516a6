"""Task site assignments: state classes, satisfaction and updates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Mapping

from .transition_system import Trajectory


@dataclass(frozen=True, eq=False)
class StateClass:
    """A class of joint states, given by which agent states "occupy" it.

    A joint state belongs to the class when at least one agent's component
    satisfies ``member(i, x_i)``; that agent is then said to satisfy the class.
    Identity is by label.
    """

    label: str
    member: Callable[[int, Any], bool] = field(repr=False)
    sites: tuple = ()

    def __eq__(self, other: object) -> bool:
        return isinstance(other, StateClass) and other.label == self.label

    def __hash__(self) -> int:
        return hash(self.label)

    def satisfied_by(self, agent: int, agent_state: Any) -> bool:
        return bool(self.member(agent, agent_state))

    def __contains__(self, joint: tuple) -> bool:
        return any(self.member(i, xi) for i, xi in enumerate(joint))

    def agents_in(self, joint: tuple) -> list[int]:
        return [i for i, xi in enumerate(joint) if self.member(i, xi)]

    @classmethod
    def of_states(cls, label: str, states: Iterable) -> StateClass:
        """Class occupied by any agent whose own state is in ``states``."""
        members = frozenset(states)
        return cls(label, lambda _i, x: x in members, tuple(sorted(members, key=repr)))


class TaskSiteAssignment:
    """An ordered, label-unique collection of state classes."""

    def __init__(self, classes: Iterable[StateClass] = ()):
        self._classes: dict[str, StateClass] = {}
        for c in classes:
            if c.label in self._classes:
                raise ValueError(f"duplicate state class label {c.label!r}")
            self._classes[c.label] = c

    def __iter__(self) -> Iterator[StateClass]:
        return iter(self._classes.values())

    def __len__(self) -> int:
        return len(self._classes)

    def __contains__(self, label: object) -> bool:
        return label in self._classes

    def __getitem__(self, label: str) -> StateClass:
        return self._classes[label]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TaskSiteAssignment) and set(self._classes) == set(other._classes)

    def __repr__(self) -> str:
        return f"TaskSiteAssignment({list(self._classes)})"

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self._classes)

    def restricted(self, labels: Iterable[str]) -> TaskSiteAssignment:
        keep = set(labels)
        return TaskSiteAssignment(c for c in self if c.label in keep)

    def issubset(self, other: TaskSiteAssignment) -> bool:
        return set(self._classes) <= set(other._classes)


@dataclass(frozen=True)
class TaskUpdate:
    """Xi^{k+1} = (Xi^k minus removed) union added."""

    removed: frozenset = frozenset()
    added: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "removed", frozenset(self.removed))
        object.__setattr__(self, "added", tuple(self.added))

    @property
    def is_empty(self) -> bool:
        return not self.removed and not self.added


def invert_update(current: TaskSiteAssignment, update: TaskUpdate) -> TaskUpdate:
    """The update that undoes ``update`` when applied after it."""
    return TaskUpdate(
        removed=frozenset(c.label for c in update.added),
        added=tuple(current[label] for label in sorted(update.removed)),
    )


def apply_update(current: TaskSiteAssignment, update: TaskUpdate) -> TaskSiteAssignment:
    missing = sorted(set(update.removed) - set(current.labels))
    if missing:
        raise ValueError(f"cannot remove unknown state classes {missing}")
    added_labels = [c.label for c in update.added]
    clash = sorted(set(added_labels) & set(current.labels))
    if clash or len(set(added_labels)) != len(added_labels):
        raise ValueError(f"added state class labels collide: {clash or added_labels}")
    kept = [c for c in current if c.label not in update.removed]
    return TaskSiteAssignment([*kept, *update.added])


def first_satisfaction_times(
    traj: Trajectory, assignment: Iterable[StateClass]
) -> dict[str, tuple[int, int] | None]:
    """Earliest (agent, step) satisfying each class; lowest agent wins ties."""
    pending = {c.label: c for c in assignment}
    found: dict[str, tuple[int, int] | None] = {label: None for label in pending}
    for k, x in traj.items():
        if not pending:
            break
        for label in list(pending):
            cls = pending[label]
            for i, xi in enumerate(x):
                if cls.satisfied_by(i, xi):
                    found[label] = (i, k)
                    del pending[label]
                    break
    return found


def satisfies(
    traj: Trajectory, assignment: Iterable[StateClass]
) -> tuple[bool, Mapping[str, tuple[int, int]]]:
    """Whether ``traj`` satisfies every class, with the earliest witness per class."""
    times = first_satisfaction_times(traj, assignment)
    witness = {label: w for label, w in times.items() if w is not None}
    return len(witness) == len(times), witness


def completion_step(traj: Trajectory, assignment: Iterable[StateClass]) -> int | None:
    """Step at which the last class is first satisfied, or None if some never is."""
    times = first_satisfaction_times(traj, assignment)
    if any(t is None for t in times.values()):
        return None
    return max((t[1] for t in times.values()), default=traj.start_step)
