"""Units, game sessions, the contamination rule and group labels.

A session is *treated* when at least one member of its roster was assigned
to treatment; every member of a treated session receives the treatment for
that game.  A player's exposure ``m`` is the number of treated sessions they
appeared in.  Initially-control players therefore split into control-mixed
(``m > 0``) and control-control (``m == 0``) groups.
"""

from __future__ import annotations

import enum
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_TEAM_SIZE = 5


class ConfigError(ValueError):
    """Invalid configuration value."""


class DataError(ValueError):
    """Input data violates a structural requirement."""


class ExposureMismatchWarning(UserWarning):
    """Supplied exposure counts disagree with the ones derived from sessions."""


class GroupLabel(str, enum.Enum):
    TREATMENT = "T"
    CONTROL_MIXED = "C1"
    CONTROL_CONTROL = "C0"


@dataclass(frozen=True)
class PlayerRecord:
    id: str
    z: int
    x: tuple[float, ...]
    y: float
    m: int = 0
    y_pre: float | None = None

    def __post_init__(self) -> None:
        if self.z not in (0, 1):
            raise DataError(f"player {self.id}: z must be 0 or 1, got {self.z!r}")
        if self.m < 0:
            raise DataError(f"player {self.id}: negative exposure {self.m}")
        if self.y < 0:
            raise DataError(f"player {self.id}: negative outcome {self.y}")


@dataclass(frozen=True)
class GameSession:
    session_id: str
    roster: tuple[str, ...]

    def __post_init__(self) -> None:
        dupes = [pid for pid, c in Counter(self.roster).items() if c > 1]
        if dupes:
            raise DataError(f"session {self.session_id}: duplicate players {dupes}")

    def is_treated(self, assignment: Mapping[str, int]) -> bool:
        return any(assignment[pid] == 1 for pid in self.roster)


@dataclass(frozen=True)
class ExposureTable:
    m: dict[str, int]
    session_treated: dict[str, bool]


@dataclass(frozen=True, order=True)
class ExposureCategory:
    """Truncated exposure level; ``level == threshold`` marks the ``K+`` bucket."""

    level: int
    threshold: int = field(compare=False)

    @property
    def is_top(self) -> bool:
        return self.level >= self.threshold

    def __str__(self) -> str:
        return f"{self.level}+" if self.is_top else str(self.level)


def count_exposures(
    sessions: Iterable[GameSession], players: Iterable[PlayerRecord]
) -> ExposureTable:
    assignment = {p.id: p.z for p in players}
    m = dict.fromkeys(assignment, 0)
    treated: dict[str, bool] = {}
    for s in sessions:
        unknown = [pid for pid in s.roster if pid not in assignment]
        if unknown:
            raise DataError(f"session {s.session_id}: unknown player ids {unknown}")
        treated[s.session_id] = s.is_treated(assignment)
        if treated[s.session_id]:
            for pid in s.roster:
                m[pid] += 1
    return ExposureTable(m=m, session_treated=treated)


def session_treated_flags(rosters: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Vectorised contamination rule for an ``(n_sessions, team_size)`` index array."""
    rosters = np.asarray(rosters, dtype=np.int64)
    if rosters.size == 0:
        return np.zeros(rosters.shape[0], dtype=bool)
    return np.asarray(z)[rosters].any(axis=1)


def exposure_counts(rosters: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Number of treated sessions per player, by player position."""
    rosters = np.asarray(rosters, dtype=np.int64)
    n = len(z)
    if rosters.size == 0:
        return np.zeros(n, dtype=np.int64)
    treated = session_treated_flags(rosters, z)
    return np.bincount(rosters[treated].ravel(), minlength=n).astype(np.int64)


def classify(z: int, m: int) -> GroupLabel:
    if z == 1:
        return GroupLabel.TREATMENT
    return GroupLabel.CONTROL_MIXED if m > 0 else GroupLabel.CONTROL_CONTROL


def classify_groups(
    players: Iterable[PlayerRecord], exposures: Mapping[str, int] | None = None
) -> tuple[dict[str, GroupLabel], dict[GroupLabel, int]]:
    """Label each player and return the labels together with group sizes.

    ``exposures`` overrides the ``m`` stored on the records when given.
    """
    labels = {}
    for p in players:
        m = p.m if exposures is None else exposures[p.id]
        labels[p.id] = classify(p.z, m)
    sizes = {g: 0 for g in GroupLabel}
    sizes.update(Counter(labels.values()))
    return labels, sizes


def group_codes(z: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Array form of :func:`classify`: 0 = T, 1 = C1, 2 = C0."""
    z = np.asarray(z)
    m = np.asarray(m)
    return np.where(z == 1, 0, np.where(m > 0, 1, 2)).astype(np.int8)


GROUP_ORDER = (GroupLabel.TREATMENT, GroupLabel.CONTROL_MIXED, GroupLabel.CONTROL_CONTROL)


def _check_threshold(threshold: int) -> None:
    if threshold < 1:
        raise ConfigError(f"truncation threshold must be >= 1, got {threshold}")


def truncate_exposure(m: int, threshold: int) -> ExposureCategory:
    _check_threshold(threshold)
    if m < 0:
        raise DataError(f"negative exposure {m}")
    return ExposureCategory(level=min(m, threshold), threshold=threshold)


def truncate_levels(m: np.ndarray, threshold: int | None) -> np.ndarray:
    """Vectorised truncation; ``None`` leaves counts untouched."""
    m = np.asarray(m, dtype=np.int64)
    if threshold is None:
        return m
    _check_threshold(threshold)
    return np.minimum(m, threshold)


def level_name(level: int, threshold: int | None) -> str:
    if threshold is not None and level >= threshold:
        return f"{threshold}+"
    return str(level)


@dataclass(frozen=True, eq=False)
class ExperimentDataset:
    """Column-oriented experiment: one row per player plus a session table.

    ``rosters`` holds player *positions* (row indices), not ids.  ``m`` and
    ``groups`` are always derived from the other columns unless the dataset
    was built from an exposure table without session logs.
    """

    ids: tuple[str, ...]
    z: np.ndarray
    x: np.ndarray
    y: np.ndarray
    m: np.ndarray
    session_ids: tuple[str, ...] = ()
    rosters: np.ndarray = field(default_factory=lambda: np.zeros((0, DEFAULT_TEAM_SIZE), dtype=np.int64))
    y_pre: np.ndarray | None = None
    feature_names: tuple[str, ...] = ("x",)

    def __post_init__(self) -> None:
        n = len(self.ids)
        if n == 0:
            raise DataError("dataset has no players")
        if len(set(self.ids)) != n:
            raise DataError("player ids are not unique")
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", np.asarray(self.z, dtype=np.int8))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "m", np.asarray(self.m, dtype=np.int64))
        object.__setattr__(self, "rosters", np.asarray(self.rosters, dtype=np.int64))
        if self.y_pre is not None:
            object.__setattr__(self, "y_pre", np.asarray(self.y_pre, dtype=float))
        for name in ("z", "y", "m"):
            if len(getattr(self, name)) != n:
                raise DataError(f"column {name} has wrong length")
        if x.shape[0] != n or x.shape[1] != len(self.feature_names):
            raise DataError(f"feature matrix shape {x.shape} does not match {n} x {len(self.feature_names)}")
        if not np.isin(self.z, (0, 1)).all():
            raise DataError("z must be 0/1")
        if (self.y < 0).any() or (self.m < 0).any():
            raise DataError("outcomes and exposures must be non-negative")
        if len(self.session_ids) != self.rosters.shape[0]:
            raise DataError("session ids and rosters disagree in length")
        for arr in (self.z, self.x, self.y, self.m, self.rosters, self.y_pre):
            if arr is not None:
                arr.flags.writeable = False

    @classmethod
    def from_sessions(cls, ids, z, x, y, session_ids, rosters, **kw) -> "ExperimentDataset":
        m = exposure_counts(rosters, z)
        return cls(ids=tuple(ids), z=z, x=x, y=y, m=m, session_ids=tuple(session_ids), rosters=rosters, **kw)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def groups(self) -> np.ndarray:
        return group_codes(self.z, self.m)

    @property
    def session_treated(self) -> np.ndarray:
        return session_treated_flags(self.rosters, self.z)

    def group_sizes(self) -> dict[GroupLabel, int]:
        counts = np.bincount(self.groups, minlength=3)
        return {g: int(c) for g, c in zip(GROUP_ORDER, counts)}

    def levels(self, threshold: int | None) -> np.ndarray:
        return truncate_levels(self.m, threshold)

    def players(self) -> list[PlayerRecord]:
        y_pre = self.y_pre if self.y_pre is not None else [None] * self.n
        return [
            PlayerRecord(id=pid, z=int(z), x=tuple(map(float, x)), y=float(y), m=int(m),
                         y_pre=None if yp is None else float(yp))
            for pid, z, x, y, m, yp in zip(self.ids, self.z, self.x, self.y, self.m, y_pre)
        ]

    def sessions(self) -> list[GameSession]:
        return [
            GameSession(sid, tuple(self.ids[i] for i in row))
            for sid, row in zip(self.session_ids, self.rosters)
        ]

    def equals(self, other: "ExperimentDataset") -> bool:
        """Field-for-field equality (floats compared exactly)."""
        same_pre = (self.y_pre is None and other.y_pre is None) or (
            self.y_pre is not None and other.y_pre is not None and np.array_equal(self.y_pre, other.y_pre)
        )
        return (
            self.ids == other.ids
            and self.session_ids == other.session_ids
            and self.feature_names == other.feature_names
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.m, other.m)
            and np.array_equal(self.rosters, other.rosters)
            and same_pre
        )


def reconcile_exposures(
    derived: Mapping[str, int], supplied: Mapping[str, int]
) -> list[tuple[str, int, int]]:
    """Compare supplied exposure counts with derived ones; derived values win.

    Returns ``(id, supplied, derived)`` for every mismatch and emits one
    :class:`ExposureMismatchWarning` summarising them.
    """
    mismatches = [
        (pid, int(supplied[pid]), int(m)) for pid, m in derived.items() if pid in supplied and supplied[pid] != m
    ]
    if mismatches:
        head = ", ".join(f"{pid}: {s}->{d}" for pid, s, d in mismatches[:10])
        more = "" if len(mismatches) <= 10 else f" (+{len(mismatches) - 10} more)"
        warnings.warn(
            f"{len(mismatches)} supplied exposure counts differ from session logs; "
            f"using derived values [{head}{more}]",
            ExposureMismatchWarning,
            stacklevel=2,
        )
    return mismatches


def rosters_from_ids(sessions: Sequence[GameSession], ids: Sequence[str]) -> np.ndarray:
    index = {pid: i for i, pid in enumerate(ids)}
    width = max((len(s.roster) for s in sessions), default=DEFAULT_TEAM_SIZE)
    out = np.empty((len(sessions), width), dtype=np.int64)
    for j, s in enumerate(sessions):
        if len(s.roster) != width:
            raise DataError(f"session {s.session_id}: roster size {len(s.roster)} != {width}")
        for k, pid in enumerate(s.roster):
            if pid not in index:
                raise DataError(f"session {s.session_id}: unknown player id {pid!r}")
            out[j, k] = index[pid]
    return out
