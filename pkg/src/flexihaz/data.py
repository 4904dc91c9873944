"""Right-censored survival data, time grids and the counting-process expansion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, IngestionError


class SurvivalRecord(NamedTuple):
    time: float
    event: int
    x: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class SurvivalData:
    """Column store for ``n`` subjects: observed time, event flag, covariates.

    ``x`` holds the nuisance covariates entering the network, ``z`` the
    covariates with linear effects.
    """

    time: np.ndarray
    event: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).reshape(-1)
        n = time.shape[0]
        event = np.asarray(self.event).reshape(-1).astype(np.int8)
        x = np.asarray(self.x, dtype=float).reshape(n, -1)
        z = np.asarray(self.z, dtype=float).reshape(n, -1)
        if event.shape[0] != n:
            raise ConfigurationError("time and event lengths differ")
        if not np.isin(event, (0, 1)).all():
            raise ConfigurationError("event indicators must be 0 or 1")
        if (time < 0).any() or not np.isfinite(time).all():
            raise ConfigurationError("times must be finite and non-negative")
        if not (np.isfinite(x).all() and np.isfinite(z).all()):
            raise ConfigurationError("covariates must be finite")
        for name, value in (("time", time), ("event", event), ("x", x), ("z", z)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    def __len__(self) -> int:
        return self.time.shape[0]

    def __getitem__(self, i: int) -> SurvivalRecord:
        return SurvivalRecord(float(self.time[i]), int(self.event[i]), self.x[i], self.z[i])

    @property
    def n(self) -> int:
        return len(self)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def subset(self, index) -> "SurvivalData":
        index = np.asarray(index)
        return SurvivalData(self.time[index], self.event[index], self.x[index], self.z[index])

    @classmethod
    def from_records(cls, records) -> "SurvivalData":
        records = list(records)
        if not records:
            raise ConfigurationError("no records")
        return cls(np.array([r.time for r in records]), np.array([r.event for r in records]),
                   np.array([np.asarray(r.x, dtype=float) for r in records]),
                   np.array([np.asarray(r.z, dtype=float) for r in records]))


def _covariate_columns(header: list[str], prefix: str) -> list[int]:
    cols = [(int(name[len(prefix):]), k) for k, name in enumerate(header)
            if name.startswith(prefix) and name[len(prefix):].isdigit()]
    cols.sort()
    if [idx for idx, _ in cols] != list(range(1, len(cols) + 1)):
        raise IngestionError(f"columns {prefix}1..{prefix}k must be numbered consecutively")
    return [k for _, k in cols]


def load_csv(path, tau: float | None = None) -> SurvivalData:
    """Read ``time,event,x1..xd,z1..zp`` from a comma-separated file.

    If ``tau`` is given, every time must lie in ``[0, tau]``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        for required in ("time", "event"):
            if required not in header:
                raise IngestionError(f"{path}: missing column {required!r}")
        x_cols = _covariate_columns(header, "x")
        z_cols = _covariate_columns(header, "z")
        if not z_cols:
            raise IngestionError(f"{path}: need at least one z column")
        i_time, i_event = header.index("time"), header.index("event")
        times, events, xs, zs = [], [], [], []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {row_no}: expected {len(header)} cells, "
                                     f"got {len(row)}")
            try:
                values = [float(c) for c in row]
            except ValueError as exc:
                raise IngestionError(f"{path}: row {row_no}: non-numeric cell ({exc})") from None
            if not all(np.isfinite(values)):
                raise IngestionError(f"{path}: row {row_no}: non-finite value")
            t, e = values[i_time], values[i_event]
            if e not in (0.0, 1.0):
                raise IngestionError(f"{path}: row {row_no}: event must be 0 or 1, got {row[i_event]}")
            if t < 0:
                raise IngestionError(f"{path}: row {row_no}: negative time {t}")
            if tau is not None and t > tau:
                raise IngestionError(f"{path}: row {row_no}: time {t} exceeds tau={tau}")
            times.append(t)
            events.append(int(e))
            xs.append([values[k] for k in x_cols])
            zs.append([values[k] for k in z_cols])
    if not times:
        raise IngestionError(f"{path}: no records")
    return SurvivalData(np.array(times), np.array(events),
                        np.array(xs, dtype=float).reshape(len(times), len(x_cols)),
                        np.array(zs, dtype=float))


def write_csv(data: SurvivalData, path) -> None:
    header = (["time", "event"] + [f"x{k + 1}" for k in range(data.d)]
              + [f"z{k + 1}" for k in range(data.p)])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(data.n):
            w.writerow([repr(float(data.time[i])), int(data.event[i])]
                       + [repr(float(v)) for v in data.x[i]]
                       + [repr(float(v)) for v in data.z[i]])


@dataclass(frozen=True)
class TimeGrid:
    breakpoints: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        if b.ndim != 1 or b.size < 2 or b[0] != 0.0 or not (np.diff(b) > 0).all():
            raise ConfigurationError("breakpoints must start at 0 and increase strictly")
        b.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)

    @property
    def tau(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def m(self) -> int:
        """Number of intervals."""
        return self.breakpoints.size - 1

    @property
    def mesh(self) -> float:
        return float(np.diff(self.breakpoints).max())


def build_grid(data: SurvivalData | np.ndarray, grid_size: int, tau: float) -> TimeGrid:
    """Equally spaced grid of ``grid_size`` intervals on ``[0, tau]`` plus every observed time."""
    if tau <= 0:
        raise ConfigurationError(f"tau must be positive, got {tau}")
    if int(grid_size) < 1:
        raise ConfigurationError(f"grid_size must be >= 1, got {grid_size}")
    times = data.time if isinstance(data, SurvivalData) else np.asarray(data, dtype=float)
    if times.size and times.max() > tau:
        raise ConfigurationError(f"observed time {times.max()} exceeds tau={tau}")
    fixed = np.linspace(0.0, tau, int(grid_size) + 1)
    points = np.unique(np.concatenate([fixed, times, [0.0, tau]]))
    return TimeGrid(points)


@dataclass(frozen=True)
class ExpandedRows:
    """Counting-process pseudo-observations, one per (subject, risk interval).

    Rows are ordered by subject, then interval index ``j`` (1-based).
    """

    subject: np.ndarray
    j: np.ndarray
    eval_time: np.ndarray
    exposure: np.ndarray
    delta: np.ndarray
    n_subjects: int

    def __len__(self) -> int:
        return self.subject.shape[0]

    def take(self, index) -> "ExpandedRows":
        return ExpandedRows(self.subject[index], self.j[index], self.eval_time[index],
                            self.exposure[index], self.delta[index], self.n_subjects)

    def network_input(self, data: SurvivalData, time_scale: float = 1.0,
                      index=None) -> np.ndarray:
        """Rows ``(t_j / time_scale, x_i)`` for the network."""
        subject = self.subject if index is None else self.subject[index]
        t = self.eval_time if index is None else self.eval_time[index]
        return np.column_stack([t / time_scale, data.x[subject]])

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["subject", "j", "eval_time", "exposure", "delta"])
            for row in zip(self.subject, self.j, self.eval_time, self.exposure, self.delta):
                w.writerow([int(row[0]), int(row[1]), repr(float(row[2])),
                            repr(float(row[3])), int(row[4])])


def expand(data: SurvivalData, grid: TimeGrid) -> ExpandedRows:
    """Expand each subject into one row per grid interval ``(t_{j-1}, t_j]`` it is at risk in.

    Row ``(i, j)`` carries exposure ``min(T_i, t_j) - t_{j-1}`` and event flag
    ``1{T_i in (t_{j-1}, t_j], Delta_i = 1}``.  Rows with zero exposure are
    dropped; they contribute nothing to the likelihood.
    """
    b = grid.breakpoints
    if data.n and data.time.max() > grid.tau:
        raise ConfigurationError(f"observed time {data.time.max()} exceeds tau={grid.tau}; "
                                 "truncate before expanding")
    # Number of intervals whose left endpoint lies strictly below T_i.
    counts = np.searchsorted(b, data.time, side="left")
    counts = np.minimum(counts, grid.m)
    total = int(counts.sum())
    subject = np.repeat(np.arange(data.n), counts)
    starts = np.cumsum(counts) - counts
    j = np.arange(total) - np.repeat(starts, counts) + 1
    left = b[j - 1]
    right = b[j]
    t_i = data.time[subject]
    exposure = np.minimum(t_i, right) - left
    last = np.zeros(total, dtype=bool)
    if total:
        last[np.cumsum(counts)[counts > 0] - 1] = True
    delta = (last & (data.event[subject] == 1)).astype(np.int8)
    return ExpandedRows(subject, j, right, exposure, delta, data.n)
