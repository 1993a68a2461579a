"""Right-censored survival data, risk sets and product-limit curves.

The dataset is stored column-wise and sorted by time once, at construction.
Every downstream quantity (partial likelihood, plug-in matrices, search)
relies on that ordering, so the arrays are frozen afterwards.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DataError",
    "Subject",
    "SegmentPartition",
    "SurvivalDataset",
    "read_csv",
    "risk_set",
    "event_set",
    "h_vector",
    "H_matrix",
    "kaplan_meier",
]


class DataError(ValueError):
    """Malformed or inconsistent survival data."""


@dataclass(frozen=True)
class Subject:
    time: float
    event: bool
    covariates: tuple[float, ...]
    weight: int = 1


@dataclass(frozen=True)
class SegmentPartition:
    """Change-points ``0 < k_1 < ... < k_m < T``.

    Segment ``j`` (0-based) is ``[k_j, k_{j+1})`` with ``k_0 = 0``.  The last
    segment is closed on the right so that an event recorded exactly at the
    follow-up horizon is not lost.
    """

    changepoints: tuple[float, ...] = ()

    def __post_init__(self):
        k = tuple(float(v) for v in self.changepoints)
        if any(b <= a for a, b in zip(k, k[1:])):
            raise ValueError(f"change-points must be strictly increasing, got {k}")
        if k and k[0] <= 0:
            raise ValueError("change-points must be positive")
        object.__setattr__(self, "changepoints", k)

    @property
    def m(self) -> int:
        return len(self.changepoints)

    @property
    def n_segments(self) -> int:
        return len(self.changepoints) + 1

    def bounds(self, j: int) -> tuple[float, float]:
        """Lower and upper edge of segment ``j``; the last upper edge is ``inf``."""
        if not 0 <= j <= self.m:
            raise IndexError(f"segment index {j} outside 0..{self.m}")
        edges = (0.0,) + self.changepoints + (np.inf,)
        return edges[j], edges[j + 1]


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class SurvivalDataset:
    """Time-sorted right-censored observations with integer replication weights.

    Parameters
    ----------
    times : array_like, shape (n,)
        Follow-up times, strictly positive.
    events : array_like of bool, shape (n,)
        ``True`` for an observed event, ``False`` for censoring.
    covariates : array_like, shape (n, p) or (n,)
    weights : array_like of int, optional
        Replication counts (default 1).  A row with weight 2 behaves exactly
        like two identical rows.
    horizon : float, optional
        Follow-up period ``T``; defaults to the largest time.
    """

    def __init__(self, times, events, covariates, weights=None, horizon=None):
        t = np.asarray(times, dtype=float).ravel()
        d = np.asarray(events).ravel()
        z = np.asarray(covariates, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        n = t.shape[0]
        if z.ndim != 2 or z.shape[0] != n or d.shape[0] != n:
            raise DataError("times, events and covariates must have the same length")
        if n == 0:
            raise DataError("empty dataset")
        if not np.all(np.isfinite(t)) or np.any(t <= 0):
            raise DataError("times must be finite and strictly positive")
        if not np.all(np.isfinite(z)):
            raise DataError("covariates must be finite")
        if d.dtype != bool:
            if not np.all(np.isin(d, (0, 1))):
                raise DataError("event indicators must be 0/1")
            d = d.astype(bool)
        if weights is None:
            w = np.ones(n, dtype=np.int64)
        else:
            w = np.asarray(weights)
            if w.shape != (n,) or np.any(w != np.round(w)) or np.any(w < 1):
                raise DataError("weights must be positive integers")
            w = w.astype(np.int64)
        if not d.any():
            raise DataError("dataset has no events")
        T = float(t.max()) if horizon is None else float(horizon)
        if T < t.max():
            raise DataError(f"horizon {T} is smaller than the largest time {t.max()}")

        order = np.argsort(t, kind="stable")
        self.times = _freeze(t[order])
        self.events = _freeze(d[order])
        self.Z = _freeze(np.ascontiguousarray(z[order]))
        self.weights = _freeze(w[order])
        self.horizon = T
        self.order = _freeze(order)

        # first row at risk at each row's own time (subjects with t' >= t)
        self.risk_start = _freeze(np.searchsorted(self.times, self.times, side="left"))
        ev = np.flatnonzero(self.events)
        self.event_rows = _freeze(ev)
        self.event_times = _freeze(self.times[ev])
        self.event_risk_start = _freeze(self.risk_start[ev])
        self.event_weights = _freeze(self.weights[ev].astype(float))
        self.distinct_event_times = _freeze(np.unique(self.event_times))
        self.has_ties = bool(np.any(np.diff(self.times) == 0))

    @classmethod
    def from_subjects(cls, subjects: Iterable[Subject], horizon=None) -> "SurvivalDataset":
        subjects = list(subjects)
        if not subjects:
            raise DataError("empty dataset")
        p = len(subjects[0].covariates)
        if any(len(s.covariates) != p for s in subjects):
            raise DataError("all subjects must have the same number of covariates")
        return cls(
            [s.time for s in subjects],
            [bool(s.event) for s in subjects],
            np.array([s.covariates for s in subjects], dtype=float).reshape(len(subjects), p),
            [s.weight for s in subjects],
            horizon=horizon,
        )

    @property
    def n_rows(self) -> int:
        return self.times.shape[0]

    @property
    def n(self) -> int:
        """Number of subjects counting replication weights."""
        return int(self.weights.sum())

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.weights[self.events].sum())

    def subjects(self) -> list[Subject]:
        return [
            Subject(float(t), bool(d), tuple(float(v) for v in z), int(w))
            for t, d, z, w in zip(self.times, self.events, self.Z, self.weights)
        ]

    def with_covariates(self, Z) -> "SurvivalDataset":
        """Same times/events/weights with a replacement covariate matrix (in sorted order)."""
        return SurvivalDataset(self.times, self.events, Z, self.weights, horizon=self.horizon)

    def with_times(self, times) -> "SurvivalDataset":
        return SurvivalDataset(times, self.events, self.Z, self.weights, horizon=None)

    def expanded(self) -> "SurvivalDataset":
        """Physically duplicate every row ``weight`` times."""
        rep = self.weights
        return SurvivalDataset(
            np.repeat(self.times, rep),
            np.repeat(self.events, rep),
            np.repeat(self.Z, rep, axis=0),
            horizon=self.horizon,
        )

    def event_range(self, lo: float, hi: float) -> tuple[int, int]:
        """Slice of ``event_rows`` whose times fall in ``[lo, hi)``."""
        a = int(np.searchsorted(self.event_times, lo, side="left"))
        b = int(np.searchsorted(self.event_times, hi, side="left")) if np.isfinite(hi) else self.event_times.size
        return a, b

    def segment_event_range(self, partition: SegmentPartition, j: int) -> tuple[int, int]:
        return self.event_range(*partition.bounds(j))

    def __repr__(self):
        return (
            f"SurvivalDataset(n={self.n}, rows={self.n_rows}, p={self.p}, "
            f"events={self.n_events}, T={self.horizon:g})"
        )


def read_csv(path, horizon=None) -> SurvivalDataset:
    """Read ``time,event,z1,...,zp[,weight]`` with a header row.

    Raises :class:`DataError` naming the offending line and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "time" or header[1] != "event":
            raise DataError(f"{path}: header must start with 'time,event' followed by covariates")
        has_weight = header[-1] == "weight"
        zcols = header[2:-1] if has_weight else header[2:]
        if not zcols:
            raise DataError(f"{path}: no covariate columns")
        times, events, Z, weights = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for col, raw in zip(header, row):
                try:
                    vals.append(float(raw))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column '{col}' has non-numeric value {raw!r}") from None
            t, e = vals[0], vals[1]
            if not t > 0:
                raise DataError(f"{path}:{lineno}: column 'time' must be positive, got {row[0]!r}")
            if e not in (0.0, 1.0):
                raise DataError(f"{path}:{lineno}: column 'event' must be 0 or 1, got {row[1]!r}")
            if has_weight:
                wv = vals[-1]
                if wv < 1 or wv != int(wv):
                    raise DataError(f"{path}:{lineno}: column 'weight' must be a positive integer, got {row[-1]!r}")
                weights.append(int(wv))
                Z.append(vals[2:-1])
            else:
                weights.append(1)
                Z.append(vals[2:])
            times.append(t)
            events.append(bool(e))
    if not times:
        raise DataError(f"{path}: no data rows")
    ds = SurvivalDataset(times, events, np.array(Z), weights, horizon=horizon)
    ds.covariate_names = tuple(zcols)
    return ds


def risk_set(dataset: SurvivalDataset, t: float) -> np.ndarray:
    """Row indices (in sorted order) with ``time >= t``.

    A subject failing at ``t`` belongs to its own risk set, as in the usual
    Cox convention; tied subjects are all included.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    start = int(np.searchsorted(dataset.times, t, side="left"))
    return np.arange(start, dataset.n_rows)


def event_set(dataset: SurvivalDataset, partition: SegmentPartition, j: int) -> np.ndarray:
    """Row indices of events falling in segment ``j`` (0-based)."""
    a, b = dataset.segment_event_range(partition, j)
    return dataset.event_rows[a:b]


def _softmax_weights(dataset, rows, beta):
    eta = dataset.Z[rows] @ np.asarray(beta, dtype=float)
    e = dataset.weights[rows] * np.exp(eta - eta.max())
    return e / e.sum()


def h_vector(dataset: SurvivalDataset, t_i: float, beta) -> np.ndarray:
    """Exponentially tilted mean of the covariates over the risk set at ``t_i``."""
    rows = risk_set(dataset, t_i)
    if rows.size == 0:
        raise ValueError(f"empty risk set at t={t_i}")
    pi = _softmax_weights(dataset, rows, beta)
    return pi @ dataset.Z[rows]


def H_matrix(dataset: SurvivalDataset, t_i: float, beta) -> np.ndarray:
    """Exponentially tilted second moment of the covariates over the risk set."""
    rows = risk_set(dataset, t_i)
    if rows.size == 0:
        raise ValueError(f"empty risk set at t={t_i}")
    pi = _softmax_weights(dataset, rows, beta)
    Zr = dataset.Z[rows]
    return (Zr * pi[:, None]).T @ Zr


def kaplan_meier(dataset: SurvivalDataset, group_labels: Sequence | None = None) -> dict:
    """Product-limit survival curves per group.

    ``group_labels`` is given in the dataset's sorted row order (length
    ``n_rows``); ``None`` puts everyone in one group labelled ``0``.

    Returns
    -------
    dict
        ``label -> (times, survival)``; ``times[0] == 0`` and
        ``survival[0] == 1``, followed by one entry per distinct event time
        (the value holds on ``[time, next time)``).
    """
    if group_labels is None:
        labels = np.zeros(dataset.n_rows, dtype=int)
    else:
        labels = np.asarray(group_labels)
        if labels.shape != (dataset.n_rows,):
            raise ValueError("group_labels must have one entry per row")
    curves = {}
    for g in np.unique(labels):
        sel = labels == g
        t = dataset.times[sel]
        d = dataset.events[sel]
        w = dataset.weights[sel]
        if t.size == 0:
            curves[g.item()] = (np.zeros(0), np.zeros(0))
            continue
        ut = np.unique(t[d])
        at_risk = np.array([w[t >= u].sum() for u in ut], dtype=float)
        deaths = np.array([w[(t == u) & d].sum() for u in ut], dtype=float)
        surv = np.cumprod(1.0 - deaths / at_risk)
        curves[g.item()] = (np.concatenate([[0.0], ut]), np.concatenate([[1.0], surv]))
    return curves
