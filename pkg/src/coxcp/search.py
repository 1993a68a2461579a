"""Profile-likelihood search over change-point locations.

Between consecutive distinct event times the event sets, and hence the
profile likelihood, do not change.  Cuts are therefore indexed by distinct
event time: cut position ``r`` places the ``r``-th distinct event time (and
everything after it) in the right-hand segment.  Position ``0`` is the
origin and position ``D`` (the number of distinct event times) the end of
follow-up.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .partial_likelihood import (
    RidgeConfig,
    SegmentFit,
    SingularHessianError,
    fit_event_range,
    log_partial_likelihood,
)
from .survival import SegmentPartition, SurvivalDataset

__all__ = [
    "InfeasibleError",
    "SearchConfig",
    "ChangePointModelFit",
    "SegmentCostTable",
    "candidate_grid",
    "segment_cost",
    "search",
    "exhaustive_search",
]

TIE_RTOL = 1e-10


class InfeasibleError(ValueError):
    """No partition satisfies the per-segment event constraint."""


@dataclass(frozen=True)
class SearchConfig:
    """Search settings.

    ``min_events_per_segment`` defaults to ``p + 1``.  ``min_event_fraction``
    additionally requires each segment to hold at least that share of the
    (weighted) events, which trims change-points away from the ends of
    follow-up.  ``max_changepoint`` optionally caps the location of
    change-points (e.g. a clinically motivated upper limit).
    """

    min_events_per_segment: int | None = None
    min_event_fraction: float = 0.0
    candidate_rule: str = "event_times"
    exhaustive_limit: int = 30
    max_changepoint: float | None = None
    ridge: RidgeConfig = RidgeConfig()

    def __post_init__(self):
        if self.candidate_rule not in ("event_times", "midpoints"):
            raise ValueError(f"unknown candidate rule {self.candidate_rule!r}")
        if self.min_events_per_segment is not None and self.min_events_per_segment < 1:
            raise ValueError("min_events_per_segment must be positive")
        if not 0.0 <= self.min_event_fraction < 0.5:
            raise ValueError("min_event_fraction must lie in [0, 0.5)")

    def min_events(self, p: int, n_events: float = 0.0) -> float:
        """Smallest admissible (weighted) event count of a segment."""
        if self.min_events_per_segment is None:
            base = p + 1
        elif self.min_events_per_segment < p + 1:
            raise ValueError(f"min_events_per_segment must be at least p + 1 = {p + 1}")
        else:
            base = self.min_events_per_segment
        return max(base, math.ceil(self.min_event_fraction * n_events - 1e-9))


@dataclass
class ChangePointModelFit:
    m: int
    partition: SegmentPartition
    betas: np.ndarray
    log_pl: float
    xi: float
    segments: list[SegmentFit]
    cut_positions: tuple[int, ...] = ()
    candidates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_segment_fits: int = 0

    @property
    def changepoints(self) -> np.ndarray:
        return np.array(self.partition.changepoints)

    @property
    def p(self) -> int:
        return self.betas.shape[1]

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.segments)


def candidate_grid(dataset: SurvivalDataset, rule: str = "event_times") -> np.ndarray:
    """Candidate change-point values, one per gap between distinct event times.

    Entry ``r - 1`` is the location used for cut position ``r``
    (``r = 1..D-1``).
    """
    et = dataset.distinct_event_times
    if et.size < 2:
        raise InfeasibleError("need at least two distinct event times to place a change-point")
    if rule == "event_times":
        return et[1:].copy()
    if rule == "midpoints":
        return 0.5 * (et[:-1] + et[1:])
    raise ValueError(f"unknown candidate rule {rule!r}")


class SegmentCostTable:
    """Memoized maximized segment contributions indexed by cut positions.

    ``cost(r, s)`` is ``sup_beta`` of the contribution of the events whose
    distinct-time index lies in ``[r, s)``, or ``-inf`` when the segment has
    too few events or the Newton fit fails.  Fills are idempotent, so the
    table can be shared between searches for different ``m``.
    """

    def __init__(self, dataset: SurvivalDataset, xi: float = 0.0, config: SearchConfig = SearchConfig(), cache=True):
        self.dataset = dataset
        self.config = config
        r = config.ridge
        self.ridge = RidgeConfig(xi, r.newton_tol, r.max_iter, r.step_halvings)
        self.xi = float(xi)
        self.min_events = config.min_events(dataset.p, dataset.n_events)
        et = dataset.distinct_event_times
        self.D = et.size
        # event-row slice boundaries for each cut position 0..D
        self.bounds = np.searchsorted(dataset.event_times, et, side="left").tolist() + [dataset.event_times.size]
        cum = np.concatenate([[0.0], np.cumsum(dataset.event_weights)])
        self._cum_events = cum
        cand = candidate_grid(dataset, config.candidate_rule) if self.D >= 2 else np.zeros(0)
        self.locations = np.concatenate([[0.0], cand, [np.inf]])
        last = self.D - 1
        if config.max_changepoint is not None:
            ok = np.flatnonzero(cand <= config.max_changepoint)
            last = int(ok[-1]) + 1 if ok.size else 0
        self.last_cut = last
        self.cache = cache
        self._memo: dict[tuple[int, int], SegmentFit | None] = {}
        self.n_fits = 0

    def n_events(self, r: int, s: int) -> float:
        return float(self._cum_events[self.bounds[s]] - self._cum_events[self.bounds[r]])

    def fit(self, r: int, s: int) -> SegmentFit | None:
        key = (r, s)
        if self.cache and key in self._memo:
            return self._memo[key]
        if self.n_events(r, s) < self.min_events:
            res = None
        else:
            init = None
            prev = self._memo.get((r, s - 1))
            if prev is not None:
                init = prev.beta
            try:
                res = fit_event_range(self.dataset, self.bounds[r], self.bounds[s], self.ridge, init)
                self.n_fits += 1
            except SingularHessianError:
                res = None
            if res is not None and not res.converged and init is not None:
                res = fit_event_range(self.dataset, self.bounds[r], self.bounds[s], self.ridge, None)
                self.n_fits += 1
            if res is not None and not res.converged:
                res = None
        if self.cache:
            self._memo[key] = res
        return res

    def cost(self, r: int, s: int) -> float:
        f = self.fit(r, s)
        return -math.inf if f is None else f.log_pl

    def cut_valid(self, r: int) -> bool:
        return 1 <= r <= self.last_cut

    def location(self, r: int) -> float:
        return float(self.locations[r])


def segment_cost(dataset: SurvivalDataset, a: float, b: float, xi: float = 0.0,
                 config: SearchConfig = SearchConfig(), table: SegmentCostTable | None = None) -> float:
    """Maximized contribution of the events in ``[a, b)`` (``b = inf`` allowed)."""
    if not a < b:
        raise ValueError("need a < b")
    table = table or SegmentCostTable(dataset, xi, config)
    et = dataset.distinct_event_times
    r = int(np.searchsorted(et, a, side="left"))
    s = table.D if not np.isfinite(b) else int(np.searchsorted(et, b, side="left"))
    if s <= r:
        return -math.inf if table.min_events > 0 else 0.0
    return table.cost(r, s)


def _assemble(table: SegmentCostTable, cuts: tuple[int, ...]) -> ChangePointModelFit:
    ds = table.dataset
    positions = (0,) + tuple(cuts) + (table.D,)
    fits = [table.fit(a, b) for a, b in zip(positions, positions[1:])]
    part = SegmentPartition(tuple(table.location(r) for r in cuts))
    betas = np.array([f.beta for f in fits]).reshape(len(fits), ds.p)
    log_pl = log_partial_likelihood(ds, part, betas, table.xi)
    return ChangePointModelFit(
        m=len(cuts), partition=part, betas=betas, log_pl=log_pl, xi=table.xi,
        segments=fits, cut_positions=tuple(cuts), candidates=table.locations[1:-1].copy(),
        n_segment_fits=table.n_fits,
    )


def _close(a: float, b: float) -> bool:
    return a >= b - TIE_RTOL * max(1.0, abs(b))


def search(dataset: SurvivalDataset, m: int, xi: float = 0.0, config: SearchConfig = SearchConfig(),
           table: SegmentCostTable | None = None) -> ChangePointModelFit:
    """Global maximizer of the profile likelihood over ``m`` change-points.

    Dynamic programming over suffixes, then a forward pass choosing the
    smallest feasible cut at each step, so ties resolve to the
    lexicographically smallest change-point vector.
    """
    if m < 0:
        raise ValueError("m must be non-negative")
    table = table or SegmentCostTable(dataset, xi, config)
    if table.xi != xi:
        raise ValueError("cost table was built for a different xi")
    D = table.D
    if m == 0:
        if table.cost(0, D) == -math.inf:
            raise InfeasibleError(
                f"the full follow-up has fewer than {table.min_events} events or the fit failed"
            )
        return _assemble(table, ())
    if D < 2 or table.last_cut < m:
        raise InfeasibleError(f"not enough candidate locations for {m} change-points")

    neg = -math.inf
    # suffix[c][r]: best value of splitting positions [r, D) with c more cuts
    suffix = [[neg] * (D + 1) for _ in range(m + 1)]
    for r in range(0, D):
        suffix[0][r] = table.cost(r, D)
    for c in range(1, m + 1):
        row, prev = suffix[c], suffix[c - 1]
        for r in (range(0, D) if c < m else (0,)):
            best = neg
            for r2 in range(max(r + 1, 1), table.last_cut + 1):
                tail = prev[r2]
                if tail == neg:
                    continue
                v = table.cost(r, r2)
                if v == neg:
                    continue
                if v + tail > best:
                    best = v + tail
            row[r] = best
    target = suffix[m][0]
    if target == neg:
        raise InfeasibleError(
            f"no placement of {m} change-points leaves every segment with at least "
            f"{table.min_events} events (min_events_per_segment)"
        )
    cuts = []
    r = 0
    for c in range(m, 0, -1):
        # value already committed + best remaining must reach the optimum
        done = sum(table.cost(a, b) for a, b in zip([0] + cuts[:-1], cuts)) if cuts else 0.0
        for r2 in range(r + 1, table.last_cut + 1):
            v = table.cost(r, r2)
            tail = suffix[c - 1][r2]
            if v == neg or tail == neg:
                continue
            if _close(done + v + tail, target):
                cuts.append(r2)
                r = r2
                break
        else:  # pragma: no cover - the optimum is always reachable
            raise RuntimeError("failed to reconstruct the optimal partition")
    return _assemble(table, tuple(cuts))


def exhaustive_search(dataset: SurvivalDataset, m: int, xi: float = 0.0,
                      config: SearchConfig = SearchConfig()) -> ChangePointModelFit:
    """Brute-force oracle: fit every ``m``-subset of candidate cuts from scratch."""
    if dataset.n_events > config.exhaustive_limit:
        raise ValueError(f"exhaustive search limited to {config.exhaustive_limit} events")
    table = SegmentCostTable(dataset, xi, config, cache=False)
    best, best_cuts = -math.inf, None
    for cuts in itertools.combinations(range(1, table.last_cut + 1), m):
        positions = (0,) + cuts + (table.D,)
        total = 0.0
        for a, b in zip(positions, positions[1:]):
            v = table.cost(a, b)
            if v == -math.inf:
                total = v
                break
            total += v
        if total == -math.inf:
            continue
        if best_cuts is None or total > best + TIE_RTOL * max(1.0, abs(best)):
            best, best_cuts = total, cuts
    if best_cuts is None:
        raise InfeasibleError(f"no feasible placement of {m} change-points")
    table.cache = True
    return _assemble(table, best_cuts)
