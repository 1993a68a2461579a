"""Information criteria for Cox models with change-points.

Every criterion has the form ``-2 * log_pl + penalty`` where the penalty
splits into a change-point part and a regression part:

=============  ==============================  ==================================
criterion      change-point part               regression part
=============  ==============================  ==================================
``aic``        ``6 m``                         ``2 p (m + 1)``
``aic_naive``  ``2 m``                         ``2 p (m + 1)``
``aic_xi``     ``4 sum_j C(A_j, A_j + xi*_j)``  ``2 sum_j tr[A_j (A_j + xi*_j)^-1]``
``tic``        ``4 sum_j C(A0_j, B0_j)``        ``2 sum_j tr[A0_j B0_j^-1]``
=============  ==============================  ==================================

``C`` is the expected supremum of a two-sided drifted Brownian motion
whose drifts and diffusions come from the quadratic forms of the plug-in
matrices along the estimated jump ``beta_{j+1} - beta_j``;
:mod:`coxcp.bm_oracle` checks it by simulation.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .partial_likelihood import segment_terms
from .search import ChangePointModelFit, SearchConfig, SegmentCostTable, search
from .survival import SurvivalDataset

__all__ = [
    "ContractError",
    "DegenerateCWarning",
    "SegmentMatrices",
    "CriterionReport",
    "CRITERIA",
    "score_terms",
    "a_hat",
    "b_hat",
    "segment_matrices",
    "c_hat",
    "c_hat_literal",
    "c_from_forms",
    "aic",
    "aic_naive",
    "aic_xi",
    "aic_value",
    "aic_naive_value",
    "robust_score_w",
    "tic",
    "tic_from_matrices",
    "evaluate",
    "rank_fits",
    "rank_models",
    "reports_to_json",
]

CRITERIA = ("aic", "aic_naive", "aic_xi", "tic")

_DEGENERATE_TOL = 1e-12


class ContractError(ValueError):
    """A criterion was requested outside the setting it is defined for."""


class DegenerateCWarning(RuntimeWarning):
    pass


@dataclass
class SegmentMatrices:
    """Per-segment plug-in matrices.

    ``xi_star[j]`` is the ridge shift on the same ``1/n`` scale as
    ``A_hat``; it equals the ridge part of ``B_hat``, ``|D_j| xi / n``.
    """

    A_hat: list[np.ndarray]
    B_hat: list[np.ndarray]
    xi_star: np.ndarray
    variant: str = "per_event_sum"

    @property
    def A_plus_ridge(self) -> list[np.ndarray]:
        return [A + x * np.eye(A.shape[0]) for A, x in zip(self.A_hat, self.xi_star)]


@dataclass
class CriterionReport:
    m: int
    criterion: str
    value: float
    penalty_changepoint: float
    penalty_regression: float
    fit: ChangePointModelFit = field(repr=False)

    @property
    def penalty(self) -> float:
        return self.penalty_changepoint + self.penalty_regression

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "k_hat": [float(k) for k in self.fit.partition.changepoints],
            "beta_hat": self.fit.betas.tolist(),
            "log_pl": float(self.fit.log_pl),
            "criterion": self.criterion,
            "value": float(self.value),
            "penalty_changepoint": float(self.penalty_changepoint),
            "penalty_regression": float(self.penalty_regression),
        }


# -- plug-in matrices ---------------------------------------------------------

def _segment_slices(dataset: SurvivalDataset, fit: ChangePointModelFit):
    for j in range(fit.partition.n_segments):
        yield j, dataset.segment_event_range(fit.partition, j)


def _moments(dataset, lo, hi, beta):
    """``h``, ``H - h h'`` and ``S0`` at each event of ``lo:hi``."""
    s0 = dataset.event_risk_start[lo]
    Z = dataset.Z[s0:]
    eta = Z @ beta
    e = dataset.weights[s0:] * np.exp(eta - eta.max())
    idx = dataset.event_risk_start[lo:hi] - s0
    S0 = np.cumsum(e[::-1])[::-1][idx]
    ez = e[:, None] * Z
    S1 = np.cumsum(ez[::-1], axis=0)[::-1][idx]
    S2 = np.cumsum((ez[:, :, None] * Z[:, None, :])[::-1], axis=0)[::-1][idx]
    h = S1 / S0[:, None]
    cov = S2 / S0[:, None, None] - h[:, :, None] * h[:, None, :]
    return h, cov


def score_terms(dataset: SurvivalDataset, fit: ChangePointModelFit, j: int) -> np.ndarray:
    """Per-event score contributions ``z_i - h(t_i) - xi beta_j`` of segment ``j``."""
    lo, hi = dataset.segment_event_range(fit.partition, j)
    if hi <= lo:
        return np.zeros((0, dataset.p))
    beta = fit.betas[j]
    h, _ = _moments(dataset, lo, hi, beta)
    return dataset.Z[dataset.event_rows[lo:hi]] - h - fit.xi * beta


def a_hat(dataset: SurvivalDataset, fit: ChangePointModelFit, variant: str = "per_event_sum") -> list[np.ndarray]:
    """Per-segment score second-moment estimates.

    ``per_event_sum`` is ``(1/n) sum_i w_i s_i s_i'``.  ``literal_outer`` is
    the outer product of the summed segment score, which vanishes at the
    optimum and is kept for reference only.
    """
    n = dataset.n
    out = []
    for j, (lo, hi) in _segment_slices(dataset, fit):
        s = score_terms(dataset, fit, j)
        w = dataset.event_weights[lo:hi]
        if variant == "per_event_sum":
            out.append((s * w[:, None]).T @ s / n)
        elif variant == "literal_outer":
            tot = w @ s if s.size else np.zeros(dataset.p)
            out.append(np.outer(tot, tot) / n)
        else:
            raise ValueError(f"unknown A-hat variant {variant!r}")
    return out


def b_hat(dataset: SurvivalDataset, fit: ChangePointModelFit, xi: float | None = None) -> list[np.ndarray]:
    """``(1/n) sum_{D_j} w_i (H - h h' + xi I)``, i.e. ``-1/n`` times the segment Hessian."""
    xi = fit.xi if xi is None else xi
    n, p = dataset.n, dataset.p
    out = []
    for j, (lo, hi) in _segment_slices(dataset, fit):
        if hi <= lo:
            out.append(np.zeros((p, p)))
            continue
        _, cov = _moments(dataset, lo, hi, fit.betas[j])
        w = dataset.event_weights[lo:hi]
        B = np.einsum("i,ijk->jk", w, cov) + xi * w.sum() * np.eye(p)
        out.append(0.5 * (B + B.T) / n)
    return out


def segment_matrices(dataset: SurvivalDataset, fit: ChangePointModelFit, variant: str = "per_event_sum") -> SegmentMatrices:
    counts = np.array([dataset.event_weights[lo:hi].sum() for _, (lo, hi) in _segment_slices(dataset, fit)])
    return SegmentMatrices(
        A_hat=a_hat(dataset, fit, variant),
        B_hat=b_hat(dataset, fit),
        xi_star=counts * fit.xi / dataset.n,
        variant=variant,
    )


# -- the change-point constant ------------------------------------------------

def c_from_forms(qa_j: float, qa_j1: float, qb_j: float, qb_j1: float) -> float:
    """Expected supremum of the limiting two-sided process from four quadratic forms.

    ``qa`` are the diffusion forms (A family), ``qb`` the drift forms (B
    family).  With ``x = qa_j / qb_j`` and ``y = qa_j1 / qb_j1`` this is
    ``x + y - x y / (x + y) = (x^2 + x y + y^2) / (x + y)``.
    """
    x = qa_j / qb_j
    y = qa_j1 / qb_j1
    return (x * x + x * y + y * y) / (x + y)


def _forms(A_dagger_j, A_dagger_j1, A_ddagger_j, A_ddagger_j1, delta):
    d = np.asarray(delta, dtype=float).ravel()
    norm = np.linalg.norm(d)
    if norm == 0 or not np.isfinite(norm):
        return None
    d = d / norm  # the constant is scale free; normalizing makes the tolerance absolute
    mats = (A_dagger_j, A_dagger_j1, A_ddagger_j, A_ddagger_j1)
    return tuple(float(d @ np.atleast_2d(M) @ d) for M in mats)


def c_hat(A_dagger_j, A_dagger_j1, A_ddagger_j, A_ddagger_j1, delta) -> float:
    """Change-point bias constant for the jump between segments ``j`` and ``j+1``.

    ``dagger`` matrices set the diffusion, ``ddagger`` matrices the drift.
    Falls back to ``3/2`` (the equal-matrix value) with a
    :class:`DegenerateCWarning` when the jump is zero or a form is not
    positive.
    """
    q = _forms(A_dagger_j, A_dagger_j1, A_ddagger_j, A_ddagger_j1, delta)
    if q is None or min(q) <= _DEGENERATE_TOL:
        warnings.warn("degenerate jump or quadratic form; using C = 3/2", DegenerateCWarning, stacklevel=2)
        return 1.5
    return c_from_forms(*q)


def c_hat_literal(A_dagger_j, A_dagger_j1, A_ddagger_j, A_ddagger_j1, delta) -> float:
    """Literal rational-function variant of the constant, for comparison only.

    Its second numerator term pairs ``j+1`` forms where the supremum law
    pairs ``j`` with ``j+1``; it agrees with :func:`c_hat` only when the
    two segments' ratios coincide.
    """
    q = _forms(A_dagger_j, A_dagger_j1, A_ddagger_j, A_ddagger_j1, delta)
    if q is None:
        return 1.5
    a1, a2, b1, b2 = q
    num = (b1 * a2) ** 2 + (b2 * a2) ** 2 + b1 * b2 * a1 * a2
    den = b1 * b2 * (b1 * a2 + b2 * a1)
    return num / den


def _change_point_penalty(betas, dagger, ddagger) -> float:
    total = 0.0
    for j in range(len(betas) - 1):
        delta = betas[j + 1] - betas[j]
        total += c_hat(dagger[j], dagger[j + 1], ddagger[j], ddagger[j + 1], delta)
    return 4.0 * total


def _trace_ratio(A, B, what):
    try:
        cf = scipy.linalg.cho_factor(B)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(f"{what} is singular or not positive definite; use a ridge penalty xi > 0") from None
    return float(np.trace(scipy.linalg.cho_solve(cf, A)))


# -- criteria -----------------------------------------------------------------

def aic_value(log_pl: float, m: int, p: int) -> float:
    return -2.0 * log_pl + 6 * m + 2 * p * (m + 1)


def aic_naive_value(log_pl: float, m: int, p: int) -> float:
    return -2.0 * log_pl + 2 * m + 2 * p * (m + 1)


def _require_unpenalized(fit, name):
    if fit.xi != 0:
        raise ContractError(f"{name} is defined for xi = 0 fits; use aic_xi for ridge fits")


def aic(fit: ChangePointModelFit) -> CriterionReport:
    """Change-point-aware AIC: ``-2 l + 6 m + 2 p (m + 1)``."""
    _require_unpenalized(fit, "AIC")
    m, p = fit.m, fit.p
    return CriterionReport(m, "aic", aic_value(fit.log_pl, m, p), 6.0 * m, 2.0 * p * (m + 1), fit)


def aic_naive(fit: ChangePointModelFit) -> CriterionReport:
    """Parameter-counting AIC: ``-2 l + 2 m + 2 p (m + 1)``."""
    _require_unpenalized(fit, "AIC_naive")
    m, p = fit.m, fit.p
    return CriterionReport(m, "aic_naive", aic_naive_value(fit.log_pl, m, p), 2.0 * m, 2.0 * p * (m + 1), fit)


def aic_xi(fit: ChangePointModelFit, matrices: SegmentMatrices) -> CriterionReport:
    """Ridge criterion from plug-in matrices (see :func:`segment_matrices`)."""
    dagger = matrices.A_hat
    ddagger = matrices.A_plus_ridge
    cp = _change_point_penalty(fit.betas, dagger, ddagger)
    reg = 2.0 * sum(_trace_ratio(A, B, f"A_hat + xi* I of segment {j}") for j, (A, B) in enumerate(zip(dagger, ddagger)))
    return CriterionReport(fit.m, "aic_xi", -2.0 * fit.log_pl + cp + reg, cp, reg, fit)


def robust_score_w(dataset: SurvivalDataset, fit: ChangePointModelFit, j: int) -> np.ndarray:
    """Per-row robust score residuals for segment ``j``, shape ``(n_rows, p)``.

    Row ``i`` gets its own event score (if its event falls in the segment)
    minus its share of the compensator over the segment's events ``l``
    with ``t_l <= t_i``::

        w_i = d_i 1{t_i in seg} (z_i - h(t_i))
              - sum_l w_l exp(b'z_i) / S0(t_l) (z_i - h(t_l))

    Weighted by row weights the residuals sum to the segment score, which
    is zero at an unpenalized optimum.
    """
    _require_unpenalized(fit, "the robust score")
    lo, hi = dataset.segment_event_range(fit.partition, j)
    n_rows, p = dataset.n_rows, dataset.p
    W = np.zeros((n_rows, p))
    if hi <= lo:
        return W
    beta = fit.betas[j]
    Z = dataset.Z
    eta = Z @ beta
    c = eta.max()
    ez = np.exp(eta - c)
    e = dataset.weights * ez
    idx = dataset.event_risk_start[lo:hi]
    S0 = np.cumsum(e[::-1])[::-1][idx]
    S1 = np.cumsum((e[:, None] * Z)[::-1], axis=0)[::-1][idx]
    h = S1 / S0[:, None]
    wl = dataset.event_weights[lo:hi]
    ev = dataset.event_rows[lo:hi]
    W[ev] += Z[ev] - h
    # cumulative compensator pieces over events with t_l <= t_i
    a = np.concatenate([[0.0], np.cumsum(wl / S0)])
    b = np.concatenate([np.zeros((1, p)), np.cumsum((wl / S0)[:, None] * h, axis=0)])
    upto = np.searchsorted(dataset.event_times[lo:hi], dataset.times, side="right")
    W -= ez[:, None] * (Z * a[upto][:, None] - b[upto])
    return W


def _a0_hat(dataset, fit):
    out = []
    for j in range(fit.partition.n_segments):
        W = robust_score_w(dataset, fit, j)
        out.append((W * dataset.weights[:, None]).T @ W / dataset.n)
    return out


def tic_from_matrices(fit: ChangePointModelFit, A0: list[np.ndarray], B0: list[np.ndarray]) -> CriterionReport:
    cp = _change_point_penalty(fit.betas, A0, B0)
    reg = 2.0 * sum(_trace_ratio(A, B, f"B0_hat of segment {j}") for j, (A, B) in enumerate(zip(A0, B0)))
    return CriterionReport(fit.m, "tic", -2.0 * fit.log_pl + cp + reg, cp, reg, fit)


def tic(dataset: SurvivalDataset, fit: ChangePointModelFit) -> CriterionReport:
    """Misspecification-robust criterion with sandwich matrices ``A0``/``B0``."""
    _require_unpenalized(fit, "TIC")
    return tic_from_matrices(fit, _a0_hat(dataset, fit), b_hat(dataset, fit, xi=0.0))


def evaluate(dataset: SurvivalDataset, fit: ChangePointModelFit, criterion: str) -> CriterionReport:
    if criterion == "aic":
        return aic(fit)
    if criterion in ("aic_naive", "naive"):
        return aic_naive(fit)
    if criterion == "aic_xi":
        return aic_xi(fit, segment_matrices(dataset, fit))
    if criterion == "tic":
        return tic(dataset, fit)
    raise ValueError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")


def rank_fits(reports: list[CriterionReport]) -> list[CriterionReport]:
    """Sort ascending by value; ties go to the smaller ``m``."""
    return sorted(reports, key=lambda r: (r.value, r.m))


def rank_models(dataset: SurvivalDataset, m_max: int, xi: float = 0.0, criterion: str = "aic",
                config: SearchConfig = SearchConfig()) -> list[CriterionReport]:
    """Fit ``m = 0..m_max`` and rank them by ``criterion``."""
    table = SegmentCostTable(dataset, xi, config)
    fits = [search(dataset, m, xi, config, table=table) for m in range(m_max + 1)]
    return rank_fits([evaluate(dataset, f, criterion) for f in fits])


def reports_to_json(reports: list[CriterionReport], **meta) -> str:
    payload = dict(meta)
    payload["models"] = [r.to_dict() for r in reports]
    return json.dumps(payload, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and math.isinf(o):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
