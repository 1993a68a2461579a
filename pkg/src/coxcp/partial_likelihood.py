"""Ridge-regularized log-partial likelihood for the change-point Cox model.

For a partition ``k`` with segments ``D_j`` the objective is

    l_xi(beta, k) = sum_j sum_{i in D_j} [beta_j'z_i - log S0(t_i; beta_j) - xi/2 beta_j'beta_j]

with ``S0(t; b) = sum_{t_i' >= t} w_i' exp(b'z_i')``.  The ridge term sits
inside the event sum, so segment ``j`` is shrunk with total weight
``|D_j| * xi``.  Each segment only sees its own coefficient vector and the
objective is separable, which is what the change-point search exploits.

Tied event times use the Breslow convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .survival import SegmentPartition, SurvivalDataset

__all__ = [
    "RidgeConfig",
    "SegmentFit",
    "SingularHessianError",
    "segment_terms",
    "log_partial_likelihood",
    "segment_log_pl",
    "segment_gradient",
    "segment_hessian",
    "fit_event_range",
    "fit_segments",
]


# objective changes below this (relative) are rounding noise near the optimum
_ROUNDING = 64 * np.finfo(float).eps
# information at the solution relative to beta = 0 below which the
# unpenalized maximum is taken to lie at infinity (monotone likelihood)
_SEPARATION_RATIO = 1e-6
_SEPARATION_SPREAD = 10.0


class SingularHessianError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class RidgeConfig:
    xi: float = 0.0
    newton_tol: float = 1e-8
    max_iter: int = 50
    step_halvings: int = 20

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError("xi must be non-negative")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.max_iter < 1 or self.step_halvings < 0:
            raise ValueError("max_iter >= 1 and step_halvings >= 0 required")


@dataclass
class SegmentFit:
    beta: np.ndarray
    log_pl: float
    converged: bool
    iterations: int
    grad_norm: float = field(default=np.nan)
    n_events: float = 0.0
    separated: bool = False


def _segment_terms_slow(dataset, lo, hi, beta, xi, order):
    """Same as :func:`segment_terms` with each risk set shifted by its own maximum."""
    p = dataset.p
    value, grad, hess = 0.0, np.zeros(p), np.zeros((p, p))
    for k in range(lo, hi):
        s = dataset.event_risk_start[k]
        Z = dataset.Z[s:]
        eta = Z @ beta
        c = eta.max()
        e = dataset.weights[s:] * np.exp(eta - c)
        S0 = e.sum()
        w = dataset.event_weights[k]
        z = dataset.Z[dataset.event_rows[k]]
        value += w * (z @ beta - np.log(S0) - c)
        h = e @ Z / S0
        grad += w * (z - h)
        hess -= w * ((Z.T * e) @ Z / S0 - np.outer(h, h))
    nD = dataset.event_weights[lo:hi].sum()
    value = float(value - 0.5 * xi * nD * (beta @ beta))
    if order == 0:
        return value
    grad = grad - xi * nD * beta
    if order == 1:
        return value, grad
    return value, grad, hess - xi * nD * np.eye(p)


def segment_terms(dataset: SurvivalDataset, lo: int, hi: int, beta, xi: float = 0.0, order: int = 2):
    """Value, gradient and Hessian of the contribution of events ``lo:hi``.

    ``lo:hi`` indexes ``dataset.event_rows``.  ``order`` limits what is
    computed (0: value only, 1: value and gradient).
    """
    beta = np.asarray(beta, dtype=float)
    p = dataset.p
    if hi <= lo:
        out = [0.0, np.zeros(p), np.zeros((p, p))]
        return tuple(out[: order + 1]) if order else 0.0
    s0 = dataset.event_risk_start[lo]
    Z = dataset.Z[s0:]
    eta = Z @ beta
    c = eta.max()
    e = dataset.weights[s0:] * np.exp(eta - c)
    idx = dataset.event_risk_start[lo:hi] - s0
    ev = dataset.event_rows[lo:hi]
    wev = dataset.event_weights[lo:hi]
    S0 = np.cumsum(e[::-1])[::-1][idx]
    nD = wev.sum()
    bb = beta @ beta
    if S0.min() > 1e-100:
        value = float(wev @ (dataset.Z[ev] @ beta - np.log(S0) - c) - 0.5 * xi * nD * bb)
        if order == 0:
            return value
        ez = e[:, None] * Z
        S1 = np.cumsum(ez[::-1], axis=0)[::-1][idx]
        h = S1 / S0[:, None]
    else:
        # some risk sets are tiny relative to the global maximum
        return _segment_terms_slow(dataset, lo, hi, beta, xi, order)
    grad = wev @ (dataset.Z[ev] - h) - xi * nD * beta
    if order == 1:
        return value, grad
    if p == 1:
        S2 = np.cumsum((ez[:, 0] * Z[:, 0])[::-1])[::-1][idx]
        var = S2 / S0 - h[:, 0] ** 2
        hess = np.array([[-(wev @ var) - xi * nD]])
    else:
        ezz = ez[:, :, None] * Z[:, None, :]
        S2 = np.cumsum(ezz[::-1], axis=0)[::-1][idx]
        cov = S2 / S0[:, None, None] - h[:, :, None] * h[:, None, :]
        hess = -np.einsum("i,ijk->jk", wev, cov) - xi * nD * np.eye(p)
    return value, grad, hess


def _as_betas(beta_all, n_segments, p):
    b = np.asarray(beta_all, dtype=float)
    if b.size != n_segments * p:
        raise ValueError(f"expected {n_segments * p} coefficients, got {b.size}")
    return b.reshape(n_segments, p)


def log_partial_likelihood(dataset: SurvivalDataset, partition: SegmentPartition, beta_all, xi: float = 0.0) -> float:
    """Regularized log-partial likelihood; ``beta_all`` is ``(m+1, p)`` or flat."""
    betas = _as_betas(beta_all, partition.n_segments, dataset.p)
    total = 0.0
    for j in range(partition.n_segments):
        lo, hi = dataset.segment_event_range(partition, j)
        total += segment_terms(dataset, lo, hi, betas[j], xi, order=0)
    return total


def segment_log_pl(dataset, partition, j, beta_j, xi=0.0) -> float:
    lo, hi = dataset.segment_event_range(partition, j)
    return segment_terms(dataset, lo, hi, beta_j, xi, order=0)


def segment_gradient(dataset, partition, j, beta_j, xi=0.0) -> np.ndarray:
    lo, hi = dataset.segment_event_range(partition, j)
    return segment_terms(dataset, lo, hi, beta_j, xi, order=1)[1]


def segment_hessian(dataset, partition, j, beta_j, xi=0.0) -> np.ndarray:
    """Exact Hessian ``-sum_{D_j} (H - h h' + xi I)``; the ridge term enters with a minus sign."""
    lo, hi = dataset.segment_event_range(partition, j)
    return segment_terms(dataset, lo, hi, beta_j, xi, order=2)[2]


def _separated(dataset, lo, hi, beta, hess) -> bool:
    """True when the unpenalized likelihood only flattens out at infinity.

    The gradient of a monotone likelihood decays exponentially, so Newton
    can meet the tolerance at a huge ``beta``.  There the information has
    collapsed relative to its value at ``beta = 0``.
    """
    s0 = dataset.event_risk_start[lo]
    eta = dataset.Z[s0:] @ beta
    if np.ptp(eta) < _SEPARATION_SPREAD:
        return False
    h0 = segment_terms(dataset, lo, hi, np.zeros_like(beta), 0.0)[2]
    ref = np.linalg.eigvalsh(-h0)
    if ref[-1] <= 0:
        return False
    return bool(np.linalg.eigvalsh(-hess)[0] < _SEPARATION_RATIO * ref[-1])


def fit_event_range(dataset: SurvivalDataset, lo: int, hi: int, config: RidgeConfig = RidgeConfig(), init=None) -> SegmentFit:
    """Newton ascent with step halving on one segment's contribution.

    Non-convergence is reported through ``converged=False``; with
    ``xi == 0`` this includes a maximum at infinity (``separated=True``),
    as happens when every event in the segment has the extreme covariate
    value of its risk set.  A singular Hessian away from the optimum raises
    :class:`SingularHessianError` (only possible when ``xi == 0``).
    """
    p = dataset.p
    xi = config.xi
    beta = np.zeros(p) if init is None else np.array(init, dtype=float)
    n_events = float(dataset.event_weights[lo:hi].sum())
    f, g, Hs = segment_terms(dataset, lo, hi, beta, xi)
    gnorm = float(np.max(np.abs(g))) if p else 0.0
    for it in range(config.max_iter + 1):
        if gnorm <= config.newton_tol:
            if xi == 0 and p and _separated(dataset, lo, hi, beta, Hs):
                return SegmentFit(beta, f, False, it, gnorm, n_events, separated=True)
            return SegmentFit(beta, f, True, it, gnorm, n_events)
        if it == config.max_iter:
            break
        try:
            L = np.linalg.cholesky(-Hs)
        except np.linalg.LinAlgError:
            raise SingularHessianError(
                "segment Hessian is singular (e.g. a covariate is constant on the "
                "segment's risk sets); use a ridge penalty xi > 0"
            ) from None
        step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        t = 1.0
        slack = _ROUNDING * (1.0 + abs(f))
        for _ in range(config.step_halvings + 1):
            cand = beta + t * step
            fc = segment_terms(dataset, lo, hi, cand, xi, order=0)
            if fc >= f - slack:
                break
            t *= 0.5
        else:
            # no ascent along the Newton direction: at numerical precision
            return SegmentFit(beta, f, False, it, gnorm, n_events)
        beta = cand
        f, g, Hs = segment_terms(dataset, lo, hi, beta, xi)
        gnorm = float(np.max(np.abs(g)))
    return SegmentFit(beta, f, False, config.max_iter, gnorm, n_events)


def fit_segments(dataset: SurvivalDataset, partition: SegmentPartition, xi: float | None = None,
                 config: RidgeConfig = RidgeConfig(), init=None) -> list[SegmentFit]:
    """Maximize each segment's contribution independently.

    ``xi`` overrides ``config.xi`` when given.  ``init`` is an optional
    ``(m+1, p)`` array of starting values.
    """
    if xi is not None and xi != config.xi:
        config = RidgeConfig(xi, config.newton_tol, config.max_iter, config.step_halvings)
    inits = None if init is None else _as_betas(init, partition.n_segments, dataset.p)
    fits = []
    for j in range(partition.n_segments):
        lo, hi = dataset.segment_event_range(partition, j)
        fits.append(fit_event_range(dataset, lo, hi, config, None if inits is None else inits[j]))
    return fits
