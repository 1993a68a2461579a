"""Simulated change-point Cox data and the Monte Carlo experiments built on it.

The data-generating law is a univariate Cox model with a piecewise-constant
coefficient, an exponential baseline hazard ``lambda0`` and administrative
censoring at the ``horizon_quantile`` quantile of the baseline survival
distribution.  A change-point given through ``alpha`` sits where the
baseline survival has fallen to ``1 - alpha``.

Three experiments are provided:

* :func:`bias_experiment` estimates the optimism of the maximized
  log-partial likelihood with paired training/test datasets.
* :func:`selection_experiment` records which ``m`` each criterion picks and
  the Kullback-Leibler risk of the chosen model, for a fixed or randomly
  drawn truth.
* :func:`tic_experiment` compares TIC with AIC on correctly specified data.

All randomness is derived from ``numpy.random.default_rng([seed, ...])``
keyed by replicate index, so reports are reproducible bit for bit.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .criteria import CRITERIA, evaluate, tic
from .criteria import aic as aic_report
from .partial_likelihood import RidgeConfig, log_partial_likelihood
from .search import SearchConfig, SegmentCostTable, search
from .survival import SegmentPartition, SurvivalDataset

__all__ = [
    "ConfigError",
    "TruthSpec",
    "RandomTruthSpec",
    "ExperimentReport",
    "generate_dataset",
    "event_probability",
    "calibrate_n_for_events",
    "evaluation_sets",
    "kl_risk",
    "bias_experiment",
    "selection_experiment",
    "tic_experiment",
    "load_experiment_config",
    "run_experiment",
]

COVARIATE_LAWS = ("bernoulli_half", "standard_normal")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TruthSpec:
    """True piecewise model.

    Give the change-points either through ``alpha`` (baseline survival
    levels ``1 - alpha``, one per change-point) or directly as ``k_star``.
    """

    m_star: int
    hazard_ratios: tuple[float, ...]
    alpha: tuple[float, ...] | float | None = None
    k_star: tuple[float, ...] | None = None
    baseline_rate: float = 1.0
    covariate_law: str = "bernoulli_half"
    target_events: int = 100
    horizon_quantile: float = 0.95

    def __post_init__(self):
        hr = tuple(float(h) for h in np.atleast_1d(self.hazard_ratios))
        object.__setattr__(self, "hazard_ratios", hr)
        if self.m_star < 0 or len(hr) != self.m_star + 1:
            raise ConfigError(f"need m_star + 1 = {self.m_star + 1} hazard ratios, got {len(hr)}")
        if any(not (h > 0 and np.isfinite(h)) for h in hr):
            raise ConfigError("hazard ratios must be positive")
        if any(a == b for a, b in zip(hr, hr[1:])):
            raise ConfigError("consecutive hazard ratios must differ (a change-point must change something)")
        if not self.baseline_rate > 0:
            raise ConfigError("baseline_rate must be positive")
        if self.covariate_law not in COVARIATE_LAWS:
            raise ConfigError(f"covariate_law must be one of {COVARIATE_LAWS}")
        if not 0 < self.horizon_quantile <= 1:
            raise ConfigError("horizon_quantile must lie in (0, 1]")
        if self.alpha is not None:
            a = tuple(float(x) for x in np.atleast_1d(self.alpha))
            object.__setattr__(self, "alpha", a)
            if any(not 0 < x < 1 for x in a):
                raise ConfigError("alpha must lie in (0, 1)")
        if self.k_star is not None:
            object.__setattr__(self, "k_star", tuple(float(x) for x in np.atleast_1d(self.k_star)))
        k = self.changepoints
        if len(k) != self.m_star:
            raise ConfigError(f"need {self.m_star} change-points, got {len(k)}")
        if any(b <= a for a, b in zip((0.0,) + k, k)):
            raise ConfigError("change-points must be positive and increasing")
        if k and k[-1] >= self.follow_up:
            raise ConfigError("change-points must precede the end of follow-up")

    @property
    def changepoints(self) -> tuple[float, ...]:
        if self.k_star is not None:
            return self.k_star
        if self.m_star == 0:
            return ()
        if self.alpha is None:
            raise ConfigError("give alpha or k_star for m_star >= 1")
        return tuple(-math.log1p(-a) / self.baseline_rate for a in self.alpha)

    @property
    def betas(self) -> np.ndarray:
        return np.log(np.array(self.hazard_ratios)).reshape(-1, 1)

    @property
    def follow_up(self) -> float:
        """Administrative censoring time ``T``."""
        if self.horizon_quantile >= 1:
            return math.inf
        return -math.log1p(-self.horizon_quantile) / self.baseline_rate

    @property
    def partition(self) -> SegmentPartition:
        return SegmentPartition(self.changepoints)


@dataclass(frozen=True)
class RandomTruthSpec:
    """One change-point at a random baseline-survival level and random jump size.

    Per replicate ``alpha ~ U(alpha_range)`` and the ratio of the second to
    the first hazard ratio is ``2 ** (u1 * (psi + u2))`` with ``u1`` uniform
    on ``{-1, 1}`` and ``u2 ~ U[0, 1]``.
    """

    psi: float
    alpha_range: tuple[float, float] = (0.1, 0.9)
    first_hazard_ratio: float = 1.0
    baseline_rate: float = 1.0
    covariate_law: str = "bernoulli_half"
    target_events: int = 100
    horizon_quantile: float = 0.95

    def __post_init__(self):
        if not self.psi > 0:
            raise ConfigError("psi must be positive")
        lo, hi = self.alpha_range
        if not 0 < lo <= hi < 1:
            raise ConfigError("alpha_range must lie inside (0, 1)")

    def draw(self, rng: np.random.Generator) -> TruthSpec:
        alpha = rng.uniform(*self.alpha_range)
        u1 = rng.choice((-1.0, 1.0))
        u2 = rng.uniform()
        ratio = 2.0 ** (u1 * (self.psi + u2))
        return TruthSpec(
            m_star=1, hazard_ratios=(self.first_hazard_ratio, self.first_hazard_ratio * ratio),
            alpha=alpha, baseline_rate=self.baseline_rate, covariate_law=self.covariate_law,
            target_events=self.target_events, horizon_quantile=self.horizon_quantile,
        )


# -- data generation ------------------------------------------------------------

def _draw_covariates(law, n, rng):
    if law == "bernoulli_half":
        return rng.integers(0, 2, size=n).astype(float)
    return rng.standard_normal(n)


def _event_times(truth: TruthSpec, z: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Invert the piecewise cumulative hazard at unit-exponential draws ``e``."""
    edges = np.array((0.0,) + truth.changepoints + (math.inf,))
    rates = truth.baseline_rate * np.exp(truth.betas[:, 0][None, :] * z[:, None])  # (n, m+1)
    lengths = np.diff(edges)
    with np.errstate(invalid="ignore"):
        seg_h = rates * lengths[None, :]
    seg_h[:, -1] = math.inf
    cum = np.concatenate([np.zeros((z.size, 1)), np.cumsum(seg_h, axis=1)], axis=1)
    j = (cum[:, 1:] < e[:, None]).sum(axis=1)
    rows = np.arange(z.size)
    return edges[j] + (e - cum[rows, j]) / rates[rows, j]


def generate_dataset(truth: TruthSpec, n: int, seed) -> SurvivalDataset:
    """Draw ``n`` subjects; ``seed`` is anything ``default_rng`` accepts or a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = _draw_covariates(truth.covariate_law, n, rng)
    t = _event_times(truth, z, rng.standard_exponential(n))
    T = truth.follow_up
    event = t <= T
    return SurvivalDataset(np.minimum(t, T), event.astype(int), z[:, None], horizon=T if np.isfinite(T) else None)


def event_probability(truth: TruthSpec) -> float:
    """``P(event before T)`` averaged over the covariate law."""
    T = truth.follow_up
    if not np.isfinite(T):
        return 1.0
    if truth.covariate_law == "bernoulli_half":
        zs, ws = np.array([0.0, 1.0]), np.array([0.5, 0.5])
    else:
        zs, ws = np.polynomial.hermite_e.hermegauss(80)
        ws = ws / ws.sum()
    edges = np.array((0.0,) + truth.changepoints + (T,))
    lengths = np.diff(edges)
    rates = truth.baseline_rate * np.exp(truth.betas[:, 0][None, :] * zs[:, None])
    cum_T = rates @ lengths
    return float(ws @ -np.expm1(-cum_T))


def calibrate_n_for_events(truth: TruthSpec, target_events: int | None = None) -> int:
    """Sample size whose expected event count equals ``target_events``."""
    target = truth.target_events if target_events is None else target_events
    if target < 10:
        raise ConfigError("target_events must be at least 10")
    p = event_probability(truth)
    if p < 1e-4:
        raise ConfigError(f"event probability {p:.2e} before the end of follow-up is too small")
    return int(round(target / p))


# -- Kullback-Leibler risk --------------------------------------------------------

def evaluation_sets(truth: TruthSpec, n: int, replicates: int, seed) -> list[SurvivalDataset]:
    """Fresh datasets from ``truth`` used as the ``u`` in the risk ``E_u``."""
    return [generate_dataset(truth, n, np.random.default_rng([*np.atleast_1d(seed), r])) for r in range(replicates)]


def _loglik_on(ds, changepoints, betas):
    return log_partial_likelihood(ds, SegmentPartition(tuple(changepoints)), np.asarray(betas), 0.0)


def kl_risk(truth: TruthSpec, fit, replicates: int = 100, n: int | None = None, seed=0,
            eval_sets: list[SurvivalDataset] | None = None) -> dict:
    """``2 E_u[l(beta*, k*; u) - l(beta_hat, k_hat; u)]`` over fresh datasets ``u``.

    ``fit`` is a :class:`ChangePointModelFit` or a ``(changepoints, betas)``
    pair.  Supplying ``eval_sets`` lets several fits share the same ``u``.
    """
    if eval_sets is None:
        n = calibrate_n_for_events(truth) if n is None else n
        eval_sets = evaluation_sets(truth, n, replicates, seed)
    if isinstance(fit, tuple):
        k_hat, b_hat = fit
    else:
        k_hat, b_hat = fit.partition.changepoints, fit.betas
    d = np.array([
        2.0 * (_loglik_on(u, truth.changepoints, truth.betas) - _loglik_on(u, k_hat, b_hat)) for u in eval_sets
    ])
    return {"mean": float(d.mean()), "se": float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else math.nan}


# -- experiments ------------------------------------------------------------------

@dataclass
class ExperimentReport:
    """Aggregated experiment output.

    ``cells`` maps a label (criterion name or ``"bias"``) to summary
    statistics; ``replicate_rows`` keeps one record per replicate.
    """

    kind: str
    replicates: int
    seed: int
    config: dict
    cells: dict
    replicate_rows: list[dict] = field(default_factory=list)
    version: str = ""

    def to_dict(self) -> dict:
        return {
            "tool_version": self.version, "kind": self.kind, "replicates": self.replicates,
            "seed": self.seed, "config": self.config, "cells": self.cells, "replicate_rows": self.replicate_rows,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """Table layout: bias as mean/se, selection as K-L plus one column per ``m``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.kind == "selection":
            m_max = len(next(iter(self.cells.values()))["percent"]) - 1
            w.writerow(["criterion", "kl_mean", "kl_se"] + [f"pct_m{m}" for m in range(m_max + 1)])
            for name, c in self.cells.items():
                w.writerow([name, f"{c['kl_mean']:.4f}", f"{c['kl_se']:.4f}"] + [f"{x:.1f}" for x in c["percent"]])
        else:
            keys = list(next(iter(self.cells.values())).keys())
            w.writerow(["cell"] + keys)
            for name, c in self.cells.items():
                w.writerow([name] + [f"{c[k]:.6g}" if isinstance(c[k], float) else c[k] for k in keys])
        return buf.getvalue()


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return float(math.fsum(x) / x.size), se


def _search_config(search_config: SearchConfig | None) -> SearchConfig:
    return search_config or SearchConfig()


def bias_experiment(truth: TruthSpec, replicates: int = 100, seed: int = 0,
                    search_config: SearchConfig | None = None, progress=None) -> ExperimentReport:
    """Paired-replicate estimate of the optimism ``E[l(theta_t; t) - l(theta_u; t)]``.

    ``theta_t`` is fitted (with ``m = m_star``) on the training set ``t`` and
    ``theta_u`` on an independent set ``u`` of the same design; both are
    evaluated on ``t``.  Its expectation is the quantity the penalties
    double: ``3 m + p (m + 1)`` for AIC and ``m + p (m + 1)`` for the naive
    count.
    """
    cfg = _search_config(search_config)
    n = calibrate_n_for_events(truth)
    m = truth.m_star
    rows = []
    for r in range(replicates):
        rng = np.random.default_rng([seed, r])
        t = generate_dataset(truth, n, rng)
        u = generate_dataset(truth, n, rng)
        ft = search(t, m, 0.0, cfg)
        fu = search(u, m, 0.0, cfg)
        bias = ft.log_pl - _loglik_on(t, fu.partition.changepoints, fu.betas)
        rows.append({"replicate": r, "bias": bias, "events_t": t.n_events, "events_u": u.n_events,
                     "k_hat": list(ft.partition.changepoints)})
        if progress:
            progress(r + 1, replicates)
    mean, se = _mean_se([row["bias"] for row in rows])
    p = 1
    cells = {"bias": {"mean": mean, "se": se, "aic_prediction": float(3 * m + p * (m + 1)),
                      "naive_prediction": float(m + p * (m + 1)), "n": n,
                      "mean_events": _mean_se([row["events_t"] for row in rows])[0]}}
    return ExperimentReport("bias", replicates, seed, {"truth": asdict(truth)}, cells, rows)


def selection_experiment(truth: TruthSpec | RandomTruthSpec, m_max: int = 3,
                         criteria: tuple[str, ...] = ("aic_naive", "aic"), replicates: int = 100,
                         seed: int = 0, kl_replicates: int = 100,
                         search_config: SearchConfig | None = None, progress=None) -> ExperimentReport:
    """Selection frequencies over ``m = 0..m_max`` and K-L risk of the chosen fits."""
    for c in criteria:
        if c not in CRITERIA:
            raise ConfigError(f"unknown criterion {c!r}")
        if c == "aic_xi":
            raise ConfigError("selection experiments use unpenalized fits; aic_xi is not applicable")
    cfg = _search_config(search_config)
    rows = []
    for r in range(replicates):
        rng = np.random.default_rng([seed, r])
        tr = truth.draw(rng) if isinstance(truth, RandomTruthSpec) else truth
        n = calibrate_n_for_events(tr)
        ds = generate_dataset(tr, n, rng)
        table = SegmentCostTable(ds, 0.0, cfg)
        fits = {m: search(ds, m, 0.0, cfg, table=table) for m in range(m_max + 1)}
        evals = evaluation_sets(tr, n, kl_replicates, [seed, r, 1])
        kl_cache: dict[int, float] = {}
        row = {"replicate": r, "events": ds.n_events, "n": n, "truth_ratios": list(tr.hazard_ratios),
               "truth_k": list(tr.changepoints)}
        for c in criteria:
            values = [evaluate(ds, fits[m], c).value for m in range(m_max + 1)]
            chosen = min(range(m_max + 1), key=lambda m: (values[m], m))
            if chosen not in kl_cache:
                kl_cache[chosen] = kl_risk(tr, fits[chosen], eval_sets=evals)["mean"]
            row[c] = {"m": chosen, "kl": kl_cache[chosen], "values": values}
        rows.append(row)
        if progress:
            progress(r + 1, replicates)
    cells = {}
    for c in criteria:
        chosen = np.array([row[c]["m"] for row in rows])
        kl_mean, kl_se = _mean_se([row[c]["kl"] for row in rows])
        counts = np.bincount(chosen, minlength=m_max + 1)
        cells[c] = {"kl_mean": kl_mean, "kl_se": kl_se, "counts": counts.tolist(),
                    "percent": (100.0 * counts / replicates).tolist()}
    truth_cfg = asdict(truth)
    truth_cfg["random"] = isinstance(truth, RandomTruthSpec)
    return ExperimentReport("selection", replicates, seed,
                            {"truth": truth_cfg, "experiment": {"m_max": m_max, "criteria": list(criteria),
                                                                "kl_replicates": kl_replicates}},
                            cells, rows)


def tic_experiment(truth: TruthSpec, replicates: int = 100, seed: int = 0, m: int = 0,
                   search_config: SearchConfig | None = None, progress=None) -> ExperimentReport:
    """Mean of ``TIC - AIC`` for ``m``-change-point fits on data drawn from ``truth``."""
    cfg = _search_config(search_config)
    n = calibrate_n_for_events(truth)
    rows = []
    for r in range(replicates):
        ds = generate_dataset(truth, n, np.random.default_rng([seed, r]))
        fit = search(ds, m, 0.0, cfg)
        t, a = tic(ds, fit).value, aic_report(fit).value
        rows.append({"replicate": r, "tic": t, "aic": a, "diff": t - a})
        if progress:
            progress(r + 1, replicates)
    mean, se = _mean_se([row["diff"] for row in rows])
    return ExperimentReport("tic", replicates, seed, {"truth": asdict(truth), "m": m},
                            {"tic_minus_aic": {"mean": mean, "se": se, "n": n}}, rows)


# -- config files -----------------------------------------------------------------

_SCHEMA = {
    "experiment": {"kind": str, "replicates": int, "seed": int, "m_max": int, "criteria": "list",
                   "kl_replicates": int, "m": int},
    "truth": {"m_star": int, "hazard_ratios": "floats", "alpha": "floats", "k_star": "floats",
              "baseline_rate": float, "covariate_law": str, "target_events": int,
              "horizon_quantile": float, "random": bool, "psi": float, "alpha_range": "floats",
              "first_hazard_ratio": float},
    "search": {"min_events_per_segment": int, "min_event_fraction": float, "candidate_rule": str, "max_changepoint": float,
               "newton_tol": float, "max_iter": int},
}


def _convert(section, key, raw, kind):
    try:
        if kind == "list":
            return [s.strip() for s in raw.split(",") if s.strip()]
        if kind == "floats":
            return tuple(float(s) for s in raw.split(",") if s.strip())
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {getattr(kind, '__name__', kind)}") from None


def _ini_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    return str(v)


def load_experiment_config(text_or_path: str, overrides: dict | None = None) -> dict:
    """Parse an INI experiment description into a validated plain dict.

    Unknown sections or keys are rejected.  ``overrides`` maps
    ``"section.key"`` to raw string values (applied before validation).
    """
    cp = configparser.ConfigParser()
    if "\n" in text_or_path or "[" in text_or_path:
        cp.read_string(text_or_path)
    elif text_or_path.endswith(".json"):
        # a report produced by an earlier run: reuse its embedded config
        try:
            with open(text_or_path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {text_or_path}: {exc}") from None
        cp.read_dict({sec: {k: _ini_value(v) for k, v in body.items()}
                      for sec, body in doc.get("config", doc).items()})
    else:
        try:
            with open(text_or_path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {text_or_path}: {exc}") from None
    for dotted, raw in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key, str(raw))
    out: dict = {}
    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown config section [{sec}]")
        out[sec] = {}
        for key, raw in cp.items(sec):
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            out[sec][key] = _convert(sec, key, raw, _SCHEMA[sec][key])
    exp = out.setdefault("experiment", {})
    if exp.get("kind") not in ("bias", "selection", "tic"):
        raise ConfigError("[experiment] kind must be one of bias, selection, tic")
    exp.setdefault("replicates", 100)
    exp.setdefault("seed", 0)
    out.setdefault("truth", {})
    out.setdefault("search", {})
    return out


def _build_truth(t: dict):
    t = dict(t)
    if t.pop("random", False):
        keep = {k: t[k] for k in ("psi", "alpha_range", "first_hazard_ratio", "baseline_rate",
                                  "covariate_law", "target_events", "horizon_quantile") if k in t}
        if "psi" not in keep:
            raise ConfigError("random truth needs psi")
        return RandomTruthSpec(**keep)
    for k in ("psi", "alpha_range", "first_hazard_ratio"):
        if k in t:
            raise ConfigError(f"{k} only applies to random truths")
    if "m_star" not in t or "hazard_ratios" not in t:
        raise ConfigError("[truth] needs m_star and hazard_ratios")
    try:
        return TruthSpec(**t)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _build_search(s: dict) -> SearchConfig:
    s = dict(s)
    ridge = RidgeConfig(0.0, s.pop("newton_tol", 1e-8), s.pop("max_iter", 50))
    try:
        return SearchConfig(ridge=ridge, **s)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def run_experiment(config: dict, progress=None) -> ExperimentReport:
    """Run the experiment described by a dict from :func:`load_experiment_config`."""
    exp = config["experiment"]
    truth = _build_truth(config["truth"])
    scfg = _build_search(config["search"])
    kind = exp["kind"]
    if kind == "selection":
        report = selection_experiment(truth, exp.get("m_max", 3), tuple(exp.get("criteria", ("aic_naive", "aic"))),
                                      exp["replicates"], exp["seed"], exp.get("kl_replicates", 100), scfg, progress)
    elif isinstance(truth, RandomTruthSpec):
        raise ConfigError("random truths are only supported by selection experiments")
    elif kind == "bias":
        report = bias_experiment(truth, exp["replicates"], exp["seed"], scfg, progress)
    else:
        report = tic_experiment(truth, exp["replicates"], exp["seed"], exp.get("m", 0), scfg, progress)
    report.config = _jsonable(config)
    return report


def _jsonable(o):
    if isinstance(o, dict):
        return {k: _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    return o

