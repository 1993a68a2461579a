"""Command-line interface: ``coxcp {fit,select,simulate,verify-bias,km}``.

Exit codes
----------
0  success
2  data or configuration error (bad CSV, bad config file, bad flags)
3  infeasible model (no partition satisfies the segment constraints)
4  contract violation (a criterion requested outside its setting)
5  oracle mismatch (Monte Carlo disagrees with closed forms)
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .bm_oracle import (
    BMSimConfig,
    DomainError,
    DriftedBMSpec,
    e_sup_v,
    e_v_at_argsup_copy,
    simulate_sup_and_argsup,
    spec_from_matrices,
)
from .criteria import CRITERIA, ContractError, DegenerateCWarning, c_hat, evaluate
from .partial_likelihood import RidgeConfig
from .search import InfeasibleError, SearchConfig, SegmentCostTable, search
from .simulation import ConfigError, load_experiment_config, run_experiment
from .survival import DataError, kaplan_meier, read_csv

EXIT_OK, EXIT_DATA, EXIT_INFEASIBLE, EXIT_CONTRACT, EXIT_ORACLE = 0, 2, 3, 4, 5

_ALIASES = {"naive": "aic_naive", "aicxi": "aic_xi"}


class OracleMismatch(RuntimeError):
    pass


def _criterion(name: str) -> str:
    name = _ALIASES.get(name.strip().lower(), name.strip().lower())
    if name not in CRITERIA:
        raise ConfigError(f"unknown criterion {name!r}; choose from {', '.join(CRITERIA)} (or 'naive')")
    return name


def _search_config(args) -> SearchConfig:
    try:
        return SearchConfig(
            min_events_per_segment=args.min_events, min_event_fraction=args.min_event_fraction,
            candidate_rule=args.candidate_rule, max_changepoint=args.max_changepoint,
            ridge=RidgeConfig(args.xi),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _resolved(args) -> dict:
    out = {k: v for k, v in vars(args).items() if k not in ("func", "output", "format")}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in out.items()}


def _emit(args, text: str):
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _meta_lines(meta: dict) -> str:
    return f"# tool_version={__version__}\n# config={json.dumps(meta, sort_keys=True)}\n"


def _csv_text(header_meta: dict, columns: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(_meta_lines(header_meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x))


# -- fit / select -------------------------------------------------------------------

def _fit_payload(report) -> dict:
    fit = report.fit
    d = report.to_dict()
    d["converged"] = fit.converged
    d["segment_events"] = [s.n_events for s in fit.segments]
    return d


def cmd_fit(args) -> int:
    ds = read_csv(args.csv)
    cfg = _search_config(args)
    crit = _criterion(args.criterion)
    fit = search(ds, args.m, args.xi, cfg)
    report = evaluate(ds, fit, crit)
    payload = _fit_payload(report)
    meta = _resolved(args)
    if args.format == "json":
        doc = {"tool_version": __version__, "config": meta, "seed": args.seed, "fit": payload}
        _emit(args, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        rows = [[j, _fmt(fit.partition.bounds(j)[0]), _fmt(fit.partition.bounds(j)[1]),
                 ";".join(_fmt(b) for b in fit.betas[j])] for j in range(fit.partition.n_segments)]
        text = _csv_text(meta, ["segment", "start", "end", "beta"], rows)
        text += (f"# log_pl={_fmt(fit.log_pl)} {crit}={_fmt(report.value)} "
                 f"penalty_changepoint={_fmt(report.penalty_changepoint)} "
                 f"penalty_regression={_fmt(report.penalty_regression)}\n")
        _emit(args, text)
    return EXIT_OK


def cmd_select(args) -> int:
    ds = read_csv(args.csv)
    cfg = _search_config(args)
    crits = [_criterion(c) for c in args.criteria.split(",") if c.strip()]
    if args.xi > 0 and any(c in ("aic", "aic_naive", "tic") for c in crits):
        bad = [c for c in crits if c != "aic_xi"]
        raise ContractError(f"{', '.join(bad)} require xi = 0; use aic_xi for ridge fits")
    table = SegmentCostTable(ds, args.xi, cfg)
    fits = []
    for m in range(args.max_m + 1):
        try:
            fits.append(search(ds, m, args.xi, cfg, table=table))
        except InfeasibleError:
            if m == 0:
                raise
            break
    values = {c: [evaluate(ds, f, c) for f in fits] for c in crits}
    best = {c: min(range(len(fits)), key=lambda i: (values[c][i].value, i)) for c in crits}
    meta = _resolved(args)
    if args.format == "json":
        rows = []
        for i, f in enumerate(fits):
            row = {"m": f.m, "k_hat": list(f.partition.changepoints), "beta_hat": f.betas.tolist(),
                   "log_pl": f.log_pl}
            for c in crits:
                r = values[c][i]
                row[c] = {"value": r.value, "penalty_changepoint": r.penalty_changepoint,
                          "penalty_regression": r.penalty_regression, "selected": best[c] == i}
            rows.append(row)
        doc = {"tool_version": __version__, "config": meta, "seed": args.seed, "models": rows,
               "selected": {c: fits[best[c]].m for c in crits}}
        _emit(args, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        cols = ["m", "k_hat", "log_pl"] + [c for crit in crits for c in (crit, f"{crit}_selected")]
        rows = []
        for i, f in enumerate(fits):
            row = [f.m, ";".join(_fmt(k) for k in f.partition.changepoints), _fmt(f.log_pl)]
            for c in crits:
                row += [_fmt(values[c][i].value), "*" if best[c] == i else ""]
            rows.append(row)
        _emit(args, _csv_text(meta, cols, rows))
    return EXIT_OK


# -- simulate -------------------------------------------------------------------------

def _resolve_config_path(name) -> Path:
    """A path on disk, or the name of a recipe shipped with the package."""
    path = Path(name)
    if path.exists():
        return path
    recipe = resources.files("coxcp") / "recipes" / path.with_suffix(".cfg").name
    if recipe.is_file():
        return Path(str(recipe))
    raise ConfigError(f"no config file {name!r} and no shipped recipe of that name")


def cmd_simulate(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["experiment.seed"] = args.seed
    if args.replicates is not None:
        overrides["experiment.replicates"] = args.replicates
    config = load_experiment_config(str(_resolve_config_path(args.config)), overrides)

    def progress(done, total):
        if args.progress:
            print(f"\r{done}/{total}", end="" if done < total else "\n", file=sys.stderr, flush=True)

    report = run_experiment(config, progress)
    report.version = __version__
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.config).stem
    (out_dir / f"{stem}.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out_dir / f"{stem}.csv").write_text(_meta_lines(report.config) + report.to_csv(), encoding="utf-8")
    for name, cell in report.cells.items():
        summary = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in cell.items())
        print(f"{name}: {summary}")
    print(f"wrote {out_dir / (stem + '.json')} and {out_dir / (stem + '.csv')}")
    return EXIT_OK


# -- verify-bias ------------------------------------------------------------------------

def _load_matrices(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        mats = [np.atleast_2d(np.asarray(doc[k], dtype=float)) for k in ("A_j", "A_j1", "B_j", "B_j1")]
        delta = np.asarray(doc["delta"], dtype=float).ravel()
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: expected JSON with A_j, A_j1, B_j, B_j1, delta ({exc})") from None
    return mats, delta


def cmd_verify_bias(args) -> int:
    if (args.spec is None) == (args.from_matrices is None):
        raise ConfigError("give exactly one of --spec or --from-matrices")
    if args.spec is not None:
        try:
            t1, t2, s1, s2 = (float(x) for x in args.spec.split(","))
        except ValueError:
            raise ConfigError("--spec expects four comma-separated numbers tau1,tau2,sigma1,sigma2") from None
        spec = DriftedBMSpec(t1, t2, s1, s2)
        mats = [np.array([[s1 * s1]]), np.array([[s2 * s2]]), np.array([[2 * t1]]), np.array([[2 * t2]])]
        delta = np.array([1.0])
    else:
        mats, delta = _load_matrices(args.from_matrices)
        spec = spec_from_matrices(*mats, delta)
    with warnings.catch_warnings():
        warnings.simplefilter("error", DegenerateCWarning)
        two_c = 2.0 * c_hat(mats[0], mats[1], mats[2], mats[3], delta)
    closed_sup = e_sup_v(spec)
    closed_cross = e_v_at_argsup_copy(spec)
    sim = simulate_sup_and_argsup(spec, BMSimConfig.for_spec(spec, paths=args.paths, seed=args.seed))
    checks = [
        ("E sup V", closed_sup, sim.mean_sup, sim.se_sup),
        ("-E V(argsup copy)", closed_cross, sim.mean_v_at_copy_argsup, sim.se_v_at_copy_argsup),
        ("2 C", two_c, sim.mean_total, sim.se_total),
    ]
    lines = [_meta_lines(_resolved(args)).rstrip("\n"),
             f"spec: tau1={spec.tau1:.6g} tau2={spec.tau2:.6g} sigma1={spec.sigma1:.6g} sigma2={spec.sigma2:.6g}",
             f"{'quantity':<20}{'exact':>12}{'monte carlo':>14}{'se':>10}{'z':>8}  status"]
    failed = False
    for name, exact, mc, se in checks:
        z = (mc - exact) / se if se > 0 else math.inf
        ok = abs(z) <= 3.0
        failed |= not ok
        lines.append(f"{name:<20}{exact:>12.6f}{mc:>14.6f}{se:>10.6f}{z:>8.2f}  {'ok' if ok else 'MISMATCH'}")
    _emit(args, "\n".join(lines) + "\n")
    if failed:
        raise OracleMismatch("Monte Carlo disagrees with the closed form by more than 3 standard errors")
    return EXIT_OK


# -- km ---------------------------------------------------------------------------------

def cmd_km(args) -> int:
    ds = read_csv(args.csv)
    names = getattr(ds, "covariate_names", ())
    labels = None
    if args.group_col is not None:
        if args.group_col not in names:
            raise DataError(f"{args.csv}: no column named {args.group_col!r} (covariates: {', '.join(names)})")
        labels = ds.Z[:, names.index(args.group_col)]
    curves = kaplan_meier(ds, labels)
    rows = []
    for g, (t, s) in curves.items():
        label = int(g) if float(g).is_integer() else g
        rows += [[label, _fmt(ti), _fmt(si)] for ti, si in zip(t, s)]
    _emit(args, _csv_text(_resolved(args), ["group", "time", "survival"], rows))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------

def _add_search_flags(p):
    p.add_argument("--xi", type=float, default=0.0, help="ridge weight (default 0)")
    p.add_argument("--min-events", type=int, default=None, help="minimum events per segment (default p + 1)")
    p.add_argument("--min-event-fraction", type=float, default=0.0,
                   help="minimum share of all events per segment (default 0)")
    p.add_argument("--candidate-rule", choices=("event_times", "midpoints"), default="event_times")
    p.add_argument("--max-changepoint", type=float, default=None, help="upper limit on change-point locations")


def _add_output_flags(p, formats=("json", "csv")):
    p.add_argument("--output", "-o", default=None, help="write to this file instead of stdout")
    if formats:
        p.add_argument("--format", choices=formats, default=formats[0])
    p.add_argument("--seed", type=int, default=0, help="recorded in the output; the only entropy source")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coxcp", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter,
                                     epilog=__doc__.split("\n", 2)[2])
    parser.add_argument("--version", action="version", version=f"coxcp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model with m change-points")
    p.add_argument("csv")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--criterion", default="aic")
    _add_search_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="compare m = 0..max-m by information criteria")
    p.add_argument("csv")
    p.add_argument("--max-m", type=int, default=3)
    p.add_argument("--criteria", default="aic,naive")
    _add_search_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="run an experiment described by a config file")
    p.add_argument("config", help="config file, or the name of a shipped recipe")
    p.add_argument("--output-dir", default=".")
    p.add_argument("--seed", type=int, default=None, help="override the config's seed")
    p.add_argument("--replicates", type=int, default=None, help="override the config's replicate count")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-bias", help="check the change-point constant against Monte Carlo")
    p.add_argument("--spec", default=None, help="tau1,tau2,sigma1,sigma2")
    p.add_argument("--from-matrices", default=None, help="JSON file with A_j, A_j1, B_j, B_j1, delta")
    p.add_argument("--paths", type=int, default=100_000)
    _add_output_flags(p, formats=())
    p.set_defaults(func=cmd_verify_bias)

    p = sub.add_parser("km", help="Kaplan-Meier curves as a tidy CSV")
    p.add_argument("csv")
    p.add_argument("--group-col", default=None)
    _add_output_flags(p, formats=())
    p.set_defaults(func=cmd_km)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ConfigError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ContractError, np.linalg.LinAlgError, DegenerateCWarning) as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OracleMismatch as exc:
        print(f"oracle mismatch: {exc}", file=sys.stderr)
        return EXIT_ORACLE


if __name__ == "__main__":
    sys.exit(main())
