"""Command-line interface.

Subcommands: ``estimate``, ``diagnose``, ``simulate``, ``power``, ``design``
and ``compare``. Results go to stdout in the chosen format and, when an
output directory is given (``--out`` or ``$ALTE_OUTPUT_DIR``), to
``<command>.json`` and ``<command>.csv`` written atomically.

Exit status is 0 on success, 1 for invalid input and 2 when estimation
fails.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from ._io import atomic_write, dumps, frame_to_csv, jsonable, output_dir
from .dataset import ExperimentData, ingest_csv
from .exceptions import AlteError, EstimationError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_ESTIMATION = 0, 1, 2
DEFAULT_SEED = 42
WEIGHTS = {"optimal": "inverse_variance", "inverse_variance": "inverse_variance", "equal": "equal"}


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with the validation status."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _csv_list(text: str | None) -> list[str]:
    if not text:
        return []
    return [s.strip() for s in text.split(",") if s.strip()]


def _float_list(text: str | None) -> list[float]:
    try:
        return [float(s) for s in _csv_list(text)]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# shared options


def _add_data_args(p: argparse.ArgumentParser, reference: bool = True) -> None:
    p.add_argument("input", help="CSV file with a header row")
    p.add_argument("--treatment", required=True, help="treatment column(s), comma separated")
    p.add_argument("--outcomes", required=True, help="outcome columns, comma separated")
    p.add_argument("--covariates", default="", help="covariate columns, comma separated")
    if reference:
        p.add_argument("--reference", default=None, help="reference outcome (default: first outcome)")


def _add_output_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.add_argument("--out", default=None, help="output directory (default: $ALTE_OUTPUT_DIR)")


def _load(args) -> ExperimentData:
    schema = {"treatments": args.treatment, "outcomes": args.outcomes, "covariates": args.covariates}
    data = ingest_csv(args.input, schema)
    ref = getattr(args, "reference", None)
    if ref is not None and ref not in data.outcome_names:
        raise ValidationError(f"reference {ref!r} is not among the outcomes {list(data.outcome_names)}")
    if data.dropped:
        warnings.warn(f"dropped {data.dropped} rows with missing values")
    return data


# ---------------------------------------------------------------------------
# subcommands; each returns (payload, frame, text)


def _estimate(args):
    from .bridge import alte_with_bridges
    from .estimate import estimate_wsi

    data = _load(args)
    ref = args.reference or data.outcome_names[0]
    weights = WEIGHTS[args.weights]
    instruments = tuple(_csv_list(args.instruments)) or ("treatment", "measures")
    bridges = _csv_list(args.bridge)
    results = {}
    for arm in data.treatment_names:
        if bridges:
            res = alte_with_bridges(data, bridges, weights, ref, arm, instruments,
                                    draws=args.draws, seed=args.seed, n_jobs=args.jobs)
        else:
            res = estimate_wsi(data, ref, instruments, weights, args.variance, arm,
                               covariates=bool(data.p), draws=args.draws, seed=args.seed, n_jobs=args.jobs)
        for f in res.flags:
            warnings.warn(f)
        results[arm] = res
    rows = [{
        "arm": a, "tau_hat": r.tau_hat, "se": r.se, "ci_low": r.ci95[0], "ci_high": r.ci95[1],
        "pvalue": r.pvalue, "stars": r.stars, "variance_method": r.variance_method,
        "estimator": r.estimator, "n_treated": r.n_treated, "n_control": r.n_control,
    } for a, r in results.items()]
    payload = {
        "reference": ref,
        "weights": weights,
        "instruments": list(instruments),
        "bridges": bridges,
        "results": {a: r.to_dict() for a, r in results.items()},
    }
    return payload, pd.DataFrame(rows), None


def _diagnose(args):
    from .diagnose import linearity_report, scatter_smooth

    data = _load(args)
    ref = args.reference or data.outcome_names[0]
    report = linearity_report(data, ref, args.alpha)
    frames = []
    for y in data.outcome_names:
        if y == ref:
            continue
        f = scatter_smooth(data, y, ref, args.bins, args.span)
        f.insert(0, "measure", y)
        f.insert(1, "reference", ref)
        frames.append(f)
    smooth = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
    rows = []
    for t in report["tests"]:
        rows.append({
            "test": t["test"], "measure": t["pair"][0], "reference": t["pair"][1],
            "statistic": t.get("statistic"), "df1": t["df"][0] if "df" in t else None,
            "df2": t["df"][1] if "df" in t else None, "pvalue": t.get("pvalue"),
            "reject_bonferroni": (t["pvalue"] < report["bonferroni_alpha"]) if "pvalue" in t else None,
            "error": t.get("error", ""),
        })
    payload = dict(report)
    table = pd.DataFrame(rows)
    if args.smooth_csv:
        dest = Path(args.smooth_csv)
        atomic_write(dest, frame_to_csv(smooth))
    return payload, table, None


def _simulate(args):
    from .simlab import (load_spec, run_grid, run_mc, study_bridge, study_exclusion_violation,
                         study_linearization, study_nonlinearity, study_variance_reduction)

    if args.study:
        reps = args.replicates or 1000
        if args.study == "exclusion":
            table = study_exclusion_violation(replicates=reps, seed=args.seed)
        elif args.study == "nonlinearity":
            table = pd.concat([study_nonlinearity(t, replicates=reps, seed=args.seed)
                               for t in ("quadratic", "exponential")], ignore_index=True)
        elif args.study == "variance_reduction":
            table = study_variance_reduction(replicates=reps, seed=args.seed)
        elif args.study == "bridge":
            rep = study_bridge(replicates=reps, seed=args.seed)
            table = rep.table.reset_index()
        else:
            table = study_linearization(replicates=args.replicates or 500, seed=args.seed)
        return {"study": args.study, "replicates": reps, "seed": args.seed, "results": table}, table, None
    if not args.spec:
        raise ValidationError("give --spec or --study")
    spec, opts = load_spec(args.spec)
    reps = args.replicates or int(opts.get("replicates", 1000))
    ests = _csv_list(args.estimators) or list(opts.get("estimators", ["wsi"]))
    alpha = float(opts.get("alpha", 0.05))
    grid = opts.get("grid")
    if grid and not args.no_grid:
        table = run_grid(spec, grid["path"], grid["values"], ests, reps, args.seed, alpha, args.jobs)
        payload = {"spec": spec.to_dict(), "grid": grid, "replicates": reps, "seed": args.seed,
                   "alpha": alpha, "results": table}
        return payload, table, None
    rep = run_mc(spec, ests, reps, args.seed, alpha, args.jobs)
    return rep.to_dict(), rep.table.reset_index(), None


def _power(args):
    from .simlab import load_spec, run_grid

    spec, opts = load_spec(args.spec)
    grid = opts.get("grid")
    if args.grid:
        path, _, values = args.grid.partition("=")
        grid = {"path": path.strip(), "values": _float_list(values)}
    if not grid or not grid.get("values"):
        raise ValidationError("power needs a grid: put one in the spec or pass --grid path=v1,v2,...")
    reps = args.replicates or int(opts.get("replicates", 1000))
    ests = _csv_list(args.estimators) or list(opts.get("estimators", ["wsi"]))
    alpha = float(args.alpha if args.alpha is not None else opts.get("alpha", 0.05))
    table = run_grid(spec, grid["path"], grid["values"], ests, reps, args.seed, alpha, args.jobs)
    n_ok = table["n_ok"].to_numpy(float)
    power = table["rejection"].to_numpy(float)
    curve = pd.DataFrame({
        "parameter": grid["path"],
        "value": table[grid["path"]],
        "truth": table["truth"],
        "estimator": table["estimator"],
        "power": power,
        "mc_se": np.sqrt(power * (1 - power) / np.maximum(n_ok, 1)),
        "failures": table["failures"],
    })
    payload = {"spec": spec.to_dict(), "grid": grid, "replicates": reps, "seed": args.seed,
               "alpha": alpha, "curve": curve}
    return payload, curve, None


def _design(args):
    from .planner import DesignProblem, error_variance_for_reliability, marginal_tables, optimize_budget

    if args.problem:
        try:
            with open(args.problem, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ValidationError(f"file not found: {args.problem}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.problem} is not valid JSON: {exc}") from exc
        problem = DesignProblem.from_dict(raw)
    else:
        if args.n is None or args.budget is None:
            raise ValidationError("give --problem or at least --n and --budget")
        psi = tuple(_float_list(args.psi)) if args.psi else (1.0, 1.0)
        if len(psi) != 2:
            raise ValidationError("--psi takes two values: treated and control latent variances")
        lam = _float_list(args.lambda_) or [1.0]
        if args.error_variance:
            s2 = _float_list(args.error_variance)
        elif args.reliability is not None:
            s2 = [error_variance_for_reliability(args.reliability, float(np.mean(psi)), lam[0])]
        else:
            raise ValidationError("give --reliability or --error-variance")
        problem = DesignProblem(
            n=args.n, J=args.measures, budget=args.budget, cost_measure=args.cost_measure,
            cost_subject=args.cost_subject, psi=psi,
            sigma2=s2[0] if len(s2) == 1 else s2, lambda_=lam[0] if len(lam) == 1 else lam,
        )
    sol = optimize_budget(problem)
    payload = {"problem": problem.to_dict(), "solution": sol.to_dict(), "summary": str(sol),
               "marginal": marginal_tables(problem)}
    return payload, sol.frontier, str(sol)


def _compare(args):
    from .application import analyze_application, load_synthetic_application
    from .baselines import equal_std_index, icw_index, pca_index, sur_fit

    if args.synthetic:
        data, _ = load_synthetic_application()
    else:
        if not args.input or not args.treatment or not args.outcomes:
            raise ValidationError("compare needs INPUT with --treatment and --outcomes, or --synthetic")
        data = _load(args)
    ref = args.reference or data.outcome_names[0]
    rows = []
    payload = {"reference": ref}
    if data.J == 1:
        notice = "single outcome: only the SUR (regression) fit is reported"
        warnings.warn(notice)
        for spec, cov in (("unadjusted", False), ("adjusted", True)):
            if cov and not data.p:
                continue
            s = sur_fit(data, covariates=cov)
            payload[f"sur_{spec}"] = s
            for k, e in s.effects.items():
                rows.append({"spec": spec, "method": "SUR", "term": k, "estimate": e.tau_hat,
                             "se": e.se, "stars": e.stars})
        payload["notice"] = notice
        return payload, pd.DataFrame(rows), None
    report = analyze_application(data, ref, args.kind)
    for f in report.flags:
        warnings.warn(f)
    table = report.table()
    base_rows = []
    for arm in data.treatment_names:
        for name, fn in (("equal_std", equal_std_index), ("icw", icw_index), ("pca", pca_index)):
            try:
                r = fn(data, arm).index
            except AlteError as exc:
                warnings.warn(f"{name} skipped for {arm}: {exc}")
                continue
            base_rows.append({"spec": "unadjusted", "method": name, "term": arm, "estimate": r.tau_hat,
                              "se": r.se, "stars": r.stars})
    table = pd.concat([table, pd.DataFrame(base_rows)], ignore_index=True)
    payload.update(report.to_dict())
    payload["baselines"] = base_rows
    return payload, table, None


COMMANDS = {
    "estimate": _estimate,
    "diagnose": _diagnose,
    "simulate": _simulate,
    "power": _power,
    "design": _design,
    "compare": _compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="alte", description="Average latent treatment effects from several outcome measures.")
    parser.add_argument("--version", action="version", version=f"alte {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="estimate the effect with the weighted scaled index")
    _add_data_args(p)
    p.add_argument("--weights", choices=sorted(WEIGHTS), default="optimal")
    p.add_argument("--variance", choices=("gmm", "neyman", "hc2", "bootstrap"), default="gmm")
    p.add_argument("--instruments", default="treatment,measures",
                   help="instrument tokens: treatment, measures, covariates or measure names")
    p.add_argument("--bridge", default="", help="finite-support measures to bridge, comma separated")
    p.add_argument("--draws", type=int, default=1000, help="bootstrap draws")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)
    _add_output_args(p)

    p = sub.add_parser("diagnose", help="linearity tests and smoothed scatter data")
    _add_data_args(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--span", type=float, default=0.75)
    p.add_argument("--smooth-csv", default=None, help="write plot-ready smoothing data here")
    _add_output_args(p)

    p = sub.add_parser("simulate", help="Monte Carlo run of a spec or a built-in study")
    p.add_argument("--spec", default=None, help="spec file or built-in spec name")
    p.add_argument("--study", choices=("exclusion", "nonlinearity", "variance_reduction", "bridge",
                                       "linearization"), default=None)
    p.add_argument("--estimators", default="", help="estimator roster, comma separated")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--no-grid", action="store_true", help="ignore a grid in the spec")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)
    _add_output_args(p)

    p = sub.add_parser("power", help="power curves over a spec grid")
    p.add_argument("--spec", required=True, help="spec file or built-in spec name")
    p.add_argument("--grid", default=None, help="override grid as path=v1,v2,...")
    p.add_argument("--estimators", default="")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)
    _add_output_args(p)

    p = sub.add_parser("design", help="allocate a budget between measures and subjects")
    p.add_argument("--problem", default=None, help="design problem JSON file")
    p.add_argument("--n", type=int, default=None, help="current number of subjects")
    p.add_argument("--measures", type=int, default=1, help="current number of measures")
    p.add_argument("--budget", type=float, default=None)
    p.add_argument("--cost-measure", type=float, default=1.0)
    p.add_argument("--cost-subject", type=float, default=1.0)
    p.add_argument("--psi", default=None, help="treated,control latent variances (default 1,1)")
    p.add_argument("--lambda", dest="lambda_", default=None, help="scaling of current measures")
    p.add_argument("--reliability", type=float, default=None,
                   help="reliability of each measure; sets the error variance")
    p.add_argument("--error-variance", default=None, help="error variance(s); overrides --reliability")
    _add_output_args(p)

    p = sub.add_parser("compare", help="index, structural, SUR and baseline fits side by side")
    p.add_argument("input", nargs="?", default=None)
    p.add_argument("--treatment", default=None)
    p.add_argument("--outcomes", default=None)
    p.add_argument("--covariates", default="")
    p.add_argument("--reference", default=None)
    p.add_argument("--kind", choices=("GLS", "ULS"), default="GLS")
    p.add_argument("--synthetic", action="store_true", help="use the bundled synthetic application data")
    _add_output_args(p)
    return parser


def _render(fmt: str, payload: dict, frame: pd.DataFrame, text: str | None) -> str:
    if fmt == "json":
        return dumps(payload)
    if fmt == "csv":
        return frame_to_csv(frame)
    body = frame.to_string(index=False) if len(frame) else "(no rows)"
    return (text + "\n\n" if text else "") + body + "\n"


def run(argv=None) -> int:
    """Parse ``argv``, run the subcommand and return the exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            payload, frame, text = COMMANDS[args.command](args)
            payload = {"command": args.command, "version": __version__, **jsonable(payload)}
            out = output_dir(args.out)
            if out is not None:
                atomic_write(out / f"{args.command}.json", dumps(payload))
                atomic_write(out / f"{args.command}.csv", frame_to_csv(frame))
            status = EXIT_OK
        except ValidationError as exc:
            print(f"alte {args.command}: error: {exc}", file=sys.stderr)
            status = EXIT_INVALID
        except (EstimationError, np.linalg.LinAlgError) as exc:
            print(f"alte {args.command}: estimation failed: {exc}", file=sys.stderr)
            status = EXIT_ESTIMATION
        except OSError as exc:
            print(f"alte {args.command}: error: {exc}", file=sys.stderr)
            status = EXIT_INVALID
    seen = set()
    for w in caught:
        msg = str(w.message)
        if msg not in seen:
            seen.add(msg)
            print(f"warning: {msg}", file=sys.stderr)
    if status == EXIT_OK:
        sys.stdout.write(_render(args.format, payload, frame, text))
    return status


def main(argv=None) -> None:
    sys.exit(run(argv))
