"""Command-line entry point: ``ctrlcal fit | simulate | validate``.

Exit codes: 0 success, 1 a validation check failed, 2 bad input (parse or
validation error, bad arguments), 3 numerical failure, 4 internal error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from importlib.resources import files
from pathlib import Path
from typing import List, Optional

from . import __version__
from .controlled import fit_known_delta, fit_unknown_delta
from .data import summarize
from .errors import CalibrationError, NegativeVarianceEstimate, NumericalError
from .inference import formulas_for, report
from .io import LOCALES, ingest
from .simulation import CSV_COLUMNS, parse_grid, run_grid, summary_rows, with_overrides
from .usual import fit_usual

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_NUMERICAL, EXIT_INTERNAL = 0, 1, 2, 3, 4

MODELS = ("usual", "unknown", "known")
FIT_COLUMNS = ("model", "formula", "quantity", "value")


def fit_rows(data, models, sigma_delta_sq: Optional[float] = None, level: float = 0.95) -> List[dict]:
    """Estimates and uncertainty summaries, one dict per (model, formula, quantity).

    Point estimates have an empty ``formula``. For every applicable variance
    formula the rows give the variance, the first-order bias, the interval
    bounds, the full interval width (``amplitude``) and the half width
    (``expanded_uncertainty``, z sqrt(V)).
    """
    stats = summarize(data)
    rows = []
    for model in models:
        if model == "usual":
            fit = fit_usual(stats)
        elif model == "unknown":
            fit = fit_unknown_delta(stats)
        elif model == "known":
            if sigma_delta_sq is None:
                raise ValueError("model 'known' needs --sigma-delta-sq")
            fit = fit_known_delta(stats, sigma_delta_sq)
        else:
            raise ValueError(f"unknown model {model!r}")
        point = [
            ("alpha", fit.alpha_hat),
            ("beta", fit.beta_hat),
            ("x0", fit.x0_hat),
            ("sigma_eps_sq", fit.sigma_eps_sq_hat),
        ]
        if model != "usual":
            point.append(("sigma_delta_sq", fit.sigma_delta_sq_hat))
        rows += [dict(model=model, formula="", quantity=q, value=float(v)) for q, v in point]
        if model == "known":
            rows.append(dict(model=model, formula="", quantity="iterations", value=fit.iterations))
        for formula in formulas_for(fit):
            rep = report(fit, stats, formula, level)
            for q, v in (
                ("variance", rep.variance),
                ("bias", rep.bias),
                ("ci_lower", rep.ci_lower),
                ("ci_upper", rep.ci_upper),
                ("amplitude", rep.amplitude),
                ("expanded_uncertainty", rep.expanded_uncertainty),
            ):
                rows.append(dict(model=model, formula=formula.value, quantity=q, value=v))
    return rows


def _fmt_full(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_csv(rows, columns, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt_full(row.get(c)) for c in columns])


def write_json_lines(rows, columns, stream) -> None:
    for row in rows:
        stream.write(json.dumps({c: row.get(c) for c in columns}, allow_nan=True) + "\n")


def _fmt_short(v) -> str:
    if isinstance(v, float):
        return f"{v:.3g}"
    return "" if v is None else str(v)


def write_table(rows, columns, stream) -> None:
    cells = [[str(c) for c in columns]] + [[_fmt_short(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(line[i]) for line in cells) for i in range(len(columns))]
    for j, line in enumerate(cells):
        stream.write("  ".join(s.ljust(w) for s, w in zip(line, widths)).rstrip() + "\n")
        if j == 0:
            stream.write("  ".join("-" * w for w in widths) + "\n")


WRITERS = {"csv": write_csv, "json": write_json_lines, "table": write_table}


def _emit(rows, columns, fmt, out) -> None:
    buf = io.StringIO()
    WRITERS[fmt](rows, columns, buf)
    if out is None:
        sys.stdout.write(buf.getvalue())
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())


def _cmd_fit(args) -> int:
    models = args.model or (MODELS if args.sigma_delta_sq is not None else MODELS[:2])
    if "known" in models and args.sigma_delta_sq is None:
        print("error: --model known requires --sigma-delta-sq", file=sys.stderr)
        return EXIT_INPUT
    if args.sigma_delta_sq is not None and args.sigma_delta_sq < 0:
        print("error: --sigma-delta-sq must be >= 0", file=sys.stderr)
        return EXIT_INPUT
    data = ingest(args.first, args.second, args.locale)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NegativeVarianceEstimate)
        rows = fit_rows(data, models, args.sigma_delta_sq, args.level)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    _emit(rows, FIT_COLUMNS, args.format, args.out)
    return EXIT_OK


def bundled_grid(name: str) -> Path:
    """Path of a grid file shipped with the package (``smoke``, ``grid_sd0.01`` ...)."""
    stem = name[:-5] if name.endswith(".grid") else name
    return Path(str(files("ctrlcal") / "fixtures" / f"{stem}.grid"))


def _read_grid(name: str):
    path = Path(name)
    if not path.exists():
        alt = bundled_grid(name)
        if alt.exists():
            path = alt
    return parse_grid(path.read_text(encoding="utf-8"), source=str(path))


CELL_KEYS = ("x0", "n", "k", "sigma_delta_sq")

_SHORT = {"usual": "U", "unknown": "C", "known": "K"}
_FORMULA_SHORT = {"v1_usual": "v1", "v2_usual": "v2", "v1_controlled": "v1", "v2_controlled": "v2", "v_known_delta": "vk"}


def pivot_rows(rows):
    """One line per cell: bias and MSE per estimator, coverage and amplitude per formula.

    Estimators are abbreviated U, C, K (usual, unknown-delta, known-delta)
    and formulas v1, v2, vk, giving columns such as ``bias_C``, ``mse_C``,
    ``cov_C_v1`` and ``amp_C_vk`` (the plug-in known-delta interval around
    the unknown-delta estimate).
    """
    cells, columns = {}, list(CELL_KEYS)
    for r in rows:
        key = tuple(r[c] for c in CELL_KEYS)
        line = cells.setdefault(key, dict(zip(CELL_KEYS, key)))
        est = _SHORT.get(r["estimator"], r["estimator"])
        items = [(f"bias_{est}", r.get("empirical_bias")), (f"mse_{est}", r.get("empirical_mse"))]
        if r.get("n_failed"):
            items.append((f"failed_{est}", r["n_failed"]))
        if r.get("formula"):
            tag = f"{est}_{_FORMULA_SHORT.get(r['formula'], r['formula'])}"
            items += [(f"cov_{tag}", r.get("coverage_pct")), (f"amp_{tag}", r.get("mean_amplitude"))]
        for name, value in items:
            if name not in columns:
                columns.append(name)
            line[name] = value
    return list(cells.values()), tuple(columns)


def _cmd_simulate(args) -> int:
    cells = with_overrides(_read_grid(args.grid), replications=args.reps, seed=args.seed)
    results = run_grid(cells, workers=args.workers)
    rows, columns = summary_rows(results, cells), CSV_COLUMNS
    if args.format == "table":
        rows, columns = pivot_rows(rows)
    _emit(rows, columns, args.format, args.out)
    failed = [r for r in results if isinstance(r, Exception)]
    for exc in failed:
        print(f"warning: {exc}", file=sys.stderr)
    return EXIT_NUMERICAL if failed and len(failed) == len(results) else EXIT_OK


def _cmd_validate(args) -> int:
    from .checks import run_all

    results = run_all(fast=args.fast)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    n_bad = sum(not r.passed for r in results)
    print(f"{len(results) - n_bad}/{len(results)} checks passed")
    return EXIT_OK if n_bad == 0 else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctrlcal",
        description="Linear calibration with controlled (Berkson) errors in the standards.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit calibration models to a two-stage dataset")
    fit.add_argument("--first", required=True, help="standards CSV with header x,y")
    fit.add_argument("--second", required=True, help="unknown-sample CSV with header y0")
    fit.add_argument(
        "--model",
        action="append",
        choices=MODELS,
        help="model to fit; repeatable (default: usual and unknown, plus known "
        "when --sigma-delta-sq is given)",
    )
    fit.add_argument("--sigma-delta-sq", type=float, help="known Berkson variance for --model known")
    fit.add_argument("--level", type=float, default=0.95, help="confidence level (default 0.95)")
    fit.add_argument("--locale", choices=LOCALES, default="point", help="decimal separator of the inputs")
    fit.add_argument("--format", choices=tuple(WRITERS), default="table")
    fit.add_argument("--out", help="output file (default stdout)")
    fit.set_defaults(func=_cmd_fit)

    sim = sub.add_parser("simulate", help="run a Monte Carlo grid")
    sim.add_argument("--grid", required=True, help="grid file, or the name of a bundled grid")
    sim.add_argument("--reps", type=int, help="override the replications per cell")
    sim.add_argument("--seed", type=int, help="override the seed")
    sim.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    sim.add_argument("--format", choices=("csv", "json", "table"), default="csv")
    sim.add_argument("--out", help="output file (default stdout)")
    sim.set_defaults(func=_cmd_simulate)

    val = sub.add_parser("validate", help="run the built-in consistency checks")
    val.add_argument("--fast", action="store_true", help="smaller Monte Carlo sizes")
    val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CalibrationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
