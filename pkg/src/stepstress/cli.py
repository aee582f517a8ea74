"""Command-line front end.

Subcommands: ``generate``, ``fit``, ``characterize``, ``simulate`` and
``residuals``.  Every command reads a configuration (``--config`` JSON file or
``--preset``) and writes only to ``--out``.

Exit codes: 0 success, 2 validation error, 3 numerical failure.  Errors are
reported as a single JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import characteristics as ch
from . import config as cfgmod
from .estimation import FitOptions, GroupedCounts, asymptotic_covariance, fit_mdpde
from .model import ModelParams, NumericalError, param_names
from .simulation import adjusted_residuals, default_threads, generate_counts, rmse_study

log = logging.getLogger("stepstress")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3
CSV_HEADER = ["interval", "t_lower", "t_upper", "stress", "count"]
ROBUST_BETA = 0.4


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code, self.kind, self.extra = code, kind, extra


def _validation(message: str, **extra) -> CliError:
    return CliError(EXIT_VALIDATION, "validation", message, **extra)


# ---------------------------------------------------------------- io helpers

def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, allow_nan=True) + "\n")


def _write_csv(path: Path, header, rows, comments=()) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _fmt(x: float) -> str:
    return "inf" if x == math.inf else repr(float(x))


def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise _validation(f"{flag}: expected comma-separated numbers, got {text!r}", field=flag) from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise _validation(f"{flag}: expected finite numbers, got {text!r}", field=flag)
    return vals


def _load_config(args) -> cfgmod.ExperimentConfig:
    if args.config and args.preset:
        raise _validation("give either --config or --preset, not both", field="--config")
    if args.preset:
        cfg = cfgmod.preset(args.preset)
    elif args.config:
        cfg = cfgmod.load(args.config)
    else:
        raise _validation("a configuration is required (--config PATH or --preset NAME)", field="--config")
    if getattr(args, "tau", None) is not None:
        cfg = cfg.with_tau(args.tau)
    return cfg


def counts_rows(counts: GroupedCounts, design) -> list[list]:
    times = (0.0,) + design.inspection_times
    stress = design.interval_stress()
    rows = [
        [j + 1, _fmt(times[j]), _fmt(times[j + 1]), _fmt(stress[j]), n]
        for j, n in enumerate(counts.counts[:-1])
    ]
    rows.append([design.n_cells, _fmt(times[-1]), "inf", _fmt(stress[-1]), counts.counts[-1]])
    return rows


def design_comments(cfg: cfgmod.ExperimentConfig) -> list[str]:
    d = cfg.design
    return [
        f"kind={cfg.kind}",
        f"x1={d.x1!r} x2={d.x2!r} tau={d.tau!r} n_units={d.n_units}",
        "inspection_times=" + ",".join(repr(t) for t in d.inspection_times),
    ]


def read_counts(path, design) -> GroupedCounts:
    """Parse a counts CSV and check it against ``design``."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise _validation(f"cannot read counts file: {exc}", field="counts") from None
    rows = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows:
        raise _validation("counts file is empty", field="counts")
    header = [h.strip() for h in rows[0][1].split(",")]
    if header != CSV_HEADER:
        raise _validation(f"line {rows[0][0]}: expected header {','.join(CSV_HEADER)}", field="counts", line=rows[0][0])
    times = (0.0,) + design.inspection_times + (math.inf,)
    counts = []
    for k, (lineno, text) in enumerate(rows[1:]):
        fields = [f.strip() for f in text.split(",")]
        if len(fields) != len(CSV_HEADER):
            raise _validation(f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(fields)}", field="counts", line=lineno)
        try:
            idx = int(fields[0])
            lo, hi = float(fields[1]), float(fields[2])
            n = int(fields[4])
        except ValueError:
            raise _validation(f"line {lineno}: malformed row {text!r}", field="counts", line=lineno) from None
        if idx != k + 1:
            raise _validation(f"line {lineno}: interval index {idx}, expected {k + 1}", field="counts", line=lineno)
        if n < 0:
            raise _validation(f"line {lineno}: negative count {n}", field="counts", line=lineno)
        if k + 1 < len(times) and not (
            math.isclose(lo, times[k], rel_tol=1e-9, abs_tol=1e-12)
            and (hi == times[k + 1] or math.isclose(hi, times[k + 1], rel_tol=1e-9))
        ):
            raise _validation(
                f"line {lineno}: interval ({lo}, {hi}] does not match the design ({times[k]}, {times[k + 1]}]",
                field="counts", line=lineno,
            )
        counts.append(n)
    if len(counts) != design.n_cells:
        raise _validation(
            f"counts file has {len(counts)} cells, the design needs {design.n_cells} (intervals plus survivors)",
            field="counts",
        )
    if sum(counts) == 0:
        raise _validation("counts sum to zero", field="counts")
    return GroupedCounts(tuple(counts))


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    cfg = _load_config(args)
    theta = cfg.require_theta()
    seed = cfg.seed if args.seed is None else args.seed
    contamination = None
    if args.epsilon:
        if cfg.contaminated_cell is None:
            raise _validation("--epsilon needs a contamination cell in the configuration", field="--epsilon")
        contamination = cfg.simulation_config().contamination(args.epsilon)
    counts = generate_counts(theta, cfg.design, contamination, seed)
    comments = design_comments(cfg) + [f"seed={seed}"]
    if contamination is not None:
        comments.append(f"contamination cell={contamination.cell} epsilon={contamination.epsilon!r}")
    _write_csv(Path(args.out), CSV_HEADER, counts_rows(counts, cfg.design), comments)
    return EXIT_OK


def _fit_options(args) -> FitOptions:
    return FitOptions(level=args.level)


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    counts = read_counts(args.counts, cfg.design)
    betas = _parse_floats(args.beta, "--beta") if args.beta else list(cfg.beta_grid)
    if any(b < 0 for b in betas):
        raise _validation("--beta: tuning parameters must be >= 0", field="--beta")
    if not 0 < args.level < 1:
        raise _validation("--level must lie in (0, 1)", field="--level")
    fits = []
    for beta in betas:
        try:
            fits.append(fit_mdpde(counts, cfg.design, cfg.kind, beta, _fit_options(args)).to_dict())
        except (NumericalError, FloatingPointError, OverflowError) as exc:
            fits.append({"beta": beta, "converged": False, "message": f"fit failed: {exc}"})
    report = {
        "kind": cfg.kind,
        "design": cfg.to_dict()["design"],
        "counts": list(counts.counts),
        "n_units": counts.n_units,
        "level": args.level,
        "fits": fits,
    }
    out = Path(args.out)
    _dump_json(report, out)
    _write_csv(out.with_suffix(".csv"), *_table_rows(cfg.kind, fits))
    return EXIT_OK


def _table_rows(kind: str, fits: list[dict]):
    names = param_names(kind)
    header = ["row"] + [f"{f['beta']:g}" for f in fits]
    rows = []
    for n in names:
        rows.append([n] + [_fmt(f["estimates"][n]) if "estimates" in f else "nan" for f in fits])
    for n in names:
        rows.append([f"se_{n}"] + [
            _fmt(f["std_errors"][n]) if f.get("std_errors") else "nan" for f in fits
        ])
    rows.append(["converged"] + [str(bool(f.get("converged"))).lower() for f in fits])
    return header, rows


def _theta_from_flag(text: str, kind: str) -> ModelParams:
    vals = _parse_floats(text, "--theta")
    names = param_names(kind)
    if len(vals) != len(names):
        raise _validation(f"--theta: expected {len(names)} values {names}, got {len(vals)}", field="--theta")
    try:
        return ModelParams.from_vector(kind, vals)
    except ValueError as exc:
        raise _validation(f"--theta: {exc}", field="--theta") from None


def _characterize_one(theta: ModelParams, sigma, n_units, cfg, level) -> dict:
    query = ch.NocQuery(cfg.query.x0, cfg.query.t0, cfg.query.p, level)
    est = ch.characterize(theta, query, sigma=sigma, n_units=n_units, quantiles=cfg.quantiles)
    return {name: e.to_dict() for name, e in est.items()}


def cmd_characterize(args) -> int:
    cfg = _load_config(args)
    level = args.level if args.level is not None else cfg.query.level
    entries = []
    if args.fit:
        try:
            report = json.loads(Path(args.fit).read_text())
            fits = report["fits"]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise _validation(f"cannot read fit report: {exc}", field="--fit") from None
        if report.get("kind") != cfg.kind:
            raise _validation(f"fit report is for a {report.get('kind')} baseline, config is {cfg.kind}", field="--fit")
        wanted = _parse_floats(args.beta, "--beta") if args.beta else None
        for f in fits:
            if "estimates" not in f or (wanted is not None and not any(math.isclose(f["beta"], b) for b in wanted)):
                continue
            theta = _theta_from_flag(",".join(repr(f["estimates"][n]) for n in param_names(cfg.kind)), cfg.kind)
            sigma = np.array(f["sigma"]) if f.get("sigma") is not None else None
            entries.append((f["beta"], theta, sigma, f["n_units"] if sigma is not None else None))
        if not entries:
            raise _validation("no usable fits in the report for the requested beta values", field="--fit")
    else:
        theta = _theta_from_flag(args.theta, cfg.kind) if args.theta else cfg.require_theta()
        beta = _parse_floats(args.beta, "--beta")[0] if args.beta else 0.0
        sigma = asymptotic_covariance(theta, cfg.design, beta)
        entries.append((beta, theta, sigma, cfg.design.n_units))
    out = {
        "kind": cfg.kind,
        "noc": {"x0": cfg.query.x0, "t0": cfg.query.t0, "p": cfg.query.p, "level": level},
        "results": [
            {
                "beta": beta,
                "theta": dict(zip(param_names(cfg.kind), map(float, theta.vector))),
                "n_units": n,
                "characteristics": _characterize_one(theta, sigma, n, cfg, level),
            }
            for beta, theta, sigma, n in entries
        ],
    }
    _dump_json(out, Path(args.out))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.replicates is not None:
        if args.replicates < 1:
            raise _validation("--replicates must be >= 1", field="--replicates")
        cfg = replace(cfg, replicates=args.replicates)
    if args.beta:
        cfg = replace(cfg, beta_grid=tuple(_parse_floats(args.beta, "--beta")))
    sim = cfg.simulation_config(FitOptions(level=cfg.query.level))
    threads = args.threads or default_threads()
    report = rmse_study(sim, threads=threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(report.to_dict(), out / "report.json")
    _write_csv(out / "rmse.csv", ["beta", "epsilon", "target", "rmse"],
               [[_fmt(b), _fmt(e), t, _fmt(v)] for b, e, t, v in report.rmse_rows()])
    _write_csv(out / "residuals.csv", ["epsilon", "cell", "mean_residual"],
               [[_fmt(e), j, _fmt(r)] for e, j, r in report.residual_rows()])
    if report.flagged():
        raise CliError(EXIT_NUMERIC, "numeric", "more than 5% of replicate fits failed; see report.json")
    return EXIT_OK


def cmd_residuals(args) -> int:
    cfg = _load_config(args)
    counts = read_counts(args.counts, cfg.design)
    comments = []
    if args.theta:
        theta = _theta_from_flag(args.theta, cfg.kind)
        comments.append("plug-in: user-supplied theta")
    else:
        beta = _parse_floats(args.beta, "--beta")[0] if args.beta else ROBUST_BETA
        fit = fit_mdpde(counts, cfg.design, cfg.kind, beta, FitOptions(covariance=False))
        if not fit.converged:
            raise CliError(EXIT_NUMERIC, "numeric", f"plug-in fit (beta={beta:g}) did not converge: {fit.message}")
        theta = fit.theta_hat
        comments.append(f"plug-in: MDPDE beta={beta:g}")
        if beta < 0.2:
            comments.append(
                f"note: a non-robust plug-in hides outlying cells; beta={ROBUST_BETA:g} or larger is recommended"
            )
    r = adjusted_residuals(counts, theta, cfg.design)
    comments.append("theta=" + ",".join(repr(float(v)) for v in theta.vector))
    _write_csv(Path(args.out), ["cell", "residual"], [[j + 1, _fmt(v)] for j, v in enumerate(r)], comments)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stepstress", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment configuration (JSON)")
        p.add_argument("--preset", choices=sorted(cfgmod.PRESETS), help="built-in scenario")
        p.add_argument("--tau", type=float, help="override the stress-change time")
        p.add_argument("--out", required=True, help="output path")

    p = sub.add_parser("generate", help="simulate a grouped counts CSV")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float, default=0.0, help="contamination strength at the configured cell")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="MDPDE fits over a beta grid")
    p.add_argument("counts")
    common(p)
    p.add_argument("--beta", help="comma-separated tuning parameters (default: config grid)")
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("characterize", help="lifetime characteristics with delta-method intervals")
    common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--fit", help="fit report JSON from the fit command")
    src.add_argument("--theta", help="comma-separated parameter vector")
    p.add_argument("--beta", help="restrict to these fits, or the beta for the covariance with --theta")
    p.add_argument("--level", type=float)
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("simulate", help="Monte Carlo RMSE study")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    p.add_argument("--replicates", type=int)
    p.add_argument("--beta", help="comma-separated tuning parameters (default: config grid)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("residuals", help="adjusted residuals per cell")
    p.add_argument("counts")
    common(p)
    p.add_argument("--theta", help="comma-separated parameter vector")
    p.add_argument("--beta", help=f"fit a plug-in MDPDE with this beta (default {ROBUST_BETA})")
    p.set_defaults(func=cmd_residuals)
    return parser


def _report_error(code: int, kind: str, message: str, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}) + "\n")
    return code


def main(argv=None) -> int:
    level = os.environ.get("STEPSTRESS_LOG", "WARNING").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else "WARNING",
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_VALIDATION
    try:
        return args.func(args)
    except CliError as exc:
        return _report_error(exc.code, exc.kind, str(exc), **exc.extra)
    except cfgmod.ConfigError as exc:
        return _report_error(EXIT_VALIDATION, "validation", str(exc), field=exc.field)
    except (NumericalError, FloatingPointError, OverflowError) as exc:
        return _report_error(EXIT_NUMERIC, "numeric", str(exc))
    except ValueError as exc:
        return _report_error(EXIT_VALIDATION, "validation", str(exc))


if __name__ == "__main__":
    sys.exit(main())
