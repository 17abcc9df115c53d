"""Command-line interface: ``frg-flow {conjugate,flow,om,boundary,check}``

Exit codes: 0 on success, 1 when a checked property fails or a computation
aborts, 2 on configuration or argument errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .checks import default_cases, gaussian_suite
from .config import RunConfig, load_config
from .conjugate import conjugate
from .exceptions import ConfigError, DomainError, FlowAborted, FrgFlowError, PreconditionError
from .flow import FlowGrid, integrated_flow_check, records_frame, run_flow
from .onsager import boundary_check, om_estimate
from .report import Report, config_hash, provenance, write_csv
from .svg import Series, render_svg

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_CONFIG = 2


def _floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers: {text!r}") \
            from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frg-flow",
        description="Effective average actions, Wetterich flow checks and Onsager-Machlup limits",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, required=True, help="TOML or YAML run configuration")
    common.add_argument("--out", type=Path, help="Append JSON-lines records to this file")
    common.add_argument("--verbose", "-v", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("conjugate", parents=[common], help="V*_k(y) and Gamma_k(y)")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--y", type=_floats, required=True)

    p = sub.add_parser("flow", parents=[common], help="Flow equation residuals along a k grid")
    p.add_argument("--y", type=_floats, required=True)
    p.add_argument("--kmin", type=float)
    p.add_argument("--kmax", type=float)
    p.add_argument("--points", type=int)
    p.add_argument("--fd-step", type=float)
    p.add_argument("--csv", type=Path, help="CSV output path (default: stdout)")
    p.add_argument("--svg", type=Path, help="Plot Gamma_k and the residual against k")

    p = sub.add_parser("om", parents=[common], help="Onsager-Machlup function F(a, b)")
    p.add_argument("--a", type=_floats, required=True)
    p.add_argument("--b", type=_floats, required=True)
    p.add_argument("--radii", type=_floats)
    p.add_argument("--fit-points", type=int)
    p.add_argument("--method", choices=("auto", "plain", "importance"))
    p.add_argument("--svg", type=Path, help="Plot log ratios against s^2 with the fit line")

    p = sub.add_parser("boundary", parents=[common], help="Compare lim Gamma_k(y) with F(w, y)")
    p.add_argument("--y", type=_floats, required=True)
    p.add_argument("--kmin", type=float)
    p.add_argument("--kmax", type=float)
    p.add_argument("--points", type=int)
    p.add_argument("--radii", type=_floats)
    p.add_argument("--svg", type=Path, help="Plot Gamma_k against k with the OM value")

    sub.add_parser("check", parents=[common], help="Gaussian closed-form invariant suite")
    return parser


def _pick(value, default):
    return default if value is None else value


def _emit(report: Report, args) -> None:
    report.write(sys.stdout)
    if args.out:
        report.append_to(args.out)


def _new_report(command: str, config: RunConfig) -> Report:
    return Report(command, config_hash(config), provenance(config.estimator["seed"]))


def cmd_conjugate(args, config: RunConfig) -> int:
    model, fam, cfg = config.model(), config.family(), config.estimator_config()
    result = conjugate(args.k, args.y, model, fam, cfg)
    report = _new_report("conjugate", config)
    report.add(
        {
            "k": result.k,
            "y": result.y,
            "vstar": result.value,
            "gamma": result.gamma,
            "phi": result.tilt.phi,
            "iterations": result.tilt.iterations,
            "converged": result.tilt.converged,
        }
    )
    _emit(report, args)
    return EXIT_OK


def cmd_flow(args, config: RunConfig) -> int:
    model, fam, cfg = config.model(), config.family(), config.estimator_config()
    section = config.flow
    grid = FlowGrid.linspace(
        _pick(args.kmin, section["kmin"]),
        _pick(args.kmax, section["kmax"]),
        _pick(args.points, section["points"]),
        args.y,
        _pick(args.fd_step, section["fd_step"]),
    )
    status = EXIT_OK
    try:
        records = run_flow(grid, model, fam, cfg)
    except FlowAborted as exc:
        logger.error("flow aborted at k=%g: %s", exc.k, exc)
        records, status = exc.records, EXIT_PROPERTY
    if not records:
        return status

    frame = records_frame(records)
    if args.csv:
        write_csv(frame, args.csv)
    else:
        frame.to_csv(sys.stdout, index=False, float_format="%.17g")
    if args.svg:
        render_svg(
            [
                Series("gamma", frame["k"].tolist(), frame["gamma"].tolist()),
                Series("residual", frame["k"].tolist(), frame["residual"].tolist()),
            ],
            args.svg,
            title="Effective average action",
            x_label="k",
            y_label="value",
        )
    summary = {
        "y": list(grid.y),
        "points": len(records),
        "max_residual": float(frame["residual"].max()),
        "gamma_end": records[-1].gamma,
        "aborted": status != EXIT_OK,
    }
    if len(records) >= 3:
        summary["integrated_gap"] = integrated_flow_check(records).gap
    if args.out:
        report = _new_report("flow", config)
        report.add(summary)
        report.append_to(args.out)
    return status


def _om_series(om):
    s2 = [s * s for s in om.radius_grid]
    fit_s2 = [0.0] + sorted(s * s for s in om.fit_radii)
    return [
        Series("log ratio", s2, list(om.log_ratios)),
        Series("fit", fit_s2, [om.extrapolated + om.fit_slope * x for x in fit_s2]),
    ]


def _om_record(om) -> dict:
    return {
        "a": om.a,
        "b": om.b,
        "om": om.extrapolated,
        "stderr": om.extrapolation_stderr,
        "radii": list(om.radius_grid),
        "log_ratios": list(om.log_ratios),
        "log_ratio_stderr": list(om.log_ratio_stderr),
        "fit_radii": list(om.fit_radii),
        "fit_residual": om.fit_residual,
        "undefined": list(om.undefined),
    }


def cmd_om(args, config: RunConfig) -> int:
    model, fam, cfg = config.model(), config.family(), config.estimator_config()
    section = config.om
    om = om_estimate(
        model,
        cfg,
        fam.r0,
        args.a,
        args.b,
        _pick(args.radii, section["radii"]),
        fit_points=_pick(args.fit_points, section["fit_points"]),
        min_hits=section["min_hits"],
        method=_pick(args.method, section["method"]),
    )
    report = _new_report("om", config)
    report.add(_om_record(om))
    _emit(report, args)
    if args.svg:
        render_svg(_om_series(om), args.svg, title="Small-ball log ratios", x_label="s^2",
                   y_label="log ratio")
    return EXIT_OK


def cmd_boundary(args, config: RunConfig) -> int:
    model, fam, cfg = config.model(), config.family(), config.estimator_config()
    section = config.boundary
    kmin = _pick(args.kmin, section["kmin"])
    kmax = _pick(args.kmax, section["kmax"])
    if not kmin > 0:
        raise ConfigError("boundary kmin must be positive")
    if kmax <= kmin:
        raise ConfigError("kmax must exceed kmin")
    k_grid = np.geomspace(kmin, kmax, _pick(args.points, section["points"]))
    result = boundary_check(
        args.y,
        model,
        fam,
        cfg,
        k_grid,
        _pick(args.radii, config.om["radii"]),
        fit_points=section["fit_points"],
        om_method=config.om["method"],
    )
    report = _new_report("boundary", config)
    report.add(
        {
            "y": args.y,
            "gamma_limit": result.gamma_limit,
            "om": result.om_value,
            "om_stderr": result.om.extrapolation_stderr,
            "gap": result.gap,
            "gammas": [list(pair) for pair in result.gammas],
            "admissible_trend": result.admissible_trend,
        }
    )
    _emit(report, args)
    if args.svg:
        ks = [k for k, _ in result.gammas]
        render_svg(
            [
                Series("gamma_k", ks, [g for _, g in result.gammas]),
                Series("OM", [ks[0], ks[-1]], [result.om_value, result.om_value]),
            ],
            args.svg,
            title="Boundary limit",
            x_label="k",
            y_label="value",
        )
    return EXIT_OK


def cmd_check(args, config: RunConfig) -> int:
    cases = default_cases(1)
    model = config.model()
    if model.perturbation is None:
        cases.append(("config", model, config.family()))
    results = gaussian_suite(cases, config.estimator_config())
    report = _new_report("check", config)
    for result in results:
        report.add(result._asdict())
    _emit(report, args)
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"FAILED {r.check} [{r.case}]: {r.value} > {r.tolerance} {r.message}",
              file=sys.stderr)
    return EXIT_PROPERTY if failed else EXIT_OK


COMMANDS = {
    "conjugate": cmd_conjugate,
    "flow": cmd_flow,
    "om": cmd_om,
    "boundary": cmd_boundary,
    "check": cmd_check,
}


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        force=True,
    )


def dispatch(argv: Optional[List[str]] = None) -> int:
    """Parse the command line, run the command and map errors to exit codes"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    configure_logging(args.verbose)
    try:
        config = load_config(args.config)
        return COMMANDS[args.command](args, config)
    except (ConfigError, DomainError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FrgFlowError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_PROPERTY


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
