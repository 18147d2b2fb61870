"""Command-line entry point.

``pmpkit <simulate|adjoint|check|solve|probe> --problem FILE --grid N [options]``

Exit codes: 0 success or PASS, 1 configuration or parse error, 2 solver
error, 3 certificate FAIL.  Output files are written to a temporary file
and renamed, so a failing command leaves no partial output behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import yaml

from .bv import NBVMeasure, TimeGrid, measures_from_csv, measures_to_csv
from .checker import Candidate, Tolerances, assemble_adjoint, check_certificate
from .ekeland import ekeland_descend, extract_multipliers
from .errors import ConfigError, ParseError, PMPKitError
from .ode import ControlSignal, solve_forward
from .problem import load_problem
from .spike import differentiability_probe, probe_to_csv

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_FAIL = 0, 1, 2, 3
TOL_NAMES = ("feasibility", "hamiltonian", "slackness", "transversality", "nontriviality")
DEFAULT_RHOS = (0.2, 0.1, 0.05, 0.025)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--problem", required=True, help="problem config (YAML or JSON)")
    common.add_argument("--grid", type=int, required=True, help="number of uniform cells N (>= 2)")
    common.add_argument("--out", help="output directory (default: $PMPKIT_OUT or the current directory)")
    common.add_argument("--control", help="control CSV (rows: t, u1, ...); default is the center of Omega")
    for name in TOL_NAMES:
        common.add_argument(f"--tol-{name}", type=float, dest=f"tol_{name}")
    common.add_argument("--psi", type=float, default=1.0, help="terminal multiplier (default 1)")
    common.add_argument("--eta", help="measures CSV (t, atom, density[, ...]); default zero")
    common.add_argument("--format", choices=("text", "structured"), default="text", help="report format")

    parser = _Parser(prog="pmpkit", description="State-constrained maximum principle toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="integrate the state equation")
    sub.add_parser("adjoint", parents=[common], help="assemble the adjoint path")
    sub.add_parser("check", parents=[common], help="check the maximum principle conditions")
    p_solve = sub.add_parser("solve", parents=[common], help="penalized spike descent, then check")
    p_solve.add_argument("--budget", type=int, default=500, help="iteration budget (default 500)")
    p_probe = sub.add_parser("probe", parents=[common], help="spike differentiability probe")
    p_probe.add_argument("--control-prime", required=True, help="control CSV for the spike value u'")
    p_probe.add_argument("--rho", type=float, nargs="+", default=list(DEFAULT_RHOS), help="rho ladder")
    return parser


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


def _num(x):
    return f"{float(x):.6e}"


def emit_report(certificate, format="text"):
    """Serialize a certificate to deterministic bytes.

    ``text`` gives one line per condition; ``structured`` gives JSON with
    sorted keys.
    """
    c = certificate
    if format == "structured":
        doc = {
            "verdict": c.verdict,
            "psi": _num(c.psi),
            "hamiltonian_l1": _num(c.hamiltonian_l1),
            "error": c.error,
            "conditions": [
                {
                    "name": k.name,
                    "residual": _num(k.value),
                    "tolerance": _num(k.tolerance),
                    "status": "PASS" if k.passed else "FAIL",
                    "detail": k.detail,
                }
                for k in c.conditions
            ],
        }
        return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")
    if format != "text":
        raise ValueError(f"unknown report format {format!r}")
    lines = [f"verdict: {c.verdict}", f"psi: {_num(c.psi)}", f"hamiltonian_l1: {_num(c.hamiltonian_l1)}"]
    if c.error:
        lines.append(f"error: {c.error}")
    for k in c.conditions:
        line = f"{k.name:<16} {'PASS' if k.passed else 'FAIL'} residual={_num(k.value)} tolerance={_num(k.tolerance)}"
        if k.detail:
            line += f" ({k.detail})"
        lines.append(line)
    return ("\n".join(lines) + "\n").encode("utf-8")


# --------------------------------------------------------------------------
# Inputs and outputs
# --------------------------------------------------------------------------


def _read_text(path, what):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc.strerror}") from None


def _load_config(args):
    text = _read_text(args.problem, "problem file")
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"problem file is not valid YAML/JSON: {exc}") from None
    problem = load_problem(cfg)
    if args.grid < 2:
        raise ConfigError("--grid must be at least 2")
    overrides = dict(cfg.get("tolerances") or {})
    unknown = set(overrides) - set(TOL_NAMES)
    if unknown:
        raise ConfigError(f"unknown tolerance(s): {', '.join(sorted(unknown))}")
    for name in TOL_NAMES:
        v = getattr(args, f"tol_{name}")
        if v is not None:
            overrides[name] = v
    try:
        tol = Tolerances(**{k: float(v) for k, v in overrides.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return problem, tol, TimeGrid.uniform(args.grid, problem.T)


def _load_control(path, problem, grid):
    if path is None:
        return ControlSignal.constant(grid, np.asarray(problem.omega.center(), dtype=np.float64))
    try:
        u = ControlSignal.from_csv(_read_text(path, "control"), problem.T)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if u.m != problem.m:
        raise ConfigError(f"{path}: control has {u.m} components, expected m={problem.m}")
    return u


def _load_eta(path, problem, grid):
    if path is None:
        return [NBVMeasure.zero(grid) for _ in range(problem.j)]
    try:
        etas = measures_from_csv(_read_text(path, "measures"))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if len(etas) != problem.j:
        raise ConfigError(f"{path}: {len(etas)} measures, expected j={problem.j}")
    return etas


def _out_dir(args):
    d = Path(args.out or os.environ.get("PMPKIT_OUT") or ".")
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {d}: {exc.strerror}") from None
    return d


def write_outputs(directory, files):
    """Write ``{name: bytes}`` atomically: all temporaries first, then renames."""
    staged = []
    try:
        for name, data in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=directory)
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            staged.append((tmp, directory / name))
        for tmp, final in staged:
            os.replace(tmp, final)
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise


def _report_name(fmt):
    return "report.json" if fmt == "structured" else "report.txt"


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def _simulate(args, problem, tol, grid):
    u = _load_control(args.control, problem, grid)
    traj = solve_forward(problem, u, grid.union(u.grid))
    return {"trajectory.csv": traj.to_csv().encode()}, EXIT_OK, None


def _adjoint(args, problem, tol, grid):
    u = _load_control(args.control, problem, grid)
    cand = Candidate(u, args.psi, _load_eta(args.eta, problem, grid))
    p = assemble_adjoint(problem, cand, grid)
    return {"adjoint.csv": p.to_csv("p").encode()}, EXIT_OK, None


def _certify(problem, cand, tol, grid, fmt):
    cert = check_certificate(problem, cand, tol, grid)
    report = emit_report(cert, fmt)
    code = {"PASS": EXIT_OK, "FAIL": EXIT_FAIL}.get(cert.verdict, EXIT_SOLVER)
    return report, code


def _check(args, problem, tol, grid):
    u = _load_control(args.control, problem, grid)
    cand = Candidate(u, args.psi, _load_eta(args.eta, problem, grid))
    report, code = _certify(problem, cand, tol, grid, args.format)
    return {_report_name(args.format): report}, code, report


def _solve(args, problem, tol, grid):
    u0 = _load_control(args.control, problem, grid)
    if args.budget < 1:
        raise ConfigError("--budget must be positive")
    u, state = ekeland_descend(problem, u0, budget=args.budget, grid=grid)
    psi, etas = extract_multipliers(problem, state, grid)
    files = {"control.csv": u.to_csv().encode()}
    if etas:
        files["measures.csv"] = measures_to_csv(etas).encode()
    files["history.csv"] = state.history_csv().encode()
    report, code = _certify(problem, Candidate(u, psi, etas), tol, grid, args.format)
    files[_report_name(args.format)] = report
    return files, code, report


def _probe(args, problem, tol, grid):
    u = _load_control(args.control, problem, grid)
    up = _load_control(args.control_prime, problem, grid)
    for r in args.rho:
        if not 0.0 < r < 1.0:
            raise ConfigError("--rho values must lie in (0, 1)")
    rows = differentiability_probe(problem, u, up, args.rho, grid)
    return {"probe.csv": probe_to_csv(rows).encode()}, EXIT_OK, None


COMMANDS = {"simulate": _simulate, "adjoint": _adjoint, "check": _check, "solve": _solve, "probe": _probe}


def run_command(argv, stdout=None, stderr=None):
    """Run one subcommand and return its exit code."""
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        args = build_parser().parse_args(argv)
        problem, tol, grid = _load_config(args)
        out = _out_dir(args)
        files, code, report = COMMANDS[args.command](args, problem, tol, grid)
    except (ConfigError, ParseError) as exc:
        print(f"pmpkit: error: {exc}", file=stderr)
        return EXIT_CONFIG
    except PMPKitError as exc:
        print(f"pmpkit: {type(exc).__name__}: {exc}", file=stderr)
        return EXIT_SOLVER
    write_outputs(out, files)
    if report is not None:
        stdout.write(report.decode("utf-8"))
    return code


def main(argv=None):
    raise SystemExit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
