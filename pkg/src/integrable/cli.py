"""Command line: ``check``, ``flow``, ``lattice`` and ``report --schema``.

Exit codes: 0 all enabled checks passed, 1 input error, 2 a check failed,
3 inconclusive.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import flows
from .pipeline import REPORT_SCHEMA, frame_functions, lattice_stage, run_pipeline
from .specfile import SpecError, load_spec
from .symplectic import hamiltonian_field

log = logging.getLogger("integrable")

EXIT_OK, EXIT_INPUT, EXIT_FAILED, EXIT_INCONCLUSIVE = 0, 1, 2, 3
TOLERANCE_FLAGS = ("involution", "closure", "casimir", "lattice", "darboux", "connection")


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the spec's random seed")
    common.add_argument("--samples", type=int, help="override the spec's sample count")
    for name in TOLERANCE_FLAGS:
        common.add_argument(f"--tol-{name}", type=float, dest=f"tol_{name}", metavar="TOL")
    common.add_argument("--out", type=Path, metavar="DIR", help="write output files here instead of stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="integrable", description="Numerical checks for integrable Hamiltonian systems.")
    sub = p.add_subparsers(dest="command", required=True)
    c = sub.add_parser("check", parents=[common], help="run the full pipeline on a spec")
    c.add_argument("spec", type=Path)
    f = sub.add_parser("flow", parents=[common], help="write a trajectory CSV")
    f.add_argument("spec", type=Path)
    f.add_argument("--field", required=True, help="function (or Casimir) whose Hamiltonian field to follow")
    f.add_argument("--t", type=float, required=True, dest="time", help="flow time")
    f.add_argument("--start", help="comma-separated start point (default: lattice base or first sample)")
    f.add_argument("--tol", type=float, default=1e-10, dest="flow_tol")
    la = sub.add_parser("lattice", parents=[common], help="detect the period lattice")
    la.add_argument("spec", type=Path)
    r = sub.add_parser("report", help="report format")
    r.add_argument("--schema", action="store_true", help="print the JSON schema of the report")
    return p


def _apply_overrides(spec, args):
    if args.seed is not None:
        spec.seed = args.seed
    if args.samples is not None:
        if args.samples < 1:
            raise SpecError("--samples must be positive", "<command line>")
        spec.samples = args.samples
    for name in TOLERANCE_FLAGS:
        value = getattr(args, f"tol_{name}")
        if value is not None:
            spec.tolerances[name] = value
    return spec


def _emit(text: str, out: Path | None, filename: str) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / filename).write_text(text, encoding="utf-8")
    log.info("wrote %s", out / filename)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _cmd_check(args) -> int:
    import jsonschema

    spec = _apply_overrides(load_spec(args.spec), args)
    report = run_pipeline(spec)
    jsonschema.validate(report, REPORT_SCHEMA)
    _emit(_dump(report), args.out, "report.json")
    for name, stage in report["stages"].items():
        log.info("%-13s %s %s", name, stage["status"], stage.get("reason", ""))
    return report["exit_code"]


def _cmd_flow(args) -> int:
    spec = _apply_overrides(load_spec(args.spec), args)
    if args.field in spec.functions:
        F = spec.functions[args.field]
    else:
        funcs = frame_functions(spec)
        names = list(spec.casimirs)
        if funcs is None or args.field not in names:
            raise SpecError(f"unknown field {args.field!r}; choose one of {spec.function_names + names}", str(args.spec))
        F = funcs[names.index(args.field)]
    if args.start:
        try:
            start = np.array([float(v) for v in args.start.split(",")])
        except ValueError:
            raise SpecError(f"bad --start {args.start!r}", "<command line>")
        if start.shape != (spec.dim,):
            raise SpecError(f"--start needs {spec.dim} numbers", "<command line>")
    elif "base" in spec.lattice:
        start = np.asarray(spec.lattice["base"], dtype=float)
    else:
        from .integrability import sample_box

        start = sample_box(spec.box, 1, spec.seed)[0]
    traj = flows.trajectory(hamiltonian_field(F), start, args.time, args.flow_tol)
    if args.out is None:
        flows.write_trajectory_csv(sys.stdout, traj)
    else:
        args.out.mkdir(parents=True, exist_ok=True)
        flows.write_trajectory_csv(args.out / f"flow_{args.field}.csv", traj)
    return EXIT_OK


def _cmd_lattice(args) -> int:
    from .integrability import sample_box
    from .symplectic import hamiltonian_field as hf

    spec = _apply_overrides(load_spec(args.spec), args)
    funcs = frame_functions(spec)
    if funcs is None:
        raise SpecError("noncommutative system needs [casimirs] for the fiber frame", str(args.spec))
    samples = sample_box(spec.box, max(1, min(spec.samples, 3)), np.random.default_rng(spec.seed))
    t0 = time.perf_counter()
    out, _, _ = lattice_stage(spec, [hf(f) for f in funcs], samples)
    out["wall_clock_s"] = time.perf_counter() - t0
    _emit(_dump(out), args.out, "lattice.json")
    return EXIT_OK if out["status"] == "passed" else EXIT_FAILED


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "report":
        if not args.schema:
            parser.error("report: nothing to do (use --schema)")
        sys.stdout.write(_dump(REPORT_SCHEMA))
        return EXIT_OK
    try:
        return {"check": _cmd_check, "flow": _cmd_flow, "lattice": _cmd_lattice}[args.command](args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
