"""The check pipeline behind the command line: brackets, completeness probes,
period lattice, action-angle chart, connection checks and the global
verdict, assembled into one JSON report."""
from __future__ import annotations

import logging
import time
import warnings
from importlib import metadata

import numpy as np

from . import affine, bundleclass, fibergeom, flows, integrability
from .exprdsl import JetDomainError, compose, evaluate, parse
from .specfile import STAGES, SystemSpec
from .symplectic import VectorField, hamiltonian_field, lie_bracket

log = logging.getLogger(__name__)

__all__ = ["REPORT_SCHEMA", "run_pipeline", "exit_code", "frame_functions", "lattice_stage", "tool_version"]

STATUSES = ["passed", "failed", "inconclusive", "skipped", "error"]

_stage = {
    "type": "object",
    "required": ["status", "wall_clock_s"],
    "properties": {
        "status": {"enum": STATUSES},
        "wall_clock_s": {"type": "number", "minimum": 0},
        "reason": {"type": "string"},
        "tol": {"type": "number"},
    },
}


def _with(extra: dict, required=()) -> dict:
    s = {"type": "object", "required": ["status", "wall_clock_s", *required],
         "properties": {**_stage["properties"], **extra}}
    return s


_num = {"type": "number"}
_vec = {"type": "array", "items": _num}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "integrability check report",
    "type": "object",
    "required": ["tool", "version", "input_hash", "seed", "samples", "system", "tolerances", "stages", "exit_code", "declared"],
    "properties": {
        "tool": {"const": "integrable"},
        "version": {"type": "string"},
        "input_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "seed": {"type": "integer"},
        "samples": {"type": "integer", "minimum": 1},
        "system": {
            "type": "object",
            "required": ["name", "dim", "coords", "functions", "mode"],
            "properties": {
                "name": {"type": "string"},
                "dim": {"type": "integer", "minimum": 2},
                "coords": {"type": "array", "items": {"type": "string"}},
                "functions": {"type": "object", "additionalProperties": {"type": "string"}},
                "mode": {"enum": ["complete", "partial", "noncommutative"]},
            },
        },
        "tolerances": {"type": "object", "additionalProperties": _num},
        "declared": {"type": "array", "items": {"type": "string"}},
        "exit_code": {"enum": [0, 2, 3]},
        "stages": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "brackets": _with({
                    "verdict": {"type": "string"},
                    "max_residual": _num,
                    "closure_residual": {"type": ["number", "null"]},
                    "worst_pair": {"type": ["array", "null"], "items": {"type": "integer"}},
                    "jacobian_ranks": {"type": "array", "items": {"type": "integer"}},
                    "s_ranks": {"type": "array", "items": {"type": "integer"}},
                    "casimirs": {"type": ["object", "null"]},
                }),
                "completeness": _with({
                    "heuristic": {"const": True},
                    "horizon": _num,
                    "bound": _num,
                    "probes": {"type": "array", "items": {
                        "type": "object",
                        "required": ["field", "point", "status"],
                        "properties": {
                            "field": {"type": "string"},
                            "point": _vec,
                            "status": {"enum": ["no-blowup-within-horizon", "blowup-detected"]},
                            "t_star": {"type": ["number", "null"]},
                        },
                    }},
                }),
                "lattice": _with({
                    "m": {"type": "integer"},
                    "h": {"type": "integer"},
                    "basis": {"type": "array", "items": _vec},
                    "residuals": _vec,
                    "fiber": {"type": "string"},
                    "base": _vec,
                    "search_radius": _num,
                    "grid_step": _num,
                    "note": {"type": "string"},
                }),
                "action_angle": _with({
                    "actions": _vec,
                    "function_values": _vec,
                    "darboux_residual": _num,
                    "loop_nodes": {"type": "integer"},
                    "angle_normalization": {"type": "string"},
                }),
                "connection": _with({
                    "samples": {"type": "integer"},
                    "curvature": _num,
                    "torsion_vs_bracket": _num,
                    "torsion": _num,
                    "geodesic": _num,
                    "omega_vs_frame": _num,
                }),
                "global": _with({
                    "verdict": {"type": "object"},
                    "topology": {"type": "object"},
                }),
            },
        },
    },
}


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.0.0"


def frame_functions(spec: SystemSpec):
    """Functions whose Hamiltonian fields span the fibers, or None."""
    if spec.resolved_mode == "noncommutative":
        if not spec.casimirs:
            return None
        return [compose(C, spec.function_list) for C in spec.casimirs.values()]
    return spec.function_list


def _fields(funcs):
    return [hamiltonian_field(f) for f in funcs]


def _status(ok: bool) -> str:
    return "passed" if ok else "failed"


def _brackets(spec: SystemSpec, samples, rng) -> dict:
    mode = spec.resolved_mode
    tol = spec.tolerances
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if mode == "noncommutative":
            rep = integrability.check_closure(spec.function_list, samples, tol=tol["closure"], closure=spec.closure, rng=rng)
        else:
            rep = integrability.check_involution(spec.function_list, samples, tol=tol["involution"])
    d = rep.to_dict()
    out.update({k: d[k] for k in ("verdict", "max_residual", "closure_residual", "worst_pair", "jacobian_ranks", "s_ranks", "tol")})
    out["casimirs"] = None
    if d["diagnostics"]:
        out["reason"] = "; ".join(d["diagnostics"])
    status = "passed" if rep.verdict.passed else ("inconclusive" if rep.verdict.kind == "inconclusive" else "failed")
    if not rep.verdict.passed and "reason" not in out:
        out["reason"] = rep.verdict.reason
    if mode == "noncommutative" and spec.closure is not None and spec.casimirs:
        values = integrability.function_values(spec.function_list, samples)
        cas = integrability.verify_casimirs(spec.closure, list(spec.casimirs.values()), values)
        out["casimirs"] = cas.to_dict(tol["casimir"])
        if not cas.passed(tol["casimir"]) and status == "passed":
            status = "failed"
            out["reason"] = "Casimir check failed"
    out["status"] = status
    return out


def _completeness(spec: SystemSpec, fields, samples) -> dict:
    horizon = spec.completeness.get("horizon", flows.DEFAULT_HORIZON)
    bound = spec.completeness.get("bound", flows.DEFAULT_BOUND)
    count = int(spec.completeness.get("points", 3))
    probes = []
    for i, X in enumerate(fields):
        for v in flows.completeness_probe(X, samples[:count], horizon, bound):
            probes.append({"field": f"X{i + 1}", "point": v.point.tolist(), "status": v.status,
                           "t_star": v.t_star})
    ok = all(p["status"] == "no-blowup-within-horizon" for p in probes)
    return {"status": _status(ok), "heuristic": True, "horizon": horizon, "bound": bound, "probes": probes}


def lattice_stage(spec: SystemSpec, fields, samples) -> tuple[dict, fibergeom.PeriodLattice | None, np.ndarray]:
    base = np.asarray(spec.lattice.get("base", samples[0]), dtype=float)
    action = flows.FlowAction(fields, base)
    lat = fibergeom.detect_lattice(action, spec.lattice.get("radius", 10.0), spec.lattice.get("step", 0.05),
                                   spec.tolerances["lattice"])
    d = lat.to_dict()
    ok = bool(np.all(lat.residuals < spec.tolerances["lattice"])) if lat.h else True
    out = {"status": _status(ok), "m": d["m"], "h": d["h"], "basis": d["basis"], "residuals": d["residuals"],
           "fiber": fibergeom.classify_fiber(lat).label, "base": base.tolist(), "search_radius": d["search_radius"],
           "grid_step": d["grid_step"], "note": d["note"], "tol": spec.tolerances["lattice"]}
    return out, lat, base


def _action_angle(spec: SystemSpec, lattice, base, rng) -> dict:
    F = spec.function_list
    section_exprs = spec.section

    def section(x):
        return np.array([evaluate(s, np.asarray(x, dtype=float), order=0)[0] for s in section_exprs])

    x0 = np.array([evaluate(f, base, order=0)[0] for f in F])
    hit = np.array([evaluate(f, section(x0), order=0)[0] for f in F])
    if np.max(np.abs(hit - x0)) > 1e-8:
        return {"status": "failed", "reason": "section does not land on the fiber of the base point"}
    chart = fibergeom.ActionAngleChart(F, section, lattice)
    action, B, actions, A, loops = chart.fiber_data(x0)
    fields = _fields(F)
    pts = [base] + [flows.FlowAction(fields, base)(rng.uniform(-1.0, 1.0, len(F))) for _ in range(2)]
    res = fibergeom.darboux_residual(chart, pts)
    tol = spec.tolerances["darboux"]
    return {"status": _status(res < tol), "actions": actions.tolist(), "function_values": x0.tolist(),
            "darboux_residual": res, "tol": tol, "loop_nodes": chart.nodes,
            "angle_normalization": "compact angles in [-pi, pi), period 2 pi; noncompact angles in flow-time units"}


def _connection(spec: SystemSpec, funcs, samples) -> dict:
    fields = _fields(funcs)
    frame = affine.ConnectionFrame(fields)
    coords = spec.coords
    Z = VectorField.combination([parse(coords[0], coords)], [fields[0]])
    Y = VectorField.combination([parse(coords[-1], coords)], [fields[-1]])
    pts = samples[: min(10, len(samples))]
    curv = tors = gap = omega = 0.0
    for z in pts:
        curv = max(curv, float(np.max(np.abs(affine.curvature(frame, fields[0], fields[-1], Z, z)))))
        for i in range(frame.m):
            for j in range(i + 1, frame.m):
                T = affine.nabla(frame, fields[i], fields[j], z) - affine.nabla(frame, fields[j], fields[i], z) \
                    - lie_bracket(fields[i], fields[j], z)
                br = lie_bracket(fields[i], fields[j], z)
                gap = max(gap, float(np.max(np.abs(T + br))))
                tors = max(tors, float(np.max(np.abs(T))))
        w = affine.omega_connection(spec.function_list, fields[0], Y, z, frame=funcs)
        omega = max(omega, float(np.max(np.abs(w - affine.nabla(frame, fields[0], Y, z)))))
    geo = max(affine.geodesic_residual(frame, i, pts[0], 1.0) for i in range(frame.m))
    tol = spec.tolerances["connection"]
    ok = curv < tol and gap < 1e-8 and geo < 1e-7 and omega < 1e-7
    return {"status": _status(ok), "samples": int(len(pts)), "curvature": curv, "torsion_vs_bracket": gap,
            "torsion": tors, "geodesic": geo, "omega_vs_frame": omega, "tol": tol}


def _global(spec: SystemSpec, stages: dict, lattice) -> dict:
    mode = spec.resolved_mode
    if lattice is None:
        return {"status": "inconclusive", "reason": "no period lattice available"}
    br = stages.get("brackets", {})
    bracket_ok = True if br.get("status") == "passed" else (None if br.get("status") in (None, "skipped", "inconclusive") else False)
    comp = stages.get("completeness", {}).get("status")
    complete_ok = True if comp == "passed" else (False if comp == "failed" else None)
    cas = br.get("casimirs")
    cas_ok = None if cas is None else bool(cas["passed"])
    verdict = bundleclass.decide((lattice.m - lattice.h, lattice.h), spec.topology, mode, involution=bracket_ok,
                                 closure=bracket_ok, complete_flows=complete_ok, casimirs=cas_ok)
    out = {"status": "passed" if verdict.trivial else "inconclusive", "verdict": verdict.to_dict(),
           "topology": spec.topology.to_dict()}
    if not verdict.trivial:
        out["reason"] = "unmet: " + ", ".join(verdict.unmet)
    return out


def exit_code(stages: dict) -> int:
    statuses = [s["status"] for s in stages.values()]
    if any(s in ("failed", "error") for s in statuses):
        return 2
    if "inconclusive" in statuses:
        return 3
    return 0


def run_pipeline(spec: SystemSpec, only: tuple | None = None) -> dict:
    """Run the enabled stages in dependency order and return the report dict."""
    rng = np.random.default_rng(spec.seed)
    enabled = {s for s in STAGES if spec.stages.get(s, True) and (only is None or s in only)}
    samples = integrability.sample_box(spec.box, spec.samples, rng)
    stages: dict = {}
    funcs = frame_functions(spec)
    fields = _fields(funcs) if funcs else None
    lattice = None
    base = None

    def timed(name, fn, *args):
        t0 = time.perf_counter()
        try:
            out = fn(*args)
        except (JetDomainError, np.linalg.LinAlgError, flows.IntegrationError, ValueError, ArithmeticError) as exc:
            out = {"status": "error", "reason": f"{type(exc).__name__}: {exc}"}
        out["wall_clock_s"] = time.perf_counter() - t0
        stages[name] = out
        return out

    def skip(name, reason):
        stages[name] = {"status": "skipped", "reason": reason, "wall_clock_s": 0.0}

    if "brackets" in enabled:
        timed("brackets", _brackets, spec, samples, rng)
    bracket_failed = stages.get("brackets", {}).get("status") in ("failed", "error")
    no_frame = "noncommutative system without declared Casimirs" if fields is None else None

    if "completeness" in enabled:
        if no_frame:
            skip("completeness", no_frame)
        else:
            timed("completeness", _completeness, spec, fields, samples)

    if "lattice" in enabled:
        if no_frame:
            skip("lattice", no_frame)
        elif bracket_failed:
            skip("lattice", "fields do not commute: bracket check failed")
        else:
            holder = {}

            def run_lattice():
                out, holder["lat"], holder["base"] = lattice_stage(spec, fields, samples)
                return out

            timed("lattice", run_lattice)
            lattice, base = holder.get("lat"), holder.get("base")

    if "action_angle" in enabled:
        if spec.resolved_mode != "complete":
            skip("action_angle", "full action-angle chart constructed only for k = n")
        elif spec.section is None:
            skip("action_angle", "no [action_angle] section map declared")
        elif lattice is None:
            skip("action_angle", "no period lattice available")
        else:
            timed("action_angle", _action_angle, spec, lattice, base, rng)

    if "connection" in enabled:
        if no_frame:
            skip("connection", no_frame)
        elif bracket_failed:
            skip("connection", "fibers not isotropic: bracket check failed")
        else:
            timed("connection", _connection, spec, funcs, samples)

    if "global" in enabled:
        timed("global", _global, spec, stages, lattice)

    declared = ["completeness is a heuristic (finite horizon)"]
    if spec.topology.provenance == "user-declared":
        declared += [f"topology: {k} = {getattr(spec.topology, k)}" for k in ("simply_connected", "H2_zero")]
    return {
        "tool": "integrable",
        "version": tool_version(),
        "input_hash": spec.source_hash,
        "seed": spec.seed,
        "samples": spec.samples,
        "system": {"name": spec.name, "dim": spec.dim, "coords": list(spec.coords),
                   "functions": {k: str(v) for k, v in spec.functions.items()}, "mode": spec.resolved_mode},
        "tolerances": dict(spec.tolerances),
        "declared": declared,
        "stages": stages,
        "exit_code": exit_code(stages),
    }
