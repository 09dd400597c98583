"""SystemSpec files: a sectioned key-value format read with configparser.

    [system]
    name = oscillator
    coords = p, q
    seed = 0
    samples = 100

    [functions]
    H = "(p^2 + q^2)/2"

    [box]
    p = -2, 2
    q = -2, 2

Optional sections: ``closure`` (``A,B = "expr"`` entries of s), ``casimirs``,
``tolerances``, ``topology``, ``lattice``, ``action_angle``, ``completeness``,
``pipeline``.  Errors carry the file name and line.
"""
from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bundleclass import TopologyDecl
from .exprdsl import ExprError, Expression, parse
from .integrability import CoinducedStructure

__all__ = ["SpecError", "SystemSpec", "load_spec", "parse_spec", "DEFAULT_TOLERANCES", "STAGES"]

DEFAULT_TOLERANCES = {
    "involution": 1e-12,
    "closure": 1e-8,
    "casimir": 1e-12,
    "lattice": 1e-8,
    "darboux": 1e-4,
    "connection": 1e-6,
}
STAGES = ("brackets", "completeness", "lattice", "action_angle", "connection", "global")
MODES = ("auto", "complete", "partial", "noncommutative")


class SpecError(ValueError):
    """Input error in a spec file, with location."""

    def __init__(self, message: str, path: str = "<spec>", line: int | None = None):
        self.path = path
        self.line = line
        self.message = message
        where = f"{path}:{line}" if line else path
        super().__init__(f"{where}: {message}")


@dataclass
class SystemSpec:
    name: str
    coords: tuple
    functions: dict  # name -> Expression
    box: list
    samples: int = 100
    seed: int = 0
    mode: str = "auto"
    closure: CoinducedStructure | None = None
    casimirs: dict = field(default_factory=dict)  # name -> Expression over function names
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    topology: TopologyDecl = field(default_factory=TopologyDecl)
    lattice: dict = field(default_factory=dict)
    section: list | None = None  # Expressions over function names, one per coordinate
    completeness: dict = field(default_factory=dict)
    stages: dict = field(default_factory=lambda: {s: True for s in STAGES})
    source_hash: str = ""
    path: str = "<spec>"

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def n(self) -> int:
        return self.dim // 2

    @property
    def k(self) -> int:
        return len(self.functions)

    @property
    def function_list(self) -> list:
        return list(self.functions.values())

    @property
    def function_names(self) -> list:
        return list(self.functions.keys())

    @property
    def resolved_mode(self) -> str:
        if self.mode != "auto":
            return self.mode
        if self.k < self.n:
            return "partial"
        if self.k == self.n:
            return "complete"
        return "noncommutative"


def _strip(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        return value[1:-1]
    return value


class _Locator:
    """Line numbers of ``[section]`` headers and their keys."""

    _HEADER = re.compile(r"^\s*\[([^\]]+)\]")

    def __init__(self, text: str):
        self.sections: dict[str, int] = {}
        self.keys: dict[tuple, int] = {}
        current = None
        for lineno, line in enumerate(text.splitlines(), 1):
            m = self._HEADER.match(line)
            if m:
                current = m.group(1).strip()
                self.sections.setdefault(current, lineno)
            elif current is not None and "=" in line and not line.lstrip().startswith(("#", ";")):
                key = line.split("=", 1)[0].strip()
                self.keys.setdefault((current, key), lineno)

    def line(self, section: str, key: str | None = None) -> int | None:
        if key is not None and (section, key) in self.keys:
            return self.keys[(section, key)]
        return self.sections.get(section)


def _floats(text: str, count: int | None, err) -> list:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise err(f"expected comma-separated numbers, got {text!r}")
    if count is not None and len(values) != count:
        raise err(f"expected {count} numbers, got {len(values)}")
    if not all(np.isfinite(values)):
        raise err("numbers must be finite")
    return values


def _bool(text: str, err) -> bool | None:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    if t in ("unknown", "none", ""):
        return None
    raise err(f"expected true, false or unknown, got {text!r}")


def parse_spec(text: str, path: str = "<spec>") -> SystemSpec:
    loc = _Locator(text)
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        message = str(exc).splitlines()[0]
        raise SpecError(message, path, line) from exc

    def err_at(section, key=None):
        return lambda msg: SpecError(msg, path, loc.line(section, key))

    def expr(section, key, coords) -> Expression:
        try:
            return parse(_strip(cp[section][key]), coords)
        except ExprError as exc:
            raise SpecError(f"{key}: {exc}", path, loc.line(section, key)) from exc

    for required in ("system", "functions", "box"):
        if not cp.has_section(required):
            raise SpecError(f"missing [{required}] section", path)
    system = cp["system"]
    if "coords" not in system:
        raise SpecError("missing coords", path, loc.line("system"))
    coords = tuple(c.strip() for c in system["coords"].split(",") if c.strip())
    if len(coords) < 2 or len(coords) % 2:
        raise SpecError(f"dimension must be even and at least 2, got {len(coords)}", path, loc.line("system", "coords"))
    if "dim" in system and int(system["dim"]) != len(coords):
        raise SpecError(f"dim = {system['dim']} but {len(coords)} coordinates given", path, loc.line("system", "dim"))
    try:
        samples = int(system.get("samples", "100"))
        seed = int(system.get("seed", "0"))
    except ValueError as exc:
        raise SpecError(str(exc), path, loc.line("system")) from exc
    mode = system.get("mode", "auto").strip()
    if mode not in MODES:
        raise SpecError(f"mode must be one of {MODES}", path, loc.line("system", "mode"))

    functions = {key: expr("functions", key, coords) for key in cp["functions"]}
    k = len(functions)
    if not 1 <= k < len(coords):
        raise SpecError(f"need 1 <= k < dim functions, got k={k}", path, loc.line("functions"))

    box = []
    for c in coords:
        if c not in cp["box"]:
            raise SpecError(f"no interval for coordinate {c}", path, loc.line("box"))
        lo, hi = _floats(cp["box"][c], 2, err_at("box", c))
        if not hi > lo:
            raise SpecError(f"degenerate interval for {c}", path, loc.line("box", c))
        box.append((lo, hi))

    names = list(functions)
    closure = None
    if cp.has_section("closure"):
        entries = {}
        for key in cp["closure"]:
            pair = [s.strip() for s in key.split(",")]
            if len(pair) != 2 or not all(p in names for p in pair):
                raise SpecError(f"closure key must name two functions, got {key!r}", path, loc.line("closure", key))
            if pair[0] == pair[1]:
                raise SpecError("closure entry on the diagonal", path, loc.line("closure", key))
            entries[tuple(pair)] = expr("closure", key, names)
        closure = CoinducedStructure.from_entries(len(coords) // 2, names, entries)
    casimirs = {}
    if cp.has_section("casimirs"):
        casimirs = {key: expr("casimirs", key, names) for key in cp["casimirs"]}

    tolerances = dict(DEFAULT_TOLERANCES)
    if cp.has_section("tolerances"):
        for key, value in cp["tolerances"].items():
            if key not in tolerances:
                raise SpecError(f"unknown tolerance {key!r}", path, loc.line("tolerances", key))
            tolerances[key] = _floats(value, 1, err_at("tolerances", key))[0]

    topology = TopologyDecl()
    if cp.has_section("topology"):
        t = cp["topology"]
        flags = {key: _bool(t[key], err_at("topology", key)) for key in ("simply_connected", "H2_zero", "pi2_zero") if key in t}
        try:
            topology = TopologyDecl(description=t.get("description", ""), provenance=t.get("provenance", "user-declared").strip(), **flags)
        except ValueError as exc:
            raise SpecError(str(exc), path, loc.line("topology")) from exc

    lattice = {}
    if cp.has_section("lattice"):
        L = cp["lattice"]
        if "base" in L:
            lattice["base"] = _floats(L["base"], len(coords), err_at("lattice", "base"))
        for key in ("radius", "step"):
            if key in L:
                lattice[key] = _floats(L[key], 1, err_at("lattice", key))[0]

    section = None
    if cp.has_section("action_angle"):
        A = cp["action_angle"]
        missing = [c for c in coords if c not in A]
        if missing:
            raise SpecError(f"section map lacks coordinates {missing}", path, loc.line("action_angle"))
        section = [expr("action_angle", c, names) for c in coords]

    completeness = {}
    if cp.has_section("completeness"):
        C = cp["completeness"]
        for key in ("horizon", "bound", "points"):
            if key in C:
                completeness[key] = _floats(C[key], 1, err_at("completeness", key))[0]

    stages = {s: True for s in STAGES}
    if cp.has_section("pipeline"):
        for key, value in cp["pipeline"].items():
            if key not in stages:
                raise SpecError(f"unknown stage {key!r}", path, loc.line("pipeline", key))
            stages[key] = bool(_bool(value, err_at("pipeline", key)))

    return SystemSpec(
        name=system.get("name", Path(path).stem),
        coords=coords,
        functions=functions,
        box=box,
        samples=samples,
        seed=seed,
        mode=mode,
        closure=closure,
        casimirs=casimirs,
        tolerances=tolerances,
        topology=topology,
        lattice=lattice,
        section=section,
        completeness=completeness,
        stages=stages,
        source_hash=hashlib.sha256(text.encode("utf-8")).hexdigest(),
        path=path,
    )


def load_spec(path) -> SystemSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecError(f"cannot read spec: {exc.strerror}", str(path)) from exc
    except UnicodeDecodeError as exc:
        raise SpecError("spec is not valid UTF-8", str(path)) from exc
    return parse_spec(text, str(path))
