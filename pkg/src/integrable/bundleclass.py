"""Global triviality of the fibration by the flow action, decided from the
structure group R^a x T^b and declared topology of the base.

The sufficient conditions encoded here: a contractible group (b = 0) always
admits a global section; otherwise the base must be simply connected with
vanishing second integral cohomology.  Failing hypotheses give an *unknown*
verdict, never a nontriviality claim.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

__all__ = [
    "MODES",
    "THEOREMS",
    "TopologyConsistencyError",
    "TopologyDecl",
    "GlobalVerdict",
    "split_product",
    "decide",
]

MODES = ("complete", "partial", "noncommutative")
THEOREMS = {
    "complete": "global_complete",
    "partial": "global_partial",
    "noncommutative": "global_noncommutative",
}
PROVENANCES = ("user-declared", "derived-trivially")

H_SIMPLY_CONNECTED = "base simply connected"
H_H2 = "H^2(B, Z) = 0"
H_INVOLUTION = "involution holds"
H_CLOSURE = "bracket closure holds"
H_COMPLETE = "flows complete"
H_CASIMIRS = "independent Casimirs on the neighborhood"


class TopologyConsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class TopologyDecl:
    """Declared invariants of the base; ``None`` means unknown."""

    simply_connected: bool | None = None
    H2_zero: bool | None = None
    pi2_zero: bool | None = None
    description: str = ""
    provenance: str = "user-declared"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")
        if self.provenance == "derived-trivially" and not (self.simply_connected and self.H2_zero):
            raise TopologyConsistencyError("a contractible box has both flags true")
        if self.simply_connected and self.pi2_zero is not None:
            # Hurewicz: for simply connected B, H_2 = pi_2, so H^2 vanishes with pi_2
            if self.H2_zero is None:
                object.__setattr__(self, "H2_zero", self.pi2_zero)
            elif self.H2_zero != self.pi2_zero:
                raise TopologyConsistencyError("simply connected base with H^2 = 0 and pi_2 = 0 declared differently")

    @classmethod
    def box(cls, description: str = "axis-aligned box") -> "TopologyDecl":
        return cls(True, True, True, description, "derived-trivially")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GlobalVerdict:
    theorem: str  # one of THEOREMS values or "none"
    trivial: bool | None  # None = unknown
    splitting: list = field(default_factory=list)
    unmet: list = field(default_factory=list)
    declared: list = field(default_factory=list)
    group: tuple = (0, 0)
    mode: str = "complete"

    @property
    def label(self) -> str:
        return "trivial" if self.trivial else "unknown"

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "bundle_trivial": "true" if self.trivial else "unknown",
            "splitting": list(self.splitting),
            "unmet_hypotheses": list(self.unmet),
            "declared_hypotheses": list(self.declared),
            "group": {"a": self.group[0], "b": self.group[1]},
            "mode": self.mode,
        }


def split_product(group) -> list[str]:
    """Factors ``[R^a, T^1, ..., T^1]`` of the structure group ``R^a x T^b``."""
    a, b = (int(v) for v in group)
    if a < 0 or b < 0:
        raise ValueError("group exponents must be non-negative")
    return ([f"R^{a}"] if a else []) + ["T^1"] * b


def decide(group, topo: TopologyDecl, mode: str, *, involution: bool | None = True,
           closure: bool | None = True, complete_flows: bool | None = True,
           casimirs: bool | None = True) -> GlobalVerdict:
    """Which global statement applies to the group ``(a, b)`` and whether the bundle is trivial.

    Upstream flags are ``True`` (check passed), ``False`` or ``None``
    (unknown); only ``True`` counts as satisfied.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    a, b = (int(v) for v in group)
    factors = split_product((a, b))
    upstream = [(H_COMPLETE, complete_flows)]
    if mode == "noncommutative":
        upstream = [(H_CLOSURE, closure), (H_CASIMIRS, casimirs)] + upstream
    else:
        upstream = [(H_INVOLUTION, involution)] + upstream
    missing = [name for name, flag in upstream if flag is not True]
    if missing:
        return GlobalVerdict("none", None, factors if b else [], missing, [], (a, b), mode)

    theorem = THEOREMS[mode]
    declared = [] if topo.provenance == "derived-trivially" else [H_SIMPLY_CONNECTED, H_H2]
    if b == 0:
        # contractible structure group: a global section always exists
        return GlobalVerdict(theorem, True, factors, [], [], (a, b), mode)
    unmet = []
    if topo.simply_connected is not True:
        unmet.append(H_SIMPLY_CONNECTED)
    if topo.H2_zero is not True:
        unmet.append(H_H2)
    if unmet:
        return GlobalVerdict(theorem, None, factors, unmet, declared, (a, b), mode)
    return GlobalVerdict(theorem, True, factors, [], declared, (a, b), mode)
