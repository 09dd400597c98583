"""Numerical toolkit for integrable Hamiltonian systems on R^{2n}.

Expressions with exact second-order jets, the canonical symplectic
structure, flows and flow actions, involution and bracket-closure checks,
period lattices and action-angle charts, connections of parallelizations,
and global-triviality verdicts.
"""
from .exprdsl import Expression, compose, evaluate, parse
from .symplectic import SymplecticChart, VectorField, hamiltonian_field, lie_bracket, poisson_bracket
from .flows import FlowAction, integrate, trajectory
from .integrability import CoinducedStructure, check_closure, check_involution, sample_box
from .fibergeom import ActionAngleChart, PeriodLattice, action_integral, classify_fiber, detect_lattice
from .affine import ConnectionFrame, curvature, nabla, torsion
from .bundleclass import TopologyDecl, decide, split_product

__all__ = [
    "Expression", "compose", "evaluate", "parse",
    "SymplecticChart", "VectorField", "hamiltonian_field", "lie_bracket", "poisson_bracket",
    "FlowAction", "integrate", "trajectory",
    "CoinducedStructure", "check_closure", "check_involution", "sample_box",
    "ActionAngleChart", "PeriodLattice", "action_integral", "classify_fiber", "detect_lattice",
    "ConnectionFrame", "curvature", "nabla", "torsion",
    "TopologyDecl", "decide", "split_product",
    "catalog_path",
]


def catalog_path(name: str):
    """Path of a bundled example spec, e.g. ``catalog_path("oscillator")``."""
    from importlib import resources

    return resources.files(__name__) / "catalog" / f"{name}.ini"
