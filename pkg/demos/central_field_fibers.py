"""A central force on R^3: four integrals that do not commute.

Energy and the three angular momenta close under the bracket
({L1, L2} = L3 and cyclic).  The fibers are 2-tori spanned by the flows of
the two Casimir combinations E = H and J = |L|^2.

Run with ``python3 demos/central_field_fibers.py``.
"""
import numpy as np

from integrable import catalog_path
from integrable.fibergeom import classify_fiber, detect_lattice
from integrable.flows import FlowAction
from integrable.integrability import check_closure, derived_fields, function_values, sample_box, verify_casimirs
from integrable.specfile import load_spec

spec = load_spec(catalog_path("central_field"))
F = spec.function_list
samples = sample_box(spec.box, 20, np.random.default_rng(spec.seed))

report = check_closure(F, samples, closure=spec.closure)
print("verdict:", report.verdict, " closure residual:", report.closure_residual)

C = list(spec.casimirs.values())
cas = verify_casimirs(spec.closure, C, function_values(F, samples))
print("Casimir residual:", cas.residual, " independent:", cas.independent)

# Flows of C o F span the fiber; their joint period lattice is 2-dimensional.
fields = derived_fields(spec.closure, C, F)
lattice = detect_lattice(FlowAction(fields, spec.lattice["base"]), radius=5, step=0.1)
print("fiber:", classify_fiber(lattice))
print("lattice basis:\n", lattice.basis)
