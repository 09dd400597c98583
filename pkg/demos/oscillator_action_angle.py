"""Action-angle coordinates of the harmonic oscillator, built numerically.

Run with ``python3 demos/oscillator_action_angle.py``.
"""
import numpy as np

from integrable import parse
from integrable.fibergeom import ActionAngleChart, action_integral, cycle_loop, darboux_residual, detect_lattice
from integrable.flows import FlowAction
from integrable.symplectic import hamiltonian_field

H = parse("(p1^2 + q1^2)/2", ["p1", "q1"])
XH = hamiltonian_field(H)

# The flow of X_H closes up after one period; the period lattice finds it.
action = FlowAction([XH], base=[0.0, 1.0])
lattice = detect_lattice(action, radius=10, step=0.05)
print("period lattice basis:", lattice.basis.ravel(), "(2 pi =", 2 * np.pi, ")")

# The action is the area enclosed by the orbit divided by 2 pi.
for E in (0.5, 1.0, 2.5):
    loop = cycle_loop(action.with_base([0.0, np.sqrt(2 * E)]), lattice.basis[0], nodes=256)
    print(f"E = {E:4}  I = {action_integral(loop):.10f}")

# A chart (I, y) on a neighborhood of the fiber: the section picks the point
# with p = 0, q > 0 on each level set.
chart = ActionAngleChart([H], lambda x: np.array([0.0, np.sqrt(2 * x[0])]), lattice)
z = np.array([np.sin(0.5), np.cos(0.5)])  # half a time unit along the flow
print("(I, y) at", z, "=", chart.coordinates(z))
print("Darboux residual:", darboux_residual(chart, [z, [0.3, -1.1]], step=1e-3))
