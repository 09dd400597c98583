"""The flat connection defined by a frame, and how torsion sees brackets.

Any frame X_1..X_m declares its own members parallel.  The resulting
connection is always flat; its torsion is minus the Lie bracket, so it is
torsion-free exactly when the frame commutes.

Run with ``python3 demos/frame_connection.py``.
"""
import numpy as np

from integrable.affine import ConnectionFrame, curvature, nabla, parallel_transport, torsion
from integrable.symplectic import VectorField

XY = ("x", "y")
twisted = ConnectionFrame([VectorField.parse(["1", "0"], XY), VectorField.parse(["0", "exp(x)"], XY)])
sheared = ConnectionFrame([VectorField.parse(["1", "2*x"], XY), VectorField.parse(["0", "1"], XY)])

z = np.array([0.3, -0.2])
for name, frame in (("twisted", twisted), ("sheared", sheared)):
    print(f"{name}: torsion(X1, X2) = {torsion(frame, 0, 1, z)}")

# d/dy is not parallel for the twisted frame: its coefficient e^-x changes along d/dx.
dx, dy = VectorField.parse(["1", "0"], XY), VectorField.parse(["0", "1"], XY)
print("nabla_{d/dx} d/dy =", nabla(twisted, dx, dy, z))

Z = VectorField.parse(["x*y", "1 + x^2"], XY)
print("curvature R(d/dx, d/dy) Z =", curvature(twisted, dx, dy, Z, z))

# Flatness: transport around a closed rectangle brings a vector back.
loop = [[0, 0], [0.8, 0], [0.8, 0.5], [0, 0.5], [0, 0]]
res = parallel_transport(twisted, loop, [1.0, 1.0])
print("after the loop:", res.integrated, " (RK4 vs exact transport:", res.discrepancy, ")")
