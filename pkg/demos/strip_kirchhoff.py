"""Straight strip: the simplest junction.

The mesoscopic region of a straight strip is a rectangle, so its lowest
eigenvalue (after removing the transverse threshold) is exactly zero for
every arm length. The eigenfunction is flat along the strip, which gives
equal trace amplitudes on the two cut faces and a Kirchhoff vertex.
"""

import numpy as np

from starguide.geometry import JunctionSpec, WaveguideSpec
from starguide.qgraph import VertexCondition, s_matrix
from starguide.resonance import analyze, scan_spectrum

#%% scan the mesoscopic spectrum
spec = WaveguideSpec(JunctionSpec("StraightStrip"))
scan = scan_spectrum(spec, [4, 5, 6, 8], h=1 / 16, n_eigs=3)
for L, row in zip(scan.L_values, scan.eigencurves):
    print(f"L={L:4.1f}  " + "  ".join(f"{v: .3e}" for v in row))

# lowest curve sits at zero, the next one decays like 1/L^2

#%% classify and extract the vertex
rep = analyze(scan)
print(rep.verdict, "beta =", np.round(rep.beta, 6), "theta =", rep.theta_eig, rep.theta_bdry)

#%% the limit graph is a free line
vc = VertexCondition.resonant(rep.beta, max(rep.theta_eig, 0.0))
for k in (0.5, 1.0, 2.0):
    S = s_matrix(vc, k)
    print(f"k={k}: |r|^2={abs(S[0, 0])**2:.2e}  |t|^2={abs(S[1, 0])**2:.6f}")
