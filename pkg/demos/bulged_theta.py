"""A small bump in the junction gives a positive theta.

Adding one pixel to the top wall of the strip's junction enlarges the
domain, so the resonant curve drops below zero like -theta/L. theta is
read off two ways: from the L-dependence of the eigenvalue, and from a
boundary integral on the cut faces. Both routes should agree.
"""

import numpy as np

from starguide.experiments import waveguide_s_matrix
from starguide.geometry import JunctionSpec, WaveguideSpec
from starguide.qgraph import VertexCondition, s_matrix
from starguide.resonance import analyze, scan_spectrum

ppw = 32
bitmap = np.zeros((ppw + 1, ppw), dtype=bool)
bitmap[:ppw] = True
bitmap[ppw, ppw // 2] = True
spec = WaveguideSpec(JunctionSpec("CustomMask", bitmap=bitmap, pixels_per_width=ppw,
                                  faces=(("left", 0), ("right", 0))), branch_angles=(np.pi, 0.0))

#%% mesoscopic analysis (about 10 s)
scan = scan_spectrum(spec, [4, 5, 6, 7, 8], h=1 / 64, n_eigs=3)
rep = analyze(scan)
print(rep.verdict, "beta =", np.round(rep.beta, 5))
print("theta per L (eigenvalue):", np.round(rep.theta.theta_eig_L, 7))
print("theta per L (boundary):  ", np.round(rep.theta.theta_bdry_L, 7))
print(f"extrapolated: {rep.theta_eig:.4e} vs {rep.theta_bdry:.4e}")

#%% graph scattering against the waveguide
vc = VertexCondition.resonant(rep.beta, rep.theta_eig)
for k in (0.5, 1.0):
    S_wg, _ = waveguide_s_matrix(spec, 1 / 8, k, n_width=ppw)
    S_g = s_matrix(vc, k)
    print(f"k={k}: waveguide |t|^2={abs(S_wg[1, 0])**2:.5f}  graph |t|^2={abs(S_g[1, 0])**2:.5f}")
