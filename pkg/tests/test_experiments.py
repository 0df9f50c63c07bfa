import math

import numpy as np
import pytest

from starguide.errors import MultiChannel, NotGapVerdict, NotResonantError, PacketOverlap
from starguide.experiments import (PacketParams, ell_for, initial_packet, mesoscopic_state, mode_weights,
                                   poincare_holds, projection_coefficient, run_decoupling,
                                   run_relaxation, run_resolvent_comparison, run_scattering_comparison,
                                   run_vertex_suppression, waveguide_s_matrix, waveguide_setup)
from starguide.qgraph import VertexCondition
from starguide.resonance import GAP, RESONANT, Classification

STRIP_RESONANT = Classification(0, RESONANT, {"mu0_prime": 0.0, "gamma_prime": math.inf}, {})
KIRCHHOFF_2 = VertexCondition.kirchhoff(2)


def test_ell_on_grid():
    for eps in (1 / 8, 1 / 12, 1 / 16):
        ell, L = ell_for(eps)
        assert abs(L * 16 - round(L * 16)) <= 1e-12
        assert abs(L - eps**-0.5) <= 1 / 32
        assert ell == pytest.approx(L * eps)


def test_poincare_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(3, 40))
        x = np.sort(rng.uniform(0, 1, n))
        f = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        ok, lhs, rhs = poincare_holds(x, f, float(rng.uniform(x[0], x[-1])))
        assert ok, (lhs, rhs)


def test_poincare_constant_is_sharp():
    x = np.linspace(0, 2, 11)
    ok, lhs, rhs = poincare_holds(x, np.full(11, 3.0), 0.7)
    assert ok and lhs == pytest.approx(rhs)


def test_packet_is_first_mode(strip):
    st = waveguide_setup(strip, 1 / 8, 2.0)
    u = initial_packet(st, PacketParams(), 1.2)
    w = mode_weights(st, u)
    assert abs(st.op.norm(u) - 1) <= 1e-12
    assert w[1:].sum() <= 1e-20 and abs(w[0] - 1) <= 1e-6


@pytest.mark.parametrize("k", [0.5, 1.0, 2.0])
def test_strip_transmits(strip, k):
    S, back = waveguide_s_matrix(strip, 1 / 8, k)
    assert abs(abs(S[1, 0]) ** 2 - 1) <= 1e-3
    assert abs(S[0, 0]) ** 2 <= 1e-3


def test_scattering_report(strip):
    rep = run_scattering_comparison(strip, KIRCHHOFF_2, [1 / 8], [1.0])
    assert rep.checks["flux_conserved"]
    for r in rep.rows:
        assert abs(r["abs2_waveguide"] - r["abs2_graph"]) <= 1e-3


def test_scattering_multichannel(strip):
    with pytest.raises(MultiChannel):
        waveguide_s_matrix(strip, 1 / 8, 6.0)


@pytest.fixture(scope="module")
def strip_resolvent():
    from starguide.geometry import JunctionSpec, WaveguideSpec
    return run_resolvent_comparison(WaveguideSpec(JunctionSpec("StraightStrip")), KIRCHHOFF_2,
                                    [1 / 8, 1 / 16, 1 / 32], z_list=(1j,))


def test_resolvent_extracted_decreases(strip_resolvent):
    rep = strip_resolvent
    good = [r["abs_F"] for r in rep.rows if r["vertex"] == "extracted"]
    assert all(b < a for a, b in zip(good, good[1:]))
    assert rep.checks["extracted_decreasing_z1j"]


def test_resolvent_wrong_vertex_bounded(strip_resolvent):
    bad = [r["abs_F"] for r in strip_resolvent.rows if r["vertex"] == "wrong"]
    assert min(bad) >= 0.5 * bad[0]
    assert strip_resolvent.checks["wrong_not_converging_z1j"]


def test_resolvent_adjoint(strip_resolvent):
    assert max(strip_resolvent.summary["adjoint_defect"]) <= 1e-8


def test_resolvent_overlap(strip):
    with pytest.raises(PacketOverlap):
        run_resolvent_comparison(strip, KIRCHHOFF_2, [1 / 8], centre=0.5, half_width=0.25)


def test_strip_decoupling_constant(strip):
    rep = run_decoupling(strip, [1 / 8, 1 / 12], PacketParams(t_final=0.05))
    hm = [r["higher_modes"] for r in rep.rows]
    assert max(abs(v - hm[0]) for v in hm) <= 1e-8
    assert rep.checks["norm_conserved"]


def test_relaxation_projection_identities(strip):
    st = waveguide_setup(strip, 1 / 8, 2.0)
    res, beta, idx = mesoscopic_state(strip, st, 0)
    assert np.allclose(np.abs(beta), 2**-0.5, atol=1e-6)
    assert projection_coefficient(st.op, res, 2.5 * res) == pytest.approx(2.5)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(st.raster.n).astype(complex)
    v -= st.op.inner(res, v) / st.op.inner(res, res) * res
    assert abs(projection_coefficient(st.op, res, v)) <= 1e-12


def test_relaxation_report(strip):
    rep = run_relaxation(strip, STRIP_RESONANT, [1 / 8, 1 / 12], PacketParams(t_final=0.05, samples=5))
    assert rep.rows and all(np.isfinite(r["abs_c"]) for r in rep.rows)


def test_verdict_guards(strip):
    gap = Classification(0, GAP, {"mu0": 1.0, "gamma": 2.0}, {})
    with pytest.raises(NotResonantError):
        run_relaxation(strip, gap, [1 / 8])
    with pytest.raises(NotGapVerdict):
        run_vertex_suppression(strip, STRIP_RESONANT, [1 / 8])


def test_report_write(tmp_path, strip):
    rep = run_scattering_comparison(strip, KIRCHHOFF_2, [1 / 8], [1.0])
    paths = rep.write(tmp_path)
    assert (tmp_path / "scattering.json").exists() and (tmp_path / "scattering.csv").exists()
    assert len(paths) == 2
