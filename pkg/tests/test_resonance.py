import math

import numpy as np
import pytest

from starguide.eigensolve import EigenPairs, _blocks
from starguide.errors import DegenerateResonance, InconsistentEstimates, NotResonantError
from starguide.geometry import JunctionSpec, WaveguideSpec, cut_faces
from starguide.resonance import (GAP, RESONANT, UNDETERMINED, SpectrumScan, analyze, classify,
                                 count_bound_states, extract_beta, face_data, fit_convergence,
                                 gauss_green_residual, mesoscopic_problem, resonant_vector, scan_spectrum,
                                 solve_psi_j, estimate_theta)

L5 = np.array([4.0, 5.0, 6.0, 7.0, 8.0])


def synthetic(*curves, L=L5):
    spec = WaveguideSpec(JunctionSpec("StraightStrip"))
    Y = np.stack([np.asarray(c(L), float) for c in curves], axis=1)
    return SpectrumScan(spec, L, 1 / 16, Y, np.zeros_like(Y))


@pytest.fixture(scope="module")
def strip_scan():
    return scan_spectrum(WaveguideSpec(JunctionSpec("StraightStrip")), [4, 5, 6, 8], 1 / 16, 3)


@pytest.fixture(scope="module")
def lbend_scan():
    return scan_spectrum(WaveguideSpec(JunctionSpec("LBend")), L5, 1 / 16, 3)


def test_strip_curves(strip_scan):
    assert np.all(np.abs(strip_scan.curve(0)) <= 1e-10)
    L = strip_scan.L_values
    assert np.allclose(strip_scan.curve(1), (np.pi / (2 * L + 1)) ** 2, rtol=0.02)


def test_lbend_plateau(lbend_scan):
    lam = lbend_scan.curve(0)
    assert np.all(lam < 0)
    i6, i8 = 2, 4
    assert abs(lam[i8] - lam[i6]) <= 1e-3 * abs(lam[i8])


def test_scan_serialization(strip_scan):
    d = strip_scan.to_dict()
    back = SpectrumScan.from_dict(d)
    assert np.array_equal(back.eigencurves, strip_scan.eigencurves)
    lines = strip_scan.to_csv().splitlines()
    assert lines[0] == "L,index,eigenvalue,residual"
    assert len(lines) == 1 + 4 * 3
    assert np.allclose(strip_scan.physical(0.5), strip_scan.eigencurves * 4)


def test_bound_states_strip(strip_scan):
    assert count_bound_states(strip_scan).k == 0


def test_bound_states_lbend(lbend_scan):
    b = count_bound_states(lbend_scan)
    assert b.k == 1 and b.limits[0] < 0


def test_bound_states_synthetic():
    scan = synthetic(lambda L: -2 + np.exp(-L), lambda L: 1 / L, lambda L: 2 / L)
    assert count_bound_states(scan).k == 1


def test_classify_strip(strip_scan):
    c = classify(strip_scan, 0)
    assert c.verdict == RESONANT
    assert c.params["gamma"] == pytest.approx(2, abs=0.3)


def test_classify_lbend(lbend_scan):
    c = classify(lbend_scan, 1)
    assert c.verdict == GAP and c.vertex == "Dirichlet"
    assert c.params["gamma"] > 0 and c.params["mu0"] > 0


def test_classify_synthetic_resonant():
    scan = synthetic(lambda L: -3 / L, lambda L: 5 / L**2)
    c = classify(scan, 0)
    assert c.verdict == RESONANT
    p = c.params
    assert p["mu0_prime"] == pytest.approx(3, rel=1e-6)
    assert p["gamma_prime"] == pytest.approx(1, rel=1e-6)
    assert p["mu0"] == pytest.approx(5, rel=1e-6)
    assert p["gamma"] == pytest.approx(2, rel=1e-6)


def test_classify_synthetic_gap():
    scan = synthetic(lambda L: 4 / np.sqrt(L), lambda L: 9 / np.sqrt(L))
    c = classify(scan, 0)
    assert c.verdict == GAP
    assert c.params["mu0"] == pytest.approx(4, rel=1e-6)
    assert c.params["gamma"] == pytest.approx(0.5, rel=1e-6)


def test_classify_sign_change():
    scan = synthetic(lambda L: L - 6.5, lambda L: 5 / L**2)
    assert classify(scan, 0).verdict == UNDETERMINED


def test_classify_slow_resonance():
    scan = synthetic(lambda L: -3 / np.sqrt(L), lambda L: 5 / L**2)
    assert classify(scan, 0).verdict == UNDETERMINED


def test_classification_invariant_under_refinement(lbend_scan, strip_scan):
    fine = scan_spectrum(WaveguideSpec(JunctionSpec("LBend")), L5, 1 / 32, 3, keep_vectors=False)
    assert classify(fine, count_bound_states(fine).k).verdict == classify(lbend_scan, 1).verdict
    fine = scan_spectrum(WaveguideSpec(JunctionSpec("StraightStrip")), [4, 5, 6, 8], 1 / 32, 3, keep_vectors=False)
    assert classify(fine, 0).verdict == classify(strip_scan, 0).verdict


def test_strip_beta(strip_scan):
    prob = strip_scan.problem(0)
    v = resonant_vector(strip_scan.pairs[0], 0, prob.faces, prob.basis)
    br = extract_beta(v, prob.faces, prob.basis)
    assert np.allclose(br.beta, [2**-0.5, 2**-0.5], atol=1e-6)
    assert np.all(br.remainders <= 1e-8)
    assert np.sum(np.abs(br.beta) ** 2) == pytest.approx(1, abs=1e-12)


def test_synthetic_trace_beta(strip):
    prob = mesoscopic_problem(strip, 4, 1 / 16)
    u = face_data(prob.raster, np.array([0.6, 0.8]), prob.basis)
    br = extract_beta(u, prob.faces, prob.basis)
    assert np.allclose(br.raw, [0.6, 0.8], atol=1e-12)
    assert np.allclose(br.beta, [0.6, 0.8], atol=1e-12)


def test_degenerate_block(strip):
    prob = mesoscopic_problem(strip, 4, 1 / 16)
    faces = prob.faces
    V = np.stack([face_data(prob.raster, np.array(b), prob.basis) for b in ([1.0, 0.0], [0.0, 1.0])], axis=1)
    vals = np.zeros(2)
    pairs = EigenPairs(vals, V, np.zeros(2), prob.op.mass, _blocks(vals))
    with pytest.raises(DegenerateResonance):
        resonant_vector(pairs, 0, faces, prob.basis)


def test_psi_j_strip(strip):
    prob = mesoscopic_problem(strip, 4, 1 / 16)
    b = 2**-0.5
    pj = solve_psi_j(prob.raster, np.array([b, b]), prob.basis)
    _, y = prob.raster.branch_coordinates(0)
    expected = b * np.sqrt(2) * np.sin(np.pi * y)
    assert np.max(np.abs(pj.field - expected)) <= 1e-8
    assert not pj.regularized


def test_psi_j_zero(strip):
    prob = mesoscopic_problem(strip, 4, 1 / 16)
    pj = solve_psi_j(prob.raster, np.zeros(2), prob.basis)
    assert np.all(pj.field == 0)


def test_psi_j_linear(lbend):
    prob = mesoscopic_problem(lbend, 4, 1 / 16)
    a = solve_psi_j(prob.raster, np.array([1.0, 0.0]), prob.basis, prob.op).field
    b = solve_psi_j(prob.raster, np.array([0.0, 1.0]), prob.basis, prob.op).field
    c = solve_psi_j(prob.raster, np.array([0.3, -0.7]), prob.basis, prob.op).field
    assert np.max(np.abs(c - (0.3 * a - 0.7 * b))) <= 1e-10


@pytest.mark.parametrize("kind", ["StraightStrip", "LBend", "TJunction"])
def test_gauss_green(kind):
    prob = mesoscopic_problem(WaveguideSpec(JunctionSpec(kind)), 4, 1 / 16)
    rng = np.random.default_rng(7)
    for _ in range(3):
        f, g = rng.standard_normal((2, prob.raster.n))
        assert gauss_green_residual(prob.op, prob.raster, f, g) <= 1e-10


def test_theta_synthetic():
    L = np.arange(4.0, 17.0)
    lam = -0.7 / L + 2 / L**2
    est = estimate_theta(L, lam, 0.7 + 0.1 / L)
    assert est.theta_eig == pytest.approx(0.7, abs=1e-3)
    assert est.consistent


def test_theta_inconsistent_strict():
    L = np.arange(4.0, 9.0)
    with pytest.raises(InconsistentEstimates):
        estimate_theta(L, -0.7 / L, np.full(len(L), 0.3), strict=True)


def test_theta_floor():
    L = np.arange(4.0, 9.0)
    est = estimate_theta(L, -1e-9 / L, np.full(len(L), 1e-9))
    assert est.theta_eig == 0 and est.theta_bdry == 0


def test_kappa_synthetic():
    L = np.arange(4.0, 17.0)
    beta = 0.6 + L**-2.0
    fit = fit_convergence(L, beta, 0.7 + L**-2.0)
    assert fit.kappa_beta == pytest.approx(2, abs=0.1)


def test_kappa_not_resonant(lbend_scan):
    c = classify(lbend_scan, 1)
    with pytest.raises(NotResonantError):
        fit_convergence(L5, np.ones(5), np.ones(5), c)


def test_strip_analysis(strip_scan):
    rep = analyze(strip_scan)
    assert rep.verdict == RESONANT
    assert np.allclose(rep.beta, [2**-0.5, 2**-0.5], atol=1e-6)
    assert abs(rep.theta_eig) <= 1e-8 and abs(rep.theta_bdry) <= 1e-8
    assert rep.kappa.kappa_beta == math.inf
    d = rep.to_dict()
    assert d["verdict"] == RESONANT and d["kappa"]["kappa_beta"] == "inf"


def test_lbend_analysis(lbend_scan):
    rep = analyze(lbend_scan)
    assert rep.verdict == GAP and rep.bound.k == 1
    assert "beta" not in rep.to_dict()


def test_branch_relabeling():
    from conftest import bulged_strip

    def flipped(ppw, col):
        bm = np.zeros((ppw + 1, ppw), dtype=bool)
        bm[:ppw] = True
        bm[ppw, col] = True
        return WaveguideSpec(JunctionSpec("CustomMask", bitmap=bm, pixels_per_width=ppw,
                                          faces=(("right", 0), ("left", 0))), branch_angles=(0.0, np.pi))

    L = [4, 5, 6, 8]
    a = analyze(scan_spectrum(bulged_strip(16, 3), L, 1 / 32, 3))
    b = analyze(scan_spectrum(flipped(16, 3), L, 1 / 32, 3))
    assert a.verdict == b.verdict == RESONANT
    assert abs(a.beta[0] - a.beta[1]) > 5e-4
    assert np.allclose(a.beta, b.beta[::-1], atol=1e-8)
    assert a.theta_eig == pytest.approx(b.theta_eig, rel=1e-8)
    assert a.theta_bdry == pytest.approx(b.theta_bdry, rel=1e-8)


def test_nonnegative_theta_and_unit_beta():
    from conftest import bulged_strip

    rep = analyze(scan_spectrum(bulged_strip(16, 3), [4, 5, 6, 8], 1 / 32, 3))
    assert rep.theta_eig >= -1e-8 and rep.theta_bdry >= -1e-8
    for b in rep.beta_L:
        assert np.sum(np.abs(b) ** 2) == pytest.approx(1, abs=1e-12)
