import numpy as np
import pytest
import scipy.sparse as sp

from starguide.eigensolve import dense_oracle, lowest_eigenpairs
from starguide.errors import CapOutsideBranch, SpacingMismatch, TooManyModes
from starguide.geometry import build_mask, build_mesoscopic, build_waveguide
from starguide.operators import (assemble_cap, assemble_hamiltonian, assemble_laplacian, load_operator,
                                 save_operator, transverse_modes)


def test_first_transverse_mode():
    b = transverse_modes(1.0, 1 / 200, 1)
    assert abs(b.mu_disc[0] - np.pi**2) / np.pi**2 <= 1e-3


def test_scaling_relation():
    assert transverse_modes(0.5, 0.5 / 16, 1).mu[0] == 4 * transverse_modes(1.0, 1 / 16, 1).mu[0]
    a, b = transverse_modes(1.0, 1 / 16), transverse_modes(0.25, 0.25 / 16)
    assert np.allclose(b.mu_disc, a.mu_disc / 0.25**2, rtol=1e-12)
    assert np.allclose(b.y, 0.25 * a.y)


def test_mode_orthonormality():
    b = transverse_modes(1.0, 1 / 64, 4)
    G = b.h * b.chi @ b.chi.T
    assert abs(G[0, 1]) <= 1e-12
    assert np.allclose(G, np.eye(4), atol=1e-12)
    assert np.all(np.diff(b.mu_disc) > 0)
    assert np.all(b.chi[:, 0] > 0)


def test_too_many_modes():
    with pytest.raises(TooManyModes):
        transverse_modes(1.0, 1 / 8, 8)


def test_strip_zero_mode(strip):
    r = build_mesoscopic(strip, 4, 1 / 32)
    op = assemble_hamiltonian(r, transverse_modes(1.0, 1 / 32))
    p = lowest_eigenpairs(op, 3)
    assert abs(p.values[0]) <= 1e-10
    assert abs(p.values[1] - (np.pi / 9) ** 2) / (np.pi / 9) ** 2 <= 0.02


def test_unit_square_dirichlet():
    op = assemble_laplacian(build_mask(np.ones((64, 64), dtype=bool), 1 / 64))
    p = lowest_eigenpairs(op, 3)
    assert abs(p.values[0] / (2 * np.pi**2) - 1) <= 5e-3
    assert abs(p.values[1] / (5 * np.pi**2) - 1) <= 5e-3


def test_spacing_mismatch(strip):
    r = build_mesoscopic(strip, 4, 1 / 16)
    with pytest.raises(SpacingMismatch):
        assemble_hamiltonian(r, transverse_modes(1.0, 1 / 32))


def test_symmetry_and_pattern(lbend):
    r = build_mesoscopic(lbend, 4, 1 / 16)
    op = assemble_hamiltonian(r, transverse_modes(1.0, 1 / 16))
    A = op.A
    assert abs(A - A.T).max() == 0
    # off-diagonal pattern is lattice adjacency
    rows, cols = A.nonzero()
    off = rows != cols
    d = np.abs(r.node_ij[rows[off]] - r.node_ij[cols[off]]).sum(axis=1)
    assert np.all(d == 1)


def _edge_energy(r, v):
    """Sum over grid edges of w (v_a - v_b)^2, w = (included cells touching the edge)/2."""
    cells = np.pad(r.cells, 1)
    nj, ni = r.node_index.shape
    full = np.zeros((nj, ni))
    full[r.node_index >= 0] = v[r.node_index[r.node_index >= 0]]
    # horizontal edge (i,j)-(i+1,j) touches cells (i,j-1) and (i,j); padded offsets +1
    wh = (cells[:-1, 1:-1].astype(int) + cells[1:, 1:-1]) / 2
    wv = (cells[1:-1, :-1].astype(int) + cells[1:-1, 1:]) / 2
    eh = np.sum(wh * (full[:, 1:] - full[:, :-1]) ** 2)
    ev = np.sum(wv * (full[1:, :] - full[:-1, :]) ** 2)
    return eh + ev


def test_quadratic_form(lbend):
    r = build_mesoscopic(lbend, 4, 1 / 16)
    basis = transverse_modes(1.0, 1 / 16)
    op = assemble_hamiltonian(r, basis)
    v = np.random.default_rng(1).standard_normal(r.n)
    expected = _edge_energy(r, v) - basis.mu_disc[0] * np.sum(op.mass * v**2)
    assert abs(v @ (op.A @ v) - expected) <= 1e-12 * max(1.0, abs(expected))


def test_mesoscopic_lower_bound(lbend):
    r = build_mesoscopic(lbend, 4, 1 / 16)
    basis = transverse_modes(1.0, 1 / 16)
    op = assemble_hamiltonian(r, basis)
    lam = lowest_eigenpairs(op, 1).values[0]
    assert lam >= -basis.mu_disc[0]
    assert lowest_eigenpairs(assemble_laplacian(r), 1).values[0] > 0


def test_grid_convergence_square():
    errs = []
    for n in (16, 32):
        op = assemble_laplacian(build_mask(np.ones((n, n), dtype=bool), 1 / n))
        errs.append(abs(dense_oracle(op, 1).values[0] - 2 * np.pi**2))
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_cap_zero_strength(strip):
    r = build_waveguide(strip.with_eps(1.0, 10.0), 1 / 8)
    op = assemble_hamiltonian(r, transverse_modes(1.0, 1 / 8))
    cap = assemble_cap(r, 5.0, 0.0)
    assert op.with_cap(cap).cap is None


def test_cap_outside(strip):
    r = build_waveguide(strip.with_eps(1.0, 10.0), 1 / 8)
    with pytest.raises(CapOutsideBranch):
        assemble_cap(r, 12.0, 1.0)


def test_cap_profile(strip):
    r = build_waveguide(strip.with_eps(1.0, 10.0), 1 / 8)
    cap = assemble_cap(r, 5.0, 3.0)
    reach = np.max([r.branch_coordinates(j)[0] for j in range(2)], axis=0)
    assert np.all(cap[reach <= 5.0 + 1e-12] == 0)
    assert np.all(cap[reach > 5.5] != 0)
    assert np.all(cap.real == 0) and np.all(cap.imag <= 0)
    assert cap.imag.min() >= -3.0


def test_cap_reflection_1d():
    # 1D transfer-matrix oracle: u'' + (k^2 - V)u = 0 with V = -i s ((x-a)/len)^2
    k, start, length, s = 1.0, 0.0, 3 * 2 * np.pi, 2.0
    n = 20000
    x = np.linspace(start, start + length, n + 1)
    dx = x[1] - x[0]
    V = -1j * s * ((x - start) / length) ** 2
    # integrate from the far Dirichlet end back to the CAP entrance
    u = np.zeros(n + 1, dtype=complex)
    u[-1], u[-2] = 0.0, dx
    for i in range(n - 1, 0, -1):
        u[i - 1] = 2 * u[i] - u[i + 1] - dx**2 * (k**2 - V[i]) * u[i]
    du = (u[1] - u[0]) / dx
    # u = e^{ikx} + r e^{-ikx} at x = 0 up to O(dx)
    amp_in = 0.5 * (u[0] + du / (1j * k))
    amp_out = 0.5 * (u[0] - du / (1j * k))
    assert abs(amp_out / amp_in) < 1e-3


def test_operator_roundtrip(tmp_path, lbend):
    r = build_mesoscopic(lbend, 4, 1 / 16)
    op = assemble_hamiltonian(r, transverse_modes(1.0, 1 / 16))
    save_operator(tmp_path / "op.npz", op)
    op2 = load_operator(tmp_path / "op.npz")
    assert (op.A != op2.A).nnz == 0
    assert np.array_equal(op.mass, op2.mass) and op.shift == op2.shift


def test_symmetric_matrix_similar(strip):
    r = build_mesoscopic(strip, 2, 1 / 8)
    op = assemble_hamiltonian(r, transverse_modes(1.0, 1 / 8))
    S = op.symmetric_matrix()
    assert abs(S - S.T).max() < 1e-12
    assert isinstance(S, sp.csr_matrix)
