import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from starguide.eigensolve import (SolverConfig, ShiftedSolver, count_below, dense_oracle, lowest_eigenpairs,
                                  solve_shifted)
from starguide.errors import ConfigError, NoConvergence, TooLarge
from starguide.geometry import build_mask, build_mesoscopic
from starguide.operators import SparseSymOp, assemble_hamiltonian, assemble_laplacian, transverse_modes


def interval_laplacian(n):
    h = 1.0 / n
    A = sp.diags([-np.ones(n - 2), 2 * np.ones(n - 1), -np.ones(n - 2)], [-1, 0, 1]).tocsr() / h
    return SparseSymOp(A, np.full(n - 1, h))


def unit_square(n=64):
    return assemble_laplacian(build_mask(np.ones((n, n), dtype=bool), 1 / n))


def test_interval_closed_form():
    n = 200
    p = lowest_eigenpairs(interval_laplacian(n), 3)
    m = np.arange(1, 4)
    exact = 4 * n**2 * np.sin(m * np.pi / (2 * n)) ** 2
    assert np.allclose(p.values, exact, atol=1e-9, rtol=0)


@pytest.fixture(scope="module")
def square_pairs():
    op = unit_square()
    return op, lowest_eigenpairs(op, 3), dense_oracle(op, 3)


def test_square_matches_oracle(square_pairs):
    _, p, q = square_pairs
    assert np.max(np.abs(p.values - q.values)) <= 1e-8
    assert np.all(p.residuals <= 1e-10)


def test_degenerate_subspace(square_pairs):
    op, p, q = square_pairs
    assert (1, 2) in p.blocks
    sq = np.sqrt(op.mass)[:, None]
    U, _ = np.linalg.qr(sq * p.vectors[:, 1:3])
    V, _ = np.linalg.qr(sq * q.vectors[:, 1:3])
    angles = sla.subspace_angles(U, V)
    assert np.max(angles) < 1e-6


def test_orthonormal_and_sorted(lbend):
    r = build_mesoscopic(lbend, 4, 1 / 16)
    op = assemble_hamiltonian(r, transverse_modes(1.0, 1 / 16))
    p = lowest_eigenpairs(op, 4)
    assert np.all(np.diff(p.values) >= 0)
    assert np.max(np.abs(p.gram() - np.eye(4))) <= 1e-10


def test_deterministic(lbend):
    r = build_mesoscopic(lbend, 4, 1 / 16)
    op = assemble_hamiltonian(r, transverse_modes(1.0, 1 / 16))
    a = lowest_eigenpairs(op, 3, SolverConfig(seed=3))
    b = lowest_eigenpairs(op, 3, SolverConfig(seed=3))
    assert np.array_equal(a.values, b.values)


def test_no_convergence():
    with pytest.raises(NoConvergence):
        lowest_eigenpairs(unit_square(32), 3, SolverConfig(max_iter=1, tol=1e-14))


def test_k_too_large():
    with pytest.raises(ConfigError):
        lowest_eigenpairs(interval_laplacian(16), 8)


def test_dense_diag():
    op = SparseSymOp(sp.diags([1.0, 2.0]).tocsr(), np.ones(2))
    assert np.allclose(dense_oracle(op, 2).values, [1, 2])


def test_dense_identity():
    op = SparseSymOp(sp.identity(50, format="csr"), np.ones(50))
    p = dense_oracle(op, 5)
    assert np.allclose(p.values, 1)
    assert np.allclose(p.gram(), np.eye(5), atol=1e-12)


def test_dense_too_large():
    op = SparseSymOp(sp.identity(4001, format="csr"), np.ones(4001))
    with pytest.raises(TooLarge):
        dense_oracle(op, 1)


def test_count_below():
    op = unit_square(32)
    vals = dense_oracle(op, 6).values
    assert count_below(op, 0.5 * (vals[2] + vals[3])) == 3
    assert count_below(op, vals[0] - 1) == 0


def test_solve_below_spectrum(strip):
    r = build_mesoscopic(strip, 4, 1 / 16)
    op = assemble_laplacian(r)
    v1 = lowest_eigenpairs(op, 1)
    u = solve_shifted(op, -1.0, v1.vectors[:, 0])
    assert op.norm(u - v1.vectors[:, 0] / (v1.values[0] + 1)) <= 1e-9


def test_solve_complex_residual(lbend):
    r = build_mesoscopic(lbend, 4, 1 / 16)
    op = assemble_hamiltonian(r, transverse_modes(1.0, 1 / 16))
    rhs = np.random.default_rng(0).standard_normal(op.dim)
    solver = ShiftedSolver(op, 1 + 0.5j)
    u = solver(rhs)
    assert solver.residual(u, rhs) <= 1e-9 * op.norm(rhs)


def test_resolvent_symmetry(lbend):
    r = build_mesoscopic(lbend, 4, 1 / 16)
    op = assemble_hamiltonian(r, transverse_modes(1.0, 1 / 16))
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal(op.dim), rng.standard_normal(op.dim)
    z = 0.3 + 0.7j
    lhs = op.inner(a, solve_shifted(op, z, b))
    rhs = op.inner(solve_shifted(op, np.conj(z), a), b)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


def test_real_shift_in_spectrum_rejected():
    with pytest.raises(ConfigError):
        ShiftedSolver(unit_square(16), 30.0)


def test_monotone_in_L(strip):
    basis = transverse_modes(1.0, 1 / 16)
    prev = None
    for L in (4, 6, 8):
        v = lowest_eigenpairs(assemble_hamiltonian(build_mesoscopic(strip, L, 1 / 16), basis), 3).values
        if prev is not None:
            assert np.all(v <= prev + 1e-10)
        prev = v
