"""Lowest eigenpairs and shifted solves for ``H = M^{-1} A``.

The generalized problem ``A v = lam M v`` is treated in the symmetric form
``S = M^{-1/2} A M^{-1/2}``. Eigenpairs come from a shift-invert block Lanczos
iteration with full reorthogonalization; the inverse is applied through a
sparse LU factorization of ``A - sigma M``. A dense ``eigh`` oracle is
available for small problems.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConfigError, NoConvergence, ShiftHitsEigenvalue, TooLarge
from .operators import SparseSymOp

DEGENERACY_RTOL = 1e-8
DENSE_LIMIT = 4000
SHIFT_PASSES = 6
PASS_STEPS = 12


@dataclass(frozen=True)
class SolverConfig:
    """Eigensolver settings.

    Parameters
    ----------
    tol : float
        Bound on every residual ``||H v - lam v||`` with ``||v|| = 1``.
    max_iter : int
        Maximum number of block Lanczos steps summed over restarts.
    shift : float, optional
        Shift below the wanted eigenvalues; default is a Gershgorin bound.
    block : int, optional
        Block size, at least ``k``; default ``k``.
    seed : int
        Seed of the random starting block.
    max_basis : int, optional
        Krylov basis size that triggers a restart.
    """

    tol: float = 1e-10
    max_iter: int = 2000
    shift: float | None = None
    block: int | None = None
    seed: int = 0
    max_basis: int | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be positive")


@dataclass(frozen=True, eq=False)
class EigenPairs:
    """Ascending eigenvalues with M-orthonormal grid vectors (columns)."""

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    mass: np.ndarray
    blocks: tuple = field(default=())
    iterations: int = 0

    def __len__(self):
        return len(self.values)

    def gram(self) -> np.ndarray:
        V = self.vectors
        return V.conj().T @ (self.mass[:, None] * V)


def _factor(P: sp.spmatrix):
    return splu(P.tocsc(), permc_spec="COLAMD")


def _factor_shift(op: SparseSymOp, sigma: float, retries: int = 3):
    s = sigma
    for _ in range(retries + 1):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", sp.linalg.MatrixRankWarning)
                lu = _factor(op.pencil(s))
            if np.all(np.isfinite(lu.U.diagonal())) and np.min(np.abs(lu.U.diagonal())) > 0:
                return lu, s
        except (RuntimeError, sp.linalg.MatrixRankWarning):
            pass
        s = s - 1e-6 * (1.0 + abs(s))
    raise ShiftHitsEigenvalue(f"factorization of A - sigma M failed near sigma={sigma}")


def count_below(op: SparseSymOp, tau: float) -> int | None:
    """Number of eigenvalues of ``H`` below ``tau`` by Sylvester inertia.

    Uses an LU factorization without off-diagonal pivoting; returns None when
    the factorization pivoted and the inertia cannot be read off.
    """
    P = op.pencil(tau).tocsc()
    try:
        lu = splu(P, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))
    except RuntimeError:
        return None
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return None
    d = np.real(lu.U.diagonal())
    if np.any(d == 0):
        return None
    return int(np.sum(d < 0))


def gershgorin_lower(op: SparseSymOp) -> float:
    """Lower spectral bound: the better of the Gershgorin bounds of ``S`` and ``M^{-1} A``."""
    S = op.symmetric_matrix().tocsr()
    diag = np.real(S.diagonal())
    absrow = np.asarray(abs(S).sum(axis=1)).ravel() - np.abs(diag)
    bound_s = float(np.min(diag - absrow))
    A = op.A.tocsr()
    diag = np.real(A.diagonal())
    absrow = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
    bound_a = float(np.min((diag - absrow) / op.mass))
    return max(bound_s, bound_a)


def _blocks(values: np.ndarray) -> tuple:
    groups, cur = [], [0]
    for i in range(1, len(values)):
        if abs(values[i] - values[i - 1]) <= DEGENERACY_RTOL * max(1.0, abs(values[i])):
            cur.append(i)
        else:
            groups.append(tuple(cur))
            cur = [i]
    if len(values):
        groups.append(tuple(cur))
    return tuple(groups)


def _orth_against(W, Qs, rng):
    """Orthonormalize the block ``W`` against the list of blocks ``Qs``."""
    scale = float(np.max(np.linalg.norm(W, axis=0))) if W.size else 0.0
    for _ in range(2):
        for Q in Qs:
            W = W - Q @ (Q.conj().T @ W)
    Qn, R = np.linalg.qr(W)
    bad = np.abs(np.diag(R)) <= 1e-8 * scale
    if np.any(bad):
        # invariant subspace reached: continue with fresh random directions
        X = Qn.copy()
        X[:, bad] = rng.standard_normal((W.shape[0], int(bad.sum()))).astype(W.dtype)
        for _ in range(2):
            for Q in Qs:
                X = X - Q @ (Q.conj().T @ X)
        Qn, _ = np.linalg.qr(X)
        R = Qn.conj().T @ W
    return Qn, R


def lowest_eigenpairs(op: SparseSymOp, k: int, cfg: SolverConfig | None = None) -> EigenPairs:
    """The ``k`` algebraically smallest eigenpairs of ``H``.

    Parameters
    ----------
    op : SparseSymOp
        Hermitian operator without absorbing potential.
    k : int
        Number of pairs.
    cfg : SolverConfig

    Returns
    -------
    EigenPairs
        Values ascending; vectors orthonormal in the mass inner product.

    Raises
    ------
    NoConvergence
        When ``cfg.max_iter`` block steps do not reach ``cfg.tol``.
    ShiftHitsEigenvalue
        When ``A - sigma M`` cannot be factorized even after perturbation.
    """
    cfg = cfg or SolverConfig()
    if op.cap is not None:
        raise ConfigError("eigensolver needs a Hermitian operator without CAP")
    n = op.dim
    if not 1 <= k < max(n / 4, 2):
        raise ConfigError(f"k={k} must satisfy 1 <= k < dim/4 (dim={n})")
    b = cfg.block if cfg.block is not None else k
    if b < k:
        raise ConfigError("block must be >= k")
    b = min(b, n)
    S = op.symmetric_matrix()
    max_basis = cfg.max_basis or min(n, max(160, 40 * b))
    max_basis = max(max_basis, 3 * b)
    rng = np.random.default_rng(cfg.seed)
    dtype = np.result_type(op.A.dtype, float)
    start = rng.standard_normal((n, b)).astype(dtype)
    steps = 0

    sigma = cfg.shift
    if sigma is None:
        # short passes from a Gershgorin shift, moving the shift up to just
        # below lambda_1 (checked by inertia) as the Ritz values settle
        g = gershgorin_lower(op)
        sigma = g - 1e-3 * max(1.0, abs(g))
        for _ in range(SHIFT_PASSES):
            budget = min(PASS_STEPS, cfg.max_iter - steps)
            lam, Y, res, used, ok = _krylov(op, S, k, b, sigma, start, cfg.tol, budget, max_basis, rng)
            steps += used
            if ok:
                return _finish(op, lam, Y, res, steps)
            if steps >= cfg.max_iter:
                break
            start = Y if b == k else np.hstack([Y, rng.standard_normal((n, b - k)).astype(dtype)])
            new = _safe_shift(op, lam, res)
            if new is not None and new > sigma:
                sigma = new
    lam, Y, res, used, ok = _krylov(op, S, k, b, sigma, start, cfg.tol, cfg.max_iter - steps, max_basis, rng)
    steps += used
    if not ok:
        raise NoConvergence(
            f"no convergence after {steps} block steps; max residual {res.max():.3e} > tol {cfg.tol:.1e}"
        )
    return _finish(op, lam, Y, res, steps)


def _safe_shift(op, lam, res):
    """A shift below ``lam[0]`` with no eigenvalue beneath it, or None."""
    spread = lam[-1] - lam[0] if len(lam) > 1 else 0.0
    delta = max(0.25 * spread, 10 * float(np.max(res)), 1e-3 * max(1.0, abs(lam[0])))
    for _ in range(12):
        sigma = lam[0] - delta
        cnt = count_below(op, sigma)
        if cnt == 0:
            return sigma
        delta *= 2
    return None


def _krylov(op, S, k, b, sigma, start, tol, max_steps, max_basis, rng):
    """Shift-invert block Lanczos with explicit restarts.

    Returns Ritz values, Ritz vectors (symmetric coordinates), residuals,
    block steps used and a convergence flag.
    """
    n = op.dim
    lu, sigma = _factor_shift(op, sigma)
    sq = np.sqrt(op.mass)
    dtype = start.dtype

    def apply_inv(Y):
        X = lu.solve(np.ascontiguousarray(sq[:, None] * Y))
        return sq[:, None] * X

    steps = 0
    while True:
        Q0, _ = np.linalg.qr(start)
        Qs, SQs = [Q0], [S @ Q0]
        G = Q0.conj().T @ SQs[0]
        Bs = []
        while True:
            W = apply_inv(Qs[-1])
            steps += 1
            Aj = Qs[-1].conj().T @ W
            W = W - Qs[-1] @ (0.5 * (Aj + Aj.conj().T))
            if len(Qs) > 1:
                W = W - Qs[-2] @ Bs[-1].conj().T
            # Rayleigh-Ritz with S itself on the Krylov basis
            Qmat = np.hstack(Qs)
            SQ = np.hstack(SQs)
            theta, U = np.linalg.eigh(0.5 * (G + G.conj().T))
            Y = Qmat @ U[:, :k]
            lam = theta[:k]
            res = np.linalg.norm(SQ @ U[:, :k] - Y * lam[None, :], axis=0)
            if len(Qs) * b >= k and np.all(res <= tol):
                return lam, Y, res, steps, True
            if len(Qs) * b >= k and np.all(res <= 1e3 * tol):
                # one inverse-iteration block removes the stiff part of the error
                lam2, Y2, res2 = _refine(S, Y, apply_inv, k)
                steps += 1
                if np.all(res2 <= tol):
                    return lam2, Y2, res2, steps, True
            if steps >= max_steps:
                return lam, Y, res, steps, False
            if (len(Qs) + 1) * b > max_basis or (len(Qs) + 1) * b > n:
                break
            Qn, Bn = _orth_against(W, Qs, rng)
            Bs.append(Bn)
            SQn = S @ Qn
            cross = Qmat.conj().T @ SQn
            G = np.block([[G, cross], [cross.conj().T, Qn.conj().T @ SQn]])
            Qs.append(Qn)
            SQs.append(SQn)
        # explicit restart from the current Ritz vectors
        fill = rng.standard_normal((n, b - k)).astype(dtype) * 1e-3
        start = np.hstack([Y, fill]) if b > k else Y


def _refine(S, Y, apply_inv, k):
    Z, _ = np.linalg.qr(np.hstack([Y, apply_inv(Y)]))
    SZ = S @ Z
    G = Z.conj().T @ SZ
    theta, U = np.linalg.eigh(0.5 * (G + G.conj().T))
    Y2 = Z @ U[:, :k]
    res = np.linalg.norm(SZ @ U[:, :k] - Y2 * theta[None, :k], axis=0)
    return theta[:k], Y2, res


def _finish(op, lam, Y, res, steps):
    order = np.argsort(lam)
    lam, Y, res = lam[order], Y[:, order], res[order]
    V = Y / np.sqrt(op.mass)[:, None]
    if not np.iscomplexobj(op.A.data):
        V = _real_phase(V, op.mass)
    return EigenPairs(np.real(lam), V, res, op.mass, _blocks(np.real(lam)), steps)


def _real_phase(V, mass):
    """Rotate each vector to be real with a positive largest component."""
    out = np.empty(V.shape, dtype=float)
    for i in range(V.shape[1]):
        v = V[:, i]
        j = np.argmax(np.abs(v))
        v = v * (np.abs(v[j]) / v[j]) if v[j] != 0 else v
        out[:, i] = np.real(v)
    return out


def dense_oracle(op: SparseSymOp, k: int) -> EigenPairs:
    """Full dense eigendecomposition truncated to the ``k`` lowest pairs."""
    if op.dim > DENSE_LIMIT:
        raise TooLarge(f"dense oracle limited to dim <= {DENSE_LIMIT}, got {op.dim}")
    if op.cap is not None:
        raise ConfigError("dense oracle needs a Hermitian operator without CAP")
    S = op.symmetric_matrix().toarray()
    w, Y = sla.eigh(S, subset_by_index=[0, min(k, op.dim) - 1], driver="evr")
    res = np.linalg.norm(S @ Y - Y * w[None, :], axis=0)
    V = Y / np.sqrt(op.mass)[:, None]
    if not np.iscomplexobj(S):
        V = _real_phase(V, op.mass)
    return EigenPairs(w, V, res, op.mass, _blocks(w), 0)


class ShiftedSolver:
    """Reusable solver for ``(H - z) u = f`` with a fixed ``z``.

    Precondition: ``Im z != 0``, or ``op`` carries an absorbing potential, or
    ``z`` is real and below the spectrum (checked by inertia).
    """

    def __init__(self, op: SparseSymOp, z: complex, tol: float = 1e-9):
        z = complex(z)
        if z.imag == 0 and op.cap is None:
            cnt = count_below(op, z.real)
            if cnt is None or cnt > 0:
                raise ConfigError("real z must lie strictly below the spectrum")
            z = z.real
        self.op, self.z, self.tol = op, z, tol
        self.P = op.pencil(z)
        try:
            self.lu = _factor(self.P)
        except RuntimeError as exc:
            raise ShiftHitsEigenvalue(str(exc)) from exc

    def residual(self, u, rhs) -> float:
        r = (self.P @ u) / self.op.mass - rhs
        return self.op.norm(r)

    def __call__(self, rhs: np.ndarray) -> np.ndarray:
        op = self.op
        f = op.mass * rhs
        u = self.lu.solve(f.astype(np.result_type(f, self.P.dtype)))
        target = self.tol * max(op.norm(rhs), np.finfo(float).tiny)
        for _ in range(3):
            r = f - self.P @ u
            if np.sqrt(np.sum(np.abs(r) ** 2 / op.mass)) <= target:
                return u
            u = u + self.lu.solve(r)
        if self.residual(u, rhs) <= target:
            return u
        raise NoConvergence("shifted solve did not reach its residual bound")


def solve_shifted(op: SparseSymOp, z: complex, rhs: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """``u = (H - z)^{-1} rhs`` with residual ``<= tol * ||rhs||``."""
    return ShiftedSolver(op, z, tol)(rhs)
