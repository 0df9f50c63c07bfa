"""Mesoscopic spectra: bound states, gap/resonance classification, vertex parameters.

Everything here works in rescaled units (branch width 1). The mesoscopic
region is the junction plus arms of length ``L`` ending in Neumann cut faces;
its eigenvalues as functions of ``L`` decide whether the thin-waveguide limit
decouples the branches or couples them through a vertex condition with
parameters ``beta`` and ``theta``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from .eigensolve import EigenPairs, SolverConfig, lowest_eigenpairs
from .errors import (
    DegenerateResonance,
    FitFailed,
    InconsistentEstimates,
    InsufficientSamples,
    NotResonantError,
    SingularOperator,
)
from .fitting import ExpFit, exp_tail_fit, extrapolate_inverse, loglog_fit, r_squared, top_half
from .geometry import CutFace, RasterDomain, WaveguideSpec, build_mesoscopic, cut_faces
from .operators import SparseSymOp, TransverseBasis, assemble_hamiltonian, transverse_modes

DELTA_BOUND = 1e-3
THETA_FLOOR = 1e-6
ZERO_TOL = 1e-9
R2_MIN = 0.95
GAMMA_PRIME_TOL = 0.1
PLATEAU_RTOL = 0.1
SINGULAR_TOL = 1e-8
REGULARIZATION_SHIFT = 1e-6
DEGENERACY_TOL = 1e-6
INCONSISTENCY_RTOL = 0.1

GAP = "SpectralGap"
RESONANT = "ResonantSequence"
UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class MesoscopicProblem:
    """Raster, transverse basis and Hamiltonian of one mesoscopic region."""

    L: float
    raster: RasterDomain
    basis: TransverseBasis
    op: SparseSymOp

    @property
    def faces(self) -> list[CutFace]:
        return cut_faces(self.raster)


def mesoscopic_problem(spec: WaveguideSpec, L: float, h: float, m_max: int = 4) -> MesoscopicProblem:
    raster = build_mesoscopic(spec, L, h)
    basis = transverse_modes(1.0, h, m_max)
    return MesoscopicProblem(float(L), raster, basis, assemble_hamiltonian(raster, basis))


@dataclass(eq=False)
class SpectrumScan:
    """Eigenvalue curves ``lam_i(L)`` of the mesoscopic operator (rescaled units).

    ``eigencurves[a, i]`` is the ``i``-th smallest eigenvalue at
    ``L_values[a]``. The physical eigenvalue at thickness ``eps`` is
    ``eigencurves / eps**2``.
    """

    spec: WaveguideSpec
    L_values: np.ndarray
    h: float
    eigencurves: np.ndarray
    residuals: np.ndarray
    unresolved: list = field(default_factory=list)
    pairs: list | None = None

    @property
    def n_eigs(self) -> int:
        return self.eigencurves.shape[1]

    def curve(self, i: int) -> np.ndarray:
        return self.eigencurves[:, i]

    def physical(self, eps: float) -> np.ndarray:
        return self.eigencurves / eps**2

    def problem(self, a: int) -> MesoscopicProblem:
        return mesoscopic_problem(self.spec, self.L_values[a], self.h)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "L_values": self.L_values.tolist(),
            "h": self.h,
            "eigencurves": self.eigencurves.tolist(),
            "residuals": self.residuals.tolist(),
            "unresolved": [list(map(int, u)) for u in self.unresolved],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpectrumScan":
        return cls(
            WaveguideSpec.from_dict(d["spec"]),
            np.asarray(d["L_values"], float),
            float(d["h"]),
            np.asarray(d["eigencurves"], float),
            np.asarray(d["residuals"], float),
            [tuple(u) for u in d.get("unresolved", [])],
        )

    def to_csv(self) -> str:
        """One row per ``(L, i)`` with header ``L,index,eigenvalue,residual``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["L", "index", "eigenvalue", "residual"])
        for a, L in enumerate(self.L_values):
            for i in range(self.n_eigs):
                w.writerow([repr(float(L)), i + 1, repr(float(self.eigencurves[a, i])),
                            repr(float(self.residuals[a, i]))])
        return buf.getvalue()


def _scan_one(args):
    spec, L, h, n_eigs, cfg, keep = args
    prob = mesoscopic_problem(spec, L, h)
    pairs = lowest_eigenpairs(prob.op, n_eigs, cfg)
    return pairs.values, pairs.residuals, (pairs if keep else None)


def scan_spectrum(
    spec: WaveguideSpec,
    L_values,
    h: float,
    n_eigs: int,
    cfg: SolverConfig | None = None,
    workers: int = 1,
    keep_vectors: bool = True,
) -> SpectrumScan:
    """Lowest ``n_eigs`` mesoscopic eigenvalues for every ``L``.

    Curves are indexed by rank; pairs closer than the degeneracy tolerance
    are listed in ``unresolved`` as ``(L index, curve index)``.
    """
    L_values = np.asarray(L_values, float)
    if len(L_values) < 3:
        raise InsufficientSamples("a scan needs at least 3 values of L")
    if np.any(np.diff(L_values) <= 0):
        raise ValueError("L_values must be strictly ascending")
    cfg = cfg or SolverConfig()
    jobs = [(spec, float(L), h, n_eigs, cfg, keep_vectors) for L in L_values]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_scan_one, jobs))
    else:
        out = [_scan_one(j) for j in jobs]
    curves = np.array([o[0] for o in out])
    res = np.array([o[1] for o in out])
    unresolved = []
    for a in range(len(L_values)):
        d = np.diff(curves[a])
        for i in np.nonzero(np.abs(d) <= 1e-8 * np.maximum(1.0, np.abs(curves[a, 1:])))[0]:
            unresolved.append((a, int(i)))
    pairs = [o[2] for o in out] if keep_vectors else None
    return SpectrumScan(spec, L_values, float(h), curves, res, unresolved, pairs)


# ---------------------------------------------------------------- bound states


@dataclass(frozen=True)
class BoundStateCount:
    """Number of curves with a strictly negative limit, with the fitted limits."""

    k: int
    limits: tuple
    fits: tuple
    failed: bool = False

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "limits": list(self.limits),
            "fits": [None if f is None else vars(f) for f in self.fits],
            "failed": self.failed,
        }


def count_bound_states(scan: SpectrumScan) -> BoundStateCount:
    """Count eigencurves converging exponentially to a limit below ``-DELTA_BOUND``.

    A curve is bound when its fitted limit is below ``-DELTA_BOUND``, its
    value at the largest ``L`` is negative and lies within ``PLATEAU_RTOL``
    of the limit. Counting stops at the first curve that is not bound.
    """
    L = scan.L_values
    if len(L) < 4:
        raise InsufficientSamples("bound-state count needs at least 4 values of L")
    limits, fits = [], []
    failed = False
    for i in range(scan.n_eigs):
        y = scan.curve(i)
        if y[-1] >= -DELTA_BOUND:
            break
        try:
            fit = exp_tail_fit(L, y)
        except FitFailed:
            failed = True
            break
        plateau = abs(y[-1] - fit.limit) <= PLATEAU_RTOL * abs(fit.limit)
        if fit.limit < -DELTA_BOUND and plateau:
            limits.append(fit.limit)
            fits.append(fit)
        else:
            break
    return BoundStateCount(len(limits), tuple(limits), tuple(fits), failed)


# ---------------------------------------------------------------- classification


@dataclass(frozen=True)
class Classification:
    """Outcome of the gap/resonance test on curves ``k+1`` and ``k+2``.

    ``params`` holds ``mu0, gamma`` for a gap and additionally
    ``mu0_prime, gamma_prime`` for a resonant sequence.
    """

    k: int
    verdict: str
    params: dict
    diagnostics: dict

    @property
    def vertex(self) -> str:
        return {GAP: "Dirichlet", RESONANT: "Resonant"}.get(self.verdict, "Unknown")

    def to_dict(self) -> dict:
        return {"k": self.k, "verdict": self.verdict, "params": _jsonable(self.params),
                "diagnostics": _jsonable(self.diagnostics)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _gap_fit(L, y):
    fit = loglog_fit(L, y, "L")
    gamma = -fit.slope
    mu0 = float(np.min(y * L**gamma))
    return gamma, mu0, fit


def classify(scan: SpectrumScan, k: int) -> Classification:
    """Decide between a spectral gap and a resonant sequence.

    Uses the samples with ``L >= L_max/2``. Curve ``k+1`` entirely above
    ``ZERO_TOL`` is tested as a gap; entirely at or below zero as a resonant
    sequence, with curve ``k+2`` as its gap. Sign changes or poor fits give
    ``Undetermined``.
    """
    L = scan.L_values
    if len(L) < 4 or L.max() < 2 * L.min() * (1 - 1e-12):
        raise InsufficientSamples("classification needs >= 4 values of L spanning a factor 2")
    if scan.n_eigs < k + 2:
        raise InsufficientSamples("scan must contain at least k+2 eigencurves")
    win = L >= 0.5 * L.max() - 1e-12
    Lw = L[win]
    r = scan.curve(k)[win]
    g = scan.curve(k + 1)[win]
    diag = {"window": Lw.tolist(), "curve_k1": r.tolist(), "curve_k2": g.tolist()}

    def undetermined(reason):
        diag["reason"] = reason
        return Classification(k, UNDETERMINED, {}, diag)

    if np.all(r > ZERO_TOL):
        gamma, mu0, fit = _gap_fit(Lw, r)
        diag.update(r2=fit.r2, slope=fit.slope)
        if fit.r2 < R2_MIN:
            return undetermined("gap fit R2 below threshold")
        if gamma <= 0 or mu0 <= 0:
            return undetermined("curve k+1 does not decay to zero")
        return Classification(k, GAP, {"mu0": mu0, "gamma": gamma}, diag)

    if np.all(r <= ZERO_TOL):
        if not np.all(g > ZERO_TOL):
            return undetermined("curve k+2 is not positive")
        gamma, mu0, gfit = _gap_fit(Lw, g)
        diag.update(gap_r2=gfit.r2, gap_slope=gfit.slope)
        if gfit.r2 < R2_MIN or gamma <= 0:
            return undetermined("gap fit of curve k+2 failed")
        if np.all(np.abs(r) <= ZERO_TOL):
            # identically zero: the bound holds for every mu0' and gamma'
            diag.update(exact_zero=True)
            params = {"mu0_prime": 0.0, "gamma_prime": math.inf, "mu0": mu0, "gamma": gamma}
            return Classification(k, RESONANT, params, diag)
        if np.any(np.abs(r) <= ZERO_TOL):
            return undetermined("curve k+1 touches zero inside the window")
        rfit = loglog_fit(Lw, r, "L")
        gamma_p = -rfit.slope
        diag.update(resonant_r2=rfit.r2, resonant_slope=rfit.slope)
        if rfit.r2 < R2_MIN:
            return undetermined("resonant fit R2 below threshold")
        if gamma_p < 1 - GAMMA_PRIME_TOL:
            return undetermined(f"curve k+1 decays like L^-{gamma_p:.3f}, slower than 1/L")
        gp = max(gamma_p, 1.0)
        mu0p = float(np.max(np.abs(r) * Lw**gp))
        params = {"mu0_prime": mu0p, "gamma_prime": gamma_p, "mu0": mu0, "gamma": gamma}
        return Classification(k, RESONANT, params, diag)

    return undetermined("curve k+1 changes sign across the window")


# ---------------------------------------------------------------- beta extraction


@dataclass(frozen=True)
class BetaResult:
    """First-mode trace amplitudes on the cut faces.

    ``beta`` is normalized to unit length with ``beta[0]`` real and >= 0;
    ``scale`` is the complex factor that maps the input vector to that
    normalization; ``remainders[j]`` is the norm of the higher-mode part of the
    scaled trace on face ``j``.
    """

    beta: np.ndarray
    raw: np.ndarray
    scale: complex
    remainders: np.ndarray


def face_amplitudes(psi: np.ndarray, faces, basis: TransverseBasis) -> tuple[np.ndarray, np.ndarray]:
    """Raw first-mode amplitudes and remainder norms of ``psi`` on each face."""
    raw = []
    rem = []
    chi1 = np.concatenate([[0.0], basis.chi[0], [0.0]])
    for f in faces:
        tr = f.trace(psi)
        b = np.sum(f.weights * tr * chi1)
        raw.append(b)
        r = tr - b * chi1
        rem.append(np.sqrt(np.sum(f.weights * np.abs(r) ** 2)))
    return np.array(raw), np.array(rem)


def normalize_beta(raw: np.ndarray) -> tuple[np.ndarray, complex]:
    """Unit-normalize with the first nonzero entry real and positive."""
    nrm = np.linalg.norm(raw)
    if nrm == 0:
        raise DegenerateResonance("eigenvector has no first-mode trace on any face")
    lead = raw[np.nonzero(np.abs(raw) > 1e-14 * nrm)[0][0]]
    scale = (abs(lead) / lead) / nrm
    beta = raw * scale
    if not np.iscomplexobj(raw):
        beta = np.real(beta)
        scale = float(np.real(scale))
    return beta, scale


def extract_beta(psi: np.ndarray, faces, basis: TransverseBasis) -> BetaResult:
    """Trace amplitudes ``beta_j`` of ``psi`` against ``chi_1`` on each cut face."""
    raw, rem = face_amplitudes(psi, faces, basis)
    beta, scale = normalize_beta(raw)
    return BetaResult(beta, raw, scale, rem * abs(scale))


def resonant_vector(pairs: EigenPairs, index: int, faces, basis: TransverseBasis) -> np.ndarray:
    """Eigenvector of level ``index``; a degenerate block is reduced to the
    combination with the largest first-mode trace.

    Raises
    ------
    DegenerateResonance
        When the maximizing combination is not unique.
    """
    block = next((b for b in pairs.blocks if index in b), (index,))
    if len(block) == 1:
        return pairs.vectors[:, index]
    V = pairs.vectors[:, list(block)]
    T = np.array([face_amplitudes(V[:, c], faces, basis)[0] for c in range(V.shape[1])]).T
    _, s, Wh = np.linalg.svd(T)
    if len(s) > 1 and s[0] - s[1] <= DEGENERACY_TOL * max(s[0], 1e-300):
        raise DegenerateResonance("resonant level carries several coupling patterns")
    return V @ Wh[0].conj()


# ---------------------------------------------------------------- psi^J and theta


@dataclass(frozen=True)
class PsiJ:
    field: np.ndarray
    residual: float
    regularized: bool
    nearest_eigenvalue: float


def _nearest_eigenvalue(op: SparseSymOp, lu, iters: int = 60, seed: int = 0) -> float:
    """Magnitude of the eigenvalue of ``op`` closest to 0, by inverse iteration."""
    rng = np.random.default_rng(seed)
    sq = np.sqrt(op.mass)
    y = rng.standard_normal(op.dim)
    y /= np.linalg.norm(y)
    nu = 0.0
    for _ in range(iters):
        x = sq * lu.solve(sq * y)
        nu_new = np.linalg.norm(x)
        y = x / nu_new
        if abs(nu_new - nu) <= 1e-6 * nu_new:
            nu = nu_new
            break
        nu = nu_new
    return 1.0 / nu


def face_data(raster: RasterDomain, beta, basis: TransverseBasis) -> np.ndarray:
    """Grid vector equal to ``beta_j chi_1`` on face ``j`` and 0 elsewhere."""
    u = np.zeros(raster.n, dtype=np.result_type(np.asarray(beta), float))
    for f in cut_faces(raster):
        u[f.nodes[1:-1]] = beta[f.branch] * basis.chi[0]
    return u


def solve_psi_j(raster: RasterDomain, beta, basis: TransverseBasis, op: SparseSymOp | None = None) -> PsiJ:
    """Solve ``(-Laplacian - mu_1) u = 0`` inside with ``u = beta_j chi_1`` on the cut faces.

    The face values enter as Dirichlet data; other walls are homogeneous
    Dirichlet. If the all-Dirichlet operator has an eigenvalue within
    ``SINGULAR_TOL`` of zero the problem is shifted by
    ``REGULARIZATION_SHIFT`` and flagged.
    """
    op = op or assemble_hamiltonian(raster, basis)
    beta = np.asarray(beta)
    face = raster.node_face >= 0
    inner = ~face
    uF = face_data(raster, beta, basis)
    A_II = op.A[inner][:, inner].tocsc()
    A_IF = op.A[inner][:, face]
    rhs = -(A_IF @ uF[face])
    try:
        lu = splu(A_II, permc_spec="COLAMD")
        near = _nearest_eigenvalue(op.restricted(inner), lu)
    except RuntimeError:
        near = 0.0
    regularized = near < SINGULAR_TOL
    if regularized:
        shifted = (A_II - REGULARIZATION_SHIFT * _diag(op.mass[inner])).tocsc()
        try:
            lu = splu(shifted, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularOperator("all-Dirichlet mesoscopic operator is singular") from exc
        A_solve = shifted
    else:
        A_solve = A_II
    uI = lu.solve(rhs.astype(np.result_type(rhs, float)))
    u = uF.copy().astype(np.result_type(uF, uI))
    u[inner] = uI
    res = float(np.linalg.norm(A_solve @ uI - rhs) / max(np.linalg.norm(rhs), 1e-300))
    if res > 1e-9:
        uI = uI + lu.solve(rhs - A_solve @ uI)
        u[inner] = uI
        res = float(np.linalg.norm(A_solve @ uI - rhs) / max(np.linalg.norm(rhs), 1e-300))
    return PsiJ(u, res, regularized, float(near))


def _diag(d):
    import scipy.sparse as sp

    return sp.diags(d)


def face_weights(raster: RasterDomain) -> np.ndarray:
    """Quadrature weight ``h`` on cut-face unknowns, 0 elsewhere."""
    return np.where(raster.node_face >= 0, raster.h, 0.0)


def normal_derivative(op: SparseSymOp, raster: RasterDomain, u: np.ndarray, laplacian: np.ndarray) -> np.ndarray:
    """Outward normal derivative of ``u`` on cut-face nodes.

    Built from the half-cell balance at each face node,
    ``h * d_nu u = (K u)_i + m_i * (Laplacian u)_i``, with ``K`` the bare
    stiffness and ``laplacian`` the value of the Laplacian at the node.
    Returns an array over all unknowns, zero off the faces.
    """
    K_u = op.A @ u + op.shift * op.mass * u
    w = face_weights(raster)
    out = np.zeros_like(K_u)
    f = w > 0
    out[f] = (K_u[f] + op.mass[f] * laplacian[f]) / w[f]
    return out


def discrete_laplacian(op: SparseSymOp, raster: RasterDomain, u: np.ndarray) -> np.ndarray:
    """Grid Laplacian of ``u``: 5-point stencil inside, one-sided on cut faces.

    On a face node the normal second derivative uses the second-order
    one-sided formula ``(2u0 - 5u1 + 4u2 - u3)/h**2`` along the inward
    normal and the tangential part the usual 3-point difference.
    """
    K_u = op.A @ u + op.shift * op.mass * u
    lap = -K_u / op.mass
    h = raster.h
    for j in range(len(raster.branches)):
        grid = raster.branch_grid(j)
        cols = [np.where(grid[-1 - s] >= 0, u[np.maximum(grid[-1 - s], 0)], 0.0) for s in range(4)]
        face = grid[-1]
        normal2 = (2 * cols[0] - 5 * cols[1] + 4 * cols[2] - cols[3]) / h**2
        padded = np.concatenate([[0.0], cols[0], [0.0]])
        tang2 = (padded[2:] - 2 * padded[1:-1] + padded[:-2]) / h**2
        lap[face] = normal2 + tang2
    return lap


def gauss_green_residual(op: SparseSymOp, raster: RasterDomain, f: np.ndarray, g: np.ndarray) -> float:
    """``|sum m (Lf g - f Lg) - sum_faces w (d_nu f g - f d_nu g)|`` for real fields."""
    lf = discrete_laplacian(op, raster, f)
    lg = discrete_laplacian(op, raster, g)
    vol = np.sum(op.mass * (lf * g - f * lg))
    nf = normal_derivative(op, raster, f, lf)
    ng = normal_derivative(op, raster, g, lg)
    w = face_weights(raster)
    bdry = np.sum(w * (nf * g - f * ng))
    return float(abs(vol - bdry))


def boundary_theta(prob: MesoscopicProblem, psi: np.ndarray, psij: np.ndarray) -> float:
    """``-sum_faces w conj(psi) d_nu psi^J`` with ``psi^J`` solving the zero-energy equation."""
    lap = -prob.op.shift * psij
    dn = normal_derivative(prob.op, prob.raster, psij, lap)
    w = face_weights(prob.raster)
    return float(np.real(-np.sum(w * np.conj(psi) * dn)))


@dataclass(frozen=True)
class ThetaEstimate:
    L: tuple
    theta_eig_L: tuple
    theta_bdry_L: tuple
    theta_eig: float
    theta_bdry: float
    consistent: bool

    def to_dict(self) -> dict:
        return _jsonable(vars(self))


def estimate_theta(L_values, lam_k1, theta_bdry_L, strict: bool = False) -> ThetaEstimate:
    """Extrapolate ``-L lam_{k+1}(L)`` and the boundary route to ``L -> inf``.

    Values below ``THETA_FLOOR`` are reported as 0. The two routes are
    flagged inconsistent when they differ by more than
    ``INCONSISTENCY_RTOL`` relative; ``strict=True`` raises instead.
    """
    L = np.asarray(L_values, float)
    te_L = -L * np.asarray(lam_k1, float)
    tb_L = np.asarray(theta_bdry_L, float)
    if len(L) < 3:
        raise InsufficientSamples("theta extrapolation needs at least 3 samples")
    te = float(extrapolate_inverse(L, te_L)[0])
    tb = float(extrapolate_inverse(L, tb_L)[0])
    if abs(te) < THETA_FLOOR:
        te = 0.0
    if abs(tb) < THETA_FLOOR:
        tb = 0.0
    consistent = abs(te - tb) <= INCONSISTENCY_RTOL * max(abs(te), abs(tb), THETA_FLOOR)
    if strict and not consistent:
        raise InconsistentEstimates(f"theta_eig={te:.6g} and theta_bdry={tb:.6g} disagree")
    return ThetaEstimate(tuple(L), tuple(te_L), tuple(tb_L), te, tb, consistent)


# ---------------------------------------------------------------- convergence exponent


@dataclass(frozen=True)
class ConvergenceFit:
    kappa_beta: float
    r2_beta: float
    kappa_theta: float
    r2_theta: float

    def to_dict(self) -> dict:
        return _jsonable(vars(self))


EXACT_DEVIATION = 1e-8


def _kappa(L, seq):
    seq = np.asarray(seq)
    if seq.ndim == 1:
        seq = seq[:, None]
    limit = np.array([extrapolate_inverse(L, seq[:, c])[0] for c in range(seq.shape[1])])
    dev = np.linalg.norm(seq - limit[None, :], axis=1)
    if np.max(dev) <= EXACT_DEVIATION:
        return math.inf, 1.0
    if np.any(dev <= 0):
        dev = np.maximum(dev, EXACT_DEVIATION)
    fit = loglog_fit(L, dev, "L")
    return -fit.slope, fit.r2


def fit_convergence(L_values, beta_seq, theta_seq, classification: Classification | None = None) -> ConvergenceFit:
    """Exponent ``kappa`` of ``|beta(L) - beta(inf)|`` and ``|theta(L) - theta(inf)|``.

    Deviations at machine zero give ``kappa = inf`` (exact convergence).
    """
    if classification is not None and classification.verdict != RESONANT:
        raise NotResonantError("convergence exponents need a resonant-sequence verdict")
    L = np.asarray(L_values, float)
    if len(L) < 4:
        raise InsufficientSamples("kappa fit needs at least 4 samples")
    kb, rb = _kappa(L, np.asarray(beta_seq))
    kt, rt = _kappa(L, np.asarray(theta_seq, float))
    return ConvergenceFit(kb, rb, kt, rt)


# ---------------------------------------------------------------- full report


@dataclass(eq=False)
class ResonanceReport:
    """Vertex parameters extracted from a resonant mesoscopic sequence.

    ``c_projection`` stores what is needed to evaluate the projection
    coefficient later: the rescaled eigenvector (normalized so its traces
    have unit ``beta``), the ``L`` it was computed at, and the spacing.
    """

    classification: Classification
    bound: BoundStateCount
    beta: np.ndarray
    theta_eig: float
    theta_bdry: float
    kappa: ConvergenceFit | None
    theta: ThetaEstimate | None = None
    beta_L: np.ndarray | None = None
    remainders_L: np.ndarray | None = None
    psij_residuals: tuple = ()
    regularized: bool = False
    c_projection: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return self.classification.verdict

    @property
    def theta_value(self) -> float:
        return max(self.theta_eig, 0.0)

    def to_dict(self) -> dict:
        d = {
            "verdict": self.verdict,
            "k": self.classification.k,
            "classification": self.classification.to_dict(),
            "bound_states": self.bound.to_dict(),
        }
        if self.verdict == RESONANT:
            b = np.asarray(self.beta)
            d.update(
                beta=_beta_json(b),
                theta_eig=self.theta_eig,
                theta_bdry=self.theta_bdry,
                kappa=None if self.kappa is None else self.kappa.to_dict(),
                theta=None if self.theta is None else self.theta.to_dict(),
                beta_L=None if self.beta_L is None else [_beta_json(x) for x in self.beta_L],
                remainders_L=None if self.remainders_L is None else np.asarray(self.remainders_L).tolist(),
                psij_residuals=list(self.psij_residuals),
                regularized=self.regularized,
            )
        return _jsonable(d)


def _beta_json(b):
    b = np.asarray(b)
    if np.iscomplexobj(b) and np.any(np.imag(b) != 0):
        return [[float(x.real), float(x.imag)] for x in b]
    return [float(np.real(x)) for x in b]


def analyze(scan: SpectrumScan, strict: bool = False) -> ResonanceReport:
    """Count bound states, classify, and for a resonant sequence extract ``beta`` and ``theta``.

    ``scan`` must keep its eigenvectors.
    """
    bound = count_bound_states(scan)
    if bound.failed:
        cls = Classification(bound.k, UNDETERMINED, {}, {"reason": "bound-state fit failed"})
        return ResonanceReport(cls, bound, np.zeros(0), math.nan, math.nan, None)
    cls = classify(scan, bound.k)
    if cls.verdict != RESONANT:
        return ResonanceReport(cls, bound, np.zeros(0), math.nan, math.nan, None)
    if scan.pairs is None:
        raise ValueError("scan was computed without eigenvectors")
    k = bound.k
    probs, vecs, betas, rems = [], [], [], []
    for a in range(len(scan.L_values)):
        prob = scan.problem(a)
        faces = prob.faces
        v = resonant_vector(scan.pairs[a], k, faces, prob.basis)
        br = extract_beta(v, faces, prob.basis)
        probs.append(prob)
        vecs.append(v * br.scale)
        betas.append(br.beta)
        rems.append(br.remainders)
    betas = np.array(betas)
    # align the overall sign of each sample with the largest-L one
    L = scan.L_values
    beta_inf = np.array([extrapolate_inverse(L, betas[:, j])[0] for j in range(betas.shape[1])])
    beta_inf = beta_inf / np.linalg.norm(beta_inf)
    tb_L, res_J, reg = [], [], False
    for a, prob in enumerate(probs):
        pj = solve_psi_j(prob.raster, beta_inf, prob.basis, prob.op)
        res_J.append(pj.residual)
        reg |= pj.regularized
        tb_L.append(boundary_theta(prob, vecs[a], pj.field))
    theta = estimate_theta(L, scan.curve(k), tb_L, strict=strict)
    kappa = None
    if len(L) >= 4:
        try:
            kappa = fit_convergence(L, betas, theta.theta_eig_L, cls)
        except FitFailed:
            kappa = None
    c_proj = {"L": float(L[-1]), "h": scan.h, "vector": vecs[-1], "k": k}
    return ResonanceReport(
        cls, bound, beta_inf, theta.theta_eig, theta.theta_bdry, kappa, theta, betas,
        np.array(rems), tuple(res_J), reg, c_proj,
    )
