"""Finite-difference operators on rasters: Hamiltonians, transverse modes, absorbers.

Every operator is stored as a pair ``(A, M)``: a sparse Hermitian matrix ``A``
(the discrete energy form) and a positive diagonal mass ``M`` (node areas or
lengths). The Hamiltonian is ``H = M^{-1} A``. Inner products of grid vectors
are ``<u, v> = sum(M * conj(u) * v)``, which is the trapezoid/area rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import CapOutsideBranch, ConfigError, SpacingMismatch, TooManyModes
from .geometry import RasterDomain


@dataclass(frozen=True)
class TransverseBasis:
    """Dirichlet modes of a branch cross-section ``[0, width]``.

    ``chi[m-1]`` samples mode ``m`` on the ``width/h - 1`` interior nodes
    ``y = h, 2h, ...``; modes are orthonormal under the trapezoid rule.
    """

    width: float
    h: float
    mu: np.ndarray
    mu_disc: np.ndarray
    chi: np.ndarray

    @property
    def y(self) -> np.ndarray:
        return self.h * np.arange(1, self.chi.shape[1] + 1)

    @property
    def m_max(self) -> int:
        return len(self.mu)

    def project(self, v: np.ndarray) -> np.ndarray:
        """Mode coefficients of samples ``v`` (last axis transverse)."""
        return self.h * (v @ self.chi.T)


def transverse_modes(width: float, h: float, m_max: int = 4) -> TransverseBasis:
    """Analytic and discrete Dirichlet modes of an interval.

    The discrete modes of the 3-point Laplacian are sampled sines, so both
    sets share the same eigenvectors and differ only in the eigenvalues.
    """
    N = width / h
    Nr = int(round(N))
    if abs(N - Nr) > 1e-8 * N or Nr < 8:
        raise ConfigError("width/h must be an integer >= 8")
    if m_max >= Nr or m_max < 1:
        raise TooManyModes(f"m_max={m_max} needs m_max < width/h = {Nr}")
    m = np.arange(1, m_max + 1)
    mu = (m * np.pi / width) ** 2
    mu_disc = 4.0 / h**2 * np.sin(m * np.pi * h / (2 * width)) ** 2
    y = h * np.arange(1, Nr)
    chi = np.sqrt(2.0 / width) * np.sin(np.outer(m, y) * np.pi / width)
    for a in (mu, mu_disc, chi):
        a.setflags(write=False)
    return TransverseBasis(float(width), float(h), mu, mu_disc, chi)


@dataclass(frozen=True, eq=False)
class SparseSymOp:
    """Hermitian operator ``H = M^{-1} A (+ diag(cap))``.

    Attributes
    ----------
    A : scipy.sparse.csr_matrix
        Hermitian energy matrix, already shifted by ``-shift * M``.
    mass : ndarray
        Positive diagonal of ``M``.
    shift : float
        Constant subtracted from the bare Laplacian (``mu_1`` for waveguides).
    cap : ndarray or None
        Complex diagonal potential added to ``H``.
    """

    A: sp.csr_matrix
    mass: np.ndarray
    shift: float = 0.0
    cap: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def rows(self) -> tuple:
        return self.A.indptr, self.A.indices, self.A.data

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.A.data) and self.cap is None

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = (self.A @ v) / (self.mass if v.ndim == 1 else self.mass[:, None])
        if self.cap is not None:
            out = out + (self.cap * v.T).T
        return out

    def pencil(self, z: complex = 0.0) -> sp.csc_matrix:
        """``A + M cap - z M`` in CSC form, the matrix of ``M (H - z)``."""
        diag = -z * self.mass
        if self.cap is not None:
            diag = diag + self.mass * self.cap
        return (self.A + sp.diags(diag)).tocsc()

    def symmetric_matrix(self) -> sp.csr_matrix:
        """``M^{-1/2} A M^{-1/2}``, unitarily similar to ``H`` without cap."""
        d = sp.diags(1.0 / np.sqrt(self.mass))
        return (d @ self.A @ d).tocsr()

    def inner(self, u: np.ndarray, v: np.ndarray) -> complex:
        return np.sum(self.mass * np.conj(u) * v)

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.mass * np.abs(u) ** 2)))

    def with_cap(self, cap: np.ndarray | None) -> "SparseSymOp":
        if cap is not None and not np.any(cap):
            cap = None
        return replace(self, cap=None if cap is None else np.asarray(cap, dtype=complex))

    def restricted(self, keep: np.ndarray) -> "SparseSymOp":
        """Operator on the unknowns ``keep`` with the others pinned to zero."""
        A = self.A[keep][:, keep].tocsr()
        cap = None if self.cap is None else self.cap[keep]
        return SparseSymOp(A, self.mass[keep], self.shift, cap, dict(self.meta))


def _lattice_edges(raster: RasterDomain):
    """All grid edges with at least one unknown endpoint and positive weight.

    Returns endpoint unknown indices (-1 for eliminated nodes) and weights
    equal to half the number of included cells touching the edge.
    """
    cells = np.pad(raster.cells, 1).astype(float)
    idx = np.pad(raster.node_index, 1, constant_values=-1)
    # node (li, lj) of the raster is idx[lj+1, li+1]; cell (li, lj) is cells[lj+1, li+1]
    out = []
    # x-directed edges between node (li, lj) and (li+1, lj): cells (li, lj-1), (li, lj)
    a = idx[1:-1, 1:-2]
    b = idx[1:-1, 2:-1]
    w = 0.5 * (cells[:-1, 1:-1] + cells[1:, 1:-1])
    out.append((a, b, w))
    # y-directed edges between node (li, lj) and (li, lj+1): cells (li-1, lj), (li, lj)
    a = idx[1:-2, 1:-1]
    b = idx[2:-1, 1:-1]
    w = 0.5 * (cells[1:-1, :-1] + cells[1:-1, 1:])
    out.append((a, b, w))
    ea, eb, ew = [], [], []
    for a, b, w in out:
        sel = ((a >= 0) | (b >= 0)) & (w > 0)
        ea.append(a[sel])
        eb.append(b[sel])
        ew.append(w[sel])
    return np.concatenate(ea), np.concatenate(eb), np.concatenate(ew)


def assemble_laplacian(raster: RasterDomain) -> SparseSymOp:
    """Bare 5-point Laplacian (Dirichlet walls, Neumann cut faces), no shift.

    The energy of a grid vector ``v`` is ``sum_e w_e |v_a - v_b|^2`` over grid
    edges, with ``w_e = 1`` inside and ``1/2`` along a cut face; the mass is
    the node's share of included cell area. At a cut face this coincides with
    the mirror-ghost Neumann stencil.
    """
    a, b, w = _lattice_edges(raster)
    n = raster.n
    both = (a >= 0) & (b >= 0)
    rows = np.concatenate([a[both], b[both], a[a >= 0], b[b >= 0]])
    cols = np.concatenate([b[both], a[both], a[a >= 0], b[b >= 0]])
    vals = np.concatenate([-w[both], -w[both], w[a >= 0], w[b >= 0]])
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return SparseSymOp(A, raster.node_mass.astype(float), 0.0, None, {"h": raster.h, "width": raster.width})


def assemble_hamiltonian(raster: RasterDomain, basis: TransverseBasis) -> SparseSymOp:
    """Renormalized Hamiltonian ``-Laplacian - mu_1`` with the discrete ``mu_1``."""
    if not np.isclose(basis.h, raster.h, rtol=1e-10, atol=0) or not np.isclose(
        basis.width, raster.width, rtol=1e-10, atol=0
    ):
        raise SpacingMismatch(
            f"basis (width={basis.width}, h={basis.h}) does not match raster "
            f"(width={raster.width}, h={raster.h})"
        )
    lap = assemble_laplacian(raster)
    mu1 = float(basis.mu_disc[0])
    A = (lap.A - sp.diags(mu1 * lap.mass)).tocsr()
    A.sort_indices()
    return SparseSymOp(A, lap.mass, mu1, None, dict(lap.meta))


def assemble_cap(raster: RasterDomain, start: float, strength: float, power: float = 2.0) -> np.ndarray:
    """Complex absorbing potential on every branch beyond ``start``.

    Parameters
    ----------
    start : float
        Physical branch coordinate where absorption begins.
    strength : float
        Peak absorption rate reached at the far end.
    power : float
        Ramp exponent, >= 2.

    Returns
    -------
    ndarray of complex
        ``-1j * strength * ((x - start)/len)**power`` on branch nodes with
        ``x > start``, zero elsewhere; ``len`` is the distance to the far end.
    """
    if power < 2:
        raise ConfigError("CAP power must be >= 2")
    cap = np.zeros(raster.n, dtype=complex)
    for j, fr in enumerate(raster.branches):
        length = fr.length * raster.scale
        if not 0 < start < length:
            raise CapOutsideBranch(f"start={start} outside branch {j} of length {length}")
        x, y = raster.branch_coordinates(j)
        inside = (x > start) & (y > 0) & (y < raster.width)
        ramp = ((x[inside] - start) / (length - start)) ** power
        cap[inside] = -1j * strength * ramp
    return cap


def save_operator(path, op: SparseSymOp) -> None:
    """Write ``op`` as ``.npz`` with keys dim, indptr, indices, data, mass, shift, cap."""
    np.savez_compressed(
        path,
        dim=np.array(op.dim),
        indptr=op.A.indptr,
        indices=op.A.indices,
        data=op.A.data,
        mass=op.mass,
        shift=np.array(op.shift),
        cap=np.zeros(0) if op.cap is None else op.cap,
        meta=np.array(json.dumps(op.meta)),
    )


def load_operator(path) -> SparseSymOp:
    with np.load(path) as z:
        n = int(z["dim"])
        A = sp.csr_matrix((z["data"], z["indices"], z["indptr"]), shape=(n, n))
        cap = z["cap"]
        return SparseSymOp(
            A, z["mass"], float(z["shift"]), cap if cap.size else None, json.loads(str(z["meta"]))
        )
