"""Star-shaped waveguide families and their rasterization to node-centred grids.

All shapes are described in rescaled units where the branch width is 1. A
waveguide of thickness ``eps`` is the same shape scaled by ``eps``; the raster
stores the rescaled lattice together with the scale factor, so two rasters of
the same shape at different ``eps`` share every integer array.

Grid convention
---------------
The plane is divided into square cells of side ``h_r = 1/N``. A cell belongs to
the region when its centre does. Nodes sit on cell corners. A node with all four
surrounding cells inside is an interior unknown. Nodes on the boundary are
Dirichlet (eliminated) except on Neumann cut faces, where they stay unknowns
with half a cell of mass.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    ConfigError,
    GeometryError,
    MissingCutFace,
    NonAxisAlignedBranch,
    NonConnectedDomain,
    ResolutionTooCoarse,
)

KINDS = ("StraightStrip", "LBend", "TJunction", "Cross", "AnnulusWithHole", "CustomMask")
SQUARE_KINDS = KINDS[:4]

DEFAULT_ANGLES = {
    "StraightStrip": (0.0, math.pi),
    "LBend": (0.0, math.pi / 2),
    "TJunction": (0.0, math.pi, 3 * math.pi / 2),
    "Cross": (0.0, math.pi / 2, math.pi, 3 * math.pi / 2),
}

# boundary edge tags
DIRICHLET_WALL = 0
NEUMANN_CUT = 1
FAR_END = 2
TAG_NAMES = {DIRICHLET_WALL: "DirichletWall", NEUMANN_CUT: "NeumannCut", FAR_END: "FarEnd"}

# attachment radius of annulus branches is rounded up to this lattice
ANNULUS_SNAP = 1 / 8



class ShortBranchWarning(UserWarning):
    pass


_SIDES = {"right": (1, 0), "left": (-1, 0), "top": (0, 1), "bottom": (0, -1)}


@dataclass(frozen=True)
class JunctionSpec:
    """Shape of the junction in rescaled units (branch width 1).

    Parameters
    ----------
    kind : str
        One of ``KINDS``.
    r1, r2 : float, optional
        Inner and outer radius for ``AnnulusWithHole``.
    bitmap : ndarray of bool, optional
        Junction pixels for ``CustomMask``; row 0 is the bottom row.
    pixels_per_width : int, optional
        Pixels per unit length for ``CustomMask``.
    faces : tuple of (side, offset)
        Attachment faces for ``CustomMask``. ``side`` is one of right, left,
        top, bottom and ``offset`` the index of the first pixel of the face
        along that side.
    """

    kind: str
    r1: float | None = None
    r2: float | None = None
    bitmap: np.ndarray | None = field(default=None, compare=False)
    pixels_per_width: int | None = None
    faces: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown junction kind {self.kind!r}")
        if self.kind == "AnnulusWithHole":
            if self.r1 is None or self.r2 is None or not 0 < self.r1 < self.r2:
                raise GeometryError("annulus needs 0 < r1 < r2")
            if self.r2 <= 0.5:
                raise GeometryError("outer radius too small for a unit-width mouth")
        if self.kind == "CustomMask":
            if self.bitmap is None or not self.pixels_per_width:
                raise GeometryError("custom mask needs a bitmap and pixels_per_width")
            bm = np.asarray(self.bitmap, dtype=bool)
            object.__setattr__(self, "bitmap", bm)
            _, ncomp = ndimage.label(bm)
            if ncomp != 1:
                raise NonConnectedDomain("custom mask bitmap is not connected")
            for side, offset in self.faces:
                _mask_face_pixels(bm, side, offset, self.pixels_per_width)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "AnnulusWithHole":
            d.update(r1=self.r1, r2=self.r2)
        if self.kind == "CustomMask":
            d.update(
                bitmap=np.asarray(self.bitmap, dtype=int).tolist(),
                pixels_per_width=self.pixels_per_width,
                faces=[list(f) for f in self.faces],
            )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "JunctionSpec":
        d = dict(d)
        if "bitmap" in d:
            d["bitmap"] = np.asarray(d["bitmap"], dtype=bool)
        if "faces" in d:
            d["faces"] = tuple((str(s), int(o)) for s, o in d["faces"])
        return cls(**d)


def _mask_face_pixels(bm, side, offset, ppw):
    ny, nx = bm.shape
    if side not in _SIDES:
        raise GeometryError(f"unknown face side {side!r}")
    span = nx if side in ("top", "bottom") else ny
    if offset < 0 or offset + ppw > span:
        raise GeometryError(f"face {side}:{offset} leaves the bitmap")
    sl = slice(offset, offset + ppw)
    pix = {
        "right": bm[sl, nx - 1],
        "left": bm[sl, 0],
        "top": bm[ny - 1, sl],
        "bottom": bm[0, sl],
    }[side]
    if not pix.all():
        raise GeometryError(f"face {side}:{offset} is not a full width-1 segment of the mask")
    return pix


@dataclass(frozen=True)
class WaveguideSpec:
    """A star-shaped waveguide family.

    ``branch_angles`` may be left empty, in which case the kind's default
    layout is used. ``eps`` and ``truncation_length`` are macroscopic.
    """

    junction: JunctionSpec
    n_branches: int = 0
    branch_angles: tuple = ()
    eps: float = 1.0
    truncation_length: float = 10.0

    def __post_init__(self):
        angles = tuple(float(a) for a in self.branch_angles)
        if not angles:
            angles = _default_angles(self.junction)
        object.__setattr__(self, "branch_angles", angles)
        if not self.n_branches:
            object.__setattr__(self, "n_branches", len(angles))
        if self.n_branches < 1 or self.n_branches != len(angles):
            raise GeometryError("n_branches must equal the number of branch angles")
        wrapped = [a % (2 * math.pi) for a in angles]
        for i in range(len(wrapped)):
            for j in range(i):
                d = abs(wrapped[i] - wrapped[j])
                if min(d, 2 * math.pi - d) < 1e-9:
                    raise GeometryError("branch angles must be pairwise distinct")
        if self.eps <= 0:
            raise GeometryError("eps must be positive")
        if self.truncation_length <= 0:
            raise GeometryError("truncation_length must be positive")
        if self.truncation_length < 10 * self.eps * (1 - 1e-12):
            warnings.warn("truncation_length below 10*eps; branches are short compared with the width",
                          ShortBranchWarning, stacklevel=3)
        if self.junction.kind in SQUARE_KINDS:
            for a in angles:
                if not _is_axis_angle(a):
                    raise GeometryError("square junctions only accept axis-aligned branches")
        if self.junction.kind == "AnnulusWithHole" and len(angles) > 1:
            half = math.asin(0.5 / self.junction.r2)
            srt = sorted(wrapped)
            gaps = np.diff(srt + [srt[0] + 2 * math.pi])
            if gaps.min() <= 2 * half:
                raise GeometryError("branch mouths overlap on the outer circle")
        if self.junction.kind == "CustomMask":
            derived = _default_angles(self.junction)
            if len(derived) != len(angles) or any(
                not _same_angle(a, b) for a, b in zip(angles, derived)
            ):
                raise GeometryError("custom mask angles must follow its declared faces")

    def with_eps(self, eps: float, truncation_length: float | None = None) -> "WaveguideSpec":
        tl = self.truncation_length if truncation_length is None else truncation_length
        return WaveguideSpec(self.junction, self.n_branches, self.branch_angles, eps, tl)

    def to_dict(self) -> dict:
        return {
            "junction": self.junction.to_dict(),
            "n_branches": self.n_branches,
            "branch_angles": list(self.branch_angles),
            "eps": self.eps,
            "truncation_length": self.truncation_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WaveguideSpec":
        d = dict(d)
        junction = d.pop("junction")
        if not isinstance(junction, JunctionSpec):
            junction = JunctionSpec.from_dict(junction)
        if "branch_angles" in d:
            d["branch_angles"] = tuple(d["branch_angles"])
        return cls(junction=junction, **d)


def _default_angles(junction: JunctionSpec) -> tuple:
    if junction.kind in DEFAULT_ANGLES:
        return DEFAULT_ANGLES[junction.kind]
    if junction.kind == "CustomMask":
        return tuple(math.atan2(_SIDES[s][1], _SIDES[s][0]) % (2 * math.pi) for s, _ in junction.faces)
    raise GeometryError("annulus junctions need explicit branch angles")


def _is_axis_angle(a: float) -> bool:
    q = a / (math.pi / 2)
    return abs(q - round(q)) < 1e-12


def _same_angle(a: float, b: float) -> bool:
    d = abs((a - b) % (2 * math.pi))
    return min(d, 2 * math.pi - d) < 1e-9


def _unit(a: float) -> np.ndarray:
    if _is_axis_angle(a):
        q = round(a / (math.pi / 2)) % 4
        return np.array([(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][q])
    return np.array([math.cos(a), math.sin(a)])


@dataclass(frozen=True)
class BranchFrame:
    """Local frame of one branch, in rescaled units.

    A point ``p`` has branch coordinates ``x = (p - origin) . axis`` and
    ``y = (p - origin) . normal + 1/2``, so ``y`` runs over ``[0, 1]``. The
    attachment face is ``x = 0``. The branch rectangle covers
    ``start < x < length``; ``start <= 0`` lets it overlap the junction.
    """

    angle: float
    origin: tuple
    axis: tuple
    normal: tuple
    start: float
    length: float

    @property
    def axis_aligned(self) -> bool:
        return _is_axis_angle(self.angle)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("angle", "origin", "axis", "normal", "start", "length")}

    @classmethod
    def from_dict(cls, d: dict) -> "BranchFrame":
        return cls(
            float(d["angle"]), tuple(d["origin"]), tuple(d["axis"]), tuple(d["normal"]),
            float(d["start"]), float(d["length"]),
        )


def _frames(junction: JunctionSpec, angles, length: float) -> list[BranchFrame]:
    frames = []
    for a in angles:
        u = _unit(a)
        n = np.array([-u[1], u[0]])
        if junction.kind in SQUARE_KINDS:
            origin, start = 0.5 * u, 0.0
        elif junction.kind == "AnnulusWithHole":
            s0 = math.sqrt(junction.r2**2 - 0.25)
            attach = math.ceil(s0 / ANNULUS_SNAP - 1e-9) * ANNULUS_SNAP
            origin, start = attach * u, junction.r1 - attach
        else:
            origin, start = _custom_origin(junction, a), 0.0
        frames.append(BranchFrame(float(a), tuple(origin), tuple(u), tuple(n), start, length))
    return frames


def _custom_origin(junction, angle):
    bm = junction.bitmap
    p = 1.0 / junction.pixels_per_width
    ny, nx = bm.shape
    for side, off in junction.faces:
        if not _same_angle(math.atan2(_SIDES[side][1], _SIDES[side][0]), angle):
            continue
        c = off * p + 0.5
        return np.array({"right": (nx * p, c), "left": (0.0, c), "top": (c, ny * p), "bottom": (c, 0.0)}[side])
    raise GeometryError("no face for branch angle")


def _junction_contains(junction: JunctionSpec, X, Y):
    if junction.kind in SQUARE_KINDS:
        return (np.abs(X) < 0.5) & (np.abs(Y) < 0.5)
    if junction.kind == "AnnulusWithHole":
        r2 = X**2 + Y**2
        return (r2 > junction.r1**2) & (r2 < junction.r2**2)
    bm = junction.bitmap
    ppw = junction.pixels_per_width
    ix = np.floor(X * ppw).astype(int)
    iy = np.floor(Y * ppw).astype(int)
    ok = (ix >= 0) & (iy >= 0) & (ix < bm.shape[1]) & (iy < bm.shape[0])
    out = np.zeros(X.shape, dtype=bool)
    out[ok] = bm[iy[ok], ix[ok]]
    return out


def _junction_bbox(junction: JunctionSpec):
    if junction.kind in SQUARE_KINDS:
        return -0.5, 0.5, -0.5, 0.5
    if junction.kind == "AnnulusWithHole":
        r = junction.r2
        return -r, r, -r, r
    p = 1.0 / junction.pixels_per_width
    ny, nx = junction.bitmap.shape
    return 0.0, nx * p, 0.0, ny * p


def _branch_contains(fr: BranchFrame, X, Y):
    ox, oy = fr.origin
    a = (X - ox) * fr.axis[0] + (Y - oy) * fr.axis[1]
    b = (X - ox) * fr.normal[0] + (Y - oy) * fr.normal[1]
    return (np.abs(b) < 0.5) & (a > fr.start) & (a < fr.length)


@dataclass(frozen=True, eq=False)
class RasterDomain:
    """Rasterized waveguide or mesoscopic region.

    Attributes
    ----------
    h : float
        Physical grid spacing, ``scale * h_rescaled``.
    scale : float
        Thickness ``eps``; physical coordinates are ``scale`` times rescaled ones.
    n_width : int
        Cells across a branch.
    lattice_origin : (int, int)
        Global lattice index of cell ``cells[0, 0]``.
    cells : ndarray of bool, shape (nj, ni)
        Included cells, indexed ``[j, i]``.
    node_index : ndarray of int, shape (nj + 1, ni + 1)
        Unknown index of each lattice node, -1 where eliminated.
    node_ij : ndarray of int, shape (n, 2)
        Global lattice coordinates ``(i, j)`` of every unknown.
    node_cells : ndarray of int
        Number of included cells around each unknown (4, or 2 on a cut face).
    node_face : ndarray of int
        Branch index for cut-face unknowns, -1 otherwise.
    branches : tuple of BranchFrame
    mesoscopic : bool
        True when branches end in Neumann cut faces.
    edge_ij, edge_dir, edge_tag, edge_branch : ndarray
        Boundary grid edges: start node lattice coordinates, direction (0 along
        x, 1 along y), tag code and owning branch (-1 for junction walls).
    """

    kind: str
    spec: dict
    h: float
    scale: float
    n_width: int
    lattice_origin: tuple
    cells: np.ndarray
    node_index: np.ndarray
    node_ij: np.ndarray
    node_cells: np.ndarray
    node_face: np.ndarray
    branches: tuple
    mesoscopic: bool
    edge_ij: np.ndarray
    edge_dir: np.ndarray
    edge_tag: np.ndarray
    edge_branch: np.ndarray

    @property
    def n(self) -> int:
        return len(self.node_ij)

    @property
    def h_rescaled(self) -> float:
        return 1.0 / self.n_width

    @property
    def width(self) -> float:
        """Physical branch width."""
        return self.scale

    @property
    def rescaled_xy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.node_ij[:, 0] * self.h_rescaled, self.node_ij[:, 1] * self.h_rescaled

    @property
    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.node_ij[:, 0] * self.h, self.node_ij[:, 1] * self.h

    @property
    def node_mass(self) -> np.ndarray:
        """Area represented by each unknown."""
        return self.h**2 * self.node_cells / 4.0

    def lookup(self, ij) -> np.ndarray:
        """Unknown indices of global lattice nodes ``ij`` (shape (..., 2)); -1 if absent."""
        ij = np.asarray(ij, dtype=int)
        li = ij[..., 0] - self.lattice_origin[0]
        lj = ij[..., 1] - self.lattice_origin[1]
        nj, ni = self.node_index.shape
        ok = (li >= 0) & (lj >= 0) & (li < ni) & (lj < nj)
        out = np.full(li.shape, -1, dtype=int)
        out[ok] = self.node_index[lj[ok], li[ok]]
        return out

    def branch_grid(self, j: int) -> np.ndarray:
        """Unknown indices along branch ``j``, shape (columns, n_width - 1).

        Column ``c`` is the cross-section at branch coordinate ``x = c*h_r``
        (rescaled), starting at the attachment face; row ``m`` is transverse
        position ``y = (m + 1)*h_r``.
        """
        fr = self.branches[j]
        if not fr.axis_aligned:
            raise NonAxisAlignedBranch(f"branch {j} is not grid aligned")
        N = self.n_width
        ncol = int(round(fr.length * N)) + 1
        c = np.arange(ncol)[:, None]
        m = np.arange(1, N)[None, :]
        u = np.rint(fr.axis).astype(int)
        nv = np.rint(fr.normal).astype(int)
        # y = (m - N/2) h_r measured from the axis; origin*N may be a half integer
        pos_i = np.asarray(fr.origin[0]) * N + c * u[0] + (m - N / 2) * nv[0]
        pos_j = np.asarray(fr.origin[1]) * N + c * u[1] + (m - N / 2) * nv[1]
        ij = np.stack(np.broadcast_arrays(np.rint(pos_i).astype(int), np.rint(pos_j).astype(int)), axis=-1)
        return self.lookup(ij)

    def branch_x(self, j: int) -> np.ndarray:
        """Physical branch coordinate of each column of ``branch_grid(j)``."""
        ncol = int(round(self.branches[j].length * self.n_width)) + 1
        return np.arange(ncol) * self.h

    def transverse_y(self) -> np.ndarray:
        """Physical transverse coordinates of the rows of ``branch_grid``."""
        return np.arange(1, self.n_width) * self.h

    def branch_coordinates(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Physical ``(x_j, y_j)`` of every unknown in the frame of branch ``j``."""
        fr = self.branches[j]
        X, Y = self.rescaled_xy
        dx, dy = X - fr.origin[0], Y - fr.origin[1]
        x = dx * fr.axis[0] + dy * fr.axis[1]
        y = dx * fr.normal[0] + dy * fr.normal[1] + 0.5
        return x * self.scale, y * self.scale

    def tag_counts(self) -> dict:
        """Number of distinct branches carrying each boundary tag, plus wall presence."""
        out = {}
        for code, name in TAG_NAMES.items():
            sel = self.edge_tag == code
            if code == DIRICHLET_WALL:
                out[name] = int(sel.any())
            else:
                out[name] = len(np.unique(self.edge_branch[sel]))
        return out


def _check_resolution(h_rescaled: float) -> int:
    N = 1.0 / h_rescaled
    Nr = int(round(N))
    if abs(N - Nr) > 1e-8 * max(N, 1.0):
        raise ConfigError("branch width must be an integer multiple of h")
    if Nr < 8:
        raise ResolutionTooCoarse(f"width/h = {Nr} < 8")
    return Nr


def _check_lattice(spec: WaveguideSpec, frames, N: int, mesoscopic: bool):
    j = spec.junction
    if j.kind in SQUARE_KINDS and N % 2:
        raise ConfigError("square junctions need an even number of cells across")
    if j.kind == "AnnulusWithHole" and N % round(1 / ANNULUS_SNAP) and any(f.axis_aligned for f in frames):
        raise ConfigError("annulus rasters need width/h divisible by 8")
    if j.kind == "CustomMask" and N % j.pixels_per_width:
        raise ConfigError("width/h must be a multiple of pixels_per_width")
    for fr in frames:
        if mesoscopic and not fr.axis_aligned:
            raise NonAxisAlignedBranch("cut faces need grid-aligned branches")
        if fr.axis_aligned:
            L = fr.length * N
            if abs(L - round(L)) > 1e-8 * max(L, 1):
                raise ConfigError("branch length must be an integer multiple of h")


def _rasterize(spec: WaveguideSpec, length: float, h_rescaled: float, scale: float, mesoscopic: bool) -> RasterDomain:
    N = _check_resolution(h_rescaled)
    hr = 1.0 / N
    junction = spec.junction
    frames = _frames(junction, spec.branch_angles, length)
    _check_lattice(spec, frames, N, mesoscopic)

    # bounding box in lattice units
    x0, x1, y0, y1 = _junction_bbox(junction)
    xs, ys = [x0, x1], [y0, y1]
    for fr in frames:
        o, u, nv = map(np.asarray, (fr.origin, fr.axis, fr.normal))
        for a in (fr.start, fr.length):
            for b in (-0.5, 0.5):
                p = o + a * u + b * nv
                xs.append(p[0])
                ys.append(p[1])
    i0 = int(math.floor(min(xs) * N + 1e-9)) - 1
    i1 = int(math.ceil(max(xs) * N - 1e-9)) + 1
    j0 = int(math.floor(min(ys) * N + 1e-9)) - 1
    j1 = int(math.ceil(max(ys) * N - 1e-9)) + 1

    ci = np.arange(i0, i1)
    cj = np.arange(j0, j1)
    CX, CY = np.meshgrid((ci + 0.5) * hr, (cj + 0.5) * hr)
    cells = _junction_contains(junction, CX, CY)
    for fr in frames:
        cells |= _branch_contains(fr, CX, CY)
    _, ncomp = ndimage.label(cells)
    if ncomp != 1:
        raise NonConnectedDomain(f"region splits into {ncomp} components")

    padded = np.pad(cells.astype(int), 1)
    counts = padded[:-1, :-1] + padded[1:, :-1] + padded[:-1, 1:] + padded[1:, 1:]
    unknown = counts == 4
    face_of = np.full(counts.shape, -1, dtype=int)
    if mesoscopic:
        for b, fr in enumerate(frames):
            o = np.asarray(fr.origin) * N
            u, nv = np.asarray(fr.axis), np.asarray(fr.normal)
            m = np.arange(1, N)
            p = o[None, :] + fr.length * N * u[None, :] + (m - N / 2)[:, None] * nv[None, :]
            ij = np.rint(p).astype(int)
            li, lj = ij[:, 0] - i0, ij[:, 1] - j0
            if not np.all(counts[lj, li] == 2):
                raise GeometryError(f"cut face of branch {b} is not a clean boundary segment")
            unknown[lj, li] = True
            face_of[lj, li] = b

    lab, ncomp = ndimage.label(unknown)
    if ncomp != 1:
        raise NonConnectedDomain(f"interior nodes split into {ncomp} components")

    node_index = np.full(counts.shape, -1, dtype=int)
    jj, ii = np.nonzero(unknown)  # row-major order
    node_index[jj, ii] = np.arange(len(jj))
    node_ij = np.stack([ii + i0, jj + j0], axis=1)
    node_cells = counts[jj, ii]
    node_face = face_of[jj, ii]

    edges = _boundary_edges(cells, i0, j0, frames, N, mesoscopic)

    arrays = [cells, node_index, node_ij, node_cells, node_face, *edges]
    for a in arrays:
        a.setflags(write=False)
    return RasterDomain(
        kind=junction.kind,
        spec=spec.to_dict(),
        h=hr * scale,
        scale=scale,
        n_width=N,
        lattice_origin=(i0, j0),
        cells=cells,
        node_index=node_index,
        node_ij=node_ij,
        node_cells=node_cells,
        node_face=node_face,
        branches=tuple(frames),
        mesoscopic=mesoscopic,
        edge_ij=edges[0],
        edge_dir=edges[1],
        edge_tag=edges[2],
        edge_branch=edges[3],
    )


def _boundary_edges(cells, i0, j0, frames, N, mesoscopic):
    hr = 1.0 / N
    pad = np.pad(cells, 1)
    # horizontal edge from node (i, j) to (i+1, j): cells (i, j-1) and (i, j)
    hb = pad[:-1, 1:-1] != pad[1:, 1:-1]
    hj, hi = np.nonzero(hb)
    # vertical edge from node (i, j) to (i, j+1): cells (i-1, j) and (i, j)
    vb = pad[1:-1, :-1] != pad[1:-1, 1:]
    vj, vi = np.nonzero(vb)
    ij = np.concatenate([np.stack([hi, hj], 1), np.stack([vi, vj], 1)]) + np.array([i0, j0])
    direction = np.concatenate([np.zeros(len(hi), int), np.ones(len(vi), int)])
    mid = ij * hr + np.where(direction[:, None] == 0, [0.5 * hr, 0.0], [0.0, 0.5 * hr])
    tag = np.full(len(ij), DIRICHLET_WALL, dtype=int)
    owner = np.full(len(ij), -1, dtype=int)
    for b, fr in enumerate(frames):
        d = mid - np.asarray(fr.origin)
        a = d @ np.asarray(fr.axis)
        t = d @ np.asarray(fr.normal)
        inside = np.abs(t) < 0.5
        wall = inside & (a > fr.start - 1e-9) & (a < fr.length + 1e-9)
        if fr.axis_aligned:
            end = inside & (np.abs(a - fr.length) < 1e-9)
        else:
            end = inside & (a > fr.length - 1.5 * hr)
        owner[wall] = b
        tag[end] = NEUMANN_CUT if mesoscopic else FAR_END
        owner[end] = b
        # edges along the branch walls
        side = (np.abs(np.abs(t) - 0.5) < 1e-9) & (a > -1e-9) & (a < fr.length + 1e-9)
        owner[side & (tag == DIRICHLET_WALL)] = b
    return ij, direction, tag, owner


def build_waveguide(spec: WaveguideSpec, h: float) -> RasterDomain:
    """Rasterize the truncated waveguide of thickness ``spec.eps``.

    Parameters
    ----------
    spec : WaveguideSpec
    h : float
        Physical grid spacing; ``spec.eps / h`` must be an integer >= 8.

    Returns
    -------
    RasterDomain
        All boundary nodes are Dirichlet; far ends are tagged ``FarEnd``.
    """
    length = spec.truncation_length / spec.eps
    return _rasterize(spec, length, h / spec.eps, spec.eps, mesoscopic=False)


def build_mesoscopic(spec: WaveguideSpec, L: float, h: float) -> RasterDomain:
    """Rasterize the junction plus arms of length ``L`` in rescaled units.

    Each arm ends in a Neumann cut face. ``spec.eps`` is ignored.
    """
    if L < 2:
        raise ConfigError("mesoscopic arm length must be >= 2")
    return _rasterize(spec, float(L), h, 1.0, mesoscopic=True)


@dataclass(frozen=True)
class CutFace:
    """Nodes of one Neumann cut face, ordered by transverse coordinate.

    ``nodes`` includes the two Dirichlet corner points (index -1) so that the
    trapezoid ``weights`` integrate over the full width.
    """

    branch: int
    nodes: np.ndarray
    y: np.ndarray
    weights: np.ndarray

    @property
    def interior(self) -> np.ndarray:
        return self.nodes >= 0

    def trace(self, v: np.ndarray) -> np.ndarray:
        """Values of ``v`` on the face, zero at the corners."""
        out = np.zeros(len(self.nodes), dtype=np.result_type(v, float))
        ok = self.interior
        out[ok] = v[self.nodes[ok]]
        return out


def cut_faces(raster: RasterDomain) -> list[CutFace]:
    """Per-branch cut faces of a mesoscopic raster."""
    if not raster.mesoscopic:
        raise MissingCutFace("raster has no Neumann cut faces")
    faces = []
    N = raster.n_width
    for b in range(len(raster.branches)):
        grid = raster.branch_grid(b)
        inner = grid[-1]
        if np.any(inner < 0) or np.any(raster.node_face[inner] != b):
            raise MissingCutFace(f"branch {b} has no complete cut face")
        nodes = np.concatenate([[-1], inner, [-1]])
        y = np.arange(N + 1) * raster.h
        w = np.full(N + 1, raster.h)
        w[[0, -1]] = raster.h / 2
        for a in (nodes, y, w):
            a.setflags(write=False)
        faces.append(CutFace(b, nodes, y, w))
    return faces


def save_raster(path, raster: RasterDomain) -> None:
    """Write a raster as an ``.npz`` archive (arrays plus a JSON ``meta`` entry)."""
    meta = {
        "kind": raster.kind,
        "spec": raster.spec,
        "h": raster.h,
        "scale": raster.scale,
        "n_width": raster.n_width,
        "lattice_origin": list(raster.lattice_origin),
        "branches": [b.to_dict() for b in raster.branches],
        "mesoscopic": raster.mesoscopic,
    }
    np.savez_compressed(
        path,
        meta=np.array(json.dumps(meta)),
        cells=raster.cells,
        node_index=raster.node_index,
        node_ij=raster.node_ij,
        node_cells=raster.node_cells,
        node_face=raster.node_face,
        edge_ij=raster.edge_ij,
        edge_dir=raster.edge_dir,
        edge_tag=raster.edge_tag,
        edge_branch=raster.edge_branch,
    )


def load_raster(path) -> RasterDomain:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        arrays = {k: z[k] for k in z.files if k != "meta"}
    for a in arrays.values():
        a.setflags(write=False)
    return RasterDomain(
        kind=meta["kind"],
        spec=meta["spec"],
        h=meta["h"],
        scale=meta["scale"],
        n_width=meta["n_width"],
        lattice_origin=tuple(meta["lattice_origin"]),
        branches=tuple(BranchFrame.from_dict(b) for b in meta["branches"]),
        mesoscopic=meta["mesoscopic"],
        **arrays,
    )


def build_mask(cells: np.ndarray, h: float) -> RasterDomain:
    """All-Dirichlet raster of an arbitrary cell mask with spacing ``h``.

    ``cells[j, i]`` marks the cell ``[i*h, (i+1)*h] x [j*h, (j+1)*h]``. The
    result has no branches; it is meant for plain Dirichlet Laplacians.
    """
    cells = np.asarray(cells, dtype=bool).copy()
    _, ncomp = ndimage.label(cells)
    if ncomp != 1:
        raise NonConnectedDomain(f"mask splits into {ncomp} components")
    padded = np.pad(cells.astype(int), 1)
    counts = padded[:-1, :-1] + padded[1:, :-1] + padded[:-1, 1:] + padded[1:, 1:]
    unknown = counts == 4
    if not unknown.any():
        raise ResolutionTooCoarse("mask has no interior nodes")
    node_index = np.full(counts.shape, -1, dtype=int)
    jj, ii = np.nonzero(unknown)
    node_index[jj, ii] = np.arange(len(jj))
    node_ij = np.stack([ii, jj], axis=1)
    edges = _boundary_edges(cells, 0, 0, [], 1, False)
    arrays = [cells, node_index, node_ij, counts[jj, ii], np.full(len(jj), -1), *edges]
    for a in arrays:
        a.setflags(write=False)
    n_width = max(1, int(round(1.0 / h)))
    return RasterDomain(
        kind="Mask", spec={}, h=float(h), scale=float(h) * n_width, n_width=n_width,
        lattice_origin=(0, 0), cells=cells, node_index=node_index, node_ij=node_ij,
        node_cells=arrays[3], node_face=arrays[4], branches=(), mesoscopic=False,
        edge_ij=edges[0], edge_dir=edges[1], edge_tag=edges[2], edge_branch=edges[3],
    )
