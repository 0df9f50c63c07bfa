import numpy as np
import pytest

from starguide.errors import (ConfigError, GeometryError, MissingCutFace, NonConnectedDomain,
                              ResolutionTooCoarse)
from starguide.geometry import (NEUMANN_CUT, JunctionSpec, ShortBranchWarning, WaveguideSpec, build_mask,
                                build_mesoscopic, build_waveguide, cut_faces, load_raster, save_raster)


def test_strip_waveguide_node_count(strip):
    with pytest.warns(ShortBranchWarning):
        spec = strip.with_eps(1.0, 8.0)
    r = build_waveguide(spec, 1 / 16)
    expected = (8 * 16 * 2 + 16) * (16 - 1)
    assert abs(r.n - expected) <= 15
    assert len(r.branches) == 2


def test_lbend_is_union_of_rectangles(lbend):
    with pytest.warns(ShortBranchWarning):
        spec = lbend.with_eps(1.0, 8.0)
    r = build_waveguide(spec, 1 / 16)
    X, Y = r.rescaled_xy
    # junction square [-1/2, 1/2]^2, arms along +x and +y
    horiz = (X > -0.5) & (X < 8.5) & (np.abs(Y) < 0.5)
    vert = (Y > -0.5) & (Y < 8.5) & (np.abs(X) < 0.5)
    assert np.all(horiz | vert)
    assert r.n == 143 * 15 + 15 * 128


# Unknown count from an independent shapely rasterization of the analytic
# region (ring r1 < |x| < r2 union the three arm rectangles, cell-centre test,
# node kept when all 4 cells are inside), frozen here.
ANNULUS_NODES_H16 = 8960


def test_annulus_three_branches():
    ang = (0.0, 2 * np.pi / 3, 4 * np.pi / 3)
    spec = WaveguideSpec(JunctionSpec("AnnulusWithHole", r1=0.75, r2=1.75), branch_angles=ang)
    r = build_waveguide(spec, 1 / 16)
    X, Y = r.rescaled_xy
    assert np.all(X**2 + Y**2 > 0.75**2)
    assert r.n == ANNULUS_NODES_H16
    # mouth of the grid-aligned branch is 16 cells wide; the far end is Dirichlet
    g = r.branch_grid(0)
    assert g.shape[1] == 15
    assert np.all(g[:-1] >= 0) and np.all(g[-1] < 0)


def test_too_coarse(strip):
    with pytest.raises(ResolutionTooCoarse):
        build_mesoscopic(strip, 4, 1 / 4)


def test_disconnected_mask():
    bm = np.zeros((8, 8), dtype=bool)
    bm[:, :2] = bm[:, 6:] = True
    with pytest.raises(NonConnectedDomain):
        JunctionSpec("CustomMask", bitmap=bm, pixels_per_width=8, faces=(("left", 0),))


def test_unknown_kind():
    with pytest.raises(ConfigError):
        JunctionSpec("Triangle")


def test_short_truncation_warns(strip):
    with pytest.warns(ShortBranchWarning):
        strip.with_eps(1.0, 5.0)


def test_mesoscopic_strip_shape(strip):
    r = build_mesoscopic(strip, 4, 1 / 16)
    X, _ = r.rescaled_xy
    assert X.max() - X.min() == pytest.approx(9.0)
    assert r.n == (9 * 16 + 1) * 15
    assert np.sum(r.node_face >= 0) == 30


def test_mesoscopic_lbend_faces(lbend):
    r = build_mesoscopic(lbend, 4, 1 / 16)
    faces = cut_faces(r)
    assert len(faces) == 2
    for j, f in enumerate(faces):
        x, _ = r.branch_coordinates(j)
        assert np.allclose(x[f.nodes[f.interior]], 4.0)


def test_mesoscopic_nesting(lbend):
    small = build_mesoscopic(lbend, 4, 1 / 16)
    big = build_mesoscopic(lbend, 8, 1 / 16)
    assert np.all(big.lookup(small.node_ij) >= 0)
    assert small.n < big.n


def test_mesoscopic_needs_L(strip):
    with pytest.raises(ConfigError):
        build_mesoscopic(strip, 1.5, 1 / 16)


def test_cut_faces_strip(strip):
    faces = cut_faces(build_mesoscopic(strip, 4, 1 / 16))
    assert len(faces) == 2
    for f in faces:
        assert f.interior.sum() == 15
        assert abs(f.weights.sum() - 1.0) <= 1e-12
        assert np.all(np.diff(f.y) > 0)


def test_cut_faces_tjunction():
    spec = WaveguideSpec(JunctionSpec("TJunction"))
    assert len(cut_faces(build_mesoscopic(spec, 4, 1 / 16))) == 3


def test_cut_faces_roundtrip(tmp_path, lbend):
    r = build_mesoscopic(lbend, 4, 1 / 16)
    save_raster(tmp_path / "r.npz", r)
    r2 = load_raster(tmp_path / "r.npz")
    for a, b in zip(cut_faces(r), cut_faces(r2)):
        assert np.array_equal(a.nodes, b.nodes)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.y, b.y)


def test_waveguide_has_no_faces(strip):
    with pytest.raises(MissingCutFace):
        cut_faces(build_waveguide(strip.with_eps(1.0, 10.0), 1 / 8))


def test_self_similarity(lbend):
    a = build_waveguide(lbend.with_eps(0.5, 5.0), 0.5 / 16)
    b = build_waveguide(lbend.with_eps(0.25, 2.5), 0.25 / 16)
    assert np.array_equal(a.node_ij, b.node_ij)
    assert np.allclose(np.array(a.xy) / 0.5, np.array(b.xy) / 0.25)


def test_refinement_consistency(lbend):
    a = build_mesoscopic(lbend, 4, 1 / 8)
    b = build_mesoscopic(lbend, 4, 1 / 16)
    assert b.n > a.n
    assert a.tag_counts() == b.tag_counts()


def test_cut_normals_along_axis(lbend):
    r = build_mesoscopic(lbend, 4, 1 / 16)
    for j, fr in enumerate(r.branches):
        sel = (r.edge_tag == NEUMANN_CUT) & (r.edge_branch == j)
        # cut edges run transverse to the axis
        d = r.edge_dir[sel]
        along = 0 if abs(fr.axis[0]) > 0.5 else 1
        assert np.all(d != along)


def test_build_mask_rejects_split():
    cells = np.zeros((4, 9), dtype=bool)
    cells[:, :4] = cells[:, 5:] = True
    with pytest.raises(GeometryError):
        build_mask(cells, 0.1)
