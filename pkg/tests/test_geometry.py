import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transolve.geometry import (
    angular_trace,
    build_grid_geometry,
    subdomain_index,
    subdomain_index_many,
    validate_parameter,
)

PI = np.pi


def geom_1d():
    return build_grid_geometry(1, cuts_x=[PI / 5, 2 * PI / 5, 3 * PI / 5, 4 * PI / 5], bounds=[(0, PI)])


def geom_2x2():
    return build_grid_geometry(2, cuts_x=[0.0], cuts_y=[0.0], bounds=[(-1, 1), (-1, 1)])


def geom_4x4():
    cuts = [-0.5, 0.0, 0.5]
    return build_grid_geometry(2, cuts_x=cuts, cuts_y=cuts, bounds=[(-1, 1), (-1, 1)])


def test_1d_layout_counts():
    g = geom_1d()
    assert g.n_subdomains == 5
    assert len(g.interfaces) == 4
    assert g.n_singular == 0


def test_2x2_layout_counts():
    g = geom_2x2()
    assert g.n_subdomains == 4
    assert len(g.interfaces) == 4
    assert g.n_singular == 1
    np.testing.assert_allclose(g.singular_vertices, [[0.0, 0.0]])


def test_4x4_layout_counts():
    g = geom_4x4()
    assert g.n_subdomains == 16
    assert len(g.interfaces) == 24
    assert g.n_singular == 9


def test_subdomain_index_top_left_is_first():
    g = geom_2x2()
    assert subdomain_index(g, (-0.5, 0.5)) == 0
    assert subdomain_index(g, (0.5, 0.5)) == 1
    assert subdomain_index(g, (-0.5, -0.5)) == 2
    assert subdomain_index(g, (0.5, -0.5)) == 3


def test_subdomain_index_1d_first_interval():
    assert subdomain_index(geom_1d(), PI / 10) == 0


def test_point_on_interface_rejected():
    with pytest.raises(ValueError):
        subdomain_index(geom_2x2(), (0.0, 0.3))
    with pytest.raises(ValueError):
        subdomain_index(geom_2x2(), (1.5, 0.3))


def test_bad_cuts_rejected():
    with pytest.raises(ValueError):
        build_grid_geometry(1, cuts_x=[2.0, 1.0], bounds=[(0, 3)])
    with pytest.raises(ValueError):
        build_grid_geometry(1, cuts_x=[0.5], bounds=[(1, 1)])
    with pytest.raises(ValueError):
        build_grid_geometry(2, cuts_x=[5.0], cuts_y=[0.0], bounds=[(-1, 1), (-1, 1)])


def test_angular_trace_quadrants_2x2():
    g = geom_2x2()
    p = (11.0, 22.0, 33.0, 44.0)
    sectors = angular_trace(g, p, 0)
    # Quadrant I (up-right) touches subdomain 1, II subdomain 0, III 2, IV 3.
    assert [s[2] for s in sectors] == [22.0, 11.0, 33.0, 44.0]
    starts = [s[0] for s in sectors]
    np.testing.assert_allclose(starts, [0, np.pi / 2, np.pi, 3 * np.pi / 2])


def test_angular_trace_constant():
    g = geom_2x2()
    sectors = angular_trace(g, np.full(4, 7.0), 0)
    assert all(s[2] == 7.0 for s in sectors)


def test_angular_trace_4x4_matches_point_queries():
    g = geom_4x4()
    rng = np.random.default_rng(0)
    p = rng.uniform(1, 10, size=16)
    eps = 1e-6
    for vid in range(g.n_singular):
        vx, vy = g.singular_vertices[vid]
        for lo, hi, pval in angular_trace(g, p, vid):
            mid = 0.5 * (lo + hi)
            probe = (vx + eps * np.cos(mid), vy + eps * np.sin(mid))
            assert pval == p[subdomain_index(g, probe)]


def test_angular_trace_requires_singular_vertex():
    with pytest.raises(ValueError):
        angular_trace(geom_2x2(), np.ones(4), 1)
    with pytest.raises(ValueError):
        angular_trace(geom_1d(), np.ones(5), 0)


def test_angular_sectors_cover_circle():
    sectors = angular_trace(geom_4x4(), np.arange(1.0, 17.0), 4)
    assert sectors[0][0] == 0.0
    assert sectors[-1][1] == pytest.approx(2 * np.pi)
    for (_, hi, _), (lo, _, _) in zip(sectors, sectors[1:]):
        assert hi == pytest.approx(lo)


@settings(max_examples=25, deadline=None)
@given(
    ncx=st.integers(0, 4),
    ncy=st.integers(0, 4),
    seed=st.integers(0, 10_000),
)
def test_tiling_and_vertex_count(ncx, ncy, seed):
    rng = np.random.default_rng(seed)
    cx = np.sort(rng.uniform(-0.9, 0.9, size=ncx))
    cy = np.sort(rng.uniform(-0.9, 0.9, size=ncy))
    if len(np.unique(np.round(cx, 12))) < ncx or len(np.unique(np.round(cy, 12))) < ncy:
        return
    g = build_grid_geometry(2, cuts_x=cx, cuts_y=cy, bounds=[(-1, 1), (-1, 1)])
    assert abs(g.subdomain_measures().sum() - g.volume) <= 1e-12 * g.volume
    assert g.n_singular == ncx * ncy
    # every interior crossing appears exactly once
    crossings = {(round(x, 12), round(y, 12)) for x in cx for y in cy}
    listed = {(round(x, 12), round(y, 12)) for x, y in g.singular_vertices}
    assert crossings == listed


def test_interface_sides_match_normal_orientation():
    g = geom_4x4()
    for ifc in g.interfaces:
        mid = ifc.midpoint()
        step = 1e-6
        n = np.zeros(2)
        n[ifc.axis] = 1.0
        assert subdomain_index(g, mid + step * n) == ifc.plus
        assert subdomain_index(g, mid - step * n) == ifc.minus


def test_interface_pairs_unique_and_shared():
    g = geom_4x4()
    pairs = {(ifc.minus, ifc.plus) for ifc in g.interfaces}
    assert len(pairs) == len(g.interfaces)
    assert all(m != p for m, p in pairs)


def test_validate_parameter():
    g = geom_1d()
    with pytest.raises(ValueError):
        validate_parameter(g, np.ones(4))
    with pytest.raises(ValueError):
        validate_parameter(g, [1, 2, -3, 4, 5])
    with pytest.raises(ValueError):
        validate_parameter(g, np.ones(5) * 100, p_min=0.1, p_max=50)
    validate_parameter(g, np.ones(5), p_min=0.5, p_max=2)


def test_subdomain_index_many_matches_scalar():
    g = geom_4x4()
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.99, 0.99, size=(200, 2))
    keep = np.all(np.abs(np.abs(pts) - 0.5) > 1e-6, axis=1) & np.all(np.abs(pts) > 1e-6, axis=1)
    pts = pts[keep]
    many = subdomain_index_many(g, pts)
    for x, idx in zip(pts, many):
        assert subdomain_index(g, x) == idx
