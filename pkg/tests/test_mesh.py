import numpy as np
import pytest

from condensa.mesh import (Mesh, cell_geometry, read_mesh_text, refine,
                           unit_box_mesh, write_mesh_text)


def test_unit_square_one_cell_per_edge():
    m = unit_box_mesh(2, 1)
    assert m.n_cells == 2
    assert m.n_facets == 5
    assert int(m.boundary_flags.sum()) == 4


def test_unit_cube_kuhn():
    m = unit_box_mesh(3, 1)
    assert m.n_cells == 6
    assert abs(m.volumes.sum() - 1.0) < 1e-12


def test_counts_and_area_n4():
    # 2n^2 cells and n(3n+2) facets
    m = unit_box_mesh(2, 4)
    assert m.n_cells == 32
    assert m.n_facets == 56
    assert abs(m.volumes.sum() - 1.0) < 1e-12


@pytest.mark.parametrize("dim,n,cells", [(2, 3, 18), (3, 2, 48)])
def test_cell_count_formula(dim, n, cells):
    assert unit_box_mesh(dim, n).n_cells == cells


def test_invalid_arguments():
    with pytest.raises(ValueError):
        unit_box_mesh(2, 0)
    with pytest.raises(ValueError):
        unit_box_mesh(4, 2)


def test_refine_2d():
    m = refine(unit_box_mesh(2, 1))
    assert m.n_cells == 8
    assert abs(m.volumes.sum() - 1.0) < 1e-12


def test_refine_3d_children_within_parent_diameter():
    parent = unit_box_mesh(3, 1)
    child = refine(parent)
    assert child.n_cells == 48
    assert abs(child.volumes.sum() - parent.volumes.sum()) < 1e-12
    # children are nested: 8 children per parent, in parent order
    for c in range(child.n_cells):
        assert child.diameters[c] <= parent.diameters[c // 8] + 1e-14


@pytest.mark.parametrize("dim", [2, 3])
def test_refine_boundary_stays_on_parent_boundary(dim):
    parent = unit_box_mesh(dim, 2)
    child = refine(parent)
    bf = np.nonzero(child.boundary_flags)[0]
    pts = child.vertices[child.facets[bf]].reshape(-1, dim)
    on_bdry = np.isclose(pts, 0.0) | np.isclose(pts, 1.0)
    assert on_bdry.any(axis=1).all()


def test_cell_geometry_right_triangle():
    m = Mesh(2, np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
             np.array([[0, 1, 2]]))
    g = cell_geometry(m, 0)
    assert abs(g.volume - 0.5) < 1e-15
    assert abs(g.diameter - np.sqrt(2)) < 1e-15
    assert abs(g.boundary_measure - (2 + np.sqrt(2))) < 1e-14
    # hypotenuse normal
    hyp = int(np.argmax(g.facet_areas))
    assert np.abs(g.facet_normals[hyp] - np.array([1, 1]) / np.sqrt(2)).max() < 1e-14


def test_reference_tet_volume():
    m = Mesh(3, np.array([[0., 0., 0.], [1., 0., 0.], [0., 1., 0.], [0., 0., 1.]]),
             np.array([[0, 1, 2, 3]]))
    assert abs(cell_geometry(m, 0).volume - 1.0 / 6.0) < 1e-15


def test_degenerate_cell_rejected():
    with pytest.raises(ValueError):
        Mesh(2, np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), np.array([[0, 1, 2]]))


@pytest.mark.parametrize("dim,n", [(2, 4), (3, 2)])
def test_closed_surface_identity(dim, n):
    m = unit_box_mesh(dim, n)
    for c in range(m.n_cells):
        g = cell_geometry(m, c)
        s = (g.facet_areas[:, None] * g.facet_normals).sum(axis=0)
        assert np.abs(s).max() < 1e-12


@pytest.mark.parametrize("dim,n", [(2, 3), (3, 2)])
def test_facet_cell_incidence_consistency(dim, n):
    m = unit_box_mesh(dim, n)
    # every interior facet has two cells, boundary exactly one
    for f in range(m.n_facets):
        cells = [c for c in m.facet_cells[f] if c >= 0]
        assert len(cells) == (1 if m.boundary_flags[f] else 2)
        for c in cells:
            assert f in m.cell_facets[c]
    # stored normal is outward for the first adjacent cell
    for c in range(m.n_cells):
        centroid = m.vertices[m.cells[c]].mean(axis=0)
        for l, f in enumerate(m.cell_facets[c]):
            fc = m.vertices[m.facets[f]].mean(axis=0)
            n_out = m.facet_normals[f] * m.cell_facet_signs[c, l]
            assert n_out @ (fc - centroid) > 0


def test_positive_orientation():
    m = unit_box_mesh(3, 2)
    e = m.vertices[m.cells[:, 1:]] - m.vertices[m.cells[:, :1]]
    assert np.linalg.det(e).min() > 0


def test_text_round_trip(tmp_path):
    m = unit_box_mesh(2, 2)
    path = tmp_path / "mesh.txt"
    write_mesh_text(m, path)
    m2 = read_mesh_text(path)
    assert np.array_equal(m.cells, m2.cells)
    assert np.abs(m.vertices - m2.vertices).max() == 0.0
    assert m2.n_facets == m.n_facets


def test_box_origin_extent():
    m = unit_box_mesh(2, 2, origin=(-1.0, -1.0), extent=(2.0, 2.0))
    assert abs(m.volumes.sum() - 4.0) < 1e-12
    assert m.vertices.min() == -1.0 and m.vertices.max() == 1.0
