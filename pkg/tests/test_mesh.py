import numpy as np
import pytest

from splitrom.errors import InvalidGeometry, ParseError
from splitrom.mesh import (
    BoundaryLabel,
    TriMesh,
    generate_bifurcated_tube,
    generate_channel,
    load_mesh,
    save_mesh,
)


def test_unit_square_area():
    m = generate_channel(1.0, 1.0, 2, 2)
    assert np.all(m.signed_areas() > 0)
    assert m.area() == pytest.approx(1.0, abs=1e-12)


def test_channel_perimeter():
    m = generate_channel(8.0, 1.0, 64, 8)
    assert m.boundary_length() == pytest.approx(18.0, abs=1e-10)


def test_channel_outlet_on_right_edge():
    m = generate_channel(4.0, 1.0, 32, 8)
    x = m.vertices[m.edges_with_label(BoundaryLabel.Outlet)][:, :, 0]
    assert np.all(np.abs(x - 4.0) <= 1e-12)


def test_channel_vertex_count_with_cell_centers():
    m = generate_channel(2.0, 1.0, 4, 3)
    assert m.n_vertices == 5 * 4 + 4 * 3
    assert m.n_triangles == 4 * 4 * 3


def test_channel_labels():
    m = generate_channel(2.0, 1.0, 4, 2)
    assert m.boundary_length(BoundaryLabel.InletDirichlet) == pytest.approx(1.0)
    assert m.boundary_length(BoundaryLabel.Outlet) == pytest.approx(1.0)
    assert m.boundary_length(BoundaryLabel.WallDirichlet) == pytest.approx(4.0)


@pytest.mark.parametrize("dims", [(0.0, 1.0, 4, 4), (1.0, -1.0, 4, 4), (1.0, 1.0, 1, 4)])
def test_channel_rejects_bad_input(dims):
    with pytest.raises(InvalidGeometry):
        generate_channel(*dims)


def test_bifurcated_area_and_outlets():
    m = generate_bifurcated_tube(64)
    assert m.area() == pytest.approx(5.80, abs=1e-8)
    assert m.boundary_length(BoundaryLabel.Outlet) == pytest.approx(0.7, abs=1e-10)
    assert m.boundary_length(BoundaryLabel.InletDirichlet) == pytest.approx(0.5, abs=1e-10)
    segs = m.boundary_segments(BoundaryLabel.Outlet)
    assert len(segs) == 2
    spans = sorted(tuple(np.round([m.vertices[m.boundary_edges[s].ravel(), 1].min(),
                                    m.vertices[m.boundary_edges[s].ravel(), 1].max()], 12))
                   for s in segs)
    assert spans == [(-0.5, -0.1), (0.2, 0.5)]


def test_bifurcated_coarsest_validates():
    generate_bifurcated_tube(16).validate()


def test_bifurcated_too_coarse():
    with pytest.raises(InvalidGeometry):
        generate_bifurcated_tube(8)


def test_round_trip(tmp_path):
    m = generate_channel(1.0, 1.0, 2, 2)
    path = tmp_path / "m.msh"
    save_mesh(m, path)
    assert load_mesh(path).same_as(m)


def test_round_trip_keeps_bits(tmp_path):
    m = generate_bifurcated_tube(16)
    save_mesh(m, tmp_path / "b.msh")
    assert np.array_equal(load_mesh(tmp_path / "b.msh").vertices, m.vertices)


def test_header_format(tmp_path):
    save_mesh(generate_channel(1.0, 1.0, 2, 2), tmp_path / "m.msh")
    lines = (tmp_path / "m.msh").read_text().splitlines()
    assert lines[0] == "MESH2D v1"
    assert lines[-1].split()[-1] in {"inlet", "wall", "outlet"}


def test_truncated_file(tmp_path):
    save_mesh(generate_channel(1.0, 1.0, 2, 2), tmp_path / "m.msh")
    text = (tmp_path / "m.msh").read_text().splitlines()
    (tmp_path / "t.msh").write_text("\n".join(text[:-3]) + "\n")
    with pytest.raises(ParseError):
        load_mesh(tmp_path / "t.msh")


def test_bad_header(tmp_path):
    (tmp_path / "x.msh").write_text("MESH3D\n1 1 1\n")
    with pytest.raises(ParseError):
        load_mesh(tmp_path / "x.msh")


def test_interior_edge_listed_as_boundary(tmp_path):
    m = generate_channel(1.0, 1.0, 2, 2)
    # an edge from a corner to its cell center is shared by two triangles
    tri = m.triangles[0]
    interior = None
    for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
        if not any({a, b} == set(e) for e in m.boundary_edges.tolist()):
            interior = (a, b)
            break
    lines = [f"{interior[0]} {interior[1]} wall"]
    save_mesh(m, tmp_path / "m.msh")
    text = (tmp_path / "m.msh").read_text().splitlines()
    nv, nt, nbe = map(int, text[1].split())
    text[1] = f"{nv} {nt} {nbe + 1}"
    (tmp_path / "bad.msh").write_text("\n".join(text + lines) + "\n")
    with pytest.raises(InvalidGeometry):
        load_mesh(tmp_path / "bad.msh")


def test_clockwise_triangle_rejected():
    verts = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    m = TriMesh(verts, np.array([[0, 1, 2]]), np.array([[0, 2], [2, 1], [1, 0]]), np.array([1, 1, 1]))
    with pytest.raises(InvalidGeometry):
        m.validate()


def test_slanted_outlet_rejected():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    m = TriMesh(verts, np.array([[0, 1, 2]]), np.array([[0, 1], [1, 2], [2, 0]]),
                np.array([1, int(BoundaryLabel.Outlet), 0]))
    with pytest.raises(InvalidGeometry):
        m.validate()
