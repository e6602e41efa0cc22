"""Structured mesh generation: geometry, tags and serialization."""

import numpy as np
import pytest

from emrom import generate_beam_mesh, generate_pullin_mesh
from emrom.mesh import load_mesh, save_mesh

from conftest import BEAM_GAP, BEAM_H, BEAM_L


def shoelace_area(mesh, tris):
    """Summed signed area of the corner triangles."""
    p = mesh.nodes[mesh.tris[tris][:, :3]]
    v1 = p[:, 1] - p[:, 0]
    v2 = p[:, 2] - p[:, 0]
    return 0.5 * np.sum(v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])


class TestBeamMesh:
    def test_counts_and_areas(self, air_mesh):
        nx, ny, n_air = 12, 2, 3
        solid = air_mesh.tris_where("SOLID")
        air = air_mesh.tris_where("AIR")
        assert len(solid) == 2 * nx * ny
        assert len(air) == 2 * nx * n_air
        np.testing.assert_allclose(shoelace_area(air_mesh, solid),
                                   BEAM_L * BEAM_H, rtol=1e-12)
        np.testing.assert_allclose(shoelace_area(air_mesh, air),
                                   BEAM_L * BEAM_GAP, rtol=1e-12)

    def test_solid_only_node_count(self, solid_mesh):
        # quadratic quads split into TRI6 pairs share the full P2 grid
        nx, ny = 16, 2
        assert solid_mesh.n_nodes == (2 * nx + 1) * (2 * ny + 1)
        assert len(solid_mesh.tris_where("AIR")) == 0

    def test_midside_nodes_centered(self, air_mesh):
        p = air_mesh.nodes[air_mesh.tris]
        for k in range(3):
            mid = 0.5 * (p[:, k] + p[:, (k + 1) % 3])
            np.testing.assert_allclose(p[:, 3 + k], mid, atol=1e-8)

    def test_triangles_counterclockwise(self, air_mesh):
        p = air_mesh.nodes[air_mesh.tris[:, :3]]
        v1 = p[:, 1] - p[:, 0]
        v2 = p[:, 2] - p[:, 0]
        area2 = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
        assert np.all(area2 > 0.0)

    def test_edge_tags_on_expected_lines(self, air_mesh):
        def line_coords(tag, axis):
            e = air_mesh.edges_where(tag)
            return np.unique(np.round(
                air_mesh.nodes[air_mesh.edges[e].ravel(), axis], 9))

        assert len(air_mesh.edges_where("CLAMP")) == 2 * 2
        np.testing.assert_allclose(line_coords("CLAMP", 0), [0.0, BEAM_L])
        assert len(air_mesh.edges_where("FACING")) == 12
        np.testing.assert_allclose(line_coords("FACING", 1), [BEAM_H])
        assert len(air_mesh.edges_where("ELECTRODE")) == 12
        np.testing.assert_allclose(line_coords("ELECTRODE", 1),
                                   [BEAM_H + BEAM_GAP])
        assert len(air_mesh.edges_where("OUTER")) == 2 * 3

    def test_facing_edges_also_surface(self, air_mesh):
        surf = set(air_mesh.edges_where("SOLID_SURFACE"))
        assert set(air_mesh.edges_where("FACING")) <= surf

    def test_psi_triangles_follow_layer_flag(self):
        full = generate_beam_mesh(BEAM_L, BEAM_H, BEAM_GAP, nx=6, ny=1,
                                  n_air=3, with_air=True)
        assert len(full.psi_tris()) == len(full.tris_where("AIR"))
        layered = generate_beam_mesh(BEAM_L, BEAM_H, BEAM_GAP, nx=6, ny=1,
                                     n_air=3, with_air=True, bl_rows=1)
        assert len(layered.psi_tris()) == 2 * 6
        # the flagged row hugs the moving surface
        ys = layered.nodes[layered.tris[layered.psi_tris()][:, :3], 1]
        assert ys.max() <= BEAM_H + BEAM_GAP / 3 + 1e-9

    def test_validate_passes(self, air_mesh, solid_mesh):
        air_mesh.validate()
        solid_mesh.validate()


class TestPullinMesh:
    def test_topology(self):
        m = generate_pullin_mesh(with_air=False)
        m.validate()
        clamp_x = np.unique(np.round(
            m.nodes[m.edges[m.edges_where("CLAMP")].ravel(), 0], 9))
        np.testing.assert_allclose(clamp_x, [-8.0, 8.0])  # w/2 + beam_len
        face_y = m.nodes[m.edges[m.edges_where("FACING")].ravel(), 1]
        np.testing.assert_allclose(face_y, 3.0)

    def test_solid_connected(self):
        """Support beams must attach to the mass, not float beside it."""
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components
        m = generate_pullin_mesh(with_air=False)
        t = m.tris[m.tris_where("SOLID")]
        i = np.repeat(t[:, :3], 3, axis=1).ravel()
        j = np.tile(t[:, :3], (1, 3)).ravel()
        adj = coo_matrix((np.ones_like(i), (i, j)),
                         shape=(m.n_nodes, m.n_nodes))
        n_comp, labels = connected_components(adj, directed=False)
        used = np.unique(t[:, :3])
        assert len(np.unique(labels[used])) == 1


class TestMeshIO:
    def test_round_trip(self, air_mesh, tmp_path):
        path = tmp_path / "m.txt"
        save_mesh(path, air_mesh)
        back = load_mesh(path)
        np.testing.assert_array_equal(back.nodes, air_mesh.nodes)
        np.testing.assert_array_equal(back.tris, air_mesh.tris)
        np.testing.assert_array_equal(back.tri_bl, air_mesh.tri_bl)
        np.testing.assert_array_equal(back.edges, air_mesh.edges)
        assert list(back.tri_domain) == list(air_mesh.tri_domain)
        assert back.edge_tags == air_mesh.edge_tags
        back.validate()

    def test_save_is_stable(self, solid_mesh, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        save_mesh(a, solid_mesh)
        save_mesh(b, load_mesh(a))
        assert a.read_bytes() == b.read_bytes()

    def test_load_rejects_noise(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("not a mesh\n")
        with pytest.raises(Exception):
            load_mesh(bad)
