import numpy as np
import pytest

from vinr.geometry import (
    GeometryError,
    PointCloud,
    ScalarGrid,
    TriangleMesh,
    fit_transform,
    load_mesh,
    load_point_cloud,
    point_to_mesh_distance,
    proportional_counts,
    read_grid,
    sample_surface,
    save_mesh,
    save_point_cloud,
    signed_distance_to_mesh,
    write_grid,
)
from vinr.synthetic import icosphere


def cube_obj(path):
    verts = [
        (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
        (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
    ]
    faces = [
        (1, 3, 2), (1, 4, 3), (5, 6, 7), (5, 7, 8),
        (1, 2, 6), (1, 6, 5), (2, 3, 7), (2, 7, 6),
        (3, 4, 8), (3, 8, 7), (4, 1, 5), (4, 5, 8),
    ]
    with open(path, "w") as f:
        for v in verts:
            f.write(f"v {v[0]} {v[1]} {v[2]}\n")
        for a, b, c in faces:
            f.write(f"f {a} {b} {c}\n")


class TestPointCloudIO:
    def test_parse_two_points(self, tmp_path):
        p = tmp_path / "a.xyz"
        p.write_text("0 0 0\n1 2 3\n")
        cloud = load_point_cloud(p)
        assert len(cloud) == 2
        np.testing.assert_array_equal(cloud.points[1], [1, 2, 3])

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.xyz"
        p.write_text("")
        assert len(load_point_cloud(p)) == 0

    def test_nan_reports_line_number(self, tmp_path):
        p = tmp_path / "bad.xyz"
        p.write_text("0 0 nan\n")
        with pytest.raises(GeometryError, match=":1"):
            load_point_cloud(p)

    def test_comments_and_roundtrip(self, tmp_path):
        p = tmp_path / "c.xyz"
        p.write_text("# header\n0.5 -1.25 3e-2\n")
        cloud = load_point_cloud(p)
        out = tmp_path / "out.xyz"
        save_point_cloud(cloud, out)
        again = load_point_cloud(out)
        np.testing.assert_array_equal(cloud.points, again.points)

    def test_wrong_column_count(self, tmp_path):
        p = tmp_path / "bad.xyz"
        p.write_text("1 2\n")
        with pytest.raises(GeometryError, match=":1"):
            load_point_cloud(p)


class TestMeshIO:
    def test_unit_cube(self, tmp_path):
        p = tmp_path / "cube.obj"
        cube_obj(p)
        mesh = load_mesh(p)
        assert mesh.num_vertices == 8
        assert mesh.num_triangles == 12

    def test_index_out_of_range(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
        with pytest.raises(GeometryError):
            load_mesh(p)

    def test_zero_index_rejected(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n")
        with pytest.raises(GeometryError):
            load_mesh(p)

    def test_non_triangular_face(self, tmp_path):
        p = tmp_path / "quad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        with pytest.raises(GeometryError):
            load_mesh(p)

    def test_icosphere_roundtrip(self, tmp_path):
        mesh = icosphere(2)
        p = tmp_path / "ico.obj"
        save_mesh(mesh, p)
        again = load_mesh(p)
        assert again.num_triangles == mesh.num_triangles
        assert np.max(np.abs(again.vertices - mesh.vertices)) < 1e-6

    def test_unknown_records_warn(self, tmp_path):
        p = tmp_path / "n.obj"
        p.write_text("vn 0 0 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        with pytest.warns(UserWarning, match="ignored"):
            mesh = load_mesh(p)
        assert mesh.num_triangles == 1


class TestSampling:
    def test_zero_samples(self):
        mesh = icosphere(1)
        assert len(sample_surface(mesh, 0, seed=1)) == 0

    def test_samples_lie_on_mesh(self):
        mesh = icosphere(1)
        cloud = sample_surface(mesh, 50, seed=2)
        d = point_to_mesh_distance(cloud.points, mesh)
        assert d.max() < 1e-9

    def test_area_proportional_selection(self):
        # two triangles with area ratio 1:3 in one plane
        verts = np.array(
            [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [0, 3, 1]],
            dtype=float,
        )
        tris = np.array([[0, 1, 2], [3, 4, 5]])
        mesh = TriangleMesh(verts, tris)
        n = 10_000
        cloud = sample_surface(mesh, n, seed=11)
        on_small = cloud.points[:, 2] < 0.5
        count = int(on_small.sum())
        p = 0.25
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(count - n * p) < 3 * sigma

    def test_determinism(self):
        mesh = icosphere(1)
        a = sample_surface(mesh, 100, seed=7)
        b = sample_surface(mesh, 100, seed=7)
        np.testing.assert_array_equal(a.points, b.points)

    def test_zero_area_mesh_rejected(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
        with pytest.raises(GeometryError):
            sample_surface(TriangleMesh(verts, np.array([[0, 1, 2]])), 5, seed=0)


class TestProportionalCounts:
    def test_equal_split(self):
        assert proportional_counts([1, 1], 10) == [5, 5]

    def test_hand_case(self):
        assert proportional_counts([1, 3], 8) == [2, 6]

    def test_sum_is_exact(self):
        assert sum(proportional_counts([1, 1, 1], 10)) == 10

    def test_empty_with_total_rejected(self):
        with pytest.raises(GeometryError):
            proportional_counts([], 3)


class TestTransform:
    def test_hand_case(self):
        cloud = PointCloud(np.array([[-2, -2, -2], [2, 2, 2]], dtype=float))
        t = fit_transform(cloud, 0.9)
        assert t.scale == pytest.approx(0.45)
        np.testing.assert_allclose(t.center, [0, 0, 0])

    def test_identity_up_to_centering(self):
        cloud = PointCloud(np.array([[-0.9, -0.9, -0.9], [0.9, 0.9, 0.9]]))
        t = fit_transform(cloud, 0.9)
        assert t.scale == pytest.approx(1.0)

    def test_containment(self):
        rng = np.random.default_rng(4)
        cloud = PointCloud(rng.uniform(-5, 13, size=(40, 3)))
        t = fit_transform(cloud, 0.9)
        mapped = t.apply(cloud.points)
        assert np.abs(mapped).max() <= 0.9 + 1e-12

    def test_apply_hand_case(self):
        from vinr.geometry import DomainTransform

        t = DomainTransform(scale=0.5, center=np.array([1.0, 0, 0]))
        np.testing.assert_allclose(t.apply(np.array([3.0, 0, 0])), [1, 0, 0])
        np.testing.assert_allclose(t.apply(t.center), [0, 0, 0])

    def test_roundtrip(self):
        from vinr.geometry import DomainTransform

        rng = np.random.default_rng(5)
        t = DomainTransform(scale=0.37, center=np.array([0.4, -2.0, 1.1]))
        pts = rng.uniform(-10, 10, size=(100, 3))
        back = t.invert(t.apply(pts))
        assert np.abs(back - pts).max() < 1e-12

    def test_degenerate_cloud_rejected(self):
        cloud = PointCloud(np.zeros((3, 3)))
        with pytest.raises(GeometryError):
            fit_transform(cloud)


class TestDistance:
    def test_vertex_distance_zero(self):
        mesh = icosphere(1)
        assert point_to_mesh_distance(mesh.vertices[0], mesh) == pytest.approx(0.0, abs=1e-12)

    def test_origin_to_unit_icosphere(self):
        mesh = icosphere(3)
        d = point_to_mesh_distance(np.zeros(3), mesh)
        assert abs(d - 1.0) < 5e-3

    def test_matches_scalar_brute_force(self):
        # oracle: per-triangle scalar closest-point computation
        mesh = icosphere(0)
        rng = np.random.default_rng(6)
        pts = rng.uniform(-2, 2, size=(200, 3))
        fast = point_to_mesh_distance(pts, mesh)
        a, b, c = mesh.triangle_corners()

        def closest_pt(p, a, b, c):
            ab, ac, ap = b - a, c - a, p - a
            d1, d2 = ab @ ap, ac @ ap
            if d1 <= 0 and d2 <= 0:
                return a
            bp = p - b
            d3, d4 = ab @ bp, ac @ bp
            if d3 >= 0 and d4 <= d3:
                return b
            vc = d1 * d4 - d3 * d2
            if vc <= 0 and d1 >= 0 and d3 <= 0:
                return a + (d1 / (d1 - d3)) * ab
            cp = p - c
            d5, d6 = ab @ cp, ac @ cp
            if d6 >= 0 and d5 <= d6:
                return c
            vb = d5 * d2 - d1 * d6
            if vb <= 0 and d2 >= 0 and d6 <= 0:
                return a + (d2 / (d2 - d6)) * ac
            va = d3 * d6 - d5 * d4
            if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
                return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b)
            denom = va + vb + vc
            return a + (vb / denom) * ab + (vc / denom) * ac

        for i, p in enumerate(pts):
            best = min(
                np.linalg.norm(p - closest_pt(p, a[t], b[t], c[t]))
                for t in range(mesh.num_triangles)
            )
            assert fast[i] == pytest.approx(best, abs=1e-12)

    def test_empty_mesh_rejected(self):
        mesh = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        with pytest.raises(GeometryError):
            point_to_mesh_distance(np.zeros(3), mesh)


class TestSignedDistance:
    def test_center_negative_one(self):
        mesh = icosphere(3)
        assert abs(signed_distance_to_mesh(np.zeros(3), mesh) + 1.0) < 5e-3

    def test_far_point_positive(self):
        mesh = icosphere(1)
        assert signed_distance_to_mesh(np.array([10.0, 0, 0]), mesh) > 0

    def test_sign_flips_across_surface(self):
        mesh = icosphere(2)
        xs = np.linspace(0.013, 1.493, 30)  # avoid landing exactly on the surface
        pts = np.stack([xs, np.zeros_like(xs), np.zeros_like(xs)], axis=1)
        sd = signed_distance_to_mesh(pts, mesh)
        signs = np.sign(sd)
        # exactly one sign change along the ray
        assert int((np.diff(signs) != 0).sum()) == 1

    def test_magnitude_matches_unsigned(self):
        mesh = icosphere(1)
        rng = np.random.default_rng(8)
        pts = rng.uniform(-1.5, 1.5, size=(64, 3))
        sd = signed_distance_to_mesh(pts, mesh)
        ud = point_to_mesh_distance(pts, mesh)
        np.testing.assert_array_equal(np.abs(sd), ud)

    def test_similarity_scaling(self):
        mesh = icosphere(1)
        s, t = 2.5, np.array([0.3, -1.0, 0.7])
        scaled = TriangleMesh(s * mesh.vertices + t, mesh.triangles)
        rng = np.random.default_rng(9)
        pts = rng.uniform(-1.5, 1.5, size=(32, 3))
        sd = signed_distance_to_mesh(pts, mesh)
        sd_scaled = signed_distance_to_mesh(s * pts + t, scaled)
        np.testing.assert_allclose(sd_scaled, s * sd, rtol=1e-9, atol=1e-9)

    def test_open_mesh_rejected(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
        mesh = TriangleMesh(verts, np.array([[0, 1, 2]]))
        with pytest.raises(GeometryError, match="watertight"):
            signed_distance_to_mesh(np.zeros(3), mesh)


class TestGridIO:
    def test_small_grid_payload(self, tmp_path):
        g = ScalarGrid((2, 2, 2), np.zeros(3), np.ones(3), np.zeros((2, 2, 2)))
        p = tmp_path / "g.sdfgrid"
        write_grid(g, p)
        # header: 4s + u32 + 3*u32 + 6*f64, then 8 f32 values
        assert p.stat().st_size == (4 + 4 + 12 + 48) + 8 * 4

    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(10)
        vals = rng.normal(size=(3, 4, 5)).astype(np.float32)
        g = ScalarGrid((3, 4, 5), np.array([-1.0, -2, -3]), np.array([1.0, 2, 3]), vals)
        p = tmp_path / "g.sdfgrid"
        write_grid(g, p)
        back = read_grid(p)
        assert back.dims == g.dims
        np.testing.assert_array_equal(back.bbox_min, g.bbox_min)
        np.testing.assert_array_equal(back.bbox_max, g.bbox_max)
        np.testing.assert_array_equal(back.values, g.values)

    def test_truncated_file(self, tmp_path):
        g = ScalarGrid((2, 2, 2), np.zeros(3), np.ones(3), np.zeros((2, 2, 2)))
        p = tmp_path / "g.sdfgrid"
        write_grid(g, p)
        data = p.read_bytes()
        p.write_bytes(data[:-4])
        with pytest.raises(GeometryError, match="mismatch"):
            read_grid(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "g.sdfgrid"
        g = ScalarGrid((2, 2, 2), np.zeros(3), np.ones(3), np.zeros((2, 2, 2)))
        write_grid(g, p)
        data = bytearray(p.read_bytes())
        data[:4] = b"XXXX"
        p.write_bytes(bytes(data))
        with pytest.raises(GeometryError, match="magic"):
            read_grid(p)
