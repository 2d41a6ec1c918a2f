import numpy as np
import pytest

from vinr.geometry import DomainTransform, GeometryError, PointCloud
from vinr.metrics import (
    average_surface_distance,
    dice,
    nesting_violation,
    padded_bbox,
    split_train_heldout,
)
from vinr.network import MlpArchitecture, MlpModel
from vinr.synthetic import Sphere, icosphere


def sphere_points(n, r, seed=0, center=(0, 0, 0)):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return PointCloud(r * v + np.asarray(center, dtype=float))


def two_plane_model(offset=0.2):
    """Two-channel net: f0(x) = x1, f1(x) = x1 - offset. Exact SDFs of two
    parallel half-spaces, handy for nesting checks."""
    arch = MlpArchitecture(hidden_layers=1, hidden_width=4, output_channels=2, skip_layer=1)
    w = np.array([1.0, 0.0, 0.0])
    weights = [
        np.vstack([w, -w, w, -w]),
        np.array([[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]]),
    ]
    biases = [np.zeros(4), np.array([0.0, -offset])]
    m = MlpModel(arch=arch, weights=weights, biases=biases)
    m.transform = DomainTransform(scale=1.0, center=np.zeros(3))
    return m


class TestPaddedBbox:
    def test_hand_case(self):
        lo, hi = padded_bbox([0.0, 0.0, 0.0], [2.0, 4.0, 1.0], 0.1)
        np.testing.assert_allclose(lo, [-0.2, -0.4, -0.1])
        np.testing.assert_allclose(hi, [2.2, 4.4, 1.1])


class TestDice:
    def test_identical_shapes(self):
        s = Sphere(radius=0.5)
        d = dice(s, s, (48, 48, 48), -np.ones(3), np.ones(3))
        assert d == 1.0

    def test_disjoint_shapes(self):
        a = Sphere(radius=0.2)
        b = Sphere(center=(0.8, 0.0, 0.0), radius=0.2)
        d = dice(a, b, (64, 64, 64), -1.5 * np.ones(3), 1.5 * np.ones(3))
        assert d == 0.0

    def test_offset_spheres_match_lens_volume(self):
        # two radius-0.5 spheres with centers 0.1 apart overlap in a lens of
        # volume pi*(4r+d)*(2r-d)^2/12; for equal spheres the Dice score is
        # that volume over the sphere volume
        r, off = 0.5, 0.1
        a = Sphere(radius=r)
        b = Sphere(center=(off, 0.0, 0.0), radius=r)
        lens = np.pi * (4 * r + off) * (2 * r - off) ** 2 / 12
        expect = lens / (4 / 3 * np.pi * r**3)
        d = dice(a, b, (96, 96, 96), -np.ones(3), np.ones(3))
        assert d == pytest.approx(expect, rel=0.02)

    def test_empty_pair_rejected(self):
        a = Sphere(radius=0.1)
        with pytest.raises(GeometryError):
            dice(a, a, (8, 8, 8), 2 * np.ones(3), 3 * np.ones(3))


class TestAverageSurfaceDistance:
    def test_points_on_mesh(self):
        mesh = icosphere(3, radius=0.5)
        # sample the held-out points from the mesh itself
        from vinr.geometry import sample_surface

        held = sample_surface(mesh, 300, seed=1)
        asd = average_surface_distance(mesh, held)
        assert asd < 1e-9

    def test_radial_offset_recovered(self):
        mesh = icosphere(3, radius=0.5)
        held = sphere_points(500, 0.6, seed=2)
        asd = average_surface_distance(mesh, held)
        assert asd == pytest.approx(0.1, rel=0.03)

    def test_source_is_extracted_then_measured(self):
        src = Sphere(radius=0.5)
        held = sphere_points(400, 0.5, seed=3)
        asd = average_surface_distance(src, held, dims=(96, 96, 96))
        assert asd < 5e-3

    def test_field_value_variant(self):
        src = Sphere(radius=0.5)
        held = sphere_points(100, 0.55, seed=4)
        asd = average_surface_distance(src, held, use_field_values=True)
        assert asd == pytest.approx(0.05, abs=1e-9)

    def test_explicit_bbox_respected(self):
        src = Sphere(radius=0.5)
        held = sphere_points(200, 0.5, seed=5)
        asd = average_surface_distance(
            src, held, dims=(64, 64, 64), bbox_min=-np.ones(3), bbox_max=np.ones(3)
        )
        assert asd < 5e-3

    def test_empty_heldout_rejected(self):
        with pytest.raises(GeometryError):
            average_surface_distance(icosphere(1), PointCloud(np.empty((0, 3))))

    def test_empty_level_set_rejected(self):
        src = Sphere(radius=0.05)
        held = sphere_points(10, 0.01, seed=6, center=(3.0, 3.0, 3.0))
        with pytest.raises(GeometryError):
            average_surface_distance(src, held, dims=(16, 16, 16))


class TestNestingViolation:
    def test_clean_ordering(self):
        m = two_plane_model(offset=0.2)
        # channel 1 is everywhere 0.2 below channel 0, so with channel 1
        # treated as outermost the ordering holds everywhere
        rep = nesting_violation(m, (16, 16, 16), -np.ones(3), np.ones(3))
        assert rep.fraction_violated == 0.0
        # grid storage is float32, so allow rounding of the gap
        assert rep.max_violation == pytest.approx(-0.2, abs=1e-6)

    def test_reversed_order_flags_everything(self):
        m = two_plane_model(offset=0.2)
        rep = nesting_violation(
            m, (16, 16, 16), -np.ones(3), np.ones(3), channel_order=[0, 1]
        )
        assert rep.fraction_violated == 1.0
        assert rep.max_violation == pytest.approx(0.2, abs=1e-6)

    def test_tolerance(self):
        m = two_plane_model(offset=0.2)
        rep = nesting_violation(
            m, (8, 8, 8), -np.ones(3), np.ones(3), channel_order=[0, 1], tolerance=0.5
        )
        assert rep.fraction_violated == 0.0
        assert rep.max_violation > 0

    def test_needs_two_channels(self):
        from test_network import linear_channel_model

        m = linear_channel_model([1.0, 0, 0])
        m.transform = DomainTransform(scale=1.0, center=np.zeros(3))
        with pytest.raises(GeometryError):
            nesting_violation(m, (8, 8, 8), -np.ones(3), np.ones(3))


class TestSplit:
    def test_sizes_and_recomposition(self):
        cloud = sphere_points(100, 1.0, seed=7)
        train, held = split_train_heldout(cloud, 70, seed=8)
        assert len(train) == 70 and len(held) == 30
        combined = np.concatenate([train.points, held.points])
        a = combined[np.lexsort(combined.T)]
        b = cloud.points[np.lexsort(cloud.points.T)]
        np.testing.assert_array_equal(a, b)

    def test_disjoint(self):
        cloud = sphere_points(50, 1.0, seed=9)
        train, held = split_train_heldout(cloud, 20, seed=10)
        tset = {tuple(p) for p in train.points}
        assert not any(tuple(p) in tset for p in held.points)

    def test_deterministic(self):
        cloud = sphere_points(40, 1.0, seed=11)
        a1, b1 = split_train_heldout(cloud, 25, seed=12)
        a2, b2 = split_train_heldout(cloud, 25, seed=12)
        np.testing.assert_array_equal(a1.points, a2.points)
        np.testing.assert_array_equal(b1.points, b2.points)

    def test_seed_matters(self):
        cloud = sphere_points(40, 1.0, seed=13)
        a1, _ = split_train_heldout(cloud, 20, seed=0)
        a2, _ = split_train_heldout(cloud, 20, seed=1)
        assert not np.array_equal(a1.points, a2.points)

    def test_bounds_checked(self):
        cloud = sphere_points(10, 1.0)
        with pytest.raises(GeometryError):
            split_train_heldout(cloud, 10, seed=0)
        with pytest.raises(GeometryError):
            split_train_heldout(cloud, -1, seed=0)
