import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import random_rotation
from parallaxdepth.errors import BehindCameraError, DegenerateError
from parallaxdepth.geometry import (
    RelativePose,
    epipolar_distance,
    epipolar_line,
    epipole,
    fundamental_matrix,
    pixel_ray,
    project,
    relative_pose,
    unproject,
)
from parallaxdepth.maps import CameraFrame


def cam(R=np.eye(3), t=(0, 0, 0), fx=100.0, fy=100.0, cx=0.0, cy=0.0, fid=0):
    return CameraFrame(fid, fx, fy, cx, cy, 0.0, R, np.asarray(t, float))


def random_pair(seed):
    rng = np.random.default_rng(seed)
    a = cam(random_rotation(rng), rng.normal(size=3), fx=rng.uniform(50, 500), fy=rng.uniform(50, 500),
            cx=rng.uniform(0, 100), cy=rng.uniform(0, 100), fid=0)
    b = cam(random_rotation(rng, 0.3) @ a.rotation, rng.normal(size=3), fx=rng.uniform(50, 500),
            fy=rng.uniform(50, 500), cx=rng.uniform(0, 100), cy=rng.uniform(0, 100), fid=1)
    return a, b, rng


seeds = st.integers(0, 2**32 - 1)


class TestRelativePose:
    def test_same_frame_identity(self):
        a, _, _ = random_pair(1)
        rel = relative_pose(a, a)
        assert np.allclose(rel.rotation, np.eye(3), atol=1e-15) and np.allclose(rel.translation, 0, atol=1e-15)

    def test_sideways(self):
        rel = relative_pose(cam(), cam(t=(1, 0, 0)))
        assert np.array_equal(rel.translation, [1.0, 0.0, 0.0])

    @given(seeds)
    def test_round_trip_identity(self, seed):
        a, b, _ = random_pair(seed)
        c = relative_pose(a, b).compose(relative_pose(b, a))
        assert np.max(np.abs(c.rotation - np.eye(3))) < 1e-12
        assert np.max(np.abs(c.translation)) < 1e-12

    @given(seeds)
    def test_maps_reference_to_source_coordinates(self, seed):
        a, b, rng = random_pair(seed)
        X = rng.normal(size=3)
        rel = relative_pose(a, b)
        xa = a.rotation @ X + a.translation
        xb = b.rotation @ X + b.translation
        assert np.allclose(rel.apply(xa), xb, atol=1e-12)

    @given(seeds)
    def test_rigid_transform_invariance(self, seed):
        a, b, rng = random_pair(seed)
        G, g = random_rotation(rng), rng.normal(size=3)
        # world' = G world + g  ->  x_cam = R G^T (world' - g) + t
        def move(c):
            return cam(c.rotation @ G.T, c.translation - c.rotation @ G.T @ g, c.fx, c.fy, c.cx, c.cy, c.id)
        r1, r2 = relative_pose(a, b), relative_pose(move(a), move(b))
        assert np.allclose(r1.rotation, r2.rotation, atol=1e-12)
        assert np.allclose(r1.translation, r2.translation, atol=1e-11)


class TestProjection:
    def test_principal_point(self):
        assert np.array_equal(project([0, 0, 1], cam()), [0, 0])

    def test_offset(self):
        c = cam(fx=100, cx=50, cy=7)
        assert np.array_equal(project([1, 0, 2], c), [100, 7])

    @pytest.mark.parametrize("z", [0.0, -1.0])
    def test_behind(self, z):
        with pytest.raises(BehindCameraError):
            project([0, 0, z], cam())

    def test_round_trip_1000(self):
        rng = np.random.default_rng(7)
        c = cam(fx=321.0, fy=287.0, cx=160.0, cy=120.0)
        worst = 0.0
        for _ in range(1000):
            px = rng.uniform(0, 320, 2)
            d = rng.uniform(0.1, 100)
            worst = max(worst, float(np.max(np.abs(project(unproject(px, d, c), c) - px))))
        assert worst < 1e-9

    def test_pixel_ray_unit_and_through_point(self):
        a, _, rng = random_pair(11)
        px = np.array([12.5, 40.0])
        ray = pixel_ray(px, a)
        assert abs(np.linalg.norm(ray.direction) - 1) < 1e-12
        Xw = ray.origin + 3.0 * ray.direction
        assert np.allclose(project(a.rotation @ Xw + a.translation, a), px, atol=1e-9)


class TestEpipole:
    def test_sideways_at_infinity(self):
        assert epipole(relative_pose(cam(), cam(t=(-1, 0, 0))), cam()) is None

    def test_forward_at_principal_point(self):
        rel = RelativePose(np.eye(3), [0, 0, 1])
        assert np.allclose(epipole(rel, cam()), [0, 0])

    def test_zero_baseline(self):
        with pytest.raises(DegenerateError):
            epipole(RelativePose(np.eye(3), [0, 0, 0]), cam())

    @given(seeds)
    def test_on_every_epipolar_line(self, seed):
        a, b, rng = random_pair(seed)
        rel = relative_pose(a, b)
        e = epipole(rel, a)
        if e is None or np.max(np.abs(e)) > 1e6:
            return
        F = fundamental_matrix(rel, a, b)
        for _ in range(10):
            xs = np.array([*rng.uniform(0, 200, 2), 1.0])
            line = F.T @ xs  # epipolar line in the reference image
            d = abs(line @ [e[0], e[1], 1.0]) / np.hypot(line[0], line[1])
            assert d < 1e-6


class TestEpipolarDistance:
    @given(seeds)
    def test_true_correspondence_zero(self, seed):
        a, b, rng = random_pair(seed)
        rel = relative_pose(a, b)
        Xr = np.array([*rng.uniform(-1, 1, 2), rng.uniform(2, 10)])
        Xs = rel.apply(Xr)
        if Xs[2] <= 0.1:
            return
        assert epipolar_distance(project(Xr, a), project(Xs, b), rel, a, b) < 1e-9

    @given(seeds, st.floats(-5, 5))
    def test_perpendicular_offset(self, seed, off):
        a, b, rng = random_pair(seed)
        rel = relative_pose(a, b)
        Xr = np.array([*rng.uniform(-1, 1, 2), rng.uniform(2, 10)])
        Xs = rel.apply(Xr)
        if Xs[2] <= 0.1:
            return
        pr, ps = project(Xr, a), project(Xs, b)
        line = epipolar_line(pr, rel, a, b)
        normal = line[:2] / np.hypot(line[0], line[1])
        assert abs(epipolar_distance(pr, ps + off * normal, rel, a, b) - abs(off)) < 1e-9

    def test_two_pixel_offset(self):
        a, b = cam(cx=50, cy=50), cam(t=(-0.2, 0.05, 0.1), cx=50, cy=50, fid=1)
        rel = relative_pose(a, b)
        Xr = np.array([0.3, -0.2, 4.0])
        pr, ps = project(Xr, a), project(rel.apply(Xr), b)
        line = epipolar_line(pr, rel, a, b)
        n = line[:2] / np.hypot(line[0], line[1])
        assert abs(epipolar_distance(pr, ps + 2 * n, rel, a, b) - 2.0) < 1e-9

    @given(seeds)
    def test_translation_scale_invariance(self, seed):
        a, b, rng = random_pair(seed)
        rel = relative_pose(a, b)
        big = RelativePose(rel.rotation, 5 * rel.translation)
        pr, ps = rng.uniform(0, 100, 2), rng.uniform(0, 100, 2)
        d1 = epipolar_distance(pr, ps, rel, a, b)
        d2 = epipolar_distance(pr, ps, big, a, b)
        assert abs(d1 - d2) <= 1e-9 * max(1.0, d1)

    def test_degenerate_line(self):
        c = cam(cx=10, cy=10)
        rel = RelativePose(np.eye(3), [0, 0, 1])
        with pytest.raises(DegenerateError):
            epipolar_distance([10.0, 10.0], [3.0, 4.0], rel, c, c)
