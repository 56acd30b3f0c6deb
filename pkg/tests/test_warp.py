import numpy as np
import pytest

from parallaxdepth import synth
from parallaxdepth.errors import DataError, ParameterError, ShapeError
from parallaxdepth.geometry import relative_pose
from parallaxdepth.maps import CameraFrame, RegionMask, ScalarMap
from parallaxdepth.synth import Plane, SceneSpec, Sphere, Texture
from parallaxdepth.warp import defocus, remove_people, reproject

CLOSURE_TOL = 1e-3
SMOOTH_TAU = 2e-3  # max per-channel |4-neighbour Laplacian| of the target image


def same_surface(frame, r=3):
    """Pixels whose (2r+1)^2 neighbourhood lies on one primitive with a near-constant normal."""
    ids, n = frame.ids, frame.normals
    h, w = ids.shape
    P = np.pad(ids, r, constant_values=-2)
    N = np.pad(n, ((r, r), (r, r), (0, 0)))
    ok = ids >= 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            ii = P[r + dy:r + dy + h, r + dx:r + dx + w]
            nn = N[r + dy:r + dy + h, r + dx:r + dx + w]
            ok &= (ii == ids) & (np.einsum("ijk,ijk->ij", nn, n) >= 1 - 1e-3)
    return ok


def smooth_texture(img, tau=SMOOTH_TAU):
    lap = np.full(img.shape[:2], np.inf)
    c = img[1:-1, 1:-1]
    lap[1:-1, 1:-1] = np.abs(img[2:, 1:-1] + img[:-2, 1:-1] + img[1:-1, 2:] + img[1:-1, :-2] - 4 * c).max(axis=2)
    return lap <= tau


def closure_selection(scene, src, tgt, rep):
    target = synth.render_frame(scene, tgt)
    back = synth.render_flow(scene, tgt, src)
    covisible = back.valid & rep.coverage.valid
    covisible &= np.abs(rep.coverage.values - target.depth.values) <= 1e-6 * target.depth.values
    return target, covisible & same_surface(target) & smooth_texture(target.rgb)


def closure_error(seed, motion, size=128, baseline=0.15):
    scene = synth.make_scene(seed=seed, width=size, height=size, motion=motion, baseline=baseline)
    a = synth.render_frame(scene, 0)
    rep = reproject(a.rgb, a.depth, relative_pose(scene.frames[0], scene.frames[1]), scene.frames[0], scene.frames[1])
    target, sel = closure_selection(scene, 0, 1, rep)
    return float(np.abs(rep.rgb - target.rgb).max(axis=2)[sel].max()), float(sel.mean())


class TestReproject:
    def test_identity_exact(self):
        scene = synth.make_scene(seed=0, width=32, height=24)
        f = synth.render_frame(scene, 0)
        cam = scene.frames[0]
        rep = reproject(f.rgb, f.depth, relative_pose(cam, cam), cam, cam)
        assert np.array_equal(rep.rgb[f.depth.valid], f.rgb[f.depth.valid])
        assert rep.coverage.equals(f.depth)

    @pytest.mark.parametrize("motion", ["sideways", "forward", "diagonal"])
    def test_closure(self, motion):
        err, frac = closure_error(1, motion)
        assert frac > 0.3 and err < CLOSURE_TOL

    def test_small_translation_nearly_identity(self):
        # rasterizing the mesh at a tiny offset reproduces almost every pixel
        scene = synth.make_scene(seed=2, width=48, height=48, baseline=1e-6, human=False)
        a = synth.render_frame(scene, 0)
        rep = reproject(a.rgb, a.depth, relative_pose(scene.frames[0], scene.frames[1]),
                        scene.frames[0], scene.frames[1])
        inner = np.zeros(a.depth.shape, bool)
        inner[2:-2, 2:-2] = True
        assert rep.coverage.valid[inner & same_surface(a)].all()

    def test_disocclusion_hole(self):
        w = h = 41
        cams = [CameraFrame(k, 41.0, 41.0, 20.0, 20.0, 0.0, np.eye(3), -np.array([0.4 * k, 0, 0]))
                for k in range(2)]
        scene = SceneSpec([Plane(point=(0, 0, 5), normal=(0, 0, -1)), Sphere(center=(0, 0, 2), radius=0.4)],
                          cams, w, h)
        a, b = synth.render_frame(scene, 0), synth.render_frame(scene, 1)
        rep = reproject(a.rgb, a.depth, relative_pose(cams[0], cams[1]), cams[0], cams[1])
        hole = b.depth.valid & ~rep.coverage.valid
        # background the first camera could not see stays mostly uncovered
        unseen = (b.ids == 0) & ~synth.render_flow(scene, 1, 0).valid
        unseen[:, :2] = unseen[:, -2:] = False
        assert unseen.sum() > 10
        assert (hole & unseen).sum() >= 0.8 * unseen.sum()

    def test_z_buffer_keeps_nearest(self):
        cams = [CameraFrame(k, 41.0, 41.0, 20.0, 20.0, 0.0, np.eye(3), -np.array([0.2 * k, 0, 0]))
                for k in range(2)]
        scene = SceneSpec([Plane(point=(0, 0, 5), normal=(0, 0, -1)), Sphere(center=(0, 0, 2), radius=0.6)],
                          cams, 41, 41)
        a, b = synth.render_frame(scene, 0), synth.render_frame(scene, 1)
        rep = reproject(a.rgb, a.depth, relative_pose(cams[0], cams[1]), cams[0], cams[1])
        inner = b.ids == 1
        inner[1:-1, 1:-1] &= (b.ids[:-2, 1:-1] == 1) & (b.ids[2:, 1:-1] == 1) & (b.ids[1:-1, :-2] == 1) & (b.ids[1:-1, 2:] == 1)
        sphere_px = inner & rep.coverage.valid
        assert sphere_px.sum() > 50
        assert np.all(rep.coverage.values[sphere_px] < 3)

    def test_gray_image(self):
        scene = synth.make_scene(seed=0, width=16, height=16)
        f = synth.render_frame(scene, 0)
        rel = relative_pose(scene.frames[0], scene.frames[1])
        rep = reproject(f.rgb[..., 0], f.depth, rel, scene.frames[0], scene.frames[1])
        assert rep.rgb.shape == (16, 16)

    def test_errors(self):
        scene = synth.make_scene(seed=0, width=8, height=8)
        f = synth.render_frame(scene, 0)
        cam = scene.frames[0]
        rel = relative_pose(cam, scene.frames[1])
        with pytest.raises(ShapeError):
            reproject(f.rgb[:4], f.depth, rel, cam, cam)
        with pytest.raises(DataError):
            reproject(f.rgb, f.depth.with_validity(np.zeros((8, 8), bool)), rel, cam, cam)


def people_scene(baseline=0.3, human_frames=(0, 0), size=48):
    cams = [synth.camera(k, (baseline * k, 0, 0), (baseline * k, 0, 5), size, size) for k in range(4)]
    smooth = Texture("sine", 0.3, 0.5, (0.1, 0.2, 0.3))
    return SceneSpec([Plane(texture=smooth, point=(0, 0, 5), normal=(0, 0, -1)),
                      Sphere(color=(0.9, 0.5, 0.4), human=True, center=(0, 0, 3), radius=0.5, frames=human_frames)],
                     cams, size, size)


def people_frames(scene):
    out = []
    for k, cam in enumerate(scene.frames):
        f = synth.render_frame(scene, k)
        out.append((f.rgb, f.depth, f.mask, cam))
    return out


class TestRemovePeople:
    def test_disappearing_person(self):
        scene = people_scene()
        frames = people_frames(scene)
        res = remove_people(frames, 0)
        human = frames[0][2].human
        clean = SceneSpec(scene.primitives[:1], scene.frames, scene.width, scene.height)
        truth = synth.render_frame(clean, 0).rgb
        filled = human & ~res.residual
        assert filled.sum() > 0.9 * human.sum()
        assert np.abs(res.rgb[filled] - truth[filled]).max() < 1e-2
        assert np.array_equal(res.rgb[~human], frames[0][0][~human])

    def test_never_revealed(self):
        scene = people_scene(baseline=0.0, human_frames=None)
        frames = people_frames(scene)
        res = remove_people(frames, 0, window=3)
        assert np.array_equal(res.residual, frames[0][2].human)

    def test_empty_mask_identity(self):
        scene = people_scene()
        frames = people_frames(scene)
        rgb, depth, _, cam = frames[0]
        frames[0] = (rgb, depth, RegionMask.empty(*depth.shape), cam)
        res = remove_people(frames, 0)
        assert np.array_equal(res.rgb, rgb) and not res.residual.any()

    def test_window_limits_search(self):
        scene = people_scene(human_frames=(0, 1))
        frames = people_frames(scene)
        # frame 1 still has the person in place, so window 1 cannot see behind it
        assert remove_people(frames, 0, window=1).residual.sum() > remove_people(frames, 0, window=3).residual.sum()

    def test_bad_window(self):
        with pytest.raises(ParameterError):
            remove_people(people_frames(people_scene()), 0, window=0)


def split_depth(h, w, near=1.0, far=8.0):
    d = np.full((h, w), near)
    d[:, w // 2:] = far
    return ScalarMap(d, np.ones((h, w), bool))


def high_band_power(img):
    spec = np.abs(np.fft.fft2(img - img.mean())) ** 2
    fy = np.abs(np.fft.fftfreq(img.shape[0]))[:, None]
    fx = np.abs(np.fft.fftfreq(img.shape[1]))[None, :]
    return spec[np.maximum(fy, fx) > 0.125].sum()  # above a quarter of Nyquist (0.5 cycles/px)


class TestDefocus:
    def test_zero_radius(self):
        img = np.random.default_rng(0).random((10, 12, 3))
        assert np.array_equal(defocus(img, split_depth(10, 12), 1.0, 0.0), img)

    def test_all_in_focus(self):
        img = np.random.default_rng(0).random((10, 12, 3))
        d = ScalarMap(np.full((10, 12), 2.5), np.ones((10, 12), bool))
        assert np.array_equal(defocus(img, d, 2.5, 4.0), img)

    def test_far_region_loses_high_frequencies(self):
        img = np.random.default_rng(1).random((64, 64, 3))
        out = defocus(img, split_depth(64, 64), 1.0, 4.0)
        far = (slice(8, 56), slice(40, 56))
        near = (slice(8, 56), slice(8, 24))
        before, after = high_band_power(img[far][..., 0]), high_band_power(out[far][..., 0])
        assert after < 0.5 * before
        assert np.array_equal(out[near], img[near])

    def test_mean_preserved(self):
        rng = np.random.default_rng(2)
        img = rng.random((48, 48, 3))
        d = ScalarMap(np.exp(rng.normal(size=(48, 48))), np.ones((48, 48), bool))
        out = defocus(img, d, 1.0, 3.0)
        assert np.all(np.abs(out.mean(axis=(0, 1)) / img.mean(axis=(0, 1)) - 1) < 0.01)

    def test_constant_image_unchanged(self):
        img = np.full((9, 9), 0.7)
        out = defocus(img, split_depth(9, 9), 1.0, 3.0)
        assert np.allclose(out, 0.7, atol=1e-15)

    def test_errors(self):
        img = np.zeros((4, 4, 3))
        d = split_depth(4, 4)
        with pytest.raises(ParameterError):
            defocus(img, d, 1.0, -1.0)
        with pytest.raises(ParameterError):
            defocus(img, d, 0.0, 1.0)
        with pytest.raises(ShapeError):
            defocus(img[:3], d, 1.0, 1.0)
