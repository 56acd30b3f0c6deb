"""Analytic ray-cast scenes with exact depth, flow, human masks and shaded color.

Rays are cast with camera-frame directions of unit z, so the ray parameter
of a hit is directly its depth. Surface color is a function of the
(object-local) surface point and a fixed world light only, which makes it
view independent: warping one rendered frame into another reproduces the
second frame up to resampling error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._parallel import run_rows
from .errors import ParameterError, SchemaError
from .geometry import camera_rays, pixel_grid
from .maps import CameraFrame, FlowMap, RegionMask, ScalarMap, parse_frames

HIT_EPS = 1e-9
OCCLUSION_TOL = 1e-6


@dataclass(frozen=True)
class Texture:
    """``kind`` is "sine" (smooth random-phase sinusoids), "checker" or "flat"."""

    kind: str = "sine"
    frequency: float = 1.0  # cycles per world unit
    amplitude: float = 0.5
    phase: tuple = (0.0, 0.0, 0.0)

    def pattern(self, local: np.ndarray) -> np.ndarray:
        """Texture modulation in [0, 1] at object-local points (..., 3)."""
        if self.kind == "flat":
            return np.ones(local.shape[:-1])
        w = 2 * np.pi * self.frequency
        if self.kind == "sine":
            s = sum(np.sin(w * local[..., k] + self.phase[k]) for k in range(3))
            return 0.5 + s / 6.0
        if self.kind == "checker":
            cells = np.floor(self.frequency * local + np.asarray(self.phase)).astype(np.int64)
            return (cells.sum(axis=-1) % 2).astype(np.float64)
        raise ParameterError(f"unknown texture kind {self.kind!r}")

    def shade(self, base: np.ndarray, local: np.ndarray) -> np.ndarray:
        t = self.pattern(local)
        return base * (1.0 - self.amplitude + self.amplitude * t)[..., None]


@dataclass(frozen=True, eq=False)
class Primitive:
    """Common fields: base color, texture, human tag, scripted per-frame
    velocity (humans only) and an optional inclusive frame range of existence."""

    color: tuple = (0.8, 0.8, 0.8)
    texture: Texture = field(default_factory=Texture)
    human: bool = False
    velocity: tuple = (0.0, 0.0, 0.0)
    frames: Optional[tuple] = None

    def exists(self, t: int) -> bool:
        return self.frames is None or self.frames[0] <= t <= self.frames[1]

    def offset(self, t: int, frozen: bool) -> np.ndarray:
        if not self.human or frozen:
            return np.zeros(3)
        return np.asarray(self.velocity, dtype=np.float64) * t

    def intersect(self, origin: np.ndarray, dirs: np.ndarray):
        """Ray parameters (N,) with inf on miss, and unit normals (N, 3)."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Plane(Primitive):
    point: tuple = (0.0, 0.0, 0.0)
    normal: tuple = (0.0, 0.0, -1.0)
    lo: Optional[tuple] = None  # optional axis-aligned clip box of the plane
    hi: Optional[tuple] = None

    def intersect(self, origin, dirs):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((np.asarray(self.point) - origin) @ n) / denom
        ok = (np.abs(denom) > 1e-15) & (t > HIT_EPS)
        if self.lo is not None:
            p = origin + t[:, None] * dirs
            ok &= np.all(p >= np.asarray(self.lo) - 1e-12, axis=1) & np.all(p <= np.asarray(self.hi) + 1e-12, axis=1)
        normals = np.broadcast_to(np.where((denom > 0)[:, None], -n, n), dirs.shape)
        return np.where(ok, t, np.inf), normals


@dataclass(frozen=True, eq=False)
class Box(Primitive):
    lo: tuple = (-0.5, -0.5, 1.5)
    hi: tuple = (0.5, 0.5, 2.5)

    def intersect(self, origin, dirs):
        lo, hi = np.asarray(self.lo, dtype=np.float64), np.asarray(self.hi, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (lo - origin) * inv
            t2 = (hi - origin) * inv
        # zero direction components: inside the slab -> unconstrained, outside -> miss
        zero = dirs == 0
        inside = (origin >= lo) & (origin <= hi)
        tmin_axis = np.where(zero, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        tmax_axis = np.where(zero, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        tnear = tmin_axis.max(axis=1)
        tfar = tmax_axis.min(axis=1)
        hit = (tnear <= tfar) & (tfar > HIT_EPS)
        t = np.where(tnear > HIT_EPS, tnear, tfar)
        axis_near = np.argmax(tmin_axis, axis=1)
        axis_far = np.argmin(tmax_axis, axis=1)
        axis = np.where(tnear > HIT_EPS, axis_near, axis_far)
        normals = np.zeros(dirs.shape)
        rows = np.arange(len(dirs))
        normals[rows, axis] = -np.sign(dirs[rows, axis])
        return np.where(hit, t, np.inf), normals


@dataclass(frozen=True, eq=False)
class Sphere(Primitive):
    center: tuple = (0.0, 0.0, 2.0)
    radius: float = 0.5

    def intersect(self, origin, dirs):
        c = np.asarray(self.center, dtype=np.float64)
        oc = origin - c
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = dirs @ oc
        cc = oc @ oc - self.radius ** 2
        disc = b * b - a * cc
        sq = np.sqrt(np.maximum(disc, 0.0))
        # numerically stable roots
        q = -(b + np.copysign(sq, b))
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = q / a
            r2 = cc / q
        t_lo = np.minimum(r1, r2)
        t_hi = np.maximum(r1, r2)
        t = np.where(t_lo > HIT_EPS, t_lo, t_hi)
        ok = (disc >= 0) & (t > HIT_EPS)
        t = np.where(ok, t, np.inf)
        p = origin + np.where(ok, t, 0.0)[:, None] * dirs
        normals = (p - c) / self.radius
        return t, normals


@dataclass(frozen=True, eq=False)
class SceneSpec:
    primitives: Sequence[Primitive]
    frames: Sequence[CameraFrame]
    width: int
    height: int
    seed: int = 0
    light: tuple = (0.3, -0.5, -1.0)  # direction towards the light
    ambient: float = 0.3
    background: tuple = (0.0, 0.0, 0.0)
    n_features: int = 200

    def __post_init__(self):
        if len(self.primitives) < 1:
            raise ParameterError("scene needs at least one primitive")
        if len(self.frames) < 2:
            raise ParameterError("scene trajectory needs at least two frames")
        if self.width < 1 or self.height < 1:
            raise ParameterError("image size must be positive")


@dataclass(frozen=True, eq=False)
class RenderedFrame:
    rgb: np.ndarray
    depth: ScalarMap
    mask: RegionMask
    ids: np.ndarray  # primitive index per pixel, -1 where the ray misses
    normals: np.ndarray  # (H, W, 3) world-space surface normals, 0 on misses


def cast(scene: SceneSpec, origin: np.ndarray, dirs: np.ndarray, t: int, frozen: bool = True):
    """Nearest hit per ray: ``(param, primitive index, normal)``; index -1 on miss."""
    best = np.full(len(dirs), np.inf)
    idx = np.full(len(dirs), -1)
    normals = np.zeros(dirs.shape)
    for k, prim in enumerate(scene.primitives):
        if not prim.exists(t):
            continue
        off = prim.offset(t, frozen)
        tk, nk = prim.intersect(origin - off, dirs)
        closer = tk < best
        best = np.where(closer, tk, best)
        idx = np.where(closer, k, idx)
        normals = np.where(closer[:, None], nk, normals)
    return best, idx, normals


def _surface_color(scene: SceneSpec, points: np.ndarray, idx: np.ndarray, normals: np.ndarray, t: int,
                   frozen: bool) -> np.ndarray:
    light = np.asarray(scene.light, dtype=np.float64)
    light = light / np.linalg.norm(light)
    rgb = np.broadcast_to(np.asarray(scene.background, dtype=np.float64), points.shape).copy()
    for k, prim in enumerate(scene.primitives):
        sel = idx == k
        if not sel.any():
            continue
        local = points[sel] - prim.offset(t, frozen)
        lambert = scene.ambient + (1 - scene.ambient) * np.maximum(0.0, normals[sel] @ light)
        rgb[sel] = prim.texture.shade(np.asarray(prim.color, dtype=np.float64), local) * lambert[:, None]
    return rgb


def _frame_rays(scene: SceneSpec, cam: CameraFrame, sl: slice):
    x, y = pixel_grid(scene.height, scene.width)
    d_cam = camera_rays(x[sl], y[sl], cam).reshape(-1, 3)
    return cam.center, d_cam @ cam.rotation  # rows of R^T d


def render_frame(scene: SceneSpec, index: int, freeze_humans: bool = True, threads: int | None = None) -> RenderedFrame:
    if not 0 <= index < len(scene.frames):
        raise ParameterError(f"frame index {index} out of range")
    cam = scene.frames[index]
    w = scene.width
    human_flags = np.array([p.human for p in scene.primitives])

    def rows(sl):
        origin, dirs = _frame_rays(scene, cam, sl)
        t, idx, normals = cast(scene, origin, dirs, index, freeze_humans)
        hit = idx >= 0
        points = origin + np.where(hit, t, 0.0)[:, None] * dirs
        rgb = _surface_color(scene, points, idx, normals, index, freeze_humans)
        n = t.size // w
        human = hit & human_flags[np.maximum(idx, 0)]
        return (rgb.reshape(n, w, 3), np.where(hit, t, 0.0).reshape(n, w), hit.reshape(n, w),
                human.reshape(n, w), idx.reshape(n, w), np.where(hit[:, None], normals, 0.0).reshape(n, w, 3))

    rgb, depth, hit, human, ids, normals = run_rows(rows, scene.height, threads)
    return RenderedFrame(rgb, ScalarMap(depth, hit), RegionMask(human), ids, normals)


def visible_from(scene: SceneSpec, cam: CameraFrame, points: np.ndarray, t: int, frozen: bool = True) -> np.ndarray:
    """Points (N, 3) unoccluded and in front of ``cam`` at frame ``t`` (no bounds check)."""
    origin = cam.center
    dirs = points - origin
    tt, _, _ = cast(scene, origin, dirs, t, frozen)
    in_front = (points @ cam.rotation.T + cam.translation)[:, 2] > 0
    return in_front & (tt >= 1.0 - OCCLUSION_TOL)


def render_flow(scene: SceneSpec, ref: int, src: int, freeze_humans: bool = True,
                threads: int | None = None) -> FlowMap:
    """Exact flow from frame ``ref`` to frame ``src``.

    Pixels whose surface point is occluded in, or projects outside, the
    source view are invalid. Unfrozen humans move by their scripted velocity.
    """
    n = len(scene.frames)
    if not (0 <= ref < n and 0 <= src < n):
        raise ParameterError(f"frame indices ({ref}, {src}) out of range")
    cam_r, cam_s = scene.frames[ref], scene.frames[src]
    w, h = scene.width, scene.height
    if ref == src:
        hit = render_frame(scene, ref, freeze_humans, threads).depth.valid
        return FlowMap(np.zeros((h, w)), np.zeros((h, w)), hit)
    x, y = pixel_grid(h, w)

    def rows(sl):
        origin, dirs = _frame_rays(scene, cam_r, sl)
        t, idx, _ = cast(scene, origin, dirs, ref, freeze_humans)
        hit = idx >= 0
        points = origin + np.where(hit, t, 0.0)[:, None] * dirs
        moved = points.copy()
        for k, prim in enumerate(scene.primitives):
            sel = idx == k
            if sel.any():
                moved[sel] += prim.offset(src, freeze_humans) - prim.offset(ref, freeze_humans)
                if not prim.exists(src):
                    hit = hit & ~sel
        pc = moved @ cam_s.rotation.T + cam_s.translation
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            xs = cam_s.fx * pc[:, 0] / z + cam_s.cx
            ys = cam_s.fy * pc[:, 1] / z + cam_s.cy
        ok = hit & (z > 0) & (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
        if ok.any():
            vis = visible_from(scene, cam_s, moved[ok], src, freeze_humans)
            ok[np.flatnonzero(ok)[~vis]] = False
        m = t.size // w
        u = np.where(ok, xs - x[sl].reshape(-1), 0.0).reshape(m, w)
        v = np.where(ok, ys - y[sl].reshape(-1), 0.0).reshape(m, w)
        return u, v, ok.reshape(m, w)

    u, v, ok = run_rows(rows, h, threads)
    return FlowMap(u, v, ok)


def perturb_flow(flow: FlowMap, sigma: float, seed: int) -> FlowMap:
    """Add i.i.d. Gaussian noise (std ``sigma`` px) to valid flow vectors."""
    if sigma < 0:
        raise ParameterError("sigma must be non-negative")
    if sigma == 0:
        return flow
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=(2,) + flow.shape)
    return FlowMap(
        np.where(flow.valid, flow.u + noise[0], 0.0),
        np.where(flow.valid, flow.v + noise[1], 0.0),
        flow.valid,
    )


# --- features --------------------------------------------------------------

def feature_points(scene: SceneSpec) -> np.ndarray:
    """Seeded surface points on static, non-human geometry seen from the middle frame."""
    rng = np.random.default_rng(scene.seed)
    mid = scene.frames[len(scene.frames) // 2]
    x = rng.uniform(0, scene.width - 1, scene.n_features)
    y = rng.uniform(0, scene.height - 1, scene.n_features)
    dirs = camera_rays(x, y, mid) @ mid.rotation
    t, idx, _ = cast(scene, mid.center, dirs, len(scene.frames) // 2)
    keep = idx >= 0
    keep[keep] = ~np.array([scene.primitives[i].human for i in idx[keep]], dtype=bool)
    return mid.center + t[keep, None] * dirs[keep]


def with_visibility(scene: SceneSpec) -> SceneSpec:
    """Scene whose frames carry the IDs of the feature points they see."""
    pts = feature_points(scene)
    frames = []
    for t, cam in enumerate(scene.frames):
        pc = pts @ cam.rotation.T + cam.translation
        with np.errstate(divide="ignore", invalid="ignore"):
            xs = cam.fx * pc[:, 0] / pc[:, 2] + cam.cx
            ys = cam.fy * pc[:, 1] / pc[:, 2] + cam.cy
        ok = (pc[:, 2] > 0) & (xs >= 0) & (xs <= scene.width - 1) & (ys >= 0) & (ys <= scene.height - 1)
        if ok.any():
            vis = visible_from(scene, cam, pts[ok], t)
            ok[np.flatnonzero(ok)[~vis]] = False
        frames.append(CameraFrame(cam.id, cam.fx, cam.fy, cam.cx, cam.cy, cam.k1, cam.rotation, cam.translation,
                                  frozenset(np.flatnonzero(ok).tolist())))
    return SceneSpec(scene.primitives, frames, scene.width, scene.height, scene.seed, scene.light, scene.ambient,
                     scene.background, scene.n_features)


# --- construction helpers --------------------------------------------------

def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, t) for a camera at ``eye`` looking at ``target``; image y points down."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(-np.asarray(up, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return R, -R @ eye


def camera(fid: int, eye, target, width: int, height: int, fov_scale: float = 1.0) -> CameraFrame:
    R, t = look_at(eye, target)
    f = fov_scale * width
    return CameraFrame(fid, f, f, (width - 1) / 2, (height - 1) / 2, 0.0, R, t)


def make_scene(seed: int = 0, width: int = 64, height: int = 64, motion: str = "sideways",
               n_frames: int = 2, baseline: float = 0.1, human: bool = True,
               texture: str = "sine") -> SceneSpec:
    """Seeded room-like scene: back wall, floor, a box, and optionally a human sphere.

    ``motion`` is "sideways", "forward" or "diagonal"; ``baseline`` is the
    per-frame camera displacement.
    """
    rng = np.random.default_rng(seed)
    directions = {"sideways": (1.0, 0.0, 0.0), "forward": (0.0, 0.0, 1.0), "diagonal": (0.6, 0.2, 0.77)}
    if motion not in directions:
        raise ParameterError(f"unknown motion {motion!r}")
    step = np.asarray(directions[motion])
    step = baseline * step / np.linalg.norm(step)

    def tex(freq):
        return Texture(texture, float(freq), 0.5, tuple(rng.uniform(0, 2 * np.pi, 3)))

    wall_z = rng.uniform(4.0, 6.0)
    prims = [
        Plane(color=tuple(rng.uniform(0.5, 0.9, 3)), texture=tex(rng.uniform(0.3, 0.6)),
              point=(0.0, 0.0, wall_z), normal=(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), -1.0)),
        Plane(color=tuple(rng.uniform(0.4, 0.8, 3)), texture=tex(rng.uniform(0.3, 0.6)),
              point=(0.0, 1.0, 0.0), normal=(0.0, -1.0, 0.0)),
    ]
    bx, by, bz = rng.uniform(-1.0, -0.4), rng.uniform(0.2, 0.5), rng.uniform(2.5, 3.5)
    prims.append(Box(color=tuple(rng.uniform(0.3, 0.9, 3)), texture=tex(rng.uniform(0.8, 1.2)),
                     lo=(bx - 0.35, by, bz - 0.35), hi=(bx + 0.35, 1.0, bz + 0.35)))
    if human:
        prims.append(Sphere(color=(0.9, 0.6, 0.5), texture=tex(1.0), human=True,
                            velocity=(0.05, 0.0, 0.0),
                            center=(rng.uniform(0.3, 0.8), rng.uniform(-0.1, 0.3), rng.uniform(2.0, 3.0)),
                            radius=rng.uniform(0.3, 0.45)))
    start = np.array([0.0, 0.0, 0.0])
    target = np.array([0.0, 0.2, wall_z])
    frames = []
    for k in range(n_frames):
        eye = start + k * step
        frames.append(camera(k, eye, target + k * step, width, height))
    return SceneSpec(prims, frames, width, height, seed)


# --- JSON ------------------------------------------------------------------

_KINDS = {"plane": Plane, "box": Box, "sphere": Sphere}


def _tuple(v):
    return None if v is None else tuple(float(x) for x in v)


def scene_from_json(doc: dict, source: str = "<scene>") -> SceneSpec:
    try:
        prims = []
        for k, p in enumerate(doc["primitives"]):
            kind = p.get("type")
            if kind not in _KINDS:
                raise SchemaError(f"{source}: primitives[{k}] has unknown type {kind!r}")
            tx = p.get("texture", {})
            common = dict(
                color=_tuple(p.get("color", (0.8, 0.8, 0.8))),
                texture=Texture(tx.get("kind", "sine"), float(tx.get("frequency", 1.0)),
                                float(tx.get("amplitude", 0.5)), _tuple(tx.get("phase", (0.0, 0.0, 0.0)))),
                human=bool(p.get("human", False)),
                velocity=_tuple(p.get("velocity", (0.0, 0.0, 0.0))),
                frames=None if p.get("frames") is None else tuple(int(f) for f in p["frames"]),
            )
            if kind == "plane":
                prims.append(Plane(**common, point=_tuple(p["point"]), normal=_tuple(p["normal"]),
                                   lo=_tuple(p.get("lo")), hi=_tuple(p.get("hi"))))
            elif kind == "box":
                prims.append(Box(**common, lo=_tuple(p["lo"]), hi=_tuple(p["hi"])))
            else:
                prims.append(Sphere(**common, center=_tuple(p["center"]), radius=float(p["radius"])))
        frames = parse_frames({"frames": [dict({"k1": 0.0, "visible_features": []}, **f) for f in doc["frames"]]},
                              source)
        return SceneSpec(prims, frames, int(doc["width"]), int(doc["height"]), int(doc.get("seed", 0)),
                         _tuple(doc.get("light", (0.3, -0.5, -1.0))), float(doc.get("ambient", 0.3)),
                         _tuple(doc.get("background", (0.0, 0.0, 0.0))), int(doc.get("n_features", 200)))
    except KeyError as exc:
        raise SchemaError(f"{source}: missing field {exc.args[0]!r}") from None


def scene_to_json(scene: SceneSpec) -> dict:
    prims = []
    for p in scene.primitives:
        d = {
            "type": {Plane: "plane", Box: "box", Sphere: "sphere"}[type(p)],
            "color": list(p.color),
            "texture": {"kind": p.texture.kind, "frequency": p.texture.frequency,
                        "amplitude": p.texture.amplitude, "phase": list(p.texture.phase)},
            "human": p.human,
            "velocity": list(p.velocity),
            "frames": None if p.frames is None else list(p.frames),
        }
        if isinstance(p, Plane):
            d.update(point=list(p.point), normal=list(p.normal), lo=_list(p.lo), hi=_list(p.hi))
        elif isinstance(p, Box):
            d.update(lo=list(p.lo), hi=list(p.hi))
        else:
            d.update(center=list(p.center), radius=p.radius)
        prims.append(d)
    return {
        "width": scene.width, "height": scene.height, "seed": scene.seed,
        "light": list(scene.light), "ambient": scene.ambient, "background": list(scene.background),
        "n_features": scene.n_features, "primitives": prims,
        "frames": [f.to_json() for f in scene.frames],
    }


def _list(v):
    return None if v is None else list(v)


def read_scene(path) -> SceneSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc.msg})") from exc
    return scene_from_json(doc, str(path))
