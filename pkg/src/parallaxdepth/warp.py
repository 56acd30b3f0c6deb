"""Depth-based image effects: heightfield reprojection, people removal, defocus."""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError, ParameterError, ShapeError
from .geometry import RelativePose, camera_rays, relative_pose
from .maps import CameraFrame, RegionMask, ScalarMap

SLIVER_RATIO = 1.5
_INSIDE_EPS = 1e-9


class Reprojection(NamedTuple):
    rgb: np.ndarray
    coverage: ScalarMap  # valid where rendered; values are target-camera depth


def _triangles(depth: ScalarMap, rel: RelativePose, cam_ref: CameraFrame, cam_tgt: CameraFrame):
    """Two triangles per pixel quad whose corners are valid, in front of the
    target camera and within the sliver depth ratio."""
    h, w = depth.shape
    y, x = np.mgrid[0:h, 0:w]
    pts = camera_rays(x, y, cam_ref) * depth.values[..., None]
    pt = rel.apply(pts)
    z = pt[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = cam_tgt.fx * pt[..., 0] / z + cam_tgt.cx
        sy = cam_tgt.fy * pt[..., 1] / z + cam_tgt.cy
    ok_v = depth.valid & (z > 0)

    c00 = (slice(0, h - 1), slice(0, w - 1))
    c01 = (slice(0, h - 1), slice(1, w))
    c10 = (slice(1, h), slice(0, w - 1))
    c11 = (slice(1, h), slice(1, w))
    corners = [c00, c01, c10, c11]
    ok_q = np.logical_and.reduce([ok_v[c] for c in corners])
    d = np.stack([np.where(depth.valid[c], depth.values[c], 1.0) for c in corners])
    ok_q &= d.max(axis=0) < SLIVER_RATIO * d.min(axis=0)

    flat = np.arange(h * w).reshape(h, w)
    qi = [flat[c][ok_q] for c in corners]
    a, b, c, e = qi  # 00, 01, 10, 11
    tri = np.concatenate([np.stack([a, b, e], axis=1), np.stack([a, e, c], axis=1)])
    # keep triangle order deterministic: by quad, first triangle then second
    order = np.argsort(np.concatenate([np.arange(len(a)) * 2, np.arange(len(a)) * 2 + 1]), kind="stable")
    tri = tri[order]
    return tri, sx.reshape(-1), sy.reshape(-1), z.reshape(-1)


def _rasterize(tri, sx, sy, z, colors, height: int, width: int):
    """Z-buffered, perspective-correct rasterization; returns (rgb, depth, covered)."""
    vx, vy, vz = sx[tri], sy[tri], z[tri]
    vc = colors[tri]  # (T, 3, C)
    area = (vx[:, 1] - vx[:, 0]) * (vy[:, 2] - vy[:, 0]) - (vx[:, 2] - vx[:, 0]) * (vy[:, 1] - vy[:, 0])
    x0 = np.ceil(vx.min(axis=1) - _INSIDE_EPS)
    x1 = np.floor(vx.max(axis=1) + _INSIDE_EPS)
    y0 = np.ceil(vy.min(axis=1) - _INSIDE_EPS)
    y1 = np.floor(vy.max(axis=1) + _INSIDE_EPS)
    x0, y0 = np.maximum(x0, 0), np.maximum(y0, 0)
    x1, y1 = np.minimum(x1, width - 1), np.minimum(y1, height - 1)
    live = (np.abs(area) > 1e-12) & (x1 >= x0) & (y1 >= y0) & np.all(np.isfinite(vx), axis=1)
    span = np.where(live, np.maximum(x1 - x0, y1 - y0) + 1, 0)

    frags_pix, frags_z, frags_c, frags_t = [], [], [], []
    lo = 0
    size = 1
    max_span = int(span.max()) if span.size else 0
    while lo < max_span:
        sel = np.flatnonzero(live & (span > lo) & (span <= size))
        for chunk in np.array_split(sel, max(1, len(sel) * size * size // 2_000_000 + 1)):
            if chunk.size == 0:
                continue
            oy, ox = np.mgrid[0:size, 0:size]
            px = x0[chunk, None] + ox.reshape(1, -1)
            py = y0[chunk, None] + oy.reshape(1, -1)
            inb = (px <= x1[chunk, None]) & (py <= y1[chunk, None])
            X, Y = vx[chunk], vy[chunk]
            ar = area[chunk, None]
            b0 = ((X[:, 1, None] - px) * (Y[:, 2, None] - py) - (X[:, 2, None] - px) * (Y[:, 1, None] - py)) / ar
            b1 = ((X[:, 2, None] - px) * (Y[:, 0, None] - py) - (X[:, 0, None] - px) * (Y[:, 2, None] - py)) / ar
            b2 = 1.0 - b0 - b1
            inside = inb & (b0 >= -_INSIDE_EPS) & (b1 >= -_INSIDE_EPS) & (b2 >= -_INSIDE_EPS)
            ti, ki = np.nonzero(inside)
            if ti.size == 0:
                continue
            bary = np.stack([b0[ti, ki], b1[ti, ki], b2[ti, ki]], axis=1)
            tz = vz[chunk][ti]
            wz = bary / tz
            inv_z = wz.sum(axis=1)
            col = np.einsum("nk,nkc->nc", wz, vc[chunk][ti]) / inv_z[:, None]
            frags_pix.append((py[ti, ki] * width + px[ti, ki]).astype(np.int64))
            frags_z.append(1.0 / inv_z)
            frags_c.append(col)
            frags_t.append(chunk[ti])
        lo = size
        size *= 2

    channels = colors.shape[1]
    out = np.zeros((height * width, channels))
    zbuf = np.zeros(height * width)
    covered = np.zeros(height * width, dtype=bool)
    if frags_pix:
        pix = np.concatenate(frags_pix)
        fz = np.concatenate(frags_z)
        fc = np.concatenate(frags_c)
        ft = np.concatenate(frags_t)
        order = np.lexsort((ft, fz, pix))
        pix_sorted = pix[order]
        first = order[np.r_[True, pix_sorted[1:] != pix_sorted[:-1]]]
        out[pix[first]] = fc[first]
        zbuf[pix[first]] = fz[first]
        covered[pix[first]] = True
    return out.reshape(height, width, channels), zbuf.reshape(height, width), covered.reshape(height, width)


def _is_identity(rel: RelativePose, cam_ref: CameraFrame, cam_tgt: CameraFrame) -> bool:
    same_k = (cam_ref.fx, cam_ref.fy, cam_ref.cx, cam_ref.cy) == (cam_tgt.fx, cam_tgt.fy, cam_tgt.cx, cam_tgt.cy)
    same_pose = np.array_equal(cam_ref.rotation, cam_tgt.rotation) and np.array_equal(cam_ref.translation,
                                                                                        cam_tgt.translation)
    exact_rel = np.array_equal(rel.rotation, np.eye(3)) and not np.any(rel.translation)
    return same_k and (same_pose or exact_rel)


def reproject(rgb: np.ndarray, depth: ScalarMap, rel: RelativePose, cam_ref: CameraFrame,
              cam_tgt: CameraFrame, out_shape: tuple[int, int] | None = None) -> Reprojection:
    """Render the depth map as a textured triangle heightfield from the target camera.

    An exact identity pose with identical intrinsics returns the input
    unchanged on valid pixels.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[:2] != depth.shape:
        raise ShapeError(f"image {rgb.shape[:2]} does not match depth {depth.shape}")
    if not depth.valid.any():
        raise DataError("depth map has no valid pixels")
    h, w = out_shape or depth.shape
    if _is_identity(rel, cam_ref, cam_tgt) and (h, w) == depth.shape:
        out = np.where(depth.valid[..., None], rgb, 0.0)
        return Reprojection(out, ScalarMap(np.where(depth.valid, depth.values, 0.0), depth.valid))
    tri, sx, sy, z = _triangles(depth, rel, cam_ref, cam_tgt)
    colors = rgb.reshape(-1, rgb.shape[2]) if rgb.ndim == 3 else rgb.reshape(-1, 1)
    out, zbuf, covered = _rasterize(tri, sx, sy, z, colors, h, w)
    if rgb.ndim == 2:
        out = out[..., 0]
    return Reprojection(out, ScalarMap(zbuf, covered))


class Inpainting(NamedTuple):
    rgb: np.ndarray
    residual: np.ndarray  # human pixels no later frame could fill


def remove_people(frames: Sequence[tuple], target: int, window: int = 200) -> Inpainting:
    """Replace human pixels of ``frames[target]`` with environment colors from later frames.

    ``frames`` holds ``(rgb, depth, mask, camera)`` tuples. Frames
    ``target+1 .. target+window`` are reprojected (their own human pixels
    excluded) in order and each hole takes the first covering sample.
    """
    if window < 1:
        raise ParameterError("window must be at least 1")
    rgb_t, depth_t, mask_t, cam_t = frames[target]
    out = np.array(rgb_t, dtype=np.float64, copy=True)
    holes = np.array(mask_t.human, copy=True)
    for k in range(target + 1, min(len(frames), target + window + 1)):
        if not holes.any():
            break
        rgb_k, depth_k, mask_k, cam_k = frames[k]
        env = depth_k.with_validity(depth_k.valid & ~mask_k.human)
        if not env.valid.any():
            continue
        rep = reproject(rgb_k, env, relative_pose(cam_k, cam_t), cam_k, cam_t, holes.shape)
        fill = holes & rep.coverage.valid
        out[fill] = rep.rgb[fill]
        holes &= ~fill
    return Inpainting(out, holes)


def defocus(rgb: np.ndarray, depth: ScalarMap, focus_depth: float, max_radius: float) -> np.ndarray:
    """Gather blur with per-pixel disc radius proportional to |1/depth - 1/focus|.

    The radius is normalized so the most defocused pixel gets ``max_radius``.
    Invalid depth is treated as in focus.
    """
    if max_radius < 0:
        raise ParameterError("max_radius must be non-negative")
    if not focus_depth > 0:
        raise ParameterError("focus_depth must be positive")
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[:2] != depth.shape:
        raise ShapeError(f"image {rgb.shape[:2]} does not match depth {depth.shape}")
    with np.errstate(divide="ignore"):
        q = np.where(depth.valid, np.abs(1.0 / np.where(depth.valid, depth.values, 1.0) - 1.0 / focus_depth), 0.0)
    qmax = q.max()
    if max_radius == 0 or qmax == 0:
        return rgb.copy()
    radius = max_radius * q / qmax
    r2 = radius * radius
    h, w = depth.shape
    img = rgb if rgb.ndim == 3 else rgb[..., None]
    acc = np.zeros(img.shape)
    cnt = np.zeros((h, w))
    R = int(np.ceil(max_radius))
    for dy in range(-R, R + 1):
        for dx in range(-R, R + 1):
            d2 = dx * dx + dy * dy
            if d2 > max_radius * max_radius:
                continue
            # destination rows/cols whose source (y+dy, x+dx) lies in the image
            ys = slice(max(0, -dy), min(h, h - dy))
            xs = slice(max(0, -dx), min(w, w - dx))
            src = img[max(0, dy):min(h, h + dy), max(0, dx):min(w, w + dx)]
            m = (r2[ys, xs] >= d2).astype(np.float64)
            acc[ys, xs] += src * m[..., None]
            cnt[ys, xs] += m
    out = acc / cnt[..., None]
    return out if rgb.ndim == 3 else out[..., 0]
