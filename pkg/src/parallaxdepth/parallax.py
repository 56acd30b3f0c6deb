"""Depth from motion parallax: triangulate reference depth from flow and a known relative pose."""

from __future__ import annotations

import numpy as np

from ._parallel import run_rows
from .errors import ParameterError, ShapeError
from .geometry import RelativePose, camera_rays, epipole, pixel_grid, source_rays_in_reference
from .maps import CameraFrame, FlowMap, RegionMask, ScalarMap

PARALLEL_RAY_TOL = 1e-8  # radians
DEFAULT_EXCLUSION_RADIUS = 0.05


def triangulate_midpoint(xr, yr, xs, ys, rel: RelativePose, cam_ref: CameraFrame, cam_src: CameraFrame):
    """Reference-camera depth of the closest approach between two viewing rays.

    Returns ``(depth, angle)`` arrays; ``angle`` is the angle between the rays.
    The reference ray is ``a * d1`` with ``d1.z == 1``, so depth equals ``a``.
    """
    d1 = camera_rays(xr, yr, cam_ref)
    d2 = source_rays_in_reference(xs, ys, rel, cam_src)
    c = rel.source_center
    n = np.cross(d1, d2)
    nn = np.sum(n * n, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.sum(np.cross(c, d2) * n, axis=-1) / nn
    angle = np.arctan2(np.sqrt(nn), np.sum(d1 * d2, axis=-1))
    return depth, angle


def flow_to_depth(
    flow: FlowMap,
    rel: RelativePose,
    cam_ref: CameraFrame,
    cam_src: CameraFrame,
    mask: RegionMask | None = None,
    threads: int | None = None,
) -> ScalarMap:
    """Per-pixel metric depth in the reference camera from a reference-to-source flow.

    Human pixels, invalid flow, non-positive depth and near-parallel rays
    (< 1e-8 rad) come out invalid.
    """
    rel.require_baseline()
    h, w = flow.shape
    if mask is not None and mask.shape != flow.shape:
        raise ShapeError(f"mask {mask.shape} does not match flow {flow.shape}")
    x, y = pixel_grid(h, w)

    def rows(sl):
        xr, yr = x[sl], y[sl]
        depth, angle = triangulate_midpoint(xr, yr, xr + flow.u[sl], yr + flow.v[sl], rel, cam_ref, cam_src)
        ok = flow.valid[sl] & (angle >= PARALLEL_RAY_TOL) & np.isfinite(depth) & (depth > 0)
        if mask is not None:
            ok &= ~mask.human[sl]
        return np.where(ok, depth, 0.0), ok

    depth, ok = run_rows(rows, h, threads)
    return ScalarMap(depth, ok)


def epipole_exclusion(
    shape: tuple[int, int],
    rel: RelativePose,
    cam_ref: CameraFrame,
    radius_frac: float = DEFAULT_EXCLUSION_RADIUS,
) -> np.ndarray:
    """Boolean map of pixels within ``radius_frac * min(W, H)`` of the epipole."""
    if not 0.0 < radius_frac < 1.0:
        raise ParameterError(f"radius_frac must lie in (0, 1), got {radius_frac}")
    h, w = shape
    e = epipole(rel, cam_ref)
    if e is None:
        return np.zeros((h, w), dtype=bool)
    x, y = pixel_grid(h, w)
    radius = radius_frac * min(w, h)
    return np.hypot(x - e[0], y - e[1]) < radius
