"""Per-pixel confidence of parallax depth: C = C_lr * C_ep * C_pa."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .geometry import RelativePose, camera_rays, epipolar_distances, pixel_grid, ray_angles, source_rays_in_reference
from .maps import CameraFrame, FlowMap, RegionMask, ScalarMap


@dataclass(frozen=True)
class ConfidenceParams:
    gamma_bar: float = 2.0  # px
    beta_bar: float = math.radians(1.0)
    mask_threshold: float = 0.25

    def __post_init__(self):
        if not self.gamma_bar > 0:
            raise ParameterError(f"gamma_bar must be positive, got {self.gamma_bar}")
        if not self.beta_bar > 0:
            raise ParameterError(f"beta_bar must be positive, got {self.beta_bar}")
        if not 0.0 <= self.mask_threshold <= 1.0:
            raise ParameterError(f"mask_threshold must lie in [0, 1], got {self.mask_threshold}")

    @classmethod
    def from_degrees(cls, gamma_bar: float = 2.0, beta_bar_deg: float = 1.0, mask_threshold: float = 0.25):
        return cls(gamma_bar, math.radians(beta_bar_deg), mask_threshold)


def lr_confidence(r):
    return np.maximum(0.0, 1.0 - np.square(r))


def epipolar_confidence(gamma, gamma_bar: float):
    return np.maximum(0.0, 1.0 - np.square(np.asarray(gamma) / gamma_bar))


def parallax_confidence(beta, beta_bar: float):
    return 1.0 - np.square((np.minimum(beta_bar, beta) - beta_bar) / beta_bar)


def bilinear_sample(values: np.ndarray, valid: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Sample ``values`` at float positions; a sample is valid when it lies inside
    the image and every neighbour with nonzero weight is valid."""
    h, w = values.shape
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1) & np.isfinite(x) & np.isfinite(y)
    xc = np.where(inside, x, 0.0)
    yc = np.where(inside, y, 0.0)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    taps = ((y0, x0, (1 - fx) * (1 - fy)), (y0, x1, fx * (1 - fy)), (y1, x0, (1 - fx) * fy), (y1, x1, fx * fy))
    out = np.zeros(np.shape(xc))
    ok = inside.copy()
    for yy, xx, wt in taps:
        used = wt > 0
        ok &= valid[yy, xx] | ~used
        out += np.where(used, values[yy, xx] * wt, 0.0)
    return np.where(ok, out, 0.0), ok


def _check_same(*maps):
    shapes = {m.shape for m in maps}
    if len(shapes) != 1:
        raise ShapeError(f"map shapes differ: {sorted(shapes)}")


def forward_backward_error(forward: FlowMap, backward: FlowMap) -> ScalarMap:
    """Round-trip error r(p) = |p - (q + backward(q))| with q = p + forward(p)."""
    _check_same(forward, backward)
    x, y = pixel_grid(*forward.shape)
    qx = x + forward.u
    qy = y + forward.v
    bu, ok_u = bilinear_sample(backward.u, backward.valid, qx, qy)
    bv, _ = bilinear_sample(backward.v, backward.valid, qx, qy)
    ok = forward.valid & ok_u
    r = np.hypot(qx + bu - x, qy + bv - y)
    return ScalarMap(np.where(ok, r, 0.0), ok)


def c_lr(forward: FlowMap, backward: FlowMap) -> ScalarMap:
    r = forward_backward_error(forward, backward)
    return ScalarMap(np.where(r.valid, lr_confidence(r.values), 0.0), r.valid)


def epipolar_error(flow: FlowMap, rel: RelativePose, cam_ref: CameraFrame, cam_src: CameraFrame) -> ScalarMap:
    x, y = pixel_grid(*flow.shape)
    gamma = epipolar_distances(x, y, x + flow.u, y + flow.v, rel, cam_ref, cam_src)
    ok = flow.valid & np.isfinite(gamma)
    return ScalarMap(np.where(ok, gamma, 0.0), ok)


def c_ep(flow: FlowMap, rel: RelativePose, cam_ref: CameraFrame, cam_src: CameraFrame,
         params: ConfidenceParams = ConfidenceParams()) -> ScalarMap:
    gamma = epipolar_error(flow, rel, cam_ref, cam_src)
    return ScalarMap(np.where(gamma.valid, epipolar_confidence(gamma.values, params.gamma_bar), 0.0), gamma.valid)


def parallax_angle(flow: FlowMap, rel: RelativePose, cam_ref: CameraFrame, cam_src: CameraFrame) -> ScalarMap:
    """Angle between the two viewing rays of each flow-matched pixel pair."""
    rel.require_baseline()
    x, y = pixel_grid(*flow.shape)
    d1 = camera_rays(x, y, cam_ref)
    d2 = source_rays_in_reference(x + flow.u, y + flow.v, rel, cam_src)
    beta = ray_angles(d1, d2)
    return ScalarMap(np.where(flow.valid, beta, 0.0), flow.valid)


def c_pa(flow: FlowMap, rel: RelativePose, cam_ref: CameraFrame, cam_src: CameraFrame,
         params: ConfidenceParams = ConfidenceParams()) -> ScalarMap:
    beta = parallax_angle(flow, rel, cam_ref, cam_src)
    return ScalarMap(np.where(beta.valid, parallax_confidence(beta.values, params.beta_bar), 0.0), beta.valid)


def compose_confidence(clr: ScalarMap, cep: ScalarMap, cpa: ScalarMap, mask: RegionMask | None = None,
                       params: ConfidenceParams = ConfidenceParams()) -> ScalarMap:
    """Product of the three factors; human pixels and products below the
    threshold are invalid with value 0."""
    _check_same(clr, cep, cpa, *([mask] if mask is not None else []))
    prod = clr.values * cep.values * cpa.values
    ok = clr.valid & cep.valid & cpa.valid & (prod >= params.mask_threshold)
    if mask is not None:
        ok &= ~mask.human
    return ScalarMap(np.where(ok, prod, 0.0), ok)


def confidence(forward: FlowMap, backward: FlowMap, rel: RelativePose, cam_ref: CameraFrame,
               cam_src: CameraFrame, mask: RegionMask | None = None,
               params: ConfidenceParams = ConfidenceParams()) -> ScalarMap:
    return compose_confidence(
        c_lr(forward, backward),
        c_ep(forward, rel, cam_ref, cam_src, params),
        c_pa(forward, rel, cam_ref, cam_src, params),
        mask,
        params,
    )


def mask_depth(depth: ScalarMap, conf: ScalarMap) -> ScalarMap:
    """Invalidate depth wherever the composed confidence is invalid."""
    _check_same(depth, conf)
    return depth.with_validity(depth.valid & conf.valid)
