"""Pinhole camera math: relative poses, projection, rays and epipolar quantities.

Poses are world-to-camera, ``x_cam = R @ x_world + t``. Lens distortion is
never applied; ``k1`` is metadata for clip filtering only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BehindCameraError, DegenerateError
from .maps import CameraFrame, check_rotation

# Degeneracy thresholds shared by every module.
EPIPOLE_INFINITY_TOL = 1e-9
ZERO_BASELINE_TOL = 1e-12
DEGENERATE_LINE_TOL = 1e-15


@dataclass(frozen=True, eq=False)
class RelativePose:
    """Maps reference-camera coordinates to source-camera coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        check_rotation(rot, "relative rotation")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.translation))

    @property
    def source_center(self) -> np.ndarray:
        """Source camera center expressed in reference-camera coordinates."""
        return -self.rotation.T @ self.translation

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (..., 3) reference-camera points to the source camera."""
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "RelativePose":
        return RelativePose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RelativePose") -> "RelativePose":
        """``self`` after ``other``: x -> self.apply(other.apply(x))."""
        return RelativePose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def require_baseline(self) -> None:
        if self.baseline < ZERO_BASELINE_TOL:
            raise DegenerateError("zero baseline between reference and source cameras")


@dataclass(frozen=True, eq=False)
class PixelRay:
    origin: np.ndarray
    direction: np.ndarray


def relative_pose(ref: CameraFrame, src: CameraFrame) -> RelativePose:
    rot = src.rotation @ ref.rotation.T
    return RelativePose(rot, src.translation - rot @ ref.translation)


def project(point_cam, cam: CameraFrame) -> np.ndarray:
    p = np.asarray(point_cam, dtype=np.float64)
    if p[2] <= 0:
        raise BehindCameraError(f"point {p.tolist()} is behind the camera")
    return np.array([cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy])


def project_points(points: np.ndarray, cam: CameraFrame) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (..., 3) camera points; no z check."""
    z = points[..., 2]
    return cam.fx * points[..., 0] / z + cam.cx, cam.fy * points[..., 1] / z + cam.cy


def unproject(pixel, depth: float, cam: CameraFrame) -> np.ndarray:
    x, y = pixel
    return depth * np.array([(x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0])


def camera_rays(x, y, cam: CameraFrame) -> np.ndarray:
    """Unnormalized camera-frame ray directions with z = 1 for pixel coordinates."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.stack([(x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, np.ones(np.broadcast(x, y).shape)], axis=-1)


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates (x, y) of every pixel center, each shaped (H, W)."""
    y, x = np.mgrid[0:height, 0:width]
    return x.astype(np.float64), y.astype(np.float64)


def pixel_ray(pixel, cam: CameraFrame) -> PixelRay:
    """World-space viewing ray through a pixel."""
    d_cam = camera_rays(pixel[0], pixel[1], cam)
    d = cam.rotation.T @ d_cam
    return PixelRay(cam.center, d / np.linalg.norm(d))


def epipole(rel: RelativePose, cam_ref: CameraFrame) -> Optional[np.ndarray]:
    """Image of the source camera center in the reference view, or None at infinity."""
    rel.require_baseline()
    c = rel.source_center
    if abs(c[2]) < EPIPOLE_INFINITY_TOL * np.linalg.norm(c):
        return None
    return np.array([cam_ref.fx * c[0] / c[2] + cam_ref.cx, cam_ref.fy * c[1] / c[2] + cam_ref.cy])


def _skew(t: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]])


def fundamental_matrix(rel: RelativePose, cam_ref: CameraFrame, cam_src: CameraFrame) -> np.ndarray:
    """F with x_src^T F x_ref = 0; built from E = [t]x R using a unit-length t."""
    rel.require_baseline()
    t = rel.translation / rel.baseline
    essential = _skew(t) @ rel.rotation
    return cam_src.K_inv.T @ essential @ cam_ref.K_inv


def epipolar_distances(xr, yr, xs, ys, rel: RelativePose, cam_ref: CameraFrame, cam_src: CameraFrame) -> np.ndarray:
    """Vectorized point-to-epipolar-line distance in the source image.

    Returns NaN where the epipolar line is degenerate (reference pixel at the epipole).
    """
    F = fundamental_matrix(rel, cam_ref, cam_src)
    xr, yr, xs, ys = (np.asarray(a, dtype=np.float64) for a in (xr, yr, xs, ys))
    a = F[0, 0] * xr + F[0, 1] * yr + F[0, 2]
    b = F[1, 0] * xr + F[1, 1] * yr + F[1, 2]
    c = F[2, 0] * xr + F[2, 1] * yr + F[2, 2]
    norm = np.hypot(a, b)
    degenerate = (np.abs(a) < DEGENERATE_LINE_TOL) & (np.abs(b) < DEGENERATE_LINE_TOL)
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = np.abs(a * xs + b * ys + c) / norm
    return np.where(degenerate, np.nan, dist)


def epipolar_distance(p_ref, p_src, rel: RelativePose, cam_ref: CameraFrame, cam_src: CameraFrame) -> float:
    """Distance in source pixels from ``p_src`` to the epipolar line of ``p_ref``."""
    d = float(epipolar_distances(p_ref[0], p_ref[1], p_src[0], p_src[1], rel, cam_ref, cam_src))
    if np.isnan(d):
        raise DegenerateError(f"epipolar line of pixel {tuple(p_ref)} is degenerate")
    return d


def epipolar_line(p_ref, rel: RelativePose, cam_ref: CameraFrame, cam_src: CameraFrame) -> np.ndarray:
    """Line coefficients (a, b, c), a x + b y + c = 0, in the source image."""
    F = fundamental_matrix(rel, cam_ref, cam_src)
    return F @ np.array([p_ref[0], p_ref[1], 1.0])


def ray_angles(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Angle between direction vectors along the last axis (radians)."""
    cross = np.linalg.norm(np.cross(d1, d2), axis=-1)
    dot = np.sum(d1 * d2, axis=-1)
    return np.arctan2(cross, dot)


def source_rays_in_reference(xs, ys, rel: RelativePose, cam_src: CameraFrame) -> np.ndarray:
    """Directions of source-camera rays expressed in reference-camera axes."""
    return camera_rays(xs, ys, cam_src) @ rel.rotation
