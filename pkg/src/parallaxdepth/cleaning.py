"""MVS depth cleaning against parallax depth, and frame/clip filtering rules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError
from .maps import ScalarMap

DEFAULT_DELTA = 0.2
MIN_VALID_FRACTION = 0.20
MAX_ABS_K1 = 0.1
FOCAL_RANGE = (0.6, 1.2)  # exclusive on both ends
MIN_FRAMES = 30
MIN_WIDTH = 1600
ASPECT = 16 / 9
ASPECT_TOL = 1e-3


def normalized_error(d_mvs: ScalarMap, d_pp: ScalarMap) -> ScalarMap:
    """|a - b| / (a + b) where both maps are valid and the sum is positive."""
    if d_mvs.shape != d_pp.shape:
        raise ShapeError(f"MVS depth {d_mvs.shape} and parallax depth {d_pp.shape} differ in shape")
    a, b = d_mvs.values, d_pp.values
    denom = a + b
    ok = d_mvs.valid & d_pp.valid & (denom > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        err = np.abs(a - b) / denom
    return ScalarMap(np.where(ok, err, 0.0), ok)


def clean_depth(d_mvs: ScalarMap, d_pp: ScalarMap, delta: float = DEFAULT_DELTA) -> ScalarMap:
    """Copy of ``d_mvs`` with pixels whose normalized error exceeds ``delta`` removed.

    Pixels without a parallax cross-check keep their MVS validity; pixels
    where both depths are zero are dropped.
    """
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    err = normalized_error(d_mvs, d_pp)
    both = d_mvs.valid & d_pp.valid
    zero_sum = both & ~err.valid
    removed = (err.valid & (err.values > delta)) | zero_sum
    return d_mvs.with_validity(d_mvs.valid & ~removed)


def valid_fraction(m: ScalarMap) -> float:
    return float(np.count_nonzero(m.valid)) / m.valid.size


def filter_frame(fraction: float) -> bool:
    """True to keep a frame: at least 20% of its pixels carry valid depth."""
    return not fraction < MIN_VALID_FRACTION


@dataclass(frozen=True)
class ClipStats:
    frame_count: int
    width: int
    aspect_ratio: float
    k1: float
    focal_normalized: float
    valid_fraction: tuple = field(default=())


def filter_clip(stats: ClipStats) -> list[str]:
    """Names of the rules that reject the clip; an empty list keeps it."""
    reasons = []
    if abs(stats.k1) > MAX_ABS_K1:
        reasons.append("distortion")
    if stats.focal_normalized <= FOCAL_RANGE[0] or stats.focal_normalized >= FOCAL_RANGE[1]:
        reasons.append("focal")
    if stats.frame_count < MIN_FRAMES:
        reasons.append("length")
    if abs(stats.aspect_ratio - ASPECT) > ASPECT_TOL:
        reasons.append("aspect")
    if stats.width < MIN_WIDTH:
        reasons.append("width")
    return reasons


def kept_frames(stats: ClipStats) -> list[int]:
    """Indices of frames that pass the valid-depth fraction rule."""
    return [i for i, f in enumerate(stats.valid_fraction) if filter_frame(f)]
