"""Region-decomposed scale-invariant RMSE and scale-aligned RMSE / Rel.

For a set P of ordered pixel pairs, si^2(P) = 1/(2|P|) * sum_{(i,j) in P} (R_i - R_j)^2
with R the log residual. With P = all pairs this is the variance of R, so
si-full equals the square root of the scale-invariant MSE loss. Every
region metric is evaluated in closed form from per-region counts, means
and variances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, EmptyRegionError, ShapeError
from .losses import log_depth, si_mse_log
from .maps import RegionMask, ScalarMap


@dataclass(frozen=True)
class RegionSuite:
    """si-RMSE per pair set; None where the pair set is too small to define it."""

    si_full: Optional[float]
    si_env: Optional[float]
    si_hum: Optional[float]
    si_intra: Optional[float]
    si_inter: Optional[float]

    def as_dict(self) -> dict:
        return {
            "si_full": self.si_full,
            "si_env": self.si_env,
            "si_hum": self.si_hum,
            "si_intra": self.si_intra,
            "si_inter": self.si_inter,
        }


def _stats(r: np.ndarray):
    n = r.size
    if n == 0:
        return 0, 0.0, 0.0
    mean = float(r.mean())
    d = r - mean
    return n, mean, float(np.dot(d, d)) / n


def _sqrt(x: Optional[float]) -> Optional[float]:
    return None if x is None else math.sqrt(max(x, 0.0))


def region_si_squared(r_h: np.ndarray, r_e: np.ndarray, r_all: np.ndarray | None = None) -> dict:
    """Squared si values from the human and environment residual samples.

    Definedness: full and env need >= 2 pixels in their region, intra
    needs >= 2 human pixels, inter needs at least one pixel on each side,
    hum needs a human pixel and >= 2 pixels overall. ``r_all`` (all samples
    in image order) makes si-full go through the loss's own variance code.
    """
    nh, mh, vh = _stats(r_h)
    ne, me, ve = _stats(r_e)
    n = nh + ne
    full = None
    if n >= 2:
        if r_all is None:
            r_all = np.concatenate([r_h, r_e])
        full = max(si_mse_log(r_all, np.ones(r_all.shape, dtype=bool))[0], 0.0)
    env = ve if ne >= 2 else None
    intra = vh if nh >= 2 else None
    inter = (vh + ve + (mh - me) ** 2) / 2 if nh >= 1 and ne >= 1 else None
    hum = None
    if nh >= 1 and n >= 2:
        pairs_intra = nh * nh
        pairs_inter = 2 * nh * ne
        inter_sq = inter if inter is not None else 0.0
        hum = (pairs_intra * vh + pairs_inter * inter_sq) / (pairs_intra + pairs_inter)
    return {"si_full": full, "si_env": env, "si_hum": hum, "si_intra": intra, "si_inter": inter}


def si_region_suite(pred: ScalarMap, gt: ScalarMap, mask: RegionMask) -> RegionSuite:
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ShapeError(f"shapes differ: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    valid = pred.valid & gt.valid
    r = log_depth(pred, "prediction") - log_depth(gt, "ground truth")
    sq = region_si_squared(r[valid & mask.human], r[valid & ~mask.human], r[valid])
    return RegionSuite(**{k: _sqrt(v) for k, v in sq.items()})


def aligned_scale(pred: ScalarMap, gt: ScalarMap) -> float:
    """Least-squares scale s minimizing sum (s * pred - gt)^2."""
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    valid = pred.valid & gt.valid
    if not valid.any():
        raise EmptyRegionError("no jointly valid pixels")
    p, g = pred.values[valid], gt.values[valid]
    denom = float(np.dot(p, p))
    if denom <= 0:
        raise DomainError("prediction is zero on every valid pixel")
    return float(np.dot(p, g)) / denom


def aligned_rmse_rel(pred: ScalarMap, gt: ScalarMap) -> tuple[float, float]:
    s = aligned_scale(pred, gt)
    valid = pred.valid & gt.valid
    p, g = pred.values[valid], gt.values[valid]
    if np.any(g == 0):
        raise DomainError("ground truth is zero at a valid pixel; relative error undefined")
    err = s * p - g
    return math.sqrt(float(np.mean(err * err))), float(np.mean(np.abs(err) / g))


def evaluate(pred: ScalarMap, gt: ScalarMap, mask: RegionMask | None = None) -> dict:
    """All seven metrics as a flat dict (None for undefined entries)."""
    if mask is None:
        mask = RegionMask.empty(*pred.shape)
    out = si_region_suite(pred, gt, mask).as_dict()
    out["rmse"], out["rel"] = aligned_rmse_rel(pred, gt)
    return out
