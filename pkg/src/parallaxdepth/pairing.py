"""Source keyframe selection by baseline times co-visibility."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ParameterError
from .maps import CameraFrame


@dataclass(frozen=True)
class PairingParams:
    tau_o: float = 0.6
    max_interval: int = 10

    def __post_init__(self):
        if not 0.0 < self.tau_o <= 1.0:
            raise ParameterError(f"tau_o must lie in (0, 1], got {self.tau_o}")
        if int(self.max_interval) != self.max_interval or self.max_interval < 1:
            raise ParameterError(f"max_interval must be an integer >= 1, got {self.max_interval}")


def covisibility(a: CameraFrame, b: CameraFrame) -> float:
    """Dice overlap 2|A & B| / (|A| + |B|) of the visible feature sets."""
    total = len(a.visible_features) + len(b.visible_features)
    if total == 0:
        return 0.0
    return 2 * len(a.visible_features & b.visible_features) / total


def pair_score(a: CameraFrame, b: CameraFrame) -> float:
    return float(np.linalg.norm(a.center - b.center)) * covisibility(a, b)


def select_keyframe(r: int, frames: Sequence[CameraFrame],
                    params: PairingParams = PairingParams()) -> Optional[int]:
    """Index of the best source frame for reference ``r``, or None.

    Candidates lie within ``max_interval`` frames and have covisibility of at
    least ``tau_o``; ties go to the smallest index.
    """
    if not frames:
        raise ParameterError("frame list is empty")
    if not 0 <= r < len(frames):
        raise ParameterError(f"reference index {r} out of range for {len(frames)} frames")
    best, best_score = None, -np.inf
    lo = max(0, r - params.max_interval)
    hi = min(len(frames) - 1, r + params.max_interval)
    for j in range(lo, hi + 1):
        if j == r:
            continue
        o = covisibility(frames[r], frames[j])
        if o < params.tau_o:
            continue
        score = float(np.linalg.norm(frames[r].center - frames[j].center)) * o
        if score > best_score:
            best, best_score = j, score
    return best


def select_all(frames: Sequence[CameraFrame], params: PairingParams = PairingParams()) -> list[dict]:
    """Pairing for every frame as records {reference, source, score}."""
    out = []
    for r in range(len(frames)):
        s = select_keyframe(r, frames, params)
        out.append({
            "reference": r,
            "source": s,
            "score": None if s is None else pair_score(frames[r], frames[s]),
        })
    return out
