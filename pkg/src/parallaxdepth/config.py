"""Run configuration: every tunable threshold in one JSON-loadable record."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .cleaning import DEFAULT_DELTA
from .confidence import ConfidenceParams
from .errors import FormatError, ParameterError
from .losses import LossParams
from .pairing import PairingParams
from .parallax import DEFAULT_EXCLUSION_RADIUS


@dataclass(frozen=True)
class Config:
    gamma_bar: float = 2.0
    beta_bar_deg: float = 1.0
    mask_threshold: float = 0.25
    tau_o: float = 0.6
    max_interval: int = 10
    delta: float = DEFAULT_DELTA
    scales: int = 5
    alpha1: float = 0.5  # chosen default
    alpha2: float = 0.1  # chosen default
    smooth_gt_invalid_only: bool = False
    radius_frac: float = DEFAULT_EXCLUSION_RADIUS

    @property
    def confidence(self) -> ConfidenceParams:
        return ConfidenceParams.from_degrees(self.gamma_bar, self.beta_bar_deg, self.mask_threshold)

    @property
    def pairing(self) -> PairingParams:
        return PairingParams(self.tau_o, self.max_interval)

    @property
    def loss(self) -> LossParams:
        return LossParams(self.alpha1, self.alpha2, self.scales, self.smooth_gt_invalid_only)

    def validate(self) -> "Config":
        self.confidence, self.pairing, self.loss  # noqa: B018 - constructors validate
        if not 0.0 < self.delta < 1.0:
            raise ParameterError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.radius_frac < 1.0:
            raise ParameterError(f"radius_frac must lie in (0, 1), got {self.radius_frac}")
        return self

    def as_dict(self) -> dict:
        return asdict(self)


def load_config(path=None) -> Config:
    """Defaults overlaid with the keys of a JSON object; unknown keys are rejected."""
    if path is None:
        return Config()
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise FormatError(f"{path}: cannot read config ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    known = {f.name: f.type for f in fields(Config)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ParameterError(f"{path}: unknown config keys {unknown}")
    try:
        return Config(**doc).validate()
    except ParameterError as exc:
        raise ParameterError(f"{path}: {exc}") from None
