"""Depth supervision from video: parallax triangulation, confidence, cleaning,
scale-invariant losses and metrics, plus a synthetic scene oracle."""

from .cleaning import clean_depth, filter_clip, filter_frame
from .confidence import ConfidenceParams, compose_confidence, mask_depth
from .config import Config, load_config
from .errors import (
    BehindCameraError,
    DataError,
    DegenerateError,
    DepthError,
    DivergenceError,
    DomainError,
    EmptyRegionError,
    FormatError,
    NumericError,
    ParameterError,
    SchemaError,
    ShapeError,
    ValidationError,
)
from .geometry import RelativePose, epipolar_distance, epipole, project, relative_pose, unproject
from .losses import LossParams, optimize_depth, total_loss
from .maps import CameraFrame, FlowMap, RegionMask, ScalarMap, read_pfm, write_pfm
from .metrics import aligned_rmse_rel, evaluate, si_region_suite
from .pairing import PairingParams, select_keyframe
from .parallax import epipole_exclusion, flow_to_depth, triangulate_midpoint
from .warp import defocus, remove_people, reproject

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
