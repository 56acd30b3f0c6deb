"""Raster types and file formats (PFM, PGM, PPM, camera JSON).

Coordinates: row ``i`` / column ``j`` in arrays, pixel position ``(x, y) =
(j, i)`` in image space. Arrays are stored top-to-bottom, row-major.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DataError, FormatError, SchemaError, ShapeError, ValidationError

ROTATION_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScalarMap:
    """Single-channel float raster with a validity mask.

    Invalid pixels may hold any value; consumers must consult ``valid``.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise ShapeError(f"values {values.shape} and valid {valid.shape} must be equal 2-D shapes")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError("map must be at least 1x1")
        if not np.all(np.isfinite(values[valid])):
            raise DataError("non-finite value at a valid pixel")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))

    @classmethod
    def from_array(cls, values, valid=None) -> "ScalarMap":
        """Build a map, treating non-finite entries as invalid unless ``valid`` is given."""
        values = np.asarray(values, dtype=np.float64)
        if valid is None:
            valid = np.isfinite(values)
        valid = np.asarray(valid, dtype=bool)
        return cls(np.where(valid, values, 0.0), valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def with_validity(self, valid: np.ndarray) -> "ScalarMap":
        return ScalarMap(np.where(valid, self.values, 0.0), valid)

    def equals(self, other: "ScalarMap") -> bool:
        """Bitwise equality on valid pixels and identical validity."""
        if self.shape != other.shape or not np.array_equal(self.valid, other.valid):
            return False
        a = self.values[self.valid].view(np.uint64)
        b = other.values[other.valid].view(np.uint64)
        return bool(np.array_equal(a, b))


@dataclass(frozen=True, eq=False)
class FlowMap:
    """Per-pixel displacement from the reference image to the source image."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if u.ndim != 2 or u.shape != v.shape or u.shape != valid.shape:
            raise ShapeError(f"flow components {u.shape}, {v.shape}, {valid.shape} must share a 2-D shape")
        if u.shape[0] < 1 or u.shape[1] < 1:
            raise ShapeError("flow must be at least 1x1")
        if not (np.all(np.isfinite(u[valid])) and np.all(np.isfinite(v[valid]))):
            raise DataError("non-finite flow at a valid pixel")
        object.__setattr__(self, "u", _frozen(u))
        object.__setattr__(self, "v", _frozen(v))
        object.__setattr__(self, "valid", _frozen(valid))

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    def equals(self, other: "FlowMap") -> bool:
        if self.shape != other.shape or not np.array_equal(self.valid, other.valid):
            return False
        m = self.valid
        return bool(
            np.array_equal(self.u[m].view(np.uint64), other.u[m].view(np.uint64))
            and np.array_equal(self.v[m].view(np.uint64), other.v[m].view(np.uint64))
        )


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Human (True) / environment (False) partition of the image."""

    human: np.ndarray

    def __post_init__(self):
        human = np.asarray(self.human, dtype=bool)
        if human.ndim != 2:
            raise ShapeError("mask must be 2-D")
        object.__setattr__(self, "human", _frozen(human))

    @classmethod
    def empty(cls, height: int, width: int) -> "RegionMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.human.shape

    @property
    def environment(self) -> np.ndarray:
        return ~self.human


@dataclass(frozen=True, eq=False)
class CameraFrame:
    """Intrinsics, world-to-camera pose (x_cam = R x_world + t) and visible features."""

    id: int
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    visible_features: frozenset = frozenset()

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"frame {self.id}: focal lengths must be positive")
        check_rotation(rot, what=f"frame {self.id} rotation")
        if not np.all(np.isfinite(trans)):
            raise ValidationError(f"frame {self.id}: translation must be finite")
        object.__setattr__(self, "rotation", _frozen(rot))
        object.__setattr__(self, "translation", _frozen(trans))
        object.__setattr__(self, "visible_features", frozenset(int(f) for f in self.visible_features))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, -R^T t."""
        return -self.rotation.T @ self.translation

    def to_json(self) -> dict:
        return {
            "id": int(self.id),
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "k1": float(self.k1),
            "rotation": [float(x) for x in self.rotation.reshape(-1)],
            "translation": [float(x) for x in self.translation],
            "visible_features": sorted(self.visible_features),
        }


def check_rotation(rot: np.ndarray, what: str = "rotation", tol: float = ROTATION_TOL) -> None:
    if rot.shape != (3, 3) or not np.all(np.isfinite(rot)):
        raise ValidationError(f"{what} must be a finite 3x3 matrix")
    if np.max(np.abs(rot @ rot.T - np.eye(3))) > tol:
        raise ValidationError(f"{what} is not orthonormal")
    if abs(np.linalg.det(rot) - 1.0) > tol:
        raise ValidationError(f"{what} has determinant {np.linalg.det(rot):.6g}, expected +1")


# --- PFM -------------------------------------------------------------------

_PFM_HEADER = re.compile(rb"\A(P[fF])\s+(\d+)\s+(\d+)\s+(\S+)\s")


def read_pfm(path) -> Union[ScalarMap, FlowMap]:
    """Load a PFM file.

    ``Pf`` files become a ScalarMap (NaN marks invalid pixels). ``PF`` files
    become a FlowMap with channels (u, v, validity); validity > 0.5 is valid.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    m = _PFM_HEADER.match(data)
    if m is None:
        raise FormatError(f"{path}: malformed PFM header")
    tag, width, height = m.group(1), int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError:
        raise FormatError(f"{path}: bad PFM scale {m.group(4)!r}") from None
    if width < 1 or height < 1 or scale == 0.0 or not np.isfinite(scale):
        raise FormatError(f"{path}: bad PFM dimensions or scale")
    channels = 1 if tag == b"Pf" else 3
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    payload = data[m.end():]
    expected = width * height * channels * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    arr = np.flipud(arr.reshape(height, width, channels))

    if channels == 1:
        values = arr[..., 0]
        if np.any(np.isinf(values)):
            raise DataError(f"{path}: infinite value in depth map")
        valid = ~np.isnan(values)
        return ScalarMap(np.where(valid, values, 0.0), valid)

    u, v, flag = arr[..., 0], arr[..., 1], arr[..., 2]
    valid = flag > 0.5
    if not (np.all(np.isfinite(u[valid])) and np.all(np.isfinite(v[valid]))):
        raise DataError(f"{path}: non-finite flow at a valid pixel")
    return FlowMap(np.where(valid, u, 0.0), np.where(valid, v, 0.0), valid)


def pfm_bytes(m: Union[ScalarMap, FlowMap]) -> bytes:
    if isinstance(m, ScalarMap):
        h, w = m.shape
        header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
        body = np.where(m.valid, m.values, np.nan)[..., None]
    elif isinstance(m, FlowMap):
        h, w = m.shape
        header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
        body = np.stack(
            [np.where(m.valid, m.u, 0.0), np.where(m.valid, m.v, 0.0), m.valid.astype(np.float64)], axis=-1
        )
    else:
        raise TypeError(f"cannot encode {type(m).__name__} as PFM")
    body = np.ascontiguousarray(np.flipud(body)).astype("<f4")
    return header + body.tobytes()


def write_pfm(m: Union[ScalarMap, FlowMap], path) -> None:
    """Write little-endian PFM. Values are stored as float32."""
    path = Path(path)
    try:
        path.write_bytes(pfm_bytes(m))
    except OSError as exc:
        raise FormatError(f"{path}: cannot write ({exc.strerror})") from exc


# --- PGM / PPM -------------------------------------------------------------

_PNM_HEADER = re.compile(rb"\A(P[56])\s+(\d+)\s+(\d+)\s+(\d+)\s")


def _read_pnm(path, magic: bytes) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    # comments are not supported; we never write them
    m = _PNM_HEADER.match(data)
    if m is None or m.group(1) != magic:
        raise FormatError(f"{path}: expected binary {magic.decode()} header")
    w, h, maxval = int(m.group(2)), int(m.group(3)), int(m.group(4))
    if not (0 < maxval < 65536) or w < 1 or h < 1:
        raise FormatError(f"{path}: bad dimensions or maxval")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    payload = data[m.end():]
    expected = w * h * channels * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(h, w, channels)
    return arr.astype(np.float64) / maxval


def read_mask(path) -> RegionMask:
    """Binary PGM; 255 = human, 0 = environment (anything >= half scale counts as human)."""
    arr = _read_pnm(path, b"P5")
    return RegionMask(arr[..., 0] >= 0.5)


def write_mask(mask: RegionMask, path) -> None:
    h, w = mask.shape
    body = np.where(mask.human, 255, 0).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + body.tobytes())


def read_rgb(path) -> np.ndarray:
    """Binary PPM to an (H, W, 3) float array in [0, 1]."""
    return _read_pnm(path, b"P6")


def write_rgb(rgb: np.ndarray, path, maxval: int = 65535) -> None:
    """Write (H, W, 3) floats in [0, 1] as binary PPM (16-bit by default)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError(f"RGB raster must be HxWx3, got {rgb.shape}")
    h, w = rgb.shape[:2]
    q = np.rint(np.clip(rgb, 0.0, 1.0) * maxval)
    body = q.astype(">u2" if maxval > 255 else "u1")
    Path(path).write_bytes(f"P6\n{w} {h}\n{maxval}\n".encode("ascii") + body.tobytes())


# --- camera metadata -------------------------------------------------------

_FRAME_FIELDS = ("id", "fx", "fy", "cx", "cy", "k1", "rotation", "translation", "visible_features")


def parse_frames(doc, source: str = "<json>") -> list[CameraFrame]:
    if not isinstance(doc, dict) or "frames" not in doc:
        raise SchemaError(f"{source}: missing top-level field 'frames'")
    if not isinstance(doc["frames"], list):
        raise SchemaError(f"{source}: 'frames' must be an array")
    frames = []
    seen = set()
    for k, entry in enumerate(doc["frames"]):
        if not isinstance(entry, dict):
            raise SchemaError(f"{source}: frames[{k}] must be an object")
        for name in _FRAME_FIELDS:
            if name not in entry:
                raise SchemaError(f"{source}: frames[{k}] missing field '{name}'")
        try:
            rot = np.asarray(entry["rotation"], dtype=np.float64)
            trans = np.asarray(entry["translation"], dtype=np.float64)
            feats = [int(f) for f in entry["visible_features"]]
            fid = int(entry["id"])
            fx, fy, cx, cy, k1 = (float(entry[n]) for n in ("fx", "fy", "cx", "cy", "k1"))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{source}: frames[{k}] has a field of the wrong type ({exc})") from None
        if rot.shape != (9,):
            raise SchemaError(f"{source}: frames[{k}] field 'rotation' must hold 9 numbers")
        if trans.shape != (3,):
            raise SchemaError(f"{source}: frames[{k}] field 'translation' must hold 3 numbers")
        if fid in seen:
            raise SchemaError(f"{source}: duplicate frame id {fid}")
        seen.add(fid)
        try:
            frames.append(CameraFrame(fid, fx, fy, cx, cy, k1, rot.reshape(3, 3), trans, frozenset(feats)))
        except ValidationError as exc:
            raise ValidationError(f"{source}: {exc}") from None
    return frames


def read_sequence_meta(path) -> list[CameraFrame]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})") from exc
    return parse_frames(doc, str(path))


def write_sequence_meta(frames: list[CameraFrame], path, **extra) -> None:
    doc = {"frames": [f.to_json() for f in frames], **extra}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
