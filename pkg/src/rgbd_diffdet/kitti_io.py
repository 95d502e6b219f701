"""Readers and writers for KITTI calibration, label and Velodyne files, plus
16-bit PGM depth rasters and 8-bit PPM colour rasters.

All parsers take ``bytes`` and either return a value or raise one of the
typed errors in :mod:`rgbd_diffdet.errors`.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    DepthOutOfRange,
    InvalidCalibration,
    InvalidDepth,
    MalformedHeader,
    MalformedValue,
    MissingKey,
    NonFinitePoint,
    TruncatedRecord,
    UnknownCategory,
    WrongArity,
    WrongFieldCount,
)

# -- calibration ------------------------------------------------------------

_CALIB_KEYS = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}
# spellings used by other KITTI splits (tracking, raw)
_CALIB_ALIASES = {"R_rect": "R0_rect", "Tr_velo_cam": "Tr_velo_to_cam"}


@dataclass(frozen=True)
class CalibrationSet:
    p2: np.ndarray  # (3, 4)
    r0_rect: np.ndarray  # (3, 3)
    tr_velo_to_cam: np.ndarray  # (3, 4)

    def __post_init__(self):
        for name, shape in (("p2", (3, 4)), ("r0_rect", (3, 3)), ("tr_velo_to_cam", (3, 4))):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise InvalidCalibration(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidCalibration(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        r = self.r0_rect
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-3:
            raise InvalidCalibration("R0_rect is not orthonormal")
        if self.p2[2, 2] == 0.0:
            raise InvalidCalibration("P2[2][2] must be nonzero")

    @classmethod
    def identity(cls) -> "CalibrationSet":
        eye = np.eye(3, 4)
        return cls(p2=eye, r0_rect=np.eye(3), tr_velo_to_cam=eye)


def parse_calibration(text: bytes) -> CalibrationSet:
    """Parse a KITTI object-detection calib file.

    Key order does not matter and unknown keys (P0, P1, P3, Tr_imu_to_velo...)
    are skipped without inspecting their values.
    """
    found: dict[str, tuple[int, list[float]]] = {}
    for lineno, raw in enumerate(bytes(text).split(b"\n"), start=1):
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise MalformedValue(lineno, "non-ascii bytes") from None
        if not line:
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise MalformedValue(lineno, "expected 'KEY: values'")
        key = key.strip()
        key = _CALIB_ALIASES.get(key, key)
        if key not in _CALIB_KEYS:
            continue
        values = [_parse_float(tok, lineno) for tok in rest.split()]
        found[key] = (lineno, values)

    mats = {}
    for key, arity in _CALIB_KEYS.items():
        if key not in found:
            raise MissingKey(key)
        _, values = found[key]
        if len(values) != arity:
            raise WrongArity(key, arity, len(values))
        mats[key] = np.array(values, dtype=np.float64).reshape(3, -1)
    return CalibrationSet(p2=mats["P2"], r0_rect=mats["R0_rect"], tr_velo_to_cam=mats["Tr_velo_to_cam"])


def write_calibration(calib: CalibrationSet) -> bytes:
    rows = (
        ("P2", calib.p2),
        ("R0_rect", calib.r0_rect),
        ("Tr_velo_to_cam", calib.tr_velo_to_cam),
    )
    lines = [f"{key}: " + " ".join(repr(float(v)) for v in mat.ravel()) for key, mat in rows]
    return ("\n".join(lines) + "\n").encode("ascii")


def _parse_float(token: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise MalformedValue(lineno, f"not a number: {token[:32]!r}") from None
    if not math.isfinite(value):
        raise MalformedValue(lineno, f"non-finite value {token[:32]!r}")
    return value


# -- velodyne ---------------------------------------------------------------

_VELO_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class PointCloud:
    """Velodyne points as an (N, 4) float32 array of x, y, z, reflectance."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32).reshape(-1, 4)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def parse_velodyne(data: bytes) -> PointCloud:
    buf = bytes(data)
    if len(buf) % 16:
        raise TruncatedRecord(f"{len(buf)} bytes is not a multiple of 16")
    pts = np.frombuffer(buf, dtype=_VELO_DTYPE).reshape(-1, 4)
    bad = ~np.isfinite(pts).all(axis=1)
    if bad.any():
        raise NonFinitePoint(int(np.argmax(bad)))
    return PointCloud(pts.astype(np.float32))


def write_velodyne(cloud: PointCloud) -> bytes:
    return np.ascontiguousarray(cloud.points, dtype=_VELO_DTYPE).tobytes()


# -- labels -----------------------------------------------------------------


class Category(enum.Enum):
    Car = "Car"
    Van = "Van"
    Truck = "Truck"
    Pedestrian = "Pedestrian"
    PersonSitting = "Person_sitting"
    Cyclist = "Cyclist"
    Tram = "Tram"
    Misc = "Misc"
    DontCare = "DontCare"

    @classmethod
    def parse(cls, token: str) -> "Category":
        key = token.replace(" ", "_").lower()
        for cat in cls:
            if key in (cat.value.lower(), cat.name.lower()):
                return cat
        raise UnknownCategory(token)


@dataclass(frozen=True)
class LabelRecord:
    category: Category
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple[float, float, float, float]  # left, top, right, bottom
    dimensions: tuple[float, float, float]  # h, w, l
    location: tuple[float, float, float]  # x, y, z
    rotation_y: float

    @property
    def area(self) -> float:
        left, top, right, bottom = self.bbox
        return (right - left) * (bottom - top)


def parse_labels(text: bytes) -> list[LabelRecord]:
    records = []
    for lineno, raw in enumerate(bytes(text).split(b"\n"), start=1):
        try:
            line = raw.decode("ascii")
        except UnicodeDecodeError:
            raise MalformedValue(lineno, "non-ascii bytes") from None
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) >= 2 and tokens[0] == "Person" and tokens[1] == "Sitting":
            tokens = ["Person_sitting"] + tokens[2:]
        if len(tokens) != 15:
            raise WrongFieldCount(lineno, len(tokens))
        records.append(_label_from_tokens(tokens, lineno))
    return records


def _label_from_tokens(tokens: list[str], lineno: int) -> LabelRecord:
    cat = Category.parse(tokens[0])
    nums = [_parse_float(tok, lineno) for tok in tokens[1:]]
    truncated, occ, alpha = nums[0], nums[1], nums[2]
    left, top, right, bottom = nums[3:7]
    # DontCare rows carry -1 sentinels for truncation and occlusion
    sentinel_ok = cat is Category.DontCare
    if not (0.0 <= truncated <= 1.0 or (sentinel_ok and truncated == -1.0)):
        raise MalformedValue(lineno, f"truncated={truncated} outside [0, 1]")
    if occ not in (0.0, 1.0, 2.0, 3.0) and not (sentinel_ok and occ == -1.0):
        raise MalformedValue(lineno, f"occluded={tokens[2]!r} not in {{0,1,2,3}}")
    if left > right or top > bottom:
        raise MalformedValue(lineno, "bbox corners out of order")
    return LabelRecord(
        category=cat,
        truncated=truncated,
        occluded=int(occ),
        alpha=alpha,
        bbox=(left, top, right, bottom),
        dimensions=(nums[7], nums[8], nums[9]),
        location=(nums[10], nums[11], nums[12]),
        rotation_y=nums[13],
    )


def format_label(rec: LabelRecord) -> str:
    fields = [rec.category.value, repr(rec.truncated), str(rec.occluded), repr(rec.alpha)]
    fields += [repr(v) for v in (*rec.bbox, *rec.dimensions, *rec.location, rec.rotation_y)]
    return " ".join(fields)


def write_labels(records: list[LabelRecord]) -> bytes:
    return "".join(format_label(r) + "\n" for r in records).encode("ascii")


# -- depth rasters ----------------------------------------------------------


@dataclass
class DepthMap:
    """Row-major depth raster in meters; 0.0 marks an invalid pixel."""

    values: np.ndarray  # (height, width) float64

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise InvalidDepth(f"depth map must be 2-D, got shape {vals.shape}")
        if not (np.isfinite(vals).all() and (vals >= 0.0).all()):
            raise InvalidDepth("depth values must be finite and >= 0")
        self.values = vals

    @classmethod
    def empty(cls, width: int, height: int) -> "DepthMap":
        return cls(np.zeros((height, width)))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return self.values > 0.0

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.values))

    def __eq__(self, other):
        if not isinstance(other, DepthMap):
            return NotImplemented
        return self.values.shape == other.values.shape and np.array_equal(self.values, other.values)


_PNM_HEADER = re.compile(rb"\A(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def _read_pnm_header(data: bytes, magic: bytes):
    m = _PNM_HEADER.match(data)
    if m is None or m.group(1) != magic:
        raise MalformedHeader(f"expected a binary {magic.decode()} header")
    width, height, maxval = int(m.group(2)), int(m.group(3)), int(m.group(4))
    if width <= 0 or height <= 0:
        raise MalformedHeader("image dimensions must be positive")
    return width, height, maxval, m.end()


def write_depth_png16(depth: DepthMap) -> bytes:
    """Encode as a 16-bit P5 graymap storing round(depth * 256)."""
    stored = np.floor(depth.values * 256.0 + 0.5)
    if (stored > 65535).any():
        raise DepthOutOfRange(f"max depth {depth.values.max():.3f} m does not fit 16 bits")
    header = f"P5\n{depth.width} {depth.height}\n65535\n".encode("ascii")
    return header + stored.astype(">u2").tobytes()


def read_depth_png16(data: bytes) -> DepthMap:
    data = bytes(data)
    width, height, maxval, offset = _read_pnm_header(data, b"P5")
    if maxval != 65535:
        raise MalformedHeader(f"expected maxval 65535, got {maxval}")
    payload = data[offset:]
    if len(payload) != width * height * 2:
        raise MalformedHeader(f"payload is {len(payload)} bytes, expected {width * height * 2}")
    raw = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    return DepthMap(raw.astype(np.float64) / 256.0)


@dataclass
class RgbImage:
    pixels: np.ndarray  # (height, width, 3) uint8

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def write_ppm(img: RgbImage) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(img.pixels, dtype=np.uint8).tobytes()


def read_ppm(data: bytes) -> RgbImage:
    data = bytes(data)
    width, height, maxval, offset = _read_pnm_header(data, b"P6")
    if maxval != 255:
        raise MalformedHeader(f"expected maxval 255, got {maxval}")
    payload = data[offset:]
    if len(payload) != width * height * 3:
        raise MalformedHeader("payload size does not match header")
    return RgbImage(np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy())
