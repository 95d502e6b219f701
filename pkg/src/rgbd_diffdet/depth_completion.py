"""Classical morphological densification of sparse LiDAR depth, and viridis
colorization of the result.

Depth 0.0 is the invalid marker.  Dilation takes the *minimum* valid depth
under the footprint (the nearer surface wins) and ignores invalid pixels;
erosion takes the maximum and is invalidated by any invalid pixel in the
footprint.  Both ignore pixels outside the image.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _accel
from ._viridis import VIRIDIS_U8
from .errors import BadRange, EmptyInput
from .kitti_io import DepthMap, RgbImage


class SEName(enum.Enum):
    Diamond5 = "diamond5"
    Full5 = "full5"
    Full7 = "full7"
    Full31 = "full31"


@dataclass(frozen=True)
class StructuringElement:
    name: SEName
    mask: np.ndarray  # bool, odd square

    @property
    def is_full(self) -> bool:
        return bool(self.mask.all())

    @property
    def size(self) -> int:
        return self.mask.shape[0]


def _diamond(size: int) -> np.ndarray:
    r = size // 2
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return np.abs(yy) + np.abs(xx) <= r


DIAMOND5 = StructuringElement(SEName.Diamond5, _diamond(5))
FULL5 = StructuringElement(SEName.Full5, np.ones((5, 5), dtype=bool))
FULL7 = StructuringElement(SEName.Full7, np.ones((7, 7), dtype=bool))
FULL31 = StructuringElement(SEName.Full31, np.ones((31, 31), dtype=bool))


def _encode(values: np.ndarray) -> np.ndarray:
    return np.where(values > 0.0, values, np.inf)


def _decode(a: np.ndarray) -> np.ndarray:
    return np.where(np.isinf(a), 0.0, a)


def _min_filter(values: np.ndarray, se: StructuringElement) -> np.ndarray:
    k = _accel.kernels
    a = _encode(values)
    out = k.min_filter_rect(a, se.size) if se.is_full else k.min_filter_mask(a, se.mask)
    return _decode(out)


def _max_filter(values: np.ndarray, se: StructuringElement) -> np.ndarray:
    k = _accel.kernels
    a = _encode(values)
    out = k.max_filter_rect(a, se.size) if se.is_full else k.max_filter_mask(a, se.mask)
    return _decode(out)


def dilate_min(depth: DepthMap, se: StructuringElement) -> DepthMap:
    return DepthMap(_min_filter(depth.values, se))


def erode_max(depth: DepthMap, se: StructuringElement) -> DepthMap:
    return DepthMap(_max_filter(depth.values, se))


def _fill_invalid(values: np.ndarray, se: StructuringElement) -> np.ndarray:
    return np.where(values > 0.0, values, _min_filter(values, se))


STAGE_NAMES = ("dilate", "close", "fill7", "extend", "fill31", "median")


def completion_stages(depth: DepthMap) -> list[DepthMap]:
    """Run the six densification stages and return the map after each one."""
    if depth.valid_count == 0:
        raise EmptyInput("depth map has no valid pixels")
    k = _accel.kernels
    v = depth.values
    out = []
    v = _min_filter(v, DIAMOND5)
    out.append(v)
    v = _max_filter(_min_filter(v, FULL5), FULL5)
    out.append(v)
    v = _fill_invalid(v, FULL7)
    out.append(v)
    v = k.column_extend(v)
    out.append(v)
    v = _fill_invalid(v, FULL31)
    out.append(v)
    v = k.median3_valid(v)
    out.append(v)
    return [DepthMap(s) for s in out]


def complete(depth: DepthMap) -> DepthMap:
    """Densify a sparse depth map.

    Stages: diamond-5 dilation, full-5 closing, full-7 hole fill, upward
    column extension, full-31 hole fill, 3x3 median over valid pixels.
    Pixels with no valid depth within the final 31x31 window stay invalid.
    """
    return completion_stages(depth)[-1]


def colorize_viridis(depth: DepthMap, d_min: float = 0.0, d_max: float = 80.0) -> RgbImage:
    if not d_min < d_max:
        raise BadRange(f"d_min={d_min} must be below d_max={d_max}")
    t = np.clip((depth.values - d_min) / (d_max - d_min), 0.0, 1.0)
    pos = t * 255.0
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, 255)
    frac = (pos - lo)[..., None]
    table = VIRIDIS_U8.astype(np.float64)
    rgb = table[lo] * (1.0 - frac) + table[hi] * frac
    rgb = np.floor(rgb + 0.5)
    rgb[~depth.valid] = table[0]
    return RgbImage(rgb.astype(np.uint8))


def colormap_index(depth: DepthMap, d_min: float = 0.0, d_max: float = 80.0) -> np.ndarray:
    """Lower table index used for each pixel by :func:`colorize_viridis`."""
    if not d_min < d_max:
        raise BadRange(f"d_min={d_min} must be below d_max={d_max}")
    t = np.clip((depth.values - d_min) / (d_max - d_min), 0.0, 1.0)
    idx = np.floor(t * 255.0).astype(np.intp)
    return np.where(depth.valid, idx, 0)
