"""RGB/depth feature fusion operators applied per pyramid level.

Five operators: channel concatenation, element-wise sum, a 1x1 MLP over the
concatenated tensor, a small 3x3 conv net with a 1x1 skip, and RGB-queries
depth cross-attention over spatial tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ChannelMismatch, ShapeMismatch, SpatialMismatch
from .tensor_core import ConvWeights, as_feature_tensor, attention, conv2d, layer_norm_lastdim, relu

OPS = ("concat", "sum", "conv", "mlp", "ca")
LEVELS = ("P2", "P3", "P4", "P5")
DEFAULT_OUT_CHANNELS = 256


def fuse_concat(xc: np.ndarray, xd: np.ndarray) -> np.ndarray:
    xc, xd = as_feature_tensor(xc), as_feature_tensor(xd)
    if (xc.shape[0], *xc.shape[2:]) != (xd.shape[0], *xd.shape[2:]):
        raise SpatialMismatch(f"cannot concatenate {xc.shape} with {xd.shape}")
    return np.concatenate([xc, xd], axis=1)


def split_concat(x: np.ndarray, n_c: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`fuse_concat` given the RGB channel count."""
    return x[:, :n_c], x[:, n_c:]


def fuse_sum(xc: np.ndarray, xd: np.ndarray) -> np.ndarray:
    xc, xd = as_feature_tensor(xc), as_feature_tensor(xd)
    if xc.shape != xd.shape:
        raise ShapeMismatch(f"cannot sum {xc.shape} and {xd.shape}")
    return xc + xd


@dataclass(frozen=True)
class MlpFusionParams:
    expand: ConvWeights  # 1x1, N -> N
    reduce: ConvWeights  # 1x1, N -> N_o
    out: ConvWeights  # 1x1, N_o -> N_o

    @property
    def n_in(self) -> int:
        return self.expand.n_in

    @property
    def n_out(self) -> int:
        return self.out.n_out

    @classmethod
    def seeded(cls, n: int, n_out: int, seed: int = 0) -> "MlpFusionParams":
        rng = np.random.default_rng(seed)
        return cls(
            ConvWeights.seeded(n, n, 1, rng),
            ConvWeights.seeded(n_out, n, 1, rng),
            ConvWeights.seeded(n_out, n_out, 1, rng),
        )


@dataclass(frozen=True)
class ConvFusionParams:
    conv1: ConvWeights  # 3x3, N -> N
    conv2: ConvWeights  # 3x3, N -> N_o
    skip: ConvWeights  # 1x1, N -> N_o

    @property
    def n_in(self) -> int:
        return self.conv1.n_in

    @property
    def n_out(self) -> int:
        return self.conv2.n_out

    @classmethod
    def seeded(cls, n: int, n_out: int, seed: int = 0) -> "ConvFusionParams":
        rng = np.random.default_rng(seed)
        return cls(
            ConvWeights.seeded(n, n, 3, rng),
            ConvWeights.seeded(n_out, n, 3, rng),
            ConvWeights.seeded(n_out, n, 1, rng),
        )


def _check_params(x: np.ndarray, params, n_out: int | None) -> None:
    if x.shape[1] != params.n_in:
        raise ChannelMismatch(f"input has {x.shape[1]} channels, fusion expects {params.n_in}")
    if n_out is not None and n_out != params.n_out:
        raise ChannelMismatch(f"params produce {params.n_out} channels, {n_out} requested")


def fuse_mlp(x_cat: np.ndarray, params: MlpFusionParams, n_out: int | None = None) -> np.ndarray:
    x = as_feature_tensor(x_cat)
    _check_params(x, params, n_out)
    x1 = relu(conv2d(x, params.expand))
    x2 = relu(conv2d(x1, params.reduce))
    return conv2d(x2, params.out)


def fuse_conv(x_cat: np.ndarray, params: ConvFusionParams, n_out: int | None = None) -> np.ndarray:
    x = as_feature_tensor(x_cat)
    _check_params(x, params, n_out)
    x1 = relu(conv2d(x, params.conv1))
    x2 = conv2d(x1, params.conv2)
    x3 = conv2d(x, params.skip)
    return x2 + x3


def fuse_cross_attention(xc: np.ndarray, xd: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """RGB tokens attend to depth tokens; residual add then layer norm.

    Tokens are spatial positions, so attention runs over H*W tokens of
    dimension N independently for each batch element.
    """
    xc, xd = as_feature_tensor(xc), as_feature_tensor(xd)
    if xc.shape != xd.shape:
        raise ShapeMismatch(f"cross-attention needs equal shapes, got {xc.shape} and {xd.shape}")
    b, n, h, w = xc.shape
    out = np.empty_like(xc)
    for bi in range(b):
        qc = xc[bi].reshape(n, h * w).T
        kd = xd[bi].reshape(n, h * w).T
        res = qc + attention(qc, kd, kd)
        out[bi] = layer_norm_lastdim(res, eps).T.reshape(n, h, w)
    return out


def make_params(op: str, n: int, n_out: int = DEFAULT_OUT_CHANNELS, seed: int = 0):
    """Seeded weights for the parametric operators; ``None`` for the rest."""
    if op == "conv":
        return ConvFusionParams.seeded(n, n_out, seed)
    if op == "mlp":
        return MlpFusionParams.seeded(n, n_out, seed)
    if op in OPS:
        return None
    raise ValueError(f"unknown fusion op {op!r}")


def fuse(op: str, xc: np.ndarray, xd: np.ndarray, params=None) -> np.ndarray:
    """Apply fusion ``op`` to an RGB/depth pair.

    ``conv`` and ``mlp`` consume the concatenation of the pair; their weights
    come from ``params`` (see :func:`make_params`).
    """
    if op == "concat":
        return fuse_concat(xc, xd)
    if op == "sum":
        return fuse_sum(xc, xd)
    if op == "ca":
        return fuse_cross_attention(xc, xd)
    if op == "conv":
        return fuse_conv(fuse_concat(xc, xd), params)
    if op == "mlp":
        return fuse_mlp(fuse_concat(xc, xd), params)
    raise ValueError(f"unknown fusion op {op!r}")


def pyramid_shapes(b: int, n: int, h: int, w: int) -> dict[str, tuple[int, int, int, int]]:
    shapes = {}
    for level in LEVELS:
        shapes[level] = (b, n, h, w)
        h, w = -(-h // 2), -(-w // 2)
    return shapes


def check_pyramid(levels: dict[str, np.ndarray]) -> None:
    """Raise unless P2..P5 halve spatially (rounding up) and share B and N."""
    if set(levels) != set(LEVELS):
        raise ShapeMismatch(f"expected levels {LEVELS}, got {sorted(levels)}")
    b, n, h, w = levels["P2"].shape
    if {lvl: levels[lvl].shape for lvl in LEVELS} != pyramid_shapes(b, n, h, w):
        raise ShapeMismatch("pyramid levels do not halve from P2 to P5")


def fuse_levels(
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    rgb: dict[str, np.ndarray],
    depth: dict[str, np.ndarray],
) -> dict[str, np.ndarray]:
    check_pyramid(rgb)
    check_pyramid(depth)
    fused = {lvl: fn(rgb[lvl], depth[lvl]) for lvl in LEVELS}
    check_pyramid(fused)
    return fused
