"""Forward-only float64 primitives for rank-4 feature tensors.

Feature tensors are plain ``numpy`` arrays of shape (B, N, H, W).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ChannelMismatch, DimMismatch, InvalidTensor, MalformedHeader, ShapeMismatch


def as_feature_tensor(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeMismatch(f"expected a (B, N, H, W) tensor, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidTensor("feature tensor has non-finite entries")
    return arr


@dataclass(frozen=True)
class ConvWeights:
    kernel: np.ndarray  # (n_out, n_in, k, k)
    bias: np.ndarray  # (n_out,)

    def __post_init__(self):
        kern = np.asarray(self.kernel, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64)
        if kern.ndim != 4 or kern.shape[2] != kern.shape[3] or kern.shape[2] % 2 == 0:
            raise ShapeMismatch(f"kernel must be (n_out, n_in, k, k) with odd k, got {kern.shape}")
        if bias.shape != (kern.shape[0],):
            raise ShapeMismatch(f"bias shape {bias.shape} does not match {kern.shape[0]} outputs")
        object.__setattr__(self, "kernel", kern)
        object.__setattr__(self, "bias", bias)

    @property
    def n_out(self) -> int:
        return self.kernel.shape[0]

    @property
    def n_in(self) -> int:
        return self.kernel.shape[1]

    @property
    def k(self) -> int:
        return self.kernel.shape[2]

    @classmethod
    def seeded(cls, n_out: int, n_in: int, k: int, rng: np.random.Generator) -> "ConvWeights":
        """Uniform in +-sqrt(1 / (n_in * k * k)), drawn kernel first then bias."""
        bound = np.sqrt(1.0 / (n_in * k * k))
        kernel = rng.uniform(-bound, bound, size=(n_out, n_in, k, k))
        bias = rng.uniform(-bound, bound, size=n_out)
        return cls(kernel, bias)

    @classmethod
    def identity(cls, n: int) -> "ConvWeights":
        return cls(np.eye(n)[:, :, None, None], np.zeros(n))

    @classmethod
    def zeros(cls, n_out: int, n_in: int, k: int) -> "ConvWeights":
        return cls(np.zeros((n_out, n_in, k, k)), np.zeros(n_out))


def conv2d(x: np.ndarray, w: ConvWeights) -> np.ndarray:
    """Stride-1 convolution with zero 'same' padding.

    Cross-correlation, as in PyTorch.  Accumulates one matrix product per
    kernel tap, so memory stays at a single padded copy of ``x``.
    """
    x = as_feature_tensor(x)
    b, n, h, wd = x.shape
    if n != w.n_in:
        raise ChannelMismatch(f"input has {n} channels, weights expect {w.n_in}")
    k = w.k
    r = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r))) if r else x
    # contiguous per-tap matrices; strided operands would bypass BLAS
    taps = np.ascontiguousarray(w.kernel.transpose(2, 3, 0, 1))
    out = np.empty((b, w.n_out, h, wd))
    for bi in range(b):
        acc = np.zeros((w.n_out, h * wd))
        for dy in range(k):
            for dx in range(k):
                window = np.ascontiguousarray(xp[bi, :, dy : dy + h, dx : dx + wd]).reshape(n, h * wd)
                acc += taps[dy, dx] @ window
        acc += w.bias[:, None]
        out[bi] = acc.reshape(w.n_out, h, wd)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax_lastdim(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm_lastdim(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Normalize each row to zero mean, unit (population) variance; no affine."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    return centered / np.sqrt(var + eps)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Single-head scaled dot-product attention: softmax(q k^T / sqrt(d)) v."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimMismatch("attention expects 2-D q, k, v")
    if q.shape[1] != k.shape[1]:
        raise DimMismatch(f"query dim {q.shape[1]} != key dim {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise DimMismatch(f"{k.shape[0]} keys but {v.shape[0]} values")
    scores = (q @ k.T) / np.sqrt(q.shape[1])
    return softmax_lastdim(scores) @ v


# -- FTEN fixture format ----------------------------------------------------
# b"FTEN" + four little-endian u32 dims + little-endian f64 payload

_FTEN_MAGIC = b"FTEN"
_FTEN_HEADER = struct.Struct("<4s4I")


def write_ften(x: np.ndarray) -> bytes:
    x = as_feature_tensor(x)
    return _FTEN_HEADER.pack(_FTEN_MAGIC, *x.shape) + x.astype("<f8").tobytes()


def read_ften(data: bytes) -> np.ndarray:
    data = bytes(data)
    if len(data) < _FTEN_HEADER.size:
        raise MalformedHeader("FTEN header truncated")
    magic, *dims = _FTEN_HEADER.unpack_from(data)
    if magic != _FTEN_MAGIC:
        raise MalformedHeader(f"bad magic {magic!r}")
    count = int(np.prod(dims, dtype=np.int64))
    payload = data[_FTEN_HEADER.size :]
    if len(payload) != 8 * count:
        raise MalformedHeader(f"payload is {len(payload)} bytes, header implies {8 * count}")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
