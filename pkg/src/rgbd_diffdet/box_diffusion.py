"""Noise-to-box diffusion: box encoding, forward corruption and DDIM sampling.

Boxes are (N, 4) arrays of normalized ``cx, cy, w, h``.  "Image space" means
values in [0, 1]; "signal space" is the affine map ``(2 b - 1) * scale`` in
which the diffusion runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Protocol, Sequence

import numpy as np

from .errors import BadStepLadder, BadSteps, CountMismatch, StepOutOfRange, TooManyGt

DEFAULT_SCALE = 2.0
DEFAULT_STEPS = 1000
DEFAULT_RENEW_THRESHOLD = 0.5
MIN_WH = 1e-4


@dataclass(frozen=True)
class NoiseSchedule:
    alpha_bar: np.ndarray  # length T + 1, alpha_bar[0] == 1

    @property
    def T(self) -> int:
        return len(self.alpha_bar) - 1

    def check_step(self, t: int) -> None:
        if not 0 <= t <= self.T:
            raise StepOutOfRange(f"step {t} outside [0, {self.T}]")


def cosine_schedule(T: int = DEFAULT_STEPS, s: float = 0.008) -> NoiseSchedule:
    if T < 1:
        raise BadSteps(f"need at least one step, got {T}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos((t / T + s) / (1 + s) * np.pi / 2) ** 2
    ab = f / f[0]
    ab[0] = 1.0
    ab.setflags(write=False)
    return NoiseSchedule(ab)


def signal_encode(boxes: np.ndarray, scale: float = DEFAULT_SCALE) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64)
    return np.clip((2.0 * b - 1.0) * scale, -scale, scale)


def signal_decode(x: np.ndarray, scale: float = DEFAULT_SCALE) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), -scale, scale)
    b = (x / scale + 1.0) / 2.0
    b[..., 2:] = np.maximum(b[..., 2:], MIN_WH)
    return b


def cxcywh_to_xyxy(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    cx, cy, w, h = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def xyxy_to_cxcywh(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    x1, y1, x2, y2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1], axis=-1)


def pad_boxes(gt: np.ndarray, n_train: int = 500, seed: int = 0, scale: float = DEFAULT_SCALE) -> np.ndarray:
    """Pad image-space GT boxes to ``n_train`` with decoded Gaussian boxes."""
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    if len(gt) > n_train:
        raise TooManyGt(f"{len(gt)} ground-truth boxes exceed n_train={n_train}")
    rng = np.random.default_rng(seed)
    extra = signal_decode(rng.standard_normal((n_train - len(gt), 4)), scale)
    return np.concatenate([gt, extra], axis=0)


def forward_corrupt(
    x0: np.ndarray,
    t: int,
    sched: NoiseSchedule,
    seed: int = 0,
    scale: float = DEFAULT_SCALE,
    clamp: bool = True,
) -> np.ndarray:
    """Sample x_t ~ N(sqrt(ab_t) x0, (1 - ab_t) I) for signal-space ``x0``."""
    sched.check_step(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.random.default_rng(seed).standard_normal(x0.shape)
    ab = sched.alpha_bar[t]
    xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return np.clip(xt, -scale, scale) if clamp else xt


def renoise(xs: np.ndarray, s: int, t: int, sched: NoiseSchedule, seed: int = 0) -> np.ndarray:
    """Carry an (unclamped) sample at step ``s`` forward to step ``t >= s``."""
    sched.check_step(s)
    sched.check_step(t)
    if t < s:
        raise StepOutOfRange(f"cannot renoise backwards from {s} to {t}")
    ratio = sched.alpha_bar[t] / sched.alpha_bar[s]
    eps = np.random.default_rng(seed).standard_normal(np.shape(xs))
    return np.sqrt(ratio) * np.asarray(xs) + np.sqrt(1.0 - ratio) * eps


def train_target_loss(x0_hat: np.ndarray, x0: np.ndarray) -> float:
    a = np.asarray(x0_hat, dtype=np.float64)
    b = np.asarray(x0, dtype=np.float64)
    if a.shape != b.shape:
        raise CountMismatch(f"prediction shape {a.shape} != target shape {b.shape}")
    d = a - b
    return 0.5 * float(np.sum(d * d))


# -- sampling ---------------------------------------------------------------


class Denoiser(Protocol):
    def predict(self, x_t: np.ndarray, t: int, context: Any = None) -> tuple[np.ndarray, np.ndarray | None]:
        """Return signal-space x0 estimates (N, 4) and optional (N, C) scores."""


class OracleDenoiser:
    """Always predicts the ground truth, with score 1."""

    def __init__(self, gt: np.ndarray, scale: float = DEFAULT_SCALE):
        self.x0 = signal_encode(np.asarray(gt, dtype=np.float64).reshape(-1, 4), scale)

    def predict(self, x_t, t, context=None):
        if len(x_t) != len(self.x0):
            raise CountMismatch(f"oracle holds {len(self.x0)} boxes, got {len(x_t)}")
        return self.x0.copy(), np.ones((len(self.x0), 1))


class NoisyOracleDenoiser(OracleDenoiser):
    """Ground truth plus seeded signal-space Gaussian noise of std ``sigma``."""

    def __init__(self, gt: np.ndarray, sigma: float = 0.01, seed: int = 0, scale: float = DEFAULT_SCALE):
        super().__init__(gt, scale)
        self.sigma = sigma
        self.seed = seed

    def predict(self, x_t, t, context=None):
        x0, scores = super().predict(x_t, t, context)
        rng = np.random.default_rng([self.seed, t])
        return x0 + self.sigma * rng.standard_normal(x0.shape), scores


class IdentityDenoiser:
    """Returns its input as the x0 estimate; never triggers renewal."""

    def predict(self, x_t, t, context=None):
        return np.array(x_t, dtype=np.float64), None


@dataclass
class TraceStep:
    step: int
    t: int
    boxes: np.ndarray  # signal space
    scores: np.ndarray | None

    def to_json(self) -> str:
        rec = {
            "step": self.step,
            "t": self.t,
            "boxes": self.boxes.tolist(),
            "scores": None if self.scores is None else self.scores.tolist(),
        }
        return json.dumps(rec)


def write_trace(trace: Sequence[TraceStep]) -> bytes:
    return "".join(s.to_json() + "\n" for s in trace).encode("utf-8")


def make_ladder(T: int, n_steps: int) -> list[tuple[int, int]]:
    """Evenly spaced (t_now, t_next) pairs from T down to 0."""
    if n_steps < 1 or n_steps > T:
        raise BadStepLadder(f"cannot split {T} steps into {n_steps} sampling steps")
    times = np.round(np.linspace(T, 0, n_steps + 1)).astype(int).tolist()
    return list(zip(times[:-1], times[1:]))


def _check_ladder(steps: Sequence[tuple[int, int]], T: int) -> None:
    if not steps:
        raise BadStepLadder("empty ladder")
    if steps[0][0] != T or steps[-1][1] != 0:
        raise BadStepLadder(f"ladder must run from {T} to 0")
    for i, (now, nxt) in enumerate(steps):
        if not nxt < now:
            raise BadStepLadder(f"step {i} does not decrease: {now} -> {nxt}")
        if i and steps[i - 1][1] != now:
            raise BadStepLadder(f"step {i} starts at {now}, previous ended at {steps[i - 1][1]}")


def reverse_sample(
    start: np.ndarray,
    denoiser: Denoiser,
    sched: NoiseSchedule,
    steps: Sequence[tuple[int, int]],
    renew_threshold: float = DEFAULT_RENEW_THRESHOLD,
    seed: int = 0,
    scale: float = DEFAULT_SCALE,
    context: Any = None,
) -> tuple[np.ndarray, list[TraceStep]]:
    """Deterministic DDIM (eta = 0) refinement of signal-space boxes.

    Between steps, boxes whose best class score falls below
    ``renew_threshold`` are replaced by fresh Gaussian draws; the draws use
    ``seed`` so the whole trajectory is reproducible.
    """
    _check_ladder(steps, sched.T)
    rng = np.random.default_rng(seed)
    ab = sched.alpha_bar
    x = np.clip(np.asarray(start, dtype=np.float64), -scale, scale)
    trace = [TraceStep(0, steps[0][0], x.copy(), None)]
    for i, (now, nxt) in enumerate(steps):
        x0_hat, scores = denoiser.predict(x, now, context)
        x0_hat = np.clip(np.asarray(x0_hat, dtype=np.float64), -scale, scale)
        if x0_hat.shape != x.shape:
            raise CountMismatch(f"denoiser returned {x0_hat.shape}, expected {x.shape}")
        eps_hat = (x - np.sqrt(ab[now]) * x0_hat) / np.sqrt(1.0 - ab[now])
        x = np.sqrt(ab[nxt]) * x0_hat + np.sqrt(1.0 - ab[nxt]) * eps_hat
        x = np.clip(x, -scale, scale)
        if scores is not None and nxt > 0:
            stale = np.max(scores, axis=1) < renew_threshold
            if stale.any():
                x[stale] = np.clip(rng.standard_normal((int(stale.sum()), 4)), -scale, scale)
        trace.append(TraceStep(i + 1, nxt, x.copy(), None if scores is None else np.asarray(scores)))
    return x, trace
