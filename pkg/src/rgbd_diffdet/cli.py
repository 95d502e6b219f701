"""Command-line front end.

Every subcommand prints one JSON object on stdout.  Typed errors exit with
status 2 and print ``ErrorName: message`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import _accel
from .box_diffusion import (
    IdentityDenoiser,
    NoisyOracleDenoiser,
    OracleDenoiser,
    cosine_schedule,
    cxcywh_to_xyxy,
    make_ladder,
    reverse_sample,
    signal_decode,
    write_trace,
)
from .depth_completion import colorize_viridis, complete
from .errors import BadStepLadder, EmptyInput, RgbdDiffDetError, ShapeMismatch
from .evaluation import GroundTruth, evaluate, read_detections
from .fusion_ops import OPS, fuse, make_params
from .geometry import Projector, project_points_timed
from .kitti_io import Category, parse_calibration, parse_labels, parse_velodyne, write_depth_png16, write_ppm
from .losses_matching import iou


def _emit(obj: dict) -> None:
    print(json.dumps(obj))


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(path)
    return p


# -- depth ------------------------------------------------------------------


def cmd_depth(args) -> dict:
    calib = parse_calibration(_existing(args.calib).read_bytes())
    cloud = parse_velodyne(_existing(args.velodyne).read_bytes())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _accel.warmup()

    sparse, t_proj = project_points_timed(Projector(calib, args.width, args.height), cloud)
    t0 = time.perf_counter()
    dense = complete(sparse)
    t_comp = time.perf_counter() - t0
    color = colorize_viridis(dense, args.dmin, args.dmax)

    (out / "sparse.pgm16").write_bytes(write_depth_png16(sparse))
    (out / "dense.pgm16").write_bytes(write_depth_png16(dense))
    (out / "color.ppm").write_bytes(write_ppm(color))
    return {
        "seed": args.seed,
        "backend": _accel.BACKEND,
        "valid_sparse": sparse.valid_count,
        "valid_dense": dense.valid_count,
        "ms_project": round(t_proj * 1e3, 3),
        "ms_complete": round(t_comp * 1e3, 3),
    }


# -- diffusion demo ---------------------------------------------------------


def _parse_ladder(text: str, T: int) -> list[tuple[int, int]]:
    parts = [p for p in text.split(",") if p.strip()]
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise BadStepLadder(f"cannot parse ladder {text!r}") from None
    if len(values) == 1:
        return make_ladder(T, values[0])
    return list(zip(values[:-1], values[1:]))


def _make_denoiser(text: str, gt: np.ndarray, seed: int, scale: float):
    name, _, arg = text.partition(":")
    if name == "oracle":
        return OracleDenoiser(gt, scale)
    if name == "noisy-oracle":
        return NoisyOracleDenoiser(gt, float(arg or 0.01), seed, scale)
    if name == "identity":
        return IdentityDenoiser()
    raise ValueError(f"unknown denoiser {text!r}")


def label_boxes(records, width: int, height: int) -> np.ndarray:
    """Normalized cxcywh boxes for every non-DontCare label."""
    rows = []
    for r in records:
        if r.category is Category.DontCare:
            continue
        x1, y1, x2, y2 = r.bbox
        rows.append(((x1 + x2) / 2 / width, (y1 + y2) / 2 / height, (x2 - x1) / width, (y2 - y1) / height))
    return np.clip(np.array(rows, dtype=np.float64).reshape(-1, 4), 0.0, 1.0)


def cmd_diffuse(args) -> dict:
    records = parse_labels(_existing(args.labels).read_bytes())
    gt = label_boxes(records, args.width, args.height)
    if len(gt) == 0:
        raise EmptyInput("label file has no non-DontCare boxes")
    sched = cosine_schedule(args.steps)
    ladder = _parse_ladder(args.ladder, args.steps)
    denoiser = _make_denoiser(args.denoiser, gt, args.seed, args.scale)

    start = np.random.default_rng(args.seed).standard_normal(gt.shape)
    final, trace = reverse_sample(start, denoiser, sched, ladder, args.renew_threshold, args.seed, args.scale)
    boxes = signal_decode(final, args.scale)
    ious = [iou(a, b) for a, b in zip(cxcywh_to_xyxy(boxes), cxcywh_to_xyxy(gt))]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(write_trace(trace))
    return {
        "seed": args.seed,
        "denoiser": args.denoiser,
        "n_boxes": len(gt),
        "ladder": ladder,
        "mean_iou": float(np.mean(ious)),
        "trace": str(out),
    }


# -- evaluation -------------------------------------------------------------


def load_ground_truth(label_dir: Path) -> list[GroundTruth]:
    gts = []
    for path in sorted(label_dir.glob("*.txt")):
        gts += [GroundTruth.from_label(path.stem, r) for r in parse_labels(path.read_bytes())]
    return gts


def cmd_eval(args) -> dict:
    gts = load_ground_truth(_existing(args.labels))
    dets = read_detections(_existing(args.detections).read_bytes())
    report = evaluate(dets, gts, dontcare_as_category=args.dontcare_as_category)
    return report.to_dict()


# -- fusion benchmark -------------------------------------------------------


def _parse_shape(text: str) -> tuple[int, int, int, int]:
    try:
        shape = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ShapeMismatch(f"cannot parse shape {text!r}") from None
    if len(shape) != 4 or min(shape) <= 0:
        raise ShapeMismatch(f"shape must be four positive ints B,N,H,W, got {text!r}")
    return shape


def cmd_fuse_bench(args) -> dict:
    """Time one fusion op.

    ``--shape`` is the operator input: each of the RGB/depth tensors for
    concat, sum and ca; the concatenated tensor for conv and mlp.
    """
    b, n, h, w = _parse_shape(args.shape)
    n_mod = n
    if args.op in ("conv", "mlp"):
        if n % 2:
            raise ShapeMismatch(f"{args.op} input channel count must be even, got {n}")
        n_mod = n // 2
    rng = np.random.default_rng(args.seed)
    xc = rng.standard_normal((b, n_mod, h, w))
    xd = rng.standard_normal((b, n_mod, h, w))
    params = make_params(args.op, 2 * n_mod, args.out_channels, args.seed)

    times = []
    for _ in range(max(1, args.iters)):
        t0 = time.perf_counter()
        out = fuse(args.op, xc, xd, params)
        times.append((time.perf_counter() - t0) * 1e3)
    return {
        "op": args.op,
        "seed": args.seed,
        "shape_in": "(" + ",".join(map(str, (b, n, h, w))) + ")",
        "shape_out": "(" + ",".join(map(str, out.shape)) + ")",
        "iters": len(times),
        "median_ms": round(statistics.median(times), 3),
        "checksum": round(float(out.sum()), 6),
    }


def cmd_bench(args) -> dict:
    from .bench import compare_backends

    return {"results": compare_backends(args.points, args.width, args.height, args.repeats)}


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgbd-diffdet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("depth", help="project a velodyne scan and densify it")
    p.add_argument("--calib", required=True)
    p.add_argument("--velodyne", required=True)
    p.add_argument("--width", type=int, default=1242)
    p.add_argument("--height", type=int, default=375)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dmin", type=float, default=0.0)
    p.add_argument("--dmax", type=float, default=80.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("diffuse", help="run the box sampler against a test denoiser")
    p.add_argument("--labels", required=True)
    p.add_argument("--width", type=int, default=1242)
    p.add_argument("--height", type=int, default=375)
    p.add_argument("--steps", type=int, default=1000, help="schedule length T")
    p.add_argument("--ladder", default="4", help="sampling step count, or explicit 't0,t1,...,0'")
    p.add_argument("--denoiser", default="noisy-oracle:0.01", help="oracle | noisy-oracle:SIGMA | identity")
    p.add_argument("--scale", type=float, default=2.0)
    p.add_argument("--renew-threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="trace.jsonl")
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("eval", help="COCO-style AP of detections against KITTI labels")
    p.add_argument("--labels", required=True, help="directory of <image_id>.txt label files")
    p.add_argument("--detections", required=True, help="JSON-lines detections")
    p.add_argument("--dontcare-as-category", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse-bench", help="time a fusion operator")
    p.add_argument("--op", choices=OPS, required=True)
    p.add_argument("--shape", default="1,256,8,8", help="B,N,H,W")
    p.add_argument("--out-channels", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=3)
    p.set_defaults(func=cmd_fuse_bench)

    p = sub.add_parser("bench", help="compare numba and pure-numpy kernels")
    p.add_argument("--points", type=int, default=120_000)
    p.add_argument("--width", type=int, default=1242)
    p.add_argument("--height", type=int, default=375)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _emit(args.func(args))
    except RgbdDiffDetError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
