"""Command-line interface.

Subcommands: iou, compare, eval, gt, radius, bench, render. Angles are
radians unless --angle-unit degrees. Exit codes: 0 success, 2 input
error (bad flag, unparseable file, out-of-range field), 3 semantic
failure (detections whose class has no ground truth without
--ignore-unknown; benchmark speedup miss), 4 output I/O error.

Pair files for `iou --pairs` and `compare` are JSON lines, each
{"b1": [theta, phi, alpha, beta], "b2": [...]}, in the unit selected
by --angle-unit.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .criteria import (
    DEFAULT_CRITERIA,
    CriterionId,
    ErpImageSpec,
    compute_iou,
)
from .detector import (
    HEATMAP_MODES,
    LossWeights,
    radius,
    render_gt,
    save_heatmap,
)
from .evaluation import (
    AnnotationParseError,
    BenchSpeedupError,
    EvalConfig,
    bench,
    compare_criteria,
    evaluate,
    load_annotations,
    load_detections,
)
from .geometry import SphericalRect, boundary_normals, rect_vertices

TWO_PI = 2.0 * math.pi


class CliError(Exception):
    """Carries the exit code alongside the message."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class CliConfig:
    subcommand: str
    angle_unit: str = "radians"
    fmt: str = "text"
    out: str | None = None

    def __post_init__(self):
        if self.angle_unit not in ("radians", "degrees"):
            raise CliError(2, f"unknown angle unit {self.angle_unit!r}")

    def to_radians(self, value: float) -> float:
        return math.radians(value) if self.angle_unit == "degrees" else value


def _config(args, allowed_formats) -> CliConfig:
    cfg = CliConfig(args.command, args.angle_unit, args.format, args.out)
    if cfg.fmt not in allowed_formats:
        raise CliError(
            2, f"format {cfg.fmt!r} not supported by {cfg.subcommand}; "
            f"choose from {', '.join(allowed_formats)}"
        )
    return cfg


def _emit(cfg: CliConfig, text: str) -> None:
    if cfg.out is None:
        print(text)
        return
    try:
        with open(cfg.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    except OSError as exc:
        raise CliError(4, f"cannot write {cfg.out}: {exc}") from exc


def _parse_box(text: str, cfg: CliConfig, flag: str) -> SphericalRect:
    parts = text.split(",")
    if len(parts) != 4:
        raise CliError(2, f"{flag}: expected theta,phi,alpha,beta")
    try:
        theta, phi, alpha, beta = (cfg.to_radians(float(p)) for p in parts)
    except ValueError:
        raise CliError(2, f"{flag}: values must be numbers") from None
    try:
        return SphericalRect(theta % TWO_PI, phi, alpha, beta)
    except ValueError as exc:
        raise CliError(2, f"{flag}: {exc}") from exc


def _parse_resolution(text: str, flag: str) -> ErpImageSpec:
    try:
        w, h = text.lower().split("x")
        return ErpImageSpec(int(w), int(h))
    except ValueError as exc:
        raise CliError(2, f"{flag}: expected WIDTHxHEIGHT, got {text!r}") from exc


def _parse_criterion(name: str) -> CriterionId:
    try:
        return CriterionId.parse(name)
    except ValueError as exc:
        raise CliError(2, str(exc)) from exc


def _load_pairs(path: str, cfg: CliConfig):
    pairs = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise CliError(2, f"cannot read {path}: {exc}") from exc
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            b1, b2 = rec["b1"], rec["b2"]
            boxes = []
            for key, vals in (("b1", b1), ("b2", b2)):
                if not isinstance(vals, list) or len(vals) != 4:
                    raise CliError(2, f"{path} line {line_no}: {key} must be [theta,phi,alpha,beta]")
                t, p, a, b = (cfg.to_radians(float(v)) for v in vals)
                boxes.append(SphericalRect(t % TWO_PI, p, a, b))
            pairs.append((boxes[0], boxes[1]))
        except CliError:
            raise
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise CliError(2, f"{path} line {line_no}: {exc}") from exc
    if not pairs:
        raise CliError(2, f"{path}: no pairs found")
    return pairs


def _load_gt(path: str):
    try:
        return load_annotations(path)
    except OSError as exc:
        raise CliError(2, f"cannot read {path}: {exc}") from exc
    except AnnotationParseError as exc:
        raise CliError(2, f"{path}: {exc}") from exc


def _load_det(path: str):
    try:
        return load_detections(path)
    except OSError as exc:
        raise CliError(2, f"cannot read {path}: {exc}") from exc
    except AnnotationParseError as exc:
        raise CliError(2, f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_iou(args) -> int:
    cfg = _config(args, ("text", "json", "csv"))
    resolution = _parse_resolution(args.resolution, "--resolution")
    if args.pairs is not None:
        if args.all:
            raise CliError(2, "--all cannot be combined with --pairs; use the compare command")
        criterion = _parse_criterion(args.criterion)
        pairs = _load_pairs(args.pairs, cfg)
        values = [compute_iou(criterion, b1, b2, resolution) for b1, b2 in pairs]
        if cfg.fmt == "json":
            _emit(cfg, json.dumps(values))
        elif cfg.fmt == "csv":
            _emit(cfg, "pair,iou\n" + "\n".join(f"{i + 1},{v!r}" for i, v in enumerate(values)))
        else:
            _emit(cfg, "\n".join(repr(v) for v in values))
        return 0
    if args.b1 is None or args.b2 is None:
        raise CliError(2, "either --pairs or both --b1 and --b2 are required")
    b1 = _parse_box(args.b1, cfg, "--b1")
    b2 = _parse_box(args.b2, cfg, "--b2")
    if args.all:
        rows = [(c.spec_name(), compute_iou(c, b1, b2, resolution)) for c in DEFAULT_CRITERIA]
        if cfg.fmt == "json":
            _emit(cfg, json.dumps({name: v for name, v in rows}, sort_keys=True))
        elif cfg.fmt == "csv":
            _emit(cfg, "criterion,iou\n" + "\n".join(f"{n},{v!r}" for n, v in rows))
        else:
            width = max(len(n) for n, _ in rows)
            _emit(cfg, "\n".join(f"{n.ljust(width)}  {v!r}" for n, v in rows))
        return 0
    criterion = _parse_criterion(args.criterion)
    value = compute_iou(criterion, b1, b2, resolution)
    _emit(cfg, json.dumps(value) if cfg.fmt == "json" else repr(value))
    return 0


def cmd_compare(args) -> int:
    cfg = _config(args, ("text", "csv"))
    pairs = _load_pairs(args.pairs, cfg)
    resolutions = tuple(
        _parse_resolution(r, "--resolutions") for r in args.resolutions.split(",")
    )
    criteria = (
        tuple(_parse_criterion(n) for n in args.criteria.split(","))
        if args.criteria
        else DEFAULT_CRITERIA
    )
    table = compare_criteria(pairs, criteria, resolutions)
    _emit(cfg, table.to_csv() if cfg.fmt == "csv" else table.to_text())
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args, ("text", "json"))
    gts = _load_gt(args.gt)
    dets = _load_det(args.det)
    criterion = _parse_criterion(args.criterion)
    resolution = _parse_resolution(args.resolution, "--resolution")
    try:
        config = EvalConfig(criterion=criterion, resolution=resolution,
                            max_dets_per_image=args.max_dets)
    except ValueError as exc:
        raise CliError(2, str(exc)) from exc
    report = evaluate(dets, gts, config)
    _emit(cfg, report.to_json() if cfg.fmt == "json" else report.to_text())
    if report.excluded_classes:
        classes = ", ".join(str(c) for c in report.excluded_classes)
        print(f"warning: detection classes with no ground truth: {classes}", file=sys.stderr)
        if not args.ignore_unknown:
            return 3
    return 0


def cmd_gt(args) -> int:
    _config(args, ("text",))
    if args.out is None:
        raise CliError(2, "--out is required")
    gts = _load_gt(args.gt)
    if args.image_id is not None:
        if args.image_id not in gts:
            raise CliError(2, f"image id {args.image_id!r} not present in {args.gt}")
        annotations = gts[args.image_id]
    elif len(gts) == 1:
        annotations = next(iter(gts.values()))
    else:
        raise CliError(2, f"{args.gt} holds {len(gts)} images; pick one with --image-id")
    spec = _parse_resolution(args.image_size, "--image-size")
    num_classes = args.num_classes
    if num_classes is None:
        num_classes = max(a.class_id for a in annotations) + 1
    try:
        weights = LossWeights(iou_threshold=args.iou_threshold)
        tensor = render_gt(annotations, spec, num_classes, weights=weights,
                           sigma_scale=args.sigma_scale, mode=args.mode)
    except ValueError as exc:
        raise CliError(2, str(exc)) from exc
    try:
        save_heatmap(tensor, args.out)
    except OSError as exc:
        raise CliError(4, f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {spec.width}x{spec.height}x{num_classes} ground truth to {args.out}")
    return 0


def cmd_radius(args) -> int:
    cfg = _config(args, ("text", "json"))
    try:
        breakdown = radius(cfg.to_radians(args.alpha), cfg.to_radians(args.beta), args.t)
    except ValueError as exc:
        raise CliError(2, str(exc)) from exc
    if cfg.fmt == "json":
        doc = {
            "gamma_a": breakdown.gamma_a, "valid_a": breakdown.valid_a,
            "gamma_b": breakdown.gamma_b, "valid_b": breakdown.valid_b,
            "gamma_c": breakdown.gamma_c, "valid_c": breakdown.valid_c,
            "gamma": breakdown.gamma, "used_fallback": breakdown.used_fallback,
        }
        _emit(cfg, json.dumps(doc, sort_keys=True))
        return 0
    def row(name, value, valid):
        mark = "valid" if valid else "invalid"
        return f"gamma_{name}  {value!r}  ({mark})"
    lines = [
        row("a", breakdown.gamma_a, breakdown.valid_a),
        row("b", breakdown.gamma_b, breakdown.valid_b),
        row("c", breakdown.gamma_c, breakdown.valid_c),
        f"gamma    {breakdown.gamma!r}" + ("  (bisection fallback)" if breakdown.used_fallback else ""),
    ]
    _emit(cfg, "\n".join(lines))
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args, ("text", "json"))
    names = args.criteria.split(",")
    criteria = tuple(_parse_criterion(n) for n in names)
    resolution = _parse_resolution(args.resolution, "--resolution")
    min_speedup = None if args.no_speedup_check else args.min_speedup
    try:
        report = bench(criteria, n_pairs=args.n_pairs, resolution=resolution,
                       seed=args.seed, min_speedup=min_speedup)
    except ValueError as exc:
        raise CliError(2, str(exc)) from exc
    except BenchSpeedupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    if cfg.fmt == "json":
        _emit(cfg, json.dumps(report.medians, sort_keys=True))
    else:
        _emit(cfg, report.to_text())
    return 0


# ---------------------------------------------------------------------------
# rendering


def _edge_points(rect: SphericalRect, samples: int) -> np.ndarray:
    """Sample the four boundary arcs as unit vectors, (4*samples, 3).

    Each edge is the great-circle arc between adjacent corners; when the
    short arc is not the boundary (possible only at extreme fovs) the
    complementary arc is taken, detected by an interior-boundary test at
    the arc midpoint.
    """
    corners = np.asarray(rect_vertices(rect), dtype=float)
    normals = np.asarray(boundary_normals(rect), dtype=float)
    arcs = []
    for i in range(4):
        v1, v2 = corners[i], corners[(i + 1) % 4]
        n = np.cross(v1, v2)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            arcs.append(np.linspace(0, 1, samples)[:, None] * (v2 - v1)[None, :] + v1)
            continue
        n = n / norm
        e2 = np.cross(n, v1)
        t2 = math.atan2(float(v2 @ e2), float(v2 @ v1))
        for candidate in (t2, t2 - math.copysign(TWO_PI, t2)):
            mid = v1 * math.cos(candidate / 2) + e2 * math.sin(candidate / 2)
            if np.all(normals @ mid >= -1e-6):
                t2 = candidate
                break
        t = np.linspace(0.0, t2, samples)
        arcs.append(np.outer(np.cos(t), v1) + np.outer(np.sin(t), e2))
    return np.concatenate(arcs)


def _erp_polylines(points: np.ndarray, spec: ErpImageSpec):
    """Project unit vectors to pixel coordinates, split at the seam."""
    theta = np.mod(np.arctan2(points[:, 1], points[:, 0]), TWO_PI)
    phi = np.arccos(np.clip(points[:, 2], -1.0, 1.0))
    x = theta / TWO_PI * spec.width
    y = phi / math.pi * spec.height
    segments, current = [], [(float(x[0]), float(y[0]))]
    for k in range(1, len(x)):
        if abs(x[k] - x[k - 1]) > spec.width / 2:
            segments.append(current)
            current = []
        current.append((float(x[k]), float(y[k])))
    segments.append(current)
    return [s for s in segments if len(s) >= 2]


_PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd",
            "#8c564b", "#e377c2", "#17becf")


def _render_segments(gts_for_image, spec: ErpImageSpec, samples: int):
    boxes = []
    for ann in gts_for_image:
        points = _edge_points(ann.bbox, samples)
        color = _PALETTE[ann.class_id % len(_PALETTE)]
        boxes.append((ann, color, _erp_polylines(points, spec)))
    return boxes


def _render_svg(boxes, spec: ErpImageSpec) -> str:
    W, H = spec.width, spec.height
    stroke = max(1.5, W / 512)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" '
        f'width="{W}" height="{H}">',
        f'<rect width="{W}" height="{H}" fill="#ffffff"/>',
    ]
    grid = [f'M 0 {H / 2} H {W}'] + [
        f'M {W * k / 12} 0 V {H}' for k in range(1, 12)
    ] + [f'M 0 {H * k / 6} H {W}' for k in (1, 2, 4, 5)]
    parts.append(
        f'<path d="{" ".join(grid)}" stroke="#dddddd" stroke-width="{stroke / 2}" fill="none"/>'
    )
    for ann, color, segments in boxes:
        for seg in segments:
            pts = " ".join(f"{px:.2f},{py:.2f}" for px, py in seg)
            parts.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" '
                f'stroke-width="{stroke}"/>'
            )
        cx = ann.bbox.theta / TWO_PI * W
        cy = ann.bbox.phi / math.pi * H
        parts.append(
            f'<text x="{cx:.2f}" y="{cy:.2f}" fill="{color}" '
            f'font-size="{stroke * 8:.1f}" text-anchor="middle">{ann.class_id}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def _render_png(boxes, spec: ErpImageSpec, out_path: str) -> None:
    try:
        import matplotlib
    except ImportError as exc:
        raise CliError(
            2, "PNG output needs matplotlib (install the [png] extra) or use a .svg path"
        ) from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(spec.width / 256, spec.height / 256), dpi=128)
    ax.set_xlim(0, spec.width)
    ax.set_ylim(spec.height, 0)
    for ann, color, segments in boxes:
        for seg in segments:
            xs, ys = zip(*seg)
            ax.plot(xs, ys, color=color, linewidth=1.5)
    ax.set_xlabel("x (pixels)")
    ax.set_ylabel("y (pixels)")
    fig.tight_layout()
    try:
        fig.savefig(out_path)
    except OSError as exc:
        raise CliError(4, f"cannot write {out_path}: {exc}") from exc
    finally:
        plt.close(fig)


def cmd_render(args) -> int:
    _config(args, ("text",))
    if args.out is None:
        raise CliError(2, "--out is required")
    gts = _load_gt(args.gt)
    spec = _parse_resolution(args.image_size, "--image-size")
    if args.image_id is not None:
        if args.image_id not in gts:
            raise CliError(2, f"image id {args.image_id!r} not present in {args.gt}")
        annotations = gts[args.image_id]
    else:
        annotations = [a for anns in gts.values() for a in anns]
    if args.samples < 2:
        raise CliError(2, "--samples must be at least 2")
    boxes = _render_segments(annotations, spec, args.samples)
    if args.out.lower().endswith(".png"):
        _render_png(boxes, spec, args.out)
    else:
        svg = _render_svg(boxes, spec)
        try:
            with open(args.out, "w", encoding="utf-8") as f:
                f.write(svg + "\n")
        except OSError as exc:
            raise CliError(4, f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--angle-unit", choices=("radians", "degrees"), default="radians")
    common.add_argument("--format", choices=("text", "json", "csv"), default="text")
    common.add_argument("--out", default=None, help="write output to this file instead of stdout")

    parser = argparse.ArgumentParser(
        prog="sphdet",
        description="Spherical-rectangle IoU, biased baselines, and detection evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("iou", parents=[common],
                       help="IoU between two boxes, or batched over a pairs file")
    p.add_argument("--b1", help="theta,phi,alpha,beta")
    p.add_argument("--b2", help="theta,phi,alpha,beta")
    p.add_argument("--pairs", help="JSONL file of {\"b1\": [...], \"b2\": [...]}")
    p.add_argument("--criterion", default="unbiased")
    p.add_argument("--all", action="store_true", help="print every built-in criterion")
    p.add_argument("--resolution", default="2048x1024",
                   help="ERP grid for resolution-dependent criteria")
    p.set_defaults(func=cmd_iou)

    p = sub.add_parser("compare", parents=[common],
                       help="criteria-by-resolution IoU table over a pairs file")
    p.add_argument("--pairs", required=True)
    p.add_argument("--resolutions", default="8192x4096,10240x5120,12288x6144")
    p.add_argument("--criteria", default=None, help="comma-separated criterion names")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("eval", parents=[common], help="average precision over dataset files")
    p.add_argument("--gt", required=True)
    p.add_argument("--det", required=True)
    p.add_argument("--criterion", default="unbiased")
    p.add_argument("--resolution", default="2048x1024")
    p.add_argument("--max-dets", type=int, default=100)
    p.add_argument("--ignore-unknown", action="store_true",
                   help="exit 0 even when detections name classes with no ground truth")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gt", parents=[common],
                       help="render ground-truth supervision planes to a binary file (--out)")
    p.add_argument("--gt", required=True)
    p.add_argument("--image-id", default=None)
    p.add_argument("--image-size", default="256x128")
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--mode", choices=HEATMAP_MODES, default="distance")
    p.add_argument("--sigma-scale", type=float, default=1.0 / 3.0)
    p.add_argument("--iou-threshold", type=float, default=0.7)
    p.set_defaults(func=cmd_gt)

    p = sub.add_parser("radius", parents=[common],
                       help="gaussian radius candidates for a box size")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--t", type=float, default=0.7, help="IoU threshold the radius must keep")
    p.set_defaults(func=cmd_radius)

    p = sub.add_parser("bench", parents=[common], help="median per-call timing per criterion")
    p.add_argument("--criteria", default="unbiased,rectangle,circle,sphiou,integral")
    p.add_argument("--n-pairs", type=int, default=100)
    p.add_argument("--resolution", default="8192x4096")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-speedup", type=float, default=10.0)
    p.add_argument("--no-speedup-check", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", parents=[common],
                       help="draw boxes as boundary arcs on an equirectangular canvas "
                            "(--out, .svg or .png)")
    p.add_argument("--gt", required=True)
    p.add_argument("--image-id", default=None)
    p.add_argument("--image-size", default="2048x1024")
    p.add_argument("--samples", type=int, default=64, help="arc samples per edge")
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (AnnotationParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
