"""Detection evaluation: dataset IO, matching, AP, tables, benchmarks.

Datasets are JSON-lines files, one record per line, angles in radians
unless the first line is a header object {"angle_unit": "degrees"}.
Annotation records carry image_id, class_id, theta, phi, alpha, beta;
detection records add score.

Average precision follows the COCO convention: 101-point interpolation
over the recall grid 0.00, 0.01, ..., 1.00 with the precision envelope,
averaged over the thresholds 0.50:0.05:0.95. The matching criterion is
pluggable, which is the whole point: swapping the unbiased IoU for a
biased baseline changes APs on polar scenes.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .criteria import (
    CriterionId,
    ErpImageSpec,
    ProjectionOverflowError,
    ZeroUnionError,
    compute_iou,
)
from .detector import GtAnnotation
from .geometry import NumericallyDegenerateError, SphericalRect

TWO_PI = 2.0 * math.pi

DEFAULT_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
MIN_FOV = 1e-6


class UndefinedApError(ValueError):
    """Raised when AP is requested for a class with no ground truth."""


class AnnotationParseError(ValueError):
    """A dataset line failed to parse; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class FieldRangeError(AnnotationParseError):
    """A parsed field lies outside its documented range."""

    def __init__(self, line_no: int, fieldname: str, message: str):
        super().__init__(line_no, f"field {fieldname!r} {message}")
        self.field = fieldname


class BenchSpeedupError(RuntimeError):
    """The analytical IoU missed the required speedup over the integral."""


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    class_id: int
    score: float
    bbox: SphericalRect

    def __post_init__(self):
        if not isinstance(self.image_id, str) or not self.image_id:
            raise ValueError("image_id must be a non-empty string")
        if not isinstance(self.class_id, int) or self.class_id < 0:
            raise ValueError("class_id must be a non-negative integer")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")


@dataclass(frozen=True)
class EvalConfig:
    criterion: CriterionId = CriterionId.unbiased()
    iou_thresholds: tuple = DEFAULT_THRESHOLDS
    max_dets_per_image: int = 100
    resolution: ErpImageSpec = ErpImageSpec(2048, 1024)

    def __post_init__(self):
        ts = tuple(self.iou_thresholds)
        if not ts or any(not 0.0 < t < 1.0 for t in ts):
            raise ValueError("thresholds must lie strictly inside (0, 1)")
        if any(a >= b for a, b in zip(ts, ts[1:])):
            raise ValueError("thresholds must be strictly increasing")
        if self.max_dets_per_image < 1:
            raise ValueError("max_dets_per_image must be >= 1")
        object.__setattr__(self, "iou_thresholds", ts)


class MatchDecision(NamedTuple):
    image_id: str
    class_id: int
    threshold: float
    score: float
    det_index: int  # position within the image's capped, class-filtered detections
    gt_index: int | None  # None marks a false positive
    iou: float


@dataclass(frozen=True)
class EvalReport:
    """Per-class, per-threshold APs plus the aggregate numbers.

    ap averages over every class and threshold; ap50/ap75 are None when
    the config omitted that threshold. excluded_classes lists detection
    classes that had no ground truth anywhere (their AP is undefined).
    """

    per_class: dict
    ap: float
    ap50: float | None
    ap75: float | None
    excluded_classes: tuple
    matches: tuple
    criterion_name: str
    thresholds: tuple

    def to_json(self) -> str:
        doc = {
            "criterion": self.criterion_name,
            "thresholds": list(self.thresholds),
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "per_class": {
                str(c): {f"{t:.2f}": v for t, v in sorted(self.per_class[c].items())}
                for c in sorted(self.per_class)
            },
            "excluded_classes": list(self.excluded_classes),
        }
        return json.dumps(doc, sort_keys=True)

    def to_text(self) -> str:
        def fmt(v):
            return "n/a" if v is None else f"{v:.4f}"

        lines = [f"criterion: {self.criterion_name}"]
        header = ["class"] + [f"AP@{t:.2f}" for t in self.thresholds] + ["mean"]
        rows = []
        for c in sorted(self.per_class):
            aps = [self.per_class[c][t] for t in self.thresholds]
            rows.append([str(c)] + [f"{v:.4f}" for v in aps] + [f"{float(np.mean(aps)):.4f}"])
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        lines.append("  ".join(h.rjust(w) for h, w in zip(header, widths)))
        for r in rows:
            lines.append("  ".join(v.rjust(w) for v, w in zip(r, widths)))
        lines.append(f"AP {fmt(self.ap)}  AP50 {fmt(self.ap50)}  AP75 {fmt(self.ap75)}")
        if self.excluded_classes:
            excluded = ", ".join(str(c) for c in self.excluded_classes)
            lines.append(f"excluded (no ground truth): {excluded}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# dataset IO


def _convert_angles(rec: dict, line_no: int, to_radians: bool) -> dict:
    out = dict(rec)
    for key in ("theta", "phi", "alpha", "beta"):
        v = out.get(key)
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            raise FieldRangeError(line_no, key, "must be a finite number")
        out[key] = math.radians(v) if to_radians else v
    return out


def _parse_common(rec: dict, line_no: int, degrees: bool):
    if not isinstance(rec.get("image_id"), str) or not rec["image_id"]:
        raise FieldRangeError(line_no, "image_id", "must be a non-empty string")
    cid = rec.get("class_id")
    if not isinstance(cid, int) or isinstance(cid, bool) or cid < 0:
        raise FieldRangeError(line_no, "class_id", "must be a non-negative integer")
    rec = _convert_angles(rec, line_no, to_radians=degrees)
    theta = rec["theta"] % TWO_PI
    phi = rec["phi"]
    if not 0.0 <= phi <= math.pi:
        raise FieldRangeError(line_no, "phi", "must lie in [0, pi]")
    fovs = []
    for key in ("alpha", "beta"):
        v = rec[key]
        if v > math.pi:
            raise FieldRangeError(line_no, key, "must be at most pi")
        if v < MIN_FOV:
            warnings.warn(f"line {line_no}: {key}={v:g} clamped to {MIN_FOV:g}")
            v = MIN_FOV
        fovs.append(v)
    return rec["image_id"], cid, SphericalRect(theta, phi, fovs[0], fovs[1])


def _iter_records(path):
    degrees = False
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AnnotationParseError(line_no, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise AnnotationParseError(line_no, "record must be a JSON object")
            if line_no == 1 and "angle_unit" in rec and "image_id" not in rec:
                unit = rec["angle_unit"]
                if unit not in ("radians", "degrees"):
                    raise FieldRangeError(line_no, "angle_unit", "must be 'radians' or 'degrees'")
                degrees = unit == "degrees"
                continue
            yield line_no, rec, degrees


def load_annotations(path) -> dict:
    """Read a ground-truth JSONL file, grouped {image_id: [GtAnnotation]}."""
    out: dict = {}
    for line_no, rec, degrees in _iter_records(path):
        image_id, cid, bbox = _parse_common(rec, line_no, degrees)
        out.setdefault(image_id, []).append(GtAnnotation(cid, bbox))
    return out


def load_detections(path) -> list:
    """Read a detection JSONL file into a flat list of DetectionRecord."""
    out = []
    for line_no, rec, degrees in _iter_records(path):
        image_id, cid, bbox = _parse_common(rec, line_no, degrees)
        score = rec.get("score")
        if not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
            raise FieldRangeError(line_no, "score", "must be a number in [0, 1]")
        out.append(DetectionRecord(image_id, cid, float(score), bbox))
    return out


def _angle_fields(bbox: SphericalRect, degrees: bool) -> dict:
    conv = math.degrees if degrees else (lambda v: v)
    return {
        "theta": conv(bbox.theta),
        "phi": conv(bbox.phi),
        "alpha": conv(bbox.alpha),
        "beta": conv(bbox.beta),
    }


def save_annotations(groups: dict, path, angle_unit: str = "radians") -> None:
    if angle_unit not in ("radians", "degrees"):
        raise ValueError("angle_unit must be 'radians' or 'degrees'")
    degrees = angle_unit == "degrees"
    with open(path, "w", encoding="utf-8") as f:
        if degrees:
            f.write(json.dumps({"angle_unit": "degrees"}) + "\n")
        for image_id in groups:
            for ann in groups[image_id]:
                rec = {"image_id": image_id, "class_id": ann.class_id}
                rec.update(_angle_fields(ann.bbox, degrees))
                f.write(json.dumps(rec) + "\n")


def save_detections(dets: Sequence[DetectionRecord], path, angle_unit: str = "radians") -> None:
    if angle_unit not in ("radians", "degrees"):
        raise ValueError("angle_unit must be 'radians' or 'degrees'")
    degrees = angle_unit == "degrees"
    with open(path, "w", encoding="utf-8") as f:
        if degrees:
            f.write(json.dumps({"angle_unit": "degrees"}) + "\n")
        for d in dets:
            rec = {"image_id": d.image_id, "class_id": d.class_id, "score": d.score}
            rec.update(_angle_fields(d.bbox, degrees))
            f.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# matching and AP


def match_detections(
    dets: Sequence[DetectionRecord],
    gts: Sequence[GtAnnotation],
    criterion: CriterionId,
    threshold: float,
    resolution: ErpImageSpec | None = None,
    iou_matrix: np.ndarray | None = None,
):
    """Greedily match one image's detections of one class to ground truth.

    Detections are visited in descending score (stable for ties); each
    takes the unmatched ground truth with the highest IoU >= threshold,
    IoU ties breaking towards earlier input order. Returns a list of
    (det_index, gt_index or None, iou) in visit order. Pass a precomputed
    iou_matrix (dets x gts) to reuse it across thresholds.
    """
    if iou_matrix is None:
        iou_matrix = np.array(
            [[compute_iou(criterion, d.bbox, g.bbox, resolution) for g in gts] for d in dets]
        ).reshape(len(dets), len(gts))
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    taken = [False] * len(gts)
    out = []
    for i in order:
        best_j, best_v = None, -1.0
        for j in range(len(gts)):
            v = float(iou_matrix[i, j])
            if not taken[j] and v >= threshold and v > best_v:
                best_j, best_v = j, v
        if best_j is None:
            out.append((i, None, float(iou_matrix[i].max()) if len(gts) else 0.0))
        else:
            taken[best_j] = True
            out.append((i, best_j, best_v))
    return out


def average_precision(decisions, n_gt: int) -> float:
    """101-point interpolated AP from (score, is_tp) decisions.

    decisions may come from many images; they are ranked by descending
    score (stable), turned into a PR curve against n_gt ground truths,
    and sampled on the 101-point recall grid with the precision envelope.
    """
    if n_gt <= 0:
        raise UndefinedApError("no ground truth for this class")
    if not decisions:
        return 0.0
    order = sorted(range(len(decisions)), key=lambda i: -decisions[i][0])
    tp = np.cumsum([1.0 if decisions[i][1] else 0.0 for i in order])
    fp = np.cumsum([0.0 if decisions[i][1] else 1.0 for i in order])
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # envelope: best precision achievable at this recall or beyond
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    grid = np.arange(101) / 100.0  # each i/100 correctly rounded
    idx = np.searchsorted(recall, grid, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(np.mean(sampled))


def _capped_by_image(detections: Sequence[DetectionRecord], max_dets: int) -> dict:
    by_image: dict = {}
    for d in detections:
        by_image.setdefault(d.image_id, []).append(d)
    for image_id, dets in by_image.items():
        dets.sort(key=lambda d: -d.score)  # stable: input order breaks ties
        del dets[max_dets:]
    return by_image


def evaluate(
    detections: Sequence[DetectionRecord], gts: dict, config: EvalConfig = EvalConfig()
) -> EvalReport:
    """Match detections against ground truth and compute AP numbers.

    gts maps image_id to its GtAnnotation list. Per image and class the
    IoU matrix is computed once and shared by all thresholds. Classes
    that appear only in detections have undefined AP and are reported as
    excluded rather than averaged in.
    """
    classes = sorted({ann.class_id for anns in gts.values() for ann in anns})
    class_set = set(classes)
    excluded = tuple(sorted({d.class_id for d in detections} - class_set))
    by_image = _capped_by_image(detections, config.max_dets_per_image)

    n_gt = {c: 0 for c in classes}
    for anns in gts.values():
        for ann in anns:
            n_gt[ann.class_id] += 1

    decisions: dict = {(c, t): [] for c in classes for t in config.iou_thresholds}
    log = []
    image_ids = sorted(set(gts) | set(by_image))
    for image_id in image_ids:
        dets = by_image.get(image_id, [])
        anns = gts.get(image_id, [])
        for c in sorted({d.class_id for d in dets} | {a.class_id for a in anns}):
            if c not in class_set:
                continue
            c_dets = [d for d in dets if d.class_id == c]
            c_gts = [a for a in anns if a.class_id == c]
            if not c_dets:
                continue
            matrix = np.array(
                [
                    [compute_iou(config.criterion, d.bbox, g.bbox, config.resolution) for g in c_gts]
                    for d in c_dets
                ]
            ).reshape(len(c_dets), len(c_gts))
            for t in config.iou_thresholds:
                for det_index, gt_index, iou_value in match_detections(
                    c_dets, c_gts, config.criterion, t, iou_matrix=matrix
                ):
                    d = c_dets[det_index]
                    decisions[(c, t)].append((d.score, gt_index is not None))
                    log.append(
                        MatchDecision(image_id, c, t, d.score, det_index, gt_index, iou_value)
                    )

    per_class = {
        c: {t: average_precision(decisions[(c, t)], n_gt[c]) for t in config.iou_thresholds}
        for c in classes
    }

    def mean_at(threshold: float):
        if threshold not in config.iou_thresholds or not classes:
            return None
        return float(np.mean([per_class[c][threshold] for c in classes]))

    if classes:
        ap = float(np.mean([per_class[c][t] for c in classes for t in config.iou_thresholds]))
    else:
        ap = 0.0
    return EvalReport(
        per_class=per_class,
        ap=ap,
        ap50=mean_at(0.5),
        ap75=mean_at(0.75),
        excluded_classes=excluded,
        matches=tuple(log),
        criterion_name=config.criterion.spec_name(),
        thresholds=tuple(config.iou_thresholds),
    )


# ---------------------------------------------------------------------------
# criteria comparison table


@dataclass(frozen=True)
class ComparisonTable:
    """IoU values per pair, criterion and resolution; NaN marks failures."""

    criteria: tuple
    resolutions: tuple
    values: np.ndarray  # (n_pairs, n_criteria, n_resolutions)

    @staticmethod
    def _fmt(v: float) -> str:
        return "n/a" if math.isnan(v) else f"{v:.5f}"

    def to_text(self) -> str:
        res_labels = [f"{r.width}x{r.height}" for r in self.resolutions]
        lines = []
        for p in range(self.values.shape[0]):
            lines.append(f"pair {p + 1}")
            name_w = max(len(c.label) for c in self.criteria)
            col_w = max(8, *(len(s) for s in res_labels))
            lines.append("  " + " " * name_w + "  " + "  ".join(s.rjust(col_w) for s in res_labels))
            for i, c in enumerate(self.criteria):
                cells = [self._fmt(self.values[p, i, j]) for j in range(len(self.resolutions))]
                lines.append("  " + c.label.ljust(name_w) + "  " + "  ".join(s.rjust(col_w) for s in cells))
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["pair,criterion," + ",".join(f"{r.width}x{r.height}" for r in self.resolutions)]
        for p in range(self.values.shape[0]):
            for i, c in enumerate(self.criteria):
                cells = [self._fmt(self.values[p, i, j]) for j in range(len(self.resolutions))]
                lines.append(f"{p + 1},{c.label}," + ",".join(cells))
        return "\n".join(lines)


def compare_criteria(
    pairs: Sequence, criteria: Sequence[CriterionId], resolutions: Sequence[ErpImageSpec]
) -> ComparisonTable:
    """Evaluate every criterion on every pair at every resolution.

    Resolution-independent criteria are computed once per pair and their
    value repeated across columns. Criterion failures (projection
    overflow, empty union, degenerate geometry) become NaN cells.
    """
    if not pairs or not criteria or not resolutions:
        raise ValueError("pairs, criteria and resolutions must be non-empty")
    values = np.full((len(pairs), len(criteria), len(resolutions)), np.nan)
    for p, (b1, b2) in enumerate(pairs):
        for i, c in enumerate(criteria):
            cols = range(len(resolutions)) if c.resolution_dependent and c.resolution is None else [None]
            for j in cols:
                try:
                    v = compute_iou(c, b1, b2, resolutions[j] if j is not None else None)
                except (ProjectionOverflowError, ZeroUnionError, NumericallyDegenerateError):
                    v = math.nan
                if j is None:
                    values[p, i, :] = v
                else:
                    values[p, i, j] = v
    return ComparisonTable(tuple(criteria), tuple(resolutions), values)


# ---------------------------------------------------------------------------
# micro-benchmark


@dataclass(frozen=True)
class BenchReport:
    """Median seconds per IoU call for each criterion."""

    medians: dict
    n_pairs: int
    resolution: ErpImageSpec

    def median_of(self, criterion: CriterionId) -> float:
        return self.medians[criterion.spec_name()]

    def to_text(self) -> str:
        res = f"{self.resolution.width}x{self.resolution.height}"
        lines = [f"median per-call time over {self.n_pairs} pairs (resolution {res})"]
        width = max(len(name) for name in self.medians)
        for name, seconds in self.medians.items():
            lines.append(f"  {name.ljust(width)}  {seconds * 1e3:10.4f} ms")
        return "\n".join(lines)


def _bench_pairs(n_pairs: int, seed: int):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        theta = rng.uniform(0.0, TWO_PI)
        phi = math.acos(rng.uniform(-1.0, 1.0))
        b1 = SphericalRect(theta, phi, rng.uniform(0.2, 1.5), rng.uniform(0.2, 1.5))
        b2 = SphericalRect(
            (theta + rng.uniform(-0.4, 0.4)) % TWO_PI,
            min(max(phi + rng.uniform(-0.3, 0.3), 0.0), math.pi),
            rng.uniform(0.2, 1.5),
            rng.uniform(0.2, 1.5),
        )
        pairs.append((b1, b2))
    return pairs


def bench(
    criteria: Sequence[CriterionId],
    n_pairs: int = 100,
    resolution: ErpImageSpec = ErpImageSpec(8192, 4096),
    seed: int = 0,
    min_speedup: float | None = 10.0,
) -> BenchReport:
    """Time each criterion on a shared set of random overlapping pairs.

    One warmup call per criterion runs first so one-off cache building
    (Monte Carlo samples, integral trig tables) stays out of the medians.
    When min_speedup is set and both the analytical criterion and the
    pixel integral are benched, the analytical median must be at least
    that many times smaller, else BenchSpeedupError.
    """
    if n_pairs < 100:
        raise ValueError("n_pairs must be >= 100 for stable medians")
    pairs = _bench_pairs(n_pairs, seed)
    medians = {}
    for c in criteria:
        compute_iou(c, pairs[0][0], pairs[0][1], resolution)
        times = []
        for b1, b2 in pairs:
            start = time.perf_counter()
            compute_iou(c, b1, b2, resolution)
            times.append(time.perf_counter() - start)
        medians[c.spec_name()] = float(np.median(times))
    report = BenchReport(medians, n_pairs, resolution)

    if min_speedup is not None:
        analytical = next((c for c in criteria if c.kind == "unbiased"), None)
        integral = next((c for c in criteria if c.kind == "pixel_integral"), None)
        if analytical is not None and integral is not None:
            ratio = report.median_of(integral) / report.median_of(analytical)
            if ratio < min_speedup:
                raise BenchSpeedupError(
                    f"analytical IoU is only {ratio:.1f}x faster than the integral "
                    f"(required {min_speedup:g}x)"
                )
    return report
