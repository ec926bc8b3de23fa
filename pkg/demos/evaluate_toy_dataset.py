"""
Average precision on a toy dataset, and why the criterion matters
=================================================================

Builds a three-image dataset with known matching structure, evaluates
it, and then swaps the matching criterion to show a polar detection
flipping from miss to match under the planar-rectangle baseline.
"""

import math
import tempfile
from pathlib import Path

from sphdet import (
    CriterionId,
    DetectionRecord,
    EvalConfig,
    GtAnnotation,
    SphericalRect,
    evaluate,
    load_annotations,
    save_annotations,
    save_detections,
)

g0 = SphericalRect(1.0, 1.5, 0.8, 0.7)
g1 = SphericalRect(3.0, 1.2, 0.7, 0.8)
g2 = SphericalRect(5.0, 1.8, 0.6, 0.9)
gts = {
    "frame_000": [GtAnnotation(0, g0), GtAnnotation(0, g1)],
    "frame_001": [GtAnnotation(0, g2), GtAnnotation(1, SphericalRect(2.0, 0.9, 0.5, 0.5))],
    "frame_002": [GtAnnotation(1, SphericalRect(0.4, 2.2, 0.7, 0.6))],
}

detections = [
    DetectionRecord("frame_000", 0, 0.95, g0),                        # exact hit
    DetectionRecord("frame_000", 0, 0.90, SphericalRect(4.1, 0.4, 0.5, 0.5)),  # stray
    DetectionRecord("frame_001", 0, 0.85, g2),                        # exact hit
    DetectionRecord("frame_001", 1, 0.80, SphericalRect(2.0, 0.9, 0.5, 0.5)),
    DetectionRecord("frame_002", 1, 0.75, SphericalRect(0.4, 2.2, 0.7, 0.6)),
]

report = evaluate(detections, gts, EvalConfig())
print(report.to_text())

# the dataset files round-trip through JSON lines, one record per line
with tempfile.TemporaryDirectory() as d:
    gt_path = Path(d) / "gt.jsonl"
    det_path = Path(d) / "det.jsonl"
    save_annotations(gts, gt_path)
    save_detections(detections, det_path)
    print("\nfirst annotation line:")
    print(gt_path.read_text().splitlines()[0])
    assert load_annotations(gt_path).keys() == gts.keys()

# a polar ground truth whose detection overlaps moderately: under the
# unbiased criterion it misses the 0.5 bar, under the planar rectangle
# criterion the stretched ERP footprints overlap enough to pass
polar_gt = {"sky": [GtAnnotation(0, SphericalRect(5.64, 0.21, 0.77, 0.44))]}
polar_det = [DetectionRecord("sky", 0, 0.9, SphericalRect(5.32, 0.32, 0.30, 0.79))]
for criterion in (CriterionId.unbiased(), CriterionId.planar_rect()):
    rep = evaluate(polar_det, polar_gt, EvalConfig(criterion=criterion, iou_thresholds=(0.5,)))
    print(f"\ncriterion {criterion.label}: AP50 = {rep.ap50}")
