"""
Drawing spherical rectangles on an equirectangular canvas
=========================================================

Writes an SVG showing why axis-aligned pixel boxes are the wrong model:
the same angular box is a tidy rectangle at the equator and a wide bow
near the pole, and a box crossing theta = 0 splits across the seam.

Uses the same entry point as the shell command:

    sphdet render --gt boxes.jsonl --image-size 1024x512 --out boxes.svg
"""

import json
import tempfile
from pathlib import Path

from sphdet.cli import main

boxes = [
    # equator: looks like an ordinary rectangle
    {"image_id": "demo", "class_id": 0, "theta": 1.2, "phi": 1.5708, "alpha": 0.8, "beta": 0.5},
    # same fovs near the pole: the top edge sweeps a huge theta range
    {"image_id": "demo", "class_id": 1, "theta": 3.6, "phi": 0.35, "alpha": 0.8, "beta": 0.5},
    # seam-crossing box: drawn as two polyline pieces
    {"image_id": "demo", "class_id": 2, "theta": 0.05, "phi": 1.9, "alpha": 0.9, "beta": 0.6},
    # tall box in the southern half
    {"image_id": "demo", "class_id": 3, "theta": 5.0, "phi": 2.4, "alpha": 0.5, "beta": 1.1},
]

with tempfile.TemporaryDirectory() as d:
    gt_path = Path(d) / "boxes.jsonl"
    gt_path.write_text("".join(json.dumps(b) + "\n" for b in boxes))
    out_path = "/tmp/demo_boxes.svg"
    code = main(["render", "--gt", str(gt_path), "--image-size", "1024x512",
                 "--out", out_path])
    assert code == 0

svg = Path(out_path).read_text()
print("polyline segments drawn:", svg.count("<polyline"))
print("open", out_path, "in a browser to look at the canvas")
