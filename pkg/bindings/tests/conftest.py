import json
import subprocess
import sys

import pytest


def run_cli(*argv):
    """Invoke the backend directly; the oracle side of every parity check."""
    return subprocess.run([sys.executable, "-m", "sphdet", *argv],
                          capture_output=True, text=True)


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


@pytest.fixture
def toy_files(tmp_path):
    """Three images, two classes, one stray false positive."""
    gt = [
        {"image_id": "a", "class_id": 0, "theta": 0.5, "phi": 1.4, "alpha": 0.8, "beta": 0.6},
        {"image_id": "a", "class_id": 0, "theta": 2.5, "phi": 1.6, "alpha": 0.7, "beta": 0.7},
        {"image_id": "b", "class_id": 0, "theta": 4.0, "phi": 1.5, "alpha": 0.9, "beta": 0.5},
        {"image_id": "b", "class_id": 1, "theta": 1.0, "phi": 1.2, "alpha": 0.6, "beta": 0.8},
        {"image_id": "c", "class_id": 1, "theta": 5.5, "phi": 1.7, "alpha": 0.8, "beta": 0.8},
    ]
    det = [
        {"image_id": "a", "class_id": 0, "theta": 0.52, "phi": 1.41, "alpha": 0.8, "beta": 0.6, "score": 0.9},
        {"image_id": "a", "class_id": 0, "theta": 3.6, "phi": 0.3, "alpha": 0.4, "beta": 0.4, "score": 0.8},
        {"image_id": "b", "class_id": 0, "theta": 4.02, "phi": 1.49, "alpha": 0.9, "beta": 0.5, "score": 0.7},
        {"image_id": "b", "class_id": 1, "theta": 1.01, "phi": 1.21, "alpha": 0.6, "beta": 0.8, "score": 0.95},
        {"image_id": "c", "class_id": 1, "theta": 5.49, "phi": 1.71, "alpha": 0.8, "beta": 0.8, "score": 0.85},
    ]
    gt_path = tmp_path / "gt.jsonl"
    det_path = tmp_path / "det.jsonl"
    _write_jsonl(gt_path, gt)
    _write_jsonl(det_path, det)
    return str(gt_path), str(det_path)
