"""Process-boundary bindings for the sphdet toolkit.

Exposes the unbiased spherical IoU (scalar and batch), ground-truth
heatmap rendering, and dataset evaluation to training pipelines without
importing the library: every call shells out to the ``sphdet`` command
line and exchanges data through its documented formats (JSONL pair
files, JSON reports, the SPHM heatmap container). Values are therefore
bit-identical to the native library, and the heavy work runs in a child
process while the calling thread blocks on pipe reads with the
interpreter lock released, so sibling threads keep full throughput
during batch calls.

Boxes are (theta, phi, alpha, beta) in radians; batches are (N, 4)
float64 arrays. Only float64 crosses the boundary; float32 input is
up-cast with a warning. All functions are reentrant and keep no module
state. Set SPHDET_CLI to override the backend command (default:
``sys.executable -m sphdet``).
"""

from __future__ import annotations

import json
import math
import os
import shlex
import struct
import subprocess
import sys
import tempfile
import warnings

import numpy as np

__all__ = [
    "py_iou",
    "py_iou_matrix",
    "py_evaluate",
    "py_render_gt",
    "native_version",
]
__version__ = "0.1.0"

TWO_PI = 2.0 * math.pi

_MAGIC = b"SPHM"
_HEADER = struct.Struct("<IIII")
_FLAG_SQUARED = 1
_MODES = ("distance", "squared")
_EVAL_KEYS = frozenset({"criterion", "resolution", "max_dets", "ignore_unknown"})
_ANNOTATION_KEYS = ("class_id", "theta", "phi", "alpha", "beta")


def _cli_command() -> list[str]:
    override = os.environ.get("SPHDET_CLI")
    if override:
        return shlex.split(override)
    return [sys.executable, "-m", "sphdet"]


def _run(argv: list[str], what: str) -> str:
    proc = subprocess.run(_cli_command() + argv, capture_output=True, text=True)
    if proc.returncode != 0:
        detail = proc.stderr.strip() or f"exit code {proc.returncode}"
        if proc.returncode == 2:
            raise ValueError(f"{what}: {detail}")
        raise RuntimeError(f"{what}: {detail}")
    return proc.stdout


def _check_fields(theta, phi, alpha, beta, where: str) -> None:
    # Mirrors the native box invariants; NaN fails every comparison.
    if not 0.0 <= theta < TWO_PI:
        raise ValueError(f"{where}: theta must be in [0, 2*pi), got {theta!r}")
    if not 0.0 <= phi <= math.pi:
        raise ValueError(f"{where}: phi must be in [0, pi], got {phi!r}")
    if not 0.0 < alpha <= math.pi:
        raise ValueError(f"{where}: alpha must be in (0, pi], got {alpha!r}")
    if not 0.0 < beta <= math.pi:
        raise ValueError(f"{where}: beta must be in (0, pi], got {beta!r}")


def _scalar_box(box, name: str) -> list[float]:
    values = [float(v) for v in box]
    if len(values) != 4:
        raise ValueError(f"{name}: expected 4 fields (theta, phi, alpha, beta), got {len(values)}")
    _check_fields(*values, name)
    return values


def _batch(boxes, name: str) -> np.ndarray:
    arr = np.asarray(boxes)
    if arr.dtype == np.float32:
        warnings.warn(f"{name}: float32 input up-cast to float64", stacklevel=3)
        arr = arr.astype(np.float64)
    if arr.dtype != np.float64:
        raise ValueError(f"{name}: dtype must be float64, got {arr.dtype}")
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"{name}: expected an (N, 4) array, got shape {arr.shape}")
    arr = np.ascontiguousarray(arr)
    for i in range(arr.shape[0]):
        _check_fields(*arr[i], f"{name}[{i}]")
    return arr


def _iou_pairs(pairs: list[tuple[list[float], list[float]]]) -> list[float]:
    with tempfile.TemporaryDirectory(prefix="sphdet-bind-") as tmp:
        path = os.path.join(tmp, "pairs.jsonl")
        with open(path, "w", encoding="utf-8") as f:
            for b1, b2 in pairs:
                f.write(json.dumps({"b1": b1, "b2": b2}) + "\n")
        out = _run(["iou", "--pairs", path, "--criterion", "unbiased",
                    "--format", "json"], "iou")
    values = json.loads(out)
    if len(values) != len(pairs):
        raise RuntimeError(f"iou: backend returned {len(values)} values for {len(pairs)} pairs")
    return values


def py_iou(b1, b2) -> float:
    """Unbiased IoU of two boxes, bit-identical to the native library."""
    a = _scalar_box(b1, "b1")
    b = _scalar_box(b2, "b2")
    return _iou_pairs([(a, b)])[0]


def py_iou_matrix(A, B) -> np.ndarray:
    """Pairwise unbiased IoU of two box batches as an (N, M) float64 array."""
    a = _batch(A, "A")
    b = _batch(B, "B")
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    rows_a, rows_b = a.tolist(), b.tolist()
    values = _iou_pairs([(ra, rb) for ra in rows_a for rb in rows_b])
    return np.array(values, dtype=np.float64).reshape(a.shape[0], b.shape[0])


def _resolution_arg(value) -> str:
    if isinstance(value, str):
        return value
    width, height = value
    return f"{int(width)}x{int(height)}"


def py_evaluate(gt_path, det_path, config=None) -> dict:
    """Average-precision report for dataset files, as plain nested mappings.

    config keys (all optional): criterion (backend criterion name),
    resolution ("WxH" or a (width, height) pair), max_dets (per-image
    detection cap), ignore_unknown (accept detection classes that have
    no ground truth instead of failing).
    """
    cfg = dict(config or {})
    unknown = set(cfg) - _EVAL_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    argv = ["eval", "--gt", os.fspath(gt_path), "--det", os.fspath(det_path),
            "--format", "json"]
    if "criterion" in cfg:
        argv += ["--criterion", str(cfg["criterion"])]
    if "resolution" in cfg:
        argv += ["--resolution", _resolution_arg(cfg["resolution"])]
    if "max_dets" in cfg:
        argv += ["--max-dets", str(int(cfg["max_dets"]))]
    if cfg.get("ignore_unknown"):
        argv.append("--ignore-unknown")
    return json.loads(_run(argv, "eval"))


def _check_annotations(annotations) -> list[tuple[int, float, float, float, float]]:
    records = []
    for i, ann in enumerate(annotations):
        where = f"annotations[{i}]"
        if "image_id" in ann:
            raise ValueError(f"{where}: single-image call, drop the image_id field")
        try:
            cid = ann["class_id"]
            box = [float(ann[k]) for k in _ANNOTATION_KEYS[1:]]
        except KeyError as exc:
            raise ValueError(f"{where}: missing field {exc.args[0]!r}") from exc
        if isinstance(cid, bool) or not isinstance(cid, int) or cid < 0:
            raise ValueError(f"{where}: class_id must be a non-negative int, got {cid!r}")
        _check_fields(*box, where)
        records.append((cid, *box))
    if not records:
        raise ValueError("annotations must be non-empty")
    return records


def _read_heatmap(path: str, width: int, height: int, num_classes: int,
                  mode: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise RuntimeError("gt: backend wrote an unrecognized container")
    w, h, c, flags = _HEADER.unpack_from(blob, 4)
    got_mode = "squared" if flags & _FLAG_SQUARED else "distance"
    if (w, h, c, got_mode) != (width, height, num_classes, mode):
        raise RuntimeError(f"gt: container header {(w, h, c, got_mode)} "
                           f"disagrees with the request")
    plane = h * w

    def take(first: int, count: int) -> np.ndarray:
        flat = np.frombuffer(blob, dtype="<f8", count=count * plane,
                             offset=20 + first * plane * 8)
        return np.moveaxis(flat.reshape(count, h, w), 0, 2).copy()

    return take(0, c), take(c, 2), take(c + 2, 2)


def py_render_gt(annotations, width, height, num_classes, *, mode="distance",
                 sigma_scale=1.0 / 3.0, iou_threshold=0.7):
    """Training targets for one image: (scores, offsets, fovs) arrays.

    annotations: mappings with class_id, theta, phi, alpha, beta.
    Returns float64 arrays of shape (height, width, num_classes),
    (height, width, 2), and (height, width, 2).
    """
    records = _check_annotations(annotations)
    width, height, num_classes = int(width), int(height), int(num_classes)
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    worst = max(r[0] for r in records)
    if worst >= num_classes:
        raise ValueError(f"class_id {worst} needs num_classes >= {worst + 1}")
    with tempfile.TemporaryDirectory(prefix="sphdet-bind-") as tmp:
        gt_path = os.path.join(tmp, "gt.jsonl")
        out_path = os.path.join(tmp, "gt.sphm")
        with open(gt_path, "w", encoding="utf-8") as f:
            for cid, theta, phi, alpha, beta in records:
                f.write(json.dumps({"image_id": "im0", "class_id": cid,
                                    "theta": theta, "phi": phi,
                                    "alpha": alpha, "beta": beta}) + "\n")
        _run(["gt", "--gt", gt_path, "--out", out_path,
              "--image-size", f"{width}x{height}",
              "--num-classes", str(num_classes), "--mode", mode,
              "--sigma-scale", repr(float(sigma_scale)),
              "--iou-threshold", repr(float(iou_threshold))], "gt")
        return _read_heatmap(out_path, width, height, num_classes, mode)


def native_version() -> str:
    """Version of the backend library this package mirrors."""
    return _run(["--version"], "version").strip().split()[-1]
