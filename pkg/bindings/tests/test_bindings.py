"""Boundary behavior of each binding against the backend command line."""

import json
import math
import struct
import sys

import numpy as np
import pytest

import sphdet_bindings as sb
from conftest import run_cli

BOX = (1.0, 1.5, 0.8, 0.7)
NEAR = (1.1, 1.55, 0.8, 0.7)


def boxes(rng, n):
    return np.column_stack([
        rng.uniform(0.0, 1.2, n),
        rng.uniform(1.0, 2.0, n),
        rng.uniform(0.3, 1.5, n),
        rng.uniform(0.3, 1.5, n),
    ])


class TestIou:
    def test_self_iou_is_exactly_one(self):
        assert sb.py_iou(BOX, BOX) == 1.0

    def test_matches_cli_bit_for_bit(self):
        got = sb.py_iou(BOX, NEAR)
        proc = run_cli("iou", "--b1", ",".join(map(repr, BOX)),
                       "--b2", ",".join(map(repr, NEAR)))
        assert proc.returncode == 0
        assert got == float(proc.stdout.strip())

    def test_accepts_any_four_sequence(self):
        assert sb.py_iou(list(BOX), np.array(BOX)) == 1.0

    @pytest.mark.parametrize("bad, field", [
        ((7.0, 1.5, 0.8, 0.7), "theta"),
        ((-0.1, 1.5, 0.8, 0.7), "theta"),
        ((1.0, 4.0, 0.8, 0.7), "phi"),
        ((1.0, 1.5, 0.0, 0.7), "alpha"),
        ((1.0, 1.5, 0.8, 3.5), "beta"),
        ((1.0, math.nan, 0.8, 0.7), "phi"),
    ])
    def test_range_violations_name_the_field(self, bad, field):
        with pytest.raises(ValueError, match=f"b2: {field}"):
            sb.py_iou(BOX, bad)

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError, match="4 fields"):
            sb.py_iou((1.0, 1.5, 0.8), BOX)


class TestIouMatrix:
    def test_equals_scalar_loop(self):
        rng = np.random.default_rng(3)
        A, B = boxes(rng, 4), boxes(rng, 5)
        got = sb.py_iou_matrix(A, B)
        for i in range(4):
            for j in range(5):
                assert got[i, j] == sb.py_iou(A[i], B[j])

    def test_shape_and_dtype(self):
        rng = np.random.default_rng(4)
        got = sb.py_iou_matrix(boxes(rng, 3), boxes(rng, 6))
        assert got.shape == (3, 6)
        assert got.dtype == np.float64
        assert got.flags["C_CONTIGUOUS"]

    def test_diagonal_of_identical_batches(self):
        rng = np.random.default_rng(5)
        A = boxes(rng, 3)
        got = sb.py_iou_matrix(A, A)
        assert np.array_equal(np.diag(got), np.ones(3))

    def test_float32_upcast_warns_and_matches_float64(self):
        rng = np.random.default_rng(6)
        A, B = boxes(rng, 2), boxes(rng, 2)
        A32 = A.astype(np.float32)
        with pytest.warns(UserWarning, match="float32"):
            got = sb.py_iou_matrix(A32, B)
        assert np.array_equal(got, sb.py_iou_matrix(A32.astype(np.float64), B))

    def test_integer_dtype_rejected(self):
        A = np.array([[1, 1, 1, 1]])
        with pytest.raises(ValueError, match="float64"):
            sb.py_iou_matrix(A, A)

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError, match=r"\(N, 4\)"):
            sb.py_iou_matrix(np.zeros((3, 5)), np.zeros((2, 4)))

    def test_range_violation_names_the_row(self):
        rng = np.random.default_rng(7)
        A = boxes(rng, 4)
        A[2, 1] = 4.0
        with pytest.raises(ValueError, match=r"A\[2\]: phi"):
            sb.py_iou_matrix(A, boxes(rng, 2))

    def test_noncontiguous_input_accepted(self):
        rng = np.random.default_rng(8)
        A = boxes(rng, 6)
        strided = A[::2]
        assert not strided.flags["C_CONTIGUOUS"]
        assert np.array_equal(sb.py_iou_matrix(strided, A[:2]),
                              sb.py_iou_matrix(strided.copy(), A[:2]))

    def test_empty_batch_short_circuits(self):
        rng = np.random.default_rng(9)
        got = sb.py_iou_matrix(np.zeros((0, 4)), boxes(rng, 3))
        assert got.shape == (0, 3)


class TestEvaluate:
    def test_matches_cli_json(self, toy_files):
        gt, det = toy_files
        proc = run_cli("eval", "--gt", gt, "--det", det, "--format", "json")
        assert proc.returncode == 0
        assert sb.py_evaluate(gt, det) == json.loads(proc.stdout)

    def test_config_passthrough(self, toy_files):
        gt, det = toy_files
        rep = sb.py_evaluate(gt, det, {"criterion": "rectangle",
                                       "resolution": (512, 256), "max_dets": 5})
        assert rep["criterion"] == "rectangle"
        proc = run_cli("eval", "--gt", gt, "--det", det, "--format", "json",
                       "--criterion", "rectangle", "--resolution", "512x256",
                       "--max-dets", "5")
        assert rep == json.loads(proc.stdout)

    def test_unknown_config_key_rejected(self, toy_files):
        gt, det = toy_files
        with pytest.raises(ValueError, match="unknown config"):
            sb.py_evaluate(gt, det, {"critreion": "unbiased"})

    def test_unknown_detection_class(self, toy_files, tmp_path):
        gt, _ = toy_files
        det = tmp_path / "stray.jsonl"
        det.write_text(json.dumps({"image_id": "a", "class_id": 9, "theta": 0.5,
                                   "phi": 1.4, "alpha": 0.8, "beta": 0.6,
                                   "score": 0.5}) + "\n")
        with pytest.raises(RuntimeError, match="no ground truth"):
            sb.py_evaluate(gt, det)
        rep = sb.py_evaluate(gt, det, {"ignore_unknown": True})
        assert rep["excluded_classes"] == [9]

    def test_missing_file_is_input_error(self, toy_files):
        gt, _ = toy_files
        with pytest.raises(ValueError):
            sb.py_evaluate(gt, "/nonexistent/det.jsonl")


ANNS = [
    {"class_id": 0, "theta": 0.9, "phi": 1.3, "alpha": 0.7, "beta": 0.5},
    {"class_id": 2, "theta": 4.2, "phi": 1.8, "alpha": 1.1, "beta": 0.9},
]


def parse_container(path):
    """Independent reader for the backend's heatmap container."""
    blob = open(path, "rb").read()
    assert blob[:4] == b"SPHM"
    w, h, c, flags = struct.unpack_from("<IIII", blob, 4)
    plane = h * w
    payload = np.frombuffer(blob, dtype="<f8", offset=20)
    assert payload.size == plane * (c + 4)
    cube = payload.reshape(c + 4, h, w)
    scores = np.stack([cube[k] for k in range(c)], axis=-1)
    offsets = np.stack([cube[c], cube[c + 1]], axis=-1)
    fovs = np.stack([cube[c + 2], cube[c + 3]], axis=-1)
    return scores, offsets, fovs, flags


class TestRenderGt:
    def run_backend(self, tmp_path, *extra):
        gt = tmp_path / "anns.jsonl"
        with open(gt, "w") as f:
            for a in ANNS:
                f.write(json.dumps({"image_id": "im0", **a}) + "\n")
        out = tmp_path / "ref.sphm"
        proc = run_cli("gt", "--gt", str(gt), "--out", str(out),
                       "--image-size", "64x32", "--num-classes", "3", *extra)
        assert proc.returncode == 0, proc.stderr
        return parse_container(out)

    def test_matches_cli_container(self, tmp_path):
        scores, offsets, fovs = sb.py_render_gt(ANNS, 64, 32, 3)
        ref_scores, ref_offsets, ref_fovs, flags = self.run_backend(tmp_path)
        assert flags == 0
        assert np.array_equal(scores, ref_scores)
        assert np.array_equal(offsets, ref_offsets)
        assert np.array_equal(fovs, ref_fovs)

    def test_shapes_and_score_range(self):
        scores, offsets, fovs = sb.py_render_gt(ANNS, 64, 32, 3)
        assert scores.shape == (32, 64, 3)
        assert offsets.shape == (32, 64, 2)
        assert fovs.shape == (32, 64, 2)
        assert scores.max() == 1.0 and scores.min() >= 0.0

    def test_squared_mode_matches_cli(self, tmp_path):
        scores, _, _ = sb.py_render_gt(ANNS, 64, 32, 3, mode="squared")
        ref_scores, _, _, flags = self.run_backend(tmp_path, "--mode", "squared")
        assert flags == 1
        assert np.array_equal(scores, ref_scores)

    @pytest.mark.parametrize("ann, msg", [
        ({"class_id": -1, "theta": 1.0, "phi": 1.0, "alpha": 0.5, "beta": 0.5}, "class_id"),
        ({"class_id": True, "theta": 1.0, "phi": 1.0, "alpha": 0.5, "beta": 0.5}, "class_id"),
        ({"class_id": 0, "theta": 1.0, "phi": 9.0, "alpha": 0.5, "beta": 0.5}, r"annotations\[1\]: phi"),
        ({"class_id": 0, "theta": 1.0, "phi": 1.0, "alpha": 0.5}, "beta"),
        ({"class_id": 0, "image_id": "x", "theta": 1.0, "phi": 1.0, "alpha": 0.5, "beta": 0.5}, "image_id"),
    ])
    def test_bad_annotations_rejected(self, ann, msg):
        with pytest.raises(ValueError, match=msg):
            sb.py_render_gt([ANNS[0], ann], 64, 32, 3)

    def test_empty_annotations_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            sb.py_render_gt([], 64, 32, 3)

    def test_num_classes_too_small(self):
        with pytest.raises(ValueError, match="num_classes"):
            sb.py_render_gt(ANNS, 64, 32, 2)

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            sb.py_render_gt(ANNS, 64, 32, 3, mode="gaussian")


class TestBackendWiring:
    def test_version_mirrors_backend(self):
        version = sb.native_version()
        assert version == sb.__version__

    def test_cli_env_override(self, monkeypatch):
        monkeypatch.setenv("SPHDET_CLI", f'"{sys.executable}" -m sphdet')
        assert sb.py_iou(BOX, BOX) == 1.0

    def test_broken_override_surfaces(self, monkeypatch):
        monkeypatch.setenv("SPHDET_CLI", "/nonexistent/sphdet-backend")
        with pytest.raises(FileNotFoundError):
            sb.py_iou(BOX, BOX)
