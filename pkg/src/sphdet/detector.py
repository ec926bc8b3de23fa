"""Center-point supervision and decoding math on the ERP heatmap grid.

Conventions used throughout:

- Heatmap arrays are numpy float64 in (H, W, C) layout: row index y is the
  polar direction, column index x the azimuthal one. The written grid size
  is the heatmap resolution, not the input image resolution.
- Cell (x, y) anchors at angles (x * 2pi/W, y * pi/H); a center's offset is
  its angular distance from the anchor and lives in [0, cell_step).
- All angles are radians.

Everything here is a pure function over value inputs; reductions use
numpy's deterministic row-major summation, so repeated calls on the same
inputs give bit-identical results.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .criteria import ErpImageSpec, PixelBox, row_weights
from .geometry import DegenerateRectError, SphericalRect, _clamp, sph_to_vec

TWO_PI = 2.0 * math.pi

SCORE_CLAMP = 1e-12  # probability clamp for the log terms
MIN_FOV = 1e-6  # decoded fovs are floored here so rects stay valid
RELATION_TOL = 1e-6  # radius candidates must hit their IoU relation this well


class EmptyGtError(ValueError):
    """Raised when a loss needs at least one positive cell and none exist."""


class HeatmapFormatError(ValueError):
    """Raised when a serialized heatmap container cannot be decoded."""


HEATMAP_MAGIC = b"SPHM"
_MODE_FLAG_SQUARED = 1

HEATMAP_MODES = ("distance", "squared")


@dataclass(frozen=True)
class LossWeights:
    """Loss balance and the IoU threshold that sizes the splat radius."""

    lambda_off: float = 60.0
    lambda_fov: float = 10.0
    iou_threshold: float = 0.7

    def __post_init__(self):
        if not (self.lambda_off > 0 and self.lambda_fov > 0):
            raise ValueError("loss weights must be positive")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must be in (0, 1]")


@dataclass(frozen=True)
class GtAnnotation:
    class_id: int
    bbox: SphericalRect

    def __post_init__(self):
        if not isinstance(self.class_id, int) or self.class_id < 0:
            raise ValueError("class_id must be a non-negative integer")


class Detection(NamedTuple):
    class_id: int
    score: float
    bbox: SphericalRect


@dataclass(frozen=True)
class HeatmapTensor:
    """Score, offset and fov grids plus the grid geometry they live on."""

    scores: np.ndarray  # (H, W, C) in [0, 1]
    offsets: np.ndarray  # (H, W, 2) radians, (dtheta, dphi)
    fovs: np.ndarray  # (H, W, 2) radians, (alpha, beta)
    spec: ErpImageSpec
    mode: str = "distance"

    def __post_init__(self):
        H, W = self.spec.height, self.spec.width
        if self.scores.ndim != 3 or self.scores.shape[:2] != (H, W):
            raise ValueError("scores must have shape (H, W, C)")
        if self.offsets.shape != (H, W, 2) or self.fovs.shape != (H, W, 2):
            raise ValueError("offsets and fovs must have shape (H, W, 2)")
        if self.scores.size and (self.scores.min() < 0.0 or self.scores.max() > 1.0):
            raise ValueError("scores must lie in [0, 1]")
        if self.fovs.size and self.fovs.min() < 0.0:
            raise ValueError("fovs must be non-negative")
        if self.mode not in HEATMAP_MODES:
            raise ValueError(f"unknown heatmap mode {self.mode!r}")

    @property
    def num_classes(self) -> int:
        return self.scores.shape[2]


class RadiusBreakdown(NamedTuple):
    """The three closed-form radius candidates and the final choice.

    Candidates that are non-finite, negative, or fail their defining IoU
    relation are flagged invalid (the value is still reported). gamma is
    max(0, min of the valid candidates), or the bisection fallback when
    nothing survives.
    """

    gamma_a: float
    gamma_b: float
    gamma_c: float
    valid_a: bool
    valid_b: bool
    valid_c: bool
    gamma: float
    used_fallback: bool


# ---------------------------------------------------------------------------
# ground-truth offsets


def gt_offset(theta_hat: float, phi_hat: float, spec: ErpImageSpec):
    """Split an exact center into its grid cell and sub-cell offset.

    Returns ((x, y), (dtheta, dphi)) with cell * step + offset == input.
    phi_hat == pi falls into the last row with the offset clamped below
    one cell so downstream range checks hold.
    """
    if not 0.0 <= phi_hat <= math.pi:
        raise ValueError("phi_hat out of [0, pi]")
    theta_hat = theta_hat % TWO_PI
    W, H = spec.width, spec.height
    x = min(int(theta_hat * W / TWO_PI), W - 1)
    y = min(int(phi_hat * H / math.pi), H - 1)
    dt = theta_hat - x * TWO_PI / W
    dp = phi_hat - y * math.pi / H
    dt = min(max(dt, 0.0), math.nextafter(spec.px_theta, 0.0))
    dp = min(max(dp, 0.0), math.nextafter(spec.px_phi, 0.0))
    return (x, y), (dt, dp)


# ---------------------------------------------------------------------------
# splat radius


def _fov_area(alpha: float, beta: float) -> float:
    # raw area formula; unlike rect_area it tolerates fovs beyond pi,
    # which inflated radius candidates can produce
    return 4.0 * math.acos(_clamp(-math.sin(0.5 * alpha) * math.sin(0.5 * beta))) - TWO_PI


def _gamma_a_closed(alpha: float, beta: float, t: float) -> float:
    s = math.sin(0.5 * alpha) * math.sin(0.5 * beta)
    arg = -2.0 * math.sin(math.asin(s) / t) + math.cos(0.5 * (alpha - beta))
    if not -1.0 <= arg <= 1.0:
        return math.nan
    return 0.5 * math.acos(arg) - 0.25 * (alpha + beta)


def _gamma_b_closed(alpha: float, beta: float, t: float) -> float:
    s = math.sin(0.5 * alpha) * math.sin(0.5 * beta)
    arg = -2.0 * math.sin(t * math.asin(s)) + math.cos(0.5 * (alpha - beta))
    if not -1.0 <= arg <= 1.0:
        return math.nan
    return -0.5 * math.acos(arg) + 0.25 * (alpha + beta)


def _gamma_c_closed(alpha: float, beta: float, t: float) -> float:
    s = math.sin(0.5 * alpha) * math.sin(0.5 * beta)
    inner = 2.0 * t * (math.acos(-s) - TWO_PI) / (1.0 + t)
    arg = -2.0 * math.sin(inner) + math.cos(0.5 * (alpha - beta))
    if not -1.0 <= arg <= 1.0:
        return math.nan
    return -math.acos(arg) + 0.5 * (alpha + beta)


def _inflation_ratio(alpha: float, beta: float, gamma: float) -> float:
    return _fov_area(alpha, beta) / _fov_area(alpha + 2 * gamma, beta + 2 * gamma)


def _deflation_ratio(alpha: float, beta: float, gamma: float) -> float:
    if gamma >= 0.5 * min(alpha, beta):
        return math.nan
    return _fov_area(alpha - 2 * gamma, beta - 2 * gamma) / _fov_area(alpha, beta)


def _candidate_valid(gamma: float, relation, t: float) -> bool:
    # tiny negatives are t=1 roundoff; the relation check rejects anything
    # that is genuinely off
    if not math.isfinite(gamma) or gamma < -1e-9:
        return False
    if relation is None:
        return True
    residual = relation(max(0.0, gamma)) - t
    return math.isfinite(residual) and abs(residual) <= RELATION_TOL


def _bisect_inflation(alpha: float, beta: float, t: float) -> float:
    # solve inflation_ratio(gamma) = t on [0, gamma_max]; the ratio is 1
    # at 0 and decreases monotonically while both fovs stay within pi
    hi = 0.5 * (math.pi - max(alpha, beta))
    if hi <= 0.0:
        return 0.0
    if _inflation_ratio(alpha, beta, hi) >= t:
        return hi  # even the largest admissible inflation keeps IoU >= t
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _inflation_ratio(alpha, beta, mid) >= t:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def radius(alpha: float, beta: float, t: float = 0.7) -> RadiusBreakdown:
    """Largest center displacement that keeps IoU with the truth >= t.

    Evaluates the three closed-form candidates (predicted box containing
    the truth, contained by it, or overlapping it), validates the first
    two against their defining IoU relations, and takes the minimum of
    the survivors. Falls back to bisecting the containment relation if
    no candidate survives, which the breakdown flags.
    """
    if not (0.0 < alpha <= math.pi and 0.0 < beta <= math.pi):
        raise ValueError("fovs must lie in (0, pi]")
    if not 0.0 < t <= 1.0:
        raise ValueError("t must be in (0, 1]")

    ga = _gamma_a_closed(alpha, beta, t)
    gb = _gamma_b_closed(alpha, beta, t)
    gc = _gamma_c_closed(alpha, beta, t)
    va = _candidate_valid(ga, lambda g: _inflation_ratio(alpha, beta, g), t)
    vb = _candidate_valid(gb, lambda g: _deflation_ratio(alpha, beta, g), t)
    vc = _candidate_valid(gc, None, t)  # no defining relation is published

    survivors = [g for g, ok in ((ga, va), (gb, vb), (gc, vc)) if ok]
    if survivors:
        return RadiusBreakdown(ga, gb, gc, va, vb, vc, max(0.0, min(survivors)), False)
    return RadiusBreakdown(ga, gb, gc, va, vb, vc, _bisect_inflation(alpha, beta, t), True)


# ---------------------------------------------------------------------------
# heatmap values and ground-truth rendering


def heatmap_value(center, loc, sigma: float, mode: str = "distance") -> float:
    """Splat value at loc for a center point, from the geodesic distance.

    The default mode divides the plain distance by 2*sigma^2 exactly as the
    supervision formula is written; "squared" uses the squared distance
    (the usual Gaussian). Both are supported, neither is substituted for
    the other silently.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    if mode not in HEATMAP_MODES:
        raise ValueError(f"unknown heatmap mode {mode!r}")
    d = math.acos(_clamp(np.dot(sph_to_vec(*center), sph_to_vec(*loc))))
    if mode == "squared":
        d = d * d
    return math.exp(-d / (2.0 * sigma * sigma))


def _grid_unit_vectors(spec: ErpImageSpec) -> np.ndarray:
    th = np.arange(spec.width) * (TWO_PI / spec.width)
    ph = np.arange(spec.height) * (math.pi / spec.height)
    sin_ph = np.sin(ph)[:, None]
    out = np.empty((spec.height, spec.width, 3))
    out[:, :, 0] = sin_ph * np.cos(th)[None, :]
    out[:, :, 1] = sin_ph * np.sin(th)[None, :]
    out[:, :, 2] = np.cos(ph)[:, None]
    return out


def render_gt(
    annotations: Sequence[GtAnnotation],
    spec: ErpImageSpec,
    num_classes: int,
    weights: LossWeights = LossWeights(),
    sigma_scale: float = 1.0 / 3.0,
    mode: str = "distance",
) -> HeatmapTensor:
    """Render annotations into supervision grids.

    Each annotation splats heatmap values over the cells within geodesic
    distance gamma of its exact center (sigma = gamma * sigma_scale),
    overlaps combining by elementwise max, and finally forces its own cell
    to exactly 1. Offsets and fovs are written only at positive cells;
    when two centers share a cell the later annotation wins.
    """
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    if mode not in HEATMAP_MODES:
        raise ValueError(f"unknown heatmap mode {mode!r}")
    H, W = spec.height, spec.width
    scores = np.zeros((H, W, num_classes))
    offsets = np.zeros((H, W, 2))
    fovs = np.zeros((H, W, 2))
    grid = _grid_unit_vectors(spec)

    for ann in annotations:
        if ann.class_id >= num_classes:
            raise ValueError(f"class_id {ann.class_id} out of range for C={num_classes}")
        b = ann.bbox
        gamma = radius(b.alpha, b.beta, weights.iou_threshold).gamma
        sigma = gamma * sigma_scale
        if sigma > 0.0:
            center = np.array(sph_to_vec(b.theta, b.phi))
            cos_d = np.clip(grid @ center, -1.0, 1.0)
            mask = cos_d >= math.cos(gamma)
            d = np.arccos(cos_d[mask])
            if mode == "squared":
                d = d * d
            vals = np.exp(-d / (2.0 * sigma * sigma))
            channel = scores[:, :, ann.class_id]
            channel[mask] = np.maximum(channel[mask], vals)

    for ann in annotations:
        (x, y), off = gt_offset(ann.bbox.theta, ann.bbox.phi, spec)
        scores[y, x, ann.class_id] = 1.0
        offsets[y, x] = off
        fovs[y, x] = (ann.bbox.alpha, ann.bbox.beta)

    return HeatmapTensor(scores, offsets, fovs, spec, mode)


# ---------------------------------------------------------------------------
# losses


def focal_loss(pred_scores: np.ndarray, gt_scores: np.ndarray, spec: ErpImageSpec) -> float:
    """Pixel-area-weighted focal loss over all cells and classes.

    Cells with ground truth exactly 1 use the (1-p)^2 log p branch; all
    others are weighted down by (1-y)^4. Every term additionally carries
    the solid angle of its pixel, so equator rows dominate polar rows.
    """
    if pred_scores.shape != gt_scores.shape:
        raise ValueError("prediction and ground truth shapes differ")
    pos = gt_scores == 1.0
    n = int(pos.sum())
    if n == 0:
        raise EmptyGtError("ground truth has no positive cells")
    p = np.clip(pred_scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    w = row_weights(spec)[:, None, None]
    terms = np.where(
        pos,
        (1.0 - p) ** 2 * np.log(p),
        (1.0 - gt_scores) ** 4 * p**2 * np.log(1.0 - p),
    )
    return float(-(w * terms).sum() / n)


def offset_loss(
    pred_offsets: np.ndarray, annotations: Sequence[GtAnnotation], spec: ErpImageSpec
) -> float:
    """Mean geodesic angle between predicted and true centers.

    Both centers are reconstructed as cell anchor plus offset and compared
    as 3D unit vectors, so the penalty for an azimuthal error shrinks
    towards the poles exactly as the metric does.
    """
    if not annotations:
        raise EmptyGtError("offset loss needs at least one annotation")
    total = 0.0
    for ann in annotations:
        (x, y), _ = gt_offset(ann.bbox.theta, ann.bbox.phi, spec)
        dt, dp = pred_offsets[y, x]
        pred_theta = x * TWO_PI / spec.width + dt
        pred_phi = min(max(y * math.pi / spec.height + dp, 0.0), math.pi)
        v_pred = sph_to_vec(pred_theta, pred_phi)
        v_true = sph_to_vec(ann.bbox.theta, ann.bbox.phi)
        total += math.acos(_clamp(float(np.dot(v_pred, v_true))))
    return total / len(annotations)


def fov_loss(pred_fovs: np.ndarray, annotations: Sequence[GtAnnotation], spec: ErpImageSpec) -> float:
    """Mean L1 distance of (alpha, beta) at the positive cells."""
    if not annotations:
        raise EmptyGtError("fov loss needs at least one annotation")
    total = 0.0
    for ann in annotations:
        (x, y), _ = gt_offset(ann.bbox.theta, ann.bbox.phi, spec)
        pa, pb = pred_fovs[y, x]
        total += abs(pa - ann.bbox.alpha) + abs(pb - ann.bbox.beta)
    return total / len(annotations)


def total_loss(cls_loss: float, off_loss: float, fov_loss_value: float, weights: LossWeights) -> float:
    return cls_loss + weights.lambda_off * off_loss + weights.lambda_fov * fov_loss_value


# ---------------------------------------------------------------------------
# decoding


def decode(tensor: HeatmapTensor, top_k: int = 100) -> list[Detection]:
    """Extract peak detections from a heatmap tensor.

    A peak is a cell strictly greater than its 8 neighbors, with columns
    wrapping around the seam and edge rows comparing against the neighbors
    that exist. The top_k peaks across all classes come back sorted by
    descending score; ties break deterministically by (class, y, x).
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    s = tensor.scores
    H, W, C = s.shape
    spec = tensor.spec

    is_peak = np.ones_like(s, dtype=bool)
    for dy in (-1, 0, 1):
        if dy == -1:
            shifted = np.full_like(s, -np.inf)
            shifted[:-1] = s[1:]
        elif dy == 1:
            shifted = np.full_like(s, -np.inf)
            shifted[1:] = s[:-1]
        else:
            shifted = s
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            is_peak &= s > np.roll(shifted, dx, axis=1)

    ys, xs, cs = np.nonzero(is_peak)
    order = sorted(range(len(ys)), key=lambda i: (-s[ys[i], xs[i], cs[i]], cs[i], ys[i], xs[i]))
    out = []
    for i in order[:top_k]:
        y, x, c = int(ys[i]), int(xs[i]), int(cs[i])
        dt, dp = tensor.offsets[y, x]
        theta = (x * TWO_PI / W + dt) % TWO_PI
        phi = min(max(y * math.pi / H + dp, 0.0), math.pi)
        alpha = min(max(float(tensor.fovs[y, x, 0]), MIN_FOV), math.pi)
        beta = min(max(float(tensor.fovs[y, x, 1]), MIN_FOV), math.pi)
        out.append(Detection(c, float(s[y, x, c]), SphericalRect(theta, phi, alpha, beta)))
    return out


# ---------------------------------------------------------------------------
# planar pixel rect -> spherical rect


def _inscribe_one_hemisphere(phi_top: float, phi_bot: float, delta: float):
    """Solve for (phi0, a, b) of a rect whose bbox is exactly the input.

    Northern-hemisphere picture (phi_bot <= pi/2): the bbox top row touches
    the top edge midpoint, the side columns touch the top corners, and the
    bottom row touches the bottom corners. Inverting those three contacts
    gives the closed form below. Returns None when no such rect exists
    (the corner latitude equation has no root).
    """
    k = math.tan(delta) * math.sin(phi_top)
    c2 = math.cos(phi_bot) * math.hypot(1.0, k)
    if c2 >= math.cos(phi_top):
        return None
    b = 0.5 * (math.acos(_clamp(c2)) - phi_top)
    if b <= 0.0:
        return None
    a = math.atan2(k, math.cos(b))
    return phi_top + b, a, b


def _inscribe_straddling(phi_top: float, phi_bot: float, delta: float):
    """Rows from the two edge midpoints, columns from the wider corner pair."""
    phi0 = 0.5 * (phi_top + phi_bot)
    b = 0.5 * (phi_bot - phi_top)
    sin_w = min(math.sin(phi_top), math.sin(phi_bot))
    a = math.atan2(math.tan(delta) * sin_w, math.cos(b))
    return phi0, a, b


def planar_to_spherical(rect_px: PixelBox, spec: ErpImageSpec) -> SphericalRect:
    """Inscribe a spherical rect into a planar ERP pixel rect.

    The construction works from the side nearer a pole: its corners set the
    horizontal extent, and the opposite corners land on the far row by the
    equal-corner-angle property of spherical rects. Rects spanning at least
    half the azimuth range are capped at alpha = pi, and rects touching a
    pole row are inset by half a pixel; both cases warn. The result's own
    ERP bbox contains the input for uncapped inputs.
    """
    W, H = spec.width, spec.height
    if rect_px.width <= 0 or rect_px.height <= 0:
        raise DegenerateRectError("pixel rect has zero area")
    theta0 = (0.5 * (rect_px.x0 + rect_px.x1) * spec.px_theta) % TWO_PI
    delta = 0.5 * rect_px.width * spec.px_theta

    y0, y1 = rect_px.y0, rect_px.y1
    phi_top = y0 * spec.px_phi
    phi_bot = y1 * spec.px_phi
    if y0 <= 0:
        phi_top = 0.5 * spec.px_phi
        warnings.warn("rect touches the north pole row; top edge inset by half a pixel")
    if y1 >= H:
        phi_bot = math.pi - 0.5 * spec.px_phi
        warnings.warn("rect touches the south pole row; bottom edge inset by half a pixel")
    if phi_bot <= phi_top:
        raise DegenerateRectError("pixel rect collapses after pole insets")

    if delta >= 0.5 * math.pi - 1e-12:
        warnings.warn("azimuth span reaches half the sphere; alpha capped at pi")
        phi0 = 0.5 * (phi_top + phi_bot)
        return SphericalRect(theta0, phi0, math.pi, phi_bot - phi_top)

    if phi_bot <= 0.5 * math.pi:  # entirely northern
        solved = _inscribe_one_hemisphere(phi_top, phi_bot, delta)
        if solved is None:
            solved = _inscribe_straddling(phi_top, phi_bot, delta)
        phi0, a, b = solved
    elif phi_top >= 0.5 * math.pi:  # entirely southern: mirror through the equator
        solved = _inscribe_one_hemisphere(math.pi - phi_bot, math.pi - phi_top, delta)
        if solved is None:
            solved = _inscribe_straddling(math.pi - phi_bot, math.pi - phi_top, delta)
        phi0, a, b = solved
        phi0 = math.pi - phi0
    else:
        phi0, a, b = _inscribe_straddling(phi_top, phi_bot, delta)

    return SphericalRect(theta0, phi0, 2.0 * a, 2.0 * b)


# ---------------------------------------------------------------------------
# binary container


def save_heatmap(tensor: HeatmapTensor, path) -> None:
    """Write the tensor to a flat little-endian binary container.

    Layout: magic "SPHM", u32 W, H, C, u32 flags (bit 0 set for squared
    mode), then float64 planes in scores/offsets/fovs order, each plane
    H*W row-major.
    """
    flags = _MODE_FLAG_SQUARED if tensor.mode == "squared" else 0
    H, W, C = tensor.scores.shape
    with open(path, "wb") as f:
        f.write(HEATMAP_MAGIC)
        f.write(struct.pack("<IIII", W, H, C, flags))
        f.write(np.ascontiguousarray(np.moveaxis(tensor.scores, 2, 0), dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(np.moveaxis(tensor.offsets, 2, 0), dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(np.moveaxis(tensor.fovs, 2, 0), dtype="<f8").tobytes())


def load_heatmap(path) -> HeatmapTensor:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != HEATMAP_MAGIC:
        raise HeatmapFormatError("bad magic; not a heatmap container")
    if len(blob) < 20:
        raise HeatmapFormatError("truncated header")
    W, H, C, flags = struct.unpack_from("<IIII", blob, 4)
    if W < 2 or H < 2 or C < 1:
        raise HeatmapFormatError("implausible dimensions in header")
    plane = H * W * 8
    want = 20 + plane * (C + 4)
    if len(blob) != want:
        raise HeatmapFormatError(f"payload size mismatch: got {len(blob)}, want {want}")

    def planes(offset: int, count: int) -> np.ndarray:
        arr = np.frombuffer(blob, dtype="<f8", count=count * H * W, offset=offset)
        return np.moveaxis(arr.reshape(count, H, W), 0, 2).copy()

    mode = "squared" if flags & _MODE_FLAG_SQUARED else "distance"
    return HeatmapTensor(
        scores=planes(20, C),
        offsets=planes(20 + plane * C, 2),
        fovs=planes(20 + plane * (C + 2), 2),
        spec=ErpImageSpec(W, H),
        mode=mode,
    )
