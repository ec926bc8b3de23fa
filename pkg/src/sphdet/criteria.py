"""IoU criteria for spherical boxes: the unbiased one, biased baselines, oracles.

Every criterion maps two spherical rectangles to a scalar in [0, 1]. The
analytical spherical-excess IoU from :mod:`sphdet.geometry` is the
reference ("unbiased") criterion. The baselines reproduce common biased
approximations that work on the equirectangular (ERP) image plane or on
latitude zones; they are kept for comparison studies, not for accuracy.
Two sampling oracles (uniform Monte Carlo and a pixel-area integral)
bound the truth independently of the analytical formula.

ERP pixel conventions: pixel (x, y) covers theta in [x, x+1) * 2*pi/W and
phi in [y, y+1) * pi/H; pixel centers sit at (x + 0.5, y + 0.5). The
solid angle of a pixel in row y is
``(cos(y*pi/H) - cos((y+1)*pi/H)) * 2*pi/W`` and sums to 4*pi over the
grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import (
    CONTAINMENT_EPS,
    SphericalRect,
    boundary_normals,
    contains_point,
    iou as iou_unbiased,
    local_frame,
    normals_matrix,
    rect_vertices,
)

TWO_PI = 2.0 * math.pi


class ProjectionOverflowError(ValueError):
    """Gnomonic sample falls 90 degrees or more from the tangent point."""


class ZeroUnionError(ValueError):
    """No Monte Carlo sample landed in either box."""


@dataclass(frozen=True)
class ErpImageSpec:
    """Equirectangular grid size. width maps to 2*pi, height to pi."""

    width: int
    height: int

    def __post_init__(self):
        if not (isinstance(self.width, int) and isinstance(self.height, int)):
            raise ValueError("width and height must be integers")
        if self.width < 2 or self.height < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.width}x{self.height}")
        if self.width != 2 * self.height:
            warnings.warn(
                f"ERP grid {self.width}x{self.height} is not 2:1; angles still map linearly",
                stacklevel=2,
            )

    @property
    def px_theta(self) -> float:
        return TWO_PI / self.width

    @property
    def px_phi(self) -> float:
        return math.pi / self.height


def pixel_weight(y: int, spec: ErpImageSpec) -> float:
    """Solid angle of one pixel in row y (same for every column)."""
    if not 0 <= y < spec.height:
        raise ValueError(f"row {y} outside [0, {spec.height})")
    h = spec.height
    return (math.cos(y * math.pi / h) - math.cos((y + 1) * math.pi / h)) * TWO_PI / spec.width


def row_weights(spec: ErpImageSpec) -> np.ndarray:
    """Per-row pixel solid angles as an (H,) array; sums to 4*pi / W * W."""
    edges = np.cos(np.arange(spec.height + 1) * (math.pi / spec.height))
    return (edges[:-1] - edges[1:]) * (TWO_PI / spec.width)


# ---------------------------------------------------------------------------
# tight ERP bounding boxes


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned ERP pixel rectangle.

    x0 is in [0, W); x1 may exceed W, in which case the box wraps across
    the seam. y0 <= y1 within [0, H]. Values are integer-valued floats
    (outward-rounded pixel bounds).
    """

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def wrapped(self, image_width: float) -> bool:
        return self.x1 > image_width


def _azimuth_rel(v, theta0: float) -> float:
    """Azimuth of v relative to theta0, wrapped into (-pi, pi]."""
    th = math.atan2(v[1], v[0])
    return (th - theta0 + math.pi) % TWO_PI - math.pi


def erp_bbox(rect: SphericalRect, spec: ErpImageSpec) -> PixelBox:
    """Tight ERP pixel bbox of a rect, rounded outward to whole pixels.

    Azimuth extrema sit at corners (azimuth is monotone along any
    non-meridian great-circle arc); latitude extrema sit at corners or at
    the interior point of an edge arc closest to a pole. A rect
    containing a pole spans every column and extends to that pole's row.
    """
    W, H = spec.width, spec.height
    north = contains_point(rect, (0.0, 0.0, 1.0))
    south = contains_point(rect, (0.0, 0.0, -1.0))

    corners = rect_vertices(rect)
    zs = [v.z for v in corners]
    # interior latitude extrema of each edge arc: the unit point of the
    # plane closest to +-z, kept only if it lies on the rect boundary
    normals = boundary_normals(rect)
    for n in normals:
        px = -n.z * n.x
        py = -n.z * n.y
        pz = 1.0 - n.z * n.z
        ln = math.sqrt(px * px + py * py + pz * pz)
        if ln < 1e-12:
            continue
        for s in (1.0, -1.0):
            cand = (s * px / ln, s * py / ln, s * pz / ln)
            if contains_point(rect, cand):
                zs.append(cand[2])

    if north:
        phi_min = 0.0
    else:
        phi_min = math.acos(min(1.0, max(-1.0, max(zs))))
    if south:
        phi_max = math.pi
    else:
        phi_max = math.acos(min(1.0, max(-1.0, min(zs))))

    y0 = math.floor(phi_min * H / math.pi)
    y1 = math.ceil(phi_max * H / math.pi)
    y0 = max(0, min(y0, H - 1))
    y1 = max(y0 + 1, min(y1, H))

    if north or south:
        return PixelBox(0.0, float(y0), float(W), float(y1))

    rel = [_azimuth_rel(v, rect.theta) for v in corners]
    th_min = rect.theta + min(rel)
    th_max = rect.theta + max(rel)
    x0 = math.floor(th_min * W / TWO_PI)
    x1 = math.ceil(th_max * W / TWO_PI)
    x1 = max(x1, x0 + 1)
    # canonicalize: x0 into [0, W), keep the span
    span = x1 - x0
    x0 = x0 % W
    return PixelBox(float(x0), float(y0), float(x0 + span), float(y1))


# ---------------------------------------------------------------------------
# planar-rectangle criterion


def _interval_overlap(a0, a1, b0, b1) -> float:
    return max(0.0, min(a1, b1) - max(a0, b0))


def _seam_overlap_x(a: PixelBox, b: PixelBox, W: float) -> float:
    """Total x-overlap of the two boxes on the width-W pixel circle.

    Each box is an interval of length <= W starting in [0, W), so unrolling
    b by -W, 0, +W and summing captures the circular overlap exactly, even
    when one box wraps the seam and the other covers the full width.
    """
    return sum(_interval_overlap(a.x0, a.x1, b.x0 + k, b.x1 + k) for k in (-W, 0.0, W))


def iou_planar_rect(b1: SphericalRect, b2: SphericalRect, spec: ErpImageSpec) -> float:
    """Planar IoU of the tight ERP pixel bboxes (the naive baseline).

    Seam handling: the x-overlap is accumulated over the second box shifted
    by -W, 0, +W columns. Biased everywhere the ERP distortion is
    non-uniform, most visibly near the poles.
    """
    a = erp_bbox(b1, spec)
    b = erp_bbox(b2, spec)
    W = float(spec.width)
    ox = _seam_overlap_x(a, b, W)
    oy = _interval_overlap(a.y0, a.y1, b.y0, b.y1)
    inter = ox * oy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


# ---------------------------------------------------------------------------
# circle criterion


def iou_circle(b1: SphericalRect, b2: SphericalRect, spec: ErpImageSpec) -> float:
    """Circle-approximation IoU on the ERP plane.

    Each rect becomes the planar disk centered at its center pixel whose
    radius is half the diagonal of its tight ERP bbox; the IoU is the
    exact disk-disk overlap ratio. Inherits the bbox's pixel rounding.
    """
    boxes = (erp_bbox(b1, spec), erp_bbox(b2, spec))
    radii = [0.5 * math.hypot(b.width, b.height) for b in boxes]
    W = float(spec.width)
    cx = [r.theta * W / TWO_PI for r in (b1, b2)]
    cy = [r.phi * spec.height / math.pi for r in (b1, b2)]
    dx = min(abs(cx[0] - cx[1] + k) for k in (-W, 0.0, W))
    d = math.hypot(dx, cy[0] - cy[1])
    r1, r2 = radii
    if d >= r1 + r2:
        inter = 0.0
    elif d <= abs(r1 - r2):
        inter = math.pi * min(r1, r2) ** 2
    else:
        q1 = math.acos(max(-1.0, min(1.0, (d * d + r1 * r1 - r2 * r2) / (2 * d * r1))))
        q2 = math.acos(max(-1.0, min(1.0, (d * d + r2 * r2 - r1 * r1) / (2 * d * r2))))
        s = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)
        inter = r1 * r1 * q1 + r2 * r2 * q2 - 0.5 * math.sqrt(max(0.0, s))
    union = math.pi * r1 * r1 + math.pi * r2 * r2 - inter
    return inter / union if union > 0 else 0.0


# ---------------------------------------------------------------------------
# sampled-polygon criterion


def _tangent_polygon(rect: SphericalRect, n_per_side: int) -> np.ndarray:
    """ERP polygon sampled from the rect's gnomonic tangent-plane rectangle.

    Returns (n, 2) angle coordinates (theta, phi) with theta unwrapped
    around the rect center so the polygon never jumps across the seam.
    """
    half = 0.5 * math.pi - 1e-9
    if rect.alpha / 2 >= half or rect.beta / 2 >= half:
        raise ProjectionOverflowError(
            f"fov ({rect.alpha:.6f}, {rect.beta:.6f}) reaches the gnomonic horizon"
        )
    ta, tb = math.tan(rect.alpha / 2), math.tan(rect.beta / 2)
    look, right, up = local_frame(rect.theta, rect.phi)
    # CCW around the tangent rectangle starting at (-ta, -tb)
    t = np.arange(n_per_side) / n_per_side
    u = np.concatenate((-ta + 2 * ta * t, np.full(n_per_side, ta), ta - 2 * ta * t, np.full(n_per_side, -ta)))
    v = np.concatenate((np.full(n_per_side, -tb), -tb + 2 * tb * t, np.full(n_per_side, tb), tb - 2 * tb * t))
    dirs = (
        np.asarray(look)[None, :]
        + u[:, None] * np.asarray(right)[None, :]
        + v[:, None] * np.asarray(up)[None, :]
    )
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    th = np.arctan2(dirs[:, 1], dirs[:, 0])
    ph = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
    th = rect.theta + (th - rect.theta + math.pi) % TWO_PI - math.pi
    return np.column_stack((th, ph))


def iou_polygon_sampled(b1: SphericalRect, b2: SphericalRect, n_points: int = 64) -> float:
    """Planar IoU of gnomonic edge-sampled polygons in ERP angle space.

    n_points must be a positive multiple of 4 (per-side sampling). The
    polygons are clipped on the (theta, phi) plane, so the result carries
    the full ERP distortion; it is resolution-independent because planar
    IoU is invariant under the axis-wise angle-to-pixel scaling. Raises
    ProjectionOverflowError when a fov reaches the tangent-plane horizon
    (comparison tables render that as n/a).
    """
    if n_points < 4 or n_points % 4 != 0:
        raise ValueError(f"n_points must be a positive multiple of 4, got {n_points}")
    from shapely.geometry import Polygon  # deferred: big import

    per_side = n_points // 4
    p1 = _tangent_polygon(b1, per_side)
    p2 = _tangent_polygon(b2, per_side)
    g1 = Polygon(p1)
    g2 = Polygon(p2)
    if not g1.is_valid:
        g1 = g1.buffer(0)
    if not g2.is_valid:
        g2 = g2.buffer(0)
    inter = 0.0
    for k in (-TWO_PI, 0.0, TWO_PI):
        g2k = Polygon(np.column_stack((p2[:, 0] + k, p2[:, 1])))
        if not g2k.is_valid:
            g2k = g2k.buffer(0)
        inter = max(inter, g1.intersection(g2k).area)
    union = g1.area + g2.area - inter
    return inter / union if union > 0 else 0.0


# ---------------------------------------------------------------------------
# latitude-zone criterion


def iou_sph_zone(b1: SphericalRect, b2: SphericalRect) -> float:
    """Zone IoU: area = alpha * (cos(phi - beta/2) - cos(phi + beta/2)).

    Treats a box as the latitude zone spanned by its fovs around its
    center and intersects the theta/phi intervals planar-style (theta
    with wraparound, phi clipped to [0, pi]). Resolution-independent and
    seam-correct, but biased because real boundary arcs are not parallels
    and meridians.
    """

    def zone(b: SphericalRect) -> tuple[float, float, float]:
        lo = max(0.0, b.phi - 0.5 * b.beta)
        hi = min(math.pi, b.phi + 0.5 * b.beta)
        return lo, hi, b.alpha * (math.cos(lo) - math.cos(hi))

    lo1, hi1, a1 = zone(b1)
    lo2, hi2, a2 = zone(b2)
    d = (b2.theta - b1.theta + math.pi) % TWO_PI - math.pi
    ov = 0.0
    for shift in (-TWO_PI, 0.0, TWO_PI):
        ov += _interval_overlap(-0.5 * b1.alpha, 0.5 * b1.alpha, d + shift - 0.5 * b2.alpha, d + shift + 0.5 * b2.alpha)
    plo, phi_ = max(lo1, lo2), min(hi1, hi2)
    inter = ov * (math.cos(plo) - math.cos(phi_)) if phi_ > plo else 0.0
    union = a1 + a2 - inter
    return inter / union if union > 0 else 0.0


# ---------------------------------------------------------------------------
# Monte Carlo oracle


_SAMPLE_CACHE: dict[tuple[int, int], np.ndarray] = {}
_SAMPLE_CACHE_MAX = 2


def _sphere_samples(n_samples: int, seed: int) -> np.ndarray:
    """Cached uniform sphere samples: z ~ U[-1, 1], theta ~ U[0, 2pi)."""
    key = (n_samples, seed)
    pts = _SAMPLE_CACHE.get(key)
    if pts is None:
        rng = np.random.default_rng(seed)
        z = rng.uniform(-1.0, 1.0, n_samples)
        th = rng.uniform(0.0, TWO_PI, n_samples)
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        pts = np.column_stack((r * np.cos(th), r * np.sin(th), z))
        if len(_SAMPLE_CACHE) >= _SAMPLE_CACHE_MAX:
            _SAMPLE_CACHE.pop(next(iter(_SAMPLE_CACHE)))
        _SAMPLE_CACHE[key] = pts
    return pts


def iou_monte_carlo(
    b1: SphericalRect, b2: SphericalRect, n_samples: int = 1_000_000, seed: int = 0
) -> tuple[float, float]:
    """Monte Carlo IoU estimate and its standard error.

    Deterministic given (n_samples, seed). The estimate is
    hits(intersection) / hits(union); the standard error treats the
    intersection count as binomial conditioned on the union count.
    Raises ZeroUnionError when no sample lands in either box.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    pts = _sphere_samples(n_samples, seed)
    n1 = normals_matrix(b1)
    n2 = normals_matrix(b2)
    n_both = 0
    n_union = 0
    chunk = 4_000_000
    for lo in range(0, n_samples, chunk):
        block = pts[lo : lo + chunk]
        d = block @ np.hstack((n1.T, n2.T))
        in1 = (d[:, :4] >= -CONTAINMENT_EPS).all(axis=1)
        in2 = (d[:, 4:] >= -CONTAINMENT_EPS).all(axis=1)
        n_both += int(np.count_nonzero(in1 & in2))
        n_union += int(np.count_nonzero(in1 | in2))
    if n_union == 0:
        raise ZeroUnionError("no sample landed in either box; result undefined")
    est = n_both / n_union
    se = math.sqrt(max(est * (1.0 - est), 0.0) / n_union)
    return est, se


# ---------------------------------------------------------------------------
# pixel-integral oracle


_TRIG_CACHE: dict[ErpImageSpec, tuple] = {}


def _grid_trig(spec: ErpImageSpec):
    got = _TRIG_CACHE.get(spec)
    if got is None:
        th = (np.arange(spec.width) + 0.5) * (TWO_PI / spec.width)
        ph = (np.arange(spec.height) + 0.5) * (math.pi / spec.height)
        got = (np.cos(th), np.sin(th), np.sin(ph), np.cos(ph), row_weights(spec))
        if len(_TRIG_CACHE) >= 4:
            _TRIG_CACHE.pop(next(iter(_TRIG_CACHE)))
        _TRIG_CACHE[spec] = got
    return got


def iou_pixel_integral(b1: SphericalRect, b2: SphericalRect, spec: ErpImageSpec) -> float:
    """Pixel-area-integral IoU: rasterize both boxes over the full ERP grid.

    Every pixel center is tested against both boxes and pixel solid
    angles are accumulated for the intersection and the union. Converges
    to the analytical value as the grid grows; used as the deterministic
    reference in comparison tables.
    """
    cos_t, sin_t, sin_p, cos_p, weights = _grid_trig(spec)
    planes = np.vstack((normals_matrix(b1), normals_matrix(b2)))  # (8, 3)
    inter_w = 0.0
    union_w = 0.0
    rows_per_chunk = max(1, min(spec.height, (1 << 22) // spec.width))
    for lo in range(0, spec.height, rows_per_chunk):
        hi = min(spec.height, lo + rows_per_chunk)
        sp = sin_p[lo:hi][:, None]
        cp = cos_p[lo:hi][:, None]
        x = sp * cos_t[None, :]
        y = sp * sin_t[None, :]
        in_all = []
        for box_planes in (planes[:4], planes[4:]):
            inside = None
            for n in box_planes:
                d = n[0] * x + n[1] * y + n[2] * cp
                side = d >= -CONTAINMENT_EPS
                inside = side if inside is None else (inside & side)
            in_all.append(inside)
        in1, in2 = in_all
        w = weights[lo:hi]
        inter_w += float(w @ (in1 & in2).sum(axis=1))
        union_w += float(w @ (in1 | in2).sum(axis=1))
    return inter_w / union_w if union_w > 0 else 0.0


# ---------------------------------------------------------------------------
# criterion ids and dispatch


_KINDS = ("unbiased", "planar_rect", "circle", "polygon", "sph_zone", "monte_carlo", "pixel_integral")

_LABELS = {
    "unbiased": "Ours",
    "planar_rect": "Rectangle",
    "circle": "Circle",
    "polygon": "Polygon",
    "sph_zone": "SphIoU",
    "monte_carlo": "Monte Carlo",
    "pixel_integral": "Sph. Integral",
}


@dataclass(frozen=True)
class CriterionId:
    """Identifier plus parameters for one IoU criterion.

    Use the factory classmethods; the constructor validates per kind.
    Swappable anywhere an IoU is computed (matching, tables, CLI).
    """

    kind: str
    n_points: int | None = None
    n_samples: int | None = None
    seed: int | None = None
    resolution: ErpImageSpec | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown criterion kind {self.kind!r}")
        if self.kind == "polygon":
            if not self.n_points or self.n_points < 4 or self.n_points % 4:
                raise ValueError("polygon criterion needs n_points, a positive multiple of 4")
        if self.kind == "monte_carlo":
            if not self.n_samples or self.n_samples < 1:
                raise ValueError("monte_carlo criterion needs n_samples >= 1")
            if self.seed is None:
                raise ValueError("monte_carlo criterion needs a seed")

    @classmethod
    def unbiased(cls) -> "CriterionId":
        return cls("unbiased")

    @classmethod
    def planar_rect(cls, resolution: ErpImageSpec | None = None) -> "CriterionId":
        return cls("planar_rect", resolution=resolution)

    @classmethod
    def circle(cls, resolution: ErpImageSpec | None = None) -> "CriterionId":
        return cls("circle", resolution=resolution)

    @classmethod
    def polygon_sampled(cls, n_points: int = 64) -> "CriterionId":
        return cls("polygon", n_points=n_points)

    @classmethod
    def sph_zone(cls) -> "CriterionId":
        return cls("sph_zone")

    @classmethod
    def monte_carlo(cls, n_samples: int = 1_000_000, seed: int = 0) -> "CriterionId":
        return cls("monte_carlo", n_samples=n_samples, seed=seed)

    @classmethod
    def pixel_integral(cls, resolution: ErpImageSpec | None = None) -> "CriterionId":
        return cls("pixel_integral", resolution=resolution)

    @property
    def label(self) -> str:
        return _LABELS[self.kind]

    @property
    def resolution_dependent(self) -> bool:
        return self.kind in ("planar_rect", "circle", "pixel_integral")

    def spec_name(self) -> str:
        """Stable text form, parseable by parse()."""
        if self.kind == "polygon":
            return f"polygon:{self.n_points}"
        if self.kind == "monte_carlo":
            return f"monte-carlo:{self.n_samples}:{self.seed}"
        if self.kind == "pixel_integral" and self.resolution is not None:
            return f"integral:{self.resolution.width}x{self.resolution.height}"
        return {"unbiased": "unbiased", "planar_rect": "rectangle", "circle": "circle",
                "sph_zone": "sphiou", "pixel_integral": "integral"}[self.kind]

    @classmethod
    def parse(cls, text: str) -> "CriterionId":
        """Parse CLI criterion syntax, e.g. 'polygon:64' or 'integral:2048x1024'."""
        parts = text.strip().lower().split(":")
        name, args = parts[0], parts[1:]
        builder = None
        if name in ("unbiased", "ours"):
            builder = lambda: cls.unbiased()
        elif name in ("rectangle", "planar-rect", "planar_rect", "rect"):
            builder = lambda: cls.planar_rect()
        elif name == "circle":
            builder = lambda: cls.circle()
        elif name in ("polygon", "polygon-sampled"):
            builder = lambda: cls.polygon_sampled(int(args[0]) if args else 64)
        elif name in ("sphiou", "sph-zone", "sph_zone", "zone"):
            builder = lambda: cls.sph_zone()
        elif name in ("monte-carlo", "monte_carlo", "mc"):
            builder = lambda: cls.monte_carlo(
                int(args[0]) if args else 1_000_000, int(args[1]) if len(args) > 1 else 0
            )
        elif name in ("integral", "pixel-integral", "pixel_integral"):
            def builder():
                if args:
                    w, h = args[0].split("x")
                    return cls.pixel_integral(ErpImageSpec(int(w), int(h)))
                return cls.pixel_integral()
        if builder is None:
            raise ValueError(f"unknown criterion {text!r}")
        try:
            return builder()
        except (ValueError, IndexError) as exc:
            raise ValueError(f"bad criterion {text!r}: {exc}") from exc


def compute_iou(
    criterion: CriterionId,
    b1: SphericalRect,
    b2: SphericalRect,
    spec: ErpImageSpec | None = None,
) -> float:
    """Evaluate one criterion on a pair of boxes.

    Resolution-dependent criteria use criterion.resolution when set, else
    the spec argument. Monte Carlo returns only the estimate here; call
    iou_monte_carlo directly for the standard error.
    """
    kind = criterion.kind
    if kind == "unbiased":
        return iou_unbiased(b1, b2)
    if kind == "polygon":
        return iou_polygon_sampled(b1, b2, criterion.n_points)
    if kind == "sph_zone":
        return iou_sph_zone(b1, b2)
    if kind == "monte_carlo":
        return iou_monte_carlo(b1, b2, criterion.n_samples, criterion.seed)[0]
    res = criterion.resolution or spec
    if res is None:
        raise ValueError(f"criterion {criterion.label!r} needs an ERP resolution")
    if kind == "planar_rect":
        return iou_planar_rect(b1, b2, res)
    if kind == "circle":
        return iou_circle(b1, b2, res)
    return iou_pixel_integral(b1, b2, res)


DEFAULT_CRITERIA = (
    CriterionId.planar_rect(),
    CriterionId.polygon_sampled(64),
    CriterionId.circle(),
    CriterionId.sph_zone(),
    CriterionId.pixel_integral(),
    CriterionId.unbiased(),
)
