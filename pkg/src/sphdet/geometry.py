"""Spherical rectangles on the unit sphere and their exact intersection area.

Coordinate conventions used across the package:

* ``theta``: azimuthal angle in ``[0, 2*pi)``, measured from the +x axis
  toward +y (east).
* ``phi``: polar angle in ``[0, pi]``, measured from the +z axis (north
  pole), so ``phi = pi/2`` is the equator.
* A point on the sphere is ``(sin(phi)cos(theta), sin(phi)sin(theta),
  cos(phi))``.

A spherical rectangle ``(theta, phi, alpha, beta)`` is the region cut from
the sphere by a four-plane viewing frustum through the sphere center: the
frustum looks along the center direction with horizontal field of view
``alpha`` and vertical field of view ``beta``, both in ``(0, pi]``. Each
boundary edge is therefore an arc of a great circle. All plane normals
here are unit vectors pointing into the region: ``p`` is inside iff
``dot(p, n) >= -CONTAINMENT_EPS`` for all four normals.

Areas are solid angles in steradians. The area of a rectangle is
``4*arccos(-sin(alpha/2)*sin(beta/2)) - 2*pi``, and the area of the convex
intersection polygon of two rectangles follows from the spherical excess
of its interior angles. No equirectangular projection is involved
anywhere in this module, which is what keeps the results free of seam and
pole special cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# Closed-region slack for plane-side tests: a point on a boundary plane is
# inside. Keep well above double rounding noise and well below DEDUP_EPS.
CONTAINMENT_EPS = 1e-10

# |n_a x n_b| below this means the two great circles coincide.
PARALLEL_EPS = 1e-12

# Chord distance under which two intersection candidates are one point.
DEDUP_EPS = 1e-9


class DegenerateRectError(ValueError):
    """Adjacent boundary planes are parallel (both fovs exactly pi)."""


class MalformedPolygonError(ValueError):
    """Polygon data violates the vertex-on-adjacent-planes invariant."""


class NumericallyDegenerateError(RuntimeError):
    """Intersection boundary could not be assembled consistently."""


class UnitVec3(NamedTuple):
    x: float
    y: float
    z: float


class Frame(NamedTuple):
    """Local orthonormal frame at a point on the sphere."""

    v_look: UnitVec3
    v_right: UnitVec3
    v_up: UnitVec3


class BoundaryPlanes(NamedTuple):
    """Inward unit normals of a rectangle's four boundary planes."""

    n_left: UnitVec3
    n_top: UnitVec3
    n_right: UnitVec3
    n_bottom: UnitVec3


def _dot(a, b) -> float:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _cross(a, b):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def _norm(a) -> float:
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


def unit_vec(x: float, y: float, z: float) -> UnitVec3:
    """Normalize (x, y, z) to a UnitVec3; raises on the zero vector."""
    n = math.sqrt(x * x + y * y + z * z)
    if n < 1e-300:
        raise ValueError("cannot normalize zero vector")
    return UnitVec3(x / n, y / n, z / n)


def _clamp(v: float, lo: float = -1.0, hi: float = 1.0) -> float:
    return lo if v < lo else hi if v > hi else v


def wrap_angles(theta: float, phi: float) -> tuple[float, float]:
    """Map any (theta, phi) to the canonical ranges [0, 2pi) x [0, pi].

    phi is wrapped over the pole: phi = 2pi - phi' flips theta by pi.
    """
    phi = phi % TWO_PI
    if phi > math.pi:
        phi = TWO_PI - phi
        theta = theta + math.pi
    return theta % TWO_PI, phi


@dataclass(frozen=True, slots=True)
class SphericalRect:
    """Spherical rectangle (theta, phi, alpha, beta), all in radians.

    theta in [0, 2pi), phi in [0, pi], alpha and beta in (0, pi].
    Construction rejects out-of-range values; callers that hold raw angles
    wrap them first (see wrap_angles).
    """

    theta: float
    phi: float
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("theta", "phi", "alpha", "beta"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValueError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, float(v))
        if not 0.0 <= self.theta < TWO_PI:
            raise ValueError(f"theta must be in [0, 2pi), got {self.theta}")
        if not 0.0 <= self.phi <= math.pi:
            raise ValueError(f"phi must be in [0, pi], got {self.phi}")
        if not 0.0 < self.alpha <= math.pi:
            raise ValueError(f"alpha must be in (0, pi], got {self.alpha}")
        if not 0.0 < self.beta <= math.pi:
            raise ValueError(f"beta must be in (0, pi], got {self.beta}")

    @classmethod
    def from_degrees(cls, theta: float, phi: float, alpha: float, beta: float) -> "SphericalRect":
        r = math.radians
        return cls(r(theta), r(phi), r(alpha), r(beta))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.theta, self.phi, self.alpha, self.beta)

    def center_vec(self) -> UnitVec3:
        return sph_to_vec(self.theta, self.phi)

    def area(self) -> float:
        return rect_area(self)


def sph_to_vec(theta: float, phi: float) -> UnitVec3:
    """Unit vector for (theta, phi); out-of-range angles are wrapped."""
    theta, phi = wrap_angles(theta, phi)
    sp = math.sin(phi)
    return UnitVec3(sp * math.cos(theta), sp * math.sin(theta), math.cos(phi))


def vec_to_sph(v: Sequence[float]) -> tuple[float, float]:
    """Inverse of sph_to_vec for unit vectors. theta of a pole is 0."""
    theta = math.atan2(v[1], v[0]) % TWO_PI
    phi = math.acos(_clamp(v[2]))
    if phi == 0.0 or phi == math.pi:
        theta = 0.0
    return theta, phi


def local_frame(theta: float, phi: float) -> Frame:
    """Look/right/up frame at (theta, phi).

    v_look is the outward radial direction, v_right points toward
    increasing theta, v_up completes the right-handed triplet
    (v_look x v_right == v_up).
    """
    theta, phi = wrap_angles(theta, phi)
    st, ct = math.sin(theta), math.cos(theta)
    sp, cp = math.sin(phi), math.cos(phi)
    v_look = UnitVec3(sp * ct, sp * st, cp)
    v_right = UnitVec3(-st, ct, 0.0)
    v_up = UnitVec3(-cp * ct, -cp * st, sp)
    return Frame(v_look, v_right, v_up)


def boundary_normals(rect: SphericalRect) -> BoundaryPlanes:
    """Inward unit normals (left, top, right, bottom) of the frustum planes.

    dot(center, n_left) == sin(alpha/2) and dot(center, n_top) ==
    sin(beta/2), so the center is strictly inside for positive fovs.
    """
    look, right, up = local_frame(rect.theta, rect.phi)
    sa, ca = math.sin(0.5 * rect.alpha), math.cos(0.5 * rect.alpha)
    sb, cb = math.sin(0.5 * rect.beta), math.cos(0.5 * rect.beta)
    n_left = UnitVec3(sa * look.x - ca * right.x, sa * look.y - ca * right.y, sa * look.z - ca * right.z)
    n_right = UnitVec3(sa * look.x + ca * right.x, sa * look.y + ca * right.y, sa * look.z + ca * right.z)
    n_top = UnitVec3(sb * look.x - cb * up.x, sb * look.y - cb * up.y, sb * look.z - cb * up.z)
    n_bottom = UnitVec3(sb * look.x + cb * up.x, sb * look.y + cb * up.y, sb * look.z + cb * up.z)
    return BoundaryPlanes(n_left, n_top, n_right, n_bottom)


def rect_area(rect: SphericalRect) -> float:
    """Exact solid angle of the rectangle in steradians.

    All four interior angles equal arccos(-sin(alpha/2)*sin(beta/2)); the
    spherical excess of the quadrilateral gives the area directly.
    """
    return 4.0 * math.acos(_clamp(-math.sin(0.5 * rect.alpha) * math.sin(0.5 * rect.beta))) - TWO_PI


def rect_vertices(rect: SphericalRect) -> tuple[UnitVec3, UnitVec3, UnitVec3, UnitVec3]:
    """Corner unit vectors in counterclockwise boundary order.

    Order is (top-left, top-right, bottom-right, bottom-left): each corner
    is the normalized cross product of its two adjacent plane normals,
    sign-fixed to lie inside the remaining two half-spaces. Raises
    DegenerateRectError when adjacent normals are parallel, which happens
    only at alpha == beta == pi (all four planes coincide).
    """
    n = boundary_normals(rect)
    # corner k sits on planes pairs[k]; pairs are adjacent in boundary order
    pairs = ((n.n_left, n.n_top), (n.n_top, n.n_right), (n.n_right, n.n_bottom), (n.n_bottom, n.n_left))
    others = ((n.n_right, n.n_bottom), (n.n_left, n.n_bottom), (n.n_left, n.n_top), (n.n_right, n.n_top))
    out = []
    for (na, nb), (oa, ob) in zip(pairs, others):
        c = _cross(na, nb)
        ln = _norm(c)
        if ln < PARALLEL_EPS:
            raise DegenerateRectError("adjacent boundary planes are parallel (alpha == beta == pi)")
        v = (c[0] / ln, c[1] / ln, c[2] / ln)
        if _dot(v, oa) < 0.0 and _dot(v, ob) < 0.0:
            v = (-v[0], -v[1], -v[2])
        out.append(UnitVec3(*v))
    return tuple(out)


def contains_point(rect: SphericalRect, point: Sequence[float], eps: float = CONTAINMENT_EPS) -> bool:
    """Closed containment test: boundary points count as inside."""
    return _contains(boundary_normals(rect), point, eps)


def _contains(planes, point, eps: float = CONTAINMENT_EPS) -> bool:
    for n in planes:
        if point[0] * n[0] + point[1] * n[1] + point[2] * n[2] < -eps:
            return False
    return True


def normals_matrix(rect: SphericalRect) -> np.ndarray:
    """Boundary normals as a 4x3 float64 array (left, top, right, bottom)."""
    return np.array(boundary_normals(rect), dtype=np.float64)


def contains_points(rect: SphericalRect, points: np.ndarray, eps: float = CONTAINMENT_EPS) -> np.ndarray:
    """Vectorized closed containment for an (n, 3) array of unit vectors."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must be (n, 3), got {pts.shape}")
    d = pts @ normals_matrix(rect).T
    return (d >= -eps).all(axis=1)


class EdgeCrossing(NamedTuple):
    """A boundary crossing point with the edge indices that produced it.

    Edge indices follow BoundaryPlanes order: 0 left, 1 top, 2 right,
    3 bottom.
    """

    point: UnitVec3
    edge1: int
    edge2: int


def edge_intersections(b1: SphericalRect, b2: SphericalRect) -> list[EdgeCrossing]:
    """Great-circle crossing points of the two boundaries inside both rects.

    Each of the 4x4 plane pairs yields up to two antipodal candidates;
    a candidate survives only if it lies inside both rectangles (closed
    test), which also places it on both edge arcs. Parallel plane pairs
    are skipped.
    """
    return _edge_intersections(boundary_normals(b1), boundary_normals(b2))


def _edge_intersections(n1, n2) -> list[EdgeCrossing]:
    out = []
    for i in range(4):
        na = n1[i]
        for j in range(4):
            nb = n2[j]
            c = _cross(na, nb)
            ln = _norm(c)
            if ln < PARALLEL_EPS:
                continue
            p = (c[0] / ln, c[1] / ln, c[2] / ln)
            if _contains(n1, p) and _contains(n2, p):
                out.append(EdgeCrossing(UnitVec3(*p), i, j))
            q = (-p[0], -p[1], -p[2])
            if _contains(n1, q) and _contains(n2, q):
                out.append(EdgeCrossing(UnitVec3(*q), i, j))
    return out


@dataclass(frozen=True)
class SphericalPolygon:
    """Convex spherical polygon with inward edge-plane normals.

    edge_planes[i] supports the great-circle arc from vertices[i] to
    vertices[(i+1) % n]. Every vertex must lie on its two adjacent planes
    (|dot| < 1e-9); violations raise MalformedPolygonError.
    """

    vertices: tuple[UnitVec3, ...]
    edge_planes: tuple[UnitVec3, ...]

    def __post_init__(self):
        n = len(self.vertices)
        if n < 3:
            raise MalformedPolygonError(f"polygon needs >= 3 vertices, got {n}")
        if len(self.edge_planes) != n:
            raise MalformedPolygonError("one edge plane per vertex required")
        for i, v in enumerate(self.vertices):
            for plane in (self.edge_planes[i - 1], self.edge_planes[i]):
                if abs(_dot(v, plane)) >= 1e-9:
                    raise MalformedPolygonError(f"vertex {i} is off an adjacent edge plane")

    def __len__(self) -> int:
        return len(self.vertices)


def polygon_excess_area(poly: SphericalPolygon) -> float:
    """Area of a convex spherical polygon from its interior-angle excess.

    The interior angle at vertex i is pi - arccos(dot(n_in, n_out)) for
    the inward normals of the two edges meeting there; the area is the
    angle sum minus (n - 2)*pi. Exact for great-circle-bounded convex
    regions.
    """
    n = len(poly.vertices)
    total = 0.0
    for i in range(n):
        d = _dot(poly.edge_planes[i - 1], poly.edge_planes[i])
        total += math.pi - math.acos(_clamp(d))
    return total - (n - 2) * math.pi


@dataclass(frozen=True)
class IntersectionDetails:
    """Diagnostics for one intersection-area computation.

    branch is one of 'identical', 'disjoint', 'contained', 'polygon',
    'degenerate'. polygon is set only for the 'polygon' branch.
    tangential marks contact that collapsed to fewer than 3 points.
    """

    area: float
    branch: str
    polygon: SphericalPolygon | None = None
    tangential: bool = False


def intersection_details(b1: SphericalRect, b2: SphericalRect) -> IntersectionDetails:
    """Intersection area of two rectangles, with branch diagnostics.

    Follows the convex-overlap assembly: collect boundary crossing points
    plus each rectangle's corners that lie in the other, merge duplicates
    (several boundaries through one point contribute one vertex with the
    union of their planes), order counterclockwise around the spherical
    centroid, assign each consecutive pair its shared supporting plane,
    and take the spherical excess of the resulting polygon.
    """
    if b1.as_tuple() == b2.as_tuple():
        return IntersectionDetails(rect_area(b1), "identical")
    # canonical argument order: makes iou(a, b) bitwise equal to iou(b, a)
    if b2.as_tuple() < b1.as_tuple():
        b1, b2 = b2, b1

    n1 = boundary_normals(b1)
    n2 = boundary_normals(b2)
    v1 = rect_vertices(b1)
    v2 = rect_vertices(b2)
    crossings = _edge_intersections(n1, n2)
    v1_in = [_contains(n2, v) for v in v1]
    v2_in = [_contains(n1, v) for v in v2]

    if not crossings:
        if not any(v1_in) and not any(v2_in):
            return IntersectionDetails(0.0, "disjoint")
        if all(v1_in) or all(v2_in):
            return IntersectionDetails(min(rect_area(b1), rect_area(b2)), "contained")

    # general case: candidate points with the set of planes through each.
    # plane ids: 0..3 = b1 (left, top, right, bottom), 4..7 = b2.
    planes = list(n1) + list(n2)
    corner_planes = ((0, 1), (1, 2), (2, 3), (3, 0))
    cands: list[tuple[UnitVec3, set[int]]] = []
    for c in crossings:
        cands.append((c.point, {c.edge1, 4 + c.edge2}))
    for k in range(4):
        if v1_in[k]:
            cands.append((v1[k], set(corner_planes[k])))
        if v2_in[k]:
            cands.append((v2[k], {p + 4 for p in corner_planes[k]}))

    merged: list[list] = []  # [point, plane-id set]
    for p, prov in cands:
        for q in merged:
            d = (p.x - q[0].x, p.y - q[0].y, p.z - q[0].z)
            if _norm(d) < DEDUP_EPS:
                q[1] |= prov
                break
        else:
            merged.append([p, set(prov)])

    if len(merged) < 3:
        return IntersectionDetails(0.0, "degenerate", tangential=len(merged) > 0)

    # counterclockwise order around the spherical centroid (valid because
    # the overlap of two convex spherical regions is convex)
    sx = sum(p.x for p, _ in merged)
    sy = sum(p.y for p, _ in merged)
    sz = sum(p.z for p, _ in merged)
    try:
        m = unit_vec(sx, sy, sz)
    except ValueError:
        return IntersectionDetails(0.0, "degenerate", tangential=True)
    ax = (1.0, 0.0, 0.0) if abs(m.x) <= 0.9 else (0.0, 1.0, 0.0)
    e1 = unit_vec(*_cross(m, ax))
    e2 = _cross(m, e1)  # e1 x e2 == m: ascending atan2 is CCW seen from outside
    merged.sort(key=lambda item: math.atan2(_dot(item[0], e2), _dot(item[0], e1)))

    verts = []
    edge_planes = []
    npts = len(merged)
    for i in range(npts):
        p, prov = merged[i]
        q, qprov = merged[(i + 1) % npts]
        shared = prov & qprov
        if shared:
            pid = min(shared)
        else:
            # numerical fallback: pick the boundary plane both points sit on
            best, best_err = None, 1e-7
            for pid_c in range(8):
                err = max(abs(_dot(p, planes[pid_c])), abs(_dot(q, planes[pid_c])))
                if err < best_err:
                    best, best_err = pid_c, err
            if best is None:
                raise NumericallyDegenerateError("no supporting plane for polygon edge")
            pid = best
        verts.append(p)
        edge_planes.append(UnitVec3(*planes[pid]))

    poly = SphericalPolygon(tuple(verts), tuple(edge_planes))
    area = polygon_excess_area(poly)
    # spherical-excess roundoff can leave a hair outside the legal range
    area = max(0.0, min(area, rect_area(b1), rect_area(b2)))
    return IntersectionDetails(area, "polygon", polygon=poly)


def intersection_area(b1: SphericalRect, b2: SphericalRect) -> float:
    """Exact area of the overlap of two spherical rectangles."""
    return intersection_details(b1, b2).area


def iou(b1: SphericalRect, b2: SphericalRect) -> float:
    """Unbiased spherical IoU: overlap area over union area.

    Symmetric (bitwise), 1.0 exactly for identical rectangles, 0.0 for
    disjoint ones.
    """
    if b1.as_tuple() == b2.as_tuple():
        return 1.0
    inter = intersection_area(b1, b2)
    union = rect_area(b1) + rect_area(b2) - inter
    if union <= 0.0:
        return 0.0
    return _clamp(inter / union, 0.0, 1.0)


def iou_matrix(boxes1: Sequence[SphericalRect], boxes2: Sequence[SphericalRect]) -> np.ndarray:
    """Pairwise IoU matrix, entry [i, j] bitwise-identical to iou(a[i], b[j])."""
    if len(boxes1) == 0 or len(boxes2) == 0:
        raise ValueError("iou_matrix requires non-empty inputs")
    out = np.empty((len(boxes1), len(boxes2)), dtype=np.float64)
    for i, a in enumerate(boxes1):
        for j, b in enumerate(boxes2):
            out[i, j] = iou(a, b)
    return out
