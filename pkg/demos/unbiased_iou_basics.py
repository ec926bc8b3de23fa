"""
Spherical rectangles and the unbiased IoU
=========================================

A spherical rectangle is the patch of the unit sphere cut out by a
viewing frustum: center direction (theta, phi) and angular extents
(alpha, beta). Its exact area has a closed form, and the intersection
of two such patches is a convex spherical polygon whose area follows
from the interior-angle excess. Together they give an IoU with no
projection bias anywhere on the sphere.
"""

import math

from sphdet import SphericalRect, iou, rect_area, rect_vertices

# a quarter-pi box sitting on the equator
eq = SphericalRect(theta=0.0, phi=math.pi / 2, alpha=math.pi / 2, beta=math.pi / 2)
print("equator box area:", rect_area(eq))
print("closed form 2*pi/3:", 2 * math.pi / 3)

# the whole-hemisphere-ish limit: alpha = beta = pi covers half the sphere
cap = SphericalRect(0.0, math.pi / 2, math.pi, math.pi)
print("alpha = beta = pi area:", rect_area(cap), "(half of 4*pi)")

# the corners are unit vectors; four great-circle arcs bound the patch
for corner in rect_vertices(eq):
    print("corner:", tuple(round(c, 6) for c in corner))

# IoU is exact for any placement. Slide a partner box along theta and
# watch the overlap fall off smoothly.
print("\noffset   IoU")
for k in range(6):
    other = SphericalRect(0.15 * k, math.pi / 2, math.pi / 2, math.pi / 2)
    print(f"{0.15 * k:.2f}     {iou(eq, other):.6f}")

# The same two boxes moved toward the pole keep the same IoU profile in
# angle space even though their ERP footprints look completely different.
print("\npolar pair vs equator pair (identical relative geometry):")
eq_pair = iou(
    SphericalRect(0.0, math.pi / 2, 0.6, 0.6),
    SphericalRect(0.0, math.pi / 2 - 0.2, 0.6, 0.6),
)
# rotate the whole configuration 60 degrees toward the pole: relative
# geometry is unchanged, so the unbiased IoU is too
polar_pair = iou(
    SphericalRect(0.0, math.pi / 2 - 1.0, 0.6, 0.6),
    SphericalRect(0.0, math.pi / 2 - 1.2, 0.6, 0.6),
)
print("equator:", round(eq_pair, 12))
print("polar:  ", round(polar_pair, 12))
