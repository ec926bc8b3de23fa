import math

import numpy as np
import pytest

from sphdet.geometry import SphericalRect


def random_rect(rng, fov_lo=0.05, fov_hi=2.8):
    """Rect with uniform azimuth, area-uniform center, uniform fovs."""
    theta = rng.uniform(0.0, 2.0 * math.pi)
    phi = math.acos(rng.uniform(-1.0, 1.0))
    alpha = rng.uniform(fov_lo, fov_hi)
    beta = rng.uniform(fov_lo, fov_hi)
    return SphericalRect(theta, phi, alpha, beta)


def overlapping_pair(rng, fov_lo=0.2, fov_hi=1.5, max_offset=0.5):
    """Two rects whose centers sit close enough to usually overlap."""
    a = random_rect(rng, fov_lo, fov_hi)
    theta = (a.theta + rng.uniform(-max_offset, max_offset)) % (2.0 * math.pi)
    phi = min(math.pi, max(0.0, a.phi + rng.uniform(-max_offset, max_offset)))
    b = SphericalRect(theta, phi, rng.uniform(fov_lo, fov_hi), rng.uniform(fov_lo, fov_hi))
    return a, b


def sphere_samples(rng, n):
    """Uniform points on the unit sphere: z ~ U[-1, 1], theta ~ U[0, 2pi)."""
    z = rng.uniform(-1.0, 1.0, n)
    th = rng.uniform(0.0, 2.0 * math.pi, n)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack((r * np.cos(th), r * np.sin(th), z))


def frustum_membership(rect, pts, eps=0.0):
    """Oracle containment from the frustum definition, no plane normals.

    A point is inside iff its tangent-plane coordinates along the local
    right/up axes stay within tan(alpha/2) / tan(beta/2) of the center,
    expressed here in the division-free form u*sin(h) >= |coord|*cos(h).
    eps adds closed-boundary slack for testing points that sit exactly on
    a boundary plane.
    """
    st, ct = math.sin(rect.theta), math.cos(rect.theta)
    sp, cp = math.sin(rect.phi), math.cos(rect.phi)
    look = np.array([sp * ct, sp * st, cp])
    right = np.array([-st, ct, 0.0])
    up = np.array([-cp * ct, -cp * st, sp])
    u = pts @ look
    r = pts @ right
    w = pts @ up
    ha, hb = 0.5 * rect.alpha, 0.5 * rect.beta
    in_h = u * math.sin(ha) >= np.abs(r) * math.cos(ha) - eps
    in_v = u * math.sin(hb) >= np.abs(w) * math.cos(hb) - eps
    return in_h & in_v


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


# ---------------------------------------------------------------------------
# acceptance reporting: one pass/fail line per criterion at the end of the run

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def record_acceptance(name: str, outcome: str):
    _ACCEPTANCE_RESULTS[name] = outcome


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    out = yield
    report = out.get_result()
    if report.when != "call" or "test_acceptance" not in str(item.fspath):
        return
    label = getattr(item, "_acceptance_label", None)
    if label is None:
        label = item.name
    if report.passed:
        _ACCEPTANCE_RESULTS.setdefault(label, "PASS")
    elif report.failed:
        _ACCEPTANCE_RESULTS[label] = "FAIL"
    elif report.skipped:
        _ACCEPTANCE_RESULTS[label] = "SKIP"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"[{outcome}] {name}")
