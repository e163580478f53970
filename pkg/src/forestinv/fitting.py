"""Circle and cylinder fitting for trunk cross-sections and stem segments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCluster, DegenerateGeometry

BREAST_HEIGHT_M = 1.3
_COLLINEAR_TOL = 1e-9
_RESELECT_ROUNDS = 5


@dataclass(frozen=True)
class CircleFit:
    center: tuple[float, float]
    radius: float
    rms_residual: float
    inlier_count: int

    @property
    def dbh_cm(self) -> float:
        return 200.0 * self.radius


@dataclass(frozen=True)
class CylinderFit:
    axis_point: tuple[float, float, float]
    axis_direction: tuple[float, float, float]
    radius: float
    rms_residual: float
    iterations: int = 0

    @property
    def dbh_cm(self) -> float:
        return 200.0 * self.radius

    def point_at_height(self, z: float) -> np.ndarray:
        """Point on the axis at the given z (the axis must not be horizontal)."""
        p = np.asarray(self.axis_point)
        d = np.asarray(self.axis_direction)
        return p + (z - p[2]) / d[2] * d


def _check_not_collinear(xy: np.ndarray) -> None:
    if len(xy) < 3:
        raise DegenerateCluster(f"need at least 3 points, got {len(xy)}")
    centered = xy - xy.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] == 0 or s[-1] <= _COLLINEAR_TOL * s[0]:
        raise DegenerateCluster("points are collinear; no circle is determined")


def kasa_circle(xy: np.ndarray) -> tuple[np.ndarray, float]:
    """Algebraic circle fit: solve x² + y² + D x + E y + F = 0 in least squares."""
    mean = xy.mean(axis=0)
    p = xy - mean
    a = np.column_stack([p, np.ones(len(p))])
    b = -(p ** 2).sum(axis=1)
    (d, e, f), *_ = np.linalg.lstsq(a, b, rcond=None)
    center = np.array([-d / 2, -e / 2])
    r2 = center @ center - f
    if not np.isfinite(r2) or r2 <= 0:
        raise DegenerateCluster("algebraic circle fit failed")
    return center + mean, float(np.sqrt(r2))


def circle_objective(xy: np.ndarray, center, radius: float) -> float:
    """Sum of squared geometric distances to the circle."""
    d = np.hypot(xy[:, 0] - center[0], xy[:, 1] - center[1]) - radius
    return float(d @ d)


def _gauss_newton_circle(xy, center, radius, max_iter=50, tol=1e-10):
    # Work relative to the centroid to keep the normal equations well scaled.
    mean = xy.mean(axis=0)
    p = xy - mean
    c = np.asarray(center, dtype=np.float64) - mean
    r = float(radius)
    for _ in range(max_iter):
        dx = p[:, 0] - c[0]
        dy = p[:, 1] - c[1]
        dist = np.hypot(dx, dy)
        if np.any(dist == 0):
            break
        res = dist - r
        jac = np.column_stack([-dx / dist, -dy / dist, -np.ones(len(p))])
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        c = c + step[:2]
        r = r + step[2]
        if np.linalg.norm(step) < tol:
            break
    return c + mean, abs(r)


def least_squares_circle(xy: np.ndarray) -> CircleFit:
    """Kåsa initialization refined by Gauss-Newton on geometric distances."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    _check_not_collinear(xy)
    center, radius = kasa_circle(xy)
    center, radius = _gauss_newton_circle(xy, center, radius)
    return _circle_fit(xy, center, radius)


def _circle_fit(xy, center, radius) -> CircleFit:
    if not (np.all(np.isfinite(center)) and np.isfinite(radius) and radius > 0):
        raise DegenerateCluster("circle fit diverged")
    rms = np.sqrt(circle_objective(xy, center, radius) / len(xy))
    return CircleFit((float(center[0]), float(center[1])), float(radius), float(rms), len(xy))


@dataclass(frozen=True)
class HoughResult:
    """Raw accumulator peak together with the refined fit."""

    peak_center: tuple[float, float]
    peak_radius: float
    votes: int
    fit: CircleFit


def hough_circle(
    xy: np.ndarray,
    radius_range: tuple[float, float] = (0.025, 1.0),
    steps: tuple[float, float] = (0.02, 0.01),
    min_points: int = 3,
) -> HoughResult:
    """Vote for circles in a (cx, cy, r) accumulator and refine the peak.

    Candidate centers cover the points' bounding box dilated by ``r_max`` on a
    ``center_step`` lattice, radii cover ``radius_range`` in ``radius_step``
    bins. Each point votes once per candidate center, into the radius bin of its
    distance. The peak (ties: lowest flat accumulator index) is refined by a
    least-squares fit on the points within ``2 * radius_step`` of it; the band
    is then re-centred on the refined circle for a few rounds. The refined
    circle never has a larger objective than the raw peak on the original
    inlier set.
    """
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    r_min, r_max = radius_range
    center_step, radius_step = steps
    if not r_min < r_max:
        raise ValueError("radius_range must satisfy r_min < r_max")
    if len(xy) < max(3, min_points):
        raise DegenerateCluster(f"need at least {max(3, min_points)} points, got {len(xy)}")
    _check_not_collinear(xy)

    lo = xy.min(axis=0) - r_max
    hi = xy.max(axis=0) + r_max
    nx = int(np.floor((hi[0] - lo[0]) / center_step)) + 1
    ny = int(np.floor((hi[1] - lo[1]) / center_step)) + 1
    nr = int(np.floor((r_max - r_min) / radius_step)) + 1
    cx = lo[0] + center_step * np.arange(nx)
    cy = lo[1] + center_step * np.arange(ny)

    acc = np.zeros(nx * ny * nr, dtype=np.int64)
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    gx = gx.reshape(-1)
    gy = gy.reshape(-1)
    center_ids = np.arange(nx * ny) * nr
    chunk = max(1, 2_000_000 // max(1, nx * ny))
    for start in range(0, len(xy), chunk):
        part = xy[start:start + chunk]
        d = np.hypot(part[:, 0:1] - gx[None, :], part[:, 1:2] - gy[None, :])
        rbin = np.rint((d - r_min) / radius_step).astype(np.int64)
        ok = (rbin >= 0) & (rbin < nr)
        flat = (center_ids[None, :] + rbin)[ok]
        acc += np.bincount(flat, minlength=acc.size)

    peak = int(np.argmax(acc))
    ci, ri = divmod(peak, nr)
    ix, iy = divmod(ci, ny)
    peak_center = np.array([cx[ix], cy[iy]])
    peak_radius = r_min + ri * radius_step

    band = 2 * radius_step
    inliers = _near_circle(xy, peak_center, peak_radius, band)
    if len(inliers) < 3:
        raise DegenerateCluster("too few inliers around the Hough peak")
    peak_obj = circle_objective(inliers, peak_center, peak_radius)
    center, radius = _refine(inliers, peak_center, peak_radius, peak_obj)
    first = inliers
    # Re-centre the inlier band on the refined circle; the band around the
    # coarse peak trims noisy points unevenly and biases the radius.
    for _ in range(_RESELECT_ROUNDS):
        again = _near_circle(xy, center, radius, band)
        if len(again) < 3 or np.array_equal(again, inliers):
            break
        try:
            _check_not_collinear(again)
            c2, r2 = _gauss_newton_circle(again, center, radius)
        except DegenerateCluster:
            break
        if circle_objective(first, c2, r2) > peak_obj:
            break
        inliers, center, radius = again, c2, r2
    fit = _circle_fit(inliers, center, radius)
    return HoughResult(
        (float(peak_center[0]), float(peak_center[1])),
        float(peak_radius),
        int(acc[peak]),
        fit,
    )


def _near_circle(xy, center, radius, band):
    dist = np.hypot(xy[:, 0] - center[0], xy[:, 1] - center[1])
    return xy[np.abs(dist - radius) <= band]


def _refine(inliers, peak_center, peak_radius, peak_obj):
    """Least-squares circle on the inliers, never worse than the peak itself."""
    try:
        _check_not_collinear(inliers)
        center, radius = kasa_circle(inliers)
        center, radius = _gauss_newton_circle(inliers, center, radius)
        if circle_objective(inliers, center, radius) <= peak_obj:
            return center, radius
    except DegenerateCluster:
        pass
    # Algebraic start ended in a worse basin; start from the peak instead.
    center, radius = _gauss_newton_circle(inliers, peak_center, peak_radius)
    if circle_objective(inliers, center, radius) > peak_obj:
        return np.asarray(peak_center, dtype=np.float64), float(peak_radius)
    return center, radius


def arc_coverage_deg(xy: np.ndarray, center) -> float:
    """Angular extent (degrees) of points around a center: 360 minus the largest gap."""
    if len(xy) == 0:
        return 0.0
    ang = np.sort(np.arctan2(xy[:, 1] - center[1], xy[:, 0] - center[0]))
    gaps = np.diff(np.r_[ang, ang[0] + 2 * np.pi])
    return float(np.degrees(2 * np.pi - gaps.max()))


def fit_cylinder(
    xyz: np.ndarray,
    min_extent: float = 0.5,
    max_iter: int = 100,
    tol: float = 1e-12,
) -> CylinderFit:
    """Gauss-Newton cylinder fit minimizing point-to-surface distances.

    The axis starts vertical through the least-squares circle of the xy
    projection. Every iteration expresses the points in a frame whose z axis is
    the current axis direction, solves for a 5-parameter update (axis offset
    dx, dy, tilt a, b, radius) and maps it back, so the direction is
    renormalized at each step. Steps that increase the objective are halved.
    """
    pts = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 10:
        raise DegenerateGeometry(f"need at least 10 points, got {len(pts)}")
    if np.ptp(pts[:, 2]) < min_extent:
        raise DegenerateGeometry(f"vertical extent below {min_extent} m")
    try:
        init = least_squares_circle(pts[:, :2])
    except DegenerateCluster as exc:
        raise DegenerateGeometry(str(exc)) from exc

    centroid = pts.mean(axis=0)
    point = np.array([init.center[0], init.center[1], centroid[2]])
    direction = np.array([0.0, 0.0, 1.0])
    radius = init.radius

    def residuals(point, direction, radius):
        w = pts - point
        e = w - np.outer(w @ direction, direction)
        return np.linalg.norm(e, axis=1) - radius

    cost = float(np.sum(residuals(point, direction, radius) ** 2))
    it = 0
    for it in range(1, max_iter + 1):
        basis = _frame(direction)  # rows: u, v, d
        local = (pts - point) @ basis.T
        rho = np.hypot(local[:, 0], local[:, 1])
        if np.any(rho == 0):
            raise DegenerateGeometry("point lies on the axis")
        # Axis through (dx, dy, 0) with direction (a, b, 1)/|.|; derivatives at 0.
        ex, ey, z = local[:, 0], local[:, 1], local[:, 2]
        jac = np.column_stack([-ex / rho, -ey / rho, -z * ex / rho, -z * ey / rho,
                               -np.ones(len(pts))])
        res = rho - radius
        sv = np.linalg.svd(jac, compute_uv=False)
        if sv[-1] <= 1e-12 * sv[0]:
            raise DegenerateGeometry("rank-deficient normal equations")
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        scale = 1.0
        while True:
            dx, dy, a, b, dr = scale * step
            new_point = point + dx * basis[0] + dy * basis[1]
            new_dir = basis[2] + a * basis[0] + b * basis[1]
            new_dir /= np.linalg.norm(new_dir)
            new_radius = radius + dr
            new_cost = float(np.sum(residuals(new_point, new_dir, new_radius) ** 2))
            if new_cost <= cost or scale < 1e-6:
                break
            scale *= 0.5
        moved = scale * np.linalg.norm(step)
        if new_cost > cost:
            break
        point, direction, radius, cost = new_point, new_dir, new_radius, new_cost
        # Keep the reference point near the data: slide it along the axis.
        point = point + ((centroid - point) @ direction) * direction
        if moved < tol:
            break

    if direction[2] < 0:
        direction = -direction
    if not (np.isfinite(radius) and radius > 0):
        raise DegenerateGeometry("cylinder fit diverged")
    rms = float(np.sqrt(cost / len(pts)))
    return CylinderFit(tuple(float(v) for v in point), tuple(float(v) for v in direction),
                       float(radius), rms, it)


def _frame(d: np.ndarray) -> np.ndarray:
    """Orthonormal rows (u, v, d) with d the given unit vector."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = helper - (helper @ d) * d
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    return np.vstack([u, v, d])
