"""Trunk detection and DBH estimation on payload clouds."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, SemanticLabel
from .clustering import dbscan, non_maxima_suppression
from .config import PipelineConfig
from .errors import DegenerateCluster, DegenerateGeometry
from .fitting import (
    BREAST_HEIGHT_M,
    CircleFit,
    CylinderFit,
    arc_coverage_deg,
    fit_cylinder,
    hough_circle,
)
from .payload import PayloadCloud
from .terrain import DigitalTerrainModel, build_dtm, cloth_filter, normalize_heights

log = logging.getLogger(__name__)

RADIUS_LIMITS_M = (0.025, 1.0)


@dataclass(frozen=True)
class TreeDetection:
    position: tuple[float, float]
    dbh: float  # centimeters
    fit: CircleFit
    payload_id: int
    support: int


@dataclass
class DetectionResult:
    detections: list[TreeDetection]
    dtm: DigitalTerrainModel | None
    ground_mask: np.ndarray
    rejected: int = 0


def slice_breast_height(normalized: PointCloud, band: tuple[float, float] = (1.25, 1.35)) -> PointCloud:
    """Points with ``low <= z <= high``; ``source_index`` keeps the original indices."""
    low, high = band
    if not low < high:
        raise ValueError("band must satisfy low < high")
    z = normalized.xyz[:, 2]
    return normalized.subset((z >= low) & (z <= high))


def _accept(fit: CircleFit, xy: np.ndarray, config: PipelineConfig) -> bool:
    lo, hi = RADIUS_LIMITS_M
    if not (lo < fit.radius < hi):
        return False
    if fit.rms_residual > config.fit_residual_max_m:
        return False
    if fit.inlier_count < config.hough_min_trunk_points:
        return False
    # Sub-90 degree arcs make the radius ill-conditioned.
    return arc_coverage_deg(xy, fit.center) >= config.hough_min_arc_deg


def fit_trunk(xy: np.ndarray, config: PipelineConfig) -> CircleFit | None:
    """Hough circle on one cluster; None when degenerate or rejected."""
    if len(xy) < config.hough_min_trunk_points:
        return None
    try:
        result = hough_circle(
            xy,
            radius_range=(config.hough_r_min_m, config.hough_r_max_m),
            steps=(config.hough_center_step_m, config.hough_radius_step_m),
            min_points=config.hough_min_trunk_points,
        )
    except DegenerateCluster:
        return None
    fit = result.fit
    c = np.asarray(fit.center)
    inliers = xy[np.abs(np.hypot(*(xy - c).T) - fit.radius) <= 2 * config.hough_radius_step_m]
    if not _accept(fit, inliers, config):
        return None
    return fit


def detect_trees(
    payload: PayloadCloud | PointCloud,
    config: PipelineConfig = PipelineConfig(),
    payload_id: int | None = None,
) -> DetectionResult:
    """Ground filter, normalize, slice at breast height, cluster and fit trunks."""
    if isinstance(payload, PayloadCloud):
        cloud = payload.cloud
        pid = payload.payload_id if payload_id is None else payload_id
    else:
        cloud = payload
        pid = 0 if payload_id is None else payload_id
    if len(cloud) == 0:
        return DetectionResult([], None, np.zeros(0, dtype=bool))

    cloth = cloth_filter(cloud, config.cloth_params())
    dtm = build_dtm(cloud, cloth.ground_mask, config.dtm_resolution_m, config.dtm_fill_radius_m)
    normalized, _ = normalize_heights(cloud.subset(~cloth.ground_mask), dtm)
    band = slice_breast_height(normalized, (config.slice_low_m, config.slice_high_m))
    xy = band.xyz[:, :2]
    clusters = dbscan(xy, config.dbscan_eps_m, config.dbscan_min_pts).clusters

    fits = []
    rejected = 0
    for cluster in clusters:
        fit = fit_trunk(xy[cluster.point_indices], config)
        if fit is None:
            rejected += 1
        else:
            fits.append(fit)
    fits.sort(key=lambda f: (f.center[0], f.center[1]))
    kept = non_maxima_suppression(fits, config.nms_radius_m)
    detections = [
        TreeDetection(fit.center, fit.dbh_cm, fit, pid, fit.inlier_count)
        for fit in sorted(kept, key=lambda f: (f.center[0], f.center[1]))
    ]
    log.info("payload %d: %d clusters, %d trunks, %d rejected", pid, len(clusters),
             len(detections), rejected)
    return DetectionResult(detections, dtm, cloth.ground_mask, rejected)


@dataclass(frozen=True)
class StemEstimate:
    instance: int
    position: tuple[float, float]
    dbh: float  # centimeters
    fit: CylinderFit


def stem_segment_dbh(
    normalized: PointCloud,
    height_range: tuple[float, float] = (0.5, 3.0),
) -> list[StemEstimate]:
    """Cylinder fit per stem instance of a labeled, height-normalized cloud.

    Uses the points labeled Stem within ``height_range`` above ground. The
    position is where the axis crosses breast height; DBH is twice the radius.
    Instances whose geometry cannot be fitted are skipped.
    """
    if normalized.semantic is None or normalized.instance is None:
        raise ValueError("stem segment fitting needs semantic and instance labels")
    z = normalized.xyz[:, 2]
    sel = (
        (normalized.semantic == SemanticLabel.STEM)
        & (normalized.instance != 0)
        & (z >= height_range[0])
        & (z <= height_range[1])
    )
    out = []
    ids = normalized.instance[sel]
    pts = normalized.xyz[sel]
    for inst in np.unique(ids):
        try:
            fit = fit_cylinder(pts[ids == inst])
        except DegenerateGeometry:
            continue
        lo, hi = RADIUS_LIMITS_M
        if not (lo < fit.radius < hi):
            continue
        at_bh = fit.point_at_height(BREAST_HEIGHT_M)
        out.append(StemEstimate(int(inst), (float(at_bh[0]), float(at_bh[1])), fit.dbh_cm, fit))
    return out
