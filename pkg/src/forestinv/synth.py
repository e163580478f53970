"""Synthetic forest plots with exact ground truth.

The ground is ``h(x, y) = A * sin(2*pi*x / L) * cos(2*pi*y / L)``. Trunks are
vertical cylinders sampled on their surface, shrubs are scattered points below
breast height and crowns are ellipsoid shells above the trunks. Every point is
labeled and every tree point carries its instance id and the offset to its
tree center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud, SemanticLabel
from .errors import PlacementFailure

MAX_PLACEMENT_TRIES = 10_000


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_trees: int = 50
    area: tuple[float, float] = (100.0, 100.0)
    dbh_range: tuple[float, float] = (10.0, 80.0)  # cm
    min_spacing: float = 2.0
    ground_amplitude: float = 0.5
    ground_wavelength: float = 20.0 * math.pi
    trunk_noise_sigma: float = 0.01
    points_per_tree: int = 6000
    shrub_density: float = 0.5  # points per m²
    canopy: bool = True
    ground_density: float = 50.0  # points per m²
    trunk_height: float = 5.0
    canopy_points: int = 1500
    occluded_fraction: float = 0.0
    occluded_arc_deg: float = 60.0

    def __post_init__(self) -> None:
        lo, hi = self.dbh_range
        if not (5.0 < lo <= hi < 200.0):
            raise ValueError("dbh_range must lie within (5, 200) cm")
        if not self.min_spacing > 2 * hi / 200.0:
            raise ValueError("min_spacing must exceed twice the largest trunk radius")
        if self.n_trees < 0 or self.points_per_tree < 0:
            raise ValueError("counts must be non-negative")
        if not (0.0 <= self.occluded_fraction <= 1.0):
            raise ValueError("occluded_fraction must be in [0, 1]")

    def ground_height(self, x, y):
        k = 2.0 * np.pi / self.ground_wavelength
        return self.ground_amplitude * np.sin(k * np.asarray(x)) * np.cos(k * np.asarray(y))


@dataclass
class SynthTruth:
    """Ground truth matching the generated cloud point-for-point.

    ``trees`` columns: id, x, y, dbh_cm. ``offsets`` is the per-point vector
    to the tree center (zero for non-tree points). ``height`` is each point's
    exact height above the ground surface.
    """

    trees: np.ndarray
    semantic: np.ndarray
    instance: np.ndarray
    offsets: np.ndarray
    height: np.ndarray
    occluded: np.ndarray
    config: SynthConfig = field(repr=False)

    @property
    def ground_mask(self) -> np.ndarray:
        return self.semantic == SemanticLabel.GROUND

    def tree_table(self) -> list[tuple[int, float, float, float]]:
        return [(int(i), float(x), float(y), float(d)) for i, x, y, d in self.trees]


def place_trees(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample ``(x, y, radius)`` rows honoring ``min_spacing``."""
    w, h = cfg.area
    lo, hi = cfg.dbh_range
    margin = hi / 200.0 + 0.5
    placed: list[tuple[float, float, float]] = []
    tries = 0
    while len(placed) < cfg.n_trees:
        tries += 1
        if tries > MAX_PLACEMENT_TRIES:
            raise PlacementFailure(
                f"placed {len(placed)} of {cfg.n_trees} trees after {MAX_PLACEMENT_TRIES} tries"
            )
        x = rng.uniform(margin, w - margin)
        y = rng.uniform(margin, h - margin)
        if placed:
            arr = np.asarray(placed)
            if np.min(np.hypot(arr[:, 0] - x, arr[:, 1] - y)) < cfg.min_spacing:
                continue
        radius = rng.uniform(lo, hi) / 200.0
        placed.append((x, y, radius))
    return np.asarray(placed, dtype=np.float64).reshape(-1, 3)


def synth_forest(cfg: SynthConfig) -> tuple[PointCloud, SynthTruth]:
    rng = np.random.default_rng(cfg.seed)
    trees = place_trees(cfg, rng)
    n_occluded = int(round(cfg.occluded_fraction * len(trees)))
    occluded = np.zeros(len(trees), dtype=bool)
    if n_occluded:
        occluded[rng.choice(len(trees), size=n_occluded, replace=False)] = True

    w, h = cfg.area
    parts_xyz, parts_sem, parts_inst, parts_off, parts_hgt = [], [], [], [], []

    def add(xy, height, label, inst=0, center=None):
        z = cfg.ground_height(xy[:, 0], xy[:, 1]) + height
        xyz = np.column_stack([xy, z])
        parts_xyz.append(xyz)
        parts_sem.append(np.full(len(xyz), int(label), dtype=np.uint8))
        parts_inst.append(np.full(len(xyz), inst, dtype=np.uint32))
        parts_hgt.append(np.asarray(height, dtype=np.float64) * np.ones(len(xyz)))
        parts_off.append(np.zeros_like(xyz) if center is None else center - xyz)

    # Ground, excluding trunk interiors.
    n_ground = int(rng.poisson(cfg.ground_density * w * h))
    gxy = rng.uniform((0.0, 0.0), (w, h), size=(n_ground, 2))
    if len(trees):
        inside = np.zeros(n_ground, dtype=bool)
        for x, y, r in trees:
            inside |= np.hypot(gxy[:, 0] - x, gxy[:, 1] - y) < r
        gxy = gxy[~inside]
    add(gxy, np.zeros(len(gxy)), SemanticLabel.GROUND)

    n_shrub = int(rng.poisson(cfg.shrub_density * w * h))
    sxy = rng.uniform((0.0, 0.0), (w, h), size=(n_shrub, 2))
    add(sxy, rng.uniform(0.2, 1.0, size=n_shrub), SemanticLabel.SHRUB)

    for k, (x, y, r) in enumerate(trees):
        tree_id = k + 1
        center = np.array([x, y, cfg.ground_height(x, y) + cfg.trunk_height / 2.0])
        n = cfg.points_per_tree
        if occluded[k]:
            arc = np.radians(cfg.occluded_arc_deg)
            n = max(1, int(round(n * cfg.occluded_arc_deg / 360.0)))
            facing = rng.uniform(0, 2 * np.pi)
            theta = facing + rng.uniform(-arc / 2, arc / 2, size=n)
        else:
            theta = rng.uniform(0, 2 * np.pi, size=n)
        rad = r + rng.normal(0.0, cfg.trunk_noise_sigma, size=n)
        txy = np.column_stack([x + rad * np.cos(theta), y + rad * np.sin(theta)])
        add(txy, rng.uniform(0.0, cfg.trunk_height, size=n), SemanticLabel.STEM, tree_id, center)

        if cfg.canopy and cfg.canopy_points:
            m = cfg.canopy_points
            direction = rng.normal(size=(m, 3))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            crown_r = 1.5 + 4.0 * r
            crown_h = 0.4 * cfg.trunk_height
            cxy = np.column_stack([x + crown_r * direction[:, 0], y + crown_r * direction[:, 1]])
            ground_c = cfg.ground_height(x, y)
            absolute = ground_c + cfg.trunk_height + crown_h * direction[:, 2]
            height = absolute - cfg.ground_height(cxy[:, 0], cxy[:, 1])
            add(cxy, height, SemanticLabel.CANOPY, tree_id, center)

    xyz = np.concatenate(parts_xyz)
    semantic = np.concatenate(parts_sem)
    instance = np.concatenate(parts_inst)
    cloud = PointCloud(xyz, semantic=semantic, instance=instance, frame_id="world")
    dbh = trees[:, 2] * 200.0
    table = np.column_stack([np.arange(1, len(trees) + 1), trees[:, 0], trees[:, 1], dbh])
    truth = SynthTruth(
        trees=table.reshape(-1, 4),
        semantic=semantic,
        instance=instance,
        offsets=np.concatenate(parts_off),
        height=np.concatenate(parts_hgt),
        occluded=occluded,
        config=cfg,
    )
    return cloud, truth
