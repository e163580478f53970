"""Ground filtering, terrain rasterization and height normalization."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .cloud import PointCloud
from .errors import EmptyCloud, IoFailure, NoGroundPoints

log = logging.getLogger(__name__)

DEFAULT_DTM_RESOLUTION_M = 0.04
DEFAULT_FILL_RADIUS_M = 0.25
ASC_NODATA = -9999.0


@dataclass(frozen=True)
class ClothParams:
    cell_size: float = 0.5
    rigidness: int = 2
    gravity_step: float = 0.05
    max_iterations: int = 500
    classification_threshold: float = 0.1
    convergence_epsilon: float = 0.001

    def __post_init__(self) -> None:
        if self.rigidness not in (1, 2, 3):
            raise ValueError("rigidness must be 1, 2 or 3")
        for name in ("cell_size", "gravity_step", "max_iterations",
                     "classification_threshold", "convergence_epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class DigitalTerrainModel:
    """Regular height raster. ``heights[row, col]`` with rows along +y.

    Cell ``(row, col)`` spans ``[ox + col*res, ox + (col+1)*res]`` in x (and
    likewise in y). A coordinate lying exactly on a shared edge belongs to the
    lower-index cell. No-data cells hold NaN.
    """

    origin: tuple[float, float]
    resolution: float
    heights: np.ndarray

    @property
    def width(self) -> int:
        return self.heights.shape[1]

    @property
    def height(self) -> int:
        return self.heights.shape[0]

    @property
    def nodata(self) -> np.ndarray:
        return np.isnan(self.heights)

    @classmethod
    def covering(cls, xy: np.ndarray, resolution: float) -> "DigitalTerrainModel":
        """Empty (all no-data) raster whose cells cover the points' xy extent."""
        lo = xy.min(axis=0)
        hi = xy.max(axis=0)
        shape = np.maximum(1, np.ceil((hi - lo) / resolution).astype(np.int64))
        heights = np.full((int(shape[1]), int(shape[0])), np.nan)
        return cls((float(lo[0]), float(lo[1])), float(resolution), heights)

    def cell_of(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row, column and inside-grid flag for each xy."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        fx = (xy[:, 0] - self.origin[0]) / self.resolution
        fy = (xy[:, 1] - self.origin[1]) / self.resolution
        col = np.ceil(fx).astype(np.int64) - 1
        row = np.ceil(fy).astype(np.int64) - 1
        col[fx == 0] = 0
        row[fy == 0] = 0
        inside = (fx >= 0) & (fy >= 0) & (col < self.width) & (row < self.height)
        return row, col, inside

    def height_at(self, xy: np.ndarray) -> np.ndarray:
        """Bilinear interpolation between cell centers; NaN over no-data or outside.

        Neighbouring no-data cells are dropped from the stencil and the
        remaining weights renormalized.
        """
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        out = np.full(len(xy), np.nan)
        if len(xy) == 0:
            return out
        row, col, inside = self.cell_of(xy)
        own = np.full(len(xy), np.nan)
        own[inside] = self.heights[row[inside], col[inside]]
        ok = inside & ~np.isnan(own)
        if not ok.any():
            return out
        p = xy[ok]
        cols = self._stencil((p[:, 0] - self.origin[0]) / self.resolution - 0.5, self.width)
        rows = self._stencil((p[:, 1] - self.origin[1]) / self.resolution - 0.5, self.height)
        num = np.zeros(len(p))
        den = np.zeros(len(p))
        for r_idx, r_w in zip(*rows):
            for c_idx, c_w in zip(*cols):
                h = self.heights[r_idx, c_idx]
                w = r_w * c_w
                valid = ~np.isnan(h) & (w > 0)
                num[valid] += w[valid] * h[valid]
                den[valid] += w[valid]
        res = own[ok].copy()
        has = den > 0
        res[has] = num[has] / den[has]
        out[ok] = res
        return out

    @staticmethod
    def _stencil(f: np.ndarray, n: int):
        if n == 1:
            zero = np.zeros(len(f), dtype=np.int64)
            return (zero, zero), (np.ones(len(f)), np.zeros(len(f)))
        i0 = np.clip(np.floor(f).astype(np.int64), 0, n - 2)
        t = np.clip(f - i0, 0.0, 1.0)
        return (i0, i0 + 1), (1.0 - t, t)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        return xs, ys

    def write_ascii_grid(self, path) -> None:
        """ESRI ASCII grid; first data row is the northernmost (highest y).

        Values are written with 17 significant digits so a read back is exact.
        """
        header = (
            f"ncols {self.width}\n"
            f"nrows {self.height}\n"
            f"xllcorner {self.origin[0]:.17g}\n"
            f"yllcorner {self.origin[1]:.17g}\n"
            f"cellsize {self.resolution:.17g}\n"
            f"NODATA_value {ASC_NODATA:g}\n"
        )
        grid = np.where(np.isnan(self.heights), ASC_NODATA, self.heights)[::-1]
        body = "\n".join(" ".join(f"{v:.17g}" for v in row) for row in grid)
        try:
            Path(path).write_text(header + body + "\n")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    @classmethod
    def read_ascii_grid(cls, path) -> "DigitalTerrainModel":
        lines = Path(path).read_text().splitlines()
        meta = {}
        for line in lines[:6]:
            key, value = line.split()
            meta[key.lower()] = float(value)
        data = np.array([[float(v) for v in ln.split()] for ln in lines[6:] if ln.strip()])
        data = data.reshape(int(meta["nrows"]), int(meta["ncols"]))[::-1].copy()
        data[data == meta["nodata_value"]] = np.nan
        return cls((meta["xllcorner"], meta["yllcorner"]), meta["cellsize"], data)


@dataclass
class ClothResult:
    ground_mask: np.ndarray
    surface: DigitalTerrainModel
    iterations: int
    converged: bool


def cloth_filter(cloud: PointCloud, params: ClothParams = ClothParams()) -> ClothResult:
    """Classify ground points by draping a cloth over the upside-down cloud.

    The cloud is flipped (``z -> -z``) and a grid of cloth nodes, one per
    ``cell_size`` cell, falls from above by ``gravity_step`` per iteration.
    Each node collides with the highest flipped point of its cell (the lowest
    original point); cells without points take the collision height of the
    nearest populated cell. A node that reaches its collision height is pinned.
    Free nodes are then pulled toward the mean of their 4-neighbours in
    ``rigidness`` relaxation passes. Iteration stops when no node moves by more
    than ``convergence_epsilon`` or after ``max_iterations``; a point is ground
    iff its vertical distance to the settled cloth is at most
    ``classification_threshold``.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cloth_filter needs at least one point")
    xyz = cloud.xyz
    grid = DigitalTerrainModel.covering(xyz[:, :2], params.cell_size)
    row, col, _ = grid.cell_of(xyz[:, :2])
    flat = row * grid.width + col

    collide = np.full(grid.heights.size, -np.inf)
    np.maximum.at(collide, flat, -xyz[:, 2])
    collide = collide.reshape(grid.heights.shape)
    empty = np.isneginf(collide)
    if empty.any():
        _, (ri, ci) = ndimage.distance_transform_edt(empty, return_indices=True)
        collide = collide[ri, ci]

    cloth = np.full(collide.shape, collide.max() + params.gravity_step)
    movable = np.ones(collide.shape, dtype=bool)
    converged = False
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        before = cloth.copy()
        cloth[movable] -= params.gravity_step
        movable = _pin(cloth, collide, movable)
        for _ in range(params.rigidness):
            if not movable.any():
                break
            mean = _neighbour_mean(cloth)
            cloth[movable] += 0.5 * (mean[movable] - cloth[movable])
            movable = _pin(cloth, collide, movable)
        if np.max(np.abs(cloth - before)) < params.convergence_epsilon:
            converged = True
            break
    if not converged:
        log.warning("cloth did not converge after %d iterations", iterations)

    surface = DigitalTerrainModel(grid.origin, grid.resolution, -cloth)
    dist = np.abs(xyz[:, 2] - surface.height_at(xyz[:, :2]))
    mask = dist <= params.classification_threshold
    return ClothResult(mask, surface, iterations, converged)


def _pin(cloth: np.ndarray, collide: np.ndarray, movable: np.ndarray) -> np.ndarray:
    hit = movable & (cloth <= collide)
    cloth[hit] = collide[hit]
    return movable & ~hit


def _neighbour_mean(h: np.ndarray) -> np.ndarray:
    total = np.zeros_like(h)
    count = np.zeros_like(h)
    total[1:, :] += h[:-1, :]
    count[1:, :] += 1
    total[:-1, :] += h[1:, :]
    count[:-1, :] += 1
    total[:, 1:] += h[:, :-1]
    count[:, 1:] += 1
    total[:, :-1] += h[:, 1:]
    count[:, :-1] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = total / count
    return np.where(count > 0, mean, h)


def build_dtm(
    cloud: PointCloud,
    ground_mask: np.ndarray,
    resolution: float = DEFAULT_DTM_RESOLUTION_M,
    fill_radius: float = DEFAULT_FILL_RADIUS_M,
) -> DigitalTerrainModel:
    """Median ground height per cell over the cloud's full xy extent.

    Empty cells copy the nearest populated cell if its center lies within
    ``fill_radius``; otherwise they stay no-data.
    """
    ground_mask = np.asarray(ground_mask, dtype=bool)
    if ground_mask.shape != (len(cloud),):
        raise ValueError("ground_mask length must equal the point count")
    if not ground_mask.any():
        raise NoGroundPoints("no ground points to build a terrain model from")
    dtm = DigitalTerrainModel.covering(cloud.xyz[:, :2], resolution)
    ground = cloud.xyz[ground_mask]
    row, col, _ = dtm.cell_of(ground[:, :2])
    flat = row * dtm.width + col
    order = np.lexsort((ground[:, 2], flat))
    flat, z = flat[order], ground[order, 2]
    starts = np.flatnonzero(np.r_[True, flat[1:] != flat[:-1]])
    counts = np.diff(np.r_[starts, len(flat)])
    lo = z[starts + (counts - 1) // 2]
    hi = z[starts + counts // 2]
    heights = dtm.heights.reshape(-1)
    heights[flat[starts]] = 0.5 * (lo + hi)

    empty = np.isnan(dtm.heights)
    if empty.any() and fill_radius > 0:
        dist, (ri, ci) = ndimage.distance_transform_edt(
            empty, sampling=resolution, return_indices=True
        )
        fill = empty & (dist <= fill_radius)
        dtm.heights[fill] = dtm.heights[ri[fill], ci[fill]]
    return dtm


def normalize_heights(
    cloud: PointCloud, dtm: DigitalTerrainModel
) -> tuple[PointCloud, np.ndarray]:
    """Replace z by height above the terrain model.

    Returns the normalized cloud and the indices of points that were excluded
    because they lie over no-data cells or outside the raster.
    """
    ground_z = dtm.height_at(cloud.xyz[:, :2])
    keep = ~np.isnan(ground_z)
    excluded = np.flatnonzero(~keep)
    if len(excluded):
        log.warning("%d points over no-data terrain cells excluded", len(excluded))
    out = cloud.subset(keep)
    xyz = out.xyz.copy()
    xyz[:, 2] -= ground_z[keep]
    return out.with_xyz(xyz), excluded
