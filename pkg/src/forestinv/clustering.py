"""Deterministic density clustering and greedy non-maxima suppression."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .fitting import CircleFit

NOISE = -1


@dataclass(frozen=True)
class Cluster:
    point_indices: np.ndarray
    centroid: tuple[float, ...]


@dataclass
class DbscanResult:
    labels: np.ndarray  # cluster number per point, NOISE for noise
    core: np.ndarray  # boolean core-point mask
    clusters: list[Cluster]

    @property
    def noise(self) -> np.ndarray:
        return np.flatnonzero(self.labels == NOISE)


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> DbscanResult:
    """Density-based clustering with an order-independent, deterministic result.

    A point is core when at least ``min_pts`` points (itself included) lie
    within distance ``eps``. Clusters are the connected components of core
    points linked by ``eps``-neighbourhoods, numbered by their smallest member
    index. A non-core point with core neighbours joins the cluster of its
    lowest-index core neighbour; other points are noise.

    Works in any dimension (rows of ``points``).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be at least 1")
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return DbscanResult(labels, np.zeros(0, dtype=bool), [])
    pts = pts.reshape(n, -1)

    tree = cKDTree(pts)
    pairs = tree.query_pairs(eps, output_type="ndarray")
    counts = np.ones(n, dtype=np.int64)
    if len(pairs):
        np.add.at(counts, pairs[:, 0], 1)
        np.add.at(counts, pairs[:, 1], 1)
    core = counts >= min_pts

    core_idx = np.flatnonzero(core)
    if len(core_idx):
        both = core[pairs[:, 0]] & core[pairs[:, 1]] if len(pairs) else np.zeros(0, bool)
        cp = pairs[both] if len(pairs) else np.empty((0, 2), dtype=np.int64)
        graph = coo_matrix(
            (np.ones(len(cp)), (cp[:, 0], cp[:, 1])), shape=(n, n)
        )
        _, comp = connected_components(graph, directed=False)
        comp_core = comp[core_idx]
        # Renumber components by their smallest core index (core_idx is ascending).
        _, first = np.unique(comp_core, return_index=True)
        order = np.argsort(core_idx[first], kind="stable")
        renum = np.empty(len(first), dtype=np.int64)
        renum[order] = np.arange(len(first))
        comp_ids = np.unique(comp_core)
        lookup = dict(zip(comp_ids.tolist(), renum.tolist()))
        labels[core_idx] = [lookup[c] for c in comp_core.tolist()]

        if len(pairs):
            # Border points: lowest-index core neighbour decides.
            a, b = pairs[:, 0], pairs[:, 1]
            best = np.full(n, n, dtype=np.int64)
            sel = ~core[a] & core[b]
            np.minimum.at(best, a[sel], b[sel])
            sel = ~core[b] & core[a]
            np.minimum.at(best, b[sel], a[sel])
            border = np.flatnonzero(best < n)
            labels[border] = labels[best[border]]

    clusters = []
    if labels.max() >= 0:
        order = np.argsort(labels, kind="stable")
        sorted_labels = labels[order]
        for k in range(labels.max() + 1):
            lo, hi = np.searchsorted(sorted_labels, [k, k + 1])
            idx = order[lo:hi]
            clusters.append(Cluster(idx, tuple(float(v) for v in pts[idx].mean(axis=0))))
    return DbscanResult(labels, core, clusters)


def nms_order_key(c: CircleFit):
    return (-c.inlier_count, c.rms_residual, c.center[0], c.center[1])


def non_maxima_suppression(candidates: Sequence[CircleFit], radius: float) -> list[CircleFit]:
    """Greedy suppression: strongest first, keep if farther than ``radius`` from all kept.

    Strength order is inlier count (descending), then residual, x and y
    (ascending).
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    kept: list[CircleFit] = []
    kept_xy = np.empty((0, 2))
    for cand in sorted(candidates, key=nms_order_key):
        c = np.asarray(cand.center)
        if len(kept_xy) and np.min(np.hypot(*(kept_xy - c).T)) <= radius:
            continue
        kept.append(cand)
        kept_xy = np.vstack([kept_xy, c])
    return kept
