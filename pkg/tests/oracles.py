"""Slow, obviously-correct reference implementations used as test oracles.

None of these import the code paths they check.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def brute_dbscan(points, eps, min_pts):
    """O(n^2) DBSCAN with the library's deterministic rules.

    Core: >= min_pts points (self included) within eps. Clusters: flood fill
    over core points, started from unvisited core points in index order.
    Border: cluster of the lowest-index core neighbour. Labels: -1 noise.
    """
    pts = [tuple(map(float, p)) for p in np.asarray(points, dtype=np.float64)]
    n = len(pts)
    neigh = [[j for j in range(n) if math.dist(pts[i], pts[j]) <= eps] for i in range(n)]
    core = [len(neigh[i]) >= min_pts for i in range(n)]
    labels = [-1] * n
    next_label = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        stack = [i]
        labels[i] = next_label
        while stack:
            k = stack.pop()
            for j in neigh[k]:
                if core[j] and labels[j] == -1:
                    labels[j] = next_label
                    stack.append(j)
        next_label += 1
    out = list(labels)
    for i in range(n):
        if core[i]:
            continue
        cores = [j for j in neigh[i] if core[j]]
        if cores:
            out[i] = labels[min(cores)]
    return np.array(out), np.array(core, dtype=bool)


def partition(labels, mask=None):
    """Set of frozensets of indices sharing a non-negative label."""
    groups = {}
    for i, lab in enumerate(labels):
        if lab < 0 or (mask is not None and not mask[i]):
            continue
        groups.setdefault(lab, set()).add(i)
    return {frozenset(g) for g in groups.values()}


def brute_nms(candidates, radius):
    """Greedy NMS by repeatedly scanning for the strongest remaining candidate."""
    remaining = list(candidates)
    kept = []
    while remaining:
        best = remaining[0]
        for c in remaining[1:]:
            a = (-c.inlier_count, c.rms_residual, c.center[0], c.center[1])
            b = (-best.inlier_count, best.rms_residual, best.center[0], best.center[1])
            if a < b:
                best = c
        remaining.remove(best)
        if all(np.hypot(best.center[0] - k.center[0], best.center[1] - k.center[1]) > radius
               for k in kept):
            kept.append(best)
    return kept


TREE = {2, 3}


def _segments(semantic, instance):
    segs = {}
    for i, (s, k) in enumerate(zip(semantic, instance)):
        if int(s) in TREE and int(k) != 0:
            segs.setdefault(int(k), set()).add(i)
    return segs


def brute_matching(pred_sem, pred_inst, gt_sem, gt_inst):
    """All-pairs IoU > 1/2 matching with exact rational arithmetic."""
    ps = _segments(pred_sem, pred_inst)
    gs = _segments(gt_sem, gt_inst)
    pairs = []
    for p, pset in ps.items():
        for g, gset in gs.items():
            value = Fraction(len(pset & gset), len(pset | gset))
            if value > Fraction(1, 2):
                pairs.append((p, g, value))
    pairs.sort()
    fp = set(ps) - {p for p, _, _ in pairs}
    fn = set(gs) - {g for _, g, _ in pairs}
    return pairs, fp, fn


def brute_pq(pred_sem, pred_inst, gt_sem, gt_inst):
    """(PQ_ground, PQ_shrub, PQ_tree, PQ) computed from the raw definitions.

    Rationals throughout; converted to float only at the very end.
    """
    out = []
    for code in (0, 1):
        p = {i for i, s in enumerate(pred_sem) if int(s) == code}
        g = {i for i, s in enumerate(gt_sem) if int(s) == code}
        out.append(Fraction(1) if not (p | g) else Fraction(len(p & g), len(p | g)))
    pairs, fp, fn = brute_matching(pred_sem, pred_inst, gt_sem, gt_inst)
    denom = Fraction(len(pairs)) + Fraction(len(fp), 2) + Fraction(len(fn), 2)
    out.append(Fraction(1) if denom == 0 else sum((v for _, _, v in pairs), Fraction(0)) / denom)
    return out + [sum(out, Fraction(0)) / 3]


def grid_search_circle(xy, center_guess, half_width=0.02, levels=6, n=41):
    """Minimize sum (|p - c| - r)^2 by nested grid search over the center.

    For a fixed center the optimal radius is the mean distance, so only the
    center is searched.
    """
    xy = np.asarray(xy, dtype=np.float64)
    c = np.asarray(center_guess, dtype=np.float64)
    w = half_width
    for _ in range(levels):
        xs = np.linspace(c[0] - w, c[0] + w, n)
        ys = np.linspace(c[1] - w, c[1] + w, n)
        best = None
        for x in xs:
            d = np.hypot(xy[:, 0, None] - x, xy[:, 1, None] - ys[None, :])
            r = d.mean(axis=0)
            obj = ((d - r) ** 2).sum(axis=0)
            k = int(np.argmin(obj))
            if best is None or obj[k] < best[0]:
                best = (obj[k], x, ys[k], r[k])
        c = np.array([best[1], best[2]])
        w = 2 * w / (n - 1) * 2
    return c, best[3]


def path_length(points):
    p = np.asarray(points, dtype=np.float64)
    return float(sum(np.sqrt(((p[i + 1] - p[i]) ** 2).sum()) for i in range(len(p) - 1)))
