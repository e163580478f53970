"""Panoptic quality and DBH evaluation.

Ground and shrub are stuff classes, Tree (Stem or Canopy points) is the only
thing class. Stem and canopy are additionally reported as plain semantic IoU.
"""

from __future__ import annotations

import csv
import enum
import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cloud import NO_INSTANCE, PointCloud, SemanticLabel, tree_mask
from .clustering import NOISE, dbscan
from .errors import BothEmpty, EmptyGroundTruth, InvalidCloud


class PQClass(enum.Enum):
    GROUND = "ground"
    SHRUB = "shrub"
    TREE = "tree"


PQ_CLASSES = (PQClass.GROUND, PQClass.SHRUB, PQClass.TREE)
_STUFF_CODE = {PQClass.GROUND: SemanticLabel.GROUND, PQClass.SHRUB: SemanticLabel.SHRUB}


@dataclass
class PanopticFrame:
    cloud: PointCloud
    role: str = "prediction"

    def __post_init__(self) -> None:
        if self.cloud.semantic is None:
            raise InvalidCloud("a panoptic frame needs semantic labels on every point")
        if self.cloud.instance is None:
            self.cloud.instance = np.zeros(len(self.cloud), dtype=np.uint32)
        self.cloud.validate()

    @classmethod
    def from_labels(cls, semantic, instance, role: str = "prediction") -> "PanopticFrame":
        semantic = np.asarray(semantic)
        xyz = np.zeros((len(semantic), 3))
        return cls(PointCloud(xyz, semantic=semantic, instance=instance), role)

    @property
    def semantic(self) -> np.ndarray:
        return self.cloud.semantic

    @property
    def instance(self) -> np.ndarray:
        return self.cloud.instance

    def __len__(self) -> int:
        return len(self.cloud)

    def segments(self) -> dict[int, np.ndarray]:
        """Tree instance id -> sorted point indices."""
        ids = np.where(tree_mask(self.semantic), self.instance, NO_INSTANCE)
        out = {}
        order = np.argsort(ids, kind="stable")
        sorted_ids = ids[order]
        for k in np.unique(sorted_ids):
            if k == NO_INSTANCE:
                continue
            lo, hi = np.searchsorted(sorted_ids, [k, k + 1])
            out[int(k)] = np.sort(order[lo:hi])
        return out


def iou(pred_segment, gt_segment) -> float:
    a = set(np.asarray(pred_segment).reshape(-1).tolist())
    b = set(np.asarray(gt_segment).reshape(-1).tolist())
    union = len(a | b)
    if union == 0:
        raise BothEmpty("IoU of two empty segments is undefined")
    return len(a & b) / union


@dataclass
class Matching:
    pairs: list[tuple[int, int, float]]  # (pred id, gt id, IoU), sorted by pred id
    fp: set[int]
    fn: set[int]
    # Exact (intersection, union) counts of each pair, in the order of ``pairs``.
    counts: list[tuple[int, int]] = field(default_factory=list)


def match_instances(pred: PanopticFrame, gt: PanopticFrame) -> Matching:
    """Pair Tree instances whose IoU exceeds 0.5 (unique by construction)."""
    if len(pred) != len(gt):
        raise InvalidCloud(f"point count mismatch: {len(pred)} predicted vs {len(gt)} ground truth")
    p_ids = np.where(tree_mask(pred.semantic), pred.instance, NO_INSTANCE).astype(np.int64)
    g_ids = np.where(tree_mask(gt.semantic), gt.instance, NO_INSTANCE).astype(np.int64)
    p_unique, p_size = np.unique(p_ids[p_ids != NO_INSTANCE], return_counts=True)
    g_unique, g_size = np.unique(g_ids[g_ids != NO_INSTANCE], return_counts=True)
    p_count = dict(zip(p_unique.tolist(), p_size.tolist()))
    g_count = dict(zip(g_unique.tolist(), g_size.tolist()))

    both = (p_ids != NO_INSTANCE) & (g_ids != NO_INSTANCE)
    overlap, inter = np.unique(
        np.column_stack([p_ids[both], g_ids[both]]), axis=0, return_counts=True
    ) if both.any() else (np.empty((0, 2), dtype=np.int64), np.empty(0, dtype=np.int64))

    found = []
    for (p, g), n in zip(overlap.tolist(), inter.tolist()):
        union = p_count[p] + g_count[g] - n
        if 2 * n > union:  # IoU > 0.5, decided in integers
            found.append((p, g, n, union))
    found.sort()
    pairs = [(p, g, n / union) for p, g, n, union in found]
    matched_p = {p for p, _, _ in pairs}
    matched_g = {g for _, g, _ in pairs}
    return Matching(pairs, set(p_count) - matched_p, set(g_count) - matched_g,
                    [(n, union) for *_, n, union in found])


@dataclass
class ClassScore:
    exact: Fraction
    degenerate: bool = False  # class absent from both sides

    @property
    def value(self) -> float:
        return float(self.exact)  # correctly rounded


def pq_class(pred: PanopticFrame, gt: PanopticFrame, cls: PQClass) -> float:
    """Per-class panoptic quality.

    Thing: sum of matched IoUs over ``|TP| + |FP|/2 + |FN|/2``. Stuff: IoU of
    the predicted and true point sets of the class. A class absent from both
    frames scores 1 (flagged in :class:`PQReport`); absent from one side scores 0.
    """
    return _class_score(pred, gt, cls).value


def _class_score(pred: PanopticFrame, gt: PanopticFrame, cls: PQClass) -> ClassScore:
    if len(pred) != len(gt):
        raise InvalidCloud(f"point count mismatch: {len(pred)} predicted vs {len(gt)} ground truth")
    if cls is PQClass.TREE:
        m = match_instances(pred, gt)
        # Scores are kept as exact rationals and rounded once, so results do
        # not depend on summation order.
        denom = Fraction(2 * len(m.pairs) + len(m.fp) + len(m.fn), 2)
        if denom == 0:
            return ClassScore(Fraction(1), degenerate=True)
        return ClassScore(sum((Fraction(n, u) for n, u in m.counts), Fraction(0)) / denom)
    code = _STUFF_CODE[cls]
    return _set_iou(pred.semantic == code, gt.semantic == code)


def _set_iou(p: np.ndarray, g: np.ndarray) -> ClassScore:
    union = int(np.count_nonzero(p | g))
    if union == 0:
        return ClassScore(Fraction(1), degenerate=True)
    return ClassScore(Fraction(int(np.count_nonzero(p & g)), union))


def semantic_iou(pred: PanopticFrame, gt: PanopticFrame, label: SemanticLabel) -> ClassScore:
    return _set_iou(pred.semantic == label, gt.semantic == label)


@dataclass
class PQReport:
    per_class: dict[PQClass, float]
    overall_pq: float
    stem_iou: float
    canopy_iou: float
    degenerate: set[PQClass] = field(default_factory=set)

    def rows(self) -> list[tuple[str, float]]:
        """Columns in the layout Ground, Shrub, Stem, Canopy, Tree, PQ (fractions)."""
        return [
            ("ground", self.per_class[PQClass.GROUND]),
            ("shrub", self.per_class[PQClass.SHRUB]),
            ("stem_iou", self.stem_iou),
            ("canopy_iou", self.canopy_iou),
            ("tree", self.per_class[PQClass.TREE]),
            ("pq", self.overall_pq),
        ]

    def to_csv(self) -> str:
        lines = ["metric,fraction,percent"]
        lines += [f"{k},{v:.6f},{100 * v:.1f}" for k, v in self.rows()]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        head = ["Ground", "Shrub", "Stem", "Canopy", "Tree", "PQ"]
        vals = [f"{100 * v:.1f}" for _, v in self.rows()]
        widths = [max(len(h), len(v)) for h, v in zip(head, vals)]
        line1 = "  ".join(h.rjust(w) for h, w in zip(head, widths))
        line2 = "  ".join(v.rjust(w) for v, w in zip(vals, widths))
        return line1 + "\n" + line2 + "\n"


def pq_overall(pred: PanopticFrame, gt: PanopticFrame) -> PQReport:
    scores = {c: _class_score(pred, gt, c) for c in PQ_CLASSES}
    per_class = {c: s.value for c, s in scores.items()}
    overall = float(sum((scores[c].exact for c in PQ_CLASSES), Fraction(0)) / len(PQ_CLASSES))
    return PQReport(
        per_class=per_class,
        overall_pq=overall,
        stem_iou=semantic_iou(pred, gt, SemanticLabel.STEM).value,
        canopy_iou=semantic_iou(pred, gt, SemanticLabel.CANOPY).value,
        degenerate={c for c, s in scores.items() if s.degenerate},
    )


def cluster_offsets(
    points: np.ndarray, offsets: np.ndarray, eps: float, min_pts: int
) -> np.ndarray:
    """Instance ids (1-based, 0 = noise) from DBSCAN on offset-shifted points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    off = np.asarray(offsets, dtype=np.float64).reshape(-1, 3)
    if pts.shape != off.shape:
        raise ValueError("one offset vector per point is required")
    if not np.all(np.isfinite(off)):
        raise ValueError("offsets must be finite")
    labels = dbscan(pts + off, eps, min_pts).labels
    return np.where(labels == NOISE, 0, labels + 1).astype(np.uint32)


# --- DBH evaluation ----------------------------------------------------------


@dataclass
class PlotDbhResult:
    recall: float
    rmse_cm: float
    matched: int
    n_gt: int
    errors_cm: list[float] = field(default_factory=list)


@dataclass
class DbhEvalReport:
    per_plot: dict[str, PlotDbhResult]
    overall_recall: float
    overall_rmse_cm: float
    per_plot_avg_recall: float
    per_plot_avg_rmse_cm: float

    def to_csv(self) -> str:
        lines = ["plot_id,recall,recall_percent,rmse_cm,matched,n_gt"]
        for plot in sorted(self.per_plot):
            r = self.per_plot[plot]
            lines.append(
                f"{plot},{r.recall:.6f},{100 * r.recall:.1f},{r.rmse_cm:.4f},{r.matched},{r.n_gt}"
            )
        lines.append(
            f"per_plot_avg,{self.per_plot_avg_recall:.6f},{100 * self.per_plot_avg_recall:.1f},"
            f"{self.per_plot_avg_rmse_cm:.4f},,"
        )
        lines.append(
            f"overall,{self.overall_recall:.6f},{100 * self.overall_recall:.1f},"
            f"{self.overall_rmse_cm:.4f},,"
        )
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        return (
            "            Recall                RMSE (cm)\n"
            "  Per-plot Avg.  Overall   Per-plot Avg.  Overall\n"
            f"  {self.per_plot_avg_recall:13.2f}  {self.overall_recall:7.2f}"
            f"   {self.per_plot_avg_rmse_cm:13.2f}  {self.overall_rmse_cm:7.2f}\n"
        )


def _rmse(errors: Sequence[float]) -> float:
    if not errors:
        return float("nan")
    return math.sqrt(math.fsum(e * e for e in errors) / len(errors))


def match_trees(
    pred: np.ndarray, gt: np.ndarray, gt_ids: Sequence[int], radius: float, optimal: bool = False
) -> list[tuple[int, int]]:
    """One-to-one (pred row, gt row) pairs within ``radius``.

    Greedy by ascending distance, ties broken by gt id then prediction row.
    With ``optimal`` a minimum-total-distance assignment is used instead.
    """
    if len(pred) == 0 or len(gt) == 0:
        return []
    dist = np.hypot(pred[:, None, 0] - gt[None, :, 0], pred[:, None, 1] - gt[None, :, 1])
    if optimal:
        cost = np.where(dist <= radius, dist, 1e9)
        rows, cols = linear_sum_assignment(cost)
        return sorted((int(r), int(c)) for r, c in zip(rows, cols) if dist[r, c] <= radius)
    cand = [
        (float(dist[i, j]), int(gt_ids[j]), i, j)
        for i, j in zip(*np.nonzero(dist <= radius))
    ]
    cand.sort()
    used_p, used_g, pairs = set(), set(), []
    for _, _, i, j in cand:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((int(i), int(j)))
    return pairs


def eval_dbh(
    predictions: Mapping[str, Sequence[tuple[float, float, float]]],
    ground_truth: Mapping[str, Sequence[tuple[int, float, float, float]]],
    match_radius: float = 0.5,
    optimal: bool = False,
) -> DbhEvalReport:
    """Recall and DBH RMSE per plot and pooled.

    ``predictions`` maps plot id to a ForestInventory or ``(x, y, dbh_cm)`` rows and
    ``ground_truth`` to ``(tree_id, x, y, dbh_cm)`` rows. Plots missing from
    ``predictions`` count as having no predicted trees.
    """
    if not match_radius > 0:
        raise ValueError("match_radius must be positive")
    per_plot = {}
    pooled: list[float] = []
    total_gt = 0
    for plot in sorted(ground_truth):
        gt_rows = list(ground_truth[plot])
        if not gt_rows:
            raise EmptyGroundTruth(f"plot {plot!r} has no ground-truth trees")
        gt = np.array([(x, y) for _, x, y, _ in gt_rows], dtype=np.float64)
        gt_dbh = [float(d) for *_, d in gt_rows]
        gt_ids = [int(t) for t, *_ in gt_rows]
        pred_rows = _prediction_rows(predictions.get(plot, []))
        pred = np.array([(x, y) for x, y, _ in pred_rows], dtype=np.float64).reshape(-1, 2)
        pairs = match_trees(pred, gt, gt_ids, match_radius, optimal)
        errors = [float(pred_rows[i][2]) - gt_dbh[j] for i, j in pairs]
        per_plot[plot] = PlotDbhResult(
            recall=len(pairs) / len(gt_rows),
            rmse_cm=_rmse(errors),
            matched=len(pairs),
            n_gt=len(gt_rows),
            errors_cm=errors,
        )
        pooled += errors
        total_gt += len(gt_rows)
    recalls = [r.recall for r in per_plot.values()]
    rmses = [r.rmse_cm for r in per_plot.values() if not math.isnan(r.rmse_cm)]
    return DbhEvalReport(
        per_plot=per_plot,
        overall_recall=len(pooled) / total_gt if total_gt else float("nan"),
        overall_rmse_cm=_rmse(pooled),
        per_plot_avg_recall=math.fsum(recalls) / len(recalls) if recalls else float("nan"),
        per_plot_avg_rmse_cm=math.fsum(rmses) / len(rmses) if rmses else float("nan"),
    )


def _prediction_rows(pred) -> list[tuple[float, float, float]]:
    if hasattr(pred, "sorted_trees"):
        return [(t.position[0], t.position[1], t.dbh_cm) for t in pred.sorted_trees()]
    return [tuple(row) for row in pred]


GT_COLUMNS = ("plot_id", "tree_id", "x", "y", "dbh_cm")


def read_gt_table(path) -> dict[str, list[tuple[int, float, float, float]]]:
    """Ground-truth CSV with columns ``plot_id,tree_id,x,y,dbh_cm``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(GT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise InvalidCloud(f"ground-truth table lacks columns {sorted(missing)}")
        table: dict[str, list] = {}
        for row in reader:
            table.setdefault(row["plot_id"], []).append(
                (int(row["tree_id"]), float(row["x"]), float(row["y"]), float(row["dbh_cm"]))
            )
    return table


def write_gt_table(path, table: Mapping[str, Sequence[tuple[int, float, float, float]]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GT_COLUMNS)
        for plot in sorted(table):
            for tid, x, y, dbh in table[plot]:
                writer.writerow([plot, tid, repr(float(x)), repr(float(y)), repr(float(dbh))])
