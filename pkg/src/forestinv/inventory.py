"""Spatio-temporal aggregation of trunk detections and inventory export.

CSV schema (header row, then one row per tree sorted by ``tree_id``)::

    tree_id,x,y,dbh_cm,observations,rms_residual_cm,first_seen,last_seen,high_variance

``x``/``y`` carry 6 decimals, ``dbh_cm``/``rms_residual_cm`` 2 decimals and
``high_variance`` is ``0``/``1`` (DBH standard deviation across observations
above 3 cm). A sidecar ``<name>.meta.json`` holds plot id, CRS label, config
fingerprint and the per-tree running sums needed to resume aggregation.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .detect import TreeDetection
from .errors import IoFailure

DEFAULT_ASSOCIATION_RADIUS_M = 0.5
HIGH_VARIANCE_STD_CM = 3.0

CSV_COLUMNS = (
    "tree_id", "x", "y", "dbh_cm", "observations", "rms_residual_cm",
    "first_seen", "last_seen", "high_variance",
)


@dataclass
class TreeInstance:
    tree_id: int
    position: tuple[float, float]
    dbh_cm: float
    observations: int
    first_seen: int
    last_seen: int
    rms_residual_cm: float
    # Running support-weighted sums.
    weight: float = 0.0
    dbh_sq_sum: float = 0.0

    @property
    def dbh_std_cm(self) -> float:
        if self.weight <= 0:
            return 0.0
        var = self.dbh_sq_sum / self.weight - self.dbh_cm ** 2
        return math.sqrt(max(var, 0.0))

    @property
    def high_variance(self) -> bool:
        return self.dbh_std_cm > HIGH_VARIANCE_STD_CM


@dataclass
class ForestInventory:
    trees: dict[int, TreeInstance] = field(default_factory=dict)
    plot_id: str = "plot"
    crs: str = "local"
    config_fingerprint: str = ""
    ambiguous: int = 0  # detections dropped to keep trees separated

    def __len__(self) -> int:
        return len(self.trees)

    def sorted_trees(self) -> list[TreeInstance]:
        return [self.trees[k] for k in sorted(self.trees)]

    def next_id(self) -> int:
        return max(self.trees, default=0) + 1


def associate(
    inventory: ForestInventory,
    detections: Sequence[TreeDetection],
    association_radius: float = DEFAULT_ASSOCIATION_RADIUS_M,
) -> ForestInventory:
    """Merge detections into the inventory in place and return it.

    Detections are processed in (x, y) order. Each one merges into the
    nearest tree within ``association_radius`` (ties: lower id) using
    support-weighted means; otherwise it starts a new tree. A merge that would
    move a tree to within ``association_radius`` of another tree is refused and
    the detection counted in ``inventory.ambiguous``.
    """
    if not association_radius > 0:
        raise ValueError("association_radius must be positive")
    for det in sorted(detections, key=lambda d: (d.position[0], d.position[1])):
        ids = sorted(inventory.trees)
        w = float(det.support)
        rms_cm = det.fit.rms_residual * 100.0
        if ids:
            pos = np.array([inventory.trees[i].position for i in ids])
            dist = np.hypot(pos[:, 0] - det.position[0], pos[:, 1] - det.position[1])
            k = int(np.argmin(dist))  # first minimum = lowest id
            if dist[k] <= association_radius:
                tree = inventory.trees[ids[k]]
                total = tree.weight + w
                new_pos = (
                    (tree.weight * tree.position[0] + w * det.position[0]) / total,
                    (tree.weight * tree.position[1] + w * det.position[1]) / total,
                )
                others = np.delete(pos, k, axis=0)
                if len(others) and np.min(
                    np.hypot(others[:, 0] - new_pos[0], others[:, 1] - new_pos[1])
                ) <= association_radius:
                    inventory.ambiguous += 1
                    continue
                tree.position = new_pos
                tree.dbh_cm = (tree.weight * tree.dbh_cm + w * det.dbh) / total
                tree.rms_residual_cm = (tree.weight * tree.rms_residual_cm + w * rms_cm) / total
                tree.dbh_sq_sum += w * det.dbh ** 2
                tree.weight = total
                tree.observations += 1
                tree.first_seen = min(tree.first_seen, det.payload_id)
                tree.last_seen = max(tree.last_seen, det.payload_id)
                continue
        new_id = inventory.next_id()
        inventory.trees[new_id] = TreeInstance(
            tree_id=new_id,
            position=(float(det.position[0]), float(det.position[1])),
            dbh_cm=float(det.dbh),
            observations=1,
            first_seen=det.payload_id,
            last_seen=det.payload_id,
            rms_residual_cm=rms_cm,
            weight=w,
            dbh_sq_sum=w * det.dbh ** 2,
        )
    return inventory


def weighted_dbh(values: Iterable[float], weights: Iterable[float]) -> float:
    v = np.asarray(list(values), dtype=np.float64)
    w = np.asarray(list(weights), dtype=np.float64)
    return float(np.sum(w * v) / np.sum(w))


# --- CSV -------------------------------------------------------------------


def inventory_csv_text(inventory: ForestInventory) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_COLUMNS)
    for t in inventory.sorted_trees():
        writer.writerow([
            t.tree_id,
            f"{t.position[0]:.6f}",
            f"{t.position[1]:.6f}",
            f"{t.dbh_cm:.2f}",
            t.observations,
            f"{t.rms_residual_cm:.2f}",
            t.first_seen,
            t.last_seen,
            int(t.high_variance),
        ])
    return buf.getvalue()


def export_csv(inventory: ForestInventory, path, sidecar: bool = True) -> None:
    """Write the inventory table (RFC 4180, CRLF line endings)."""
    path = Path(path)
    try:
        path.write_bytes(inventory_csv_text(inventory).encode("utf-8"))
        if sidecar:
            path.with_suffix(".meta.json").write_text(_meta_json(inventory))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def _meta_json(inventory: ForestInventory) -> str:
    meta = {
        "plot_id": inventory.plot_id,
        "crs": inventory.crs,
        "config_fingerprint": inventory.config_fingerprint,
        "ambiguous_detections": inventory.ambiguous,
        "trees": {
            str(t.tree_id): {"weight": t.weight, "dbh_sq_sum": t.dbh_sq_sum}
            for t in inventory.sorted_trees()
        },
    }
    return json.dumps(meta, indent=2, sort_keys=True) + "\n"


def import_csv(path, plot_id: str | None = None) -> ForestInventory:
    """Read an inventory CSV, plus its sidecar when present."""
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    rows = list(csv.DictReader(io.StringIO(text, newline="")))
    meta = {}
    side = path.with_suffix(".meta.json")
    if side.exists():
        meta = json.loads(side.read_text())
    sums = meta.get("trees", {})
    inv = ForestInventory(
        plot_id=plot_id or meta.get("plot_id", path.stem),
        crs=meta.get("crs", "local"),
        config_fingerprint=meta.get("config_fingerprint", ""),
        ambiguous=int(meta.get("ambiguous_detections", 0)),
    )
    for row in rows:
        tid = int(row["tree_id"])
        obs = int(row["observations"])
        dbh = float(row["dbh_cm"])
        extra = sums.get(str(tid), {"weight": float(obs), "dbh_sq_sum": float(obs) * dbh * dbh})
        inv.trees[tid] = TreeInstance(
            tree_id=tid,
            position=(float(row["x"]), float(row["y"])),
            dbh_cm=dbh,
            observations=obs,
            first_seen=int(row["first_seen"]),
            last_seen=int(row["last_seen"]),
            rms_residual_cm=float(row["rms_residual_cm"]),
            weight=float(extra["weight"]),
            dbh_sq_sum=float(extra["dbh_sq_sum"]),
        )
    return inv


# --- GeoJSON ---------------------------------------------------------------


def inventory_geojson(inventory: ForestInventory) -> dict:
    features = []
    for t in inventory.sorted_trees():
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [float(t.position[0]), float(t.position[1])]},
            "properties": {
                "tree_id": t.tree_id,
                "x": round(t.position[0], 6),
                "y": round(t.position[1], 6),
                "dbh_cm": round(t.dbh_cm, 2),
                "observations": t.observations,
                "rms_residual_cm": round(t.rms_residual_cm, 2),
                "first_seen": t.first_seen,
                "last_seen": t.last_seen,
                "high_variance": bool(t.high_variance),
            },
        })
    return {"type": "FeatureCollection", "features": features}


def export_geojson(inventory: ForestInventory, path) -> None:
    """Write a GeoJSON FeatureCollection of tree points (keys in fixed order)."""
    text = json.dumps(inventory_geojson(inventory), separators=(",", ":"))
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
