"""Point cloud containers and semantic labels.

Clouds are stored column-wise as numpy arrays. A ``Point3`` view of a single
point is available through indexing for convenience, but all processing works
on the arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidCloud, NonFiniteCoordinate, UnknownLabelCode

NO_INSTANCE = 0


class SemanticLabel(enum.IntEnum):
    """Per-point semantic class with its fixed integer encoding."""

    GROUND = 0
    SHRUB = 1
    STEM = 2
    CANOPY = 3

    @property
    def is_tree(self) -> bool:
        return self in (SemanticLabel.STEM, SemanticLabel.CANOPY)


TREE_CODES = (int(SemanticLabel.STEM), int(SemanticLabel.CANOPY))


def tree_mask(semantic: np.ndarray) -> np.ndarray:
    """Boolean mask of points whose label belongs to the derived Tree class."""
    return np.isin(semantic, TREE_CODES)


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float
    intensity: Optional[float] = None
    semantic: Optional[SemanticLabel] = None
    instance: Optional[int] = None


@dataclass
class PointCloud:
    """An ordered set of points with optional per-point attributes.

    Attributes:
        xyz: ``(n, 3)`` float64 coordinates in meters.
        intensity: optional ``(n,)`` float64.
        semantic: optional ``(n,)`` uint8 label codes (see :class:`SemanticLabel`).
        instance: optional ``(n,)`` uint32 instance ids, ``0`` meaning "no instance".
        frame_id: name of the coordinate frame.
        source_index: optional ``(n,)`` indices into the cloud this one was cut
            from. Not serialized.
    """

    xyz: np.ndarray
    intensity: Optional[np.ndarray] = None
    semantic: Optional[np.ndarray] = None
    instance: Optional[np.ndarray] = None
    frame_id: str = "world"
    source_index: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        xyz = np.asarray(self.xyz, dtype=np.float64)
        if xyz.size == 0:
            xyz = xyz.reshape(0, 3)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise InvalidCloud(f"xyz must have shape (n, 3), got {xyz.shape}")
        self.xyz = xyz
        n = len(xyz)
        if self.intensity is not None:
            self.intensity = _column(self.intensity, n, np.float64, "intensity")
        if self.semantic is not None:
            self.semantic = _column(self.semantic, n, np.uint8, "semantic")
        if self.instance is not None:
            self.instance = _column(self.instance, n, np.uint32, "instance")
        if self.source_index is not None:
            self.source_index = _column(self.source_index, n, np.int64, "source_index")

    @classmethod
    def from_points(cls, points: Iterable[Point3], frame_id: str = "world") -> "PointCloud":
        pts = list(points)
        xyz = np.array([(p.x, p.y, p.z) for p in pts], dtype=np.float64).reshape(-1, 3)

        def optional(name: str, dtype) -> Optional[np.ndarray]:
            values = [getattr(p, name) for p in pts]
            if not values or all(v is None for v in values):
                return None
            if name == "instance":
                return np.array([NO_INSTANCE if v is None else v for v in values], dtype=dtype)
            if any(v is None for v in values):
                raise InvalidCloud(f"field {name!r} set on some points but not all")
            return np.array([int(v) if name == "semantic" else v for v in values], dtype=dtype)

        return cls(
            xyz,
            intensity=optional("intensity", np.float64),
            semantic=optional("semantic", np.uint8),
            instance=optional("instance", np.uint32),
            frame_id=frame_id,
        )

    def __len__(self) -> int:
        return len(self.xyz)

    def __getitem__(self, i: int) -> Point3:
        x, y, z = (float(v) for v in self.xyz[i])
        inst = None
        if self.instance is not None and self.instance[i] != NO_INSTANCE:
            inst = int(self.instance[i])
        return Point3(
            x,
            y,
            z,
            intensity=None if self.intensity is None else float(self.intensity[i]),
            semantic=None if self.semantic is None else SemanticLabel(int(self.semantic[i])),
            instance=inst,
        )

    def subset(self, selector) -> "PointCloud":
        """Return the points picked by a boolean mask or an index array.

        ``source_index`` of the result refers to the original cloud, composing
        through repeated subsetting.
        """
        sel = np.asarray(selector)
        if sel.dtype == bool:
            idx = np.flatnonzero(sel)
        else:
            idx = sel.astype(np.int64).reshape(-1)
        base = self.source_index if self.source_index is not None else np.arange(len(self))
        return PointCloud(
            self.xyz[idx],
            intensity=None if self.intensity is None else self.intensity[idx],
            semantic=None if self.semantic is None else self.semantic[idx],
            instance=None if self.instance is None else self.instance[idx],
            frame_id=self.frame_id,
            source_index=base[idx],
        )

    def with_xyz(self, xyz: np.ndarray) -> "PointCloud":
        return PointCloud(
            xyz,
            intensity=self.intensity,
            semantic=self.semantic,
            instance=self.instance,
            frame_id=self.frame_id,
            source_index=self.source_index,
        )

    def validate(self) -> None:
        """Raise if coordinates are non-finite or labels are inconsistent."""
        bad = ~np.isfinite(self.xyz).all(axis=1)
        if bad.any():
            raise NonFiniteCoordinate(int(np.flatnonzero(bad)[0]))
        if self.semantic is not None:
            unknown = self.semantic > max(SemanticLabel)
            if unknown.any():
                i = int(np.flatnonzero(unknown)[0])
                raise UnknownLabelCode(int(self.semantic[i]), i)
        if self.instance is not None:
            has_inst = self.instance != NO_INSTANCE
            if self.semantic is None:
                if has_inst.any():
                    raise InvalidCloud("instance ids require semantic labels")
            else:
                stray = has_inst & ~tree_mask(self.semantic)
                if stray.any():
                    i = int(np.flatnonzero(stray)[0])
                    raise InvalidCloud(f"point {i} carries an instance id but is not a tree point")

    def equals(self, other: "PointCloud") -> bool:
        """Exact equality of coordinates and all optional fields."""

        def same(a, b) -> bool:
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (
            self.frame_id == other.frame_id
            and same(self.xyz, other.xyz)
            and same(self.intensity, other.intensity)
            and same(self.semantic, other.semantic)
            and same(self.instance, other.instance)
        )


def concatenate(clouds: Sequence[PointCloud], frame_id: Optional[str] = None) -> PointCloud:
    """Stack clouds in order. Optional fields survive only if every cloud has them."""
    if not clouds:
        return PointCloud(np.empty((0, 3)), frame_id=frame_id or "world")

    def stack(name: str):
        cols = [getattr(c, name) for c in clouds]
        if any(c is None for c in cols):
            return None
        return np.concatenate(cols)

    return PointCloud(
        np.concatenate([c.xyz for c in clouds]),
        intensity=stack("intensity"),
        semantic=stack("semantic"),
        instance=stack("instance"),
        frame_id=frame_id or clouds[0].frame_id,
    )


def _column(values, n: int, dtype, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.shape != (n,):
        raise InvalidCloud(f"{name} must have shape ({n},), got {arr.shape}")
    if np.issubdtype(dtype, np.integer) and arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise InvalidCloud(f"{name} must hold integers")
    if np.issubdtype(dtype, np.integer) and arr.size and arr.dtype.kind in "iuf":
        info = np.iinfo(dtype)
        if arr.min() < info.min or arr.max() > info.max:
            raise InvalidCloud(f"{name} out of range for {np.dtype(dtype).name}")
    return arr.astype(dtype, copy=False)
