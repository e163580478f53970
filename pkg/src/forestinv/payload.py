"""Rigid poses, trajectories and distance-windowed payload accumulation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .cloud import PointCloud, concatenate
from .errors import InvalidCloud, TimestampOutOfRange

DEFAULT_WINDOW_M = 20.0


@dataclass(frozen=True)
class Pose:
    """Rigid transform: translation in meters, rotation as unit quaternion (x, y, z, w)."""

    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    quaternion: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)

    def __post_init__(self) -> None:
        q = np.asarray(self.quaternion, dtype=np.float64)
        if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) >= 1e-9:
            raise InvalidCloud(f"pose quaternion must have unit norm, got {self.quaternion}")

    @classmethod
    def from_rotation(cls, translation, rotation: Rotation) -> "Pose":
        q = rotation.as_quat()
        q = q / np.linalg.norm(q)
        return cls(tuple(float(v) for v in translation), tuple(float(v) for v in q))

    @property
    def rotation(self) -> Rotation:
        return Rotation.from_quat(self.quaternion)

    def apply(self, xyz: np.ndarray) -> np.ndarray:
        return self.rotation.apply(np.asarray(xyz, dtype=np.float64).reshape(-1, 3)) + np.asarray(
            self.translation
        )


class Trajectory:
    """Time-stamped poses with linear/spherical-linear interpolation."""

    def __init__(self, timestamps: Sequence[float], poses: Sequence[Pose]):
        t = np.asarray(timestamps, dtype=np.float64)
        if len(t) != len(poses) or len(t) == 0:
            raise ValueError("trajectory needs one pose per timestamp and at least one pose")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        self.timestamps = t
        self.poses = list(poses)
        self._translations = np.array([p.translation for p in poses], dtype=np.float64)
        self._slerp = None
        if len(t) > 1:
            self._slerp = Slerp(t, Rotation.from_quat([p.quaternion for p in poses]))

    def __len__(self) -> int:
        return len(self.timestamps)

    def pose_at(self, t: float) -> Pose:
        t0, t1 = self.timestamps[0], self.timestamps[-1]
        if not (t0 <= t <= t1):
            raise TimestampOutOfRange(f"timestamp {t} outside trajectory range [{t0}, {t1}]")
        if self._slerp is None:
            return self.poses[0]
        k = int(np.searchsorted(self.timestamps, t, side="right")) - 1
        if k >= len(self.timestamps) - 1:
            return self.poses[-1]
        if t == self.timestamps[k]:
            return self.poses[k]
        alpha = (t - self.timestamps[k]) / (self.timestamps[k + 1] - self.timestamps[k])
        trans = (1.0 - alpha) * self._translations[k] + alpha * self._translations[k + 1]
        return Pose.from_rotation(trans, self._slerp([t])[0])


@dataclass
class PayloadCloud:
    """World-frame cloud accumulated over a stretch of travel.

    ``pose`` is the sensor pose at the last scan of the payload and
    ``odometry_distance`` the total path length traveled at emission.
    """

    cloud: PointCloud
    pose: Pose
    odometry_distance: float
    timestamp: float
    payload_id: int = 0
    scan_indices: tuple[int, ...] = ()


@dataclass
class Scan:
    timestamp: float
    cloud: PointCloud


def build_payloads(
    scans: Sequence[Scan],
    trajectory: Trajectory,
    window: float = DEFAULT_WINDOW_M,
) -> list[PayloadCloud]:
    """Transform scans into the world frame and cut them into payloads.

    Path length is measured between the interpolated sensor positions of
    consecutive scans. A payload is closed by the first scan at which the total
    path length reaches the next multiple of ``window``, so cut positions stay
    within one scan's travel of those multiples. Remaining scans form a final
    partial payload.
    """
    if not window > 0:
        raise ValueError("window must be positive")
    ordered = sorted(range(len(scans)), key=lambda i: (scans[i].timestamp, i))
    payloads: list[PayloadCloud] = []
    pending: list[int] = []
    total = 0.0
    next_cut = window
    prev_position = None
    pose = None
    for i in ordered:
        scan = scans[i]
        pose = trajectory.pose_at(scan.timestamp)
        position = np.asarray(pose.translation)
        if prev_position is not None:
            total += float(np.linalg.norm(position - prev_position))
        prev_position = position
        pending.append(i)
        if total >= next_cut:
            payloads.append(_emit(scans, pending, trajectory, total, len(payloads)))
            pending = []
            while next_cut <= total:
                next_cut += window
    if pending:
        payloads.append(_emit(scans, pending, trajectory, total, len(payloads)))
    return payloads


def _emit(scans, indices, trajectory, total, payload_id) -> PayloadCloud:
    world = []
    for i in indices:
        pose = trajectory.pose_at(scans[i].timestamp)
        cloud = scans[i].cloud
        world.append(cloud.with_xyz(pose.apply(cloud.xyz)))
    last = scans[indices[-1]]
    merged = concatenate(world, frame_id="world")
    return PayloadCloud(
        cloud=merged,
        pose=trajectory.pose_at(last.timestamp),
        odometry_distance=total,
        timestamp=last.timestamp,
        payload_id=payload_id,
        scan_indices=tuple(indices),
    )
