"""Pipeline configuration as a flat ``key = value`` file.

Blank lines and lines starting with ``#`` are ignored. Unknown keys are an
error so that typos do not silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .terrain import ClothParams


@dataclass(frozen=True)
class PipelineConfig:
    payload_window_m: float = 20.0
    cloth_cell_size_m: float = 0.5
    cloth_rigidness: int = 2
    cloth_gravity_step_m: float = 0.05
    cloth_max_iterations: int = 500
    cloth_classification_threshold_m: float = 0.1
    cloth_convergence_epsilon_m: float = 0.001
    dtm_resolution_m: float = 0.04
    dtm_fill_radius_m: float = 0.25
    slice_low_m: float = 1.25
    slice_high_m: float = 1.35
    dbscan_eps_m: float = 0.15
    dbscan_min_pts: int = 8
    nms_radius_m: float = 0.5
    hough_center_step_m: float = 0.02
    hough_radius_step_m: float = 0.01
    hough_r_min_m: float = 0.025
    hough_r_max_m: float = 1.0
    hough_min_trunk_points: int = 20
    hough_min_arc_deg: float = 90.0
    fit_residual_max_m: float = 0.03
    assoc_radius_m: float = 0.5
    eval_match_radius_m: float = 0.5
    workers: int = 1

    def __post_init__(self) -> None:
        for f in fields(self):
            if f.name != "slice_low_m" and not getattr(self, f.name) > 0:
                raise ValueError(f"{_key(f.name)} must be positive")
        if not self.slice_low_m < self.slice_high_m:
            raise ValueError("slice.low_m must be below slice.high_m")
        if not self.hough_r_min_m < self.hough_r_max_m:
            raise ValueError("hough.r_min_m must be below hough.r_max_m")
        if self.hough_min_arc_deg > 360:
            raise ValueError("hough.min_arc_deg cannot exceed 360")
        self.cloth_params()  # validates the cloth settings

    def cloth_params(self) -> ClothParams:
        return ClothParams(
            cell_size=self.cloth_cell_size_m,
            rigidness=self.cloth_rigidness,
            gravity_step=self.cloth_gravity_step_m,
            max_iterations=self.cloth_max_iterations,
            classification_threshold=self.cloth_classification_threshold_m,
            convergence_epsilon=self.cloth_convergence_epsilon_m,
        )

    def items(self) -> list[tuple[str, object]]:
        return [(_key(f.name), getattr(self, f.name)) for f in fields(self)]

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    def fingerprint(self) -> str:
        """Short stable hash of every setting."""
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def with_overrides(self, pairs: dict[str, str]) -> "PipelineConfig":
        known = {_key(f.name): f for f in fields(self)}
        changes = {}
        for key, raw in pairs.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            f = known[key]
            try:
                changes[f.name] = int(raw) if f.type in ("int", int) else float(raw)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
        try:
            return replace(self, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _key(name: str) -> str:
    section, _, rest = name.partition("_")
    return f"{section}.{rest}" if rest else section


def schema_hash() -> str:
    names = ",".join(_key(f.name) for f in fields(PipelineConfig))
    return hashlib.sha256(names.encode()).hexdigest()[:12]


def parse_config(text: str) -> PipelineConfig:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        pairs[key.strip()] = value.strip()
    return PipelineConfig().with_overrides(pairs)


def load_config(path) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
