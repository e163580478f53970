"""Forest inventory from ground-level LiDAR payload clouds."""

__version__ = "0.1.0"

from .cloud import Point3, PointCloud, SemanticLabel  # noqa: E402
from .config import PipelineConfig  # noqa: E402

__all__ = ["Point3", "PointCloud", "SemanticLabel", "PipelineConfig", "__version__"]
