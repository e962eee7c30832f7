"""Differentiable tracking-based training for multi-source DOA regression."""

__version__ = "0.1.0"

from .geometry import DoaVector, angular_distance, euclidean_distance  # noqa: F401
from .scenes import SceneGenConfig, SceneTimeline, generate_scene  # noqa: F401
from .assignment import DistanceMatrix, AssociationMatrix, build_distance_matrix, hungarian  # noqa: F401
from .mot_metrics import MotReport, evaluate_sequence  # noqa: F401
