"""Retrospective video analytics with a model-agnostic index.

Preprocessing turns a video into blobs, keypoint match chains, and
chunk-scoped trajectories once, independent of any detector. Queries then
run a user-supplied detector on a small calibrated set of representative
frames and propagate its results along the trajectories while meeting an
accuracy target.
"""

from .config import EngineConfig, load_config

__version__ = "0.1.0"
__all__ = ["EngineConfig", "load_config", "__version__"]
