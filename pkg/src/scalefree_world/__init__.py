"""
Scale-free world engine - one hierarchy from superclusters down to a camera.

Nodes store positions relative to their parent in parent units together with
their own size in meters per unit, so relative transforms between any two
nodes are computed from their common ancestor down and never touch absolute
astronomical coordinates.
"""

__version__ = "0.1.0"
__author__ = "Scale-free World Engine"

from .config import EngineConfig, SceneLimits
from .errors import EngineError
from .horizon import PartitionTree, TransferEvent, horizon_step, partition_update
from .orbit import AnomalyConvergenceError, OrbitParams, orbital_position
from .scene import Node, attach, detach, load_scene, save_scene
from .transform import Matrix4, Quaternion, Vec3, local_world_matrix
from .universe import GenConfig, generate_world

__all__ = [
    "EngineConfig",
    "SceneLimits",
    "EngineError",
    "Node",
    "attach",
    "detach",
    "load_scene",
    "save_scene",
    "Vec3",
    "Quaternion",
    "Matrix4",
    "local_world_matrix",
    "OrbitParams",
    "orbital_position",
    "AnomalyConvergenceError",
    "PartitionTree",
    "TransferEvent",
    "horizon_step",
    "partition_update",
    "GenConfig",
    "generate_world",
]
