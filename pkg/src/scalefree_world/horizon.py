"""
Horizon system: frame-of-reference transfer and dynamic space partitions.

Nodes flagged as transferable are moved to their grandparent when their
origin leaves the parent's bounds, or into a sibling whose bounds capture
them. Their kinematic state is re-expressed so that the motion in meters,
seen from the world frame, does not change.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

import numpy as np

from .config import EngineConfig, SceneLimits
from .errors import EngineError
from .scene import (
    ComponentKind,
    Node,
    attach,
    clamp_point,
    contains_point,
    detach,
    register_component_codec,
)
from .transform import Quaternion, Vec3, local_world_matrix, rotation_matrix
from .utils import setup_logger

logger = setup_logger(__name__)

CellPath = tuple[int, ...]


class HorizonError(EngineError):
    """Base exception for the horizon system."""

    pass


@dataclass(frozen=True)
class KinematicState:
    """Position, rotation and their rates, all in one parent frame."""

    position: Vec3
    rotation: Quaternion = Quaternion(0.0, 0.0, 0.0, 1.0)
    velocity: Vec3 = Vec3(0.0, 0.0, 0.0)
    angular_velocity: Vec3 = Vec3(0.0, 0.0, 0.0)

    @classmethod
    def of(cls, node: Node) -> "KinematicState":
        return cls(node.position, node.rotation, node.velocity, node.angular_velocity)


@dataclass(frozen=True)
class TransferEvent:
    node_id: int
    old_parent: int
    new_parent: int
    kind: str = "transfer"

    def to_line(self) -> str:
        return f"{self.kind} {self.node_id} {self.old_parent} {self.new_parent}"


def _orthonormal(linear: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(np.asarray(linear, dtype=np.float64))
    return u @ vt


def reexpress_state(state: KinematicState, source: Node, target: Node) -> KinematicState:
    """
    Re-express a state given in ``source``'s frame in ``target``'s frame.

    Positions go through the full local world matrix, velocities through its
    linear block (rotation plus meters-per-unit ratio), angular velocities
    through its rotation only.

    Raises:
        NoCommonAncestorError: If the frames live in different worlds
    """
    if source is target:
        return state

    m = local_world_matrix(target, source)
    frame_rotation = _orthonormal(m.linear)

    node_rotation = rotation_matrix(state.rotation)[:3, :3] @ frame_rotation
    return KinematicState(
        position=m.transform_point(state.position),
        rotation=Quaternion.from_rotation_matrix(node_rotation),
        velocity=m.transform_direction(state.velocity),
        angular_velocity=Vec3.from_iterable(
            state.angular_velocity.as_array() @ frame_rotation
        ),
    )


def _capturing_sibling(node: Node) -> Optional[Node]:
    parent = node.parent
    if parent is None:
        return None

    # Innermost frames first, insertion order on ties
    siblings = sorted(
        (
            (sibling.absolute_size, index, sibling)
            for index, sibling in enumerate(parent.children)
            if sibling is not node
        ),
        key=lambda item: (item[0], item[1]),
    )
    for _, _, sibling in siblings:
        origin = local_world_matrix(sibling, node).translation_row
        if contains_point(sibling.bounds, origin):
            return sibling
    return None


def transfer_node(node: Node, new_parent: Node, limits: SceneLimits = SceneLimits()) -> None:
    """Reparent ``node`` under ``new_parent``, keeping its world-frame motion."""
    old_parent = node.parent
    if old_parent is None:
        raise HorizonError(f"World node {node.id} cannot be transferred")

    state = reexpress_state(KinematicState.of(node), old_parent, new_parent)
    detach(node)
    try:
        attach(new_parent, node, limits)
    except EngineError:
        attach(old_parent, node, limits)
        raise

    node.position = state.position
    node.rotation = state.rotation
    node.velocity = state.velocity
    node.angular_velocity = state.angular_velocity


def horizon_step(
    world: Node,
    transferable: Optional[Iterable[Node]] = None,
    limits: SceneLimits = SceneLimits(),
) -> list[TransferEvent]:
    """
    Run one horizon pass over the transferable nodes of ``world``.

    Sibling capture wins over leaving the parent; each node moves at most once
    per pass. A node leaving the world node's bounds is moved back onto them,
    loses its velocity and produces one ``clamp`` event.

    Returns:
        list[TransferEvent]: Events ordered by node id
    """
    if world.parent is not None:
        raise HorizonError(f"Node {world.id} is not a world node")

    candidates = (
        list(transferable)
        if transferable is not None
        else [node for node in world.iter_subtree() if node.transferable]
    )

    events: list[TransferEvent] = []
    for node in sorted(candidates, key=lambda n: n.id):
        parent = node.parent
        if parent is None or node.root() is not world:
            continue

        target = _capturing_sibling(node)
        if target is None and not contains_point(parent.bounds, node.position):
            grandparent = parent.parent
            if grandparent is None:
                node.position = clamp_point(parent.bounds, node.position)
                node.velocity = Vec3.zero()
                logger.warning(f"Node {node.id} left world {parent.id}; clamped to its bounds")
                events.append(TransferEvent(node.id, parent.id, parent.id, kind="clamp"))
                continue
            target = grandparent

        if target is None:
            continue

        transfer_node(node, target, limits)
        logger.debug(f"Transferred node {node.id} from {parent.id} to {target.id}")
        events.append(TransferEvent(node.id, parent.id, target.id))

    return events


def advance_kinematics(world: Node, dt: float) -> None:
    """Integrate free motion (no orbit component) over ``dt`` seconds."""
    for node in world.iter_subtree():
        if node.parent is None or node.get_component(ComponentKind.ORBIT) is not None:
            continue

        if node.velocity != Vec3.zero():
            node.position = node.position + node.velocity * dt

        omega = node.angular_velocity
        rate = omega.length()
        if rate > 0.0:
            spin = Quaternion.from_axis_angle(omega, rate * dt)
            node.rotation = spin * node.rotation


# ---------------------------------------------------------------------------
# Partition trees


@dataclass
class PartitionTree:
    """
    Dynamic quadtree (arity 4, axes x/z) or octree (arity 8, axes x/y/z).

    The root cell is a square/cube centred at ``center`` with half extent
    ``half_size`` in host node units. Leaves of the split structure are the
    active cells.
    """

    arity: int
    half_size: float
    max_depth: int = 6
    split_factor: float = EngineConfig.DEFAULT_SPLIT_FACTOR
    merge_factor: float = EngineConfig.DEFAULT_MERGE_FACTOR
    center: Vec3 = Vec3(0.0, 0.0, 0.0)
    _split: set[CellPath] = field(default_factory=set, repr=False)
    _active: set[CellPath] = field(default_factory=lambda: {()}, repr=False)

    def __post_init__(self) -> None:
        if self.arity not in (4, 8):
            raise HorizonError(f"Partition arity must be 4 or 8, got {self.arity}")
        if not self.half_size > 0.0:
            raise HorizonError(f"Partition half size must be positive, got {self.half_size}")
        if self.max_depth < 0:
            raise HorizonError(f"Partition max depth must be >= 0, got {self.max_depth}")
        if not 0.0 < self.split_factor < self.merge_factor:
            raise HorizonError(
                f"Split factor {self.split_factor} must be below merge factor {self.merge_factor}"
            )

    @property
    def axes(self) -> tuple[int, ...]:
        return (0, 2) if self.arity == 4 else (0, 1, 2)

    @property
    def active_cells(self) -> list[CellPath]:
        return sorted(self._active)

    def cell_box(self, path: CellPath) -> tuple[np.ndarray, float]:
        """Centre (over the tree's axes) and half extent of a cell."""
        origin = self.center.as_array()
        center = np.array([origin[axis] for axis in self.axes])
        half = self.half_size
        for index in path:
            if not 0 <= index < self.arity:
                raise HorizonError(f"Cell index {index} outside arity {self.arity}")
            half *= 0.5
            for bit in range(len(self.axes)):
                center[bit] += half if (index >> bit) & 1 else -half
        return center, half

    def distance(self, path: CellPath, observer: Vec3) -> float:
        """Distance from the observer to the cell's box (zero inside)."""
        center, half = self.cell_box(path)
        coords = observer.as_array()[list(self.axes)]
        gaps = np.maximum(0.0, np.abs(coords - center) - half)
        return float(math.sqrt(float(gaps @ gaps)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "arity": self.arity,
            "half_size": self.half_size,
            "max_depth": self.max_depth,
            "split_factor": self.split_factor,
            "merge_factor": self.merge_factor,
            "center": self.center.to_list(),
            "split": [list(path) for path in sorted(self._split)],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PartitionTree":
        tree = cls(
            arity=int(data["arity"]),
            half_size=float(data["half_size"]),
            max_depth=int(data.get("max_depth", 6)),
            split_factor=float(data.get("split_factor", EngineConfig.DEFAULT_SPLIT_FACTOR)),
            merge_factor=float(data.get("merge_factor", EngineConfig.DEFAULT_MERGE_FACTOR)),
            center=Vec3.from_iterable(data.get("center", (0.0, 0.0, 0.0))),
        )
        split = {tuple(int(i) for i in path) for path in data.get("split", [])}
        for path in split:
            if len(path) >= tree.max_depth or any(path[:k] not in split for k in range(len(path))):
                raise HorizonError(f"Split cell {list(path)} is not reachable from the root")
            tree.cell_box(path)
        tree._split = split
        tree._active = {
            path + (index,)
            for path in split
            for index in range(tree.arity)
            if path + (index,) not in split
        } or {()}
        return tree


def _collapse(tree: PartitionTree, path: CellPath, destroyed: list[CellPath]) -> None:
    depth = len(path)
    for cell in sorted(c for c in tree._active if c[:depth] == path):
        tree._active.discard(cell)
        destroyed.append(cell)
    tree._split = {c for c in tree._split if c[:depth] != path}
    tree._active.add(path)


def _visit(
    tree: PartitionTree,
    path: CellPath,
    observer: Vec3,
    created: list[CellPath],
    destroyed: list[CellPath],
) -> None:
    _, half = tree.cell_box(path)
    size = 2.0 * half
    distance = tree.distance(path, observer)

    if path in tree._split:
        if distance > tree.merge_factor * size:
            _collapse(tree, path, destroyed)
            created.append(path)
            return
        for index in range(tree.arity):
            _visit(tree, path + (index,), observer, created, destroyed)
        return

    if len(path) < tree.max_depth and distance < tree.split_factor * size:
        tree._active.discard(path)
        destroyed.append(path)
        tree._split.add(path)
        for index in range(tree.arity):
            child = path + (index,)
            tree._active.add(child)
            created.append(child)
            _visit(tree, child, observer, created, destroyed)


def partition_update(
    tree: PartitionTree, observer_local: Vec3
) -> tuple[list[CellPath], list[CellPath]]:
    """
    Split cells near the observer and merge cells far from it.

    Returns:
        tuple: ``(created, destroyed)`` active cells; cells created and
        destroyed within the same update are left out of both lists
    """
    created: list[CellPath] = []
    destroyed: list[CellPath] = []
    _visit(tree, (), observer_local, created, destroyed)

    transient = set(created) & set(destroyed)
    created = [cell for cell in created if cell not in transient]
    destroyed = [cell for cell in destroyed if cell not in transient]
    if created or destroyed:
        logger.debug(f"Partition update: {len(created)} created, {len(destroyed)} destroyed")
    return created, destroyed


register_component_codec(ComponentKind.PARTITION2D, PartitionTree.to_dict, PartitionTree.from_dict)
register_component_codec(ComponentKind.PARTITION3D, PartitionTree.to_dict, PartitionTree.from_dict)
