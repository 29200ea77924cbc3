"""
Scene graph: bounded, sized, seeded nodes forming one tree per world.

A node stores its placement in parent node units and its own absolute size in
meters per node unit. Components attach behaviour (orbits, partitions,
procedural generators) and are dispatched by the systems that own them.
"""

import json
import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterator, Optional, Union

from .config import SceneLimits
from .errors import EngineError
from .transform import Matrix4, Quaternion, Vec3, compose_world_matrix
from .utils import MASK64, mix_seed, setup_logger

logger = setup_logger(__name__)

SNAPSHOT_FORMAT = "scalefree-world/scene"
SNAPSHOT_VERSION = 1


class SceneError(EngineError):
    """Base exception for scene graph operations."""

    pass


class StructureError(SceneError):
    """Exception for operations that would break the tree structure."""

    pass


class LimitError(SceneError):
    """Exception for nesting depth or child count overflow."""

    pass


class DetachError(SceneError):
    """Exception for detaching a world node."""

    pass


class ComponentError(SceneError):
    """Exception for missing or misplaced components."""

    pass


class SnapshotError(SceneError):
    """Exception for malformed scene snapshots."""

    pass


# ---------------------------------------------------------------------------
# Bounds


@dataclass(frozen=True)
class SphereBounds:
    radius: float = 1.0

    def __post_init__(self) -> None:
        if not self.radius > 0.0:
            raise SceneError(f"Sphere radius must be positive, got {self.radius}")

    def contains(self, p: Vec3) -> bool:
        return p.dot(p) <= self.radius * self.radius

    def clamp(self, p: Vec3) -> Vec3:
        if self.contains(p):
            return p
        if not all(math.isfinite(c) for c in p.to_list()):
            raise SceneError(f"Cannot clamp non-finite point {p.to_list()}")
        factor = self.radius / p.length()
        while not self.contains(p * factor):
            factor = math.nextafter(factor, 0.0)
        return p * factor

    def to_dict(self) -> dict[str, Any]:
        return {"shape": "sphere", "radius": self.radius}


@dataclass(frozen=True)
class BoxBounds:
    half_extents: Vec3

    def __post_init__(self) -> None:
        h = self.half_extents
        if not (h.x > 0.0 and h.y > 0.0 and h.z > 0.0):
            raise SceneError(f"Box half-extents must be positive, got {h.to_list()}")

    def contains(self, p: Vec3) -> bool:
        h = self.half_extents
        return abs(p.x) <= h.x and abs(p.y) <= h.y and abs(p.z) <= h.z

    def clamp(self, p: Vec3) -> Vec3:
        h = self.half_extents
        return Vec3(
            min(max(p.x, -h.x), h.x), min(max(p.y, -h.y), h.y), min(max(p.z, -h.z), h.z)
        )

    def to_dict(self) -> dict[str, Any]:
        return {"shape": "box", "half_extents": self.half_extents.to_list()}


@dataclass(frozen=True)
class CompoundBounds:
    """Union of member shapes, each shifted by an offset."""

    members: tuple[tuple["Bounds", Vec3], ...]

    def __post_init__(self) -> None:
        if not self.members:
            raise SceneError("Compound bounds need at least one member")

    def contains(self, p: Vec3) -> bool:
        return any(member.contains(p - offset) for member, offset in self.members)

    def clamp(self, p: Vec3) -> Vec3:
        if self.contains(p):
            return p
        candidates = [member.clamp(p - offset) + offset for member, offset in self.members]
        return min(candidates, key=lambda q: (q - p).length())

    def to_dict(self) -> dict[str, Any]:
        return {
            "shape": "compound",
            "members": [
                {"bounds": member.to_dict(), "offset": offset.to_list()}
                for member, offset in self.members
            ],
        }


Bounds = Union[SphereBounds, BoxBounds, CompoundBounds]


def contains_point(bounds: Bounds, p: Vec3) -> bool:
    """True iff ``p`` (node units) lies inside the shape; boundary counts as inside."""
    return bounds.contains(p)


def clamp_point(bounds: Bounds, p: Vec3) -> Vec3:
    """Closest point to ``p`` inside the shape; ``p`` itself when already inside."""
    return bounds.clamp(p)


def bounds_from_dict(data: dict[str, Any]) -> Bounds:
    shape = data.get("shape")
    if shape == "sphere":
        return SphereBounds(float(data["radius"]))
    if shape == "box":
        return BoxBounds(Vec3.from_iterable(data["half_extents"]))
    if shape == "compound":
        return CompoundBounds(
            tuple(
                (bounds_from_dict(m["bounds"]), Vec3.from_iterable(m["offset"]))
                for m in data["members"]
            )
        )
    raise SnapshotError(f"Unknown bounds shape: {shape!r}")


# ---------------------------------------------------------------------------
# Components


class ComponentKind(str, Enum):
    ORBIT = "orbit"
    CONSTANT_ROTATION = "constant-rotation"
    PARTITION2D = "partition2d"
    PARTITION3D = "partition3d"
    PROCEDURAL = "procedural"
    SURFACE_MOD = "surface-mod"
    CUSTOM = "custom"


PARTITION_KINDS = frozenset({ComponentKind.PARTITION2D, ComponentKind.PARTITION3D})


@dataclass
class Component:
    """A kind tag plus a kind-specific payload."""

    kind: ComponentKind
    payload: Any = field(default_factory=dict)


ComponentEncoder = Callable[[Any], Any]
ComponentDecoder = Callable[[Any], Any]

_component_codecs: dict[ComponentKind, tuple[ComponentEncoder, ComponentDecoder]] = {}


def register_component_codec(
    kind: ComponentKind, encode: ComponentEncoder, decode: ComponentDecoder
) -> None:
    """Register how a component payload is written to and read from snapshots."""
    _component_codecs[kind] = (encode, decode)


def _identity(payload: Any) -> Any:
    return payload


def _codec(kind: ComponentKind) -> tuple[ComponentEncoder, ComponentDecoder]:
    return _component_codecs.get(kind, (_identity, _identity))


# ---------------------------------------------------------------------------
# Nodes


CustomValue = Union[bool, int, float, str, Vec3]


# Handles with the top bit set are derived from node content; the allocator stays below it.
SEEDED_ID_BIT = 1 << 63


class _IdAllocator:
    """Process-wide 64-bit node handles."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._next = 1

    def allocate(self) -> int:
        with self._lock:
            value = self._next
            self._next += 1
            return value

    def reserve(self, value: int) -> None:
        if value & SEEDED_ID_BIT:
            return
        with self._lock:
            self._next = max(self._next, value + 1)


_ids = _IdAllocator()


def seeded_id(seed: int, type_name: str) -> int:
    """Handle of a generated node, stable across replays of the same seed."""
    return mix_seed(seed, "node", type_name) | SEEDED_ID_BIT


class Node:
    """Scene graph element."""

    def __init__(
        self,
        type_name: str,
        *,
        absolute_size: float = 1.0,
        bounds: Optional[Bounds] = None,
        position: Vec3 = Vec3(0.0, 0.0, 0.0),
        rotation: Quaternion = Quaternion(0.0, 0.0, 0.0, 1.0),
        scale: Vec3 = Vec3(1.0, 1.0, 1.0),
        seed: int = 0,
        node_id: Optional[int] = None,
    ) -> None:
        if not (absolute_size > 0.0 and math.isfinite(absolute_size)):
            raise SceneError(f"Absolute size must be positive and finite, got {absolute_size}")
        if not 0 <= seed <= MASK64:
            raise SceneError(f"Seed {seed} is outside the unsigned 64-bit range")

        if node_id is None:
            node_id = _ids.allocate()
        elif not 0 < node_id <= MASK64:
            raise SceneError(f"Node id {node_id} is outside the unsigned 64-bit range")
        else:
            _ids.reserve(node_id)

        self.id = node_id
        self.type_name = type_name
        self.absolute_size = float(absolute_size)
        self.bounds: Bounds = bounds if bounds is not None else SphereBounds(1.0)
        self.position = position
        self.rotation = rotation
        self.scale = scale
        self.seed = seed

        self.velocity = Vec3.zero()
        self.angular_velocity = Vec3.zero()
        self.transferable = False

        self.components: list[Component] = []
        self.custom_vars: dict[str, CustomValue] = {}

        self._parent: Optional[Node] = None
        self._children: list[Node] = []

    def __repr__(self) -> str:
        return f"Node(id={self.id}, type={self.type_name!r}, size={self.absolute_size:g})"

    @property
    def rotation(self) -> Quaternion:
        return self._rotation

    @rotation.setter
    def rotation(self, value: Quaternion) -> None:
        self._rotation = value.as_rotation()

    @property
    def parent(self) -> Optional["Node"]:
        return self._parent

    @property
    def children(self) -> tuple["Node", ...]:
        return tuple(self._children)

    @property
    def is_world(self) -> bool:
        return self._parent is None

    def world_matrix(self) -> Matrix4:
        """Placement of this node in its parent's frame."""
        return compose_world_matrix(self.scale, self.rotation, self.position)

    def depth(self) -> int:
        """Number of steps to the world node."""
        depth = 0
        node = self._parent
        while node is not None:
            depth += 1
            node = node._parent
        return depth

    def root(self) -> "Node":
        node = self
        while node._parent is not None:
            node = node._parent
        return node

    def ancestors(self) -> Iterator["Node"]:
        node = self._parent
        while node is not None:
            yield node
            node = node._parent

    def height(self) -> int:
        """Longest distance from this node down to a leaf."""
        if not self._children:
            return 0
        return 1 + max(child.height() for child in self._children)

    def iter_subtree(self) -> Iterator["Node"]:
        """Pre-order traversal in insertion order."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node._children))

    def count(self) -> int:
        return sum(1 for _ in self.iter_subtree())

    def get_component(self, kind: ComponentKind) -> Optional[Component]:
        for component in self.components:
            if component.kind == kind:
                return component
        return None

    def partition_component(self) -> Optional[Component]:
        for component in self.components:
            if component.kind in PARTITION_KINDS:
                return component
        return None

    def add_component(self, component: Component) -> Component:
        """
        Attach a component.

        Raises:
            ComponentError: If a second partition component is added
        """
        if component.kind in PARTITION_KINDS and self.partition_component() is not None:
            raise ComponentError(f"Node {self.id} already has a partition component")
        self.components.append(component)
        return component

    def set_var(self, name: str, value: CustomValue) -> None:
        if not name:
            raise SceneError("Custom variable names must be non-empty")
        if not isinstance(value, (bool, int, float, str, Vec3)):
            raise SceneError(f"Unsupported custom variable type {type(value).__name__}")
        self.custom_vars[name] = value


def child_seed(parent_seed: int, child_index: int, type_tag: str) -> int:
    """Derive a child's 64-bit seed from its parent seed, index and type."""
    return mix_seed(parent_seed, child_index, type_tag)


def attach(parent: Node, child: Node, limits: SceneLimits = SceneLimits()) -> Node:
    """
    Append ``child`` to ``parent``'s children.

    Raises:
        StructureError: If the child already has a parent or the attach makes a cycle
        LimitError: If nesting depth or child count limits would be exceeded
    """
    if child._parent is not None:
        raise StructureError(f"Node {child.id} already has parent {child._parent.id}")

    if child is parent or any(node is child for node in parent.ancestors()):
        raise StructureError(f"Attaching node {child.id} under {parent.id} would create a cycle")

    depth = parent.depth() + 1 + child.height()
    if depth > limits.max_nesting:
        raise LimitError(
            f"Attaching node {child.id} reaches depth {depth}, limit is {limits.max_nesting}"
        )

    if len(parent._children) >= limits.max_children:
        raise LimitError(
            f"Node {parent.id} already holds {limits.max_children} children"
        )

    parent._children.append(child)
    child._parent = parent
    return child


def detach(node: Node) -> Node:
    """
    Remove ``node`` from its parent, keeping its subtree intact.

    Raises:
        DetachError: If the node is a world node
    """
    parent = node._parent
    if parent is None:
        raise DetachError(f"Node {node.id} is a world node and cannot be detached")

    parent._children.remove(node)
    node._parent = None
    return node


def validate_tree(world: Node, limits: SceneLimits = SceneLimits()) -> None:
    """
    Check tree invariants for a world.

    Raises:
        StructureError: If a parent/child link is inconsistent
        LimitError: If the world is nested deeper than allowed
    """
    if world._parent is not None:
        raise StructureError(f"Node {world.id} is not a world node")
    seen: set[int] = set()
    stack = [(world, 0)]
    while stack:
        node, depth = stack.pop()
        if id(node) in seen:
            raise StructureError(f"Node {node.id} reached twice")
        seen.add(id(node))
        if depth > limits.max_nesting:
            raise LimitError(f"Node {node.id} nested at depth {depth}")
        for child in node._children:
            if child._parent is not node:
                raise StructureError(f"Node {child.id} has a stale parent link")
            stack.append((child, depth + 1))


# ---------------------------------------------------------------------------
# Node paths


def resolve_node_path(world: Node, path: str) -> Node:
    """
    Resolve a slash-joined path of child indices.

    Segments are either ``<index>`` (index among all children) or
    ``<type>:<index>`` (index among children of that type), e.g.
    ``/0/2/starsystem:1``. ``/`` is the world node itself.

    Raises:
        StructureError: If a segment does not resolve
    """
    node = world
    for segment in (part for part in path.strip().split("/") if part):
        type_name, _, index_text = segment.rpartition(":")
        try:
            index = int(index_text)
        except ValueError:
            raise StructureError(f"Bad path segment {segment!r} in {path!r}") from None

        candidates = [
            child for child in node._children if not type_name or child.type_name == type_name
        ]
        if not 0 <= index < len(candidates):
            raise StructureError(f"Path segment {segment!r} in {path!r} does not resolve")
        node = candidates[index]
    return node


def node_path(node: Node) -> str:
    """Index path of a node from its world node."""
    parts: list[str] = []
    current = node
    while current._parent is not None:
        parts.append(str(current._parent._children.index(current)))
        current = current._parent
    return "/" + "/".join(reversed(parts))


# ---------------------------------------------------------------------------
# Snapshots


def _encode_var(value: CustomValue) -> Any:
    if isinstance(value, Vec3):
        return {"vec3": value.to_list()}
    return value


def _decode_var(value: Any) -> CustomValue:
    if isinstance(value, dict) and "vec3" in value:
        return Vec3.from_iterable(value["vec3"])
    if isinstance(value, (bool, int, float, str)):
        return value
    raise SnapshotError(f"Unsupported custom variable value {value!r}")


def _node_to_dict(node: Node) -> dict[str, Any]:
    data: dict[str, Any] = {
        "id": node.id,
        "type": node.type_name,
        "size": node.absolute_size,
        "seed": node.seed,
        "position": node.position.to_list(),
        "rotation": node.rotation.to_list(),
        "scale": node.scale.to_list(),
        "bounds": node.bounds.to_dict(),
        "components": [
            {"kind": c.kind.value, "payload": _codec(c.kind)[0](c.payload)}
            for c in node.components
        ],
    }
    if node.transferable:
        data["transfer"] = True
    if node.velocity != Vec3.zero():
        data["velocity"] = node.velocity.to_list()
    if node.angular_velocity != Vec3.zero():
        data["angular_velocity"] = node.angular_velocity.to_list()
    if node.custom_vars:
        data["vars"] = {k: _encode_var(v) for k, v in node.custom_vars.items()}
    data["children"] = [_node_to_dict(child) for child in node._children]
    return data


def _check_unique_ids(root: Node) -> None:
    seen: set[int] = set()
    for node in root.iter_subtree():
        if node.id in seen:
            raise SnapshotError(f"Node id {node.id} appears more than once")
        seen.add(node.id)


def scene_to_dict(root: Node) -> dict[str, Any]:
    """
    Serialize a (sub)tree, keeping every node's id.

    Raises:
        SnapshotError: If two nodes share an id
    """
    _check_unique_ids(root)
    return {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "root": _node_to_dict(root),
    }


def _node_from_dict(data: dict[str, Any], limits: SceneLimits) -> Node:
    try:
        node = Node(
            str(data["type"]),
            absolute_size=float(data["size"]),
            bounds=bounds_from_dict(data["bounds"]),
            position=Vec3.from_iterable(data["position"]),
            rotation=Quaternion.from_iterable(data["rotation"]),
            scale=Vec3.from_iterable(data["scale"]),
            seed=int(data["seed"]),
            node_id=int(data["id"]),
        )
        node.transferable = bool(data.get("transfer", False))
        node.velocity = Vec3.from_iterable(data.get("velocity", (0.0, 0.0, 0.0)))
        node.angular_velocity = Vec3.from_iterable(
            data.get("angular_velocity", (0.0, 0.0, 0.0))
        )
        for name, value in data.get("vars", {}).items():
            node.set_var(name, _decode_var(value))
        for raw in data.get("components", []):
            kind = ComponentKind(raw["kind"])
            node.add_component(Component(kind, _codec(kind)[1](raw.get("payload", {}))))
        children = data.get("children", [])
    except (KeyError, TypeError, ValueError) as e:
        raise SnapshotError(f"Malformed node record: {e}") from e

    for child_data in children:
        attach(node, _node_from_dict(child_data, limits), limits)
    return node


def scene_from_dict(data: dict[str, Any], limits: SceneLimits = SceneLimits()) -> Node:
    """Rebuild a world from its snapshot dictionary."""
    if data.get("format") != SNAPSHOT_FORMAT:
        raise SnapshotError(f"Not a scene snapshot: format={data.get('format')!r}")
    if data.get("version") != SNAPSHOT_VERSION:
        raise SnapshotError(f"Unsupported snapshot version {data.get('version')!r}")
    root = _node_from_dict(data["root"], limits)
    _check_unique_ids(root)
    return root


def dumps_scene(root: Node) -> str:
    """Deterministic JSON text of a (sub)tree; floats use shortest round-trip repr."""
    return json.dumps(scene_to_dict(root), indent=1, allow_nan=False) + "\n"


def save_scene(root: Node, path: Path | str) -> None:
    Path(path).write_text(dumps_scene(root), encoding="utf-8")
    logger.info(f"Wrote scene with {root.count()} nodes to {path}")


def load_scene(path: Path | str, limits: SceneLimits = SceneLimits()) -> Node:
    """
    Load a scene snapshot from disk.

    Raises:
        SnapshotError: If the file is not valid snapshot JSON
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SnapshotError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}") from e
    except UnicodeDecodeError as e:
        raise SnapshotError(f"{path}: not UTF-8 text at byte {e.start}") from e
    if not isinstance(data, dict):
        raise SnapshotError(f"{path}: snapshot must be a JSON object")
    return scene_from_dict(data, limits)
