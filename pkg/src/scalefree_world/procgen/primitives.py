"""
Primitive types and named primitive groups for operation-based generation.
"""

import json
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Mapping, Optional, Union

import numpy as np

from ..errors import EngineError
from ..transform import Vec3

PLANARITY_TOLERANCE = 1e-6
IDENTITY_UV = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0))

UvMatrix = tuple[tuple[float, float, float], tuple[float, float, float]]


class ProcgenError(EngineError):
    """Base exception for procedural generation."""

    pass


class PrimitiveError(ProcgenError):
    """Exception for primitives violating their shape rules."""

    pass


@dataclass(frozen=True)
class Point:
    position: Vec3

    def to_dict(self) -> dict[str, Any]:
        return {"point": self.position.to_list()}


@dataclass(frozen=True)
class Path:
    points: tuple[Vec3, ...]
    loop: bool = False

    def __post_init__(self) -> None:
        if len(self.points) < 2:
            raise PrimitiveError(f"A path needs at least 2 points, got {len(self.points)}")

    def as_array(self) -> np.ndarray:
        return np.array([p.to_list() for p in self.points], dtype=np.float64)

    def to_dict(self) -> dict[str, Any]:
        return {"path": [p.to_list() for p in self.points], "loop": self.loop}


@dataclass(frozen=True)
class Surface:
    """Planar polygon: a closed edge path plus material and uv mapping."""

    edge: Path
    material: str = "default"
    uv_matrix: UvMatrix = IDENTITY_UV

    def __post_init__(self) -> None:
        if not self.edge.loop:
            raise PrimitiveError("A surface edge must be a closed loop")
        if len(self.edge.points) < 3:
            raise PrimitiveError(
                f"A surface edge needs at least 3 points, got {len(self.edge.points)}"
            )
        points = self.edge.as_array()
        normal = newell_normal(points)
        length = float(np.linalg.norm(normal))
        if length > 0.0:
            diameter = float(np.max(np.linalg.norm(points - points[0], axis=1)))
            offsets = (points - points[0]) @ (normal / length)
            if float(np.max(np.abs(offsets))) > PLANARITY_TOLERANCE * max(diameter, 1e-300):
                raise PrimitiveError("Surface edge is not planar")

    @classmethod
    def from_points(
        cls,
        points: Iterable[Vec3] | np.ndarray,
        material: str = "default",
        uv_matrix: UvMatrix = IDENTITY_UV,
    ) -> "Surface":
        vertices = tuple(
            p if isinstance(p, Vec3) else Vec3.from_iterable(p) for p in points
        )
        return cls(Path(vertices, loop=True), material, uv_matrix)

    def as_array(self) -> np.ndarray:
        return self.edge.as_array()

    def normal(self) -> Optional[np.ndarray]:
        """Unit normal from the edge winding, ``None`` for zero-area polygons."""
        n = newell_normal(self.as_array())
        length = float(np.linalg.norm(n))
        return n / length if length > 0.0 else None

    def area(self) -> float:
        return polygon_area(self.as_array())

    def to_dict(self) -> dict[str, Any]:
        return {
            "surface": [p.to_list() for p in self.edge.points],
            "material": self.material,
            "uv": [list(row) for row in self.uv_matrix],
        }


Primitive = Union[Point, Path, Surface]


def newell_normal(points: np.ndarray) -> np.ndarray:
    """Area-weighted polygon normal; its length is twice the polygon area."""
    nxt = np.roll(points, -1, axis=0)
    return np.array(
        [
            np.sum((points[:, 1] - nxt[:, 1]) * (points[:, 2] + nxt[:, 2])),
            np.sum((points[:, 2] - nxt[:, 2]) * (points[:, 0] + nxt[:, 0])),
            np.sum((points[:, 0] - nxt[:, 0]) * (points[:, 1] + nxt[:, 1])),
        ]
    )


def polygon_area(points: np.ndarray) -> float:
    return 0.5 * float(np.linalg.norm(newell_normal(points)))


def is_convex(points: np.ndarray, normal: np.ndarray, tolerance: float = 1e-12) -> bool:
    """True when no corner turns against the winding given by ``normal``."""
    edges = np.roll(points, -1, axis=0) - points
    turns = np.cross(edges, np.roll(edges, -1, axis=0)) @ normal
    scale = float(np.max(np.linalg.norm(edges, axis=1))) ** 2
    return bool(np.all(turns >= -tolerance * max(scale, 1e-300)))


def plane_frame(
    points: np.ndarray, normal: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Origin and in-plane axes ``(u, v)`` with ``u x v = normal``."""
    origin = points[0]
    edges = points - origin
    lengths = np.linalg.norm(edges, axis=1)
    u = edges[int(np.argmax(lengths))]
    u = u - (u @ normal) * normal
    u = u / np.linalg.norm(u)
    v = np.cross(normal, u)
    return origin, u, v


def primitive_from_dict(data: Mapping[str, Any]) -> Primitive:
    if "point" in data:
        return Point(Vec3.from_iterable(data["point"]))
    if "path" in data:
        return Path(tuple(Vec3.from_iterable(p) for p in data["path"]), bool(data.get("loop")))
    if "surface" in data:
        uv = data.get("uv", IDENTITY_UV)
        return Surface.from_points(
            [Vec3.from_iterable(p) for p in data["surface"]],
            str(data.get("material", "default")),
            (tuple(map(float, uv[0])), tuple(map(float, uv[1]))),  # type: ignore[arg-type]
        )
    raise PrimitiveError(f"Unknown primitive record {dict(data)!r}")


class GroupStore:
    """Named, ordered primitive groups. Absent groups read as empty."""

    __slots__ = ("_groups",)

    def __init__(self, groups: Optional[Mapping[str, Iterable[Primitive]]] = None) -> None:
        self._groups: dict[str, tuple[Primitive, ...]] = {}
        for name, primitives in (groups or {}).items():
            self._groups[_check_name(name)] = tuple(primitives)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroupStore):
            return NotImplemented
        return self._groups == other._groups

    def __repr__(self) -> str:
        sizes = ", ".join(f"{k}={len(v)}" for k, v in self._groups.items())
        return f"GroupStore({sizes})"

    def __iter__(self) -> Iterator[str]:
        return iter(self._groups)

    def get(self, name: str) -> tuple[Primitive, ...]:
        return self._groups.get(name, ())

    def names(self) -> list[str]:
        return list(self._groups)

    def total(self) -> int:
        return sum(len(v) for v in self._groups.values())

    def without(self, names: Iterable[str]) -> "GroupStore":
        drop = set(names)
        return GroupStore({k: v for k, v in self._groups.items() if k not in drop})

    def appended(self, name: str, primitives: Iterable[Primitive]) -> "GroupStore":
        groups = dict(self._groups)
        groups[_check_name(name)] = groups.get(name, ()) + tuple(primitives)
        return GroupStore(groups)

    def to_dict(self) -> dict[str, list[dict[str, Any]]]:
        return {name: [p.to_dict() for p in prims] for name, prims in self._groups.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Iterable[Mapping[str, Any]]]) -> "GroupStore":
        return cls({name: [primitive_from_dict(p) for p in prims] for name, prims in data.items()})

    def dumps(self) -> str:
        """Canonical JSON text, used for byte-exact replay comparisons."""
        return json.dumps(self.to_dict(), separators=(",", ":"), allow_nan=False)


def _check_name(name: str) -> str:
    if not isinstance(name, str) or not name:
        raise ProcgenError(f"Group names must be non-empty strings, got {name!r}")
    return name
