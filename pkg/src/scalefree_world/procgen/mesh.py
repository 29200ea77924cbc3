"""
Triangle meshes from surface groups, and OBJ export.
"""

from dataclasses import dataclass, field
from pathlib import Path as FilePath
from typing import Iterable, Sequence

import numpy as np

from ..utils import setup_logger
from .primitives import GroupStore, ProcgenError, Surface, is_convex, plane_frame

logger = setup_logger(__name__)


class TriangulationError(ProcgenError):
    """Exception for surfaces that cannot be triangulated."""

    def __init__(self, group: str, index: int, message: str) -> None:
        super().__init__(f"surface {index} of group '{group}': {message}")
        self.group = group
        self.index = index


@dataclass
class TriangleMesh:
    """
    Indexed triangle mesh.

    ``triangle_materials`` holds an index into ``materials`` per triangle.
    """

    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    uvs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    triangle_materials: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    materials: list[str] = field(default_factory=list)

    @property
    def triangle_count(self) -> int:
        return int(self.triangles.shape[0])

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(np.sum(self.triangle_areas()))

    def to_obj(self) -> str:
        """
        OBJ text: ``v``/``vt`` records in vertex order, then faces grouped by
        material in first-use order, one ``usemtl`` per material.
        """
        lines = ["# scalefree-world mesh"]
        lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in self.vertices.tolist())
        lines.extend(f"vt {u!r} {v!r}" for u, v in self.uvs.tolist())
        for material_index, name in enumerate(self.materials):
            rows = np.nonzero(self.triangle_materials == material_index)[0]
            if rows.size == 0:
                continue
            lines.append(f"usemtl {name}")
            for a, b, c in (self.triangles[rows] + 1).tolist():
                lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
        return "\n".join(lines) + "\n"

    def write_obj(self, path: FilePath | str) -> None:
        FilePath(path).write_text(self.to_obj(), encoding="utf-8")
        logger.info(f"Wrote {self.triangle_count} triangles to {path}")


def _segments_cross(p1: np.ndarray, p2: np.ndarray, q1: np.ndarray, q2: np.ndarray) -> bool:
    def orient(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
        return float((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return d1 * d2 < 0.0 and d3 * d4 < 0.0


def is_simple(loop: np.ndarray) -> bool:
    """True when no two non-adjacent edges of a 2D loop intersect."""
    n = len(loop)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(loop[i], loop[(i + 1) % n], loop[j], loop[(j + 1) % n]):
                return False
    return True


def _inside_triangle(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> bool:
    def cross(o: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
        return float((u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0]))

    return cross(a, b, p) >= 0.0 and cross(b, c, p) >= 0.0 and cross(c, a, p) >= 0.0


def ear_clip(loop: np.ndarray) -> list[tuple[int, int, int]]:
    """
    Triangulate a simple counter-clockwise 2D polygon by ear clipping.

    Raises:
        ValueError: If no ear can be found (the loop is not simple)
    """
    remaining = list(range(len(loop)))
    triangles: list[tuple[int, int, int]] = []
    while len(remaining) > 3:
        count = len(remaining)
        for k in range(count):
            i, j, m = remaining[(k - 1) % count], remaining[k], remaining[(k + 1) % count]
            a, b, c = loop[i], loop[j], loop[m]
            if (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]) <= 0.0:
                continue
            if any(
                _inside_triangle(loop[q], a, b, c)
                for q in remaining
                if q not in (i, j, m)
            ):
                continue
            triangles.append((i, j, m))
            del remaining[k]
            break
        else:
            raise ValueError("no ear found")
    triangles.append((remaining[0], remaining[1], remaining[2]))
    return triangles


def triangulate_surface(surface: Surface) -> list[tuple[int, int, int]]:
    """
    Triangle index triples into the surface's edge points, keeping its winding.

    Convex and zero-area surfaces are fanned from the first vertex; others are
    ear-clipped in the surface plane.
    """
    points = surface.as_array()
    count = len(points)
    fan = [(0, i, i + 1) for i in range(1, count - 1)]
    normal = surface.normal()
    if normal is None:
        return fan

    origin, u, v = plane_frame(points, normal)
    local = np.stack([(points - origin) @ u, (points - origin) @ v], axis=1)
    # Star polygons turn consistently, so convexity alone does not rule them out
    if not is_simple(local):
        raise ValueError("edge loop intersects itself")
    if is_convex(points, normal):
        return fan
    return ear_clip(local)


def surface_uvs(surface: Surface) -> np.ndarray:
    """Texture coordinates: the uv matrix applied to the surface's local 2D frame."""
    points = surface.as_array()
    normal = surface.normal()
    if normal is None:
        local = np.zeros((len(points), 2))
    else:
        origin, u, v = plane_frame(points, normal)
        local = np.stack([(points - origin) @ u, (points - origin) @ v], axis=1)
    homogeneous = np.concatenate([local, np.ones((len(points), 1))], axis=1)
    return homogeneous @ np.asarray(surface.uv_matrix, dtype=np.float64).T


def emit_mesh(store: GroupStore, groups: Sequence[str] | Iterable[str]) -> TriangleMesh:
    """
    Triangulate every surface of the named groups, in group then primitive order.

    Raises:
        ProcgenError: If a selected group holds a point or path
        TriangulationError: If a surface's edge loop intersects itself
    """
    vertices: list[np.ndarray] = []
    uvs: list[np.ndarray] = []
    triangles: list[np.ndarray] = []
    triangle_materials: list[int] = []
    materials: list[str] = []
    material_index: dict[str, int] = {}
    offset = 0

    for group in groups:
        for index, primitive in enumerate(store.get(group)):
            if not isinstance(primitive, Surface):
                raise ProcgenError(
                    f"group '{group}' holds a {type(primitive).__name__.lower()} at {index}; "
                    "only surfaces can be meshed"
                )
            try:
                faces = triangulate_surface(primitive)
            except ValueError as e:
                raise TriangulationError(group, index, str(e)) from e

            if primitive.material not in material_index:
                material_index[primitive.material] = len(materials)
                materials.append(primitive.material)

            vertices.append(primitive.as_array())
            uvs.append(surface_uvs(primitive))
            triangles.append(np.asarray(faces, dtype=np.int64).reshape(-1, 3) + offset)
            triangle_materials.extend([material_index[primitive.material]] * len(faces))
            offset += len(primitive.edge.points)

    if not vertices:
        return TriangleMesh()
    mesh = TriangleMesh(
        vertices=np.concatenate(vertices),
        uvs=np.concatenate(uvs),
        triangles=np.concatenate(triangles),
        triangle_materials=np.asarray(triangle_materials, dtype=np.int64),
        materials=materials,
    )
    logger.debug(f"Emitted {mesh.triangle_count} triangles from {len(materials)} materials")
    return mesh


def merge_meshes(meshes: Iterable[TriangleMesh]) -> TriangleMesh:
    """Concatenate meshes, sharing material slots by name."""
    materials: list[str] = []
    material_index: dict[str, int] = {}
    parts: list[TriangleMesh] = []
    remaps: list[np.ndarray] = []
    for mesh in meshes:
        remap = []
        for name in mesh.materials:
            if name not in material_index:
                material_index[name] = len(materials)
                materials.append(name)
            remap.append(material_index[name])
        parts.append(mesh)
        remaps.append(np.asarray(remap, dtype=np.int64))
    if not parts:
        return TriangleMesh()

    offsets = np.cumsum([0] + [len(mesh.vertices) for mesh in parts[:-1]])
    return TriangleMesh(
        vertices=np.concatenate([mesh.vertices for mesh in parts]),
        uvs=np.concatenate([mesh.uvs for mesh in parts]),
        triangles=np.concatenate(
            [mesh.triangles + offset for mesh, offset in zip(parts, offsets)]
        ),
        triangle_materials=np.concatenate(
            [
                remap[mesh.triangle_materials] if len(remap) else mesh.triangle_materials
                for mesh, remap in zip(parts, remaps)
            ]
        ),
        materials=materials,
    )
