"""
Built-in operation types.

Create ops append new primitives; Extend ops derive new primitives from a
source group; Modify ops rewrite a group in place (``out`` defaults to
``from``); Select ops repartition primitives into a selected and a rest group
without creating or altering any; Utility ops run nested op lists.
"""

import math
from typing import Iterator, Optional, Sequence

import numpy as np

from ..transform import Quaternion, Vec3
from .primitives import GroupStore, Path, Point, Primitive, ProcgenError, Surface, is_convex
from .program import ExecutionContext, Op, ParamSpec, register_operation

Sources = list[tuple[Primitive, ...]]

AXES = {"x": 0, "y": 1, "z": 2}


class DegenerateInsetError(ProcgenError):
    """Exception for insets that collapse or cannot be offset."""

    pass


def _vec(values: np.ndarray) -> Vec3:
    return Vec3(float(values[0]), float(values[1]), float(values[2]))


def _surface(points: np.ndarray, like: Optional[Surface] = None) -> Surface:
    if like is None:
        return Surface.from_points([_vec(p) for p in points])
    return Surface.from_points([_vec(p) for p in points], like.material, like.uv_matrix)


def _map_points(primitive: Primitive, fn) -> Primitive:  # type: ignore[no-untyped-def]
    """Apply ``fn`` (N x 3 array to N x 3 array) to every point of a primitive."""
    if isinstance(primitive, Point):
        return Point(_vec(fn(primitive.position.as_array()[None, :])[0]))
    if isinstance(primitive, Path):
        moved = fn(primitive.as_array())
        return Path(tuple(_vec(p) for p in moved), primitive.loop)
    moved = fn(primitive.as_array())
    return _surface(moved, primitive)


# ---------------------------------------------------------------------------
# Create


@register_operation(
    "create_rect",
    "create",
    sources=(0, 0),
    params={
        "width": ParamSpec("number", required=True, minimum=0.0, exclusive_minimum=True),
        "height": ParamSpec("number", required=True, minimum=0.0, exclusive_minimum=True),
        "center": ParamSpec("vector", default=Vec3(0.0, 0.0, 0.0)),
        "material": ParamSpec("string", default="default"),
    },
)
def create_rect(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    """Axis-aligned rectangle in the XY plane, counter-clockwise, normal +Z."""
    hw = 0.5 * op.params["width"]
    hh = 0.5 * op.params["height"]
    c = op.params["center"].as_array()
    corners = np.array([[-hw, -hh, 0.0], [hw, -hh, 0.0], [hw, hh, 0.0], [-hw, hh, 0.0]]) + c
    surface = Surface.from_points([_vec(p) for p in corners], op.params["material"])
    return [[surface]]


@register_operation(
    "create_ngon",
    "create",
    sources=(0, 0),
    params={
        "sides": ParamSpec("integer", required=True, minimum=3),
        "radius": ParamSpec("number", required=True, minimum=0.0, exclusive_minimum=True),
        "center": ParamSpec("vector", default=Vec3(0.0, 0.0, 0.0)),
        "material": ParamSpec("string", default="default"),
    },
)
def create_ngon(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    """Regular polygon with circumradius ``radius`` in the XY plane, first vertex on +X."""
    n = op.params["sides"]
    angles = 2.0 * np.pi * np.arange(n) / n
    r = op.params["radius"]
    points = np.stack([r * np.cos(angles), r * np.sin(angles), np.zeros(n)], axis=1)
    points += op.params["center"].as_array()
    return [[Surface.from_points([_vec(p) for p in points], op.params["material"])]]


@register_operation(
    "create_path",
    "create",
    sources=(0, 0),
    params={
        "points": ParamSpec("points", required=True),
        "loop": ParamSpec("bool", default=False),
    },
)
def create_path(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    return [[Path(tuple(op.params["points"]), op.params["loop"])]]


@register_operation(
    "create_point_grid",
    "create",
    sources=(0, 0),
    params={
        "nx": ParamSpec("integer", required=True, minimum=1),
        "ny": ParamSpec("integer", required=True, minimum=1),
        "spacing": ParamSpec("number", default=1.0, minimum=0.0, exclusive_minimum=True),
        "center": ParamSpec("vector", default=Vec3(0.0, 0.0, 0.0)),
        "jitter": ParamSpec("number", default=0.0, minimum=0.0),
    },
)
def create_point_grid(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    """``nx`` by ``ny`` points in the XY plane, row-major, optionally jittered."""
    nx, ny = op.params["nx"], op.params["ny"]
    spacing = op.params["spacing"]
    xs = (np.arange(nx) - 0.5 * (nx - 1)) * spacing
    ys = (np.arange(ny) - 0.5 * (ny - 1)) * spacing
    gx, gy = np.meshgrid(xs, ys)
    points = np.stack([gx.ravel(), gy.ravel(), np.zeros(nx * ny)], axis=1)
    jitter = op.params["jitter"]
    if jitter > 0.0:
        offsets = ctx.rng("jitter").uniform(-jitter, jitter, size=(nx * ny, 2))
        points[:, :2] += offsets
    points += op.params["center"].as_array()
    return [[Point(_vec(p)) for p in points]]


# ---------------------------------------------------------------------------
# Extend


def _cyclic_from(start: int, count: int) -> Iterator[int]:
    for step in range(count):
        yield (start + step) % count


def _offset_corner(
    offsets: np.ndarray, directions: np.ndarray, inward: np.ndarray, a: int, b: int
) -> np.ndarray:
    """Intersection of offset edge lines ``a`` and ``b`` in the surface plane."""
    denom = float(directions[a] @ inward[b])
    if abs(denom) <= 1e-12:
        if float(directions[a] @ directions[b]) > 0.0:
            # Collinear edges share one offset line
            return offsets[b]
        raise DegenerateInsetError("Inset collapses the surface onto a line")
    s = float((offsets[b] - offsets[a]) @ inward[b]) / denom
    return offsets[a] + s * directions[a]


def inset_surface(
    surface: Surface, amount: float, extrude: float = 0.0
) -> tuple[Surface, list[Surface]]:
    """
    Offset every edge of a convex surface inward by ``amount`` and lift the
    result ``extrude`` along the normal.

    Edges that shrink to nothing before ``amount`` is reached drop out and
    their neighbours' offset lines meet directly; the side polygon of such an
    edge is a triangle.

    Returns:
        tuple: The centre surface and one side polygon per original edge,
        ordered ``(p_i, p_i+1, p'_i+1, p'_i)``

    Raises:
        DegenerateInsetError: If the surface is degenerate or non-convex, or
            ``amount`` reaches the polygon's inradius
    """
    points = surface.as_array()
    normal = surface.normal()
    if normal is None:
        raise DegenerateInsetError("Cannot inset a zero-area surface")
    if not is_convex(points, normal):
        raise DegenerateInsetError("Inset needs a convex surface")

    count = len(points)
    edges = np.roll(points, -1, axis=0) - points
    lengths = np.linalg.norm(edges, axis=1)
    if np.any(lengths == 0.0):
        raise DegenerateInsetError("Cannot inset a surface with repeated vertices")
    directions = edges / lengths[:, None]
    inward = np.cross(normal, directions)

    if amount == 0.0:
        alive = list(range(count))
        starts = {i: points[i] for i in alive}
    else:
        offsets = points + amount * inward
        tolerance = 1e-12 * float(np.max(lengths))
        alive = list(range(count))
        while True:
            if len(alive) < 3:
                raise DegenerateInsetError(
                    f"Inset amount {amount} reaches the surface's inradius"
                )
            corners = [
                _offset_corner(offsets, directions, inward, alive[k - 1], alive[k])
                for k in range(len(alive))
            ]
            spans = [
                float((corners[(k + 1) % len(alive)] - corners[k]) @ directions[line])
                for k, line in enumerate(alive)
            ]
            shortest = int(np.argmin(spans))
            if spans[shortest] > tolerance:
                break
            del alive[shortest]
        starts = dict(zip(alive, corners))

    # Vertex i starts the first surviving edge at or after edge i
    owner = [next(k for k in _cyclic_from(i, count) if k in starts) for i in range(count)]
    lift = extrude * normal
    inner = [starts[owner[i]] + lift for i in range(count)]

    center = _surface(np.array([starts[line] + lift for line in alive]), surface)
    sides = []
    for i in range(count):
        j = (i + 1) % count
        if owner[i] == owner[j]:
            ring = [points[i], points[j], inner[i]]
        else:
            ring = [points[i], points[j], inner[j], inner[i]]
        sides.append(_surface(np.array(ring), surface))
    return center, sides


@register_operation(
    "inset",
    "extend",
    consumes=True,
    outputs=(1, 2),
    params={
        "amount": ParamSpec("number", required=True, minimum=0.0),
        "extrude": ParamSpec("number", default=0.0),
    },
)
def inset(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    """
    Inset every surface of the source group.

    Centres go to the first output, side quads to the second (dropped when
    only one output is given). Non-surface primitives pass through to the
    first output.
    """
    centers: list[Primitive] = []
    sides: list[Primitive] = []
    for primitive in sources[0]:
        if not isinstance(primitive, Surface):
            centers.append(primitive)
            continue
        center, ring = inset_surface(primitive, op.params["amount"], op.params["extrude"])
        centers.append(center)
        sides.extend(ring)
    return [centers, sides][: len(op.outputs)]


@register_operation(
    "extrude",
    "extend",
    consumes=True,
    outputs=(1, 3),
    params={"distance": ParamSpec("number", required=True)},
)
def extrude(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    """
    Prism along each surface normal.

    Outputs: caps, side quads and (optionally) the base with reversed winding.
    """
    caps: list[Primitive] = []
    sides: list[Primitive] = []
    bases: list[Primitive] = []
    for primitive in sources[0]:
        if not isinstance(primitive, Surface):
            caps.append(primitive)
            continue
        normal = primitive.normal()
        if normal is None:
            raise ProcgenError("Cannot extrude a zero-area surface")
        points = primitive.as_array()
        top = points + op.params["distance"] * normal
        caps.append(_surface(top, primitive))
        count = len(points)
        for i in range(count):
            j = (i + 1) % count
            sides.append(_surface(np.array([points[i], points[j], top[j], top[i]]), primitive))
        bases.append(_surface(points[::-1], primitive))
    return [caps, sides, bases][: len(op.outputs)]


def _path_points(primitive: Primitive) -> tuple[np.ndarray, bool]:
    if isinstance(primitive, Path):
        return primitive.as_array(), primitive.loop
    if isinstance(primitive, Surface):
        return primitive.as_array(), True
    raise ProcgenError("loft needs paths or surfaces")


@register_operation(
    "loft",
    "extend",
    sources=(2, 2),
    params={"material": ParamSpec("string", default="default")},
)
def loft(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    """Skin pairs of paths (matched by index) with quads; closed paths close the skin."""
    lower, upper = sources
    if len(lower) != len(upper):
        raise ProcgenError(f"loft groups differ in size: {len(lower)} and {len(upper)}")
    quads: list[Primitive] = []
    for a, b in zip(lower, upper):
        pa, loop_a = _path_points(a)
        pb, loop_b = _path_points(b)
        if len(pa) != len(pb):
            raise ProcgenError(f"loft paths differ in point count: {len(pa)} and {len(pb)}")
        count = len(pa) if (loop_a and loop_b) else len(pa) - 1
        for i in range(count):
            j = (i + 1) % len(pa)
            quad = np.array([pa[i], pa[j], pb[j], pb[i]])
            quads.append(Surface.from_points([_vec(p) for p in quad], op.params["material"]))
    return [quads]


@register_operation(
    "mirror",
    "extend",
    params={
        "axis": ParamSpec("string", default="x", choices=("x", "y", "z")),
        "offset": ParamSpec("number", default=0.0),
    },
)
def mirror(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    """Reflected copies across the plane ``axis = offset``; surfaces keep facing outward."""
    axis = AXES[op.params["axis"]]
    offset = op.params["offset"]

    def reflect(points: np.ndarray) -> np.ndarray:
        out = points.copy()
        out[:, axis] = 2.0 * offset - out[:, axis]
        return out

    copies: list[Primitive] = []
    for primitive in sources[0]:
        if isinstance(primitive, Surface):
            copies.append(_surface(reflect(primitive.as_array())[::-1], primitive))
        else:
            copies.append(_map_points(primitive, reflect))
    return [copies]


# ---------------------------------------------------------------------------
# Modify


@register_operation(
    "translate",
    "modify",
    consumes=True,
    out_defaults_to_from=True,
    params={"offset": ParamSpec("vector", required=True)},
)
def translate(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    offset = op.params["offset"].as_array()
    return [[_map_points(p, lambda pts: pts + offset) for p in sources[0]]]


@register_operation(
    "rotate",
    "modify",
    consumes=True,
    out_defaults_to_from=True,
    params={
        "axis": ParamSpec("vector", required=True),
        "angle": ParamSpec("number", required=True),
        "pivot": ParamSpec("vector", default=Vec3(0.0, 0.0, 0.0)),
    },
)
def rotate(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    """Rotate by ``angle`` radians about ``axis`` through ``pivot``."""
    q = Quaternion.from_axis_angle(op.params["axis"], op.params["angle"])
    pivot = op.params["pivot"]

    def turn(points: np.ndarray) -> np.ndarray:
        return np.array([(q.rotate(_vec(p) - pivot) + pivot).as_array() for p in points])

    return [[_map_points(p, turn) for p in sources[0]]]


@register_operation(
    "scale",
    "modify",
    consumes=True,
    out_defaults_to_from=True,
    params={
        "factor": ParamSpec("vector", required=True),
        "pivot": ParamSpec("vector", default=Vec3(0.0, 0.0, 0.0)),
    },
)
def scale(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    factor = op.params["factor"].as_array()
    if np.any(factor <= 0.0):
        raise ProcgenError(f"Scale factors must be positive, got {factor.tolist()}")
    pivot = op.params["pivot"].as_array()
    return [[_map_points(p, lambda pts: (pts - pivot) * factor + pivot) for p in sources[0]]]


@register_operation(
    "set_material",
    "modify",
    consumes=True,
    out_defaults_to_from=True,
    params={"material": ParamSpec("string", required=True)},
)
def set_material(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    material = op.params["material"]
    return [
        [
            Surface(p.edge, material, p.uv_matrix) if isinstance(p, Surface) else p
            for p in sources[0]
        ]
    ]


@register_operation(
    "set_uv",
    "modify",
    consumes=True,
    out_defaults_to_from=True,
    params={"matrix": ParamSpec("matrix", required=True)},
)
def set_uv(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    matrix = op.params["matrix"]
    return [
        [
            Surface(p.edge, p.material, matrix) if isinstance(p, Surface) else p
            for p in sources[0]
        ]
    ]


# ---------------------------------------------------------------------------
# Select


def _partition(  # type: ignore[no-untyped-def]
    primitives: Sequence[Primitive], keep
) -> list[list[Primitive]]:
    selected: list[Primitive] = []
    rest: list[Primitive] = []
    for index, primitive in enumerate(primitives):
        (selected if keep(index, primitive) else rest).append(primitive)
    return [selected, rest]


@register_operation(
    "filter_by_normal",
    "select",
    consumes=True,
    outputs=(2, 2),
    params={
        "direction": ParamSpec("vector", required=True),
        "min_dot": ParamSpec("number", default=0.5),
    },
)
def filter_by_normal(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    """Surfaces whose unit normal has ``dot(normal, direction) >= min_dot`` are selected."""
    direction = op.params["direction"].normalized().as_array()
    min_dot = op.params["min_dot"]

    def keep(index: int, primitive: Primitive) -> bool:
        if not isinstance(primitive, Surface):
            return False
        normal = primitive.normal()
        return normal is not None and float(normal @ direction) >= min_dot

    return _partition(sources[0], keep)


@register_operation(
    "filter_by_area",
    "select",
    consumes=True,
    outputs=(2, 2),
    params={
        "min": ParamSpec("number", default=0.0, minimum=0.0),
        "max": ParamSpec("number", default=math.inf),
    },
)
def filter_by_area(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    low, high = op.params["min"], op.params["max"]
    return _partition(
        sources[0],
        lambda _, p: isinstance(p, Surface) and low <= p.area() <= high,
    )


@register_operation(
    "split_by_index",
    "select",
    consumes=True,
    outputs=(2, 2),
    params={
        "every": ParamSpec("integer", default=2, minimum=1),
        "offset": ParamSpec("integer", default=0, minimum=0),
    },
)
def split_by_index(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    every, offset = op.params["every"], op.params["offset"]
    return _partition(sources[0], lambda index, _: index % every == offset % every)


@register_operation("group_rename", "select", consumes=True, sources=(1, None))
def group_rename(op: Op, sources: Sources, ctx: ExecutionContext) -> list[list[Primitive]]:
    """Move every primitive of the source groups, in order, into one group."""
    return [[p for group in sources for p in group]]


# ---------------------------------------------------------------------------
# Utility


@register_operation(
    "repeat",
    "utility",
    sources=(0, 0),
    outputs=(0, 0),
    body=True,
    store_level=True,
    params={"count": ParamSpec("integer", required=True, minimum=0)},
)
def repeat(op: Op, store: GroupStore, ctx: ExecutionContext) -> GroupStore:
    """Run the nested ops ``count`` times; each pass draws from its own streams."""
    if op.condition is not None and not op.condition.holds(store, ctx.rng("when")):
        return store
    for iteration in range(op.params["count"]):
        store = ctx.child(iteration).run(op.body, store)
    return store


@register_operation(
    "if",
    "utility",
    sources=(0, 0),
    outputs=(0, 0),
    body=True,
    store_level=True,
)
def if_op(op: Op, store: GroupStore, ctx: ExecutionContext) -> GroupStore:
    """Run ``ops`` when the ``when`` condition holds, ``else`` otherwise."""
    assert op.condition is not None
    if op.condition.holds(store, ctx.rng("when")):
        return ctx.run(op.body, store)
    return ctx.child(len(op.body)).run(op.orelse, store)


@register_operation(
    "seed_fork",
    "utility",
    sources=(0, 0),
    outputs=(0, 0),
    body=True,
    store_level=True,
    params={"salt": ParamSpec("integer", default=0)},
)
def seed_fork(op: Op, store: GroupStore, ctx: ExecutionContext) -> GroupStore:
    """Run the nested ops with a seed derived from the current one and ``salt``."""
    if op.condition is not None and not op.condition.holds(store, ctx.rng("when")):
        return store
    return ctx.forked(op.params["salt"]).run(op.body, store)
