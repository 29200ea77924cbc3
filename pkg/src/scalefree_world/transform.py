"""
Transform algebra and precision-safe relative transforms.

Matrices follow the row-vector convention: a point ``p`` maps as ``p @ M`` and
the translation sits in the bottom row. A node's world matrix places it inside
its parent (``W = scale(S) @ rotation(R) @ translation(P)``), with ``P`` in
parent node units. Relative transforms between nodes are only ever composed
through the subchain below their nearest common ancestor, so absolute
astronomical coordinates never enter a 64-bit product.
"""

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Protocol, Sequence

import numpy as np

from .errors import EngineError
from .utils import setup_logger

logger = setup_logger(__name__)

# |1 - |q|^2| up to this is renormalized, beyond it rejected
QUATERNION_RENORMALIZE_TOLERANCE = 1e-6
DEFAULT_MAX_NESTING = 64


class TransformError(EngineError):
    """Base exception for transform algebra."""

    pass


class InvalidRotationError(TransformError):
    """Exception for quaternions too far from unit length."""

    pass


class InvalidScaleError(TransformError):
    """Exception for zero or negative scale components."""

    pass


class ChainBoundsError(TransformError):
    """Exception for hierarchy levels outside a transform chain."""

    pass


class NoCommonAncestorError(TransformError):
    """Exception for nodes that do not share a world node."""

    pass


@dataclass(frozen=True)
class Vec3:
    """Three-component 64-bit vector; units depend on context."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise TransformError(f"Non-finite vector component in ({self.x}, {self.y}, {self.z})")

    @classmethod
    def zero(cls) -> "Vec3":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def one(cls) -> "Vec3":
        return cls(1.0, 1.0, 1.0)

    @classmethod
    def from_iterable(cls, values: Sequence[float]) -> "Vec3":
        if len(values) != 3:
            raise TransformError(f"Expected 3 components, got {len(values)}")
        return cls(float(values[0]), float(values[1]), float(values[2]))

    def __iter__(self) -> Iterator[float]:
        yield self.x
        yield self.y
        yield self.z

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def __mul__(self, factor: float) -> "Vec3":
        return Vec3(self.x * factor, self.y * factor, self.z * factor)

    __rmul__ = __mul__

    def __neg__(self) -> "Vec3":
        return Vec3(-self.x, -self.y, -self.z)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def cross(self, other: "Vec3") -> "Vec3":
        return Vec3(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )

    def length(self) -> float:
        return math.sqrt(self.dot(self))

    def normalized(self) -> "Vec3":
        n = self.length()
        if n == 0.0:
            raise TransformError("Cannot normalize a zero vector")
        return self * (1.0 / n)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.z]


@dataclass(frozen=True)
class Quaternion:
    """Rotation quaternion ``(x, y, z, w)``."""

    x: float
    y: float
    z: float
    w: float

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(0.0, 0.0, 0.0, 1.0)

    @classmethod
    def from_iterable(cls, values: Sequence[float]) -> "Quaternion":
        if len(values) != 4:
            raise TransformError(f"Expected 4 quaternion components, got {len(values)}")
        return cls(float(values[0]), float(values[1]), float(values[2]), float(values[3]))

    @classmethod
    def from_axis_angle(cls, axis: Vec3, angle: float) -> "Quaternion":
        unit = axis.normalized()
        half = 0.5 * angle
        s = math.sin(half)
        return cls(unit.x * s, unit.y * s, unit.z * s, math.cos(half))

    @classmethod
    def from_rotation_matrix(cls, rotation: np.ndarray) -> "Quaternion":
        """
        Convert a row-convention 3x3 rotation block back to a quaternion.

        Inverse of :func:`rotation_matrix` for proper rotations.
        """
        # The row-convention block is the transpose of the usual column form
        m = np.asarray(rotation, dtype=np.float64)[:3, :3].T
        trace = m[0, 0] + m[1, 1] + m[2, 2]
        if trace > 0.0:
            s = 2.0 * math.sqrt(trace + 1.0)
            w = 0.25 * s
            x = (m[2, 1] - m[1, 2]) / s
            y = (m[0, 2] - m[2, 0]) / s
            z = (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
        return cls(float(x), float(y), float(z), float(w)).as_rotation()

    def __iter__(self) -> Iterator[float]:
        yield self.x
        yield self.y
        yield self.z
        yield self.w

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        """
        Hamilton product.

        ``rotation_matrix(a) @ rotation_matrix(b) == rotation_matrix(b * a)``.
        """
        x1, y1, z1, w1 = self
        x2, y2, z2, w2 = other
        return Quaternion(
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        )

    def norm_squared(self) -> float:
        return self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w

    def conjugate(self) -> "Quaternion":
        return Quaternion(-self.x, -self.y, -self.z, self.w)

    def as_rotation(self) -> "Quaternion":
        """
        Return this quaternion as a unit rotation.

        Raises:
            InvalidRotationError: If the quaternion is too far from unit length
        """
        n2 = self.norm_squared()
        if not math.isfinite(n2) or abs(1.0 - n2) > QUATERNION_RENORMALIZE_TOLERANCE:
            raise InvalidRotationError(
                f"Quaternion ({self.x}, {self.y}, {self.z}, {self.w}) is not a unit rotation"
            )
        if n2 == 1.0:
            return self
        inv = 1.0 / math.sqrt(n2)
        return Quaternion(self.x * inv, self.y * inv, self.z * inv, self.w * inv)

    def rotate(self, v: Vec3) -> Vec3:
        """Rotate a vector (row-vector convention, same as ``v @ rotation_matrix(q)``)."""
        out = v.as_array() @ rotation_matrix(self)[:3, :3]
        return Vec3.from_iterable(out)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.z, self.w]


class Matrix4:
    """4x4 64-bit matrix in row-vector convention."""

    __slots__ = ("_m",)

    def __init__(self, values: np.ndarray | Sequence[Sequence[float]]) -> None:
        m = np.array(values, dtype=np.float64)
        if m.shape != (4, 4):
            raise TransformError(f"Matrix4 requires a 4x4 grid, got {m.shape}")
        m.setflags(write=False)
        self._m = m

    @classmethod
    def identity(cls) -> "Matrix4":
        return cls(np.eye(4))

    @classmethod
    def translation(cls, p: Vec3) -> "Matrix4":
        m = np.eye(4)
        m[3, :3] = (p.x, p.y, p.z)
        return cls(m)

    @classmethod
    def scaling(cls, s: Vec3 | float) -> "Matrix4":
        if isinstance(s, Vec3):
            return cls(np.diag([s.x, s.y, s.z, 1.0]))
        return cls(np.diag([s, s, s, 1.0]))

    @property
    def array(self) -> np.ndarray:
        """Read-only view of the underlying array."""
        return self._m

    @property
    def linear(self) -> np.ndarray:
        """Upper-left 3x3 block."""
        return self._m[:3, :3]

    @property
    def translation_row(self) -> Vec3:
        return Vec3.from_iterable(self._m[3, :3])

    def __matmul__(self, other: "Matrix4") -> "Matrix4":
        return Matrix4(self._m @ other._m)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Matrix4):
            return NotImplemented
        return bool(np.array_equal(self._m, other._m))

    def __hash__(self) -> int:
        return hash(self._m.tobytes())

    def __repr__(self) -> str:
        rows = "; ".join(" ".join(f"{v:.17g}" for v in row) for row in self._m)
        return f"Matrix4([{rows}])"

    def transform_point(self, p: Vec3) -> Vec3:
        return Vec3.from_iterable(p.as_array() @ self._m[:3, :3] + self._m[3, :3])

    def transform_direction(self, v: Vec3) -> Vec3:
        return Vec3.from_iterable(v.as_array() @ self._m[:3, :3])

    def determinant(self) -> float:
        return float(np.linalg.det(self._m))

    def affine_inverse(self) -> "Matrix4":
        """
        Invert an affine matrix without general 4x4 elimination.

        A block with orthogonal rows (``diag(s) @ R``) is inverted in closed
        form as ``R.T @ diag(1/s)``; sheared blocks fall back to a 3x3 solve.
        """
        a = self._m[:3, :3]
        gram = a @ a.T
        row_norms2 = np.diag(gram)
        if np.any(row_norms2 <= 0.0):
            raise TransformError("Singular affine matrix")

        off_diagonal = gram - np.diag(row_norms2)
        if np.max(np.abs(off_diagonal)) <= 1e-12 * float(np.max(row_norms2)):
            inv_linear = a.T / row_norms2
        else:
            inv_linear = np.linalg.inv(a)

        inv = np.eye(4)
        inv[:3, :3] = inv_linear
        inv[3, :3] = -self._m[3, :3] @ inv_linear
        return Matrix4(inv)

    def to_rows(self) -> list[list[float]]:
        """Row-major nested lists for debug dumps."""
        return [[float(v) for v in row] for row in self._m]


def rotation_matrix(q: Quaternion) -> np.ndarray:
    """Quaternion to 4x4 rotation matrix exactly as the row-vector expression reads."""
    x, y, z, w = q
    return np.array(
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y + z * w), 2.0 * (z * x - y * w), 0.0],
            [2.0 * (x * y - z * w), 1.0 - 2.0 * (z * z + x * x), 2.0 * (y * z + x * w), 0.0],
            [2.0 * (z * x + y * w), 2.0 * (y * z - x * w), 1.0 - 2.0 * (y * y + x * x), 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
        dtype=np.float64,
    )


def compose_world_matrix(scale: Vec3, rotation: Quaternion, position: Vec3) -> Matrix4:
    """
    Compose a node world matrix ``W = scale(S) @ rotation(R) @ translation(P)``.

    Raises:
        InvalidScaleError: If any scale component is not positive
        InvalidRotationError: If the rotation is not a unit quaternion
    """
    if scale.x <= 0.0 or scale.y <= 0.0 or scale.z <= 0.0:
        raise InvalidScaleError(f"Scale components must be positive, got {scale.to_list()}")

    unit = rotation.as_rotation()
    if unit is not rotation:
        logger.debug(f"Renormalized rotation {rotation.to_list()}")

    s = Matrix4.scaling(scale)
    r = Matrix4(rotation_matrix(unit))
    t = Matrix4.translation(position)
    return s @ r @ t


@dataclass(frozen=True)
class ChainLink:
    """
    One level of a transform chain.

    ``world`` places the level below inside this level (identity at level 0)
    and ``size`` is this level's absolute size in meters per node unit.
    """

    world: Matrix4
    size: float


@dataclass(frozen=True)
class TransformChain:
    """Levels from a node (index 0) up to an ancestor."""

    links: tuple[ChainLink, ...]
    max_nesting: int = field(default=DEFAULT_MAX_NESTING, compare=False)

    def __post_init__(self) -> None:
        if not self.links:
            raise ChainBoundsError("A transform chain needs at least the node level")
        for index, link in enumerate(self.links):
            if not link.size > 0.0:
                raise InvalidScaleError(f"Chain level {index} has non-positive size {link.size}")
        if self.length > self.max_nesting:
            raise ChainBoundsError(
                f"Chain spans {self.length} levels, above the nesting limit {self.max_nesting}"
            )

    @property
    def length(self) -> int:
        """Number of levels above the node."""
        return len(self.links) - 1

    def _check_level(self, level: int) -> None:
        if not 0 <= level <= self.length:
            raise ChainBoundsError(f"Level {level} outside chain of length {self.length}")


def hierarchical_matrix(chain: TransformChain, level: int) -> Matrix4:
    """
    Accumulate ``H_i = H_{i-1} @ D(S_{i-1}/S_i) @ W_i`` with ``H_0 = Id``.

    ``D`` is a uniform scale matrix; ``H_level`` maps node-local points into
    the units and frame of chain level ``level``.

    Raises:
        ChainBoundsError: If the level is outside the chain
    """
    chain._check_level(level)
    h = np.eye(4)
    for i in range(1, level + 1):
        prev, link = chain.links[i - 1], chain.links[i]
        ratio = prev.size / link.size
        step = link.world.array.copy()
        step[:3, :3] *= ratio
        h = h @ step
    return Matrix4(h)


def inverse_hierarchical_matrix(chain: TransformChain, level: int) -> Matrix4:
    """Inverse of :func:`hierarchical_matrix`, built from closed-form factor inverses."""
    chain._check_level(level)
    inv = np.eye(4)
    for i in range(1, level + 1):
        prev, link = chain.links[i - 1], chain.links[i]
        ratio = prev.size / link.size
        step_inv = link.world.affine_inverse().array.copy()
        step_inv[:, :3] /= ratio
        inv = step_inv @ inv
    return Matrix4(inv)


class Frame(Protocol):
    """What transform-core needs from a scene node."""

    @property
    def parent(self) -> Optional["Frame"]: ...

    @property
    def absolute_size(self) -> float: ...

    def world_matrix(self) -> Matrix4: ...


def find_common_ancestor(a: Frame, b: Frame) -> tuple[Frame, int, int]:
    """
    Find the deepest node on both root paths.

    Returns:
        tuple: ``(ancestor, depth_a, depth_b)`` with each argument's distance to it

    Raises:
        NoCommonAncestorError: If the nodes live in different worlds
    """
    distances: dict[int, int] = {}
    node: Optional[Frame] = a
    depth = 0
    while node is not None:
        distances[id(node)] = depth
        node = node.parent
        depth += 1

    node = b
    depth = 0
    while node is not None:
        found = distances.get(id(node))
        if found is not None:
            return node, found, depth
        node = node.parent
        depth += 1

    raise NoCommonAncestorError("Nodes do not share a world node")


def chain_to_ancestor(
    node: Frame, ancestor: Frame, max_nesting: int = DEFAULT_MAX_NESTING
) -> TransformChain:
    """Build the transform chain from ``node`` up to ``ancestor``."""
    links = [ChainLink(Matrix4.identity(), node.absolute_size)]
    current = node
    while current is not ancestor:
        parent = current.parent
        if parent is None:
            raise NoCommonAncestorError("Ancestor is not on the node's root path")
        links.append(ChainLink(current.world_matrix(), parent.absolute_size))
        current = parent
    return TransformChain(tuple(links), max_nesting=max_nesting)


def local_world_matrix(current: Frame, target: Frame) -> Matrix4:
    """
    Transform mapping target-local coordinates into the current node's frame.

    Both halves are accumulated from the nearest common ancestor ``T`` down:
    ``LW = H_target @ H_current^-1`` (row-vector order).

    Raises:
        NoCommonAncestorError: If the nodes live in different worlds
    """
    top, depth_current, depth_target = find_common_ancestor(current, target)
    if depth_current == 0 and depth_target == 0:
        return Matrix4.identity()

    h_target = hierarchical_matrix(chain_to_ancestor(target, top), depth_target)
    h_current_inv = inverse_hierarchical_matrix(
        chain_to_ancestor(current, top), depth_current
    )
    return h_target @ h_current_inv
