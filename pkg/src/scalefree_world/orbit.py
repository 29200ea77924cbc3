"""
Orbital component: Keplerian placement of a node around its parent.

The mean rate and the position update follow the engine's printed formulas
(mass product under the root, fixed-point anomaly loop starting at the phase),
not textbook two-body mechanics.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .config import EngineConfig
from .errors import EngineError
from .scene import Component, ComponentError, ComponentKind, Node, register_component_codec
from .transform import Quaternion, Vec3
from .utils import setup_logger

logger = setup_logger(__name__)

GRAVITATIONAL_CONSTANT = EngineConfig.DEFAULT_GRAVITATIONAL_CONSTANT
ANOMALY_EPSILON = EngineConfig.DEFAULT_ANOMALY_EPSILON
ANOMALY_MAX_ITERATIONS = EngineConfig.DEFAULT_ANOMALY_MAX_ITERATIONS
TWO_PI = 2.0 * math.pi


class OrbitError(EngineError):
    """Base exception for orbital mechanics."""

    pass


class OrbitDomainError(OrbitError):
    """Exception for orbital inputs outside their domain."""

    pass


class AnomalyConvergenceError(OrbitError):
    """Exception raised when the corrected-anomaly loop hits its iteration cap."""

    def __init__(self, e: float, t_hat: float, anomaly: float, delta: float) -> None:
        super().__init__(
            f"Corrected anomaly did not converge for e={e}, t_hat={t_hat} "
            f"(last E={anomaly}, D={delta})"
        )
        self.e = e
        self.t_hat = t_hat
        self.anomaly = anomaly
        self.delta = delta


def mean_orbital_rate(G: float, m_node: float, m_parent: float, a: float) -> float:
    """
    Average orbital rate ``sqrt(G * m_node * m_parent / a**3)``, as printed.

    Raises:
        OrbitDomainError: If any input is not positive
    """
    for name, value in (("G", G), ("m_node", m_node), ("m_parent", m_parent), ("a", a)):
        if not (value > 0.0 and math.isfinite(value)):
            raise OrbitDomainError(f"{name} must be positive and finite, got {value}")
    return math.sqrt(G * m_node * m_parent / a**3)


@dataclass(frozen=True)
class OrbitParams:
    """Keplerian elements plus masses; ``v_orbital`` is cached at construction."""

    a: float
    b: float
    e: float
    p: float
    i: float
    l: float  # noqa: E741
    m_node: float
    m_parent: float
    v_orbital: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.e < 1.0:
            raise OrbitDomainError(f"Eccentricity must be in [0, 1), got {self.e}")
        if not (self.a >= self.b > 0.0):
            raise OrbitDomainError(f"Axes must satisfy a >= b > 0, got a={self.a}, b={self.b}")
        if not self.v_orbital > 0.0:
            raise OrbitDomainError(f"Orbital rate must be positive, got {self.v_orbital}")

    @classmethod
    def create(
        cls,
        *,
        a: float,
        e: float,
        m_node: float,
        m_parent: float,
        p: float = 0.0,
        i: float = 0.0,
        l: float = 0.0,  # noqa: E741
        b: Optional[float] = None,
        G: float = GRAVITATIONAL_CONSTANT,
    ) -> "OrbitParams":
        """Build parameters, deriving ``b = a*sqrt(1-e^2)`` when absent and the rate from masses."""
        if not 0.0 <= e < 1.0:
            raise OrbitDomainError(f"Eccentricity must be in [0, 1), got {e}")
        if b is None:
            b = a * math.sqrt(1.0 - e * e)
        return cls(
            a=a,
            b=b,
            e=e,
            p=p,
            i=i,
            l=l,
            m_node=m_node,
            m_parent=m_parent,
            v_orbital=mean_orbital_rate(G, m_node, m_parent, a),
        )

    @property
    def period(self) -> float:
        """Time for the phase to wrap once."""
        return TWO_PI / self.v_orbital

    def to_dict(self) -> dict[str, Any]:
        return {
            "a": self.a,
            "b": self.b,
            "e": self.e,
            "p": self.p,
            "i": self.i,
            "l": self.l,
            "m_node": self.m_node,
            "m_parent": self.m_parent,
            "v_orbital": self.v_orbital,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], G: float = GRAVITATIONAL_CONSTANT) -> "OrbitParams":
        """
        Read the orbit parameter record ``{a, b?, e, p, i, l, m_node, m_parent}``.

        A stored ``v_orbital`` is kept as is; otherwise it is derived with ``G``.
        """
        try:
            a = float(data["a"])
            e = float(data["e"])
            fields = {
                "p": float(data.get("p", 0.0)),
                "i": float(data.get("i", 0.0)),
                "l": float(data.get("l", 0.0)),
                "m_node": float(data["m_node"]),
                "m_parent": float(data["m_parent"]),
            }
            b = float(data["b"]) if data.get("b") is not None else None
        except (KeyError, TypeError, ValueError) as ex:
            raise OrbitDomainError(f"Malformed orbit parameters: {ex}") from ex

        if "v_orbital" in data:
            if b is None:
                b = a * math.sqrt(1.0 - e * e)
            return cls(a=a, b=b, e=e, v_orbital=float(data["v_orbital"]), **fields)
        return cls.create(a=a, e=e, b=b, G=G, **fields)


@dataclass(frozen=True)
class OrbitalState:
    t_hat: float
    position: Vec3


def orbital_phase(t: float, v_orbital: float) -> float:
    """Wrapped phase ``mod(t*V, 2pi) - pi`` in ``[-pi, pi)`` for any finite ``t``."""
    wrapped = math.fmod(t * v_orbital, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    if wrapped >= TWO_PI:
        wrapped = 0.0
    return wrapped - math.pi


def solve_corrected_anomaly(
    e: float,
    t_hat: float,
    epsilon: float = ANOMALY_EPSILON,
    max_iterations: int = ANOMALY_MAX_ITERATIONS,
) -> float:
    """
    Fixed-point loop ``E <- e*sin(E) - t_hat`` from ``E = t_hat`` until ``|dE| <= epsilon``.

    Raises:
        AnomalyConvergenceError: If the loop runs ``max_iterations`` times without converging
    """
    delta = 1.0
    anomaly = t_hat
    iterations = 0
    while delta > epsilon:
        if iterations >= max_iterations:
            raise AnomalyConvergenceError(e, t_hat, anomaly, delta)
        corrected = e * math.sin(anomaly) - t_hat
        delta = abs(corrected - anomaly)
        anomaly = corrected
        iterations += 1
    return anomaly


def _sign(value: float) -> float:
    if value > 0.0:
        return 1.0
    if value < 0.0:
        return -1.0
    return 0.0


def _rotation_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rotation_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def orbit_rotation(params: OrbitParams) -> np.ndarray:
    """Periapsis about Y, inclination about X, ascending longitude about Y (row vectors)."""
    return _rotation_y(params.p) @ _rotation_x(params.i) @ _rotation_y(params.l)


def local_orbital_position(
    params: OrbitParams,
    t: float,
    epsilon: float = ANOMALY_EPSILON,
    max_iterations: int = ANOMALY_MAX_ITERATIONS,
) -> OrbitalState:
    """Pre-rotation position on the ellipse plus the wrapped phase."""
    t_hat = orbital_phase(t, params.v_orbital)
    anomaly = solve_corrected_anomaly(params.e, t_hat, epsilon, max_iterations)
    x = -params.a * math.cos(anomaly)
    radicand = max(0.0, 1.0 - (x * x) / (params.a * params.a))
    z = _sign(t_hat) * math.sqrt(radicand * params.b * params.b)
    return OrbitalState(t_hat=t_hat, position=Vec3(x, 0.0, z))


def orbital_position(
    params: OrbitParams,
    t: float,
    epsilon: float = ANOMALY_EPSILON,
    max_iterations: int = ANOMALY_MAX_ITERATIONS,
) -> Vec3:
    """
    Position in parent node units at time ``t``.

    Raises:
        AnomalyConvergenceError: If the anomaly loop does not converge
    """
    local = local_orbital_position(params, t, epsilon, max_iterations)
    return Vec3.from_iterable(local.position.as_array() @ orbit_rotation(params))


def orbit_component(params: OrbitParams) -> Component:
    return Component(ComponentKind.ORBIT, params)


def apply_orbit_component(
    node: Node,
    time: float,
    epsilon: float = ANOMALY_EPSILON,
    max_iterations: int = ANOMALY_MAX_ITERATIONS,
) -> None:
    """
    Set the node's position from its orbit component at ``time``.

    Raises:
        ComponentError: If the node has no orbit component or no parent
    """
    component = node.get_component(ComponentKind.ORBIT)
    if component is None:
        raise ComponentError(f"Node {node.id} has no orbit component")
    if node.parent is None:
        raise ComponentError(f"Orbiting node {node.id} has no parent")
    node.position = orbital_position(component.payload, time, epsilon, max_iterations)


# ---------------------------------------------------------------------------
# Constant rotation


@dataclass(frozen=True)
class ConstantRotation:
    """Spin about a fixed axis at a constant rate from an initial orientation."""

    axis: Vec3
    rate: float
    initial: Quaternion = Quaternion(0.0, 0.0, 0.0, 1.0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "axis": self.axis.to_list(),
            "rate": self.rate,
            "initial": self.initial.to_list(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ConstantRotation":
        return cls(
            axis=Vec3.from_iterable(data["axis"]),
            rate=float(data["rate"]),
            initial=Quaternion.from_iterable(data.get("initial", (0.0, 0.0, 0.0, 1.0))),
        )


def apply_constant_rotation(node: Node, time: float) -> None:
    """
    Set the node's rotation to ``initial`` followed by ``rate * time`` about ``axis``.

    Raises:
        ComponentError: If the node has no constant-rotation component
    """
    component = node.get_component(ComponentKind.CONSTANT_ROTATION)
    if component is None:
        raise ComponentError(f"Node {node.id} has no constant-rotation component")
    spin: ConstantRotation = component.payload
    angle = math.fmod(spin.rate * time, TWO_PI)
    # Row-vector order: initial first, then the spin
    node.rotation = Quaternion.from_axis_angle(spin.axis, angle) * spin.initial


def load_orbit_params(path: Path | str, G: float = GRAVITATIONAL_CONSTANT) -> OrbitParams:
    """Read an orbit parameter JSON file."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise OrbitDomainError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}") from e
    except UnicodeDecodeError as e:
        raise OrbitDomainError(f"{path}: not UTF-8 text at byte {e.start}") from e
    if not isinstance(data, dict):
        raise OrbitDomainError(f"{path}: orbit parameters must be a JSON object")
    return OrbitParams.from_dict(data, G=G)


register_component_codec(ComponentKind.ORBIT, OrbitParams.to_dict, OrbitParams.from_dict)
register_component_codec(
    ComponentKind.CONSTANT_ROTATION, ConstantRotation.to_dict, ConstantRotation.from_dict
)
