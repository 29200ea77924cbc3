"""
Procedural universe generation.

Builds the default hierarchy level by level:

    0 world_sol, 1 spacecluster, 2 galaxy, 3 starsystem, 4 star, 5 planet,
    6 planet_surface, 7 planet_surface_node, 8 camera

Every draw comes from a stream keyed by the node seed and an attribute tag,
so any subtree can be regenerated from its root seed alone.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

import numpy as np
from opensimplex import OpenSimplex

from .config import EngineConfig, SceneLimits
from .errors import EngineError
from .horizon import CellPath, PartitionTree, partition_update
from .orbit import ConstantRotation, OrbitParams, orbit_component, orbital_position
from .procgen.mesh import TriangleMesh
from .scene import (
    BoxBounds,
    Component,
    ComponentKind,
    Node,
    SphereBounds,
    attach,
    child_seed,
    detach,
    seeded_id,
)
from .transform import Quaternion, Vec3
from .utils import attribute_rng, mix_seed, setup_logger

logger = setup_logger(__name__)

LEVELS = (
    "world_sol",
    "spacecluster",
    "galaxy",
    "starsystem",
    "star",
    "planet",
    "planet_surface",
    "planet_surface_node",
    "camera",
)
MAX_DEPTH = len(LEVELS) - 1
SOLAR_MASS_KG = 1.989e30
NOISE_SEED_MASK = (1 << 63) - 1

Range = tuple[float, float]


class GenerationError(EngineError):
    """Base exception for universe generation."""

    pass


class RecipeError(GenerationError):
    """Exception for node types without a generation recipe."""

    pass


class GenConfigError(GenerationError):
    """Exception for invalid generation configuration."""

    pass


@dataclass(frozen=True)
class GenConfig:
    """
    Generation parameters. Count ranges are inclusive; sizes are meters.

    Size ranges are sampled log-uniformly, angle and eccentricity ranges
    uniformly.
    """

    clusters_per_world: tuple[int, int] = (2, 3)
    galaxies_per_cluster: tuple[int, int] = (2, 3)
    systems_per_cell: tuple[int, int] = (1, 3)
    stars_per_system: tuple[int, int] = (1, 2)
    planets_per_system: tuple[int, int] = (1, 4)

    world_size_m: float = 8.8e26
    cluster_size_m: Range = (1e23, 3e23)
    galaxy_size_m: Range = (3e20, 1e21)
    system_size_m: Range = (1e13, 5e13)
    star_size_m: Range = (3e8, 3e9)
    planet_size_m: Range = (2e6, 7e7)

    star_mass_kg: Range = (1e29, 1e31)
    planet_mass_kg: Range = (1e23, 1e27)
    semi_major_axis_m: Range = (5e10, 2e12)
    eccentricity: Range = (0.0, 0.3)
    inclination: Range = (0.0, 0.2)
    periapsis: Range = (0.0, 2.0 * math.pi)
    ascending_longitude: Range = (0.0, 2.0 * math.pi)
    spin_rate: Range = (1e-6, 1e-4)

    galaxy_partition_depth: int = 4
    surface_partition_depth: int = 8
    split_factor: float = EngineConfig.DEFAULT_SPLIT_FACTOR
    merge_factor: float = EngineConfig.DEFAULT_MERGE_FACTOR
    camera_height_m: float = 2.0

    noise_octaves: int = 6
    noise_lacunarity: float = 2.0
    noise_gain: float = 0.5
    noise_frequency: float = 1.5
    noise_amplitude_m: float = 8000.0

    def __post_init__(self) -> None:
        for item in fields(self):
            value = getattr(self, item.name)
            if isinstance(value, tuple):
                if len(value) != 2 or not value[0] <= value[1]:
                    raise GenConfigError(f"{item.name} must be a [min, max] range, got {value}")
                if value[0] < 0:
                    raise GenConfigError(f"{item.name} must not be negative, got {value}")
            elif isinstance(value, (int, float)) and not math.isfinite(value):
                raise GenConfigError(f"{item.name} must be finite, got {value}")

        positive = (
            "cluster_size_m",
            "galaxy_size_m",
            "system_size_m",
            "star_size_m",
            "planet_size_m",
            "star_mass_kg",
            "planet_mass_kg",
            "semi_major_axis_m",
        )
        for name in positive:
            if getattr(self, name)[0] <= 0.0:
                raise GenConfigError(f"{name} must be positive")
        if self.stars_per_system[0] < 1:
            raise GenConfigError("stars_per_system must allow at least one star")
        if self.eccentricity[1] >= 1.0:
            raise GenConfigError("eccentricity must stay below 1")
        if self.world_size_m <= 0.0 or self.camera_height_m < 0.0:
            raise GenConfigError("world_size_m must be positive and camera_height_m non-negative")
        if self.noise_octaves < 1:
            raise GenConfigError(f"noise_octaves must be >= 1, got {self.noise_octaves}")
        if self.noise_amplitude_m < 0.0 or self.noise_gain <= 0.0 or self.noise_frequency <= 0.0:
            raise GenConfigError("noise amplitude must be >= 0, gain and frequency > 0")
        if self.galaxy_partition_depth < 0 or self.surface_partition_depth < 0:
            raise GenConfigError("partition depths must be >= 0")
        if not 0.0 < self.split_factor < self.merge_factor:
            raise GenConfigError(
                f"split_factor {self.split_factor} must be positive and below "
                f"merge_factor {self.merge_factor}"
            )

    @classmethod
    def from_dict(cls, data: dict[str, Any], base: Optional["GenConfig"] = None) -> "GenConfig":
        """
        Build a config from a JSON object; missing keys keep the values of ``base``.

        Raises:
            GenConfigError: On unknown keys or malformed values
        """
        known = {item.name: item for item in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise GenConfigError(f"Unknown generation config keys: {', '.join(unknown)}")

        values: dict[str, Any] = {}
        defaults = base if base is not None else cls()
        for name, raw in data.items():
            default = getattr(defaults, name)
            try:
                if isinstance(default, tuple):
                    if not isinstance(raw, list) or len(raw) != 2:
                        raise GenConfigError(f"{name} must be a [min, max] list")
                    kind = type(default[0])
                    values[name] = (kind(raw[0]), kind(raw[1]))
                elif isinstance(default, int):
                    if isinstance(raw, bool) or not isinstance(raw, int):
                        raise GenConfigError(f"{name} must be an integer")
                    values[name] = raw
                else:
                    values[name] = float(raw)
            except (TypeError, ValueError) as e:
                raise GenConfigError(f"Invalid value for {name}: {raw!r}") from e
        return replace(defaults, **values)

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def noise_settings(self) -> dict[str, float]:
        return {
            "octaves": self.noise_octaves,
            "lacunarity": self.noise_lacunarity,
            "gain": self.noise_gain,
            "frequency": self.noise_frequency,
            "amplitude_m": self.noise_amplitude_m,
        }


def load_gen_config(path: Path | str, base: Optional[GenConfig] = None) -> GenConfig:
    """
    Read a generation config JSON file; keys it leaves out come from ``base``.

    Raises:
        GenConfigError: If the file is not valid JSON or breaks the schema
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise GenConfigError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}") from e
    except UnicodeDecodeError as e:
        raise GenConfigError(f"{path}: not UTF-8 text at byte {e.start}") from e
    if not isinstance(data, dict):
        raise GenConfigError(f"{path}: generation config must be a JSON object")
    return GenConfig.from_dict(data, base)


# ---------------------------------------------------------------------------
# Seeded draws


def _uniform(seed: int, tag: str, bounds: Range) -> float:
    low, high = bounds
    if low == high:
        return float(low)
    return float(low + (high - low) * attribute_rng(seed, tag).random())


def _log_uniform(seed: int, tag: str, bounds: Range) -> float:
    low, high = bounds
    if low == high:
        return float(low)
    u = attribute_rng(seed, tag).random()
    return float(math.exp(math.log(low) + (math.log(high) - math.log(low)) * u))


def _count(seed: int, tag: str, bounds: tuple[int, int]) -> int:
    low, high = bounds
    return int(attribute_rng(seed, tag).integers(low, high + 1))


def _in_ball(seed: int, tag: str, radius: float) -> Vec3:
    if radius <= 0.0:
        return Vec3.zero()
    rng = attribute_rng(seed, tag)
    direction = rng.standard_normal(3)
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        return Vec3.zero()
    r = radius * float(rng.random()) ** (1.0 / 3.0)
    return Vec3.from_iterable(direction / norm * r)


def _orientation(seed: int, tag: str) -> Quaternion:
    q = attribute_rng(seed, tag).standard_normal(4)
    q /= np.linalg.norm(q)
    return Quaternion(float(q[0]), float(q[1]), float(q[2]), float(q[3]))


def _spin(seed: int, config: GenConfig) -> Component:
    axis = _in_ball(seed, "spin_axis", 1.0)
    if axis.length() == 0.0:
        axis = Vec3(0.0, 1.0, 0.0)
    rate = _uniform(seed, "spin_rate", config.spin_rate)
    return Component(ComponentKind.CONSTANT_ROTATION, ConstantRotation(axis.normalized(), rate))


def cell_seed(host_seed: int, path: CellPath) -> int:
    """Seed of a partition cell; the root cell uses the host seed."""
    if not path:
        return host_seed
    return mix_seed(host_seed, "cell", *path)


def cell_label(path: CellPath) -> str:
    return ".".join(str(i) for i in path)


# ---------------------------------------------------------------------------
# Recipes


def _node(type_name: str, *, seed: int, **fields: Any) -> Node:
    """Generated node whose handle is a function of its seed."""
    return Node(type_name, seed=seed, node_id=seeded_id(seed, type_name), **fields)


def _world(seed: int, config: GenConfig) -> Node:
    return _node(
        "world_sol", absolute_size=config.world_size_m, bounds=SphereBounds(1.0), seed=seed
    )


def _clusters(parent: Node, config: GenConfig) -> list[Node]:
    children = []
    for index in range(_count(parent.seed, "count:spacecluster", config.clusters_per_world)):
        seed = child_seed(parent.seed, index, "spacecluster")
        size = _log_uniform(seed, "size", config.cluster_size_m)
        reach = max(0.0, 1.0 - size / parent.absolute_size)
        children.append(
            _node(
                "spacecluster",
                absolute_size=size,
                bounds=SphereBounds(1.0),
                position=_in_ball(seed, "position", reach),
                seed=seed,
            )
        )
    return children


def _galaxies(parent: Node, config: GenConfig) -> list[Node]:
    children = []
    for index in range(_count(parent.seed, "count:galaxy", config.galaxies_per_cluster)):
        seed = child_seed(parent.seed, index, "galaxy")
        size = _log_uniform(seed, "size", config.galaxy_size_m)
        # Box corners sit sqrt(3) galaxy units from the centre
        reach = max(0.0, 1.0 - math.sqrt(3.0) * size / parent.absolute_size)
        galaxy = _node(
            "galaxy",
            absolute_size=size,
            bounds=BoxBounds(Vec3(1.0, 1.0, 1.0)),
            position=_in_ball(seed, "position", reach),
            rotation=_orientation(seed, "rotation"),
            seed=seed,
        )
        galaxy.add_component(
            Component(
                ComponentKind.PARTITION3D,
                PartitionTree(
                    arity=8,
                    half_size=1.0,
                    max_depth=config.galaxy_partition_depth,
                    split_factor=config.split_factor,
                    merge_factor=config.merge_factor,
                ),
            )
        )
        children.append(galaxy)
    return children


def _cell_systems(host: Node, path: CellPath, config: GenConfig) -> list[Node]:
    """Star systems of one galaxy cell; a pure function of ``(host seed, path)``."""
    tree: PartitionTree = host.partition_component().payload  # type: ignore[union-attr]
    center, half = tree.cell_box(path)
    base = cell_seed(host.seed, path)
    label = cell_label(path)

    systems = []
    for index in range(_count(base, "count:starsystem", config.systems_per_cell)):
        seed = child_seed(base, index, "starsystem")
        offsets = attribute_rng(seed, "position").uniform(-half, half, size=3)
        system = _node(
            "starsystem",
            absolute_size=_log_uniform(seed, "size", config.system_size_m),
            bounds=SphereBounds(1.0),
            position=Vec3.from_iterable(center + offsets),
            seed=seed,
        )
        system.set_var("cell", label)
        systems.append(system)
    return systems


def _systems(parent: Node, config: GenConfig) -> list[Node]:
    component = parent.partition_component()
    if component is None:
        raise RecipeError(f"Galaxy {parent.id} has no partition component")
    systems = []
    for path in component.payload.active_cells:
        systems.extend(_cell_systems(parent, path, config))
    return systems


def star_color(temperature: float) -> Vec3:
    """Linear blend from a cool red to a hot blue-white."""
    cool = np.array([1.0, 0.45, 0.25])
    hot = np.array([0.65, 0.75, 1.0])
    return Vec3.from_iterable(cool + (hot - cool) * temperature)


def _stars(parent: Node, config: GenConfig) -> list[Node]:
    stars = []
    for index in range(_count(parent.seed, "count:star", config.stars_per_system)):
        seed = child_seed(parent.seed, index, "star")
        size = _log_uniform(seed, "size", config.star_size_m)
        mass = _log_uniform(seed, "mass", config.star_mass_kg)
        temperature = _uniform(seed, "temperature", (0.0, 1.0))

        if index == 0:
            position = Vec3.zero()
        else:
            direction = _in_ball(seed, "position", 1.0)
            if direction.length() == 0.0:
                direction = Vec3(1.0, 0.0, 0.0)
            distance = _uniform(seed, "distance", (0.05, 0.1))
            position = direction.normalized() * distance

        # Orbits of a star's planets stay inside 0.4 system units
        reach = 0.4 * parent.absolute_size / size
        star = _node(
            "star",
            absolute_size=size,
            bounds=SphereBounds(reach),
            position=position,
            seed=seed,
        )
        star.set_var("mass", mass)
        star.set_var("temperature", temperature)
        star.set_var("luminosity", (mass / SOLAR_MASS_KG) ** 3.5)
        star.set_var("color", star_color(temperature))
        star.add_component(_spin(seed, config))
        stars.append(star)
    return stars


def _planets(parent: Node, config: GenConfig) -> list[Node]:
    # Secondary stars of a system carry no planets
    if parent.parent is not None and parent.parent.children.index(parent) != 0:
        return []

    star_mass = float(parent.custom_vars.get("mass", SOLAR_MASS_KG))  # type: ignore[arg-type]
    star_reach_m = parent.bounds.radius * parent.absolute_size  # type: ignore[union-attr]

    planets = []
    for index in range(_count(parent.seed, "count:planet", config.planets_per_system)):
        seed = child_seed(parent.seed, index, "planet")
        e = _uniform(seed, "eccentricity", config.eccentricity)
        a_m = min(
            _log_uniform(seed, "semi_major_axis", config.semi_major_axis_m),
            0.95 * star_reach_m / (1.0 + e),
        )
        mass = _log_uniform(seed, "mass", config.planet_mass_kg)
        params = OrbitParams.create(
            a=a_m / parent.absolute_size,
            e=e,
            m_node=mass,
            m_parent=star_mass,
            p=_uniform(seed, "periapsis", config.periapsis),
            i=_uniform(seed, "inclination", config.inclination),
            l=_uniform(seed, "ascending_longitude", config.ascending_longitude),
        )
        radius = _log_uniform(seed, "size", config.planet_size_m)
        planet = _node(
            "planet",
            absolute_size=radius,
            bounds=SphereBounds(4.0),
            position=orbital_position(params, 0.0),
            seed=seed,
        )
        planet.set_var("mass", mass)
        planet.set_var("radius_m", radius)
        planet.add_component(orbit_component(params))
        planet.add_component(_spin(seed, config))
        planets.append(planet)
    return planets


def _surface(parent: Node, config: GenConfig) -> list[Node]:
    surface = _node(
        "planet_surface",
        absolute_size=parent.absolute_size,
        bounds=SphereBounds(1.5),
        seed=child_seed(parent.seed, 0, "planet_surface"),
    )
    surface.set_var("radius_m", parent.absolute_size)
    surface.add_component(Component(ComponentKind.SURFACE_MOD, config.noise_settings()))
    return [surface]


# Cube faces as (u axis, outward normal); v = u x n
FACES = (
    ((0.0, 0.0, -1.0), (1.0, 0.0, 0.0)),
    ((0.0, 0.0, 1.0), (-1.0, 0.0, 0.0)),
    ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
    ((1.0, 0.0, 0.0), (0.0, -1.0, 0.0)),
    ((1.0, 0.0, 0.0), (0.0, 0.0, 1.0)),
    ((-1.0, 0.0, 0.0), (0.0, 0.0, -1.0)),
)


def face_basis(face: int) -> np.ndarray:
    """Rows ``u, n, v``: face-local x, y (outward) and z axes in planet units."""
    u, n = (np.array(axis) for axis in FACES[face])
    return np.stack([u, n, np.cross(u, n)])


def _faces(parent: Node, config: GenConfig) -> list[Node]:
    planet = parent.parent if parent.parent is not None else parent
    nodes = []
    for face in range(len(FACES)):
        basis = face_basis(face)
        node = _node(
            "planet_surface_node",
            absolute_size=parent.absolute_size,
            bounds=BoxBounds(Vec3(1.0, 0.5, 1.0)),
            position=Vec3.from_iterable(basis[1]),
            rotation=Quaternion.from_rotation_matrix(basis),
            seed=child_seed(parent.seed, face, "planet_surface_node"),
        )
        node.set_var("face", face)
        node.set_var("planet_seed", planet.seed)
        node.add_component(
            Component(
                ComponentKind.PARTITION2D,
                PartitionTree(
                    arity=4,
                    half_size=1.0,
                    max_depth=config.surface_partition_depth,
                    split_factor=config.split_factor,
                    merge_factor=config.merge_factor,
                ),
            )
        )
        nodes.append(node)
    return nodes


def _camera(parent: Node, config: GenConfig) -> list[Node]:
    # One camera per planet, above the centre of face 0
    if parent.custom_vars.get("face") != 0:
        return []
    radius = parent.absolute_size
    planet_seed = int(parent.custom_vars.get("planet_seed", parent.seed))  # type: ignore[arg-type]
    n = face_basis(0)[1]
    lat = math.asin(float(n[1]))
    lon = math.atan2(float(n[2]), float(n[0]))
    height = sample_surface(planet_seed, lat, lon, config).height
    camera = _node(
        "camera",
        absolute_size=1.0,
        bounds=SphereBounds(10.0),
        position=Vec3(0.0, (height + config.camera_height_m) / radius, 0.0),
        seed=child_seed(parent.seed, 0, "camera"),
    )
    camera.transferable = True
    return [camera]


Recipe = Callable[[Node, GenConfig], list[Node]]

RECIPES: dict[str, Recipe] = {
    "world_sol": _clusters,
    "spacecluster": _galaxies,
    "galaxy": _systems,
    "starsystem": _stars,
    "star": _planets,
    "planet": _surface,
    "planet_surface": _faces,
    "planet_surface_node": _camera,
}

CELL_RECIPES: dict[str, Callable[[Node, CellPath, GenConfig], list[Node]]] = {
    "galaxy": _cell_systems,
}


def generate_level(
    parent: Node,
    config: Optional[GenConfig] = None,
    limits: SceneLimits = SceneLimits(),
) -> list[Node]:
    """
    Create and attach the children of ``parent`` from its type's recipe.

    Returns:
        list[Node]: The new children, in attach order

    Raises:
        RecipeError: If the parent's type has no recipe
    """
    recipe = RECIPES.get(parent.type_name)
    if recipe is None:
        raise RecipeError(f"No generation recipe for node type '{parent.type_name}'")
    children = recipe(parent, config or GenConfig())
    for child in children:
        attach(parent, child, limits)
    return children


def generate_world(
    seed: int,
    depth: int,
    config: Optional[GenConfig] = None,
    limits: SceneLimits = SceneLimits(),
) -> Node:
    """
    Generate the default hierarchy down to ``depth`` (0 = world node only).

    Raises:
        GenerationError: If depth is outside ``[0, 8]``
    """
    if not 0 <= depth <= MAX_DEPTH:
        raise GenerationError(f"Depth must be within [0, {MAX_DEPTH}], got {depth}")
    config = config or GenConfig()
    world = _world(seed, config)

    frontier = [world]
    for level in range(depth):
        next_frontier: list[Node] = []
        for node in frontier:
            next_frontier.extend(generate_level(node, config, limits))
        logger.debug(f"Level {level + 1}: {len(next_frontier)} nodes")
        frontier = next_frontier

    logger.info(f"Generated world {seed} to depth {depth}: {world.count()} nodes")
    return world


def nodes_per_level(world: Node) -> list[int]:
    counts: list[int] = []
    for node in world.iter_subtree():
        depth = node.depth()
        while len(counts) <= depth:
            counts.append(0)
        counts[depth] += 1
    return counts


def update_partition(
    host: Node,
    observer_local: Vec3,
    config: Optional[GenConfig] = None,
    limits: SceneLimits = SceneLimits(),
) -> tuple[list[CellPath], list[CellPath]]:
    """
    Split/merge the host's partition around an observer and sync cell content.

    Children generated for destroyed cells are detached; created cells get
    freshly generated children. Hosts without a cell recipe only report the
    cell changes.

    Raises:
        GenerationError: If the host has no partition component
    """
    component = host.partition_component()
    if component is None:
        raise GenerationError(f"Node {host.id} has no partition component")
    created, destroyed = partition_update(component.payload, observer_local)

    cell_recipe = CELL_RECIPES.get(host.type_name)
    if cell_recipe is None:
        return created, destroyed

    gone = {cell_label(path) for path in destroyed}
    for child in host.children:
        if child.custom_vars.get("cell") in gone:
            detach(child)
    config = config or GenConfig()
    for path in created:
        for child in cell_recipe(host, path, config):
            attach(host, child, limits)
    return created, destroyed


# ---------------------------------------------------------------------------
# Surface data


@dataclass(frozen=True)
class SurfaceSample:
    height: float
    temperature: float
    moisture: float


@lru_cache(maxsize=64)
def _noise(seed: int) -> OpenSimplex:
    return OpenSimplex(seed=seed & NOISE_SEED_MASK)


def _fbm(noise: OpenSimplex, d: np.ndarray, config: GenConfig, offset: float = 0.0) -> float:
    """Fractal sum normalized by the total gain, so |result| stays within the base noise range."""
    total = 0.0
    weight = 0.0
    amplitude = 1.0
    frequency = config.noise_frequency
    for _ in range(config.noise_octaves):
        total += amplitude * noise.noise3(
            float(d[0]) * frequency + offset,
            float(d[1]) * frequency,
            float(d[2]) * frequency,
        )
        weight += amplitude
        amplitude *= config.noise_gain
        frequency *= config.noise_lacunarity
    return total / weight


def sample_direction(
    seed: int, direction: np.ndarray, config: Optional[GenConfig] = None
) -> SurfaceSample:
    """Surface data at a unit direction from the planet centre."""
    config = config or GenConfig()
    noise = _noise(seed)
    amplitude = config.noise_amplitude_m

    height = 0.0
    if amplitude > 0.0:
        height = float(np.clip(amplitude * _fbm(noise, direction, config), -amplitude, amplitude))

    latitude_warmth = 1.0 - abs(float(direction[1]))
    altitude_cooling = 0.3 * max(height, 0.0) / amplitude if amplitude > 0.0 else 0.0
    temperature = latitude_warmth - altitude_cooling + 0.1 * _fbm(noise, direction, config, 31.7)
    moisture = 0.5 + 0.5 * _fbm(noise, direction, config, 67.3)
    return SurfaceSample(
        height=height,
        temperature=float(np.clip(temperature, 0.0, 1.0)),
        moisture=float(np.clip(moisture, 0.0, 1.0)),
    )


def sample_surface(
    planet_seed: int, lat: float, lon: float, config: Optional[GenConfig] = None
) -> SurfaceSample:
    """
    Height and channels at latitude/longitude (radians).

    Noise is evaluated on the unit-sphere direction, so there is no seam at
    the antimeridian and no pinch at the poles.
    """
    cos_lat = math.cos(lat)
    direction = np.array([cos_lat * math.cos(lon), math.sin(lat), cos_lat * math.sin(lon)])
    return sample_direction(planet_seed, direction, config)


def _edge_parameter(k: int, resolution: int, lo: float, hi: float) -> float:
    # Running k backwards over (-hi, -lo) gives exactly the negated value, so
    # faces meeting at a cube edge produce bit-identical edge vertices
    return ((resolution - k) * lo + k * hi) / resolution


def _patch(
    seed: int, radius: float, face: int, path: CellPath, resolution: int, config: GenConfig
) -> TriangleMesh:
    tree = PartitionTree(arity=4, half_size=1.0, max_depth=max(len(path), 1))
    center, half = tree.cell_box(path)
    s_lo, s_hi = center[0] - half, center[0] + half
    t_lo, t_hi = center[1] - half, center[1] + half
    basis = face_basis(face)

    count = resolution + 1
    vertices = np.empty((count * count, 3))
    uvs = np.empty((count * count, 2))
    for j in range(count):
        t = _edge_parameter(j, resolution, t_lo, t_hi)
        for i in range(count):
            s = _edge_parameter(i, resolution, s_lo, s_hi)
            cube = basis[1] + s * basis[0] + t * basis[2]
            direction = cube / np.linalg.norm(cube)
            height = sample_direction(seed, direction, config).height
            vertices[j * count + i] = direction * (radius + height)
            uvs[j * count + i] = (i / resolution, j / resolution)

    triangles = []
    for j in range(resolution):
        for i in range(resolution):
            a = j * count + i
            b, c, d = a + 1, a + count + 1, a + count
            # Counter-clockwise seen from outside the planet
            triangles.append((a, c, b))
            triangles.append((a, d, c))

    return TriangleMesh(
        vertices=vertices,
        uvs=uvs,
        triangles=np.asarray(triangles, dtype=np.int64),
        triangle_materials=np.zeros(len(triangles), dtype=np.int64),
        materials=["terrain"],
    )


def build_surface_patch(
    planet: Node,
    cell: CellPath,
    resolution: int,
    config: Optional[GenConfig] = None,
) -> TriangleMesh:
    """
    Triangulated patch of a planet's surface for a quadtree cell.

    ``cell`` is ``(face, quadrant, quadrant, ...)``: a cube face index
    followed by the cell path in that face's quadtree. Vertices are meters
    from the planet centre.

    Raises:
        GenerationError: If the resolution is below 1 or the cell is malformed
    """
    if resolution < 1:
        raise GenerationError(f"Patch resolution must be >= 1, got {resolution}")
    if not cell or not 0 <= cell[0] < len(FACES):
        raise GenerationError(f"Surface cell must start with a face index 0..5, got {cell}")
    if any(not 0 <= q < 4 for q in cell[1:]):
        raise GenerationError(f"Surface cell quadrants must be 0..3, got {cell}")
    face, quadrants = cell[0], tuple(cell[1:])
    return _patch(
        planet.seed, planet.absolute_size, face, quadrants, resolution, config or GenConfig()
    )


def build_surface_patches(
    planet: Node,
    cells: Iterable[CellPath],
    resolution: int,
    config: Optional[GenConfig] = None,
    jobs: int = 1,
) -> list[TriangleMesh]:
    """Build several patches, in input order, optionally across worker processes."""
    config = config or GenConfig()
    cells = [tuple(cell) for cell in cells]
    if jobs <= 1 or len(cells) <= 1:
        return [build_surface_patch(planet, cell, resolution, config) for cell in cells]

    for cell in cells:
        if not cell or not 0 <= cell[0] < len(FACES):
            raise GenerationError(f"Surface cell must start with a face index 0..5, got {cell}")
    if resolution < 1:
        raise GenerationError(f"Patch resolution must be >= 1, got {resolution}")
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(
                _patch, planet.seed, planet.absolute_size, cell[0], cell[1:], resolution, config
            )
            for cell in cells
        ]
        return [future.result() for future in futures]


def find_planet(node: Node) -> Node:
    """The planet a surface node belongs to (the node itself for planets)."""
    for candidate in (node, *node.ancestors()):
        if candidate.type_name == "planet":
            return candidate
    raise GenerationError(f"Node {node.id} is not part of a planet")


def surface_config(planet: Node, base: Optional[GenConfig] = None) -> GenConfig:
    """
    ``base`` with the noise settings stored on the planet's surface node, so
    patches rebuilt from a loaded scene match the ones it was generated with.
    """
    base = base or GenConfig()
    for child in planet.children:
        component = child.get_component(ComponentKind.SURFACE_MOD)
        if component is None:
            continue
        settings = component.payload
        try:
            return replace(
                base,
                noise_octaves=int(settings["octaves"]),
                noise_lacunarity=float(settings["lacunarity"]),
                noise_gain=float(settings["gain"]),
                noise_frequency=float(settings["frequency"]),
                noise_amplitude_m=float(settings["amplitude_m"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise GenerationError(f"Malformed surface settings on node {child.id}: {e}") from e
    return base
