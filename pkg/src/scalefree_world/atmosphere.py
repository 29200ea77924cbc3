"""
Atmosphere glow and fog colour model, evaluated on the CPU.

All arithmetic is 64-bit. The coefficients (0.01, 5 and the glare
polynomial) are tuned by eye and kept as they are.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
from PIL import Image

from .errors import EngineError
from .transform import Quaternion, Vec3
from .utils import setup_logger

logger = setup_logger(__name__)

UNIT_TOLERANCE = 1e-9
DEFAULT_FOV_Y = math.radians(60.0)


class AtmosphereError(EngineError):
    """Base exception for the atmosphere model."""

    pass


class AtmosphereDomainError(AtmosphereError):
    """Exception for inputs that make the model divide by zero."""

    pass


@dataclass(frozen=True)
class StarLight:
    color: Vec3
    direction: Vec3


@dataclass(frozen=True)
class AtmosphereInput:
    """
    Parameter block of the fog colour function.

    ``c_haze`` defaults to ``c_atmosphere``. ``n_l`` (primary star elevation)
    and ``n_h`` (view-to-primary-star alignment) default to
    ``-dot(n_planet, n_0)`` and ``dot(n, n_0)`` for the first star, and to 0
    without stars.
    """

    c_atmosphere: Vec3
    n_planet: Vec3
    w_planet: float
    w_atmosphere: float
    n: Vec3 = Vec3(0.0, 0.0, -1.0)
    stars: tuple[StarLight, ...] = ()
    c_sun: Vec3 = Vec3(1.0, 1.0, 1.0)
    c_haze: Optional[Vec3] = None
    m: float = 1.0
    h: float = 0.0
    w_hrz: float = 0.0
    w_world: float = 0.0
    t_back: Vec3 = Vec3(0.0, 0.0, 0.0)
    n_l: Optional[float] = None
    n_h: Optional[float] = None

    def __post_init__(self) -> None:
        for name in ("n", "n_planet"):
            _check_unit(name, getattr(self, name))
        for index, star in enumerate(self.stars):
            _check_unit(f"stars[{index}].direction", star.direction)
            _check_colour(f"stars[{index}].color", star.color)
        for name in ("c_atmosphere", "c_sun", "t_back"):
            _check_colour(name, getattr(self, name))
        if self.c_haze is not None:
            _check_colour("c_haze", self.c_haze)
        for name in ("h", "w_hrz", "w_planet", "w_world", "w_atmosphere", "m"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise AtmosphereError(f"{name} must be finite and >= 0, got {value}")

    @property
    def haze(self) -> Vec3:
        return self.c_haze if self.c_haze is not None else self.c_atmosphere

    def sun_elevation(self) -> float:
        if self.n_l is not None:
            return self.n_l
        if not self.stars:
            return 0.0
        return -self.n_planet.dot(self.stars[0].direction)


def _check_unit(name: str, v: Vec3) -> None:
    if abs(v.length() - 1.0) > UNIT_TOLERANCE:
        raise AtmosphereError(f"{name} must be a unit vector, got {v.to_list()}")


def _check_colour(name: str, c: Vec3) -> None:
    if min(c.x, c.y, c.z) < 0.0:
        raise AtmosphereError(f"{name} must be componentwise >= 0, got {c.to_list()}")


@dataclass(frozen=True)
class FogResult:
    """Fog colour plus the intermediate terms of each step."""

    rgb: Vec3
    t_d: float
    d_top: float
    d_hrz: float
    d_bot: float
    d_world: float
    d_d: float
    d_a: float
    c_light: Vec3
    s_glare: Vec3
    c_top: Vec3
    c_hrz: Vec3


def saturate(x: np.ndarray | float) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def _dot(rows: np.ndarray, v: Vec3) -> np.ndarray:
    # Written out per component so mirrored inputs give bit-identical sums
    return rows[:, 0] * v.x + rows[:, 1] * v.y + rows[:, 2] * v.z


def _rgb(v: Vec3) -> np.ndarray:
    return np.array([v.x, v.y, v.z], dtype=np.float64)


def fog_kernel(params: AtmosphereInput, normals: np.ndarray) -> dict[str, np.ndarray]:
    """
    Evaluate the fog colour for a batch of view directions.

    ``normals`` is an ``(N, 3)`` array of unit vectors replacing ``params.n``.
    Scalars come back as ``(N,)`` arrays, colours as ``(N, 3)``.

    Raises:
        AtmosphereDomainError: If ``w_planet`` or ``w_atmosphere`` is zero
    """
    if params.w_planet == 0.0:
        raise AtmosphereDomainError("w_planet is zero: horizon gradient is undefined")
    if params.w_atmosphere == 0.0:
        raise AtmosphereDomainError("w_atmosphere is zero: altitude density is undefined")

    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    count = normals.shape[0]
    c_atmosphere = _rgb(params.c_atmosphere)

    # 1. Horizon line and gradient densities
    t_d = _dot(normals, params.n_planet) + params.w_hrz / params.w_planet
    d_top = saturate(t_d)
    d_hrz = 1.0 - np.abs(t_d)
    d_bot = saturate(-t_d)

    # 2. Density from view distance and altitude
    d_world = np.full(count, 1.0 - float(saturate(0.01 * params.m * params.w_hrz * params.w_world)))
    d_d = np.full(count, max(1.0, params.h / params.w_atmosphere))

    # 3. Light colour and glare
    c_light = np.zeros((count, 3))
    s_glare = np.zeros((count, 3))
    for star in params.stars:
        c_i = _rgb(star.color)
        alignment = _dot(normals, star.direction)
        c_light += np.maximum(0.0, 1.0 - saturate(5.0 * alignment)[:, None] * c_atmosphere * c_i)
        d_i = np.maximum(0.0, alignment)
        glare = 0.5 * d_i + 0.4 * d_i**10 + 0.3 * d_i**100 + 0.2 * d_i**1000
        s_glare += glare[:, None] * c_i

    # 4. Colours of the atmosphere parts
    c_top = np.broadcast_to(c_atmosphere, (count, 3)) / d_d[:, None]
    if params.n_h is not None:
        n_h = np.full(count, params.n_h)
    elif params.stars:
        n_h = _dot(normals, params.stars[0].direction)
    else:
        n_h = np.zeros(count)
    weight = float(saturate(params.sun_elevation() + 0.1))
    low = 0.25 * (_rgb(params.c_sun) + c_light)
    mixed = low + (c_light - low) * weight
    c_hrz = _rgb(params.haze) * mixed / d_d[:, None] + (saturate(n_h) / d_d)[:, None]

    # 5. Densities of the atmosphere parts
    d_a = (d_bot + d_top) / np.maximum(1.0, d_d) + d_hrz / d_d

    # 6. Final colour
    t_back = _rgb(params.t_back)
    rgb = (0.5 * d_world * d_a)[:, None] * (
        (d_hrz + d_bot)[:, None] * c_hrz + d_top[:, None] * (t_back + c_top) + s_glare
    )

    return {
        "rgb": rgb,
        "t_d": t_d,
        "d_top": d_top,
        "d_hrz": d_hrz,
        "d_bot": d_bot,
        "d_world": d_world,
        "d_d": d_d,
        "d_a": d_a,
        "c_light": c_light,
        "s_glare": s_glare,
        "c_top": c_top,
        "c_hrz": c_hrz,
    }


def fog_colour(params: AtmosphereInput) -> FogResult:
    """
    Fog colour for the view direction ``params.n``.

    Raises:
        AtmosphereDomainError: If ``w_planet`` or ``w_atmosphere`` is zero
    """
    out = fog_kernel(params, params.n.as_array()[None, :])

    def colour(key: str) -> Vec3:
        return Vec3.from_iterable(out[key][0])

    def scalar(key: str) -> float:
        return float(out[key][0])

    return FogResult(
        rgb=colour("rgb"),
        t_d=scalar("t_d"),
        d_top=scalar("d_top"),
        d_hrz=scalar("d_hrz"),
        d_bot=scalar("d_bot"),
        d_world=scalar("d_world"),
        d_d=scalar("d_d"),
        d_a=scalar("d_a"),
        c_light=colour("c_light"),
        s_glare=colour("s_glare"),
        c_top=colour("c_top"),
        c_hrz=colour("c_hrz"),
    )


# ---------------------------------------------------------------------------
# Sky rendering


@dataclass(frozen=True)
class SkyCamera:
    """Pinhole camera looking down its local -Z with +Y up."""

    rotation: Quaternion = field(default_factory=Quaternion.identity)
    fov_y: float = DEFAULT_FOV_Y

    def __post_init__(self) -> None:
        if not 0.0 < self.fov_y < math.pi:
            raise AtmosphereError(f"Field of view must be in (0, pi), got {self.fov_y}")


def view_directions(camera: SkyCamera, width: int, height: int, rows: range) -> np.ndarray:
    """
    Unit view directions for the pixel rows in ``rows``, shape ``(len(rows) * width, 3)``.

    Pixel centres map to ``ndc_x = (2x + 1 - W) / W``, which is exactly
    negated between column ``x`` and its mirror ``W - 1 - x``.
    """
    right = camera.rotation.rotate(Vec3(1.0, 0.0, 0.0))
    up = camera.rotation.rotate(Vec3(0.0, 1.0, 0.0))
    forward = camera.rotation.rotate(Vec3(0.0, 0.0, -1.0))

    tan_y = math.tan(0.5 * camera.fov_y)
    tan_x = tan_y * width / height
    xs = (2.0 * np.arange(width) + 1.0 - width) / width * tan_x
    ys = (height - 2.0 * np.asarray(rows, dtype=np.float64) - 1.0) / height * tan_y
    a, b = np.meshgrid(xs, ys)
    a, b = a.ravel(), b.ravel()

    dx = forward.x + a * right.x + b * up.x
    dy = forward.y + a * right.y + b * up.y
    dz = forward.z + a * right.z + b * up.z
    norm = np.sqrt(dx * dx + dy * dy + dz * dz)
    return np.stack([dx / norm, dy / norm, dz / norm], axis=1)


def quantize(rgb: np.ndarray) -> np.ndarray:
    """Clamp linear RGB to [0, 1] and round to 8 bits (no gamma)."""
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_sky(
    params: AtmosphereInput,
    camera: Optional[SkyCamera] = None,
    width: int = 1,
    height: int = 1,
    jobs: int = 1,
) -> np.ndarray:
    """
    Evaluate the fog colour for every pixel.

    Returns:
        np.ndarray: ``(height, width, 3)`` uint8 image, row 0 at the top

    Raises:
        AtmosphereError: If width or height is below 1
        AtmosphereDomainError: Propagated from the fog colour function
    """
    if width < 1 or height < 1:
        raise AtmosphereError(f"Image size must be at least 1x1, got {width}x{height}")
    camera = camera or SkyCamera()

    def band(rows: range) -> np.ndarray:
        directions = view_directions(camera, width, height, rows)
        rgb = fog_kernel(params, directions)["rgb"]
        return quantize(rgb).reshape(len(rows), width, 3)

    workers = max(1, min(jobs, height))
    chunk = math.ceil(height / workers)
    bands = [range(start, min(start + chunk, height)) for start in range(0, height, chunk)]
    if workers == 1:
        parts = [band(rows) for rows in bands]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(band, bands))

    logger.debug(f"Rendered {width}x{height} sky with {workers} worker(s)")
    return np.concatenate(parts, axis=0)


def write_ppm(image: np.ndarray, path: Path | str) -> None:
    """Write an 8-bit RGB image as binary PPM (P6)."""
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path, format="PPM")
    logger.info(f"Wrote {image.shape[1]}x{image.shape[0]} image to {path}")


# ---------------------------------------------------------------------------
# Parameter files

_VECTOR_KEYS = ("c_atmosphere", "c_haze", "c_sun", "n", "n_planet", "t_back")
_SCALAR_KEYS = ("m", "h", "w_hrz", "w_planet", "w_world", "w_atmosphere", "n_l", "n_h")
_CAMERA_KEYS = ("camera_rotation", "fov_y_deg")


def atmosphere_from_dict(data: dict[str, Any]) -> tuple[AtmosphereInput, SkyCamera]:
    """
    Read the JSON parameter object (AtmosphereInput fields plus optional
    ``camera_rotation`` quaternion and ``fov_y_deg``).

    Raises:
        AtmosphereError: On unknown keys or malformed values
    """
    known = set(_VECTOR_KEYS) | set(_SCALAR_KEYS) | set(_CAMERA_KEYS) | {"stars"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise AtmosphereError(f"Unknown atmosphere parameters: {', '.join(unknown)}")

    try:
        values: dict[str, Any] = {}
        for key in _VECTOR_KEYS:
            if data.get(key) is not None:
                values[key] = Vec3.from_iterable(data[key])
        for key in _SCALAR_KEYS:
            if data.get(key) is not None:
                values[key] = float(data[key])
        values["stars"] = tuple(
            StarLight(Vec3.from_iterable(s["color"]), Vec3.from_iterable(s["direction"]))
            for s in data.get("stars", [])
        )
        params = AtmosphereInput(**values)

        camera = SkyCamera(
            rotation=Quaternion.from_iterable(
                data.get("camera_rotation", (0.0, 0.0, 0.0, 1.0))
            ).as_rotation(),
            fov_y=math.radians(float(data.get("fov_y_deg", math.degrees(DEFAULT_FOV_Y)))),
        )
    except (KeyError, TypeError, ValueError, EngineError) as e:
        if isinstance(e, AtmosphereError):
            raise
        raise AtmosphereError(f"Malformed atmosphere parameters: {e}") from e
    return params, camera


def load_atmosphere_params(path: Path | str) -> tuple[AtmosphereInput, SkyCamera]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise AtmosphereError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}") from e
    except UnicodeDecodeError as e:
        raise AtmosphereError(f"{path}: not UTF-8 text at byte {e.start}") from e
    if not isinstance(data, dict):
        raise AtmosphereError(f"{path}: atmosphere parameters must be a JSON object")
    return atmosphere_from_dict(data)
