"""
Command-line interface for the scale-free world engine.
"""

import argparse
import csv
import logging
import math
import sys
from pathlib import Path
from typing import Any, Callable, Optional, TextIO

from dotenv import load_dotenv

from .atmosphere import AtmosphereDomainError, load_atmosphere_params, render_sky, write_ppm
from .config import EngineConfig
from .errors import EngineError
from .horizon import advance_kinematics, horizon_step
from .orbit import (
    AnomalyConvergenceError,
    apply_constant_rotation,
    apply_orbit_component,
    load_orbit_params,
    orbital_position,
)
from .procgen import (
    DegenerateInsetError,
    OpExecutionError,
    TriangulationError,
    emit_mesh,
    load_program,
    merge_meshes,
    run_program,
)
from .scene import ComponentKind, Node, load_scene, resolve_node_path, save_scene
from .transform import local_world_matrix
from .universe import (
    LEVELS,
    MAX_DEPTH,
    GenConfig,
    GenerationError,
    build_surface_patches,
    find_planet,
    generate_world,
    load_gen_config,
    nodes_per_level,
    surface_config,
)
from .utils import MASK64, setup_logger

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

NUMERIC_ERRORS = (
    AnomalyConvergenceError,
    DegenerateInsetError,
    TriangulationError,
    AtmosphereDomainError,
)

logger = setup_logger(__name__)


def parse_seed(text: str) -> int:
    """Parse a 64-bit seed given in decimal or with a 0x/0o/0b prefix."""
    try:
        seed = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed: {text!r}") from None
    if not 0 <= seed <= MASK64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 bits: {text}")
    return seed


def create_parser() -> argparse.ArgumentParser:
    """
    Create and configure the argument parser.

    Returns:
        argparse.ArgumentParser: Configured parser
    """
    parser = argparse.ArgumentParser(
        prog="scalefree-world",
        description="Scale-free world engine: seeded hierarchies, orbits, transfers and meshes",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    # Generate a world down to the planets
    scalefree-world gen --seed 42 --depth 5 --out world.json

    # Relative transform between two nodes
    scalefree-world transform --scene world.json --from /0/0 --to /0/1

    # Sample one orbit period
    scalefree-world orbit --params orbit.json --period-samples 64

    # Step orbits and frame transfers
    scalefree-world simulate --scene world.json --steps 100 --dt 60 --out after.json

    # Run an op program into an OBJ mesh
    scalefree-world mesh --ops house.json --seed 7 --out house.obj

    # Render the analytic sky colour
    scalefree-world sky --params sky.json --width 256 --height 128 --out sky.ppm

Environment Variables:
    SNE_SEED                    - Overrides --seed for gen and mesh
    SNE_MAX_NESTING             - Maximum node nesting level (default: 64)
    SNE_MAX_CHILDREN            - Children per node (default: 4096)
    SNE_GRAVITATIONAL_CONSTANT  - G for orbital rates (default: 6.674e-11)
    SNE_ANOMALY_EPSILON         - Corrected-anomaly precision (default: 0.001)
    SNE_ANOMALY_MAX_ITERATIONS  - Corrected-anomaly iteration cap (default: 64)
    SNE_SPLIT_FACTOR            - Partition split distance / cell size (default: 1.5)
    SNE_MERGE_FACTOR            - Partition merge distance / cell size (default: 2.0)
    SNE_JOBS                    - Default worker count for --jobs (default: 1)
    SNE_LOG_LEVEL               - Logging level (default: INFO)

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
        """,
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # Gen command
    gen_parser = subparsers.add_parser("gen", help="Generate a seeded world hierarchy")
    gen_parser.add_argument("--seed", type=parse_seed, default=0, help="World seed (default: 0)")
    gen_parser.add_argument(
        "--depth",
        type=int,
        default=3,
        help=f"Levels below the world node, 0 to {MAX_DEPTH} (default: 3)",
    )
    gen_parser.add_argument("--config", type=Path, help="Generation config JSON")
    gen_parser.add_argument("--out", type=Path, required=True, help="Scene snapshot to write")

    # Transform command
    transform_parser = subparsers.add_parser(
        "transform", help="Print the local world matrix between two nodes"
    )
    transform_parser.add_argument("--scene", type=Path, required=True, help="Scene snapshot")
    transform_parser.add_argument(
        "--from", dest="from_path", required=True, help="Current node path, e.g. /0/2/starsystem:1"
    )
    transform_parser.add_argument("--to", dest="to_path", required=True, help="Target node path")

    # Orbit command
    orbit_parser = subparsers.add_parser("orbit", help="Sample orbital positions as CSV")
    orbit_parser.add_argument("--params", type=Path, required=True, help="Orbit parameter JSON")
    when = orbit_parser.add_mutually_exclusive_group(required=True)
    when.add_argument("--t", type=float, nargs="+", help="Times in seconds")
    when.add_argument(
        "--period-samples", type=int, help="Evenly spaced samples over one period"
    )
    orbit_parser.add_argument(
        "--gravitational-constant", type=float, help="Overrides SNE_GRAVITATIONAL_CONSTANT"
    )
    orbit_parser.add_argument("--out", type=Path, help="CSV file (default: stdout)")

    # Simulate command
    simulate_parser = subparsers.add_parser(
        "simulate", help="Step orbits, free motion and frame transfers"
    )
    simulate_parser.add_argument("--scene", type=Path, required=True, help="Scene snapshot")
    simulate_parser.add_argument("--steps", type=int, required=True, help="Number of steps")
    simulate_parser.add_argument("--dt", type=float, required=True, help="Step length in seconds")
    simulate_parser.add_argument(
        "--t0", type=float, default=0.0, help="Start time in seconds (default: 0)"
    )
    simulate_parser.add_argument("--out", type=Path, required=True, help="Updated scene to write")
    simulate_parser.add_argument("--events", type=Path, help="Event log (default: stdout)")

    # Mesh command
    mesh_parser = subparsers.add_parser("mesh", help="Write an OBJ mesh")
    source = mesh_parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--ops", type=Path, help="Op program JSON")
    source.add_argument("--scene", type=Path, help="Scene snapshot holding a planet")
    mesh_parser.add_argument("--seed", type=parse_seed, default=0, help="Program seed (default: 0)")
    mesh_parser.add_argument(
        "--groups", help="Comma-separated groups to mesh (default: every group)"
    )
    mesh_parser.add_argument(
        "--node", help="Planet or planet_surface_node path (with --scene)"
    )
    mesh_parser.add_argument(
        "--resolution", type=int, default=16, help="Patch quads per side (default: 16)"
    )
    mesh_parser.add_argument("--config", type=Path, help="Generation config JSON (with --scene)")
    mesh_parser.add_argument("--jobs", type=int, help="Worker processes for surface patches")
    mesh_parser.add_argument("--out", type=Path, required=True, help="OBJ file to write")

    # Sky command
    sky_parser = subparsers.add_parser("sky", help="Render the atmosphere colour to PPM")
    sky_parser.add_argument("--params", type=Path, required=True, help="Atmosphere parameter JSON")
    sky_parser.add_argument("--width", type=int, required=True, help="Image width in pixels")
    sky_parser.add_argument("--height", type=int, required=True, help="Image height in pixels")
    sky_parser.add_argument("--jobs", type=int, help="Worker threads")
    sky_parser.add_argument("--out", type=Path, required=True, help="PPM file to write")

    return parser


def validate_gen_args(args: Any) -> bool:
    """Validate gen arguments."""
    if not 0 <= args.depth <= MAX_DEPTH:
        print(f"Error: --depth must be between 0 and {MAX_DEPTH}", file=sys.stderr)
        return False

    return True


def validate_transform_args(args: Any) -> bool:
    return True


def validate_orbit_args(args: Any) -> bool:
    """Validate orbit arguments."""
    if args.period_samples is not None and args.period_samples < 1:
        print("Error: --period-samples must be positive", file=sys.stderr)
        return False

    if args.t is not None and not all(math.isfinite(t) for t in args.t):
        print("Error: --t values must be finite", file=sys.stderr)
        return False

    if args.gravitational_constant is not None and not args.gravitational_constant > 0:
        print("Error: --gravitational-constant must be positive", file=sys.stderr)
        return False

    return True


def validate_simulate_args(args: Any) -> bool:
    """Validate simulate arguments."""
    if args.steps < 0:
        print("Error: --steps must not be negative", file=sys.stderr)
        return False

    if not math.isfinite(args.dt) or not math.isfinite(args.t0):
        print("Error: --dt and --t0 must be finite", file=sys.stderr)
        return False

    return True


def validate_mesh_args(args: Any) -> bool:
    """Validate mesh arguments."""
    if args.scene is not None and not args.node:
        print("Error: --node is required with --scene", file=sys.stderr)
        return False

    if args.resolution < 1:
        print("Error: --resolution must be positive", file=sys.stderr)
        return False

    if args.jobs is not None and args.jobs < 1:
        print("Error: --jobs must be positive", file=sys.stderr)
        return False

    return True


def validate_sky_args(args: Any) -> bool:
    """Validate sky arguments."""
    if args.width < 1 or args.height < 1:
        print("Error: --width and --height must be positive", file=sys.stderr)
        return False

    if args.jobs is not None and args.jobs < 1:
        print("Error: --jobs must be positive", file=sys.stderr)
        return False

    return True


def setup_logging() -> None:
    """Setup logging configuration."""
    # Get root logger and configure it using shared utility
    root_logger = logging.getLogger()
    root_logger.setLevel(logging.INFO)

    # Clear existing handlers to avoid duplicates
    root_logger.handlers.clear()

    # Borrow the handler of a throwaway logger so the root shares its format
    temp_logger = setup_logger("scalefree_world.setup")
    if temp_logger.handlers:
        root_logger.addHandler(temp_logger.handlers[0])
        temp_logger.handlers.clear()


def exit_code_for(error: BaseException) -> int:
    """Map a failure to the CLI exit code contract."""
    if isinstance(error, OpExecutionError):
        error = error.cause
    if isinstance(error, NUMERIC_ERRORS):
        return EXIT_NUMERIC
    return EXIT_USAGE


def _effective_seed(args: Any, config: EngineConfig) -> int:
    if config.seed is not None:
        logger.info(f"Using seed {config.seed} from SNE_SEED")
        return config.seed
    return int(args.seed)


def _gen_config(path: Optional[Path], config: EngineConfig) -> GenConfig:
    """Partition factors come from the environment unless the config file sets them."""
    base = GenConfig(split_factor=config.split_factor, merge_factor=config.merge_factor)
    return load_gen_config(path, base) if path is not None else base


def format_matrix(values: Any) -> list[str]:
    """One line per matrix row, shortest round-trip reals."""
    return [" ".join(repr(float(v)) for v in row) for row in values]


def handle_gen_command(args: Any, config: EngineConfig) -> int:
    """Handle gen command execution."""
    seed = _effective_seed(args, config)
    gen_config = _gen_config(args.config, config)
    world = generate_world(seed, args.depth, gen_config, config.get_scene_limits())
    save_scene(world, args.out)

    for level, count in enumerate(nodes_per_level(world)):
        print(f"Level {level} ({LEVELS[level]}): {count}")
    print(f"Total: {world.count()} nodes written to {args.out}")
    return EXIT_OK


def handle_transform_command(args: Any, config: EngineConfig) -> int:
    """Handle transform command execution."""
    world = load_scene(args.scene, config.get_scene_limits())
    current = resolve_node_path(world, args.from_path)
    target = resolve_node_path(world, args.to_path)

    lw = local_world_matrix(current, target)
    for line in format_matrix(lw.array):
        print(line)

    # Translation row is the target origin in current units
    distance = lw.translation_row.length() * current.absolute_size
    print(f"distance_m {distance!r}")
    return EXIT_OK


def _orbit_rows(args: Any, config: EngineConfig) -> list[tuple[float, float, float, float]]:
    G = (
        args.gravitational_constant
        if args.gravitational_constant is not None
        else config.gravitational_constant
    )
    params = load_orbit_params(args.params, G=G)

    if args.period_samples is not None:
        period = params.period
        times = [period * k / args.period_samples for k in range(args.period_samples)]
    else:
        times = list(args.t)

    rows = []
    for t in times:
        p = orbital_position(params, t, config.anomaly_epsilon, config.anomaly_max_iterations)
        rows.append((t, p.x, p.y, p.z))
    return rows


def _write_csv(rows: list[tuple[float, float, float, float]], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["t", "x", "y", "z"])
    writer.writerows(rows)


def handle_orbit_command(args: Any, config: EngineConfig) -> int:
    """Handle orbit command execution."""
    rows = _orbit_rows(args, config)

    if args.out is None:
        _write_csv(rows, sys.stdout)
    else:
        with open(args.out, "w", encoding="utf-8", newline="") as f:
            _write_csv(rows, f)
        logger.info(f"Wrote {len(rows)} orbit samples to {args.out}")
    return EXIT_OK


def simulate_step(world: Node, time: float, dt: float, config: EngineConfig) -> list[str]:
    """
    One update pass: orbits and spins at ``time``, free motion over ``dt``,
    then the horizon pass. Returns the event lines.
    """
    for node in world.iter_subtree():
        if node.get_component(ComponentKind.ORBIT) is not None:
            apply_orbit_component(
                node, time, config.anomaly_epsilon, config.anomaly_max_iterations
            )
        if node.get_component(ComponentKind.CONSTANT_ROTATION) is not None:
            apply_constant_rotation(node, time)

    advance_kinematics(world, dt)
    events = horizon_step(world, limits=config.get_scene_limits())
    return [event.to_line() for event in events]


def handle_simulate_command(args: Any, config: EngineConfig) -> int:
    """Handle simulate command execution."""
    world = load_scene(args.scene, config.get_scene_limits())

    lines: list[str] = []
    for step in range(1, args.steps + 1):
        step_lines = simulate_step(world, args.t0 + step * args.dt, args.dt, config)
        if step_lines:
            logger.debug(f"Step {step}: {len(step_lines)} events")
        lines.extend(step_lines)

    save_scene(world, args.out)
    log = "".join(f"{line}\n" for line in lines)
    if args.events is None:
        sys.stdout.write(log)
    else:
        Path(args.events).write_text(log, encoding="utf-8")
    logger.info(f"Simulated {args.steps} steps, {len(lines)} events")
    return EXIT_OK


def _surface_cells(node: Node) -> list[tuple[int, ...]]:
    faces = [node] if node.type_name == "planet_surface_node" else [
        child
        for surface in find_planet(node).children
        for child in surface.children
        if child.type_name == "planet_surface_node"
    ]
    cells: list[tuple[int, ...]] = []
    for face_node in faces:
        component = face_node.partition_component()
        if component is None:
            raise GenerationError(f"Surface node {face_node.id} has no partition")
        face = int(face_node.custom_vars.get("face", 0))  # type: ignore[arg-type]
        cells.extend((face, *path) for path in component.payload.active_cells)
    return cells


def handle_mesh_command(args: Any, config: EngineConfig) -> int:
    """Handle mesh command execution."""
    jobs = args.jobs if args.jobs is not None else config.jobs

    if args.ops is not None:
        program = load_program(args.ops)
        store = run_program(program, _effective_seed(args, config))
        groups = args.groups.split(",") if args.groups else store.names()
        mesh = emit_mesh(store, groups)
    else:
        world = load_scene(args.scene, config.get_scene_limits())
        node = resolve_node_path(world, args.node)
        planet = find_planet(node)
        cells = _surface_cells(node)
        gen_config = surface_config(planet, _gen_config(args.config, config))
        mesh = merge_meshes(
            build_surface_patches(planet, cells, args.resolution, gen_config, jobs)
        )

    mesh.write_obj(args.out)
    print(f"Wrote {mesh.triangle_count} triangles to {args.out}")
    return EXIT_OK


def handle_sky_command(args: Any, config: EngineConfig) -> int:
    """Handle sky command execution."""
    params, camera = load_atmosphere_params(args.params)
    jobs = args.jobs if args.jobs is not None else config.jobs
    image = render_sky(params, camera, args.width, args.height, jobs)
    write_ppm(image, args.out)
    return EXIT_OK


Handler = Callable[[Any, EngineConfig], int]

COMMANDS: dict[str, tuple[Callable[[Any], bool], Handler]] = {
    "gen": (validate_gen_args, handle_gen_command),
    "transform": (validate_transform_args, handle_transform_command),
    "orbit": (validate_orbit_args, handle_orbit_command),
    "simulate": (validate_simulate_args, handle_simulate_command),
    "mesh": (validate_mesh_args, handle_mesh_command),
    "sky": (validate_sky_args, handle_sky_command),
}


def main() -> None:
    """Main CLI entry point."""
    # Load environment variables
    load_dotenv()

    parser = create_parser()
    args = parser.parse_args()

    # Setup logging
    setup_logging()

    # Show help if no command specified
    if not args.command:
        parser.print_help()
        return

    config = EngineConfig()
    if not config.validate():
        sys.exit(EXIT_USAGE)

    command = COMMANDS.get(args.command)
    if command is None:
        print(f"Unknown command: {args.command}", file=sys.stderr)
        sys.exit(EXIT_USAGE)

    validate, handle = command
    if not validate(args):
        sys.exit(EXIT_USAGE)

    try:
        code = handle(args, config)
    except (EngineError, OSError) as e:
        code = exit_code_for(e)
        label = "Numerical error" if code == EXIT_NUMERIC else "Error"
        print(f"{label}: {e}", file=sys.stderr)
        logger.debug(f"{args.command} failed", exc_info=True)

    sys.exit(code)


if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        print("\nOperation cancelled by user", file=sys.stderr)
        sys.exit(0)
    except Exception as e:
        print(f"Unexpected error: {e}", file=sys.stderr)
        logging.exception("Unexpected error in main")
        sys.exit(1)
