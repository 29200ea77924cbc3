"""
Operation-based procedural generation: primitives, op programs and meshes.
"""

from . import ops
from .mesh import (
    TriangleMesh,
    TriangulationError,
    emit_mesh,
    merge_meshes,
    triangulate_surface,
)
from .ops import DegenerateInsetError, inset_surface
from .primitives import (
    GroupStore,
    Path,
    Point,
    Primitive,
    PrimitiveError,
    ProcgenError,
    Surface,
)
from .program import (
    OPERATIONS,
    Op,
    OpExecutionError,
    OpProgram,
    ProgramSyntaxError,
    ProgramValidationError,
    load_program,
    operations_by_category,
    parse_program,
    run_program,
)

__all__ = [
    "ops",
    "OPERATIONS",
    "DegenerateInsetError",
    "GroupStore",
    "Op",
    "OpExecutionError",
    "OpProgram",
    "Path",
    "Point",
    "Primitive",
    "PrimitiveError",
    "ProcgenError",
    "ProgramSyntaxError",
    "ProgramValidationError",
    "Surface",
    "TriangleMesh",
    "TriangulationError",
    "emit_mesh",
    "inset_surface",
    "load_program",
    "merge_meshes",
    "operations_by_category",
    "parse_program",
    "run_program",
    "triangulate_surface",
]
