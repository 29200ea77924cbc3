"""
Operation programs: parsing, schema validation and evaluation.

A program is a JSON array of operation objects such as::

    {"type": "inset", "from": "bt_base", "out": ["bt_base", "bt_sides"],
     "extrude": 0.4, "amount": 0.5}

Every key other than ``type``, ``from``, ``out``, ``when``, ``ops`` and
``else`` is an operation parameter, checked against the operation's schema
when the program is parsed.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path as FilePath
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from ..transform import Vec3
from ..utils import attribute_rng, mix_seed, setup_logger
from .primitives import GroupStore, Primitive, ProcgenError

logger = setup_logger(__name__)

RESERVED_KEYS = frozenset({"type", "from", "out", "when", "ops", "else"})
CATEGORIES = ("create", "extend", "modify", "select", "utility")

OpPath = tuple[int, ...]


class ProgramSyntaxError(ProcgenError):
    """Exception for op-program text that is not valid JSON."""

    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"line {line} column {column}: {message}")
        self.line = line
        self.column = column


class ProgramValidationError(ProcgenError):
    """Exception for op objects that break their operation schema."""

    def __init__(self, index: OpPath, message: str) -> None:
        super().__init__(f"op {format_op_path(index)}: {message}")
        self.index = index


class OpExecutionError(ProcgenError):
    """
    Exception for an operation failing at run time.

    ``store`` holds the group store as it was before the failing operation.
    """

    def __init__(self, index: OpPath, op_type: str, cause: Exception, store: GroupStore) -> None:
        super().__init__(f"op {format_op_path(index)} ({op_type}) failed: {cause}")
        self.index = index
        self.op_type = op_type
        self.cause = cause
        self.store = store


def format_op_path(index: OpPath) -> str:
    return ".".join(str(i) for i in index)


# ---------------------------------------------------------------------------
# Schemas and registry


@dataclass(frozen=True)
class ParamSpec:
    """
    One operation parameter.

    ``kind`` is one of ``number``, ``integer``, ``string``, ``bool``,
    ``vector``, ``points`` or ``matrix``.
    """

    kind: str
    default: Any = None
    required: bool = False
    minimum: Optional[float] = None
    exclusive_minimum: bool = False
    choices: Optional[tuple[str, ...]] = None


SourceHandler = Callable[
    ["Op", list[tuple[Primitive, ...]], "ExecutionContext"], Sequence[list[Primitive]]
]
StoreHandler = Callable[["Op", GroupStore, "ExecutionContext"], GroupStore]


@dataclass(frozen=True)
class OpSchema:
    """
    Registered operation type.

    Source handlers map the source groups to one list of primitives per
    output group; the evaluator appends them. ``consumes`` removes the source
    groups first. Store handlers (utility ops) get the whole store.
    """

    name: str
    category: str
    params: Mapping[str, ParamSpec]
    sources: tuple[int, Optional[int]]
    outputs: tuple[int, int]
    consumes: bool = False
    out_defaults_to_from: bool = False
    body: bool = False
    handler: Optional[SourceHandler] = None
    store_handler: Optional[StoreHandler] = None
    doc: str = ""


OPERATIONS: dict[str, OpSchema] = {}


def register_operation(
    name: str,
    category: str,
    *,
    params: Optional[Mapping[str, ParamSpec]] = None,
    sources: tuple[int, Optional[int]] = (1, 1),
    outputs: tuple[int, int] = (1, 1),
    consumes: bool = False,
    out_defaults_to_from: bool = False,
    body: bool = False,
    store_level: bool = False,
) -> Callable[[Callable[..., Any]], Callable[..., Any]]:
    """Decorator registering an operation handler under ``name``."""
    if category not in CATEGORIES:
        raise ValueError(f"Unknown operation category: {category}")

    def decorator(func: Callable[..., Any]) -> Callable[..., Any]:
        if name in OPERATIONS:
            raise ValueError(f"Operation already registered: {name}")
        OPERATIONS[name] = OpSchema(
            name=name,
            category=category,
            params=dict(params or {}),
            sources=sources,
            outputs=outputs,
            consumes=consumes,
            out_defaults_to_from=out_defaults_to_from,
            body=body,
            handler=None if store_level else func,
            store_handler=func if store_level else None,
            doc=(func.__doc__ or "").strip(),
        )
        return func

    return decorator


def operations_by_category() -> dict[str, list[str]]:
    grouped: dict[str, list[str]] = {category: [] for category in CATEGORIES}
    for schema in OPERATIONS.values():
        grouped[schema.category].append(schema.name)
    return grouped


# ---------------------------------------------------------------------------
# Program model


@dataclass(frozen=True)
class Condition:
    """
    Predicate guarding an operation.

    ``chance`` draws from the op's random stream; ``nonempty`` and
    ``min_count`` look at a group of the current store.
    """

    kind: str
    value: float = 0.0
    group: Optional[str] = None

    def holds(self, store: GroupStore, rng: np.random.Generator) -> bool:
        if self.kind == "chance":
            return bool(rng.random() < self.value)
        if self.kind == "nonempty":
            return len(store.get(self.group or "")) > 0
        return len(store.get(self.group or "")) >= self.value


@dataclass(frozen=True)
class Op:
    type: str
    sources: tuple[str, ...]
    outputs: tuple[str, ...]
    params: Mapping[str, Any] = field(default_factory=dict)
    condition: Optional[Condition] = None
    body: tuple["Op", ...] = ()
    orelse: tuple["Op", ...] = ()


@dataclass(frozen=True)
class OpProgram:
    ops: tuple[Op, ...] = ()

    def __len__(self) -> int:
        return len(self.ops)


def _names(value: Any, index: OpPath, key: str) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, str) and v for v in value):
        raise ProgramValidationError(index, f"'{key}' must be a group name or a list of names")
    return tuple(value)


def _number(value: Any, index: OpPath, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProgramValidationError(index, f"parameter '{name}' must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ProgramValidationError(index, f"parameter '{name}' must be finite")
    return float(value)


def _vector(value: Any, index: OpPath, name: str) -> Vec3:
    if not isinstance(value, list) or len(value) != 3:
        raise ProgramValidationError(index, f"parameter '{name}' must be a 3-vector")
    return Vec3(*(_number(v, index, name) for v in value))


def _coerce(spec: ParamSpec, value: Any, index: OpPath, name: str) -> Any:
    kind = spec.kind
    if kind == "number":
        result: Any = _number(value, index, name)
    elif kind == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ProgramValidationError(index, f"parameter '{name}' must be an integer")
        result = value
    elif kind == "string":
        if not isinstance(value, str):
            raise ProgramValidationError(index, f"parameter '{name}' must be a string")
        if spec.choices is not None and value not in spec.choices:
            raise ProgramValidationError(
                index, f"parameter '{name}' must be one of {', '.join(spec.choices)}"
            )
        result = value
    elif kind == "bool":
        if not isinstance(value, bool):
            raise ProgramValidationError(index, f"parameter '{name}' must be true or false")
        result = value
    elif kind == "vector":
        result = _vector(value, index, name)
    elif kind == "points":
        if not isinstance(value, list):
            raise ProgramValidationError(index, f"parameter '{name}' must be a list of 3-vectors")
        result = tuple(_vector(v, index, name) for v in value)
    elif kind == "matrix":
        if not isinstance(value, list) or len(value) != 2:
            raise ProgramValidationError(index, f"parameter '{name}' must be a 2x3 matrix")
        rows = []
        for row in value:
            if not isinstance(row, list) or len(row) != 3:
                raise ProgramValidationError(index, f"parameter '{name}' must be a 2x3 matrix")
            rows.append(tuple(_number(v, index, name) for v in row))
        result = tuple(rows)
    else:
        raise ValueError(f"Unknown parameter kind: {kind}")

    if spec.minimum is not None and kind in ("number", "integer"):
        too_small = result <= spec.minimum if spec.exclusive_minimum else result < spec.minimum
        if too_small:
            bound = ">" if spec.exclusive_minimum else ">="
            raise ProgramValidationError(
                index, f"parameter '{name}' must be {bound} {spec.minimum}, got {result}"
            )
    return result


def _parse_condition(value: Any, index: OpPath) -> Condition:
    if not isinstance(value, dict) or len(value) != 1:
        raise ProgramValidationError(
            index, "'when' must be an object with one of: chance, nonempty, min_count"
        )
    (kind, arg), = value.items()
    if kind == "chance":
        chance = _number(arg, index, "chance")
        if not 0.0 <= chance <= 1.0:
            raise ProgramValidationError(index, f"chance must be in [0, 1], got {chance}")
        return Condition("chance", value=chance)
    if kind == "nonempty":
        if not isinstance(arg, str) or not arg:
            raise ProgramValidationError(index, "nonempty needs a group name")
        return Condition("nonempty", group=arg)
    if kind == "min_count":
        if (
            not isinstance(arg, list)
            or len(arg) != 2
            or not isinstance(arg[0], str)
            or isinstance(arg[1], bool)
            or not isinstance(arg[1], int)
        ):
            raise ProgramValidationError(index, "min_count needs [group, count]")
        return Condition("min_count", value=float(arg[1]), group=arg[0])
    raise ProgramValidationError(index, f"unknown condition '{kind}'")


def _parse_ops(items: Any, prefix: OpPath) -> tuple[Op, ...]:
    if not isinstance(items, list):
        where = format_op_path(prefix) if prefix else "program"
        raise ProgramValidationError(prefix, f"{where} must be a JSON array of op objects")
    return tuple(_parse_op(item, prefix + (i,)) for i, item in enumerate(items))


def _parse_op(item: Any, index: OpPath) -> Op:
    if not isinstance(item, dict):
        raise ProgramValidationError(index, "op must be a JSON object")
    op_type = item.get("type")
    if not isinstance(op_type, str):
        raise ProgramValidationError(index, "missing operation 'type'")
    schema = OPERATIONS.get(op_type)
    if schema is None:
        raise ProgramValidationError(index, f"unknown operation type '{op_type}'")

    sources = _names(item.get("from"), index, "from")
    outputs = _names(item.get("out"), index, "out")
    if not outputs and schema.out_defaults_to_from:
        outputs = sources

    low, high = schema.sources
    if len(sources) < low or (high is not None and len(sources) > high):
        expected = f"{low}" if low == high else f"{low}..{'n' if high is None else high}"
        raise ProgramValidationError(
            index, f"{op_type} takes {expected} source group(s), got {len(sources)}"
        )
    low, high = schema.outputs
    if not low <= len(outputs) <= high:
        expected = f"{low}" if low == high else f"{low}..{high}"
        raise ProgramValidationError(
            index, f"{op_type} takes {expected} output group(s), got {len(outputs)}"
        )

    params: dict[str, Any] = {}
    for key, value in item.items():
        if key in RESERVED_KEYS:
            continue
        spec = schema.params.get(key)
        if spec is None:
            raise ProgramValidationError(index, f"unknown parameter '{key}' for {op_type}")
        params[key] = _coerce(spec, value, index, key)
    for key, spec in schema.params.items():
        if key in params:
            continue
        if spec.required:
            raise ProgramValidationError(
                index, f"missing required parameter '{key}' for {op_type}"
            )
        params[key] = spec.default

    condition = _parse_condition(item["when"], index) if "when" in item else None
    if op_type == "if" and condition is None:
        raise ProgramValidationError(index, "if needs a 'when' condition")

    body: tuple[Op, ...] = ()
    orelse: tuple[Op, ...] = ()
    if schema.body:
        body = _parse_ops(item.get("ops", []), index)
        orelse = _parse_ops(item.get("else", []), index + (len(body),)) if "else" in item else ()
    elif "ops" in item or "else" in item:
        raise ProgramValidationError(index, f"{op_type} does not take nested ops")

    return Op(op_type, sources, outputs, params, condition, body, orelse)


def parse_program(text: str) -> OpProgram:
    """
    Parse and validate an op program.

    Raises:
        ProgramSyntaxError: If the text is not valid JSON
        ProgramValidationError: If an op breaks its schema, naming the op index
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProgramSyntaxError(e.msg, e.lineno, e.colno) from e
    return OpProgram(_parse_ops(data, ()))


def load_program(path: FilePath | str) -> OpProgram:
    raw = FilePath(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        line = raw.count(b"\n", 0, e.start) + 1
        column = e.start - raw.rfind(b"\n", 0, e.start)
        raise ProgramSyntaxError("invalid UTF-8", line, column) from e
    return parse_program(text)


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class ExecutionContext:
    """Seed and position of the operation being evaluated."""

    seed: int
    path: OpPath

    def rng(self, tag: str = "op") -> np.random.Generator:
        return attribute_rng(self.seed, tag, *self.path)

    def child(self, *indices: int) -> "ExecutionContext":
        return ExecutionContext(self.seed, self.path + indices)

    def forked(self, salt: int) -> "ExecutionContext":
        return ExecutionContext(mix_seed(self.seed, "fork", salt, *self.path), self.path)

    def run(self, ops: Sequence[Op], store: GroupStore) -> GroupStore:
        for index, op in enumerate(ops):
            store = _apply(op, store, self.child(index))
        return store


def _apply(op: Op, store: GroupStore, ctx: ExecutionContext) -> GroupStore:
    schema = OPERATIONS[op.type]

    if schema.store_handler is not None:
        # Nested ops raise their own execution errors with deeper indices
        try:
            return schema.store_handler(op, store, ctx)
        except OpExecutionError:
            raise
        except Exception as e:
            raise OpExecutionError(ctx.path, op.type, e, store) from e

    if op.condition is not None and not op.condition.holds(store, ctx.rng("when")):
        return store

    assert schema.handler is not None
    try:
        results = schema.handler(op, [store.get(name) for name in op.sources], ctx)
    except Exception as e:
        raise OpExecutionError(ctx.path, op.type, e, store) from e

    if len(results) != len(op.outputs):
        raise OpExecutionError(
            ctx.path,
            op.type,
            ProcgenError(f"handler produced {len(results)} groups for {len(op.outputs)} outputs"),
            store,
        )

    updated = store.without(op.sources) if schema.consumes else store
    for name, primitives in zip(op.outputs, results):
        updated = updated.appended(name, primitives)
    return updated


def run_program(program: OpProgram, seed: int, initial: Optional[GroupStore] = None) -> GroupStore:
    """
    Apply the program's operations in order.

    The result depends only on ``(program, seed, initial)``.

    Raises:
        OpExecutionError: If an operation fails; carries the op index and the
            last consistent store
    """
    store = initial if initial is not None else GroupStore()
    result = ExecutionContext(seed, ()).run(program.ops, store)
    logger.debug(f"Program of {len(program)} ops produced {result.total()} primitives")
    return result
