"""Programs: the DAG of kernel instances, their document format and checks.

A program document is UTF-8 JSON with exactly the top-level keys
``kernels``, ``nodes`` and ``arrows``::

    {"kernels": {name: {"body": "...", "io": {point: {"data": "float",
                                                      "type": "InputPoint"}}}},
     "nodes":   [[id, {"kernel": name}], ...],
     "arrows":  [{"output": [id, point], "input": [id, point]}, ...]}

``serialize_program`` emits the canonical form — object keys sorted by code
point, no insignificant whitespace — and the program id is the SHA-256 of
those bytes, so structurally equal programs always share one id.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field

from .errors import KernelError, ProgramFormatError
from .types import DataType, Direction, IOPoint, is_identifier, parse_type_name

__all__ = [
    "Node", "Instance", "Arrow", "Program", "FreePoint",
    "Violation", "ValidationReport",
    "parse_program", "serialize_program", "validate",
    "topological_order", "program_id", "free_points",
]


@dataclass(frozen=True)
class Node:
    """A named kernel: body source plus typed i/o points.

    The io field is a set in spirit; it is stored sorted by point name so
    structural equality and serialization never depend on insertion order.
    """

    name: str
    body: str
    io: tuple[IOPoint, ...]

    def __post_init__(self) -> None:
        if not is_identifier(self.name):
            raise ProgramFormatError(f"invalid kernel name {self.name!r}")
        seen = set()
        for p in self.io:
            if p.name in seen:
                raise ProgramFormatError(
                    f"kernel {self.name!r}: duplicate point {p.name!r}")
            seen.add(p.name)
        object.__setattr__(self, "io",
                           tuple(sorted(self.io, key=lambda p: p.name)))

    @property
    def points(self) -> dict[str, IOPoint]:
        return {p.name: p for p in self.io}


@dataclass(frozen=True)
class Instance:
    id: int
    kernel: str


@dataclass(frozen=True)
class Arrow:
    """Directed edge: (producer instance, output point) -> (consumer, input)."""

    output: tuple[int, str]
    input: tuple[int, str]


@dataclass(frozen=True)
class FreePoint:
    """A point with no arrow; the attachment site of an external stream."""

    instance: int
    point: str
    direction: Direction
    data: DataType

    @property
    def stream(self) -> str:
        return f"{self.instance}.{self.point}"


@dataclass(frozen=True)
class Program:
    """An immutable DAG document: kernels, instances and arrows."""

    kernels: dict[str, Node]
    nodes: tuple[Instance, ...]
    arrows: tuple[Arrow, ...]

    def instance(self, iid: int) -> Instance:
        for inst in self.nodes:
            if inst.id == iid:
                return inst
        raise KeyError(iid)

    def point_of(self, iid: int, point: str) -> IOPoint:
        return self.kernels[self.instance(iid).kernel].points[point]


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str

    def to_json(self) -> dict:
        return {"kind": self.kind, "message": self.message}


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> list[dict]:
        return [v.to_json() for v in self.violations]

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(f"{v.kind}: {v.message}" for v in self.violations)


# ---------------------------------------------------------------------------
# document parsing / serialization

def _require_keys(obj: dict, keys: set[str], where: str) -> None:
    missing = keys - obj.keys()
    if missing:
        raise ProgramFormatError(f"{where}: missing key {sorted(missing)[0]!r}")
    unknown = obj.keys() - keys
    if unknown:
        raise ProgramFormatError(f"{where}: unknown key {sorted(unknown)[0]!r}")


def _parse_io_point(name: str, spec) -> IOPoint:
    if not isinstance(spec, dict):
        raise ProgramFormatError(f"point {name!r}: expected an object")
    _require_keys(spec, {"data", "type"}, f"point {name!r}")
    if not is_identifier(name):
        raise ProgramFormatError(f"invalid point name {name!r}")
    try:
        data = parse_type_name(spec["data"])
        direction = Direction.from_wire(spec["type"])
    except (ValueError, TypeError) as exc:
        raise ProgramFormatError(f"point {name!r}: {exc}") from exc
    return IOPoint(name, data, direction)


def _parse_kernel(name: str, spec) -> Node:
    if not isinstance(spec, dict):
        raise ProgramFormatError(f"kernel {name!r}: expected an object")
    _require_keys(spec, {"body", "io"}, f"kernel {name!r}")
    if not isinstance(spec["body"], str):
        raise ProgramFormatError(f"kernel {name!r}: body must be a string")
    if not isinstance(spec["io"], dict):
        raise ProgramFormatError(f"kernel {name!r}: io must be an object")
    io = tuple(_parse_io_point(pname, pspec)
               for pname, pspec in spec["io"].items())
    return Node(name, spec["body"], io)


def _parse_endpoint(raw, arrows_index: int, side: str) -> tuple[int, str]:
    if (not isinstance(raw, list) or len(raw) != 2
            or not isinstance(raw[0], int) or isinstance(raw[0], bool)
            or not isinstance(raw[1], str)):
        raise ProgramFormatError(
            f"arrow {arrows_index}: {side} endpoint must be [instance, point]")
    return raw[0], raw[1]


def parse_program(document: bytes | str) -> Program:
    """Parse and structurally check a program document.

    Referential integrity (kernels, instances, points, directions) is
    enforced here; graph-level rules live in :func:`validate`.
    """
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProgramFormatError(f"document is not UTF-8: {exc}") from exc
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ProgramFormatError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ProgramFormatError("document must be a JSON object")
    _require_keys(doc, {"kernels", "nodes", "arrows"}, "document")

    if not isinstance(doc["kernels"], dict):
        raise ProgramFormatError("kernels must be an object")
    kernels = {name: _parse_kernel(name, spec)
               for name, spec in doc["kernels"].items()}

    if not isinstance(doc["nodes"], list):
        raise ProgramFormatError("nodes must be a list")
    instances: list[Instance] = []
    seen_ids: set[int] = set()
    for entry in doc["nodes"]:
        if (not isinstance(entry, list) or len(entry) != 2
                or not isinstance(entry[0], int) or isinstance(entry[0], bool)
                or not isinstance(entry[1], dict)):
            raise ProgramFormatError(
                "node entries must be [id, {\"kernel\": name}] pairs")
        iid, spec = entry
        _require_keys(spec, {"kernel"}, f"instance {iid}")
        if iid < 0:
            raise ProgramFormatError(f"instance id {iid} is negative")
        if iid in seen_ids:
            raise ProgramFormatError(f"duplicate instance id {iid}")
        seen_ids.add(iid)
        if spec["kernel"] not in kernels:
            raise ProgramFormatError(
                f"instance {iid}: unknown kernel {spec['kernel']!r}")
        instances.append(Instance(iid, spec["kernel"]))

    by_id = {inst.id: inst for inst in instances}
    if not isinstance(doc["arrows"], list):
        raise ProgramFormatError("arrows must be a list")
    arrows: list[Arrow] = []
    for i, entry in enumerate(doc["arrows"]):
        if not isinstance(entry, dict):
            raise ProgramFormatError(f"arrow {i}: expected an object")
        _require_keys(entry, {"output", "input"}, f"arrow {i}")
        out = _parse_endpoint(entry["output"], i, "output")
        inp = _parse_endpoint(entry["input"], i, "input")
        for side, (iid, pname), want in (("output", out, Direction.OUTPUT),
                                         ("input", inp, Direction.INPUT)):
            if iid not in by_id:
                raise ProgramFormatError(f"arrow {i}: unknown instance {iid}")
            points = kernels[by_id[iid].kernel].points
            if pname not in points:
                raise ProgramFormatError(
                    f"arrow {i}: unknown point {pname!r} on instance {iid}")
            if points[pname].direction is not want:
                raise ProgramFormatError(
                    f"arrow {i}: {side} endpoint [{iid}, {pname!r}] is not an "
                    f"{want.value}")
        if out[0] == inp[0]:
            raise ProgramFormatError(
                f"arrow {i}: endpoints on the same instance {out[0]}")
        arrows.append(Arrow(out, inp))

    return Program(kernels=kernels, nodes=tuple(instances), arrows=tuple(arrows))


def _document_of(program: Program) -> dict:
    return {
        "kernels": {
            name: {
                "body": node.body,
                "io": {p.name: {"data": p.data.name, "type": p.direction.value}
                       for p in node.io},
            }
            for name, node in program.kernels.items()
        },
        "nodes": [[inst.id, {"kernel": inst.kernel}] for inst in program.nodes],
        "arrows": [{"output": [a.output[0], a.output[1]],
                    "input": [a.input[0], a.input[1]]} for a in program.arrows],
    }


def serialize_program(program: Program) -> bytes:
    """Canonical document bytes: sorted keys, no insignificant whitespace."""
    return json.dumps(_document_of(program), sort_keys=True,
                      separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def program_id(program: Program) -> str:
    """Lowercase-hex SHA-256 of the canonical document."""
    return hashlib.sha256(serialize_program(program)).hexdigest()


# ---------------------------------------------------------------------------
# graph semantics

def _adjacency(program: Program) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {inst.id: set() for inst in program.nodes}
    for arrow in program.arrows:
        adj[arrow.output[0]].add(arrow.input[0])
    return adj


def _find_cycle(program: Program) -> list[int] | None:
    adj = _adjacency(program)
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {iid: WHITE for iid in adj}
    stack: list[int] = []

    def visit(iid: int) -> list[int] | None:
        color[iid] = GRAY
        stack.append(iid)
        for succ in sorted(adj[iid]):
            if color[succ] == GRAY:
                return stack[stack.index(succ):] + [succ]
            if color[succ] == WHITE:
                found = visit(succ)
                if found:
                    return found
        stack.pop()
        color[iid] = BLACK
        return None

    for iid in sorted(adj):
        if color[iid] == WHITE:
            found = visit(iid)
            if found:
                return found
    return None


def topological_order(program: Program) -> list[int]:
    """Instance ids so every arrow goes forward; ties by ascending id."""
    adj = _adjacency(program)
    indeg = {iid: 0 for iid in adj}
    for arrow in program.arrows:
        indeg[arrow.input[0]] += 1
    ready = [iid for iid, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        iid = heapq.heappop(ready)
        order.append(iid)
        for succ in sorted(adj[iid]):
            indeg[succ] -= 1
            if indeg[succ] == 0:
                heapq.heappush(ready, succ)
    if len(order) != len(adj):
        cycle = _find_cycle(program)
        raise ProgramFormatError(f"program has a cycle: {cycle}")
    return order


def free_points(program: Program) -> list[FreePoint]:
    """The unconnected points, sorted by (instance id, point name)."""
    taken: set[tuple[int, str]] = set()
    for arrow in program.arrows:
        taken.add(arrow.output)
        taken.add(arrow.input)
    free = [
        FreePoint(inst.id, p.name, p.direction, p.data)
        for inst in program.nodes
        for p in program.kernels[inst.kernel].io
        if (inst.id, p.name) not in taken
    ]
    free.sort(key=lambda fp: (fp.instance, fp.point))
    return free


def validate(program: Program) -> ValidationReport:
    """Check every executability rule; an empty report means runnable."""
    from .kernel.typecheck import compile_kernel  # local to avoid cycle

    report = ValidationReport()

    for name, node in program.kernels.items():
        if not any(p.is_input for p in node.io):
            report.violations.append(Violation(
                "node-io", f"kernel {name!r} has no input point"))
        if not any(not p.is_input for p in node.io):
            report.violations.append(Violation(
                "node-io", f"kernel {name!r} has no output point"))
        try:
            compile_kernel(node.body, node.points)
        except KernelError as exc:
            report.violations.append(Violation(
                "kernel", f"kernel {name!r}: {exc}"))

    endpoints: dict[tuple[int, str], int] = {}
    for arrow in program.arrows:
        for end in (arrow.output, arrow.input):
            endpoints[end] = endpoints.get(end, 0) + 1
        out_t = program.point_of(*arrow.output).data
        in_t = program.point_of(*arrow.input).data
        if out_t.base != in_t.base:
            report.violations.append(Violation(
                "arrow-type-mismatch",
                f"arrow {arrow.output} -> {arrow.input}: base scalar type "
                f"mismatch ({out_t} vs {in_t})"))
    for end, uses in sorted(endpoints.items()):
        if uses > 1:
            report.violations.append(Violation(
                "duplicate-endpoint",
                f"point {end[0]}.{end[1]} appears in {uses} arrows"))

    cycle = _find_cycle(program)
    if cycle is not None:
        report.violations.append(Violation(
            "cycle", f"instances form a cycle: {' -> '.join(map(str, cycle))}"))

    free = free_points(program)
    if not any(fp.direction is Direction.INPUT for fp in free):
        report.violations.append(Violation(
            "no-free-input", "program has no free input point"))
    if not any(fp.direction is Direction.OUTPUT for fp in free):
        report.violations.append(Violation(
            "no-free-output", "program has no free output point"))
    return report
