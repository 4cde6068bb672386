"""Operator graphs: kinds, port signatures, the graph file and DAG validation.

    [operator load]
    kind = study_loader

    [operator select]
    kind = series_selector
    criteria = modality == "CT" and slice_thickness >= 2.0

    [edge]
    from = load.study
    to = select.study
"""

import re
from dataclasses import dataclass, field
from enum import StrEnum
from graphlib import CycleError, TopologicalSorter

from lib.map.errors import CycleDetected, DanglingInput, GraphError, PortTypeMismatch
from lib.sections import IDENTIFIER, parse_sections


class PortType(StrEnum):
    STUDY = "study"
    SERIES = "series"
    VOLUME = "volume"
    RESULT = "result"
    PATH = "path"


class Kind(StrEnum):
    STUDY_LOADER = "study_loader"
    SERIES_SELECTOR = "series_selector"
    SERIES_TO_VOLUME = "series_to_volume"
    STUB_INFERENCE = "stub_inference"
    SR_WRITER = "sr_writer"
    SC_WRITER = "sc_writer"


@dataclass(frozen=True)
class Signature:
    inputs: dict[str, PortType]
    outputs: dict[str, PortType]
    params: frozenset[str] = frozenset()


SIGNATURES: dict[Kind, Signature] = {
    Kind.STUDY_LOADER: Signature({}, {"study": PortType.STUDY}),
    Kind.SERIES_SELECTOR: Signature(
        {"study": PortType.STUDY}, {"series": PortType.SERIES}, frozenset({"criteria"})
    ),
    Kind.SERIES_TO_VOLUME: Signature({"series": PortType.SERIES}, {"volume": PortType.VOLUME}),
    Kind.STUB_INFERENCE: Signature(
        {"volume": PortType.VOLUME}, {"result": PortType.RESULT}, frozenset({"threshold", "min_fraction"})
    ),
    Kind.SR_WRITER: Signature(
        {"result": PortType.RESULT, "study": PortType.STUDY},
        {"path": PortType.PATH},
        frozenset({"evaluation_type"}),
    ),
    Kind.SC_WRITER: Signature(
        {"volume": PortType.VOLUME, "result": PortType.RESULT, "study": PortType.STUDY},
        {"path": PortType.PATH},
    ),
}


@dataclass(frozen=True)
class OperatorSpec:
    name: str
    kind: Kind
    params: dict[str, str] = field(default_factory=dict, hash=False, compare=False)

    @property
    def signature(self) -> Signature:
        return SIGNATURES[self.kind]


@dataclass(frozen=True)
class Edge:
    producer: str
    output: str
    consumer: str
    input: str

    def __str__(self) -> str:
        return f"{self.producer}.{self.output} -> {self.consumer}.{self.input}"


@dataclass(frozen=True)
class AppGraph:
    operators: tuple[OperatorSpec, ...]
    edges: tuple[Edge, ...] = ()

    def operator(self, name: str) -> OperatorSpec:
        for op in self.operators:
            if op.name == name:
                return op
        raise GraphError(f"no operator named {name}")

    def inbound(self, name: str) -> list[Edge]:
        return [e for e in self.edges if e.consumer == name]


_PORT_REF = re.compile(rf"^({IDENTIFIER})\.({IDENTIFIER})$")


def _port_ref(entry) -> tuple[str, str]:
    match = _PORT_REF.match(entry.value.strip())
    if not match:
        raise entry.error(f"expected operator.port, got {entry.value!r}", len(entry.key) + 3)
    return match.group(1), match.group(2)


def parse_graph(text: str) -> AppGraph:
    operators: list[OperatorSpec] = []
    edges: list[Edge] = []
    for section in parse_sections(text):
        match section.kind:
            case "operator":
                if not section.name:
                    raise section.error("[operator] needs a name")
                if any(op.name == section.name for op in operators):
                    raise section.error(f"operator {section.name} defined twice")
                kind_entry = section.get("kind")
                if kind_entry is None:
                    raise section.error(f"operator {section.name} has no kind")
                try:
                    kind = Kind(kind_entry.value.strip())
                except ValueError:
                    raise kind_entry.error(
                        f"unknown operator kind {kind_entry.value!r}; one of {', '.join(Kind)}"
                    ) from None
                params = {}
                for entry in section.entries:
                    if entry.key == "kind":
                        continue
                    if entry.key not in SIGNATURES[kind].params:
                        raise entry.error(f"{kind} takes no parameter {entry.key!r}")
                    params[entry.key] = entry.value.strip()
                operators.append(OperatorSpec(section.name, kind, params))
            case "edge":
                source, target = section.get("from"), section.get("to")
                if source is None or target is None:
                    raise section.error("[edge] needs both from and to")
                producer, output = _port_ref(source)
                consumer, input_ = _port_ref(target)
                edges.append(Edge(producer, output, consumer, input_))
            case other:
                raise section.error(f"unknown section [{other}] in graph file")
    return AppGraph(tuple(operators), tuple(edges))


def read_graph(path) -> AppGraph:
    with open(path, "r", encoding="utf-8") as f:
        return parse_graph(f.read())


def validate_dag(g: AppGraph) -> list[str]:
    """Check acyclicity and wiring; returns one topological order of operator names."""
    names = {op.name for op in g.operators}
    for edge in g.edges:
        for name in (edge.producer, edge.consumer):
            if name not in names:
                raise DanglingInput(f"edge {edge} names unknown operator {name}")

    sorter = TopologicalSorter({op.name: set() for op in g.operators})
    for edge in g.edges:
        sorter.add(edge.consumer, edge.producer)
    try:
        order = list(sorter.static_order())
    except CycleError as e:
        raise CycleDetected(list(e.args[1])) from None

    for edge in g.edges:
        produced = g.operator(edge.producer).signature.outputs.get(edge.output)
        wanted = g.operator(edge.consumer).signature.inputs.get(edge.input)
        if produced is None:
            raise PortTypeMismatch(f"edge {edge}: {edge.producer} has no output port {edge.output}")
        if wanted is None:
            raise PortTypeMismatch(f"edge {edge}: {edge.consumer} has no input port {edge.input}")
        if produced != wanted:
            raise PortTypeMismatch(f"edge {edge}: {produced} output wired to {wanted} input")

    for op in g.operators:
        inbound = g.inbound(op.name)
        for port in op.signature.inputs:
            count = sum(1 for e in inbound if e.input == port)
            if count == 0:
                raise DanglingInput(f"input {op.name}.{port} has no producer")
            if count > 1:
                raise DanglingInput(f"input {op.name}.{port} has {count} producers")
    return order
