"""Job abstraction: logical DAG of operators and physical parallelism assignments."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

from .errors import (
    ConfigError,
    CyclicGraph,
    DanglingEdge,
    DegreeViolation,
    EmptyDag,
    MissingAssignment,
    NonPositiveParallelism,
)

SOURCE = "source"
STATELESS = "stateless"
STATEFUL = "stateful"
SINK = "sink"

OPERATOR_KINDS = (SOURCE, STATELESS, STATEFUL, SINK)


@dataclass(frozen=True)
class OperatorSpec:
    """One logical operator: its kind, long-run selectivity and selectivity noise.

    ``mean_selectivity`` is the long-run mean of output records per input
    record.  ``selectivity_noise_cv`` is the coefficient of variation of the
    per-window selectivity draw; stateful operators (window, join) are the
    noisy ones, stateless operators must use 0.
    """

    id: str
    kind: str
    mean_selectivity: float = 1.0
    selectivity_noise_cv: float = 0.0

    def __post_init__(self):
        if not self.id or any(c in self.id for c in ",\n\r"):
            raise ConfigError(f"operator id {self.id!r} must be non-empty and free of commas/newlines")
        if self.kind not in OPERATOR_KINDS:
            raise ConfigError(f"operator {self.id!r}: unknown kind {self.kind!r}")
        if self.mean_selectivity < 0:
            raise ConfigError(f"operator {self.id!r}: mean_selectivity must be >= 0")
        if self.selectivity_noise_cv < 0:
            raise ConfigError(f"operator {self.id!r}: selectivity_noise_cv must be >= 0")
        if self.kind == STATELESS and self.selectivity_noise_cv != 0:
            raise ConfigError(f"operator {self.id!r}: stateless operators must have selectivity_noise_cv = 0")


@dataclass(frozen=True)
class LogicalDag:
    """Operator graph; immutable after construction, safe to share."""

    operators: tuple[OperatorSpec, ...]
    edges: tuple[tuple[str, str], ...]

    @property
    def n(self) -> int:
        return len(self.operators)

    def __post_init__(self):
        object.__setattr__(self, "operators", tuple(self.operators))
        object.__setattr__(self, "edges", tuple((a, b) for a, b in self.edges))

    def operator(self, op_id: str) -> OperatorSpec:
        return self._by_id[op_id]

    @property
    def _by_id(self) -> dict[str, OperatorSpec]:
        return {op.id: op for op in self.operators}

    def producers(self, op_id: str) -> list[str]:
        return [a for a, b in self.edges if b == op_id]

    def consumers(self, op_id: str) -> list[str]:
        return [b for a, b in self.edges if a == op_id]

    def source_ids(self) -> list[str]:
        return [op.id for op in self.operators if op.kind == SOURCE]

    def sink_ids(self) -> list[str]:
        return [op.id for op in self.operators if op.kind == SINK]


ParallelismAssignment = dict[str, int]


@dataclass(frozen=True)
class PhysicalDag:
    """A logical DAG bound to a parallelism assignment (one core per instance)."""

    dag: LogicalDag
    assignment: ParallelismAssignment

    @property
    def total_cores(self) -> int:
        return sum(self.assignment.values())


def validate_dag(dag: LogicalDag) -> None:
    """Check acyclicity, operator count and source/sink degree rules.

    Raises EmptyDag, DanglingEdge, CyclicGraph or DegreeViolation naming the
    offending element.
    """
    ids = [op.id for op in dag.operators]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})[0]
        raise DanglingEdge(f"duplicate operator id {dup!r}")
    known = set(ids)
    if len(known) <= 1:
        raise EmptyDag(f"a job needs more than one operator, got {len(known)}")
    for a, b in dag.edges:
        if a not in known:
            raise DanglingEdge(f"edge ({a!r}, {b!r}) references unknown producer {a!r}")
        if b not in known:
            raise DanglingEdge(f"edge ({a!r}, {b!r}) references unknown consumer {b!r}")
        if a == b:
            raise CyclicGraph(f"self-loop on operator {a!r}")
    in_deg = {i: 0 for i in known}
    out_deg = {i: 0 for i in known}
    for a, b in dag.edges:
        out_deg[a] += 1
        in_deg[b] += 1
    for op in dag.operators:
        if op.kind == SOURCE and in_deg[op.id] > 0:
            raise DegreeViolation(f"source {op.id!r} has incoming edges")
        if op.kind == SINK and out_deg[op.id] > 0:
            raise DegreeViolation(f"sink {op.id!r} has outgoing edges")
        if op.kind != SOURCE and in_deg[op.id] == 0:
            raise DegreeViolation(f"non-source {op.id!r} has no incoming edge")
    topological_order(dag)  # raises CyclicGraph on a cycle


def topological_order(dag: LogicalDag) -> list[str]:
    """Kahn's algorithm; ties broken by ascending operator id (deterministic)."""
    known = {op.id for op in dag.operators}
    in_deg = {i: 0 for i in known}
    consumers: dict[str, list[str]] = {i: [] for i in known}
    for a, b in dag.edges:
        if a not in known or b not in known:
            raise DanglingEdge(f"edge ({a!r}, {b!r}) references an unknown operator")
        in_deg[b] += 1
        consumers[a].append(b)
    ready = [i for i, d in sorted(in_deg.items()) if d == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        op = heapq.heappop(ready)
        order.append(op)
        for c in consumers[op]:
            in_deg[c] -= 1
            if in_deg[c] == 0:
                heapq.heappush(ready, c)
    if len(order) != len(known):
        stuck = sorted(i for i, d in in_deg.items() if d > 0)
        raise CyclicGraph(f"cycle through operators {stuck}")
    return order


def apply_parallelism(dag: LogicalDag, assignment: ParallelismAssignment) -> PhysicalDag:
    """Bind an assignment to the DAG; every operator needs one entry with p >= 1."""
    for op in dag.operators:
        if op.id not in assignment:
            raise MissingAssignment(f"no parallelism for operator {op.id!r}")
    for op_id, p in assignment.items():
        if not isinstance(p, int) or p < 1:
            raise NonPositiveParallelism(f"operator {op_id!r}: p={p!r} must be an integer >= 1")
    return PhysicalDag(dag=dag, assignment=dict(assignment))


def dag_from_dict(doc: dict, *, where: str = "dag") -> LogicalDag:
    """Build and validate a LogicalDag from a parsed JSON document.

    Errors cite the offending field path, e.g. ``dag.operators[2].kind``.
    """
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    ops_doc = doc.get("operators")
    if not isinstance(ops_doc, list) or not ops_doc:
        raise ConfigError(f"{where}.operators: expected a non-empty list")
    operators = []
    for i, entry in enumerate(ops_doc):
        path = f"{where}.operators[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{path}: expected an object")
        try:
            operators.append(
                OperatorSpec(
                    id=str(entry["id"]),
                    kind=str(entry["kind"]),
                    mean_selectivity=float(entry.get("mean_selectivity", 1.0)),
                    selectivity_noise_cv=float(entry.get("selectivity_noise_cv", 0.0)),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"{path}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
    edges_doc = doc.get("edges", [])
    if not isinstance(edges_doc, list):
        raise ConfigError(f"{where}.edges: expected a list")
    edges = []
    for i, pair in enumerate(edges_doc):
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
            raise ConfigError(f"{where}.edges[{i}]: expected a [from, to] pair")
        edges.append((str(pair[0]), str(pair[1])))
    dag = LogicalDag(operators=tuple(operators), edges=tuple(edges))
    validate_dag(dag)
    return dag


def load_dag(path) -> LogicalDag:
    """Load a DAG definition file (JSON); parse errors cite line/field."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return dag_from_dict(doc, where=str(path))
