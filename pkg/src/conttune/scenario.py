"""Scenario config documents: the DAG, curves, thresholds, sim and tuner
parameters, and the workload trace, bundled for the harness.

See README for the JSON schema.  Validation errors carry the offending field
path and make the CLI exit with status 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .controller import Thresholds
from .dag import LogicalDag, dag_from_dict, load_dag
from .errors import ConfigError
from .simulator import CapacityCurve, SimConfig
from .tuners import TunerConfig
from .workloads import Epoch, WorkloadTrace, load_trace, synthetic_permutation


@dataclass
class Scenario:
    name: str
    dag: LogicalDag
    curves: dict[str, CapacityCurve]
    trace: WorkloadTrace
    thresholds: Thresholds = field(default_factory=Thresholds)
    sim: SimConfig = field(default_factory=SimConfig)
    tuner: TunerConfig = field(default_factory=TunerConfig)
    window_s: float = 30.0
    initial_assignment: dict[str, int] | None = None

    def assignment_or_ones(self) -> dict[str, int]:
        if self.initial_assignment is not None:
            return dict(self.initial_assignment)
        return {op.id: 1 for op in self.dag.operators}


def _expect(doc: dict, key: str, where: str):
    if key not in doc:
        raise ConfigError(f"{where}.{key}: missing")
    return doc[key]


def _curve_from_dict(doc: dict, where: str) -> CapacityCurve:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    family = _expect(doc, "family", where)
    try:
        if family == "amdahl":
            return CapacityCurve(
                family="amdahl",
                base_rate=float(_expect(doc, "base_rate", where)),
                serial_fraction=float(doc.get("serial_fraction", 0.0)),
            )
        if family == "power":
            return CapacityCurve(
                family="power",
                base_rate=float(_expect(doc, "base_rate", where)),
                exponent=float(doc.get("exponent", 1.0)),
            )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}.family: unknown family {family!r}")


def _trace_from_dict(doc: dict, base: Path, where: str) -> WorkloadTrace:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    if "path" in doc:
        return load_trace(base / doc["path"])
    if "synthetic" in doc:
        syn = doc["synthetic"]
        wu = _expect(syn, "wu", f"{where}.synthetic")
        if not isinstance(wu, dict) or not wu:
            raise ConfigError(f"{where}.synthetic.wu: expected a source->rate object")
        return synthetic_permutation(
            {str(k): float(v) for k, v in wu.items()},
            length=int(syn.get("length", 10)),
            replication=int(syn.get("replication", 2)),
            seed=int(syn.get("seed", 0)),
            epoch_s=float(syn.get("epoch_s", 600.0)),
            order=[int(m) for m in syn["order"]] if "order" in syn else None,
        )
    if "epochs" in doc:
        epochs = []
        for i, entry in enumerate(doc["epochs"]):
            path = f"{where}.epochs[{i}]"
            if not (isinstance(entry, (list, tuple)) and len(entry) == 2 and isinstance(entry[1], dict)):
                raise ConfigError(f"{path}: expected [duration_s, {{source: rate}}]")
            epochs.append(Epoch(duration_s=float(entry[0]), rates={str(k): float(v) for k, v in entry[1].items()}))
        return WorkloadTrace(epochs=tuple(epochs))
    raise ConfigError(f"{where}: need one of path / synthetic / epochs")


def scenario_from_dict(doc: dict, base: Path = Path("."), name: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError(f"{name}: expected an object")
    if "dag" in doc:
        dag = dag_from_dict(doc["dag"], where=f"{name}.dag")
    elif "dag_path" in doc:
        dag = load_dag(base / doc["dag_path"])
    else:
        raise ConfigError(f"{name}.dag: missing (inline dag or dag_path)")

    curves_doc = _expect(doc, "curves", name)
    if not isinstance(curves_doc, dict):
        raise ConfigError(f"{name}.curves: expected an object")
    curves = {
        str(op): _curve_from_dict(c, f"{name}.curves.{op}") for op, c in curves_doc.items()
    }
    for op in dag.operators:
        if op.id not in curves:
            raise ConfigError(f"{name}.curves.{op.id}: missing capacity curve")

    try:
        thr_doc = doc.get("thresholds", {})
        thresholds = Thresholds(
            backpressure_pct=float(thr_doc.get("backpressure_pct", 10.0)),
            core_min=float(thr_doc.get("core_min", 0.4)),
            core_max=float(thr_doc.get("core_max", 0.8)),
            decision=float(thr_doc.get("decision", 0.1)),
        )
    except ValueError as exc:
        raise ConfigError(f"{name}.thresholds: {exc}") from None

    sim_doc = doc.get("sim", {})
    try:
        sim = SimConfig(
            dt_s=float(sim_doc.get("dt_s", 1.0)),
            downtime_s=float(sim_doc.get("downtime_s", 10.0)),
            bp_queue_threshold_factor=float(sim_doc.get("bp_queue_threshold_factor", 10.0)),
            seed=int(sim_doc.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}.sim: {exc}") from None
    if sim.dt_s <= 0:
        raise ConfigError(f"{name}.sim.dt_s: must be > 0")

    tun_doc = doc.get("tuner", {})
    try:
        tuner = TunerConfig(
            alpha=float(tun_doc.get("alpha", 3.0)),
            k=int(tun_doc.get("k", 3)),
            p_max_floor=int(tun_doc.get("p_max_floor", 4)),
            hard_cap=int(tun_doc.get("hard_cap", 90)),
            acquisition=str(tun_doc.get("acquisition", "conttune")),
        )
    except ValueError as exc:
        raise ConfigError(f"{name}.tuner: {exc}") from None

    trace = _trace_from_dict(_expect(doc, "trace", name), base, f"{name}.trace")

    initial = doc.get("initial_assignment")
    if initial is not None:
        if not isinstance(initial, dict):
            raise ConfigError(f"{name}.initial_assignment: expected an object")
        initial = {str(k): int(v) for k, v in initial.items()}
        for op in dag.operators:
            if op.id not in initial:
                raise ConfigError(f"{name}.initial_assignment.{op.id}: missing")

    window_s = float(doc.get("window_s", 30.0))
    if window_s < sim.dt_s:
        raise ConfigError(f"{name}.window_s: must be >= sim.dt_s")

    missing_sources = set(dag.source_ids()) - set(trace.epochs[0].rates if trace.epochs else {})
    if missing_sources:
        raise ConfigError(f"{name}.trace: no rates for sources {sorted(missing_sources)}")

    return Scenario(
        name=str(doc.get("name", name)),
        dag=dag,
        curves=curves,
        trace=trace,
        thresholds=thresholds,
        sim=sim,
        tuner=tuner,
        window_s=window_s,
        initial_assignment=initial,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(doc, base=path.parent, name=str(path))
