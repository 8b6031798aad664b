"""Deterministic discrete-time simulator of a physical DAG.

Queueing model, per step of length dt (forward pass in topological order):

    arrivals_i  = source rate            (sources)
                = sum of upstream emissions (everything else)
    offered_i   = queue_i / dt + arrivals_i
    processed_i = min(offered_i, PA_i, throttle cap)
    queue_i    += (arrivals_i - processed_i) * dt   (floored at 0)

An operator whose immediate downstream queue exceeds its threshold
(``bp_queue_threshold_factor * dt * capacity``) is backpressured: its
processing is throttled to the bottleneck's share of service rate and its
non-busy time is reported as backPressuredTimeMsPerSecond.  The observed rate
is capped at capacity, so lambda-hat understates the real upstream rate while
the job is under-provisioned.

Stateful operators draw two multiplicative log-normal factors per measurement
window (mean 1, the operator's selectivity_noise_cv): one perturbs their real
output selectivity (bursty emission), the other corrupts the *reported* busy
time while the actual processing stays truthful.  The second channel is what
makes processing-ability observations noisy enough to need Top-K smoothing.
With all CVs at zero the simulator is exact and rate/time identities hold to
float precision.

The capacity curves are ground truth known only to the simulator and the
harness oracle; tuners see MetricsSample values only.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .dag import LogicalDag, ParallelismAssignment, SOURCE, apply_parallelism, topological_order
from .errors import (
    ConfigError,
    MissingAssignment,
    NonPositiveParallelism,
    UnknownSource,
    ZeroUsefulTime,
)

METRICS_CSV_HEADER = "t,op,backpressured_ms,idle_ms,busy_ms,observed_rate,processed_rate,queue,cpu_usage"


@dataclass(frozen=True)
class CapacityCurve:
    """p -> records/s mapping with diminishing returns.

    amdahl: PA(p) = C * p / (1 + sigma * (p - 1)),  sigma in [0, 1)
    power:  PA(p) = C * p ** gamma,                 gamma in (0, 1]
    """

    family: str
    base_rate: float
    serial_fraction: float = 0.0
    exponent: float = 1.0

    def __post_init__(self):
        if self.family not in ("amdahl", "power"):
            raise ConfigError(f"unknown capacity curve family {self.family!r}")
        if self.base_rate <= 0:
            raise ConfigError("base_rate must be > 0")
        if self.family == "amdahl" and not 0.0 <= self.serial_fraction < 1.0:
            raise ConfigError("amdahl serial_fraction must be in [0, 1)")
        if self.family == "power" and not 0.0 < self.exponent <= 1.0:
            raise ConfigError("power exponent must be in (0, 1]")


def capacity(curve: CapacityCurve, p: int) -> float:
    """Processing ability at parallelism p; deterministic."""
    if p < 1:
        raise NonPositiveParallelism(f"p={p} must be >= 1")
    if curve.family == "amdahl":
        return curve.base_rate * p / (1.0 + curve.serial_fraction * (p - 1))
    return curve.base_rate * p ** curve.exponent


@dataclass(frozen=True, slots=True)
class OperatorMetrics:
    backpressured_ms: float
    idle_ms: float
    busy_ms: float
    observed_rate: float
    processed_rate: float
    output_rate: float
    queue: float
    queue_growth: float


@dataclass(frozen=True)
class MetricsSample:
    """Per-operator metrics plus job-level CPU usage, over window_s seconds."""

    operators: dict[str, OperatorMetrics]
    cpu_usage: float
    window_s: float
    t_start: float


def observed_pa(sample: MetricsSample, op: str) -> float:
    """Processing-ability estimate: observed rate over useful-time fraction."""
    om = sample.operators[op]
    busy_frac = om.busy_ms / 1000.0
    if busy_frac <= 0.0:
        raise ZeroUsefulTime(f"operator {op!r} received no data in this window")
    return om.observed_rate / busy_frac


def real_upstream_rates_oracle(dag: LogicalDag, source_rates: dict[str, float]) -> dict[str, float]:
    """True per-operator arrival rates: forward pass with infinite capacity
    and mean selectivities.  Pure function of the source rates."""
    by_id = {op.id: op for op in dag.operators}
    producers: dict[str, list[str]] = {op.id: [] for op in dag.operators}
    for a, b in dag.edges:
        producers[b].append(a)
    rates: dict[str, float] = {}
    emitted: dict[str, float] = {}
    for op_id in topological_order(dag):
        op = by_id[op_id]
        if op.kind == SOURCE:
            lam = float(source_rates[op_id])
        else:
            lam = sum(emitted[p] for p in producers[op_id])
        rates[op_id] = lam
        emitted[op_id] = lam * op.mean_selectivity
    return rates


@dataclass(frozen=True)
class SimConfig:
    dt_s: float = 1.0
    downtime_s: float = 10.0
    bp_queue_threshold_factor: float = 10.0
    seed: int = 0


@dataclass(frozen=True)
class DrainReport:
    backlog_records: float
    estimated_drain_s: float


def _lognormal_factor(rng: random.Random, cv: float) -> float:
    # mean-1 multiplicative draw with the given coefficient of variation
    sigma = math.sqrt(math.log(1.0 + cv * cv))
    return rng.lognormvariate(-0.5 * sigma * sigma, sigma)


class StreamSimulator:
    """Single-threaded stepping; independent instances may run in parallel.

    Identical (seed, config, action sequence) produces identical metric
    streams bit for bit.
    """

    def __init__(
        self,
        dag: LogicalDag,
        curves: dict[str, CapacityCurve],
        assignment: ParallelismAssignment,
        config: SimConfig = SimConfig(),
        metrics_sink=None,
    ):
        missing = [op.id for op in dag.operators if op.id not in curves]
        if missing:
            raise ConfigError(f"no capacity curve for operators {missing}")
        apply_parallelism(dag, assignment)
        self.dag = dag
        self.config = config
        self.metrics_sink = metrics_sink
        self._curves = dict(curves)
        self._assignment = dict(assignment)
        self._order = topological_order(dag)
        self._by_id = {op.id: op for op in dag.operators}
        self._producers: dict[str, list[str]] = {i: [] for i in self._order}
        self._consumers: dict[str, list[str]] = {i: [] for i in self._order}
        for a, b in dag.edges:
            self._producers[b].append(a)
            self._consumers[a].append(b)
        self._sources = set(dag.source_ids())
        self._rng = random.Random(config.seed)
        self._noise_factors: dict[str, tuple[float, float]] = {}
        self.clock = 0.0
        self.queues: dict[str, float] = {i: 0.0 for i in self._order}
        self.reconfiguration_count = 0
        self._last_rates: dict[str, float] = {}
        # run accounting (read by the harness)
        self.generated_records = 0.0
        self.core_seconds = 0.0
        self.max_cores = sum(assignment.values())
        self.backlogged_at_reconfigs = 0.0
        self.drain_seconds = 0.0

    # -- read-only views -------------------------------------------------

    @property
    def assignment(self) -> ParallelismAssignment:
        return dict(self._assignment)

    @property
    def total_cores(self) -> int:
        return sum(self._assignment.values())

    def capacity_of(self, op_id: str) -> float:
        return capacity(self._curves[op_id], self._assignment[op_id])

    def _threshold(self, op_id: str) -> float:
        return self.config.bp_queue_threshold_factor * self.config.dt_s * self.capacity_of(op_id)

    # -- stepping ---------------------------------------------------------

    def _check_rates(self, source_rates: dict[str, float]) -> None:
        unknown = set(source_rates) - self._sources
        if unknown:
            raise UnknownSource(f"rates given for non-source operators {sorted(unknown)}")
        missing = self._sources - set(source_rates)
        if missing:
            raise UnknownSource(f"no rate for sources {sorted(missing)}")

    def _redraw_noise(self) -> None:
        # per measurement window per stateful operator: a real selectivity
        # draw and a busy-time reporting error
        factors = {}
        for op_id in self._order:
            op = self._by_id[op_id]
            if op.selectivity_noise_cv > 0:
                factors[op_id] = (
                    _lognormal_factor(self._rng, op.selectivity_noise_cv),
                    _lognormal_factor(self._rng, op.selectivity_noise_cv),
                )
        self._noise_factors = factors

    def step(
        self,
        source_rates: dict[str, float],
        dt: float | None = None,
        hold_noise: bool = False,
    ) -> MetricsSample:
        dt = self.config.dt_s if dt is None else dt
        if dt <= 0:
            raise ConfigError("dt must be > 0")
        self._check_rates(source_rates)
        self._last_rates = dict(source_rates)
        start_queues = dict(self.queues)
        if not hold_noise:
            self._redraw_noise()

        blocked: dict[str, bool] = {}
        for op_id in self._order:
            blocked[op_id] = any(
                start_queues[c] > self._threshold(c) for c in self._consumers[op_id]
            )

        pa_eff: dict[str, float] = {}
        sel_eff: dict[str, float] = {}
        busy_err: dict[str, float] = {}
        for op_id in self._order:
            op = self._by_id[op_id]
            pa_eff[op_id] = self.capacity_of(op_id)
            eps = self._noise_factors.get(op_id)
            sel_eff[op_id] = op.mean_selectivity * (eps[0] if eps else 1.0)
            busy_err[op_id] = eps[1] if eps else 1.0

        # pass 1: desired (unthrottled) processing, used for throttle shares
        desired_emit: dict[str, float] = {}
        for op_id in self._order:
            if op_id in self._sources:
                arrivals = source_rates[op_id]
            else:
                arrivals = sum(desired_emit[p] for p in self._producers[op_id])
            offered = start_queues[op_id] / dt + arrivals
            desired = min(offered, pa_eff[op_id])
            desired_emit[op_id] = desired * sel_eff[op_id]

        # pass 2: throttled processing and queue updates
        per_op: dict[str, OperatorMetrics] = {}
        emit: dict[str, float] = {}
        busy_frac: dict[str, float] = {}
        for op_id in self._order:
            if op_id in self._sources:
                arrivals = source_rates[op_id]
            else:
                arrivals = sum(emit[p] for p in self._producers[op_id])
            offered = start_queues[op_id] / dt + arrivals
            lam_hat = min(offered, pa_eff[op_id])
            throttle = math.inf
            if blocked[op_id] and sel_eff[op_id] > 0:
                for c in self._consumers[op_id]:
                    if start_queues[c] <= self._threshold(c):
                        continue
                    contributions = sum(desired_emit[p] for p in self._producers[c])
                    share = desired_emit[op_id] / contributions if contributions > 0 else 1.0 / len(self._producers[c])
                    throttle = min(throttle, pa_eff[c] * share / sel_eff[op_id])
            processed = min(lam_hat, throttle)
            emit[op_id] = processed * sel_eff[op_id]
            self.queues[op_id] = max(0.0, start_queues[op_id] + (arrivals - processed) * dt)
            frac = processed / pa_eff[op_id] if pa_eff[op_id] > 0 else 0.0
            busy_frac[op_id] = frac
            # the reported useful time carries the measurement error; the
            # blocked/idle remainder absorbs it so the budget still sums to 1 s
            if blocked[op_id]:
                bp_ms = 1000.0 * (1.0 - frac)
                busy_ms = min(1000.0 * frac * busy_err[op_id], 1000.0 - bp_ms)
                idle_ms = 1000.0 - bp_ms - busy_ms
            else:
                bp_ms = 0.0
                busy_ms = min(1000.0 * frac * busy_err[op_id], 1000.0)
                idle_ms = 1000.0 - busy_ms
            per_op[op_id] = OperatorMetrics(
                backpressured_ms=bp_ms,
                idle_ms=idle_ms,
                busy_ms=busy_ms,
                observed_rate=lam_hat,
                processed_rate=processed,
                output_rate=emit[op_id],
                queue=self.queues[op_id],
                queue_growth=(self.queues[op_id] - start_queues[op_id]) / dt,
            )

        total_p = self.total_cores
        cpu = sum(busy_frac[i] * self._assignment[i] for i in self._order) / total_p
        t_start = self.clock
        self.clock += dt
        self.generated_records += sum(source_rates.values()) * dt
        self.core_seconds += total_p * dt
        if sum(start_queues.values()) > 1.0:
            self.drain_seconds += dt
        sample = MetricsSample(operators=per_op, cpu_usage=cpu, window_s=dt, t_start=t_start)
        if self.metrics_sink is not None:
            for op_id in self._order:
                self.metrics_sink(t_start, op_id, per_op[op_id], cpu)
        return sample

    def run_window(self, source_rates: dict[str, float], window_s: float) -> MetricsSample:
        """Aggregate a measurement window of back-to-back steps.

        Time metrics are per-second means, rates are means, queue is the end
        value.
        """
        dt = self.config.dt_s
        n = max(1, round(window_s / dt))
        t_start = self.clock
        acc = {i: [0.0] * 7 for i in self._order}
        cpu_acc = 0.0
        last = None
        for i in range(n):
            last = self.step(source_rates, dt, hold_noise=i > 0)
            cpu_acc += last.cpu_usage
            for op_id, om in last.operators.items():
                a = acc[op_id]
                a[0] += om.backpressured_ms
                a[1] += om.idle_ms
                a[2] += om.busy_ms
                a[3] += om.observed_rate
                a[4] += om.processed_rate
                a[5] += om.output_rate
                a[6] += om.queue_growth
        per_op = {
            op_id: OperatorMetrics(
                backpressured_ms=a[0] / n,
                idle_ms=a[1] / n,
                busy_ms=a[2] / n,
                observed_rate=a[3] / n,
                processed_rate=a[4] / n,
                output_rate=a[5] / n,
                queue=last.operators[op_id].queue,
                queue_growth=a[6] / n,
            )
            for op_id, a in acc.items()
        }
        return MetricsSample(operators=per_op, cpu_usage=cpu_acc / n, window_s=n * dt, t_start=t_start)

    # -- reconfiguration ----------------------------------------------------

    def reconfigure(self, new: ParallelismAssignment) -> None:
        """Apply a new assignment (kill-and-restart).

        Counts one reconfiguration unless the assignment is identical; during
        the configured downtime source demand accumulates in the source
        queues and the queued data at that moment is booked as backlogged.
        """
        for op_id in self._order:
            if op_id not in new:
                raise MissingAssignment(f"no parallelism for operator {op_id!r}")
        for op_id, p in new.items():
            if not isinstance(p, int) or p < 1:
                raise NonPositiveParallelism(f"operator {op_id!r}: p={p!r} must be an integer >= 1")
        if all(new[i] == self._assignment[i] for i in self._order):
            return
        self.reconfiguration_count += 1
        downtime = self.config.downtime_s
        if downtime > 0:
            for src in self._sources:
                self.queues[src] += self._last_rates.get(src, 0.0) * downtime
            self.clock += downtime
            self.generated_records += sum(self._last_rates.values()) * downtime
            self.core_seconds += sum(new.values()) * downtime
            if downtime > 0 and sum(self.queues.values()) > 1.0:
                self.drain_seconds += downtime
        self.backlogged_at_reconfigs += sum(self.queues.values())
        self._assignment = {i: int(new[i]) for i in self._order}
        self.max_cores = max(self.max_cores, self.total_cores)

    def drain_report(self) -> DrainReport:
        """Backlog and a spare-capacity drain estimate at the current assignment."""
        backlog = sum(self.queues.values())
        if backlog <= 0:
            return DrainReport(0.0, 0.0)
        rates = {s: self._last_rates.get(s, 0.0) for s in self._sources}
        lam = real_upstream_rates_oracle(self.dag, rates)
        spare = sum(max(0.0, self.capacity_of(i) - lam[i]) for i in self._order)
        if spare <= 0:
            return DrainReport(backlog, math.inf)
        return DrainReport(backlog, backlog / spare)
