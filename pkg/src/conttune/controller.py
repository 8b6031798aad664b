"""Job-state classification and the tuning loop.

The controller classifies a measurement window into over-/under-provisioned
or steady, gates suggested assignments through the decision threshold, and
drives the tuner across the workload trace.  Under-provisioned jobs go
through the Big phase and then the Small phase; over-provisioned jobs enter
the Small phase directly.  A job that is backpressured without CPU stress
(data skew, some other bottleneck) is left alone.

Each trace epoch is one tuning time; within it the loop runs measurement
windows back to back and may issue several tuner rounds until the epoch ends.
When the current source-rate vector has already been observed backpressure
free, the cached per-operator rates are reused and an under-provisioned job
skips the Big phase: the whole point of continuous tuning is that a repeated
workload needs no re-measurement escalation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .errors import AssignmentMismatch, ZeroAllTime
from .history import HistoryStore
from .simulator import MetricsSample, StreamSimulator, observed_pa

BACKPRESSURE = "backpressure"
NON_BACKPRESSURE = "non-backpressure"
CPU_LOW = "cpuLow"
CPU_NORMAL = "cpuNormal"
CPU_STRESS = "cpuStress"
OVER = "over"
UNDER = "under"
STEADY = "steady"

FAST_EXPLOITATION = "fast_exploitation"
CONSERVATIVE_EXPLORATION = "conservative_exploration"


@dataclass(frozen=True)
class Thresholds:
    backpressure_pct: float = 10.0
    core_min: float = 0.4
    core_max: float = 0.8
    decision: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.core_min < self.core_max <= 1.0:
            raise ValueError("need 0 <= core_min < core_max <= 1")
        if not 0.0 < self.backpressure_pct <= 100.0:
            raise ValueError("backpressure_pct must be in (0, 100]")
        if self.decision < 0:
            raise ValueError("decision threshold must be >= 0")


def backpressure_per(sample: MetricsSample) -> float:
    """Job-level backpressure percentage: max over operators of bp/allTime."""
    worst = None
    for op, om in sample.operators.items():
        all_time = om.backpressured_ms + om.idle_ms + om.busy_ms
        if all_time <= 0:
            raise ZeroAllTime(f"operator {op!r} reported an empty window")
        ratio = om.backpressured_ms / all_time * 100.0
        worst = ratio if worst is None else max(worst, ratio)
    if worst is None:
        raise ZeroAllTime("sample has no operators")
    return worst


def classify_pressure(per: float, thresholds: Thresholds) -> str:
    return BACKPRESSURE if per >= thresholds.backpressure_pct else NON_BACKPRESSURE


def classify_cpu(usage: float, thresholds: Thresholds) -> str:
    if usage < thresholds.core_min:
        return CPU_LOW
    if usage <= thresholds.core_max:
        return CPU_NORMAL
    return CPU_STRESS


def provisioning_state(pressure: str, cpu: str) -> str:
    if pressure == NON_BACKPRESSURE and cpu == CPU_LOW:
        return OVER
    if pressure == BACKPRESSURE and cpu == CPU_STRESS:
        return UNDER
    return STEADY


def classify_sample(sample: MetricsSample, thresholds: Thresholds) -> str:
    return provisioning_state(
        classify_pressure(backpressure_per(sample), thresholds),
        classify_cpu(sample.cpu_usage, thresholds),
    )


def should_apply(new: dict[str, int], cur: dict[str, int], decision_thr: float) -> bool:
    """Apply only when the summed parallelism moves by at least the decision
    ratio, in either direction; equal sums never apply."""
    if set(new) != set(cur):
        raise AssignmentMismatch(
            f"assignments cover different operators: {sorted(set(new) ^ set(cur))}"
        )
    s_new = sum(new.values())
    s_cur = sum(cur.values())
    if s_new == s_cur:
        return False
    if s_new < s_cur:
        return s_cur / s_new >= 1.0 + decision_thr
    return s_new / s_cur >= 1.0 + decision_thr


# --------------------------------------------------------------------------
# tuning loop
# --------------------------------------------------------------------------

@dataclass
class EpochStats:
    index: int
    t_start: float
    rates: dict[str, float]
    states: list[str] = field(default_factory=list)
    reconfigurations: int = 0
    big_reconfigurations: int = 0
    small_reconfigurations: int = 0
    fallback_reconfigurations: int = 0
    corrective_reconfigurations: int = 0
    fast_suggestions: int = 0
    conservative_suggestions: int = 0


@dataclass
class TuningReport:
    """Reconfiguration/backlog/CPU-cost accounting for one run."""

    scenario: str
    tuner: str
    seed: int
    tunings: int = 0                      # rho: tuning times (trace epochs)
    reconfigurations: int = 0
    big_reconfigurations: int = 0
    small_reconfigurations: int = 0
    conservative_uses: int = 0            # chi: per-operator fallback suggestions
    fast_uses: int = 0
    phi_observed: int = 0                 # max fallback reconfigs in one tuning
    omega_observed: int = 0               # corrections after premature exploitation
    avg_reconfigs_per_tuning: float = 0.0
    max_cores: int = 0
    total_core_seconds: float = 0.0
    backlog_pct: float = 0.0
    drain_time_s: float = 0.0
    epochs: list[EpochStats] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TuningReport":
        epochs = [EpochStats(**e) for e in doc.pop("epochs", [])]
        return cls(epochs=epochs, **doc)


def lam_from_sample(sample: MetricsSample, rates: dict[str, float]) -> dict[str, float]:
    # Sources are rate-limited emitters whose demand is externally known;
    # everything else uses the observed rate, valid once backpressure-free.
    return {
        op: rates[op] if op in rates else om.observed_rate
        for op, om in sample.operators.items()
    }


def _rates_key(rates: dict[str, float]) -> tuple:
    return tuple(sorted((k, round(v, 9)) for k, v in rates.items()))


def record_observations(store: HistoryStore, sim: StreamSimulator, sample: MetricsSample) -> None:
    """Append ⟨p, PA(p)⟩ for every operator with a usable window.

    Skips operators that were idle (no useful time) or throttled by
    backpressure (their observed rate exceeds what they processed, which
    makes the PA estimate unsound).
    """
    assignment = sim.assignment
    for op, om in sample.operators.items():
        if om.busy_ms <= 0:
            continue
        if om.observed_rate > om.processed_rate:
            continue
        store.record(op, assignment[op], observed_pa(sample, op), ts=sim.clock)


def tuning_loop(
    sim: StreamSimulator,
    tuner,
    store: HistoryStore,
    thresholds: Thresholds,
    trace,
    *,
    window_s: float = 30.0,
    scenario_name: str = "",
    seed: int = 0,
) -> TuningReport:
    """Drive the tuner over the trace and account every reconfiguration."""
    from . import tuners as tuners_mod

    report = TuningReport(scenario=scenario_name, tuner=getattr(tuner, "name", type(tuner).__name__), seed=seed)
    lam_cache: dict[tuple, dict[str, float]] = {}

    for index, epoch in enumerate(trace.epochs):
        rates = dict(epoch.rates)
        key = _rates_key(rates)
        epoch_end = sim.clock + epoch.duration_s
        st = EpochStats(index=index, t_start=sim.clock, rates=rates)
        last_apply_had_fast = False

        while sim.clock + window_s <= epoch_end + 1e-9:
            sample = sim.run_window(rates, window_s)
            if hasattr(tuner, "observe"):
                tuner.observe(sample, sim.assignment, rates)
            record_observations(store, sim, sample)
            pressure = classify_pressure(backpressure_per(sample), thresholds)
            state = provisioning_state(pressure, classify_cpu(sample.cpu_usage, thresholds))
            st.states.append(state)
            total_queue = sum(om.queue for om in sample.operators.values())
            if pressure == NON_BACKPRESSURE and total_queue < 1.0:
                lam_cache[key] = lam_from_sample(sample, rates)
            if state == STEADY:
                continue

            lam = None
            before = sim.reconfiguration_count
            if state == UNDER and tuner.wants_big:
                lam = lam_cache.get(key) if tuner.uses_lambda_cache else None
                if lam is None:
                    big = tuners_mod.big_phase(
                        sim,
                        store,
                        thresholds,
                        rates,
                        p_max_floor=tuner.p_max_floor,
                        hard_cap=tuner.hard_cap,
                        window_s=window_s,
                    )
                    st.big_reconfigurations += big.reconfigurations
                    lam = big.lam
                    lam_cache[key] = lam
                    sample = big.final_sample
            elif state == OVER:
                lam = lam_from_sample(sample, rates)

            suggestion = tuner.suggest(
                tuners_mod.TuningContext(
                    sample=sample,
                    assignment=sim.assignment,
                    lam=lam,
                    store=store,
                    state=state,
                    rates=rates,
                    window_s=window_s,
                    dag=sim.dag,
                )
            )
            if suggestion is not None:
                n_fast = sum(1 for v in suggestion.provenance.values() if v == FAST_EXPLOITATION)
                n_cons = sum(1 for v in suggestion.provenance.values() if v == CONSERVATIVE_EXPLORATION)
                st.fast_suggestions += n_fast
                st.conservative_suggestions += n_cons
                if should_apply(suggestion.assignment, sim.assignment, thresholds.decision):
                    corrective = last_apply_had_fast and state == UNDER
                    sim.reconfigure(suggestion.assignment)
                    st.small_reconfigurations += 1
                    if n_cons > 0:
                        st.fallback_reconfigurations += 1
                    if corrective:
                        st.corrective_reconfigurations += 1
                    last_apply_had_fast = n_fast > 0
            st.reconfigurations += sim.reconfiguration_count - before

        report.epochs.append(st)
        report.tunings += 1
        report.big_reconfigurations += st.big_reconfigurations
        report.small_reconfigurations += st.small_reconfigurations
        report.conservative_uses += st.conservative_suggestions
        report.fast_uses += st.fast_suggestions
        report.phi_observed = max(report.phi_observed, st.fallback_reconfigurations)
        report.omega_observed += st.corrective_reconfigurations

    report.reconfigurations = sim.reconfiguration_count
    report.avg_reconfigs_per_tuning = report.reconfigurations / max(report.tunings, 1)
    report.max_cores = sim.max_cores
    report.total_core_seconds = sim.core_seconds
    report.backlog_pct = sim.backlogged_at_reconfigs / max(sim.generated_records, 1.0)
    report.drain_time_s = sim.drain_seconds
    return report
