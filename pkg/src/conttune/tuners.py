"""Tuning algorithms: Big phase, conservative BO, and the baselines.

The Small phase treats each operator as an independent sub-problem once the
real upstream rates are known: fit a GP on the operator's smoothed history,
take the acquisition argmax over (p_star - p) * I(mu(p) >= lambda), and apply
it only when it lands within alpha of an observed level (fast exploitation);
otherwise fall back to the linear DS2 suggestion (conservative exploration).

Baselines: plain DS2 (linear, no escalation), Big+DS2, Dhalion-style
bottleneck rules, vanilla CEI Bayesian optimization with per-rate-bucket
history, and seeded random search (driven by the harness in simulation-only
mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import controller
from .controller import CONSERVATIVE_EXPLORATION, FAST_EXPLOITATION, Thresholds, UNDER, OVER
from .dag import LogicalDag, topological_order
from .errors import PMaxExceeded, ZeroProcessingAbility
from .gp import GpModel, KernelConfig
from .history import HistoryStore
from .simulator import MetricsSample, StreamSimulator, observed_pa

HARD_CAP_DEFAULT = 90


@dataclass(frozen=True)
class TunerConfig:
    alpha: float = 3.0
    k: int = 3
    p_max_floor: int = 4
    hard_cap: int = HARD_CAP_DEFAULT
    acquisition: str = "conttune"  # or "cei"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.p_max_floor < 1:
            raise ValueError("p_max_floor must be >= 1")
        if self.acquisition not in ("conttune", "cei"):
            raise ValueError(f"unknown acquisition {self.acquisition!r}")


@dataclass(frozen=True)
class TuningContext:
    sample: MetricsSample
    assignment: dict[str, int]
    lam: dict[str, float] | None
    store: HistoryStore
    state: str
    rates: dict[str, float]
    window_s: float
    dag: LogicalDag


@dataclass(frozen=True)
class Suggestion:
    assignment: dict[str, int]
    provenance: dict[str, str]


# --------------------------------------------------------------------------
# Big phase
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BigResult:
    applied: list[dict[str, int]]
    lam: dict[str, float]
    p_max: int
    reconfigurations: int
    final_sample: MetricsSample


def big_phase(
    sim: StreamSimulator,
    store: HistoryStore,
    thresholds: Thresholds,
    rates: dict[str, float],
    *,
    p_max_floor: int = 4,
    hard_cap: int = HARD_CAP_DEFAULT,
    window_s: float = 30.0,
) -> BigResult:
    """Binary lifting: set every operator to p_max, doubling p_max whenever
    the job is still under-provisioned with all operators already there.

    Ends with the job out of the under-provisioned state, the observed rates
    readable as the real ones, and the lifted state recorded in the history
    (which is what keeps p_max persistent across tunings).
    """
    p_max = max(store.p_max(), p_max_floor)
    applied: list[dict[str, int]] = []
    reconfigs = 0
    while True:
        current = sim.assignment
        if all(v == p_max for v in current.values()):
            if p_max >= hard_cap:
                raise PMaxExceeded(f"still under-provisioned at the hard cap {hard_cap}")
            p_max = min(2 * p_max, hard_cap)
        target = {op: p_max for op in current}
        sim.reconfigure(target)
        reconfigs += 1
        applied.append(target)
        still_under = True
        for _ in range(200):
            queue_before = sum(sim.queues.values())
            sample = sim.run_window(rates, window_s)
            queue_after = sum(om.queue for om in sample.operators.values())
            if controller.classify_sample(sample, thresholds) != UNDER:
                still_under = False
                break
            # backpressure with a shrinking backlog is catch-up, not shortage
            if not queue_after < queue_before - 1e-9:
                break
        if not still_under:
            break
    # let leftover queues drain so the observed rates are the steady ones
    for _ in range(5):
        if sum(om.queue for om in sample.operators.values()) < 1.0:
            break
        sample = sim.run_window(rates, window_s)
    lam = controller.lam_from_sample(sample, rates)
    controller.record_observations(store, sim, sample)
    return BigResult(applied=applied, lam=lam, p_max=p_max, reconfigurations=reconfigs, final_sample=sample)


# --------------------------------------------------------------------------
# acquisition functions and per-operator suggestions
# --------------------------------------------------------------------------

def acquisition_conttune(model: GpModel, lam: float, p_max: int, p_star: int) -> int | None:
    """argmax over p of (p_star - p) * I(mu(p) - lam); None when the model
    deems every level infeasible.  The indicator makes any p with mu(p) < lam
    score zero, so the argmax is the smallest feasible level."""
    ps = np.arange(1, p_max + 1)
    mu, _ = model.predict(ps)
    feasible = mu >= lam
    if not feasible.any():
        return None
    candidates = ps[feasible]
    scores = p_star - candidates
    return int(candidates[int(np.argmax(scores))])


def _phi(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def acquisition_cei(model: GpModel, lam: float, p_max: int, p_star: int) -> int | None:
    """Constrained EI: argmax of (p_star - p) * Pr[f(p) >= lam]; the
    probability of feasibility keeps infeasible levels in play, which is the
    documented SLA risk of this baseline.  None when no level improves."""
    ps = np.arange(1, p_max + 1)
    mu, var = model.predict(ps)
    sigma = np.sqrt(var)
    pof = np.empty(len(ps))
    for i in range(len(ps)):
        if sigma[i] > 0:
            pof[i] = _phi((mu[i] - lam) / sigma[i])
        else:
            pof[i] = 1.0 if mu[i] >= lam else 0.0
    scores = (p_star - ps) * pof
    best = int(np.argmax(scores))
    if scores[best] <= 0:
        return None
    return int(ps[best])


def ds2_suggest(p_now: int, lam: float, pa_observed: float, hard_cap: int = HARD_CAP_DEFAULT) -> int:
    """Linear suggestion: scale by the ratio of the upstream rate to the
    per-instance true processing rate."""
    if p_now < 1:
        raise ZeroProcessingAbility(f"p_now={p_now} must be >= 1")
    if pa_observed <= 0:
        raise ZeroProcessingAbility(f"processing ability {pa_observed} must be > 0")
    rate_per_instance = pa_observed / p_now
    return min(max(1, math.ceil(lam / rate_per_instance)), hard_cap)


def p_star_for(store: HistoryStore, op: str, lam: float, p_now: int) -> int:
    """Smallest observed level known to sustain lam; the current level when
    none is known."""
    feasible = [p for p, pa in store.smoothed(op) if pa >= lam]
    return min(feasible) if feasible else p_now


def cbo_suggest(
    op: str,
    lam: float,
    store: HistoryStore,
    gp_config: KernelConfig,
    tuner_config: TunerConfig,
    p_max: int,
    *,
    p_now: int,
    pa_now: float | None,
) -> tuple[int, str]:
    """One operator's conservative-BO decision.

    Fast exploitation applies the acquisition point when it falls within
    alpha of an observed level; otherwise (or on an empty history) the DS2
    fallback is used and its outcome becomes a GP training sample.
    """
    smoothed = store.smoothed(op)
    if smoothed:
        model = GpModel.fit(smoothed, gp_config, tune_length_scale=len(smoothed) >= 4)
        p_star = p_star_for(store, op, lam, p_now)
        if tuner_config.acquisition == "cei":
            p_acq = acquisition_cei(model, lam, p_max, p_star)
        else:
            p_acq = acquisition_conttune(model, lam, p_max, p_star)
        # Below the lowest observation the surrogate extrapolates from nothing
        # (a mean-reverting GP reads far too optimistic there), so only points
        # at or above it count as the known region.
        if (
            p_acq is not None
            and p_acq >= smoothed[0][0]
            and store.nearest_distance(op, p_acq) <= tuner_config.alpha
        ):
            return min(p_acq, tuner_config.hard_cap), FAST_EXPLOITATION
    if pa_now is not None and pa_now > 0:
        return ds2_suggest(p_now, lam, pa_now, tuner_config.hard_cap), CONSERVATIVE_EXPLORATION
    return p_now, CONSERVATIVE_EXPLORATION


def small_phase(
    lam: dict[str, float],
    store: HistoryStore,
    gp_config: KernelConfig,
    tuner_config: TunerConfig,
    *,
    assignment: dict[str, int],
    pa_now: dict[str, float | None],
) -> Suggestion:
    """Per-operator CBO, assembled into one job-wide assignment.

    The sub-problems are independent; sources are sized to sustain their
    configured emission rate through the same path.  The caller applies the
    result via a single reconfiguration.
    """
    p_max = min(max(store.p_max(), tuner_config.p_max_floor), tuner_config.hard_cap)
    new: dict[str, int] = {}
    provenance: dict[str, str] = {}
    for op, p_now in assignment.items():
        p, why = cbo_suggest(
            op,
            lam[op],
            store,
            gp_config,
            tuner_config,
            p_max,
            p_now=p_now,
            pa_now=pa_now.get(op),
        )
        new[op] = p
        provenance[op] = why
    return Suggestion(assignment=new, provenance=provenance)


# --------------------------------------------------------------------------
# rule / search baselines
# --------------------------------------------------------------------------

def dhalion_step(
    sample: MetricsSample,
    assignment: dict[str, int],
    state: str,
    window_s: float,
    hard_cap: int = HARD_CAP_DEFAULT,
) -> dict[str, int] | None:
    """One Dhalion-style move: scale the worst backpressure-suffering
    operator by its overload ratio, or trim the most idle one when the job is
    over-provisioned.  One operator per reconfiguration round."""
    new = dict(assignment)
    if state == UNDER:
        # the operator suffering from backpressure is the saturated one with
        # a backlog, not the upstreams it blocks
        suffering = [
            (om.busy_ms, om.queue, op)
            for op, om in sample.operators.items()
            if om.queue > 1.0 and om.busy_ms >= 900.0
        ]
        if not suffering:
            suffering = [
                (om.busy_ms, om.queue, op)
                for op, om in sample.operators.items()
                if om.queue > 1.0
            ]
        if not suffering:
            return None
        _, queue, worst_op = max(suffering)
        om = sample.operators[worst_op]
        if om.processed_rate <= 0:
            ratio = 2.0
        else:
            ratio = (om.processed_rate + queue / window_s) / om.processed_rate
        p = assignment[worst_op]
        new[worst_op] = min(max(p + 1, math.ceil(p * ratio)), hard_cap)
        return new
    if state == OVER:
        idle_op = max(
            (op for op in assignment if assignment[op] > 1),
            key=lambda op: sample.operators[op].idle_ms,
            default=None,
        )
        if idle_op is None:
            return None
        new[idle_op] = assignment[idle_op] - 1
        return new
    return None


def random_search_step(rng, p_max: int, ops) -> dict[str, int]:
    """Uniform assignment draw in [1, p_max] per operator; seeded rng."""
    return {op: int(rng.integers(1, p_max + 1)) for op in ops}


def vanilla_bo_suggest(
    op: str,
    lam: float,
    bucket_history: list[tuple[int, float]],
    gp_config: KernelConfig,
    p_max: int,
    *,
    p_now: int,
) -> int:
    """CEI over the full range with no conservative fallback; the caller keys
    the history by (operator, rate bucket), so experience transfers only
    between identical rates.  While the bucket knows no feasible level the
    preset upper bound anchors the improvement term, so a cold bucket picks
    the smallest level, the aggressive-exploration failure mode this baseline
    is known for."""
    if not bucket_history:
        return 1
    model = GpModel.fit(bucket_history, gp_config)
    feasible = [p for p, pa in bucket_history if pa >= lam]
    p_star = min(feasible) if feasible else p_max
    p = acquisition_cei(model, lam, p_max, p_star)
    return p if p is not None else p_now


# --------------------------------------------------------------------------
# loop-facing tuner objects
# --------------------------------------------------------------------------

class ContTuneTuner:
    """Big-small tuning with conservative BO and continuous reuse."""

    wants_big = True
    uses_lambda_cache = True

    def __init__(self, config: TunerConfig = TunerConfig(), kernel: KernelConfig = KernelConfig()):
        self.config = config
        self.kernel = kernel
        self.name = f"conttune-a{config.alpha:g}"

    @property
    def p_max_floor(self) -> int:
        return self.config.p_max_floor

    @property
    def hard_cap(self) -> int:
        return self.config.hard_cap

    def suggest(self, ctx: TuningContext) -> Suggestion | None:
        if ctx.lam is None:
            return None
        pa_now = _pa_map(ctx.sample, ctx.assignment)
        return small_phase(
            ctx.lam,
            ctx.store,
            self.kernel,
            self.config,
            assignment=ctx.assignment,
            pa_now=pa_now,
        )


def propagate_rates(
    dag: LogicalDag,
    sample: MetricsSample,
    source_rates: dict[str, float] | None = None,
) -> dict[str, float]:
    """DS2-style rate estimation: push source rates through the selectivities
    observed in the last window.  Without explicit source rates the sources'
    measured throughput is used, which understates the real demand while the
    job is backpressured; noisy selectivities corrupt the propagation for
    stateful operators.  Both are the documented weaknesses of estimating
    rates this way."""
    producers: dict[str, list[str]] = {op.id: [] for op in dag.operators}
    for a, b in dag.edges:
        producers[b].append(a)
    source_ids = set(dag.source_ids())
    est: dict[str, float] = {}
    out: dict[str, float] = {}
    for op_id in topological_order(dag):
        om = sample.operators[op_id]
        if op_id in source_ids:
            if source_rates is not None:
                lam = source_rates[op_id]
            else:
                # consumption plus backlog growth = the ingress demand
                lam = max(0.0, om.processed_rate + om.queue_growth)
        else:
            lam = sum(out[p] for p in producers[op_id])
        sel = om.output_rate / om.processed_rate if om.processed_rate > 0 else 1.0
        est[op_id] = lam
        out[op_id] = lam * sel
    return est


class Ds2Tuner:
    """Linear one-shot suggestions from selectivity-propagated rate estimates."""

    wants_big = False
    uses_lambda_cache = False
    name = "ds2"

    def __init__(self, hard_cap: int = HARD_CAP_DEFAULT, p_max_floor: int = 4):
        self.hard_cap = hard_cap
        self.p_max_floor = p_max_floor

    def suggest(self, ctx: TuningContext) -> Suggestion | None:
        lam = ctx.lam or propagate_rates(ctx.dag, ctx.sample)
        pa_now = _pa_map(ctx.sample, ctx.assignment)
        new = {}
        for op, p_now in ctx.assignment.items():
            pa = pa_now.get(op)
            new[op] = ds2_suggest(p_now, lam[op], pa, self.hard_cap) if pa else p_now
        return Suggestion(new, {op: CONSERVATIVE_EXPLORATION for op in new})


class BigDs2Tuner(Ds2Tuner):
    """DS2 fed by the Big phase's backpressure-free rate measurements."""

    wants_big = True
    uses_lambda_cache = False
    name = "big-ds2"


class DhalionTuner:
    """Rule-based bottleneck chasing, one operator per round."""

    wants_big = False
    uses_lambda_cache = False
    name = "dhalion"

    def __init__(self, hard_cap: int = HARD_CAP_DEFAULT, p_max_floor: int = 4):
        self.hard_cap = hard_cap
        self.p_max_floor = p_max_floor

    def suggest(self, ctx: TuningContext) -> Suggestion | None:
        new = dhalion_step(ctx.sample, ctx.assignment, ctx.state, ctx.window_s, self.hard_cap)
        if new is None:
            return None
        return Suggestion(new, {op: CONSERVATIVE_EXPLORATION for op in new})


class VanillaBoTuner:
    """Dragster-style CEI with separate models per upstream-rate bucket."""

    wants_big = False
    uses_lambda_cache = False
    name = "cei-bo"

    def __init__(
        self,
        bucket_size: float,
        kernel: KernelConfig = KernelConfig(),
        hard_cap: int = HARD_CAP_DEFAULT,
        p_max: int = 32,
        p_max_floor: int = 4,
        dag: LogicalDag | None = None,
    ):
        if bucket_size <= 0:
            raise ValueError("bucket_size must be > 0")
        self.bucket_size = bucket_size
        self.kernel = kernel
        self.hard_cap = hard_cap
        self.p_max = min(p_max, hard_cap)
        self.p_max_floor = p_max_floor
        self._dag = dag
        self._history: dict[tuple[str, int], list[tuple[int, float]]] = {}

    def _bucket(self, lam: float) -> int:
        return round(lam / self.bucket_size)

    def history_for(self, op: str, lam: float) -> list[tuple[int, float]]:
        return self._history.setdefault((op, self._bucket(lam)), [])

    def observe(self, sample: MetricsSample, assignment: dict[str, int], rates: dict[str, float]) -> None:
        lam = propagate_rates(self._dag, sample) if self._dag is not None else {}
        for op, om in sample.operators.items():
            if om.busy_ms <= 0 or om.observed_rate > om.processed_rate:
                continue
            self.history_for(op, lam.get(op, om.observed_rate)).append(
                (assignment[op], observed_pa(sample, op))
            )

    def suggest(self, ctx: TuningContext) -> Suggestion | None:
        self._dag = ctx.dag
        lam = ctx.lam or propagate_rates(ctx.dag, ctx.sample)
        new = {}
        for op, p_now in ctx.assignment.items():
            history = self.history_for(op, lam[op])
            p = vanilla_bo_suggest(op, lam[op], history, self.kernel, self.p_max, p_now=p_now)
            if p == p_now and ctx.state == UNDER and history:
                # nothing the model trusts: explore the upper range aggressively
                p = min(self.p_max, max(p_now + 1, 2 * max(q for q, _ in history)))
            new[op] = p
        return Suggestion(new, {op: CONSERVATIVE_EXPLORATION for op in new})


def _pa_map(sample: MetricsSample, assignment: dict[str, int]) -> dict[str, float | None]:
    out: dict[str, float | None] = {}
    for op in assignment:
        om = sample.operators[op]
        if om.busy_ms <= 0 or om.observed_rate > om.processed_rate:
            out[op] = None
        else:
            out[op] = observed_pa(sample, op)
    return out
