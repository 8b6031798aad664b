"""Continuous parallelism auto-tuning for stream jobs: Big-phase binary
lifting plus conservative Bayesian optimization, a deterministic stream-job
simulator, and an experiment harness."""

from .controller import (
    Thresholds,
    TuningReport,
    backpressure_per,
    classify_cpu,
    classify_pressure,
    provisioning_state,
    should_apply,
    tuning_loop,
)
from .dag import (
    LogicalDag,
    OperatorSpec,
    PhysicalDag,
    apply_parallelism,
    load_dag,
    topological_order,
    validate_dag,
)
from .gp import GpModel, KernelConfig
from .history import HistoryStore
from .harness import compare, oracle_optimal, run_experiment
from .scenario import Scenario, load_scenario
from .simulator import (
    CapacityCurve,
    MetricsSample,
    SimConfig,
    StreamSimulator,
    capacity,
    observed_pa,
    real_upstream_rates_oracle,
)
from .tuners import (
    ContTuneTuner,
    TunerConfig,
    acquisition_cei,
    acquisition_conttune,
    big_phase,
    cbo_suggest,
    ds2_suggest,
    small_phase,
)
from .workloads import WorkloadTrace, load_trace, save_trace, synthetic_permutation

__version__ = "0.1.0"

__all__ = [
    "CapacityCurve",
    "ContTuneTuner",
    "GpModel",
    "HistoryStore",
    "KernelConfig",
    "LogicalDag",
    "MetricsSample",
    "OperatorSpec",
    "PhysicalDag",
    "Scenario",
    "SimConfig",
    "StreamSimulator",
    "Thresholds",
    "TunerConfig",
    "TuningReport",
    "WorkloadTrace",
    "acquisition_cei",
    "acquisition_conttune",
    "apply_parallelism",
    "backpressure_per",
    "big_phase",
    "capacity",
    "cbo_suggest",
    "classify_cpu",
    "classify_pressure",
    "compare",
    "ds2_suggest",
    "load_dag",
    "load_scenario",
    "load_trace",
    "observed_pa",
    "oracle_optimal",
    "provisioning_state",
    "real_upstream_rates_oracle",
    "run_experiment",
    "save_trace",
    "should_apply",
    "small_phase",
    "synthetic_permutation",
    "topological_order",
    "tuning_loop",
    "validate_dag",
]
