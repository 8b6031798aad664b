"""Command-line interface: run experiments, compare reports, generate traces,
query the provisioning oracle.  Exit code 0 on success, 2 on validation
errors."""

from __future__ import annotations

import json
import sys
import click

from .errors import ConfigError, ContTuneError
from .harness import (
    TUNER_IDS,
    compare,
    format_compare_table,
    format_report_table,
    load_report,
    oracle_optimal,
    run_experiment,
)
from .scenario import load_scenario
from .simulator import real_upstream_rates_oracle
from .workloads import save_trace, synthetic_permutation, trace_to_csv


def _fail(exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(2)


@click.group()
def main():
    """Continuous parallelism tuning lab: simulator, tuners, experiments."""


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=False))
@click.option("--tuner", "tuner_id", required=True, type=str,
              help="one of: " + ", ".join(TUNER_IDS))
@click.option("--seed", type=int, default=None, help="overrides the scenario seed")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="directory for summary.json / epochs.csv")
@click.option("--metrics", is_flag=True, default=False,
              help="also stream per-step metrics.csv into --out")
def run(scenario_path, tuner_id, seed, out_dir, metrics):
    """Run one (scenario, tuner, seed) experiment cell."""
    try:
        scenario = load_scenario(scenario_path)
        report = run_experiment(scenario, tuner_id, seed=seed, out_dir=out_dir, metrics_csv=metrics)
    except (ContTuneError, OSError) as exc:
        _fail(exc)
    click.echo(format_report_table(report))


@main.command(name="compare")
@click.option("--reports", "report_paths", required=True, multiple=True,
              type=click.Path(exists=False), help="summary.json paths (repeatable)")
def compare_cmd(report_paths):
    """Rank run summaries over the same scenario."""
    try:
        result = compare([load_report(p) for p in report_paths])
    except (ContTuneError, OSError, json.JSONDecodeError) as exc:
        _fail(exc)
    click.echo(format_compare_table(result))


def _parse_rates(spec: str) -> dict[str, float]:
    rates = {}
    for part in spec.split(","):
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"--rates entry {part!r}: expected source=rate")
        key, value = part.split("=", 1)
        try:
            rates[key] = float(value)
        except ValueError:
            raise ConfigError(f"--rates entry {part!r}: rate must be a number") from None
    if not rates:
        raise ConfigError("--rates: no entries")
    return rates


@main.command(name="trace-gen")
@click.option("--wu", "wu_specs", required=True, multiple=True,
              help="workload unit as source=rate (repeatable)")
@click.option("--length", type=int, default=10, show_default=True)
@click.option("--replication", type=int, default=2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--epoch-s", type=float, default=600.0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="trace CSV path (default: stdout)")
def trace_gen(wu_specs, length, replication, seed, epoch_s, out_path):
    """Generate a seeded permutation workload trace CSV."""
    try:
        wu = {}
        for spec in wu_specs:
            wu.update(_parse_rates(spec))
        trace = synthetic_permutation(wu, length=length, replication=replication,
                                      seed=seed, epoch_s=epoch_s)
    except (ContTuneError, ValueError) as exc:
        _fail(exc)
    if out_path is None:
        click.echo(trace_to_csv(trace), nl=False)
    else:
        save_trace(trace, out_path)
        click.echo(f"wrote {out_path} ({len(trace.epochs)} epochs)")


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=False))
@click.option("--rates", "rates_spec", required=True,
              help="source rates as src=rate[,src2=rate2]")
def oracle(scenario_path, rates_spec):
    """Print the minimal feasible assignment for the given source rates."""
    try:
        scenario = load_scenario(scenario_path)
        rates = _parse_rates(rates_spec)
        lam = real_upstream_rates_oracle(scenario.dag, rates)
        optimal = oracle_optimal(scenario.dag, scenario.curves, lam, scenario.tuner.hard_cap)
    except (ContTuneError, KeyError) as exc:
        _fail(exc)
    click.echo(json.dumps(optimal, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
