"""Synthetic permutation workloads and trace-file replay.

A trace is an ordered list of epochs, each a (duration, source-rate map)
pair.  The synthetic generator shuffles the multipliers 1..length once per
seed and repeats the permutation, so every multiplier appears exactly
``replication`` times per source.

Trace CSV format: header ``t_start_s,source_id,rate``; one row per source per
epoch.  Epochs end where the next one starts; the final epoch reuses the
previous epoch's duration (600 s for a single-epoch file).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NegativeRate, NonContiguousTrace

DEFAULT_EPOCH_S = 600.0


@dataclass(frozen=True)
class Epoch:
    duration_s: float
    rates: dict[str, float]

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("epoch duration must be > 0")
        for src, rate in self.rates.items():
            if rate < 0:
                raise NegativeRate(f"source {src!r}: rate {rate} < 0")


@dataclass(frozen=True)
class WorkloadTrace:
    epochs: tuple[Epoch, ...]
    wu: dict[str, float] | None = None  # workload unit per source, when known

    def __post_init__(self):
        object.__setattr__(self, "epochs", tuple(self.epochs))

    @property
    def total_duration_s(self) -> float:
        return sum(e.duration_s for e in self.epochs)

    def source_ids(self) -> list[str]:
        return sorted(self.epochs[0].rates) if self.epochs else []


def synthetic_permutation(
    wu: dict[str, float],
    length: int = 10,
    replication: int = 2,
    seed: int = 0,
    epoch_s: float = DEFAULT_EPOCH_S,
    order: list[int] | None = None,
) -> WorkloadTrace:
    """Seeded permutation of the multipliers 1..length, repeated
    ``replication`` times; each epoch scales every source's workload unit by
    the multiplier.  Passing ``order`` fixes the multiplier sequence instead
    of shuffling."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if replication < 1:
        raise ValueError("replication must be >= 1")
    if order is None:
        rng = np.random.default_rng(seed)
        order = [int(m) for m in rng.permutation(np.arange(1, length + 1))]
    elif sorted(order) != list(range(1, length + 1)):
        raise ValueError("order must be a permutation of 1..length")
    epochs = [
        Epoch(duration_s=epoch_s, rates={src: m * unit for src, unit in wu.items()})
        for _ in range(replication)
        for m in order
    ]
    return WorkloadTrace(epochs=tuple(epochs), wu=dict(wu))


def trace_to_csv(trace: WorkloadTrace) -> str:
    lines = ["t_start_s,source_id,rate"]
    t = 0.0
    for epoch in trace.epochs:
        for src in sorted(epoch.rates):
            lines.append(f"{t:g},{src},{epoch.rates[src]:g}")
        t += epoch.duration_s
    return "\n".join(lines) + "\n"


def save_trace(trace: WorkloadTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(trace_to_csv(trace))


def load_trace(path) -> WorkloadTrace:
    """Read a trace CSV; validation errors cite the offending row."""
    rows: list[tuple[float, str, float, int]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t_start_s", "source_id", "rate"]:
            raise NonContiguousTrace(f"{path}: expected header t_start_s,source_id,rate, got {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise NonContiguousTrace(f"{path}:{line_no}: expected 3 fields, got {len(row)}")
            try:
                t = float(row[0])
                rate = float(row[2])
            except ValueError as exc:
                raise NonContiguousTrace(f"{path}:{line_no}: {exc}") from None
            if rate < 0:
                raise NegativeRate(f"{path}:{line_no}: rate {rate} < 0")
            rows.append((t, row[1], rate, line_no))
    if not rows:
        raise NonContiguousTrace(f"{path}: no epochs")

    starts: list[float] = []
    by_start: dict[float, dict[str, float]] = {}
    for t, src, rate, line_no in rows:
        if t not in by_start:
            if starts and t <= starts[-1]:
                raise NonContiguousTrace(f"{path}:{line_no}: epoch start {t} is not increasing")
            starts.append(t)
            by_start[t] = {}
        if src in by_start[t]:
            raise NonContiguousTrace(f"{path}:{line_no}: duplicate rate for source {src!r} at t={t}")
        by_start[t][src] = rate

    if starts[0] != 0.0:
        raise NonContiguousTrace(f"{path}: first epoch must start at t=0, got {starts[0]}")
    sources = set(by_start[starts[0]])
    for t in starts:
        if set(by_start[t]) != sources:
            missing = sorted(sources ^ set(by_start[t]))
            raise NonContiguousTrace(f"{path}: epoch at t={t} has a gap: sources {missing} differ")

    epochs = []
    for i, t in enumerate(starts):
        if i + 1 < len(starts):
            duration = starts[i + 1] - t
        elif len(starts) > 1:
            duration = starts[-1] - starts[-2]
        else:
            duration = DEFAULT_EPOCH_S
        epochs.append(Epoch(duration_s=duration, rates=by_start[t]))
    return WorkloadTrace(epochs=tuple(epochs))
