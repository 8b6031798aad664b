"""Persisted per-operator observations ⟨p, PA(p)⟩ with Top-K retention.

The store keeps, per (operator, parallelism level), a ring of the K most
recent observations; processing abilities used for tuning are the mean of
what is retained (mean-reversion).  The on-disk format is one observation per
line, ``ts,op,p,pa``, append-friendly and crash-tolerant: a partial final
line without a trailing newline is dropped with a warning.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from typing import NamedTuple

from .errors import CorruptRecord

log = logging.getLogger(__name__)


class Observation(NamedTuple):
    ts: float
    op: str
    p: int
    pa: float


class Coverage(NamedTuple):
    len_all: float
    pr_use: float


class HistoryStore:
    """H^t with Top-K retention; single-writer, any number of readers."""

    def __init__(self, k: int = 3):
        if k < 1:
            raise ValueError("K must be >= 1")
        self.k = k
        self._rings: dict[str, dict[int, deque[Observation]]] = {}

    def __eq__(self, other):
        if not isinstance(other, HistoryStore):
            return NotImplemented
        mine = {(op, p): list(ring) for op, by_p in self._rings.items() for p, ring in by_p.items() if ring}
        theirs = {(op, p): list(ring) for op, by_p in other._rings.items() for p, ring in by_p.items() if ring}
        return self.k == other.k and mine == theirs

    def record(self, op: str, p: int, pa: float, ts: float) -> None:
        """Retain an observation; the oldest of K+1 at the same (op, p) is evicted."""
        if p < 1:
            raise ValueError(f"p={p} must be >= 1")
        if pa < 0:
            raise ValueError(f"pa={pa} must be >= 0")
        ring = self._rings.setdefault(op, {}).setdefault(int(p), deque(maxlen=self.k))
        ring.append(Observation(float(ts), op, int(p), float(pa)))

    def observed_levels(self, op: str) -> list[int]:
        by_p = self._rings.get(op, {})
        return sorted(p for p, ring in by_p.items() if ring)

    def operators(self) -> list[str]:
        return sorted(op for op, by_p in self._rings.items() if any(by_p.values()))

    def topk_pa(self, op: str, p: int) -> float | None:
        """Mean of the retained PA values at (op, p); None when nothing is retained."""
        ring = self._rings.get(op, {}).get(int(p))
        if not ring:
            return None
        return sum(o.pa for o in ring) / len(ring)

    def smoothed(self, op: str) -> list[tuple[int, float]]:
        """One (p, mean PA) pair per observed level, ascending in p."""
        return [(p, self.topk_pa(op, p)) for p in self.observed_levels(op)]

    def nearest_distance(self, op: str, p_candidate: int) -> float:
        """min |p_candidate - p| over observed levels; inf when none."""
        levels = self.observed_levels(op)
        if not levels:
            return math.inf
        return min(abs(p_candidate - p) for p in levels)

    def p_max(self) -> int:
        """Maximum parallelism level retained anywhere in the job; 0 when empty."""
        best = 0
        for by_p in self._rings.values():
            for p, ring in by_p.items():
                if ring and p > best:
                    best = p
        return best

    def known_region_coverage(self, op: str, alpha: float, p_max: int) -> Coverage:
        """Merged length of the alpha-radius regions around observed levels.

        Segments are [max(p - alpha, 1), min(p + alpha, p_max)], clamped to
        the valid parallelism domain; pr_use = len_all / p_max.
        """
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        if p_max < 1:
            raise ValueError("p_max must be >= 1")
        levels = self.observed_levels(op)
        if not levels:
            return Coverage(0.0, 0.0)
        segments = sorted(
            (max(p - alpha, 1.0), min(p + alpha, float(p_max))) for p in levels
        )
        total = 0.0
        cur_lo, cur_hi = segments[0]
        for lo, hi in segments[1:]:
            if lo <= cur_hi:
                cur_hi = max(cur_hi, hi)
            else:
                total += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
        total += cur_hi - cur_lo
        return Coverage(total, total / p_max)

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# conttune-history k={self.k}\n")
            for op in sorted(self._rings):
                for p in sorted(self._rings[op]):
                    for o in self._rings[op][p]:
                        fh.write(f"{o.ts!r},{o.op},{o.p},{o.pa!r}\n")

    @classmethod
    def load(cls, path, k: int | None = None) -> "HistoryStore":
        """Round-trip inverse of save(); malformed lines raise CorruptRecord
        with their line number, except a partial final line without a
        trailing newline, which is dropped with a warning."""
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        lines = text.split("\n")
        ends_clean = text.endswith("\n") or text == ""
        if ends_clean:
            lines = lines[:-1] if lines and lines[-1] == "" else lines
        header_k = None
        records: list[Observation] = []
        for idx, line in enumerate(lines, start=1):
            last = idx == len(lines)
            if idx == 1 and line.startswith("#"):
                try:
                    header_k = int(line.rsplit("k=", 1)[1])
                except (IndexError, ValueError):
                    raise CorruptRecord(path, idx, f"bad header {line!r}")
                continue
            if not line.strip():
                continue
            parts = line.split(",")
            try:
                if len(parts) != 4:
                    raise ValueError(f"expected 4 fields, got {len(parts)}")
                obs = Observation(float(parts[0]), parts[1], int(parts[2]), float(parts[3]))
                if obs.p < 1 or obs.pa < 0:
                    raise ValueError(f"invalid record {line!r}")
            except ValueError as exc:
                if last and not ends_clean:
                    log.warning("%s:%d: dropping partial final line %r", path, idx, line)
                    continue
                raise CorruptRecord(path, idx, str(exc)) from None
            records.append(obs)
        store = cls(k=k if k is not None else (header_k or 3))
        for o in records:
            store.record(o.op, o.p, o.pa, o.ts)
        return store


# Module-level aliases matching the operation names used elsewhere.

def record(store: HistoryStore, op: str, p: int, pa: float, ts: float) -> HistoryStore:
    store.record(op, p, pa, ts)
    return store


def topk_pa(store: HistoryStore, op: str, p: int) -> float | None:
    return store.topk_pa(op, p)


def nearest_distance(store: HistoryStore, op: str, p_candidate: int) -> float:
    return store.nearest_distance(op, p_candidate)


def known_region_coverage(store: HistoryStore, op: str, alpha: float, p_max: int) -> Coverage:
    return store.known_region_coverage(op, alpha, p_max)


def persist(store: HistoryStore, path) -> None:
    store.save(path)


def load(path, k: int | None = None) -> HistoryStore:
    return HistoryStore.load(path, k=k)
