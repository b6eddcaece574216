"""Cluster purity and purity-versus-time traces."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np


def _assignment(p) -> np.ndarray:
    return np.asarray(getattr(p, "assignment", p), dtype=np.int64)


def confusion_counts(p, truth) -> np.ndarray:
    """Counts ``n[r, i]`` of vertices in computed cluster r with true class i."""
    a = _assignment(p)
    t = np.asarray(truth, dtype=np.int64)
    if a.shape != t.shape:
        raise ValueError(f"partition has {a.size} vertices, ground truth {t.size}")
    if t.size == 0:
        raise ValueError("empty ground truth")
    n_rows = int(getattr(p, "n_clusters", 0)) or int(a.max()) + 1
    n_cols = int(t.max()) + 1
    flat = np.bincount(a * n_cols + t, minlength=n_rows * n_cols)
    return flat.reshape(n_rows, n_cols)


def purity(p, truth) -> float:
    """Fraction of vertices belonging to the majority true class of their cluster."""
    n = confusion_counts(p, truth)
    return float(n.max(axis=1).sum()) / float(n.sum())


@dataclass
class TraceRecord:
    iteration: int
    elapsed_s: float
    m_eff: int
    changed_frac: float
    purity: float | None = None
    grow_steps: int = 0


@dataclass
class RunTrace:
    """Per-iteration records of one clustering run."""

    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        if self.records:
            last = self.records[-1]
            if rec.iteration != last.iteration + 1:
                raise ValueError("iteration indices must be contiguous")
            if rec.elapsed_s < last.elapsed_s:
                raise ValueError("elapsed time went backwards")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def times(self) -> np.ndarray:
        return np.array([r.elapsed_s for r in self.records])

    @property
    def purities(self) -> np.ndarray:
        vals = [r.purity for r in self.records]
        if any(v is None for v in vals):
            raise ValueError("trace has no purity recorded")
        return np.array(vals, dtype=float)

    @property
    def total_grow_steps(self) -> int:
        return sum(r.grow_steps for r in self.records)

    def shifted(self, offset_s: float, first_iteration: int) -> RunTrace:
        out = RunTrace()
        for k, r in enumerate(self.records):
            out.records.append(TraceRecord(first_iteration + k, r.elapsed_s + offset_s,
                                           r.m_eff, r.changed_frac, r.purity, r.grow_steps))
        return out


@dataclass
class AggregateTrace:
    """Mean and population std of purity on a common time grid."""

    elapsed_s: np.ndarray
    purity_mean: np.ndarray
    purity_std: np.ndarray
    n_runs: np.ndarray

    @property
    def run_count(self) -> int:
        return int(self.n_runs.max()) if self.n_runs.size else 0


def aggregate_runs(traces: list[RunTrace]) -> AggregateTrace:
    """Resample traces onto the union of their event times and average.

    Each trace contributes its last observed purity (carried forward past
    its own end); before its first record it contributes nothing.
    """
    if not traces:
        raise ValueError("no traces to aggregate")
    grid = np.unique(np.concatenate([t.times for t in traces]))
    vals = np.full((len(traces), grid.size), np.nan)
    for k, t in enumerate(traces):
        times, pur = t.times, t.purities
        if times.size == 0:
            continue
        pos = np.searchsorted(times, grid, side="right") - 1
        ok = pos >= 0
        vals[k, ok] = pur[pos[ok]]
    have = ~np.isnan(vals)
    count = have.sum(axis=0)
    total = np.where(have, vals, 0.0).sum(axis=0)
    mean = total / count
    sq = np.where(have, (vals - mean) ** 2, 0.0).sum(axis=0)
    std = np.sqrt(sq / count)
    return AggregateTrace(grid, mean, std, count)


def time_to_purity(trace: RunTrace, target: float) -> float | None:
    """First elapsed time at which purity reaches ``target``, else None."""
    pur = trace.purities
    hit = np.flatnonzero(pur >= target)
    if hit.size == 0:
        return None
    return float(trace.times[hit[0]])


def aggregate_time_to_purity(agg: AggregateTrace, target: float) -> float | None:
    hit = np.flatnonzero(agg.purity_mean >= target)
    return float(agg.elapsed_s[hit[0]]) if hit.size else None


TRACE_HEADER = ["run", "iteration", "elapsed_s", "m_eff", "changed_frac", "purity"]
AGGREGATE_HEADER = ["elapsed_s", "purity_mean", "purity_std", "n_runs"]


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def traces_to_csv(traces: list[RunTrace], runs: list[int] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    runs = list(range(len(traces))) if runs is None else runs
    for run, t in zip(runs, traces):
        for r in t.records:
            w.writerow([run, r.iteration, _fmt(r.elapsed_s), r.m_eff,
                        _fmt(r.changed_frac), _fmt(r.purity)])
    return buf.getvalue()


def aggregate_to_csv(agg: AggregateTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_HEADER)
    for row in zip(agg.elapsed_s, agg.purity_mean, agg.purity_std, agg.n_runs):
        w.writerow([_fmt(row[0]), _fmt(row[1]), _fmt(row[2]), int(row[3])])
    return buf.getvalue()
