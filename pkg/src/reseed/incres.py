"""Incremental reseeding: PLANT seeds in the current clusters, GROW them by
random-walk propagation, HARVEST a new partition by per-vertex argmax, and
repeat with a slowly increasing number of seeds.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .evaluation import RunTrace, TraceRecord, purity
from .graph import SparseGraph, connected_components


class IncresError(RuntimeError):
    pass


class DisconnectedGraphError(IncresError):
    pass


class GrowDidNotTerminate(IncresError):
    """GROW hit ``max_steps`` before its coverage condition held."""

    def __init__(self, msg, steps):
        super().__init__(msg)
        self.steps = steps


@dataclass(frozen=True)
class Partition:
    assignment: np.ndarray
    n_clusters: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", a)
        if a.ndim != 1:
            raise ValueError("assignment must be 1-D")
        if a.size and (a.min() < 0 or a.max() >= self.n_clusters):
            raise ValueError(f"cluster index outside [0, {self.n_clusters})")

    @property
    def n_vertices(self) -> int:
        return self.assignment.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_clusters)

    def empty_clusters(self) -> np.ndarray:
        return np.flatnonzero(self.sizes() == 0)

    def members(self) -> list[np.ndarray]:
        a = self.assignment
        if self.n_clusters <= np.iinfo(np.uint16).max:
            a = a.astype(np.uint16)  # stable sort of small ints is a radix sort
        order = np.argsort(a, kind="stable")
        ends = np.cumsum(self.sizes()).tolist()
        return [order[lo:hi] for lo, hi in zip([0] + ends[:-1], ends)]


@dataclass
class SeedSchedule:
    """Real-valued seed accumulator; ``m`` grows by ``delta_m`` each iteration."""

    m: float = 1.0
    delta_m: float = 0.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("seed count m must be >= 1")
        if self.delta_m < 0:
            raise ValueError("delta_m must be >= 0")

    @classmethod
    def from_speed(cls, speed: float, n_vertices: int, n_clusters: int, m: float = 1.0):
        if speed <= 0:
            raise ValueError("speed must be positive")
        return cls(m=m, delta_m=speed_to_delta_m(speed, n_vertices, n_clusters))

    @property
    def effective(self) -> int:
        return max(1, math.floor(self.m))


def speed_to_delta_m(speed: float, n_vertices: int, n_clusters: int) -> float:
    return speed * 1e-4 * n_vertices / n_clusters


VARIANTS = ("walk", "lazy_walk", "diffusion", "ppr")
TERMINATIONS = ("full_coverage", "row_coverage")


@dataclass(frozen=True)
class GrowConfig:
    variant: str = "lazy_walk"
    alpha: float | None = None
    termination: str = "full_coverage"
    max_steps: int | None = None  # None: 4 * n_vertices

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown GROW variant {self.variant!r}")
        if self.termination not in TERMINATIONS:
            raise ValueError(f"unknown termination {self.termination!r}")
        if self.variant == "ppr":
            if self.alpha is None:
                object.__setattr__(self, "alpha", 0.85)
            if not 0 < self.alpha < 1:
                raise ValueError("ppr alpha must lie in (0, 1)")
        elif self.alpha is not None:
            raise ValueError("alpha only applies to the ppr variant")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class StoppingRule:
    """Stop after ``max_iterations`` or once the partition has not changed for
    ``stable_iterations`` consecutive iterations (None disables the latter)."""

    max_iterations: int = 10_000
    stable_iterations: int | None = 10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.stable_iterations is not None and self.stable_iterations < 1:
            raise ValueError("stable_iterations must be >= 1")


# ---------------------------------------------------------------------------
# PLANT
# ---------------------------------------------------------------------------

def _stream_key(kind: int, iteration: int = 0, cluster: int = 0) -> int:
    if not (0 <= iteration < 1 << 40 and 0 <= cluster < 1 << 20 and 0 <= kind < 16):
        raise ValueError("stream key out of range")
    return (kind << 60) | (iteration << 20) | cluster


class _Streams:
    """Counter-based generators keyed by (seed, kind, iteration, cluster).

    Each key names an independent Philox stream, so sampling does not depend
    on the order in which clusters or iterations are visited. One bit
    generator is re-keyed in place, which is much cheaper than building a
    new one per cluster.
    """

    def __init__(self, rng_seed: int):
        self._key = np.array([rng_seed, 0], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=self._key)
        self._gen = np.random.Generator(self._bitgen)
        self._state = self._bitgen.state

    def get(self, kind: int, iteration: int = 0, cluster: int = 0) -> np.random.Generator:
        st = self._state
        st["state"]["key"][:] = (self._key[0], _stream_key(kind, iteration, cluster))
        st["state"]["counter"][:] = 0
        st["buffer"][:] = 0
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bitgen.state = st
        return self._gen


def _stream(rng_seed: int, kind: int, iteration: int = 0, cluster: int = 0) -> np.random.Generator:
    key = np.array([rng_seed, _stream_key(kind, iteration, cluster)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def plant(p: Partition, m_eff: int, rng_seed: int, iteration: int) -> tuple[sp.csc_matrix, int]:
    """Sample seeds uniformly without replacement inside each cluster.

    If some nonempty cluster has fewer than ``m_eff`` vertices, every
    cluster gets as many seeds as the smallest nonempty one; that count is
    returned with the indicator matrix. An empty cluster gets one seed drawn
    from all vertices.
    """
    indices, indptr, m_used = _plant_indices(p, m_eff, _Streams(rng_seed), iteration)
    f = sp.csc_matrix((np.ones(indices.size), indices, indptr), shape=(p.n_vertices, p.n_clusters))
    return f, m_used


def _plant_indices(p: Partition, m_eff: int, streams: _Streams, iteration: int):
    """Seed rows per cluster in CSC layout: ``(indices, indptr, m_used)``."""
    if m_eff < 1:
        raise ValueError("m_eff must be >= 1")
    R = p.n_clusters
    if R < 2:
        raise ValueError("need at least two clusters")
    members = p.members()
    sizes = [q.size for q in members]
    m_used = min(m_eff, min(x for x in sizes if x > 0))
    picks = []
    for r in range(R):
        rng = streams.get(1, iteration, r)
        if sizes[r] == 0:
            pick = rng.integers(0, p.n_vertices, size=1)
        elif sizes[r] == m_used:
            pick = members[r]
        else:
            pick = members[r][rng.choice(sizes[r], size=m_used, replace=False)]
        picks.append(np.sort(pick))
    indptr = np.zeros(R + 1, dtype=np.int64)
    np.cumsum([q.size for q in picks], out=indptr[1:])
    return np.concatenate(picks), indptr, m_used


# ---------------------------------------------------------------------------
# GROW
# ---------------------------------------------------------------------------

class _Propagator:
    """One GROW step for a fixed graph and variant."""

    def __init__(self, g: SparseGraph, cfg: GrowConfig, check_connected: bool = True):
        if check_connected:
            require_connected(g)
        self.cfg = cfg
        inv_deg = 1.0 / g.degree
        if cfg.variant == "diffusion":
            self.op = sp.csr_matrix(sp.diags(inv_deg) @ g.adjacency)
        else:
            # W D^-1: column j of W scaled by 1/d_j
            self.op = sp.csr_matrix(g.adjacency @ sp.diags(inv_deg))
        self.op.sort_indices()

    def step(self, f, f0):
        pf = self.op @ f
        v = self.cfg.variant
        if v == "lazy_walk":
            pf += f
            pf *= 0.5
        elif v == "ppr":
            a = self.cfg.alpha
            pf = a * pf + (1.0 - a) * f0
        return pf


@dataclass
class GrowResult:
    f: object  # ndarray under full_coverage, CSR matrix under row_coverage
    steps: int


def _done(f, termination: str) -> bool:
    if sp.issparse(f):
        f.eliminate_zeros()
        return bool(np.all(np.diff(f.indptr) > 0))
    # scores are nonnegative, so "all positive" is a min test
    if termination == "row_coverage":
        return bool(f.max(axis=1).min() > 0)
    return bool(f.min() > 0)


def grow(f0, g: SparseGraph, cfg: GrowConfig | None = None, *, on_step=None,
         _prop=None) -> GrowResult:
    """Propagate seed indicators until the coverage condition holds.

    ``full_coverage`` works on a dense copy and stops once every
    (vertex, cluster) score is positive. ``row_coverage`` keeps the scores
    sparse and stops once every vertex has some positive score.
    Raises :class:`DisconnectedGraphError` for a disconnected graph and
    :class:`GrowDidNotTerminate` when ``max_steps`` runs out.
    ``on_step(step, f)`` is called after every propagation step.
    """
    cfg = cfg or GrowConfig()
    prop = _prop or _Propagator(g, cfg)
    n = g.n_vertices
    if f0.shape[0] != n:
        raise ValueError("indicator matrix and graph disagree on vertex count")
    max_steps = cfg.max_steps or 4 * n
    if cfg.termination == "full_coverage":
        f0 = f0.toarray() if sp.issparse(f0) else np.asarray(f0, dtype=np.float64)
    else:
        f0 = sp.csr_matrix(f0, dtype=np.float64)
    if _prop is None:
        # the main loop plants at least one seed per column itself
        empty = np.asarray((f0 != 0).sum(axis=0)).ravel() == 0
        if empty.any():
            raise ValueError(f"column {int(np.flatnonzero(empty)[0])} of the seed matrix is empty")

    f = f0
    steps = 0
    while not _done(f, cfg.termination):
        if steps == max_steps:
            raise GrowDidNotTerminate(
                f"GROW ({cfg.variant}) did not reach {cfg.termination} within {max_steps} steps",
                steps)
        f = prop.step(f, f0)
        steps += 1
        if on_step is not None:
            on_step(steps, f)
        if steps % 64 == 0 and not (f.sum(axis=0) > 0).all():
            raise IncresError("a seed column underflowed to zero")
    return GrowResult(f, steps)


# ---------------------------------------------------------------------------
# HARVEST
# ---------------------------------------------------------------------------

def harvest(f) -> Partition:
    """Assign each vertex to its highest-scoring cluster (lowest index on ties)."""
    R = f.shape[1]
    if sp.issparse(f):
        f = sp.csr_matrix(f)
        f.sum_duplicates()
        f.eliminate_zeros()
        counts = np.diff(f.indptr)
        if np.any(counts == 0):
            raise IncresError(f"vertex {int(np.flatnonzero(counts == 0)[0])} has no positive score")
        row = np.repeat(np.arange(f.shape[0]), counts)
        row_max = np.maximum.reduceat(f.data, f.indptr[:-1])
        # lowest column among each row's maxima
        cand = np.where(f.data == row_max[row], f.indices, R)
        best = np.minimum.reduceat(cand, f.indptr[:-1])
        return Partition(best, R)
    f = np.asarray(f)
    best = np.argmax(f, axis=1)
    top = f[np.arange(f.shape[0]), best]
    if not np.all(top > 0):
        raise IncresError(f"vertex {int(np.flatnonzero(~(top > 0))[0])} has no positive score")
    return Partition(best, R)


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------

@dataclass
class IncresResult:
    partition: Partition
    trace: RunTrace
    converged: bool
    m_eff: int
    total_grow_steps: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.trace)


def random_partition(n_vertices: int, n_clusters: int, rng_seed: int) -> Partition:
    rng = _stream(rng_seed, 0)
    return Partition(rng.integers(0, n_clusters, size=n_vertices), n_clusters)


def require_connected(g: SparseGraph) -> None:
    n_comp, _ = connected_components(g)
    if n_comp != 1:
        raise DisconnectedGraphError(f"graph has {n_comp} components")


def incres_run(g: SparseGraph, R: int, schedule: SeedSchedule | None = None,
               cfg: GrowConfig | None = None, rng_seed: int = 0,
               stop: StoppingRule | None = None, *, speed: float = 5.0,
               labels=None, initial: Partition | None = None,
               score=None, check_connected: bool = True) -> IncresResult:
    """Cluster ``g`` into ``R`` parts by incremental reseeding.

    Without ``schedule`` the seed increment comes from ``speed``. Starts
    from a uniformly random partition unless ``initial`` is given. Purity
    is traced per iteration when ``labels`` (or a custom ``score``
    callable taking a Partition) is supplied.
    """
    n = g.n_vertices
    if R < 2:
        raise ValueError("R must be >= 2")
    if R > n:
        raise ValueError(f"R={R} exceeds the number of vertices ({n})")
    if rng_seed < 0:
        raise ValueError("rng_seed must be >= 0")
    cfg = cfg or GrowConfig()
    stop = stop or StoppingRule()
    if schedule is None:
        schedule = SeedSchedule.from_speed(speed, n, R)
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape[0] != n:
            raise ValueError("labels and graph disagree on vertex count")
        if score is None:
            score = lambda q: purity(q, labels)  # noqa: E731

    t0 = time.perf_counter()
    prop = _Propagator(g, cfg, check_connected)
    p = initial if initial is not None else random_partition(n, R, rng_seed)
    if p.n_clusters != R or p.n_vertices != n:
        raise ValueError("initial partition does not match graph / R")
    m = float(schedule.m)
    delta = float(schedule.delta_m)
    trace = RunTrace()
    stable = 0
    converged = False
    total_steps = 0
    m_used = max(1, math.floor(m))
    streams = _Streams(rng_seed)
    for it in range(1, stop.max_iterations + 1):
        m_req = max(1, math.floor(m))
        # same seeds as plant(), written straight into the storage GROW uses
        idx, ptr, m_used = _plant_indices(p, m_req, streams, it)
        if m_used < m_req:
            m = float(m_used)
        if cfg.termination == "full_coverage":
            f = np.zeros((n, R))
            f[idx, np.repeat(np.arange(R), np.diff(ptr))] = 1.0
        else:
            f = sp.csc_matrix((np.ones(idx.size), idx, ptr), shape=(n, R))
        res = grow(f, g, cfg, _prop=prop)
        total_steps += res.steps
        new = harvest(res.f)
        changed = float(np.count_nonzero(new.assignment != p.assignment)) / n
        p = new
        m += delta
        trace.append(TraceRecord(
            iteration=it,
            elapsed_s=time.perf_counter() - t0,
            m_eff=m_used,
            changed_frac=changed,
            purity=score(p) if score is not None else None,
            grow_steps=res.steps,
        ))
        stable = stable + 1 if changed == 0 else 0
        if stop.stable_iterations is not None and stable >= stop.stable_iterations:
            converged = True
            break
    return IncresResult(p, trace, converged, m_used, total_steps)
