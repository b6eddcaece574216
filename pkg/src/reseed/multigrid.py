"""Coarsen, cluster, refine.

Heavy-edge matching builds a hierarchy of ever smaller graphs; INCRES
clusters the coarsest one, and the labels are carried back down level by
level, optionally polished by a few INCRES iterations per level with a
geometrically growing seed count and shrinking iteration budget.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .evaluation import RunTrace, purity
from .graph import SparseGraph, from_edges
from .incres import (GrowConfig, IncresResult, Partition, SeedSchedule, StoppingRule,
                     incres_run, require_connected)


@dataclass
class CoarseLevel:
    graph: SparseGraph
    parent: np.ndarray  # fine vertex -> coarse vertex
    merged_weight: float  # fine edge weight that became internal to a group


def coarsen_once(g: SparseGraph, rng_seed: int = 0, order=None) -> CoarseLevel:
    """Merge each unmarked vertex with its heaviest unmarked neighbour.

    Vertices are visited in a seeded random order unless ``order`` is given.
    Ties between equally heavy neighbours go to the lowest index. A vertex
    whose neighbours are all marked stays a singleton. Coarse edge weights
    are sums of the fine weights between the two groups.
    """
    n = g.n_vertices
    if order is None:
        order = np.random.default_rng(rng_seed).permutation(n)
    else:
        order = np.asarray(order, dtype=np.int64)
        if np.sort(order).tolist() != list(range(n)):
            raise ValueError("order must be a permutation of the vertices")
    adj = g.adjacency
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    parent = np.full(n, -1, dtype=np.int64)
    merged = 0.0
    k = 0
    for v in order.tolist():
        if parent[v] >= 0:
            continue
        lo, hi = indptr[v], indptr[v + 1]
        nbrs = indices[lo:hi]
        free = parent[nbrs] < 0
        parent[v] = k
        if free.any():
            w = data[lo:hi][free]
            # indices are sorted, so argmax returns the lowest index among ties
            best = int(np.argmax(w))
            parent[nbrs[free][best]] = k
            merged += float(w[best])
        k += 1
    proj = sp.csr_matrix((np.ones(n), (np.arange(n), parent)), shape=(n, k))
    # summation order can differ between (a, b) and (b, a); keep the upper
    # triangle so the coarse graph is exactly symmetric
    coarse = sp.triu(proj.T @ adj @ proj, k=1, format="coo")
    keep = coarse.data != 0
    return CoarseLevel(from_edges(k, coarse.row[keep], coarse.col[keep], coarse.data[keep]),
                       parent, merged)


@dataclass
class Hierarchy:
    """Graphs from coarsest (index 0) to the original (index L-1).

    ``parents[l]`` maps the vertices of ``levels[l + 1]`` onto those of
    ``levels[l]``.
    """

    levels: list[SparseGraph]
    parents: list[np.ndarray]
    merged_weights: list[float]
    n_small: int
    stalled: bool = False

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def sizes(self) -> list[int]:
        return [lv.n_vertices for lv in self.levels]

    def project(self, p: Partition, level: int) -> Partition:
        """Carry a partition of ``levels[level]`` to ``levels[level + 1]``."""
        return Partition(p.assignment[self.parents[level]], p.n_clusters)

    def project_to_finest(self, p: Partition, level: int = 0) -> Partition:
        for lv in range(level, self.n_levels - 1):
            p = self.project(p, lv)
        return p


def build_hierarchy(g: SparseGraph, n_small: int, rng_seed: int = 0,
                    min_shrink: float = 0.05) -> Hierarchy:
    """Coarsen until at most ``n_small`` vertices remain.

    Stops early, flagging ``stalled``, when a pass removes fewer than
    ``min_shrink`` of the vertices.
    """
    if n_small < 2:
        raise ValueError("n_small must be >= 2")
    levels = [g]
    parents: list[np.ndarray] = []
    merged: list[float] = []
    stalled = False
    while levels[-1].n_vertices > n_small:
        cur = levels[-1]
        step = coarsen_once(cur, int(np.random.SeedSequence([rng_seed, len(levels)]).generate_state(1)[0]))
        if step.graph.n_vertices > (1.0 - min_shrink) * cur.n_vertices:
            stalled = True
            if step.graph.n_vertices == cur.n_vertices:
                break
        levels.append(step.graph)
        parents.append(step.parent)
        merged.append(step.merged_weight)
        if stalled:
            break
    levels.reverse()
    parents.reverse()
    merged.reverse()
    return Hierarchy(levels, parents, merged, n_small, stalled)


@dataclass
class RefineSchedule:
    alpha_seed: float
    alpha_iter: float
    m_per_level: list[int]
    k_per_level: list[int]
    k_small: int
    m_small: int


def make_schedule(n: int, n_small: int, n_levels: int, k_small: int, m_small: int) -> RefineSchedule:
    """Seed counts grow by ``alpha_seed`` and iteration budgets shrink by
    ``alpha_iter`` per level, from ``(m_small, k_small)`` at the coarsest
    level to ``m_small * n / n_small`` seeds and 2 iterations at the finest.

    Values are computed from the closed form and then rounded: seeds to the
    nearest integer >= 1, iterations to the nearest integer >= 2.
    """
    if n_levels < 1:
        raise ValueError("need at least one level")
    if k_small < 2:
        raise ValueError("k_small must be >= 2")
    if m_small < 1:
        raise ValueError("m_small must be >= 1")
    if n_levels == 1:
        if n != n_small:
            raise ValueError("a single level requires n == n_small")
        return RefineSchedule(1.0, 1.0, [m_small], [k_small], k_small, m_small)
    if n <= n_small:
        raise ValueError("n must exceed n_small when there are several levels")
    e = 1.0 / (n_levels - 1)
    a_seed = (n / n_small) ** e
    a_iter = (k_small / 2.0) ** e
    ms = [m_small]
    ks = [k_small]
    for lv in range(1, n_levels):
        if lv == n_levels - 1:
            m_exact, k_exact = m_small * n / n_small, 2.0
        else:
            m_exact, k_exact = m_small * a_seed ** lv, k_small / a_iter ** lv
        ms.append(max(1, int(round(m_exact))))
        ks.append(max(2, int(round(k_exact))))
    return RefineSchedule(a_seed, a_iter, ms, ks, k_small, m_small)


@dataclass
class MultilevelResult:
    partition: Partition
    trace: RunTrace
    hierarchy: Hierarchy
    schedule: RefineSchedule | None
    level_results: list[IncresResult] = field(default_factory=list)

    @property
    def total_grow_steps(self) -> int:
        return sum(r.total_grow_steps for r in self.level_results)


def _level_seed(rng_seed: int, level: int) -> int:
    return int(np.random.SeedSequence([rng_seed, 7, level]).generate_state(1)[0])


def multilevel_run(g: SparseGraph, R: int, n_small: int = 500, k_small: int = 250,
                   cfg: GrowConfig | None = None, rng_seed: int = 0,
                   refinement: str = "incres", *, speed: float = 5.0,
                   stable_iterations: int | None = None, labels=None) -> MultilevelResult:
    """Cluster the coarsest graph with INCRES, then refine level by level.

    The coarsest level runs ``k_small`` iterations (or stops earlier once
    the partition is unchanged for ``stable_iterations`` iterations, if
    that is set); its seed increment uses the coarse vertex count. With
    ``refinement="incres"`` each finer level starts from the projected
    labels and runs its scheduled number of iterations with a fixed seed
    count; ``"trivial"`` projects straight to the original graph.
    """
    if refinement not in ("incres", "trivial"):
        raise ValueError(f"unknown refinement {refinement!r}")
    if R < 2 or R > g.n_vertices:
        raise ValueError("need 2 <= R <= number of vertices")
    cfg = cfg or GrowConfig()
    require_connected(g)
    t0 = time.perf_counter()
    h = build_hierarchy(g, n_small, rng_seed)
    coarse = h.levels[0]
    if coarse.n_vertices < R:
        raise ValueError(f"coarsest graph has {coarse.n_vertices} vertices, fewer than R={R}")

    first = incres_run(coarse, R, SeedSchedule.from_speed(speed, coarse.n_vertices, R),
                       cfg, rng_seed,
                       StoppingRule(max_iterations=k_small, stable_iterations=stable_iterations),
                       score=_scorer(h, 0, labels), check_connected=False)
    results = [first]
    trace = first.trace
    p = first.partition
    schedule = None
    if h.n_levels == 1:
        return MultilevelResult(p, trace, h, None, results)
    schedule = make_schedule(g.n_vertices, coarse.n_vertices, h.n_levels, k_small, first.m_eff)
    if refinement == "trivial":
        p = h.project_to_finest(p)
        return MultilevelResult(p, trace, h, schedule, results)

    for lv in range(1, h.n_levels):
        p = h.project(p, lv - 1)
        offset = time.perf_counter() - t0
        res = incres_run(h.levels[lv], R, SeedSchedule(m=schedule.m_per_level[lv], delta_m=0.0),
                         cfg, _level_seed(rng_seed, lv),
                         StoppingRule(max_iterations=schedule.k_per_level[lv], stable_iterations=None),
                         score=_scorer(h, lv, labels), initial=p, check_connected=False)
        results.append(res)
        trace = _concat(trace, res.trace, offset)
        p = res.partition
    return MultilevelResult(p, trace, h, schedule, results)


def _scorer(h: Hierarchy, level: int, labels):
    """Purity of a level's partition measured on the original vertices."""
    if labels is None:
        return None
    return lambda p: purity(h.project_to_finest(p, level), labels)


def _concat(a: RunTrace, b: RunTrace, offset: float) -> RunTrace:
    out = RunTrace(list(a.records))
    base = a.records[-1].iteration if a.records else 0
    t_last = a.records[-1].elapsed_s if a.records else 0.0
    for rec in b.shifted(max(offset, t_last), base + 1).records:
        out.append(rec)
    return out
