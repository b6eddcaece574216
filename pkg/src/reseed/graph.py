"""Sparse weighted graphs: storage, file ingestion, kNN construction,
planted-partition generation and random edge perturbation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _cc

log = logging.getLogger(__name__)


class GraphError(ValueError):
    """Malformed graph input or infeasible generator/perturbation request."""


@dataclass(frozen=True)
class SparseGraph:
    """Symmetric, loop-free weighted graph stored as a CSR adjacency matrix.

    Build instances with :func:`from_edges` rather than directly; the
    constructor does not re-validate symmetry.
    """

    adjacency: sp.csr_matrix
    degree: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    @property
    def total_weight(self) -> float:
        """Sum of weights over undirected edges (each counted once)."""
        return float(self.adjacency.data.sum()) / 2.0

    def neighbors(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        a = self.adjacency
        lo, hi = a.indptr[i], a.indptr[i + 1]
        return a.indices[lo:hi], a.data[lo:hi]

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Upper-triangle edge arrays ``(i, j, w)`` with ``i < j``, sorted."""
        upper = sp.triu(self.adjacency, k=1, format="coo")
        order = np.lexsort((upper.col, upper.row))
        return upper.row[order], upper.col[order], upper.data[order]

    def is_unweighted(self) -> bool:
        return bool(np.all(self.adjacency.data == 1.0))


def from_edges(n_vertices, rows, cols, weights=None) -> SparseGraph:
    """Build a graph from (possibly one-sided) edge triples.

    An edge listed only as ``(i, j)`` is mirrored. Repeats of the same pair
    must agree on the weight. Self-loops and non-positive weights raise.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if weights is None:
        weights = np.ones(rows.shape[0])
    weights = np.asarray(weights, dtype=np.float64)
    if not (rows.shape == cols.shape == weights.shape):
        raise GraphError("edge arrays differ in length")
    n = int(n_vertices)
    if rows.size:
        if rows.min() < 0 or cols.min() < 0:
            raise GraphError("negative vertex index")
        if max(rows.max(), cols.max()) >= n:
            raise GraphError("vertex index out of range")
    if np.any(rows == cols):
        k = int(np.flatnonzero(rows == cols)[0])
        raise GraphError(f"self-loop at vertex {rows[k]}")
    if np.any(~np.isfinite(weights)):
        raise GraphError("non-finite weight")
    if np.any(weights < 0):
        raise GraphError("negative weight")
    if np.any(weights == 0):
        raise GraphError("zero weight")

    lo = np.minimum(rows, cols)
    hi = np.maximum(rows, cols)
    key = lo * n + hi
    order = np.lexsort((weights, key))
    key, w = key[order], weights[order]
    # Repeated pairs must carry one weight.
    same = key[1:] == key[:-1]
    if np.any(same & (w[1:] != w[:-1])):
        k = int(np.flatnonzero(same & (w[1:] != w[:-1]))[0])
        a, b = divmod(int(key[k]), n)
        raise GraphError(f"conflicting duplicate weights for edge ({a}, {b})")
    keep = np.ones(key.shape[0], dtype=bool)
    keep[1:] = ~same
    key, w = key[keep], w[keep]
    lo, hi = np.divmod(key, n)
    adj = sp.csr_matrix(
        (np.concatenate([w, w]), (np.concatenate([lo, hi]), np.concatenate([hi, lo]))),
        shape=(n, n),
    )
    adj.sort_indices()
    return SparseGraph(adj, np.asarray(adj.sum(axis=1)).ravel())


def from_adjacency(matrix) -> SparseGraph:
    """Wrap an already symmetric sparse or dense matrix (diagonal must be zero)."""
    coo = sp.coo_matrix(matrix)
    if coo.shape[0] != coo.shape[1]:
        raise GraphError("adjacency matrix is not square")
    nz = coo.data != 0
    return from_edges(coo.shape[0], coo.row[nz], coo.col[nz], coo.data[nz])


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def load_edge_list(path, n_vertices: int | None = None) -> SparseGraph:
    """Read ``i j [w]`` lines (0-based, ``#`` comments) into a graph."""
    rows, cols, ws = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise GraphError(f"{path}:{lineno}: expected 'i j [w]', got {line!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError:
                raise GraphError(f"{path}:{lineno}: malformed line {line!r}") from None
            if w < 0:
                raise GraphError(f"{path}:{lineno}: negative weight")
            if i == j:
                raise GraphError(f"{path}:{lineno}: self-loop at vertex {i}")
            rows.append(i)
            cols.append(j)
            ws.append(w)
    n = n_vertices
    if n is None:
        n = max(max(rows, default=-1), max(cols, default=-1)) + 1
    return from_edges(n, rows, cols, ws)


def load_matrix_market(path) -> tuple[SparseGraph, int]:
    """Read a coordinate Matrix Market file.

    Returns the graph and the number of dropped diagonal entries.
    """
    try:
        m = scipy.io.mmread(str(path))
    except (ValueError, OSError) as exc:
        raise GraphError(f"{path}: {exc}") from exc
    coo = sp.coo_matrix(m)
    if coo.shape[0] != coo.shape[1]:
        raise GraphError(f"{path}: matrix is {coo.shape[0]}x{coo.shape[1]}, not square")
    if np.any(coo.data < 0):
        raise GraphError(f"{path}: negative entries")
    diag = coo.row == coo.col
    n_diag = int(np.count_nonzero(diag))
    if n_diag:
        log.warning("%s: dropped %d diagonal entries", path, n_diag)
    off = ~diag & (coo.data != 0)
    g = from_edges(coo.shape[0], coo.row[off], coo.col[off], coo.data[off])
    return g, n_diag


def load_labels(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        vals = [int(tok) for tok in fh.read().split()]
    labels = np.asarray(vals, dtype=np.int64)
    check_labels(labels)
    return labels


def check_labels(labels, n_vertices: int | None = None) -> np.ndarray:
    labels = np.asarray(labels)
    if n_vertices is not None and labels.shape[0] != n_vertices:
        raise GraphError(f"{labels.shape[0]} labels for {n_vertices} vertices")
    if labels.size and labels.min() < 0:
        raise GraphError("negative class label")
    present = np.unique(labels)
    if present.size and present[-1] != present.size - 1:
        raise GraphError("class labels are not contiguous from 0")
    return labels


def write_edge_list(g: SparseGraph, path) -> None:
    """Write ``i j w`` lines with ``i < j`` in sorted order."""
    Path(path).write_text(format_edge_list(g), encoding="utf-8")


def format_edge_list(g: SparseGraph) -> str:
    i, j, w = g.edges()
    unweighted = g.is_unweighted()
    lines = [f"# n_vertices={g.n_vertices} n_edges={g.n_edges}"]
    if unweighted:
        lines += [f"{a} {b}" for a, b in zip(i.tolist(), j.tolist())]
    else:
        lines += [f"{a} {b} {x!r}" for a, b, x in zip(i.tolist(), j.tolist(), w.tolist())]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Structure
# ---------------------------------------------------------------------------

def connected_components(g: SparseGraph) -> tuple[int, np.ndarray]:
    """Number of components and a per-vertex component id."""
    n, labels = _cc(g.adjacency, directed=False)
    return int(n), labels.astype(np.int64)


# ---------------------------------------------------------------------------
# kNN construction
# ---------------------------------------------------------------------------

SIMILARITIES = ("cosine_tfidf", "cosine_raw", "gaussian_euclidean")


def tfidf(counts) -> sp.csr_matrix:
    """Raw term counts times ``ln(n_docs / doc_freq)``; no smoothing."""
    x = sp.csr_matrix(counts, dtype=np.float64)
    n_docs = x.shape[0]
    df = np.bincount(x.indices[x.data > 0], minlength=x.shape[1])
    with np.errstate(divide="ignore"):
        idf = np.where(df > 0, np.log(n_docs / np.maximum(df, 1)), 0.0)
    out = x @ sp.diags(idf)
    out = sp.csr_matrix(out)
    out.eliminate_zeros()
    return out


def _as_features(features):
    if sp.issparse(features):
        x = sp.csr_matrix(features, dtype=np.float64)
        vals = x.data
    else:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2:
            raise GraphError("feature matrix must be 2-D")
        vals = x
    if not np.all(np.isfinite(vals)):
        raise GraphError("feature values must be finite")
    if np.any(vals < 0):
        raise GraphError("feature values must be >= 0")
    return x


def _row_norms(x) -> np.ndarray:
    if sp.issparse(x):
        return np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def _top_k(scores: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Column indices of the k largest entries per row; ties go to the lower index."""
    idx = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return idx, np.take_along_axis(scores, idx, axis=1)


def knn_graph(features, k: int, similarity: str = "cosine_tfidf", *,
              binarize: bool = False, block_size: int | None = None) -> SparseGraph:
    """Exact k-nearest-neighbour graph, symmetrized by union.

    ``cosine_tfidf`` and ``cosine_raw`` weight edges by cosine similarity
    and only link positively similar rows. ``gaussian_euclidean`` uses
    ``exp(-d^2 / (2 sigma^2))`` with sigma the mean distance to the k-th
    neighbour. ``binarize`` replaces every weight by 1.0.
    """
    if similarity not in SIMILARITIES:
        raise GraphError(f"unknown similarity {similarity!r}")
    if k < 1:
        raise GraphError("k must be >= 1")
    x = _as_features(features)
    n = x.shape[0]
    if k >= n:
        raise GraphError(f"k={k} requires more than {k} rows, got {n}")
    if similarity == "cosine_tfidf":
        x = tfidf(x)
    norms = _row_norms(x)
    cosine = similarity != "gaussian_euclidean"
    if cosine and np.any(norms == 0):
        bad = int(np.flatnonzero(norms == 0)[0])
        raise GraphError(f"row {bad} is all zero; cosine similarity undefined")

    if block_size is None:
        block_size = max(1, min(n, 2_000_000 // max(n, 1)))
    nbr = np.empty((n, k), dtype=np.int64)
    val = np.empty((n, k))
    sqn = norms ** 2
    for start in range(0, n, block_size):
        stop = min(n, start + block_size)
        block = x[start:stop]
        dots = block @ x.T
        dots = dots.toarray() if sp.issparse(dots) else np.asarray(dots)
        rows = np.arange(start, stop)
        if cosine:
            scores = dots / np.outer(norms[start:stop], norms)
        else:
            scores = -np.maximum(sqn[start:stop, None] + sqn[None, :] - 2.0 * dots, 0.0)
        scores[rows - start, rows] = -np.inf
        nbr[start:stop], val[start:stop] = _top_k(scores, k)

    if cosine:
        ok = val > 0
        empty = ~ok.any(axis=1)
        if np.any(empty):
            raise GraphError(f"vertex {int(np.flatnonzero(empty)[0])} has no positive-similarity neighbor")
        weights = val
    else:
        dist = np.sqrt(-val)
        sigma = float(dist[:, -1].mean())
        ok = np.ones_like(val, dtype=bool)
        if sigma == 0:
            weights = np.ones_like(val)
        else:
            weights = np.exp(-dist ** 2 / (2.0 * sigma ** 2))
        # exp underflow would produce a zero-weight edge
        ok &= weights > 0
    src = np.repeat(np.arange(n), k).reshape(n, k)
    i, j, w = src[ok], nbr[ok], weights[ok]
    if binarize:
        w = np.ones_like(w)
    return _union_symmetrize(n, i, j, w)


def _union_symmetrize(n, i, j, w) -> SparseGraph:
    # An edge chosen from both ends carries the same similarity value; keep one.
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    key = lo * n + hi
    _, first = np.unique(key, return_index=True)
    return from_edges(n, lo[first], hi[first], w[first])


# ---------------------------------------------------------------------------
# Synthetic graphs and perturbation
# ---------------------------------------------------------------------------

def _unrank_pairs(codes: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Map ranks in [0, n(n-1)/2) to pairs i<j in row-major order."""
    codes = codes.astype(np.int64)
    # row i begins at rank i*n - i*(i+1)/2
    b = 2 * n - 1
    i = np.floor((b - np.sqrt(b * b - 8.0 * codes)) / 2.0).astype(np.int64)
    start = i * n - i * (i + 1) // 2
    # guard float rounding at row boundaries
    over = codes < start
    i[over] -= 1
    start = i * n - i * (i + 1) // 2
    nxt = (i + 1) * n - (i + 1) * (i + 2) // 2
    under = codes >= nxt
    i[under] += 1
    start = i * n - i * (i + 1) // 2
    j = codes - start + i + 1
    return i, j


def _stochastic_round(rng, x: np.ndarray) -> np.ndarray:
    base = np.floor(x)
    return (base + (rng.random(x.shape) < (x - base))).astype(np.int64)


def _match_stubs(rng, stubs: np.ndarray, labels: np.ndarray, intra: bool,
                 n: int, rounds: int = 100) -> np.ndarray:
    """Randomly pair stubs into simple edges; returns pair keys ``i*n + j``, i<j.

    Pairs that would form a loop, a repeated edge or (for inter-block
    stubs) an intra-block edge are re-shuffled for up to ``rounds`` rounds;
    stubs still unmatched after that are dropped.
    """
    keys: list[np.ndarray] = []
    taken = np.empty(0, dtype=np.int64)
    left = stubs
    for _ in range(rounds):
        if left.size < 2:
            break
        left = rng.permutation(left)
        odd = left[-1:] if left.size % 2 else left[:0]
        even = left[: left.size - odd.size]
        a, b = even[0::2], even[1::2]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        key = lo * n + hi
        ok = lo != hi
        if not intra:
            ok &= labels[lo] != labels[hi]
        ok &= ~np.isin(key, taken)
        first = np.zeros(key.size, dtype=bool)
        _, idx = np.unique(np.where(ok, key, -1), return_index=True)
        first[idx] = True
        ok &= first
        taken = np.concatenate([taken, key[ok]])
        keys.append(key[ok])
        left = np.concatenate([a[~ok], b[~ok], odd])
    return np.concatenate(keys) if keys else np.empty(0, dtype=np.int64)


def generate_sbm(n_per_block: int, n_blocks: int, avg_degree: float, mixing: float,
                 rng_seed: int) -> tuple[SparseGraph, np.ndarray]:
    """Planted partition with equal blocks, near-constant degree and a fixed
    per-vertex share of inter-block edges.

    Every vertex gets ``avg_degree`` stubs (stochastically rounded), of which
    a ``mixing`` share (stochastically rounded) is reserved for other
    blocks. Stubs are paired at random configuration-model style, so each
    vertex's degree and inter-block fraction match the targets in
    expectation and closely in realization. Labels are block indices;
    vertices are numbered block by block.
    """
    if n_per_block < 1 or n_blocks < 1 or n_per_block * n_blocks < 2:
        raise GraphError("need at least two vertices")
    if not 0.0 <= mixing < 1.0:
        raise GraphError("mixing must lie in [0, 1)")
    if avg_degree <= 0:
        raise GraphError("avg_degree must be positive")
    if avg_degree >= n_per_block:
        raise GraphError("avg_degree must be smaller than the block size")
    k_in = avg_degree * (1.0 - mixing)
    if math.ceil(k_in) > n_per_block - 1:
        raise GraphError(f"intra-block degree {k_in:g} exceeds block size {n_per_block}")
    if mixing > 0 and n_blocks < 2:
        raise GraphError("mixing > 0 needs at least two blocks")
    if avg_degree * mixing > n_per_block * (n_blocks - 1):
        raise GraphError("inter-block degree exceeds the number of outside vertices")

    rng = np.random.default_rng(rng_seed)
    n = n_per_block * n_blocks
    labels = np.repeat(np.arange(n_blocks, dtype=np.int64), n_per_block)
    deg = _stochastic_round(rng, np.full(n, float(avg_degree)))
    d_out = _stochastic_round(rng, deg * mixing)
    d_in = deg - d_out
    keys = []
    vertices = np.arange(n, dtype=np.int64)
    for b in range(n_blocks):
        blk = vertices[labels == b]
        keys.append(_match_stubs(rng, np.repeat(blk, d_in[blk]), labels, True, n))
    keys.append(_match_stubs(rng, np.repeat(vertices, d_out), labels, False, n))
    key = np.concatenate(keys)
    i, j = np.divmod(key, n)
    return from_edges(n, i, j), labels


def mixing_fraction(g: SparseGraph, labels) -> float:
    """Fraction of edges whose endpoints carry different labels."""
    i, j, _ = g.edges()
    if i.size == 0:
        return 0.0
    labels = np.asarray(labels)
    return float(np.count_nonzero(labels[i] != labels[j])) / i.size


def add_noise_edges(g: SparseGraph, fraction: float, rng_seed: int) -> SparseGraph:
    """Add ``round(fraction * E)`` unit-weight edges chosen uniformly among
    absent, non-loop vertex pairs."""
    if fraction < 0 or not math.isfinite(fraction):
        raise GraphError("fraction must be a finite value >= 0")
    n = g.n_vertices
    count = int(round(fraction * g.n_edges))
    if count == 0:
        return g
    total_pairs = n * (n - 1) // 2
    free = total_pairs - g.n_edges
    if count > free:
        raise GraphError(f"cannot add {count} edges: only {free} vertex pairs are free")
    i0, j0, w0 = g.edges()
    existing = i0 * n + j0
    rng = np.random.default_rng(rng_seed)
    if free <= 4 * count or total_pairs <= 1_000_000:
        # enumerate the complement directly
        codes = np.arange(total_pairs, dtype=np.int64)
        ci, cj = _unrank_pairs(codes, n)
        cand = ci * n + cj
        cand = cand[~np.isin(cand, existing, assume_unique=True)]
        picked = rng.choice(cand, size=count, replace=False)
    else:
        # rejection sampling; first-seen order keeps the draw uniform
        taken: list[np.ndarray] = []
        seen = np.empty(0, dtype=np.int64)
        need = count
        while need > 0:
            codes = rng.integers(0, total_pairs, size=int(need * 1.2) + 16)
            ci, cj = _unrank_pairs(codes, n)
            cand = ci * n + cj
            cand = cand[~np.isin(cand, existing)]
            _, first = np.unique(cand, return_index=True)
            cand = cand[np.sort(first)]
            cand = cand[~np.isin(cand, seen)]
            cand = cand[:need]
            taken.append(cand)
            seen = np.concatenate([seen, cand])
            need -= cand.size
        picked = np.concatenate(taken)
    ni, nj = np.divmod(picked, n)
    return from_edges(
        n,
        np.concatenate([i0, ni]),
        np.concatenate([j0, nj]),
        np.concatenate([w0, np.ones(count)]),
    )
