"""Overlapping decompositions of the adjacency graph of a sparse matrix.

The interior sets partition the vertices; halos grow by BFS layers up to a
graph distance; multiplicities and the algebraic partition of unity follow.
The partition-of-unity weights are 1/d_v with the last containing subdomain
absorbing the floating-point residual so the per-row sum is exactly 1.0.
"""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DimensionMismatchError


class Graph:
    """Undirected adjacency structure (no self loops)."""

    def __init__(self, n, csr):
        self.n = n
        self.csr = csr  # boolean pattern, symmetric, empty diagonal

    def neighbors(self, v):
        return self.csr.indices[self.csr.indptr[v]:self.csr.indptr[v + 1]]

    @property
    def n_edges(self):
        return self.csr.nnz // 2

    def bfs_distances(self, sources):
        dist = np.full(self.n, -1, dtype=np.int64)
        dist[sources] = 0
        frontier = np.asarray(sources, dtype=np.int64)
        d = 0
        while frontier.size:
            nxt = np.unique(self.csr[frontier].indices)
            nxt = nxt[dist[nxt] < 0]
            d += 1
            dist[nxt] = d
            frontier = nxt
        return dist


def adjacency_graph(A):
    """Vertices 0..n-1 with an edge wherever an off-diagonal entry is set."""
    off = A.rows != A.cols
    r, c = A.rows[off], A.cols[off]
    data = np.ones(2 * r.size, dtype=bool)
    csr = sp.csr_matrix((data, (np.concatenate([r, c]),
                                np.concatenate([c, r]))),
                        shape=(A.n, A.n))
    csr.sum_duplicates()
    csr.sort_indices()
    return Graph(A.n, csr)


# ---------------------------------------------------------------------------
# partitioning
# ---------------------------------------------------------------------------

def _rcb(indices, coords, k):
    if k == 1:
        return [np.sort(indices)]
    k1 = k // 2
    extents = coords[indices].max(axis=0) - coords[indices].min(axis=0)
    axis = int(np.argmax(extents))
    # stable order on (coordinate, index) keeps the split deterministic
    order = np.lexsort((indices, coords[indices, axis]))
    cut = (indices.size * k1) // k
    left = indices[order[:cut]]
    right = indices[order[cut:]]
    return _rcb(left, coords, k1) + _rcb(right, coords, k - k1)


def _farthest_point_seeds(graph, k, seed):
    rng = np.random.default_rng(seed)
    start = int(rng.integers(graph.n))
    # double-BFS pushes the first seed to a pseudo-peripheral vertex
    d = graph.bfs_distances([start])
    d = np.where(d < 0, np.iinfo(np.int64).max, d)
    seeds = [int(np.argmax(d))]
    while len(seeds) < k:
        d = graph.bfs_distances(seeds)
        d = np.where(d < 0, np.iinfo(np.int64).max, d)
        d[np.asarray(seeds)] = -1
        seeds.append(int(np.argmax(d)))
    return seeds


def partition(graph, k, seed, coords=None):
    """Split vertices into k disjoint sets.

    With ``coords`` the split is recursive coordinate bisection; otherwise
    seeded balanced BFS growth from farthest-point seeds.  Deterministic
    for identical inputs.
    """
    if k > graph.n:
        raise ConfigError(f"k={k} exceeds vertex count {graph.n}")
    if k < 1:
        raise ConfigError("k must be >= 1")
    if coords is not None:
        coords = np.asarray(coords, dtype=np.float64)
        return _rcb(np.arange(graph.n, dtype=np.int64), coords, k)

    seeds = _farthest_point_seeds(graph, k, seed)
    owner = np.full(graph.n, -1, dtype=np.int64)
    queues = [deque([s]) for s in seeds]
    heap = [(0, p) for p in range(k)]
    heapq.heapify(heap)
    claimed = 0
    while heap and claimed < graph.n:
        size, p = heapq.heappop(heap)
        q = queues[p]
        w = -1
        while q:
            cand = q.popleft()
            if owner[cand] < 0:
                w = cand
                break
        if w < 0:
            continue  # part exhausted its reachable frontier
        owner[w] = p
        claimed += 1
        q.extend(graph.neighbors(w).tolist())
        heapq.heappush(heap, (size + 1, p))
    if claimed < graph.n:
        # vertices unreachable from every seed (disconnected leftovers)
        leftover = np.flatnonzero(owner < 0)
        sizes = np.bincount(owner[owner >= 0], minlength=k)
        owner[leftover] = int(np.argmin(sizes))
    return [np.flatnonzero(owner == p) for p in range(k)]


def partition_from_vector(part_ids):
    """Interior sets from an external part vector (one id per vertex)."""
    part_ids = np.asarray(part_ids, dtype=np.int64)
    if part_ids.size == 0:
        raise ConfigError("empty partition vector")
    k = int(part_ids.max()) + 1
    if part_ids.min() < 0:
        raise ConfigError("negative part id")
    sets = [np.flatnonzero(part_ids == p) for p in range(k)]
    if any(s.size == 0 for s in sets):
        raise ConfigError("partition vector leaves an empty part")
    return sets


def write_partition_vector(path, interior_sets, n):
    ids = np.full(n, -1, dtype=np.int64)
    for p, s in enumerate(interior_sets):
        ids[s] = p
    with open(path, "w") as fh:
        fh.write("\n".join(str(i) for i in ids.tolist()) + "\n")


def read_partition_vector(path):
    with open(path) as fh:
        ids = [int(line) for line in fh if line.strip()]
    return partition_from_vector(np.asarray(ids))


# ---------------------------------------------------------------------------
# overlap growth and the partition of unity
# ---------------------------------------------------------------------------

@dataclass
class Decomposition:
    n: int
    k: int
    delta: int
    interior_sets: list          # disjoint, sorted, cover [0, n)
    halo_sets: list              # sorted, distance 1..delta from interior
    overlapping_sets: list       # sorted union per subdomain
    halo_masks: list             # bool per local index, aligned with overlap
    multiplicity: np.ndarray     # d_v per vertex
    pou_weights: list            # per-subdomain positive diagonal

    def restrict(self, i, x):
        return x[self.overlapping_sets[i]]

    def prolong_add(self, i, local, out):
        out[self.overlapping_sets[i]] += local
        return out


@dataclass
class OverlapStats:
    k_c: int  # greedy-coloring bound on the subdomain chromatic number
    k_m: int  # max subdomain multiplicity over rows


def grow_overlap(graph, interior_sets, delta):
    """Grow each interior set by BFS layers 1..delta and build the
    partition of unity."""
    if delta < 0:
        raise ConfigError("delta must be >= 0")
    n = graph.n
    cover = np.concatenate(interior_sets) if interior_sets else np.array([], int)
    if np.unique(cover).size != n or cover.size != n:
        raise ConfigError("interior sets must partition the vertex set")

    halo_sets = []
    for s in interior_sets:
        reached = np.zeros(n, dtype=bool)
        reached[s] = True
        frontier = np.asarray(s, dtype=np.int64)
        halo = []
        for _ in range(delta):
            if frontier.size == 0:
                break
            nxt = np.unique(graph.csr[frontier].indices)
            nxt = nxt[~reached[nxt]]
            reached[nxt] = True
            halo.append(nxt)
            frontier = nxt
        halo_sets.append(np.sort(np.concatenate(halo)) if halo
                         else np.array([], dtype=np.int64))

    overlapping = []
    halo_masks = []
    mult = np.zeros(n, dtype=np.int64)
    for s, h in zip(interior_sets, halo_sets):
        ov = np.sort(np.concatenate([s, h]))
        overlapping.append(ov)
        mask = np.zeros(ov.size, dtype=bool)
        mask[np.searchsorted(ov, h)] = True
        halo_masks.append(mask)
        mult[ov] += 1

    # 1/d_v weights; the last containing subdomain absorbs the rounding
    # residual so every row of the partition of unity sums to exactly 1.0
    weights = [np.empty(ov.size) for ov in overlapping]
    running = np.zeros(n)
    remaining = mult.copy()
    for i, ov in enumerate(overlapping):
        w = 1.0 / mult[ov]
        last = remaining[ov] == 1
        w[last] = 1.0 - running[ov[last]]
        weights[i] = w
        running[ov] += w
        remaining[ov] -= 1

    return Decomposition(n=n, k=len(interior_sets), delta=delta,
                         interior_sets=[np.sort(s) for s in interior_sets],
                         halo_sets=halo_sets, overlapping_sets=overlapping,
                         halo_masks=halo_masks, multiplicity=mult,
                         pou_weights=weights)


def overlap_stats(dec):
    """Greedy coloring bound k_c and max multiplicity k_m."""
    adjacency = [set() for _ in range(dec.k)]
    membership = [[] for _ in range(dec.n)]
    for i, ov in enumerate(dec.overlapping_sets):
        for v in ov.tolist():
            membership[v].append(i)
    for subs in membership:
        for a in range(len(subs)):
            for b in range(a + 1, len(subs)):
                adjacency[subs[a]].add(subs[b])
                adjacency[subs[b]].add(subs[a])
    colors = np.full(dec.k, -1, dtype=np.int64)
    for i in range(dec.k):
        used = {colors[j] for j in adjacency[i] if colors[j] >= 0}
        c = 0
        while c in used:
            c += 1
        colors[i] = c
    k_c = int(colors.max()) + 1 if dec.k else 0
    k_m = int(dec.multiplicity.max()) if dec.n else 0
    return OverlapStats(k_c=k_c, k_m=k_m)


def decomposition_manifest(dec, stats=None, seed=None):
    stats = stats or overlap_stats(dec)
    return {
        "k": dec.k,
        "delta": dec.delta,
        "n": dec.n,
        "interior_sizes": [int(s.size) for s in dec.interior_sets],
        "overlap_sizes": [int(s.size) for s in dec.overlapping_sets],
        "k_c": stats.k_c,
        "k_m": stats.k_m,
        "seed": seed,
    }


def write_manifest(path, manifest):
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
