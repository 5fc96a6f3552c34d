"""Synthetic operator corpus plus the SGB1/CBX1 binary formats.

SGB1 carries one subdomain: the local operator (upper-triangle COO), three
features per node (halo flag, multiplicity, diagonal correction), and an
optional target basis.  CBX1 carries one dense basis matrix.  Both formats
are little-endian and round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .decomp import adjacency_graph, grow_overlap, partition
from .errors import ConfigError, DimensionMismatchError, FormatError
from .lacore import SymSparseMatrix
from .localspectral import (LocalBlocks, apply_boundary_correction,
                            build_local_blocks, solve_local_spectral)

SGB_MAGIC = b"SGB1"
CBX_MAGIC = b"CBX1"


@dataclass
class SubdomainGraphRecord:
    matrix: SymSparseMatrix
    type_flag: np.ndarray        # 1.0 on halo nodes, 0.0 interior
    d_v: np.ndarray              # subdomain multiplicity per node
    s_v: np.ndarray              # diagonal correction, 0 on interior
    target_basis: np.ndarray = None

    @property
    def n(self):
        return self.matrix.n

    def features(self):
        return np.column_stack([self.type_flag, self.d_v, self.s_v])

    def a_tilde(self):
        return apply_boundary_correction(self.matrix, self.s_v)

    def validate(self):
        n = self.n
        for name, arr in (("type_flag", self.type_flag),
                          ("d_v", self.d_v), ("s_v", self.s_v)):
            if arr.shape != (n,):
                raise DimensionMismatchError(f"{name} has wrong length")
        if not np.isin(self.type_flag, (0.0, 1.0)).all():
            raise ConfigError("type_flag must be 0/1")
        if (self.s_v[self.type_flag == 0.0] != 0.0).any():
            raise ConfigError("interior nodes must have zero correction")
        if (self.d_v < 1).any() or (self.d_v != np.round(self.d_v)).any():
            raise ConfigError("multiplicities must be integers >= 1")
        if self.target_basis is not None and self.target_basis.shape[0] != n:
            raise DimensionMismatchError("target basis row count mismatch")


def record_from_blocks(blocks, target_basis=None, multiplicity=None):
    if multiplicity is None:
        # weights are 1/d_v up to the last-subdomain residual fix
        multiplicity = np.round(1.0 / blocks.d_weights)
    return SubdomainGraphRecord(
        matrix=blocks.a_local,
        type_flag=blocks.halo_mask.astype(np.float64),
        d_v=np.asarray(multiplicity, dtype=np.float64),
        s_v=blocks.s.copy(),
        target_basis=target_basis)


def blocks_from_record(rec):
    """Reconstruct the local blocks a consumer of the record would see.

    The partition-of-unity diagonal is exactly 1/d_v here; targets solved
    on these blocks are reproducible bit for bit from the file alone.
    """
    return LocalBlocks(a_local=rec.matrix, a_tilde=rec.a_tilde(),
                       s=rec.s_v.copy(), d_weights=1.0 / rec.d_v,
                       halo_mask=rec.type_flag == 1.0,
                       global_indices=np.arange(rec.n))


# ---------------------------------------------------------------------------
# random operator corpus
# ---------------------------------------------------------------------------

# short-range offsets on the virtual grid, nearest rings first; ring one
# alone is the grid graph that guarantees connectivity
_OFFSETS = ((1, 0), (0, 1), (1, 1), (1, -1), (2, 0), (0, 2),
            (2, 1), (1, 2), (2, -1), (1, -2), (2, 2), (2, -2))


def _edge_pool(N):
    m1 = max(2, int(np.floor(np.sqrt(N))))
    ii = np.arange(N) % m1
    jj = np.arange(N) // m1
    ring1, rest = [], []
    for di, dj in _OFFSETS:
        ti = ii + di
        tj = jj + dj
        ok = (ti >= 0) & (ti < m1) & (tj >= 0)
        tgt = ti + m1 * tj
        ok &= tgt < N
        src = np.flatnonzero(ok)
        pairs = np.column_stack([src, tgt[ok]])
        (ring1 if (di, dj) in ((1, 0), (0, 1)) else rest).append(pairs)
    return np.vstack(ring1), np.vstack(rest)


def gen_random_operator(N, nnz_ratio, seed, weight_decades=(0.0, 4.0),
                        boost_count=None):
    """Weighted graph-Laplacian-like SPD operator at a target sparsity.

    Vertices live on a virtual 2D grid and edges are drawn from short-range
    offsets, so the sparsity pattern keeps the locality of low-order
    stencils while the count is tuned to the requested NNZ/N ratio.
    Off-diagonal magnitudes are log-uniform over the given decades to mimic
    coefficient contrast; the diagonal carries the absolute row sums plus
    boundary-like boosts on a random vertex subset.  A random spanning tree
    of the grid edges keeps the graph connected, so any boost makes the
    matrix SPD.
    """
    if not 3.0 <= nnz_ratio <= 7.0:
        raise ConfigError(f"nnz_ratio {nnz_ratio} outside [3, 7]")
    if N < 4:
        raise ConfigError("need at least four vertices")
    rng = np.random.default_rng(seed)
    ring1, rest = _edge_pool(N)
    pool_size = ring1.shape[0] + rest.shape[0]
    lo = int(np.ceil(N * 1.0))  # ratio 3 -> N edges
    hi = min(int(np.floor(N * 3.0)), pool_size)
    E = int(np.clip(round(N * (nnz_ratio - 1.0) / 2.0), lo, hi))

    # random spanning tree over the grid edges (union-find Kruskal)
    parent = np.arange(N)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    order = rng.permutation(ring1.shape[0])
    tree, spare = [], []
    for idx in order.tolist():
        a, b = ring1[idx]
        ra, rb = find(a), find(b)
        if ra == rb:
            spare.append(idx)
        else:
            parent[ra] = rb
            tree.append(idx)
    extras = np.concatenate([ring1[spare], rest]) if spare else rest
    need = E - len(tree)
    pick = rng.permutation(extras.shape[0])[:need]
    er = np.vstack([ring1[tree], extras[pick]])
    er = np.sort(er, axis=1)
    er = er[np.lexsort((er[:, 1], er[:, 0]))]
    mags = 10.0 ** rng.uniform(*weight_decades, size=er.shape[0])

    E = er.shape[0]
    diag = np.zeros(N)
    np.add.at(diag, er[:, 0], mags)
    np.add.at(diag, er[:, 1], mags)
    if boost_count is None:
        boost_count = max(1, int(round(4.0 * np.sqrt(N))))
    if boost_count > 0:
        picks = rng.choice(N, size=min(boost_count, N), replace=False)
        diag[picks] += 10.0 ** rng.uniform(*weight_decades, size=picks.size)

    rows = np.concatenate([np.arange(N), er[:, 0]])
    cols = np.concatenate([np.arange(N), er[:, 1]])
    vals = np.concatenate([diag, -mags])
    return SymSparseMatrix(N, rows, cols, vals)


@dataclass
class CorpusSpec:
    num_graphs: int = 100
    graph_size: int = 600
    nnz_range: tuple = (3.0, 7.0)
    target_subdomain_size: int = 300
    delta: int = 2
    n_c: int = 8
    train_fraction: float = 0.8
    targets: bool = True
    seed: int = 0


def build_corpus(spec, out_dir):
    """Generate operators, decompose, solve exact targets, write records.

    Returns the manifest dict (also written as manifest.json).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    records = []
    operators = []
    for g in range(spec.num_graphs):
        ratio = float(rng.uniform(*spec.nnz_range))
        op_seed = int(rng.integers(2 ** 62))
        part_seed = int(rng.integers(2 ** 62))
        A = gen_random_operator(spec.graph_size, ratio, op_seed)
        operators.append({"graph": g, "n": A.n, "nnz": A.nnz_full,
                          "nnz_ratio": A.nnz_full / A.n, "seed": op_seed})
        graph = adjacency_graph(A)
        k = max(1, round(spec.graph_size / spec.target_subdomain_size))
        dec = grow_overlap(graph, partition(graph, k, part_seed), spec.delta)
        for i in range(dec.k):
            blocks = build_local_blocks(A, dec, i)
            rec = record_from_blocks(
                blocks,
                multiplicity=dec.multiplicity[dec.overlapping_sets[i]])
            if spec.targets:
                # solve on the record's own blocks so the target is exactly
                # reproducible from the serialized features
                try:
                    space = solve_local_spectral(blocks_from_record(rec),
                                                 n_c=spec.n_c)
                except DimensionMismatchError:
                    continue  # image smaller than n_c; skip tiny subdomain
                rec.target_basis = space.spectral_part
            rec.validate()
            path = out / f"graph{g:04d}_sub{i:03d}.sgb"
            write_sgb(path, rec)
            records.append({"path": path.name, "n": rec.n, "n_c": spec.n_c,
                            "graph": g, "subdomain": i})
    order = rng.permutation(len(records))
    n_train = int(round(spec.train_fraction * len(records)))
    for rank, idx in enumerate(order.tolist()):
        records[idx]["split"] = "train" if rank < n_train else "val"
    manifest = {"records": records, "operators": operators,
                "seed": spec.seed, "spec": asdict(spec)}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# SGB1 / CBX1 binary formats (little-endian, bit-exact round trips)
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, count, what):
        if self.pos + count > len(self.data):
            raise FormatError(f"truncated while reading {what}",
                              offset=self.pos)
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]

    def u8(self, what):
        return self.take(1, what)[0]

    def f64_array(self, count, what, allow_nan=False):
        start = self.pos
        arr = np.frombuffer(self.take(8 * count, what), dtype="<f8")
        if not allow_nan and np.isnan(arr).any():
            bad = int(np.flatnonzero(np.isnan(arr))[0])
            raise FormatError(f"NaN in {what} at element {bad}",
                              offset=start + 8 * bad)
        return arr

    def u64_array(self, count, what):
        return np.frombuffer(self.take(8 * count, what), dtype="<u8")


def write_sgb(path, record):
    record.validate()
    A = record.matrix
    has_target = record.target_basis is not None
    parts = [SGB_MAGIC,
             struct.pack("<QQQ", A.n, A.nnz_stored, 3),
             struct.pack("<B", 1 if has_target else 0)]
    if has_target:
        parts.append(struct.pack("<Q", record.target_basis.shape[1]))
    parts.append(A.rows.astype("<u8").tobytes())
    parts.append(A.cols.astype("<u8").tobytes())
    parts.append(A.vals.astype("<f8").tobytes())
    parts.append(record.features().astype("<f8").tobytes())  # node-major
    if has_target:
        parts.append(np.asarray(record.target_basis, dtype="<f8")
                     .tobytes(order="F"))
    blob = b"".join(parts)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def read_sgb(path):
    rd = _Reader(Path(path).read_bytes())
    magic = rd.take(4, "magic")
    if magic != SGB_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {SGB_MAGIC!r}",
                          offset=0)
    n = rd.u64("n")
    nnz = rd.u64("nnz")
    n_feat = rd.u64("n_feat")
    if n_feat != 3:
        raise FormatError(f"expected 3 features, got {n_feat}", offset=12)
    has_target = rd.u8("has_target")
    n_c = rd.u64("n_c") if has_target else 0
    rows = rd.u64_array(nnz, "rows").astype(np.int64)
    cols = rd.u64_array(nnz, "cols").astype(np.int64)
    vals = rd.f64_array(nnz, "values")
    feats = rd.f64_array(3 * n, "features").reshape(n, 3)
    target = None
    if has_target:
        target = rd.f64_array(n * n_c, "target basis").reshape(
            (n, n_c), order="F").copy()
    if rd.pos != len(rd.data):
        raise FormatError("trailing bytes after record", offset=rd.pos)
    matrix = SymSparseMatrix(n, rows, cols, vals.copy(), _presorted=True)
    rec = SubdomainGraphRecord(matrix=matrix,
                               type_flag=feats[:, 0].copy(),
                               d_v=feats[:, 1].copy(),
                               s_v=feats[:, 2].copy(),
                               target_basis=target)
    rec.validate()
    return rec


def write_cbx(path, basis):
    basis = np.asarray(basis, dtype=np.float64)
    if basis.ndim != 2:
        raise DimensionMismatchError("coarse basis must be 2-D")
    if np.isnan(basis).any():
        bad = int(np.flatnonzero(np.isnan(basis.ravel(order="F")))[0])
        raise FormatError(f"NaN in basis at element {bad}")
    blob = (CBX_MAGIC
            + struct.pack("<QQ", basis.shape[0], basis.shape[1])
            + basis.astype("<f8").tobytes(order="F"))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def read_cbx(path):
    rd = _Reader(Path(path).read_bytes())
    magic = rd.take(4, "magic")
    if magic != CBX_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CBX_MAGIC!r}",
                          offset=0)
    n = rd.u64("n")
    n_c = rd.u64("n_c")
    data = rd.f64_array(n * n_c, "basis")
    if rd.pos != len(rd.data):
        raise FormatError("trailing bytes after basis", offset=rd.pos)
    return data.reshape((n, n_c), order="F").copy()


def cbx_name(i):
    return f"basis_{i:04d}.cbx"


def sgb_name(i):
    return f"subdomain_{i:04d}.sgb"


def load_imported_bases(import_dir, dec):
    """Read one CBX per subdomain, checking row counts against the overlap."""
    bases = []
    for i in range(dec.k):
        path = Path(import_dir) / cbx_name(i)
        if not path.exists():
            raise FormatError(f"missing coarse basis for subdomain {i}: "
                              f"{path}")
        Z = read_cbx(path)
        expect = dec.overlapping_sets[i].size
        if Z.shape[0] != expect:
            raise DimensionMismatchError(
                f"subdomain {i}: imported basis has {Z.shape[0]} rows, "
                f"decomposition expects {expect}")
        bases.append(Z)
    return bases
