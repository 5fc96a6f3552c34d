"""Native readers/writers for the solver's SGB1/CBX1 exchange formats.

Everything here is little-endian and mirrors the formats exactly; the
solver package is never imported.  A record carries the subdomain operator
in upper-triangle COO form, three features per node (halo flag,
multiplicity, diagonal correction), and an optional target basis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SGB_MAGIC = b"SGB1"
CBX_MAGIC = b"CBX1"


class FormatError(Exception):
    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


@dataclass
class Record:
    n: int
    rows: np.ndarray        # upper triangle, row-major sorted
    cols: np.ndarray
    vals: np.ndarray
    features: np.ndarray    # (n, 3): halo flag, d_v, s_v
    target: np.ndarray = None

    def dense_matrix(self):
        A = np.zeros((self.n, self.n))
        A[self.rows, self.cols] = self.vals
        A[self.cols, self.rows] = self.vals
        return A

    def dense_corrected(self):
        """The spectral-problem weight: subtract the boundary correction
        from the diagonal."""
        At = self.dense_matrix()
        At[np.arange(self.n), np.arange(self.n)] -= self.features[:, 2]
        return At


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, count, what):
        if self.pos + count > len(self.data):
            raise FormatError(f"truncated while reading {what}",
                              offset=self.pos)
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]

    def f64(self, count, what):
        start = self.pos
        arr = np.frombuffer(self.take(8 * count, what), dtype="<f8")
        if np.isnan(arr).any():
            bad = int(np.flatnonzero(np.isnan(arr))[0])
            raise FormatError(f"NaN in {what} at element {bad}",
                              offset=start + 8 * bad)
        return arr


def read_sgb(path):
    rd = _Reader(Path(path).read_bytes())
    if rd.take(4, "magic") != SGB_MAGIC:
        raise FormatError("bad SGB1 magic", offset=0)
    n = rd.u64("n")
    nnz = rd.u64("nnz")
    if rd.u64("n_feat") != 3:
        raise FormatError("expected 3 node features", offset=12)
    has_target = rd.take(1, "has_target")[0]
    n_c = rd.u64("n_c") if has_target else 0
    rows = np.frombuffer(rd.take(8 * nnz, "rows"), dtype="<u8").astype(np.int64)
    cols = np.frombuffer(rd.take(8 * nnz, "cols"), dtype="<u8").astype(np.int64)
    vals = rd.f64(nnz, "values").copy()
    feats = rd.f64(3 * n, "features").reshape(n, 3).copy()
    target = None
    if has_target:
        target = rd.f64(n * n_c, "target").reshape((n, n_c), order="F").copy()
    if rd.pos != len(rd.data):
        raise FormatError("trailing bytes", offset=rd.pos)
    return Record(n=n, rows=rows, cols=cols, vals=vals, features=feats,
                  target=target)


def write_cbx(path, basis):
    basis = np.asarray(basis, dtype=np.float64)
    if np.isnan(basis).any():
        raise FormatError("refusing to write NaN basis")
    blob = (CBX_MAGIC + struct.pack("<QQ", basis.shape[0], basis.shape[1])
            + basis.astype("<f8").tobytes(order="F"))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def read_cbx(path):
    rd = _Reader(Path(path).read_bytes())
    if rd.take(4, "magic") != CBX_MAGIC:
        raise FormatError("bad CBX1 magic", offset=0)
    n = rd.u64("n")
    n_c = rd.u64("n_c")
    data = rd.f64(n * n_c, "basis")
    return data.reshape((n, n_c), order="F").copy()
