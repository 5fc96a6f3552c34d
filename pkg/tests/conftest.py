import numpy as np
import pytest

from schwarzlab.lacore import SymSparseMatrix


def random_spd_dense(rng, n, cond=100.0):
    Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    w = np.geomspace(1.0, cond, n)
    return (Q * w) @ Q.T


def random_spsd_dense(rng, n, kernel_dim=0, cond=100.0):
    Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    w = np.geomspace(1.0, cond, n)
    w[:kernel_dim] = 0.0
    return (Q * w) @ Q.T


def random_sparse_spd(rng, n, density=0.05):
    """Diagonally dominant random sparse SPD matrix."""
    m = max(n, int(density * n * n))
    rows = rng.integers(0, n, size=m)
    cols = rng.integers(0, n, size=m)
    keep = rows < cols
    pairs = np.unique(np.column_stack([rows[keep], cols[keep]]), axis=0)
    vals = -rng.uniform(0.1, 1.0, size=pairs.shape[0])
    diag = np.zeros(n)
    np.add.at(diag, pairs[:, 0], -vals)
    np.add.at(diag, pairs[:, 1], -vals)
    diag += rng.uniform(0.1, 1.0, size=n)
    r = np.concatenate([np.arange(n), pairs[:, 0]])
    c = np.concatenate([np.arange(n), pairs[:, 1]])
    v = np.concatenate([diag, vals])
    return SymSparseMatrix(n, r, c, v)


def laplacian_1d(n, dirichlet_ends=True):
    """Tridiagonal [-1, 2, -1]; without Dirichlet ends the row sums vanish."""
    rows = np.concatenate([np.arange(n), np.arange(n - 1)])
    cols = np.concatenate([np.arange(n), np.arange(1, n)])
    diag = np.full(n, 2.0)
    if not dirichlet_ends:
        diag[0] = diag[-1] = 1.0
    vals = np.concatenate([diag, np.full(n - 1, -1.0)])
    return SymSparseMatrix(n, rows, cols, vals)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
