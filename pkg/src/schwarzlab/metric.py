"""Weighted subspace distance between equal-dimension coarse spaces.

The distance compares two subspaces through the inner product induced by a
symmetric positive semidefinite operator; bases are orthonormalized in that
inner product and constrained to the operator's image (orthonormality of a
kernel-touching basis is impossible, so the image restriction is part of
the contract here).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, RankDeficientError
from .lacore import EPS, SymSparseMatrix, dense_sym_eig


def image_basis(a_tilde):
    """Orthonormal basis Q of Im(a_tilde) plus its positive eigenvalues.

    Eigenvalues below EPS.kernel_cut * lam_max count as kernel.
    """
    w, V = dense_sym_eig(a_tilde.to_dense())
    lam_max = w[0] if w.size else 0.0
    cut = EPS.kernel_cut * max(lam_max, 0.0)
    pos = w > cut
    return V[:, pos], w[pos]


@dataclass
class ASubspace:
    """A weighted-orthonormal basis of a subspace of Im(a_tilde)."""

    a_tilde: SymSparseMatrix
    basis: np.ndarray  # n x n_c, columns orthonormal in the a_tilde product

    @property
    def n_c(self):
        return self.basis.shape[1]


def a_orthonormalize(a_tilde, V, image=None):
    """Orthonormalize columns of V in the a_tilde inner product.

    V is first projected onto Im(a_tilde); a modified Gram-Schmidt sweep
    with one reorthogonalization pass follows.  ``image`` may carry a
    precomputed (Q, eigenvalues) pair from :func:`image_basis`.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] != a_tilde.n:
        raise DimensionMismatchError("basis rows must match operator size")
    Q, _ = image if image is not None else image_basis(a_tilde)
    W = Q @ (Q.T @ V)
    Acsr = a_tilde.to_csr()
    Y = np.empty_like(W)
    for j in range(W.shape[1]):
        v = W[:, j].copy()
        ref = float(np.sqrt(max(v @ (Acsr @ v), 0.0)))
        for _ in range(2):  # MGS + reorthogonalization
            for i in range(j):
                v -= (Y[:, i] @ (Acsr @ v)) * Y[:, i]
        nrm = float(np.sqrt(max(v @ (Acsr @ v), 0.0)))
        if nrm <= 1e-7 * max(ref, 1e-300):
            raise RankDeficientError(
                f"column {j} is numerically dependent in the weighted product",
                column=j)
        Y[:, j] = v / nrm
    return ASubspace(a_tilde=a_tilde, basis=Y)


def _check_compatible(s1, s2):
    if s1.n_c != s2.n_c:
        raise DimensionMismatchError(
            f"subspace dimensions differ: {s1.n_c} vs {s2.n_c}")
    a, b = s1.a_tilde, s2.a_tilde
    if a is not b:
        same = (a.n == b.n and a.vals.size == b.vals.size
                and np.array_equal(a.rows, b.rows)
                and np.array_equal(a.cols, b.cols)
                and np.array_equal(a.vals, b.vals))
        if not same:
            raise DimensionMismatchError(
                "subspaces live under different weight operators")


def dist_raw(s1, s2):
    """Pre-clamp excess n_c - ||Y1' A Y2||_F^2 (may be slightly negative)."""
    _check_compatible(s1, s2)
    M = s1.basis.T @ (s1.a_tilde.to_csr() @ s2.basis)
    return s1.n_c - float(np.sum(M * M))


def dist(s1, s2):
    """Subspace distance sqrt(max(0, n_c - ||Y1' A Y2||_F^2)).

    Near zero the direct formula cancels catastrophically (the computed
    value floors at sqrt(eps) even for identical spans), so that regime is
    evaluated through the equivalent projector-difference form, which is
    cancellation-free.
    """
    raw = dist_raw(s1, s2)
    floor = 64.0 * s1.n_c * np.finfo(np.float64).eps
    if raw > floor:
        return float(np.sqrt(raw))
    return projector_gap(s1, s2) / np.sqrt(2.0)


def projector_gap(s1, s2):
    """Frobenius gap between the whitened-space orthogonal projectors.

    Forms P_j = A^{1/2} Y_j (A^{1/2} Y_j)' with the symmetric square root
    taken on Im(A); the identity gap^2 = 2 dist^2 is the mechanism behind
    the perturbed condition-number bound.
    """
    _check_compatible(s1, s2)
    Q, lam = image_basis(s1.a_tilde)
    half = Q * np.sqrt(lam)  # A^{1/2} restricted to the image, as Q sqrt(lam) Q'
    W1 = half @ (Q.T @ s1.basis)
    W2 = half @ (Q.T @ s2.basis)
    P1 = W1 @ W1.T
    P2 = W2 @ W2.T
    return float(np.linalg.norm(P1 - P2, "fro"))


def random_subspace(a_tilde, n_c, rng, image=None):
    """Random n_c-dimensional weighted-orthonormal subspace inside the image."""
    Q, lam = image if image is not None else image_basis(a_tilde)
    if Q.shape[1] < n_c:
        raise DimensionMismatchError(
            f"image dimension {Q.shape[1]} is below n_c={n_c}")
    V = Q @ rng.standard_normal((Q.shape[1], n_c))
    return a_orthonormalize(a_tilde, V, image=(Q, lam))


def _span_equal(s1, s2, tol):
    M = s1.basis.T @ (s1.a_tilde.to_csr() @ s2.basis)
    sv = np.linalg.svd(M, compute_uv=False)
    return bool(sv.min() >= 1.0 - tol)


def check_metric_properties(a_tilde, n_c, trials, seed,
                            invariance_tol=1e-8,
                            negativity_tol=1e-10,
                            span_tol=1e-6,
                            symmetry_tol=1e-10,
                            triangle_slack=1e-8):
    """Randomized check of the distance's metric axioms.

    Draws random subspace triples under ``a_tilde`` and verifies basis
    invariance, non-negativity of the pre-clamp excess, the zero-distance /
    span-equality equivalence, symmetry, and the triangle inequality.
    Returns a report dict with max deviations and violation counts.
    """
    rng = np.random.default_rng(seed)
    image = image_basis(a_tilde)
    report = {
        "trials": trials,
        "max_invariance_dev": 0.0,
        "max_negative_excess": 0.0,
        "max_symmetry_dev": 0.0,
        "min_triangle_margin": np.inf,
        "violations": {"invariance": 0, "negativity": 0, "zero_dist": 0,
                       "symmetry": 0, "triangle": 0},
    }
    for _ in range(trials):
        s1 = random_subspace(a_tilde, n_c, rng, image=image)
        s2 = random_subspace(a_tilde, n_c, rng, image=image)
        s3 = random_subspace(a_tilde, n_c, rng, image=image)

        raw12 = dist_raw(s1, s2)
        report["max_negative_excess"] = min(report["max_negative_excess"], raw12)
        if raw12 < -negativity_tol:
            report["violations"]["negativity"] += 1

        d12 = np.sqrt(max(raw12, 0.0))
        d21 = dist(s2, s1)
        sym = abs(d12 - d21)
        report["max_symmetry_dev"] = max(report["max_symmetry_dev"], sym)
        if sym > symmetry_tol:
            report["violations"]["symmetry"] += 1

        # rebasing by an orthogonal mix preserves weighted orthonormality
        O = np.linalg.qr(rng.standard_normal((n_c, n_c)))[0]
        s1b = ASubspace(a_tilde=s1.a_tilde, basis=s1.basis @ O)
        dev = abs(dist(s1b, s2) - d12)
        report["max_invariance_dev"] = max(report["max_invariance_dev"], dev)
        if dev > invariance_tol:
            report["violations"]["invariance"] += 1

        # zero distance <=> equal spans: the rebased copy must sit at 0 and
        # any near-zero distance must come with unit principal cosines
        d_self = dist(s1, s1b)
        if d_self > span_tol or not _span_equal(s1, s1b, span_tol):
            report["violations"]["zero_dist"] += 1
        for a, b, d in ((s1, s2, d12), (s2, s3, None), (s1, s3, None)):
            dd = dist(a, b) if d is None else d
            if dd <= span_tol and not _span_equal(a, b, span_tol):
                report["violations"]["zero_dist"] += 1

        d23 = dist(s2, s3)
        d13 = dist(s1, s3)
        margin = d12 + d23 - d13
        report["min_triangle_margin"] = min(report["min_triangle_margin"], margin)
        if margin < -triangle_slack:
            report["violations"]["triangle"] += 1
    report["ok"] = all(v == 0 for v in report["violations"].values())
    return report
