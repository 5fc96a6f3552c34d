"""Two-level additive Schwarz preconditioner assembly and application.

Level one sums subdomain solves on the overlapping sets; level two adds a
coarse correction whose restriction stacks the weighted local coarse bases.
The default level-one variant omits the partition-of-unity weighting inside
the solve so the preconditioner stays symmetric positive definite; the
weighted variant applies the diagonal after the local solve and is kept
behind a flag for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import DimensionMismatchError, NotSPDError
from .lacore import (EPS, SymSparseMatrix, dense_sym_eig,
                     extract_principal_submatrix, factor_spd)

LEVEL1_VARIANTS = ("symmetric", "weighted")


@dataclass
class TwoLevelPreconditioner:
    n: int
    variant: str
    restrictions: list            # sorted global index arrays
    d_weights: list
    solvers: list                 # subdomain factorizations
    coarse_rt: object             # R0^T sparse (n x m) or None
    coarse_solver: object         # factorization of R0 A R0^T or None
    coarse_dim: int = 0
    dropped: int = 0
    dropped_by_subdomain: dict = field(default_factory=dict)
    column_owner: np.ndarray = None

    def apply(self, r):
        r = np.asarray(r, dtype=np.float64)
        if r.shape[0] != self.n:
            raise DimensionMismatchError(
                f"apply: len(r)={r.shape[0]} but n={self.n}")
        out = np.zeros_like(r)
        for ov, d, solver in zip(self.restrictions, self.d_weights,
                                 self.solvers):
            local = solver.solve(r[ov])
            if self.variant == "weighted":
                local = d * local
            out[ov] += local
        if self.coarse_solver is not None:
            out += self.coarse_rt @ self.coarse_solver.solve(
                self.coarse_rt.T @ r)
        return out

    def apply_block(self, R):
        """Apply to the columns of R at once (BLAS-3 path)."""
        R = np.asarray(R, dtype=np.float64)
        out = np.zeros_like(R)
        for ov, d, solver in zip(self.restrictions, self.d_weights,
                                 self.solvers):
            local = solver.solve(R[ov])
            if self.variant == "weighted":
                local = d[:, None] * local
            out[ov] += local
        if self.coarse_solver is not None:
            out += self.coarse_rt @ self.coarse_solver.solve(
                np.asarray(self.coarse_rt.T @ R))
        return out


def assemble(A, dec, coarse_spaces=None, level1_variant="symmetric",
             blocks_list=None, drop_tol=None):
    """Factor the subdomain operators and the coarse matrix.

    ``coarse_spaces`` may be None (one-level), a list of LocalCoarseSpace,
    or a list of raw basis matrices per subdomain (imported columns).
    Near-dependent coarse columns are dropped by pivoted QR before the
    coarse factorization; a tiny diagonal shift is retried once if the
    coarse matrix still fails to factor.
    """
    if level1_variant not in LEVEL1_VARIANTS:
        raise ValueError(f"unknown level-1 variant {level1_variant!r}")
    drop_tol = EPS.coarse_drop if drop_tol is None else drop_tol

    restrictions = list(dec.overlapping_sets)
    d_weights = list(dec.pou_weights)
    if blocks_list is not None:
        locals_ = [b.a_local for b in blocks_list]
    else:
        locals_ = [extract_principal_submatrix(A, ov) for ov in restrictions]
    solvers = [factor_spd(Ai) for Ai in locals_]

    M = TwoLevelPreconditioner(
        n=A.n, variant=level1_variant, restrictions=restrictions,
        d_weights=d_weights, solvers=solvers,
        coarse_rt=None, coarse_solver=None)

    if not coarse_spaces:
        return M

    cols = []
    owners = []
    for i, space in enumerate(coarse_spaces):
        Z = space.basis if hasattr(space, "basis") else np.asarray(space)
        if Z.ndim != 2 or Z.shape[0] != restrictions[i].size:
            raise DimensionMismatchError(
                f"subdomain {i}: coarse basis has {Z.shape[0]} rows, "
                f"overlap has {restrictions[i].size}")
        if Z.shape[1] == 0:
            continue
        weighted = d_weights[i][:, None] * Z
        rows = np.repeat(restrictions[i], Z.shape[1])
        cidx = np.tile(np.arange(Z.shape[1]), restrictions[i].size)
        cols.append(sp.csc_matrix(
            (weighted.ravel(), (rows, cidx)),
            shape=(A.n, Z.shape[1])))
        owners.extend([i] * Z.shape[1])
    if not cols:
        return M

    r0t = sp.hstack(cols, format="csc")
    owners = np.asarray(owners)

    dense = r0t.toarray()
    _, R, piv = sla.qr(dense, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    ref = diag[0] if diag.size else 0.0
    rank = int(np.sum(diag > drop_tol * ref)) if ref > 0 else 0
    kept = np.sort(piv[:rank])
    dropped_cols = np.sort(piv[rank:])
    M.dropped = int(dropped_cols.size)
    for c in dropped_cols:
        owner = int(owners[c])
        M.dropped_by_subdomain[owner] = M.dropped_by_subdomain.get(owner, 0) + 1
    if rank == 0:
        return M

    r0t = r0t[:, kept]
    M.column_owner = owners[kept]
    A0 = (r0t.T @ (A.to_csr() @ r0t)).toarray()
    A0 = 0.5 * (A0 + A0.T)
    A0_sym = SymSparseMatrix.from_dense(A0)
    try:
        coarse_solver = factor_spd(A0_sym)
    except NotSPDError:
        shift = 1e-12 * np.trace(A0) / A0.shape[0]
        shifted = A0 + shift * np.eye(A0.shape[0])
        try:
            coarse_solver = factor_spd(SymSparseMatrix.from_dense(shifted))
        except NotSPDError as exc:
            bad = sorted(set(M.column_owner[max(exc.pivot or 0, 0):].tolist()))
            raise NotSPDError(
                "coarse matrix numerically singular after dropping; "
                f"suspect subdomains {bad}", pivot=exc.pivot)
    M.coarse_rt = r0t.tocsr()
    M.coarse_solver = coarse_solver
    M.coarse_dim = int(r0t.shape[1])
    return M


def dense_preconditioned_spectrum(A, M, cap=4096):
    """Spectrum of the preconditioned operator via a dense similarity.

    Only meaningful in the symmetric level-one variant.  Returns the
    ascending eigenvalues and the condition number over the positive part.
    """
    if A.n > cap:
        raise DimensionMismatchError(
            f"dense spectrum capped at n={cap}, got {A.n}")
    if M.variant != "symmetric":
        raise ValueError("dense spectrum requires the symmetric variant")
    W = M.apply_block(np.eye(A.n))
    W = 0.5 * (W + W.T)
    w, V = dense_sym_eig(W)
    w = np.clip(w, 0.0, None)
    S = (V * np.sqrt(w)) @ V.T  # W^{1/2}
    H = S @ A.to_dense() @ S
    eigs = np.sort(sla.eigvalsh(0.5 * (H + H.T)))
    pos = eigs[eigs > eigs[-1] * 1e-14] if eigs.size else eigs
    kappa = float(pos[-1] / pos[0]) if pos.size else np.inf
    return eigs, kappa


def random_spd_check(A, M, trials=100, seed=0):
    """Symmetry and positivity spot check of the assembled preconditioner."""
    rng = np.random.default_rng(seed)
    max_asym = 0.0
    min_quad = np.inf
    for _ in range(trials):
        x = rng.standard_normal(A.n)
        y = rng.standard_normal(A.n)
        Mx, My = M.apply(x), M.apply(y)
        max_asym = max(max_asym, abs(Mx @ y - x @ My)
                       / (np.linalg.norm(x) * np.linalg.norm(y)))
        min_quad = min(min_quad, (Mx @ x) / (x @ x))
    return {"max_asymmetry": max_asym, "min_quadratic_form": min_quad}
