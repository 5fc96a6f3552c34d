"""Per-subdomain corrected blocks, spectral problems, and coarse bases.

For each overlapping subdomain the locally extracted operator gets its halo
diagonal reduced by the absolute exterior couplings, producing a positive
semidefinite corrected block.  The local coarse space couples the corrected
block's kernel (minus directions invisible to the weighted energy) with the
top eigenvectors of the weighted-energy / corrected-energy pencil on the
corrected block's image.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError
from .lacore import (EPS, SymSparseMatrix, dense_generalized_eig,
                     dense_sym_eig, extract_principal_submatrix)


@dataclass
class LocalBlocks:
    a_local: SymSparseMatrix      # restriction of the global operator
    a_tilde: SymSparseMatrix      # halo-corrected block, SPSD
    s: np.ndarray                 # diagonal correction, 0 on interior
    d_weights: np.ndarray         # partition-of-unity diagonal
    halo_mask: np.ndarray         # True where the local vertex is halo
    global_indices: np.ndarray    # sorted overlapping vertex set

    @property
    def n(self):
        return self.a_local.n


@dataclass
class LocalCoarseSpace:
    basis: np.ndarray             # [kernel part | spectral part]
    eigenvalues: np.ndarray       # full image-pencil spectrum, descending
    n_c: int                      # spectral column count
    tau: float                    # n_c-th largest eigenvalue
    M: float                      # largest eigenvalue (norm-equivalence constant)
    kernel_dim: int

    @property
    def kernel_part(self):
        return self.basis[:, :self.kernel_dim]

    @property
    def spectral_part(self):
        return self.basis[:, self.kernel_dim:]


def apply_boundary_correction(A, s):
    """Subtract diag(s) from A, dropping entries that cancel exactly."""
    s = np.asarray(s, dtype=np.float64)
    on = A.rows == A.cols
    diag = np.zeros(A.n)
    diag[A.rows[on]] = A.vals[on]
    new_diag = diag - s
    idx = np.arange(A.n)
    rows = np.concatenate([A.rows[~on], idx])
    cols = np.concatenate([A.cols[~on], idx])
    vals = np.concatenate([A.vals[~on], new_diag])
    return SymSparseMatrix(A.n, rows, cols, vals)


def build_local_blocks(A, dec, i):
    """Extract the i-th subdomain operator and its corrected block."""
    if not 0 <= i < dec.k:
        raise DimensionMismatchError(f"subdomain index {i} out of range")
    ov = dec.overlapping_sets[i]
    a_local = extract_principal_submatrix(A, ov)

    # absolute couplings from local rows to the complement
    inside = np.zeros(A.n, dtype=bool)
    inside[ov] = True
    csr = A.to_csr()
    sub = csr[ov]
    outside_cols = ~inside[sub.indices]
    absdata = np.where(outside_cols, np.abs(sub.data), 0.0)
    s = np.asarray(sp_row_sums(sub, absdata))
    # the correction lives on the halo only
    s[~dec.halo_masks[i]] = 0.0

    a_tilde = apply_boundary_correction(a_local, s)
    return LocalBlocks(a_local=a_local, a_tilde=a_tilde, s=s,
                       d_weights=dec.pou_weights[i],
                       halo_mask=dec.halo_masks[i].copy(),
                       global_indices=ov)


def sp_row_sums(sub, data):
    out = np.zeros(sub.shape[0])
    np.add.at(out, np.repeat(np.arange(sub.shape[0]),
                             np.diff(sub.indptr)), data)
    return out


def _weighted_energy(blocks):
    d = blocks.d_weights
    return (blocks.a_local.to_dense() * d[None, :]) * d[:, None]


def _split_spectrum(blocks):
    """Eigendecomposition of the corrected block split into kernel/image."""
    w, V = dense_sym_eig(blocks.a_tilde.to_dense())
    lam_max = max(float(w[0]) if w.size else 0.0, 0.0)
    cut = EPS.kernel_cut * lam_max
    image = w > cut
    return V[:, image], w[image], V[:, ~image]


def kernel_bases(blocks):
    """Kernel directions carrying weighted energy, plus an image basis.

    Returns (K, Q): K spans the orthogonal complement, inside the corrected
    block's kernel, of the joint kernel shared with the weighted energy;
    Q is an orthonormal basis of the corrected block's image.
    """
    Q, _, N = _split_spectrum(blocks)
    if N.shape[1] == 0:
        return np.zeros((blocks.n, 0)), Q
    B = _weighted_energy(blocks)
    M_red = N.T @ B @ N
    wm, Um = dense_sym_eig(0.5 * (M_red + M_red.T))
    scale = max(float(wm[0]) if wm.size else 0.0, 0.0)
    keep = wm > EPS.kernel_cut * scale
    return N @ Um[:, keep], Q


def solve_local_spectral(blocks, n_c=None, tau=None):
    """Solve the local pencil on the corrected block's image and assemble
    the coarse basis.

    Selection: ``n_c`` takes the top eigenvectors; ``tau`` keeps those with
    eigenvalue >= tau; both together keep the top n_c among those >= tau.
    """
    if n_c is None and tau is None:
        raise ValueError("need n_c, tau, or both")
    K, Q = kernel_bases(blocks)
    r = Q.shape[1]
    if n_c is not None and n_c > r:
        raise DimensionMismatchError(
            f"n_c={n_c} exceeds image dimension {r}")
    if r == 0:
        return LocalCoarseSpace(basis=K, eigenvalues=np.zeros(0),
                                n_c=0, tau=0.0, M=0.0,
                                kernel_dim=K.shape[1])
    B = _weighted_energy(blocks)
    A_proj = Q.T @ B @ Q
    B_proj = Q.T @ blocks.a_tilde.to_dense() @ Q
    eig = dense_generalized_eig(0.5 * (A_proj + A_proj.T),
                                0.5 * (B_proj + B_proj.T))
    lam = eig.eigenvalues
    n_sel = int(np.sum(np.abs(lam) >= tau)) if tau is not None else r
    if n_c is not None:
        n_sel = min(n_sel, n_c) if tau is not None else n_c
    spectral = Q @ eig.eigenvectors[:, :n_sel]
    tau_i = float(lam[n_sel - 1]) if n_sel >= 1 else float(lam[0])
    return LocalCoarseSpace(basis=np.hstack([K, spectral]),
                            eigenvalues=lam, n_c=n_sel, tau=tau_i,
                            M=float(lam[0]), kernel_dim=K.shape[1])


def build_all_coarse_spaces(A, dec, n_c=None, tau=None, workers=1,
                            blocks_list=None):
    """Exact coarse spaces for every subdomain; parallel over subdomains."""
    if blocks_list is None:
        blocks_list = [build_local_blocks(A, dec, i) for i in range(dec.k)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            spaces = list(pool.map(
                lambda b: solve_local_spectral(b, n_c=n_c, tau=tau),
                blocks_list))
    else:
        spaces = [solve_local_spectral(b, n_c=n_c, tau=tau)
                  for b in blocks_list]
    return blocks_list, spaces


def rotate_spectral_basis(blocks, coarse, distance, rng):
    """Rotate the first spectral column inside the corrected block's image
    so the perturbed span sits at exactly the requested subspace distance.

    The rotation mixes in a direction that is weighted-orthonormal and
    weighted-orthogonal to the whole spectral span, so the perturbed basis
    stays orthonormal in the weighted product.  Returns the full coarse
    basis [kernel | rotated spectral].
    """
    X = coarse.spectral_part
    if X.shape[1] == 0 or distance == 0.0:
        return coarse.basis.copy()
    At = blocks.a_tilde.to_csr()
    Q, _, _ = _split_spectrum(blocks)
    if Q.shape[1] <= X.shape[1]:
        raise DimensionMismatchError(
            "image has no spare direction to rotate into")
    q = None
    for _ in range(64):
        v = Q @ rng.standard_normal(Q.shape[1])
        v -= X @ (X.T @ (At @ v))
        nrm = float(np.sqrt(max(v @ (At @ v), 0.0)))
        if nrm > 1e-8:
            q = v / nrm
            break
    if q is None:
        raise DimensionMismatchError("could not find a rotation direction")
    theta = np.arcsin(distance)
    Xh = X.copy()
    Xh[:, 0] = np.cos(theta) * X[:, 0] + np.sin(theta) * q
    return np.hstack([coarse.kernel_part, Xh])


def verify_stable_decomposition(blocks, coarse, trials, seed=0):
    """Randomized check of the local stable-decomposition inequality.

    The projector onto the coarse space acts Euclidean on the kernel part
    and weighted-orthogonal on the spectral part (the form under which the
    n_c-th eigenvalue is the sharp constant).  Also evaluates the
    image-restricted form with the weighted-orthogonal projector; the two
    ratios agree vector by vector.
    """
    rng = np.random.default_rng(seed)
    K = coarse.kernel_part
    Zs = coarse.spectral_part
    Q, _, _kern = _split_spectrum(blocks)
    At = blocks.a_tilde.to_csr()
    B = _weighted_energy(blocks)
    scale = blocks.a_tilde.norm_max() or 1.0

    def project(u):
        out = Zs @ (Zs.T @ (At @ u)) if Zs.shape[1] else np.zeros_like(u)
        if K.shape[1]:
            out = out + K @ (K.T @ u)
        return out

    max_full = 0.0
    max_image = 0.0
    max_disagreement = 0.0
    used = 0
    for _ in range(trials):
        u = rng.standard_normal(blocks.n)
        den = float(u @ (At @ u))
        if den <= 1e-12 * scale * float(u @ u):
            continue
        used += 1
        e = u - project(u)
        full = float(e @ (B @ e)) / den
        v = Q @ (Q.T @ u)
        ev = v - (Zs @ (Zs.T @ (At @ v)) if Zs.shape[1] else 0.0)
        den_v = float(v @ (At @ v))
        image = float(ev @ (B @ ev)) / den_v if den_v > 0 else 0.0
        max_full = max(max_full, full)
        max_image = max(max_image, image)
        rel = abs(full - image) / max(abs(full), abs(image), 1e-300)
        max_disagreement = max(max_disagreement, rel)
    return {
        "trials": used,
        "max_ratio": max_full,
        "max_ratio_image": max_image,
        "max_disagreement": max_disagreement,
        "tau": coarse.tau,
        "ok": max_full <= coarse.tau * (1.0 + 1e-8) if used else True,
    }
