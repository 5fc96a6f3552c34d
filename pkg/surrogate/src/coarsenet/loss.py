"""Subspace-distance training loss.

The weight operator is reconstructed from the record (operator minus the
diagonal correction); predictions are projected onto its image and
orthonormalized in its inner product by differentiable Gram whitening, then
compared against the orthonormalized target through the Frobenius overlap.
"""

from __future__ import annotations

import numpy as np
import torch

KERNEL_CUT = 1e-10
RIDGE = 1e-6
LOSS_FLOOR = 1e-14  # inside the sqrt; keeps the gradient finite at zero


class LossWeights:
    """Per-record constants: weight operator, image basis, target basis."""

    def __init__(self, record):
        At = record.dense_corrected()
        At = 0.5 * (At + At.T)
        w, U = np.linalg.eigh(At)
        cut = KERNEL_CUT * max(float(w.max()), 0.0) if w.size else 0.0
        Q = U[:, w > cut]
        self.n = record.n
        self.image_dim = Q.shape[1]
        self.at = torch.from_numpy(At)
        self.q = torch.from_numpy(Q.copy())
        self.target = None
        if record.target is not None:
            self.target = torch.from_numpy(
                _whiten_numpy(At, Q, record.target))


def _whiten_numpy(At, Q, V):
    P = Q @ (Q.T @ V)
    G = P.T @ At @ P
    wg, Vg = np.linalg.eigh(0.5 * (G + G.T))
    if wg.min() <= 0:
        raise ValueError("target basis is rank deficient under the weight")
    W = Vg @ np.diag(1.0 / np.sqrt(wg)) @ Vg.T
    return P @ W


def orthonormalize(X, weights):
    """Differentiable projection + Gram whitening; returns (Y, ok).

    The ridge is a rank-collapse remedy only: a well-conditioned Gram
    matrix is whitened as-is (an exact target must come back at loss ~0),
    and the ridge enters only when conditioning fails.
    """
    X = X.to(weights.at.dtype)
    P = weights.q @ (weights.q.T @ X)
    G = P.T @ (weights.at @ P)
    G = 0.5 * (G + G.T)
    n_c = X.shape[1]
    scale = torch.diagonal(G).sum().detach() / n_c
    if not float(scale) > 0.0:
        return G, False  # degenerate prediction, no scale to whiten at
    wg, Vg = torch.linalg.eigh(G)
    wmin = float(wg.min().detach())
    wmax = float(wg.max().detach())
    if wmin <= 1e-12 * max(wmax, 0.0) or wmin <= 0.0:
        G = G + (RIDGE * scale.clamp(min=1e-300)) * torch.eye(
            n_c, dtype=G.dtype)
        wg, Vg = torch.linalg.eigh(G)
        wmin = float(wg.min().detach())
        wmax = float(wg.max().detach())
        if wmin <= 1e-12 * max(wmax, 0.0) or wmin <= 0.0:
            return G / scale, False
    W = Vg @ torch.diag(wg.rsqrt()) @ Vg.T
    return P @ W, True


def subspace_loss(X_hat, weights, squared=False):
    """Distance between the predicted span and the target span.

    Rank collapse of the prediction yields a large finite penalty
    (sqrt(n_c) plus the normalized Gram residual) instead of an exception.
    """
    if weights.target is None:
        raise ValueError("record carries no target basis")
    n_c = X_hat.shape[1]
    Y, ok = orthonormalize(X_hat, weights)
    root_nc = float(np.sqrt(n_c))
    if not ok:
        Gn = Y  # normalized Gram from the failed whitening
        residual = torch.linalg.norm(Gn - torch.eye(n_c, dtype=Gn.dtype))
        penalty = root_nc + residual
        return penalty * penalty if squared else penalty
    M = Y.T @ (weights.at @ weights.target)
    raw = n_c - (M * M).sum()
    if squared:
        return raw.clamp(min=0.0)
    return torch.sqrt(raw.clamp(min=LOSS_FLOOR))
