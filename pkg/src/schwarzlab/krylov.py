"""Preconditioned conjugate gradient with timing and spectrum diagnostics.

The CG recurrence coefficients feed a tridiagonal matrix whose extreme
eigenvalues estimate the preconditioned condition number; the estimate is
reported as such and never used on its own to claim a bound violation.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatchError, IterationError


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    iter_seconds: list = field(default_factory=list)  # cumulative, per entry
    converged: bool = False
    tol: float = 0.0
    setup_seconds: float = 0.0
    solve_seconds: float = 0.0
    kappa_estimate: float = None
    kappa_dense: float = None
    bound_lemma: float = None
    bound_theorem: float = None
    coarse_dim: int = 0
    dropped_columns: int = 0

    def to_json(self, path=None):
        payload = asdict(self)
        if path is None:
            return json.dumps(payload, indent=2, sort_keys=True)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _tridiag_kappa(alphas, betas):
    m = len(alphas)
    if m < 2:
        return None
    d = np.empty(m)
    e = np.empty(m - 1)
    d[0] = 1.0 / alphas[0]
    for j in range(1, m):
        d[j] = 1.0 / alphas[j] + betas[j - 1] / alphas[j - 1]
    for j in range(m - 1):
        e[j] = np.sqrt(max(betas[j], 0.0)) / alphas[j]
    w = sla.eigvalsh_tridiagonal(d, e)
    w = w[w > 0]
    return float(w[-1] / w[0]) if w.size >= 2 else None


def pcg(A, M, b, tol=1e-8, max_iter=1000, x0=None, true_every=10):
    """Conjugate gradient on A x = b preconditioned by M (None = identity).

    Convergence is declared on the relative Euclidean residual; the true
    residual is recomputed every ``true_every`` iterations and at the
    convergence test to guard recurrence drift.  A non-positive curvature
    p'Ap aborts with the failing iterate index.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != A.n:
        raise DimensionMismatchError("rhs length does not match operator")
    apply_M = (lambda v: v.copy()) if M is None else M.apply

    report = SolveReport(tol=tol)
    t0 = time.monotonic()
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        report.converged = True
        report.residual_history = [0.0]
        report.iter_seconds = [0.0]
        report.solve_seconds = time.monotonic() - t0
        return x, report

    r = b - A.matvec(x) if x0 is not None else b.copy()
    res = float(np.linalg.norm(r)) / bnorm
    report.residual_history.append(res)
    report.iter_seconds.append(time.monotonic() - t0)
    if res <= tol:
        report.converged = True
        report.solve_seconds = time.monotonic() - t0
        return x, report

    z = apply_M(r)
    p = z.copy()
    rz = float(r @ z)
    alphas, betas = [], []
    for k in range(1, max_iter + 1):
        Ap = A.matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise IterationError(
                f"non-positive curvature p'Ap={pAp:.3e} at iteration {k}",
                iteration=k)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if true_every and k % true_every == 0:
            r = b - A.matvec(x)
        res = float(np.linalg.norm(r)) / bnorm
        alphas.append(alpha)
        converged = False
        if res <= tol:
            r_true = b - A.matvec(x)
            res_true = float(np.linalg.norm(r_true)) / bnorm
            r = r_true
            res = res_true
            converged = res_true <= tol
        report.residual_history.append(res)
        report.iter_seconds.append(time.monotonic() - t0)
        report.iterations = k
        if converged:
            report.converged = True
            break
        z = apply_M(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        betas.append(beta)
        rz = rz_new
        p = z + beta * p
    report.solve_seconds = time.monotonic() - t0
    report.kappa_estimate = _tridiag_kappa(alphas, betas)
    return x, report


@dataclass
class BoundReport:
    kappa: float
    kappa_source: str             # "dense" or "estimate"
    lemma_bound: float
    theorem_bound: float = None
    lemma_violated: bool = False
    theorem_violated: bool = False


def schwarz_bound(k_c, k_m, tau_terms):
    return (k_c + 1.0) * (2.0 + (2.0 * k_c + 1.0) * k_m * max(tau_terms))


def bound_check(report, stats, taus, Ms=None, dists=None,
                estimate_slack=1.1):
    """Evaluate the exact-space and perturbed condition-number bounds.

    Uses the dense condition number when the report carries one, else the
    CG estimate inflated by ``estimate_slack``.  Report-only: violations
    are flagged, never raised.
    """
    if report.kappa_dense is not None:
        kappa, source = report.kappa_dense, "dense"
    elif report.kappa_estimate is not None:
        kappa, source = report.kappa_estimate * estimate_slack, "estimate"
    else:
        raise ValueError("no condition number available in report")
    lemma = schwarz_bound(stats.k_c, stats.k_m, taus)
    out = BoundReport(kappa=kappa, kappa_source=source, lemma_bound=lemma,
                      lemma_violated=bool(kappa > lemma))
    if Ms is not None and dists is not None:
        terms = [2.0 * t + 4.0 * m * d * d
                 for t, m, d in zip(taus, Ms, dists)]
        out.theorem_bound = schwarz_bound(stats.k_c, stats.k_m, terms)
        out.theorem_violated = bool(kappa > out.theorem_bound)
    return out


# ---------------------------------------------------------------------------
# time-to-accuracy CSV
# ---------------------------------------------------------------------------

def write_time_to_accuracy_csv(path, report):
    """One row per iteration plus a setup-end marker row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["elapsed_seconds", "relative_residual", "phase"])
        first = report.residual_history[0] if report.residual_history else 1.0
        w.writerow([f"{report.setup_seconds:.9f}", f"{first:.12e}", "setup"])
        for res, t in zip(report.residual_history[1:],
                          report.iter_seconds[1:]):
            w.writerow([f"{report.setup_seconds + t:.9f}",
                        f"{res:.12e}", "solve"])


def read_time_to_accuracy_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({"elapsed_seconds": float(row["elapsed_seconds"]),
                         "relative_residual": float(row["relative_residual"]),
                         "phase": row["phase"]})
    return rows
