import numpy as np
import pytest

from schwarzlab import darcy
from schwarzlab.decomp import (adjacency_graph, grow_overlap, overlap_stats,
                               partition)
from schwarzlab.errors import IterationError
from schwarzlab.krylov import (SolveReport, bound_check, pcg, schwarz_bound,
                               read_time_to_accuracy_csv,
                               write_time_to_accuracy_csv)
from schwarzlab.lacore import SymSparseMatrix
from schwarzlab.localspectral import build_all_coarse_spaces
from schwarzlab.precond import assemble, dense_preconditioned_spectrum

from conftest import random_sparse_spd


def channel_setup(nx, k, delta, n_c, kappa_c, seed=0):
    grid = darcy.Grid((nx, nx))
    perm = darcy.gen_channels(grid, (8, 12), None, (3, 6), kappa_c, seed)
    sys_ = darcy.assemble_tpfa(grid, perm,
                               darcy.BoundaryConfig.preset("C1", 2))
    g = adjacency_graph(sys_.A)
    dec = grow_overlap(g, partition(g, k, seed, coords=grid.coords()), delta)
    blocks, spaces = build_all_coarse_spaces(sys_.A, dec, n_c=n_c)
    return sys_, dec, blocks, spaces


class TestPcg:
    def test_identity_single_iteration(self, rng):
        A = SymSparseMatrix.identity(20)
        b = rng.standard_normal(20)
        x, rep = pcg(A, None, b, tol=1e-12, max_iter=5)
        assert rep.converged and rep.iterations == 1
        assert np.allclose(x, b, atol=1e-12)

    def test_exact_preconditioner_single_iteration(self):
        n = 10
        A = SymSparseMatrix(n, np.arange(n), np.arange(n),
                            np.arange(1.0, n + 1.0))

        class ExactInverse:
            def apply(self, r):
                return r / np.arange(1.0, n + 1.0)

        b = np.ones(n)
        x, rep = pcg(A, ExactInverse(), b, tol=1e-12, max_iter=5)
        assert rep.converged and rep.iterations == 1
        assert np.allclose(x, 1.0 / np.arange(1.0, n + 1.0), atol=1e-12)

    def test_two_level_beats_one_level_at_contrast(self):
        sys_, dec, blocks, spaces = channel_setup(64, 16, 2, 8, 1e3, seed=1)
        M1 = assemble(sys_.A, dec, None, blocks_list=blocks)
        M2 = assemble(sys_.A, dec, spaces, blocks_list=blocks)
        _, rep1 = pcg(sys_.A, M1, sys_.b, tol=1e-8, max_iter=2000)
        _, rep2 = pcg(sys_.A, M2, sys_.b, tol=1e-8, max_iter=2000)
        assert rep1.converged and rep2.converged
        assert rep2.iterations < rep1.iterations

    def test_converged_residual_is_true_residual(self, rng):
        A = random_sparse_spd(rng, 80)
        b = rng.standard_normal(80)
        x, rep = pcg(A, None, b, tol=1e-9, max_iter=500)
        assert rep.converged
        assert np.linalg.norm(A.matvec(x) - b) <= 1e-9 * np.linalg.norm(b)
        assert rep.residual_history[-1] <= 1e-9

    def test_max_iter_returns_unconverged(self, rng):
        A = random_sparse_spd(rng, 60)
        b = rng.standard_normal(60)
        _, rep = pcg(A, None, b, tol=1e-14, max_iter=2)
        assert not rep.converged
        assert rep.iterations == 2

    def test_indefinite_matrix_reports_iterate(self):
        A = SymSparseMatrix(2, [0, 1], [0, 1], [1.0, -1.0])
        with pytest.raises(IterationError) as err:
            pcg(A, None, np.array([0.0, 1.0]), tol=1e-8, max_iter=10)
        assert err.value.iteration == 1

    def test_bitwise_reproducibility(self, rng):
        sys_, dec, blocks, spaces = channel_setup(16, 4, 1, 4, 1e3)
        M = assemble(sys_.A, dec, spaces, blocks_list=blocks)
        _, r1 = pcg(sys_.A, M, sys_.b, tol=1e-8, max_iter=200)
        _, r2 = pcg(sys_.A, M, sys_.b, tol=1e-8, max_iter=200)
        assert r1.residual_history == r2.residual_history

    def test_kappa_estimate_brackets_dense(self):
        sys_, dec, blocks, spaces = channel_setup(32, 4, 1, 4, 1e3, seed=2)
        M1 = assemble(sys_.A, dec, None, blocks_list=blocks)
        _, rep = pcg(sys_.A, M1, sys_.b, tol=1e-12, max_iter=500)
        _, kappa = dense_preconditioned_spectrum(sys_.A, M1)
        assert rep.kappa_estimate <= kappa * 1.1
        assert rep.kappa_estimate >= kappa * 0.5


class TestBoundCheck:
    def test_zero_distance_reduces_to_doubled_tau(self):
        st = overlap_stats(grow_overlap(
            adjacency_graph(SymSparseMatrix.identity(4)),
            [np.arange(4)], 0))
        rep = SolveReport(kappa_dense=3.0)
        taus = [0.7, 0.9]
        out = bound_check(rep, st, taus, Ms=[5.0, 5.0], dists=[0.0, 0.0])
        assert out.theorem_bound == pytest.approx(
            schwarz_bound(st.k_c, st.k_m, [2 * t for t in taus]))

    def test_single_subdomain_arithmetic(self):
        st = overlap_stats(grow_overlap(
            adjacency_graph(SymSparseMatrix.identity(3)),
            [np.arange(3)], 0))
        assert (st.k_c, st.k_m) == (1, 1)
        rep = SolveReport(kappa_dense=1.0)
        out = bound_check(rep, st, [0.5])
        assert out.lemma_bound == pytest.approx(2 * (2 + 3 * 0.5))
        assert not out.lemma_violated

    def test_rotated_basis_under_theorem_bound(self):
        # exercised at scale by the acceptance suite; small smoke here
        sys_, dec, blocks, spaces = channel_setup(16, 4, 1, 4, 1e3, seed=4)
        M2 = assemble(sys_.A, dec, spaces, blocks_list=blocks)
        _, kappa = dense_preconditioned_spectrum(sys_.A, M2)
        st = overlap_stats(dec)
        rep = SolveReport(kappa_dense=kappa)
        out = bound_check(rep, st, [s.tau for s in spaces],
                          Ms=[s.M for s in spaces], dists=[0.3] * dec.k)
        assert not out.theorem_violated

    def test_estimate_fallback_with_slack(self):
        st = overlap_stats(grow_overlap(
            adjacency_graph(SymSparseMatrix.identity(3)),
            [np.arange(3)], 0))
        rep = SolveReport(kappa_estimate=2.0)
        out = bound_check(rep, st, [1.0], estimate_slack=1.1)
        assert out.kappa == pytest.approx(2.2)
        assert out.kappa_source == "estimate"


class TestCsv:
    def test_round_trip_with_marker(self, tmp_path, rng):
        A = random_sparse_spd(rng, 40)
        b = rng.standard_normal(40)
        _, rep = pcg(A, None, b, tol=1e-8, max_iter=200)
        rep.setup_seconds = 0.25
        path = tmp_path / "tta.csv"
        write_time_to_accuracy_csv(path, rep)
        rows = read_time_to_accuracy_csv(path)
        assert rows[0]["phase"] == "setup"
        assert rows[0]["elapsed_seconds"] == pytest.approx(0.25)
        solves = [r for r in rows if r["phase"] == "solve"]
        assert len(solves) == rep.iterations
        assert solves[-1]["relative_residual"] == pytest.approx(
            rep.residual_history[-1])
        assert all(rows[i]["elapsed_seconds"] <= rows[i + 1]["elapsed_seconds"]
                   for i in range(len(rows) - 1))
