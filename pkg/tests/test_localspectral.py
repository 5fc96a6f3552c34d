import numpy as np
import pytest

from schwarzlab import darcy
from schwarzlab.decomp import adjacency_graph, grow_overlap, partition
from schwarzlab.errors import DimensionMismatchError
from schwarzlab.lacore import SymSparseMatrix
from schwarzlab.localspectral import (LocalBlocks, build_local_blocks,
                                      kernel_bases, solve_local_spectral,
                                      verify_stable_decomposition)

from conftest import laplacian_1d, random_spsd_dense
from oracles import deflated_pencil_eig


def make_blocks(a_local_dense, a_tilde_dense, d=None):
    a_local = SymSparseMatrix.from_dense(a_local_dense)
    n = a_local.n
    return LocalBlocks(
        a_local=a_local,
        a_tilde=SymSparseMatrix.from_dense(a_tilde_dense),
        s=np.zeros(n),
        d_weights=np.ones(n) if d is None else np.asarray(d, float),
        halo_mask=np.zeros(n, dtype=bool),
        global_indices=np.arange(n))


def tpfa_decomposition(nx, k, delta, seed=0, bc="C1"):
    grid = darcy.Grid((nx, nx))
    sys_ = darcy.assemble_tpfa(grid, darcy.constant_field(grid),
                               darcy.BoundaryConfig.preset(bc, 2))
    g = adjacency_graph(sys_.A)
    dec = grow_overlap(g, partition(g, k, seed, coords=grid.coords()), delta)
    return sys_, dec


class TestBuildLocalBlocks:
    def test_whole_domain_no_correction(self):
        A = laplacian_1d(6)
        g = adjacency_graph(A)
        dec = grow_overlap(g, [np.arange(6)], 1)
        blocks = build_local_blocks(A, dec, 0)
        assert np.all(blocks.s == 0.0)
        assert np.array_equal(blocks.a_tilde.to_dense(), A.to_dense())

    def test_chain_hand_computation(self):
        # [2,-1] chain on 5 vertices, subdomain {0,1,2} with halo {2}
        A = laplacian_1d(5)
        g = adjacency_graph(A)
        dec = grow_overlap(g, [np.array([0, 1]), np.array([2, 3, 4])], 1)
        blocks = build_local_blocks(A, dec, 0)
        assert blocks.global_indices.tolist() == [0, 1, 2]
        assert blocks.s.tolist() == [0.0, 0.0, 1.0]
        assert blocks.a_tilde.to_dense()[2, 2] == 1.0
        assert blocks.a_local.to_dense()[2, 2] == 2.0

    def test_interior_subdomain_ones_in_kernel(self):
        sys_, dec = tpfa_decomposition(8, 9, 1)
        # Dirichlet cells sit in rows j=0 and j=7; a subdomain whose overlap
        # avoids them has a pure-Neumann corrected block
        rows = np.arange(64) // 8
        found = False
        for i in range(dec.k):
            jr = rows[dec.overlapping_sets[i]]
            if jr.min() >= 1 and jr.max() <= 6:
                blocks = build_local_blocks(sys_.A, dec, i)
                r = blocks.a_tilde.matvec(np.ones(blocks.n))
                assert np.abs(r).max() <= 1e-12 * blocks.a_tilde.norm_max()
                found = True
        assert found, "no interior subdomain in this tiling"

    def test_a_tilde_positive_semidefinite(self):
        sys_, dec = tpfa_decomposition(12, 4, 2)
        for i in range(dec.k):
            blocks = build_local_blocks(sys_.A, dec, i)
            w = np.linalg.eigvalsh(blocks.a_tilde.to_dense())
            assert w.min() >= -1e-10 * blocks.a_tilde.norm_max()

    def test_correction_matches_exterior_couplings(self):
        sys_, dec = tpfa_decomposition(10, 4, 1)
        A = sys_.A.to_dense()
        for i in range(dec.k):
            blocks = build_local_blocks(sys_.A, dec, i)
            ov = dec.overlapping_sets[i]
            outside = np.setdiff1d(np.arange(sys_.A.n), ov)
            expected = np.abs(A[np.ix_(ov, outside)]).sum(axis=1)
            expected[~dec.halo_masks[i]] = 0.0
            assert np.allclose(blocks.s, expected, atol=1e-14)


class TestKernelBases:
    def test_spd_block_empty_kernel(self, rng):
        B = random_spsd_dense(rng, 12, kernel_dim=0)
        blocks = make_blocks(B, B)
        K, Q = kernel_bases(blocks)
        assert K.shape[1] == 0
        assert Q.shape == (12, 12)

    def test_neumann_kernel_with_energy(self):
        # interior chain: corrected block annihilates ones, the weighted
        # energy does not, so the kernel contributes one coarse vector
        A = laplacian_1d(5, dirichlet_ends=False)
        g = adjacency_graph(A)
        dec = grow_overlap(g, [np.array([0, 1, 2]), np.array([3, 4])], 1)
        blocks = build_local_blocks(A, dec, 1)  # vertices {2,3,4}, halo {2}
        K, Q = kernel_bases(blocks)
        assert K.shape[1] == 1
        v = K[:, 0]
        assert np.abs(np.abs(v) - 1.0 / np.sqrt(3)).max() <= 1e-10
        assert Q.shape[1] == 2

    def test_two_disconnected_components_kernel_dim(self):
        # block-diagonal corrected operator with two zero-row-sum blocks
        n = 8
        half = laplacian_1d(4, dirichlet_ends=False).to_dense()
        B = np.zeros((n, n))
        B[:4, :4] = half
        B[4:, 4:] = half
        blocks = make_blocks(B + np.eye(n), B)  # a_local SPD, a_tilde singular
        K, Q = kernel_bases(blocks)
        assert Q.shape[1] == n - 2  # kernel dimension 2 by component count
        assert K.shape[1] == 2      # both indicators carry weighted energy


class TestSolveLocalSpectral:
    def test_identical_pencil_all_ones(self, rng):
        B = random_spsd_dense(rng, 10, kernel_dim=0)
        blocks = make_blocks(B, B)
        space = solve_local_spectral(blocks, n_c=3)
        assert np.abs(space.eigenvalues - 1.0).max() <= 1e-8
        assert space.kernel_dim == 0
        G = space.spectral_part.T @ B @ space.spectral_part
        assert np.abs(G - np.eye(3)).max() <= 1e-8

    def test_diagonal_pencil(self):
        blocks = make_blocks(np.diag([4.0, 1.0]), np.eye(2))
        space = solve_local_spectral(blocks, n_c=1)
        assert np.allclose(space.eigenvalues, [4.0, 1.0], atol=1e-12)
        v = space.spectral_part[:, 0]
        assert abs(abs(v[0]) - 1.0) <= 1e-10 and abs(v[1]) <= 1e-10
        assert space.tau == pytest.approx(4.0)
        assert space.M == pytest.approx(4.0)

    def test_random_spsd_vs_deflation_oracle(self, rng):
        n = 60
        At = random_spsd_dense(rng, n, kernel_dim=3)
        Bw = random_spsd_dense(rng, n, kernel_dim=0, cond=1e3)
        blocks = make_blocks(Bw, At)
        space = solve_local_spectral(blocks, n_c=5)
        ref = deflated_pencil_eig(Bw, At)
        assert space.eigenvalues.size == ref.size
        scale = max(1.0, np.abs(ref).max())
        assert np.abs(space.eigenvalues - ref).max() <= 1e-7 * scale

    def test_n_c_exceeding_image_dimension(self, rng):
        At = random_spsd_dense(rng, 8, kernel_dim=2)
        blocks = make_blocks(random_spsd_dense(rng, 8), At)
        with pytest.raises(DimensionMismatchError) as err:
            solve_local_spectral(blocks, n_c=7)
        assert "image dimension 6" in str(err.value)

    def test_adaptive_threshold_selection(self):
        blocks = make_blocks(np.diag([8.0, 3.0, 1.0, 0.5]), np.eye(4))
        space = solve_local_spectral(blocks, tau=2.0)
        assert space.n_c == 2
        assert space.tau == pytest.approx(3.0)
        both = solve_local_spectral(blocks, n_c=1, tau=2.0)
        assert both.n_c == 1  # top-n_c among eigenvalues above the threshold

    def test_interlacing_tau_monotone(self, rng):
        At = random_spsd_dense(rng, 20, kernel_dim=1)
        Bw = random_spsd_dense(rng, 20, cond=1e4)
        blocks = make_blocks(Bw, At)
        taus = [solve_local_spectral(blocks, n_c=m).tau for m in (2, 4, 6)]
        assert taus[0] >= taus[1] >= taus[2]

    def test_m_at_least_tau(self, rng):
        for trial in range(5):
            At = random_spsd_dense(rng, 15, kernel_dim=trial % 3)
            Bw = random_spsd_dense(rng, 15, cond=100.0)
            space = solve_local_spectral(make_blocks(Bw, At), n_c=4)
            assert space.M >= space.tau

    def test_pencil_residual_of_lifted_vectors(self, rng):
        At = random_spsd_dense(rng, 30, kernel_dim=2)
        Bw = random_spsd_dense(rng, 30, cond=1e3)
        blocks = make_blocks(Bw, At)
        space = solve_local_spectral(blocks, n_c=5)
        w, U = np.linalg.eigh(At)
        Q = U[:, w > 1e-10 * w.max()]
        P = Q @ Q.T
        PB = P @ Bw @ P
        scale = np.linalg.norm(PB, 2)
        for lam, z in zip(space.eigenvalues[:5], space.spectral_part.T):
            res = np.linalg.norm(PB @ z - lam * (At @ z))
            assert res <= 1e-7 * scale * np.linalg.norm(z)


class TestVerify:
    def _tpfa_case(self, n_c=4):
        sys_, dec = tpfa_decomposition(8, 2, 2)
        blocks = build_local_blocks(sys_.A, dec, 0)
        space = solve_local_spectral(blocks, n_c=n_c)
        return blocks, space

    def test_coarse_vectors_have_zero_remainder(self, rng):
        blocks, space = self._tpfa_case()
        At = blocks.a_tilde.to_csr()
        Zs = space.spectral_part
        d = blocks.d_weights
        B = (blocks.a_local.to_dense() * d[None, :]) * d[:, None]
        for j in range(Zs.shape[1]):
            u = Zs[:, j]
            e = u - Zs @ (Zs.T @ (At @ u))
            assert float(e @ (B @ e)) <= 1e-10 * space.M

    def test_next_eigenvector_ratio_is_its_eigenvalue(self):
        blocks, space = self._tpfa_case(n_c=3)
        full = solve_local_spectral(blocks, n_c=4)
        u = full.spectral_part[:, 3]            # (n_c+1)-th eigenvector
        lam = full.eigenvalues[3]
        At = blocks.a_tilde.to_csr()
        Zs = space.spectral_part
        d = blocks.d_weights
        B = (blocks.a_local.to_dense() * d[None, :]) * d[:, None]
        e = u - Zs @ (Zs.T @ (At @ u))
        ratio = float(e @ (B @ e)) / float(u @ (At @ u))
        assert ratio == pytest.approx(lam, rel=1e-8)
        assert ratio <= space.tau * (1 + 1e-8)

    def test_randomized_inequality_64_vertices(self):
        sys_, dec = tpfa_decomposition(16, 4, 1)
        blocks = build_local_blocks(sys_.A, dec, 0)
        space = solve_local_spectral(blocks, n_c=6)
        report = verify_stable_decomposition(blocks, space, trials=1000,
                                             seed=3)
        assert report["ok"]
        assert report["max_ratio"] <= space.tau * (1 + 1e-8)

    def test_equivalence_of_full_and_image_forms(self, rng):
        worst = 0.0
        for trial in range(20):
            n = int(rng.integers(12, 30))
            kdim = int(rng.integers(0, 3))
            At = random_spsd_dense(rng, n, kernel_dim=kdim)
            Bw = random_spsd_dense(rng, n, cond=1e3)
            blocks = make_blocks(Bw, At, d=rng.uniform(0.5, 1.0, n))
            space = solve_local_spectral(blocks, n_c=3)
            rep = verify_stable_decomposition(blocks, space, trials=50,
                                              seed=trial)
            worst = max(worst, rep["max_disagreement"])
        assert worst <= 1e-6
