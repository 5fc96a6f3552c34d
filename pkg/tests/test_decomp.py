import numpy as np
import pytest

from schwarzlab import darcy
from schwarzlab.decomp import (adjacency_graph, decomposition_manifest,
                               grow_overlap, overlap_stats, partition,
                               partition_from_vector, read_partition_vector,
                               write_partition_vector)
from schwarzlab.errors import ConfigError
from schwarzlab.lacore import SymSparseMatrix

from conftest import laplacian_1d


def grid_graph(nx, ny):
    grid = darcy.Grid((nx, ny))
    sys_ = darcy.assemble_tpfa(grid, darcy.constant_field(grid),
                               darcy.BoundaryConfig.preset("C1", 2))
    return adjacency_graph(sys_.A), grid


class TestAdjacency:
    def test_diagonal_is_edgeless(self):
        g = adjacency_graph(SymSparseMatrix.identity(5))
        assert g.n_edges == 0

    def test_tridiagonal_is_path(self):
        g = adjacency_graph(laplacian_1d(5))
        assert g.n_edges == 4
        degs = np.diff(g.csr.indptr)
        assert sorted(degs.tolist()) == [1, 1, 2, 2, 2]

    def test_five_point_grid_edge_count(self):
        g, _ = grid_graph(4, 4)
        assert g.n_edges == 2 * 4 * 4 - 4 - 4


class TestPartition:
    def test_single_part(self):
        g = adjacency_graph(laplacian_1d(7))
        parts = partition(g, 1, seed=0)
        assert np.array_equal(parts[0], np.arange(7))

    def test_path_bisection_is_prefix_split(self):
        g = adjacency_graph(laplacian_1d(6))
        parts = partition(g, 2, seed=0)
        sets = sorted([tuple(p.tolist()) for p in parts])
        assert sets == [(0, 1, 2), (3, 4, 5)]

    def test_grid_graph_balance(self):
        g, _ = grid_graph(8, 8)
        parts = partition(g, 4, seed=0)
        sizes = [p.size for p in parts]
        assert all(12 <= s <= 20 for s in sizes)
        assert sum(sizes) == 64

    def test_rcb_with_coords(self):
        g, grid = grid_graph(8, 8)
        parts = partition(g, 4, seed=0, coords=grid.coords())
        sizes = [p.size for p in parts]
        assert sizes == [16, 16, 16, 16]

    def test_k_too_large(self):
        g = adjacency_graph(laplacian_1d(3))
        with pytest.raises(ConfigError):
            partition(g, 4, seed=0)

    def test_determinism(self):
        g, _ = grid_graph(6, 6)
        a = partition(g, 3, seed=5)
        b = partition(g, 3, seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_vector_round_trip(self, tmp_path):
        g, _ = grid_graph(4, 4)
        parts = partition(g, 3, seed=1)
        path = tmp_path / "parts.txt"
        write_partition_vector(path, parts, g.n)
        back = read_partition_vector(path)
        assert all(np.array_equal(x, y) for x, y in zip(parts, back))

    def test_vector_validation(self):
        with pytest.raises(ConfigError):
            partition_from_vector(np.array([0, 2, 2]))  # part 1 empty


class TestGrowOverlap:
    def test_delta_zero(self):
        g = adjacency_graph(laplacian_1d(6))
        parts = [np.array([0, 1, 2]), np.array([3, 4, 5])]
        dec = grow_overlap(g, parts, 0)
        assert all(h.size == 0 for h in dec.halo_sets)
        assert np.all(dec.multiplicity == 1)
        assert all(np.all(w == 1.0) for w in dec.pou_weights)

    def test_path_delta_one_by_hand(self):
        g = adjacency_graph(laplacian_1d(6))
        parts = [np.array([0, 1, 2]), np.array([3, 4, 5])]
        dec = grow_overlap(g, parts, 1)
        assert dec.overlapping_sets[0].tolist() == [0, 1, 2, 3]
        assert dec.overlapping_sets[1].tolist() == [2, 3, 4, 5]
        assert dec.multiplicity[2] == 2 and dec.multiplicity[3] == 2
        assert dec.multiplicity[0] == 1 and dec.multiplicity[5] == 1

    def test_partition_of_unity_exact(self):
        g, grid = grid_graph(16, 16)
        parts = partition(g, 4, seed=2, coords=grid.coords())
        dec = grow_overlap(g, parts, 2)
        acc = np.zeros(g.n)
        for i in range(dec.k):
            acc[dec.overlapping_sets[i]] += dec.pou_weights[i]
        assert np.all(acc == 1.0)
        assert all(np.all(w > 0) for w in dec.pou_weights)

    def test_monotone_in_delta(self):
        g, grid = grid_graph(12, 12)
        parts = partition(g, 4, seed=3, coords=grid.coords())
        prev = grow_overlap(g, parts, 1)
        for delta in (2, 3):
            cur = grow_overlap(g, parts, delta)
            for a, b in zip(prev.overlapping_sets, cur.overlapping_sets):
                assert np.isin(a, b).all()
            prev = cur

    def test_halo_distance_bound(self):
        g, grid = grid_graph(10, 10)
        parts = partition(g, 4, seed=4, coords=grid.coords())
        dec = grow_overlap(g, parts, 2)
        for s, h in zip(dec.interior_sets, dec.halo_sets):
            if h.size == 0:
                continue
            dist = g.bfs_distances(s)
            assert dist[h].min() >= 1 and dist[h].max() <= 2

    def test_determinism_bytes(self):
        g, grid = grid_graph(10, 10)
        runs = []
        for _ in range(2):
            parts = partition(g, 4, seed=6, coords=grid.coords())
            dec = grow_overlap(g, parts, 2)
            runs.append(b"".join(s.tobytes() for s in dec.overlapping_sets)
                        + b"".join(w.tobytes() for w in dec.pou_weights))
        assert runs[0] == runs[1]


class TestStats:
    def test_single_subdomain(self):
        g = adjacency_graph(laplacian_1d(5))
        dec = grow_overlap(g, [np.arange(5)], 1)
        st = overlap_stats(dec)
        assert st.k_c == 1 and st.k_m == 1

    def test_two_overlapping(self):
        g = adjacency_graph(laplacian_1d(6))
        dec = grow_overlap(g, [np.array([0, 1, 2]), np.array([3, 4, 5])], 1)
        st = overlap_stats(dec)
        assert st.k_c == 2 and st.k_m == 2

    def test_cross_point_multiplicity(self):
        # 4x4 tiling of a 16x16 grid graph; enumerating corner memberships:
        # the diagonal tile sits at graph distance 2 on a 5-point grid, so
        # cross points reach multiplicity 3 at delta=1 and 4 at delta=2
        g, grid = grid_graph(16, 16)
        parts = partition(g, 16, seed=0, coords=grid.coords())
        assert overlap_stats(grow_overlap(g, parts, 1)).k_m == 3
        assert overlap_stats(grow_overlap(g, parts, 2)).k_m == 4

    def test_manifest(self):
        g, grid = grid_graph(8, 8)
        parts = partition(g, 4, seed=0, coords=grid.coords())
        dec = grow_overlap(g, parts, 1)
        man = decomposition_manifest(dec, seed=0)
        assert man["k"] == 4 and man["n"] == 64
        assert len(man["interior_sizes"]) == 4
        assert man["k_m"] >= 2 and man["k_c"] >= 2
