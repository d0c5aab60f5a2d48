import numpy as np
import pytest

from errors import ConfigError
from knn import build_index, query_knn, query_knn_many, resolve_structure


class TestQueries:
    def test_simple_line(self):
        index = build_index([[0.0], [1.0], [2.0], [3.0]], structure="brute")
        assert query_knn(index, [1.4], 2) == [1, 2]

    def test_ties_break_on_smaller_index(self):
        for structure in ("brute", "kdtree"):
            index = build_index([[0.0], [2.0]], structure=structure)
            assert query_knn(index, [1.0], 1) == [0]

    def test_original_indices_are_returned(self):
        index = build_index([[0.0], [5.0], [9.0]], original_indices=[30, 10, 20], structure="kdtree")
        assert query_knn(index, [8.0], 2) == [20, 10]

    def test_tree_matches_brute_on_grid_ties(self, grid_dataset):
        z = grid_dataset.z
        brute = build_index(z, structure="brute")
        tree = build_index(z, structure="kdtree")
        for k in range(1, 8):
            np.testing.assert_array_equal(query_knn_many(tree, z, k), query_knn_many(brute, z, k))

    def test_tree_matches_brute_on_random_points(self):
        rng = np.random.default_rng(1)
        points = rng.normal(size=(2000, 3))
        ids = rng.permutation(5000)[:2000]
        queries = rng.normal(size=(50, 3))
        brute = build_index(points, ids, structure="brute")
        tree = build_index(points, ids, structure="kdtree")
        assert tree.depth > 0
        np.testing.assert_array_equal(query_knn_many(tree, queries, 7), query_knn_many(brute, queries, 7))

    def test_thousand_random_cases_with_ties(self):
        rng = np.random.default_rng(11)
        for case in range(1000):
            n = int(rng.integers(1, 2001))
            d = int(rng.integers(1, 9))
            if case % 2:
                points = rng.integers(0, 3, size=(n, d)).astype(float)
                query = rng.integers(0, 3, size=d).astype(float)
            else:
                points = rng.normal(size=(n, d))
                query = rng.normal(size=d)
            ids = rng.permutation(4 * n)[:n]
            k = int(rng.integers(1, min(32, n) + 1))
            tree = build_index(points, ids, structure="kdtree")
            brute = build_index(points, ids, structure="brute")
            assert query_knn(tree, query, k) == query_knn(brute, query, k), f"case {case}"

    def test_results_sorted_by_distance(self):
        rng = np.random.default_rng(2)
        points = rng.uniform(size=(300, 2))
        index = build_index(points, structure="kdtree")
        q = np.array([0.5, 0.5])
        found = query_knn(index, q, 10)
        dists = np.sum((points[found] - q) ** 2, axis=1)
        assert np.all(np.diff(dists) >= 0)
        assert dists[-1] <= np.sort(np.sum((points - q) ** 2, axis=1))[9]


class TestValidation:
    def test_k_bounds(self):
        index = build_index([[0.0], [1.0]])
        with pytest.raises(ConfigError):
            query_knn(index, [0.0], 0)
        with pytest.raises(ConfigError):
            query_knn(index, [0.0], 3)

    def test_dimension_mismatch(self):
        index = build_index([[0.0, 1.0], [1.0, 1.0]])
        with pytest.raises(ConfigError):
            query_knn_many(index, np.zeros((1, 3)), 1)

    def test_bad_point_sets(self):
        with pytest.raises(ConfigError):
            build_index([[0.0, 1.0], [1.0]])
        with pytest.raises(ConfigError):
            build_index([])
        with pytest.raises(ConfigError):
            build_index([[0.0], [1.0]], original_indices=[4, 4])

    def test_auto_structure(self):
        assert resolve_structure("auto", 1000, 3) == "kdtree"
        assert resolve_structure("auto", 1000, 20) == "brute"
        assert resolve_structure("auto", 4, 3) == "brute"
        with pytest.raises(ConfigError):
            resolve_structure("balltree", 10, 1)
