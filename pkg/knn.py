"""
Exact k-nearest-neighbour search over Z coordinates.

Answers are ordered by (squared Euclidean distance, original index), so the
brute-force scan and the k-d tree return identical lists, ties included.
"""
import heapq
import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from errors import ConfigError

logger = logging.getLogger(__name__)

LEAF_SIZE = 16
STRUCTURES = ("brute", "kdtree", "auto")

# Upper bound on the (queries x points) distance block held in memory by the brute scan
_BRUTE_BLOCK = 2_000_000


def _squared_distances(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Coordinate-by-coordinate accumulation; both structures share it so distances match bit for bit."""
    acc = np.zeros(np.broadcast_shapes(points.shape[:-1], query.shape[:-1]))
    for j in range(points.shape[-1]):
        diff = points[..., j] - query[..., j]
        acc += diff * diff
    return acc


def _as_points(points) -> np.ndarray:
    if isinstance(points, (list, tuple)):
        if len(points) == 0:
            raise ConfigError("Cannot index an empty point set")
        widths = {len(np.atleast_1d(p)) for p in points}
        if len(widths) != 1:
            raise ConfigError(f"Ragged point dimensions: {sorted(widths)}")
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ConfigError(f"Expected a non-empty (n, d) point array, got shape {arr.shape}")
    return arr


def resolve_structure(structure: str, n: int, d: int) -> str:
    if structure not in STRUCTURES:
        raise ConfigError(f"Unknown index structure '{structure}' (expected one of {STRUCTURES})")
    if structure != "auto":
        return structure
    # k-d trees only pay off in low dimension relative to log n
    return "kdtree" if 0 < d <= 8 and d < math.log2(max(n, 2)) else "brute"


class NeighborIndex:
    def __init__(self, points, original_indices, structure: str):
        self.points = points
        self.original_indices = original_indices
        self.structure = structure
        self.depth = 0
        if structure == "kdtree":
            self._build_tree()

    def __len__(self):
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    # -----------------------
    # k-d tree
    # -----------------------

    def _build_tree(self):
        order = np.arange(len(self.points))
        self._node_start: List[int] = []
        self._node_end: List[int] = []
        self._node_dim: List[int] = []
        self._node_split: List[float] = []
        self._node_children: List[tuple] = []
        self._build_node(order, 0, len(order), 0)
        # Leaves become contiguous slices of the reordered arrays
        self._tree_points = self.points[order]
        self._tree_ids = self.original_indices[order]

    def _build_node(self, order, start, end, level):
        node = len(self._node_start)
        self._node_start.append(start)
        self._node_end.append(end)
        self._node_dim.append(-1)
        self._node_split.append(0.0)
        self._node_children.append((-1, -1))
        self.depth = max(self.depth, level)

        size = end - start
        if size <= LEAF_SIZE:
            return node

        segment = self.points[order[start:end]]
        spread = segment.max(axis=0) - segment.min(axis=0)
        dim = int(np.argmax(spread))
        if spread[dim] == 0:
            return node  # all points identical, keep as one leaf

        mid = size // 2
        part = np.argpartition(segment[:, dim], mid)
        order[start:end] = order[start:end][part]
        split = float(self.points[order[start + mid], dim])

        self._node_dim[node] = dim
        self._node_split[node] = split
        left = self._build_node(order, start, start + mid, level + 1)
        right = self._build_node(order, start + mid, end, level + 1)
        self._node_children[node] = (left, right)
        return node

    def _tree_query(self, query: np.ndarray, k: int) -> List[int]:
        # Max-heap on (distance, index): heap[0] is the current worst candidate
        heap: list = []
        self._visit(0, query, k, heap)
        best = sorted((-nd, -ni) for nd, ni in heap)
        return [int(i) for _, i in best]

    def _visit(self, node, query, k, heap):
        left, right = self._node_children[node]
        if left < 0:
            start, end = self._node_start[node], self._node_end[node]
            dists = _squared_distances(self._tree_points[start:end], query)
            for dist, idx in zip(dists.tolist(), self._tree_ids[start:end].tolist()):
                item = (-dist, -idx)
                if len(heap) < k:
                    heapq.heappush(heap, item)
                elif (dist, idx) < (-heap[0][0], -heap[0][1]):
                    heapq.heapreplace(heap, item)
            return

        dim, split = self._node_dim[node], self._node_split[node]
        offset = query[dim] - split
        near, far = (left, right) if offset < 0 else (right, left)
        self._visit(near, query, k, heap)
        # Equal bound must still be explored: a tie there may carry a smaller index
        if len(heap) < k or offset * offset <= -heap[0][0]:
            self._visit(far, query, k, heap)

    # -----------------------
    # Brute force
    # -----------------------

    def _brute_query_many(self, queries: np.ndarray, k: int) -> np.ndarray:
        n = len(self.points)
        out = np.empty((len(queries), k), dtype=np.int64)
        chunk = max(1, _BRUTE_BLOCK // n)
        for start in range(0, len(queries), chunk):
            block = queries[start:start + chunk]
            dists = _squared_distances(self.points[None, :, :], block[:, None, :])
            kth = np.partition(dists, k - 1, axis=1)[:, k - 1]
            for row in range(len(block)):
                cand = np.flatnonzero(dists[row] <= kth[row])
                ids = self.original_indices[cand]
                ranked = np.lexsort((ids, dists[row, cand]))[:k]
                out[start + row] = ids[ranked]
        return out


def build_index(points, original_indices: Optional[Sequence[int]] = None,
                structure: str = "kdtree") -> NeighborIndex:
    points = _as_points(points)
    if original_indices is None:
        original_indices = np.arange(len(points))
    original_indices = np.asarray(original_indices, dtype=np.int64)
    if original_indices.shape != (len(points),):
        raise ConfigError("original_indices must give one index per point")
    if len(np.unique(original_indices)) != len(original_indices):
        raise ConfigError("original_indices must be distinct")

    structure = resolve_structure(structure, len(points), points.shape[1])
    if points.shape[1] == 0:
        structure = "brute"
    return NeighborIndex(points, original_indices, structure)


def _check_k(index: NeighborIndex, k: int):
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > len(index):
        raise ConfigError(f"k={k} exceeds the number of indexed points ({len(index)})")


def query_knn(index: NeighborIndex, query, k: int) -> List[int]:
    """Original indices of the k nearest points, sorted by (distance, index)."""
    return query_knn_many(index, np.atleast_2d(np.asarray(query, dtype=np.float64)), k)[0].tolist()


def query_knn_many(index: NeighborIndex, queries, k: int) -> np.ndarray:
    _check_k(index, k)
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim == 1:
        queries = queries.reshape(-1, index.dim) if index.dim else queries.reshape(-1, 0)
    if queries.shape[1] != index.dim:
        raise ConfigError(f"Query dimension {queries.shape[1]} does not match index dimension {index.dim}")

    if index.structure == "brute":
        return index._brute_query_many(queries, k)
    return np.array([index._tree_query(q, k) for q in queries], dtype=np.int64).reshape(len(queries), k)
