"""Embedding-space partition maps: median kd-trees and seeded k-means.

A partitioner maps an embedding to a partition index in [0, n_partitions) or
to OUT_OF_BOUNDS (-1). The kd-tree splits the build set recursively to an
exact depth d: at each node the pivot is the lower median of the node
subset's pivot coordinate, points with coordinate <= pivot go left, and
leaves are indexed in level order (2^d leaves, leaf size within one point of
uniform). The pivot coordinate cycles through dimensions with tree level by
default; "max_variance" picks the node subset's highest-variance coordinate.

At assignment time every node on the descent path also checks the query's
pivot coordinate against that coordinate's (min, max) over the full build
set; a query outside any such interval is OUT_OF_BOUNDS. Build points are
never out of bounds. k-means assigns by nearest centroid (ties to the lowest
index) and never reports OUT_OF_BOUNDS.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

OUT_OF_BOUNDS = -1

DIM_ORDER_CYCLE = "cycle"
DIM_ORDER_MAX_VARIANCE = "max_variance"


def _canonical_id(obj: dict) -> str:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class _Node:
    coord: int
    pivot: float
    lo: float  # global min of `coord` over the build set
    hi: float  # global max of `coord` over the build set


class KdTreePartitioner:
    """Depth-d median kd-tree with level-order leaf indexing."""

    format = "kdtree.v1"

    def __init__(self, depth: int, dim: int, dim_order: str, nodes: list[_Node]):
        if depth < 0:
            raise ValueError(f"depth must be >= 0, got {depth}")
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        if dim_order not in (DIM_ORDER_CYCLE, DIM_ORDER_MAX_VARIANCE):
            raise ValueError(f"unknown dim_order {dim_order!r}")
        if len(nodes) != 2**depth - 1:
            raise ValueError(f"depth {depth} needs {2**depth - 1} nodes, got {len(nodes)}")
        self.depth = depth
        self.dim = dim
        self.dim_order = dim_order
        self.nodes = list(nodes)
        self._coords = np.array([nd.coord for nd in nodes], dtype=np.int64)
        self._pivots = np.array([nd.pivot for nd in nodes], dtype=float)
        self._los = np.array([nd.lo for nd in nodes], dtype=float)
        self._his = np.array([nd.hi for nd in nodes], dtype=float)

    @property
    def n_partitions(self) -> int:
        return 2**self.depth

    def assign(self, embedding) -> int:
        return int(self.assign_many(np.asarray(embedding, dtype=float)[None, :])[0])

    def assign_many(self, embeddings: np.ndarray) -> np.ndarray:
        x = np.asarray(embeddings, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"embeddings must have shape (n, {self.dim}), got {x.shape}")
        n = x.shape[0]
        node = np.zeros(n, dtype=np.int64)
        oob = np.zeros(n, dtype=bool)
        n_internal = len(self.nodes)
        for _ in range(self.depth):
            vals = x[np.arange(n), self._coords[node]]
            oob |= (vals < self._los[node]) | (vals > self._his[node])
            node = np.where(vals <= self._pivots[node], 2 * node + 1, 2 * node + 2)
        leaf = node - n_internal
        leaf[oob] = OUT_OF_BOUNDS
        return leaf

    def to_dict(self) -> dict:
        return {
            "format": self.format,
            "depth": self.depth,
            "dim": self.dim,
            "dim_order": self.dim_order,
            "nodes": [
                {"coord": nd.coord, "pivot": nd.pivot, "lo": nd.lo, "hi": nd.hi}
                for nd in self.nodes
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "KdTreePartitioner":
        if obj.get("format") != cls.format:
            raise ValueError(f"expected format {cls.format!r}, got {obj.get('format')!r}")
        nodes = [
            _Node(coord=int(n["coord"]), pivot=float(n["pivot"]), lo=float(n["lo"]), hi=float(n["hi"]))
            for n in obj["nodes"]
        ]
        return cls(
            depth=int(obj["depth"]),
            dim=int(obj["dim"]),
            dim_order=obj.get("dim_order", DIM_ORDER_CYCLE),
            nodes=nodes,
        )

    @property
    def partitioner_id(self) -> str:
        return _canonical_id(self.to_dict())


def build_kdtree(
    embeddings: np.ndarray, depth: int, dim_order: str = DIM_ORDER_CYCLE
) -> KdTreePartitioner:
    """Build a depth-d median tree on the given embeddings."""
    x = np.asarray(embeddings, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"embeddings must be 2-d, got shape {x.shape}")
    n, dim = x.shape
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    if n < 2**depth:
        raise ValueError(f"need at least {2**depth} points for depth {depth}, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("embeddings must be finite")

    col_lo = x.min(axis=0)
    col_hi = x.max(axis=0)
    n_internal = 2**depth - 1
    nodes: list[_Node | None] = [None] * n_internal

    def split(node_key: int, level: int, idx: np.ndarray) -> None:
        if level == depth:
            return
        if x[idx].shape[0] == 0:
            raise ValueError("empty node encountered; depth too large for the data")
        if dim_order == DIM_ORDER_CYCLE:
            coord = level % dim
        else:
            coord = int(np.argmax(np.var(x[idx], axis=0)))
        vals = x[idx, coord]
        order = np.argsort(vals, kind="stable")
        m = (len(idx) + 1) // 2 - 1  # lower median, 0-indexed
        pivot = float(vals[order[m]])
        left = idx[vals <= pivot]
        right = idx[vals > pivot]
        nodes[node_key] = _Node(
            coord=coord, pivot=pivot, lo=float(col_lo[coord]), hi=float(col_hi[coord])
        )
        split(2 * node_key + 1, level + 1, left)
        split(2 * node_key + 2, level + 1, right)

    split(0, 0, np.arange(n))
    return KdTreePartitioner(depth=depth, dim=dim, dim_order=dim_order, nodes=nodes)


def _nearest_centroid(x: np.ndarray, centroids: np.ndarray, chunk: int = 2048) -> np.ndarray:
    # Exact squared distances (no expansion tricks) so symmetric ties resolve
    # to the lowest centroid index; chunked to bound the broadcast size.
    out = np.empty(x.shape[0], dtype=np.int64)
    for start in range(0, x.shape[0], chunk):
        block = x[start : start + chunk]
        d2 = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        out[start : start + chunk] = np.argmin(d2, axis=1)
    return out


class KMeansPartitioner:
    """Fixed centroids; assignment is nearest centroid, ties to lowest index."""

    format = "kmeans.v1"

    def __init__(self, centroids: np.ndarray):
        c = np.asarray(centroids, dtype=float)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError(f"centroids must have shape (k, dim), got {c.shape}")
        self.centroids = c

    @property
    def n_partitions(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def assign(self, embedding) -> int:
        return int(self.assign_many(np.asarray(embedding, dtype=float)[None, :])[0])

    def assign_many(self, embeddings: np.ndarray) -> np.ndarray:
        x = np.asarray(embeddings, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"embeddings must have shape (n, {self.dim}), got {x.shape}")
        return _nearest_centroid(x, self.centroids)

    def to_dict(self) -> dict:
        return {"format": self.format, "centroids": self.centroids.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "KMeansPartitioner":
        if obj.get("format") != cls.format:
            raise ValueError(f"expected format {cls.format!r}, got {obj.get('format')!r}")
        return cls(np.asarray(obj["centroids"], dtype=float))

    @property
    def partitioner_id(self) -> str:
        return _canonical_id(self.to_dict())


def build_kmeans(
    embeddings: np.ndarray, k: int, seed: int = 0, n_iter_max: int = 100
) -> KMeansPartitioner:
    """Seeded k-means++ initialization followed by Lloyd iterations until the
    assignment is a fixpoint or n_iter_max is reached."""
    x = np.asarray(embeddings, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"embeddings must be 2-d, got shape {x.shape}")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, x.shape[1]), dtype=float)
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = x[rng.integers(n)]
        else:
            centroids[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))

    assign = None
    for _ in range(n_iter_max):
        new_assign = _nearest_centroid(x, centroids)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = x[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    return KMeansPartitioner(centroids)


def load_partitioner_dict(obj: dict):
    fmt = obj.get("format")
    if fmt == KdTreePartitioner.format:
        return KdTreePartitioner.from_dict(obj)
    if fmt == KMeansPartitioner.format:
        return KMeansPartitioner.from_dict(obj)
    raise ValueError(f"unknown partitioner format {fmt!r}")


def save_partitioner(part, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(part.to_dict(), f)
        f.write("\n")


def load_partitioner(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return load_partitioner_dict(json.load(f))
