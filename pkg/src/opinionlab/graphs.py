"""Bounded-degree undirected graphs with metric queries.

Graphs are immutable after construction: node ids are dense integers
0..n-1, adjacency is stored in CSR form (indptr/indices) plus a
canonical once-per-edge list.  All distance machinery (balls, edge
distances, eccentricities) runs on unweighted BFS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra


class GraphError(ValueError):
    """Invalid graph specification or construction failure."""


@dataclass(frozen=True)
class GraphSpec:
    """Parameters for one of the built-in graph generators.

    kind: one of path, cycle, grid, torus, regular_tree, random_regular.
    Unused fields stay None; validate() reports what is missing.
    """

    kind: str
    n: int | None = None
    w: int | None = None
    h: int | None = None
    branching: int | None = None
    depth: int | None = None
    degree: int | None = None
    seed: int | None = None

    def validate(self) -> list[str]:
        problems = []
        k = self.kind
        if k == "path":
            if not self.n or self.n < 2:
                problems.append("path requires n >= 2")
        elif k == "cycle":
            if not self.n or self.n < 3:
                problems.append("cycle requires n >= 3")
        elif k == "grid":
            if not self.w or not self.h or self.w * self.h < 2:
                problems.append("grid requires w, h with w*h >= 2")
        elif k == "torus":
            if not self.w or not self.h or self.w < 3 or self.h < 3:
                problems.append("torus requires w >= 3 and h >= 3")
        elif k == "regular_tree":
            if not self.branching or self.branching < 2:
                problems.append("regular_tree requires branching >= 2")
            if self.depth is None or self.depth < 1:
                problems.append("regular_tree requires depth >= 1")
        elif k == "random_regular":
            if not self.n or self.degree is None:
                problems.append("random_regular requires n and degree")
            else:
                if self.degree < 2:
                    problems.append("random_regular requires degree >= 2 for connectivity")
                if self.degree >= self.n:
                    problems.append("random_regular requires degree < n")
                if (self.n * self.degree) % 2 != 0:
                    problems.append("random_regular requires n*degree even")
            if self.seed is None:
                problems.append("random_regular requires a seed")
        else:
            problems.append(f"unknown graph kind {k!r}")
        return problems

    @classmethod
    def from_dict(cls, d: dict) -> "GraphSpec":
        allowed = {"kind", "n", "w", "h", "branching", "depth", "degree", "seed"}
        unknown = set(d) - allowed
        if unknown:
            raise GraphError(f"unknown graph spec fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for f in ("n", "w", "h", "branching", "depth", "degree", "seed"):
            v = getattr(self, f)
            if v is not None:
                out[f] = v
        return out


@dataclass(frozen=True)
class GrowthProfile:
    """Ball-size envelope: polynomial c*(r+1)^k or stretched exp(r^alpha)."""

    kind: str  # "polynomial" | "stretched_exp"
    c: float = 1.0
    k: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind == "polynomial":
            if self.c <= 0 or self.k < 0:
                raise GraphError("polynomial profile requires c > 0 and k >= 0")
        elif self.kind == "stretched_exp":
            if self.alpha <= 0:
                raise GraphError("stretched_exp profile requires alpha > 0")
        else:
            raise GraphError(f"unknown growth profile {self.kind!r}")

    def __call__(self, r: float) -> float:
        if self.kind == "polynomial":
            return self.c * (r + 1.0) ** self.k
        return math.exp(r ** self.alpha)


def polynomial_profile(c: float, k: float) -> GrowthProfile:
    return GrowthProfile("polynomial", c=c, k=k)


def stretched_exp_profile(alpha: float) -> GrowthProfile:
    return GrowthProfile("stretched_exp", alpha=alpha)


class Graph:
    """Connected undirected graph, no self-loops, no duplicate edges.

    Attributes:
        n: number of nodes.
        edges: (m, 2) int array, each undirected edge stored once (u < v).
        indptr/indices: CSR adjacency over both directions.
        degrees: per-node degree.
        d: degree bound (max degree of the realized graph).
    """

    def __init__(self, n: int, edges: np.ndarray):
        if n < 1:
            raise GraphError("graph needs at least one node")
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise GraphError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise GraphError("self-loops are not allowed")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        order = np.lexsort((hi, lo))
        edges = np.column_stack([lo, hi])[order]
        if edges.shape[0] >= 2 and np.any(np.all(edges[1:] == edges[:-1], axis=1)):
            raise GraphError("duplicate edges are not allowed")
        self.n = int(n)
        self.edges = edges
        self.m = int(edges.shape[0])

        counts = np.zeros(n, dtype=np.int64)
        np.add.at(counts, edges[:, 0], 1)
        np.add.at(counts, edges[:, 1], 1)
        self.degrees = counts
        self.d = int(counts.max()) if n else 0
        self.indptr = np.concatenate([[0], np.cumsum(counts)])
        self.indices = np.empty(2 * self.m, dtype=np.int64)
        fill = self.indptr[:-1].copy()
        for u, v in edges:
            self.indices[fill[u]] = v
            fill[u] += 1
            self.indices[fill[v]] = u
            fill[v] += 1
        # neighbor lists sorted for reproducible iteration order
        for i in range(n):
            seg = self.indices[self.indptr[i]:self.indptr[i + 1]]
            seg.sort()

        self._adj = csr_matrix(
            (np.ones(2 * self.m), self.indices, self.indptr), shape=(n, n)
        )
        self._dist_cache: dict[int, np.ndarray] = {}
        self._ecc: np.ndarray | None = None

        if not self.is_connected():
            raise GraphError("graph must be connected")

    # -- basic queries ---------------------------------------------------

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def is_connected(self) -> bool:
        if self.n == 1:
            return True
        dist = self._bfs(0)
        return bool(np.all(np.isfinite(dist)))

    def _bfs(self, i: int) -> np.ndarray:
        return dijkstra(self._adj, unweighted=True, indices=i)

    def distances_from(self, i: int) -> np.ndarray:
        """All-node BFS distances from i, cached per source."""
        if i not in self._dist_cache:
            if len(self._dist_cache) > 64:
                self._dist_cache.clear()
            self._dist_cache[i] = self._bfs(i).astype(np.int64)
        return self._dist_cache[i]

    def ball(self, i: int, r: int) -> set[int]:
        """B(i, r): nodes within BFS distance r of i."""
        if not (0 <= i < self.n):
            raise GraphError(f"node {i} out of range")
        if r < 0:
            raise GraphError("radius must be nonnegative")
        dist = self.distances_from(i)
        return set(np.flatnonzero(dist <= r).tolist())

    def ball_sizes(self, i: int) -> np.ndarray:
        """|B(i, r)| for r = 0..eccentricity(i), via one BFS."""
        dist = self.distances_from(i)
        return np.cumsum(np.bincount(dist))

    def edge_distance(self, i: int, edge: tuple[int, int]) -> int:
        """Distance from node i to edge (j, k): min of the endpoint distances."""
        j, k = edge
        if not self.has_edge(j, k):
            raise GraphError(f"({j}, {k}) is not an edge")
        dist = self.distances_from(i)
        return int(min(dist[j], dist[k]))

    def has_edge(self, j: int, k: int) -> bool:
        if not (0 <= j < self.n and 0 <= k < self.n):
            return False
        return k in self.neighbors(j)

    def edge_distances_from(self, i: int) -> np.ndarray:
        """d(i, e) for every stored edge, aligned with self.edges."""
        dist = self.distances_from(i)
        return np.minimum(dist[self.edges[:, 0]], dist[self.edges[:, 1]])

    # -- eccentricity / radius -------------------------------------------

    def eccentricities(self) -> np.ndarray:
        """Per-node eccentricity via chunked multi-source BFS."""
        if self._ecc is None:
            ecc = np.empty(self.n, dtype=np.int64)
            chunk = max(1, min(256, self.n))
            for start in range(0, self.n, chunk):
                idx = np.arange(start, min(start + chunk, self.n))
                dist = dijkstra(self._adj, unweighted=True, indices=idx)
                ecc[idx] = dist.max(axis=-1).astype(np.int64)
            self._ecc = ecc
        return self._ecc

    def eccentricity(self, i: int) -> int:
        dist = self.distances_from(i)
        return int(dist.max())

    def radius(self) -> int:
        return int(self.eccentricities().min())

    def diameter(self) -> int:
        return int(self.eccentricities().max())

    # -- growth and weights ----------------------------------------------

    def check_majorized(self, profile: GrowthProfile) -> tuple[bool, tuple[int, int] | None]:
        """Whether |B(i, r)| <= profile(r) for every node and radius.

        Scans r up to each node's eccentricity; beyond it the ball is the
        whole node set while the profile is nondecreasing, so no further
        violations are possible.  Returns (ok, first violating (i, r)).
        """
        for i in range(self.n):
            sizes = self.ball_sizes(i)
            for r, size in enumerate(sizes):
                if size > profile(r):
                    return False, (i, r)
        return True, None

    def weight_mass(self, i: int, r: float) -> float:
        """Sum over edges e of r^d(i, e); finite geometric edge weighting."""
        if not (0.0 < r < 1.0):
            raise GraphError("weight ratio must lie in (0, 1)")
        dists = self.edge_distances_from(i)
        return float(np.sum(np.power(r, dists, dtype=np.float64)))

    # -- serialization ----------------------------------------------------

    def to_edge_list_text(self) -> str:
        lines = [f"{self.n} {self.d}"]
        lines.extend(f"{u} {v}" for u, v in self.edges)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edge_list_text(cls, text: str) -> "Graph":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise GraphError("empty edge list")
        header = lines[0].split()
        if len(header) != 2:
            raise GraphError("header must be 'n d'")
        n, d = int(header[0]), int(header[1])
        edges = []
        for ln in lines[1:]:
            u, v = ln.split()
            edges.append((int(u), int(v)))
        g = cls(n, np.array(edges, dtype=np.int64).reshape(-1, 2))
        if g.d > d:
            raise GraphError(f"declared degree bound {d} below realized max degree {g.d}")
        return g

    def __repr__(self):
        return f"Graph(n={self.n}, m={self.m}, d={self.d})"


# -- generators ------------------------------------------------------------

def _path_edges(n: int) -> np.ndarray:
    a = np.arange(n - 1)
    return np.column_stack([a, a + 1])


def _cycle_edges(n: int) -> np.ndarray:
    a = np.arange(n)
    return np.column_stack([a, (a + 1) % n])


def _grid_edges(w: int, h: int) -> np.ndarray:
    def nid(x, y):
        return y * w + x

    edges = []
    for y in range(h):
        for x in range(w):
            if x + 1 < w:
                edges.append((nid(x, y), nid(x + 1, y)))
            if y + 1 < h:
                edges.append((nid(x, y), nid(x, y + 1)))
    return np.array(edges, dtype=np.int64)


def _torus_edges(w: int, h: int) -> np.ndarray:
    def nid(x, y):
        return y * w + x

    edges = []
    for y in range(h):
        for x in range(w):
            edges.append((nid(x, y), nid((x + 1) % w, y)))
            edges.append((nid(x, y), nid(x, (y + 1) % h)))
    return np.array(edges, dtype=np.int64)


def _tree_edges(branching: int, depth: int) -> np.ndarray:
    edges = []
    next_id = 1
    frontier = [0]
    for _ in range(depth):
        new_frontier = []
        for parent in frontier:
            for _ in range(branching):
                edges.append((parent, next_id))
                new_frontier.append(next_id)
                next_id += 1
        frontier = new_frontier
    return np.array(edges, dtype=np.int64)


def generate(spec: GraphSpec) -> Graph:
    """Build the graph described by spec; deterministic given its seed."""
    problems = spec.validate()
    if problems:
        raise GraphError("; ".join(problems))
    k = spec.kind
    if k == "path":
        return Graph(spec.n, _path_edges(spec.n))
    if k == "cycle":
        return Graph(spec.n, _cycle_edges(spec.n))
    if k == "grid":
        return Graph(spec.w * spec.h, _grid_edges(spec.w, spec.h))
    if k == "torus":
        return Graph(spec.w * spec.h, _torus_edges(spec.w, spec.h))
    if k == "regular_tree":
        edges = _tree_edges(spec.branching, spec.depth)
        return Graph(int(edges.max()) + 1, edges)
    if k == "random_regular":
        # pairing-model sampler from networkx; resample on disconnect
        for attempt in range(100):
            gnx = nx.random_regular_graph(
                spec.degree, spec.n, seed=spec.seed * 1009 + attempt
            )
            if nx.is_connected(gnx):
                return Graph(spec.n, np.array(gnx.edges(), dtype=np.int64))
        raise GraphError("random_regular: no connected sample in 100 attempts")
    raise GraphError(f"unknown graph kind {k!r}")
