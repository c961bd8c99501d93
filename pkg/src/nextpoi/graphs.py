"""POI-POI and user-user graph construction.

All graphs share :class:`WeightedGraph`: an undirected weighted adjacency
over ``range(num_vertices)``. The global POI graphs span the whole POI index
space; POIs that never occur in training simply stay isolated there.
"""

from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Dataset

GRAPH_KINDS = ("pp", "spatial", "temporal", "preference", "user")
STP_KINDS = {"S": "spatial", "T": "temporal", "P": "preference"}

TIE_DECIMALS = 12
DISTANCE_EPS = 1e-6  # degrees
INTERVAL_EPS = 1.0  # seconds
EARTH_RADIUS_KM = 6371.0088


@dataclass(frozen=True)
class GraphConfig:
    sigma: int = 5
    jaccard_threshold: float = 0.2
    metric: str = "euclidean"

    def __post_init__(self):
        if self.sigma < 1:
            raise ValueError("sigma must be >= 1")
        if not 0.0 <= self.jaccard_threshold <= 1.0:
            raise ValueError("jaccard_threshold must lie in [0, 1]")
        if self.metric not in ("euclidean", "haversine"):
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass
class WeightedGraph:
    kind: str
    num_vertices: int
    adjacency: list[dict[int, float]]
    vertex_domain: str = "poi"
    labels: tuple[int, ...] | None = field(default=None)

    def __post_init__(self):
        if self.kind not in GRAPH_KINDS:
            raise ValueError(f"unknown graph kind {self.kind!r}")
        if len(self.adjacency) != self.num_vertices:
            raise ValueError("adjacency length does not match num_vertices")

    @classmethod
    def empty(cls, kind: str, n: int, **kw) -> "WeightedGraph":
        return cls(kind, n, [dict() for _ in range(n)], **kw)

    def add_edge(self, i: int, j: int, w: float) -> None:
        if i == j:
            raise ValueError("self-loops are not stored")
        if not (w > 0 and np.isfinite(w)):
            raise ValueError(f"edge weight must be positive and finite, got {w}")
        self.adjacency[i][j] = w
        self.adjacency[j][i] = w

    def neighbors(self, v: int) -> list[int]:
        return sorted(self.adjacency[v])

    def weight(self, i: int, j: int) -> float:
        return self.adjacency[i][j]

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def edges(self) -> list[tuple[int, int, float]]:
        """Each undirected edge once, as ``(i, j, w)`` with ``i < j``, sorted."""
        return sorted((i, j, w) for i, nbrs in enumerate(self.adjacency) for j, w in nbrs.items() if i < j)

    @property
    def num_edges(self) -> int:
        return sum(len(n) for n in self.adjacency) // 2

    def label(self, v: int) -> int:
        return v if self.labels is None else self.labels[v]

    def __eq__(self, other):
        if not isinstance(other, WeightedGraph):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.num_vertices == other.num_vertices
            and self.adjacency == other.adjacency
            and self.labels == other.labels
        )


def closed_neighborhood(g: WeightedGraph, v: int) -> list[int]:
    """``v`` followed by its neighbours in ascending index order."""
    if not 0 <= v < g.num_vertices:
        raise IndexError(f"vertex {v} outside graph of {g.num_vertices} vertices")
    return [v, *g.neighbors(v)]


def build_pp_graph(train_seq: Sequence[int]) -> WeightedGraph:
    """Complete unit-weight graph over the distinct POIs of one user's train visits.

    Vertices are local indices; ``labels`` maps them back to POI indices in
    ascending order.
    """
    if len(train_seq) == 0:
        raise ValueError("train sequence is empty")
    labels = tuple(sorted(set(int(p) for p in train_seq)))
    n = len(labels)
    adjacency = [{j: 1.0 for j in range(n) if j != i} for i in range(n)]
    return WeightedGraph("pp", n, adjacency, labels=labels)


def pairwise_distances(coords: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    if metric == "euclidean":
        diff = coords[:, None, :] - coords[None, :, :]
        return np.sqrt((diff**2).sum(-1))
    lat, lon = np.radians(coords[:, 0]), np.radians(coords[:, 1])
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    a = np.sin(dlat / 2) ** 2 + np.cos(lat[:, None]) * np.cos(lat[None, :]) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def build_spatial_graph(poi_coords: np.ndarray, cfg: GraphConfig = GraphConfig()) -> WeightedGraph:
    """Connect every POI to its ``sigma`` nearest others, weight ``1 / distance``.

    Ties at the cut-off favour the lower index; distances are compared after
    rounding to ``TIE_DECIMALS`` places so that ties survive float noise. Zero
    distances are clamped to ``DISTANCE_EPS`` so duplicate coordinates give a
    very heavy edge.
    """
    coords = np.asarray(poi_coords, dtype=np.float64)
    n = len(coords)
    if n < 2:
        raise ValueError("spatial graph needs at least two POIs")
    dist = pairwise_distances(coords, cfg.metric)
    g = WeightedGraph.empty("spatial", n)
    k = min(cfg.sigma, n - 1)
    for i in range(n):
        d = dist[i].copy()
        d[i] = np.inf
        for j in np.argsort(np.round(d, TIE_DECIMALS), kind="stable")[:k]:
            g.add_edge(i, int(j), 1.0 / max(d[j], DISTANCE_EPS))
    return g


def build_temporal_graph(ds: Dataset) -> WeightedGraph:
    """Chronological adjacency over the pooled train visits of all users.

    Edge weight is the reciprocal of the mean interval over every occurrence
    of the unordered POI pair.
    """
    visits = [
        (t, u, pos, p)
        for u, (seq, times) in enumerate(zip(ds.train_seqs, ds.train_times))
        for pos, (p, t) in enumerate(zip(seq, times))
    ]
    if len(visits) < 2:
        raise ValueError("temporal graph needs at least two train visits")
    visits.sort()
    total: dict[tuple[int, int], float] = defaultdict(float)
    count: dict[tuple[int, int], int] = defaultdict(int)
    for (t0, _, _, a), (t1, _, _, b) in zip(visits, visits[1:]):
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        total[key] += t1 - t0
        count[key] += 1
    g = WeightedGraph.empty("temporal", ds.n_pois)
    for (a, b), s in total.items():
        g.add_edge(a, b, 1.0 / max(s / count[(a, b)], INTERVAL_EPS))
    return g


def build_preference_graph(ds: Dataset) -> WeightedGraph:
    """Unordered counts of consecutive distinct POIs within each user's train sequence."""
    counts: dict[tuple[int, int], int] = defaultdict(int)
    for seq in ds.train_seqs:
        for a, b in zip(seq, seq[1:]):
            if a != b:
                counts[(min(a, b), max(a, b))] += 1
    g = WeightedGraph.empty("preference", ds.n_pois)
    for (a, b), c in counts.items():
        g.add_edge(a, b, float(c))
    return g


def build_user_graph(ds: Dataset, cfg: GraphConfig = GraphConfig()) -> WeightedGraph:
    """Link users whose train POI sets have Jaccard similarity above the threshold."""
    n = ds.n_users
    if n < 1:
        raise ValueError("user graph needs at least one user")
    # binary user x POI incidence makes all pairwise intersections one matmul
    inc = np.zeros((n, ds.n_pois), dtype=np.int64)
    for u, seq in enumerate(ds.train_seqs):
        inc[u, seq] = 1
    inter = inc @ inc.T
    sizes = inc.sum(1)
    union = sizes[:, None] + sizes[None, :] - inter
    g = WeightedGraph.empty("user", n, vertex_domain="user")
    for i in range(n):
        for j in range(i + 1, n):
            if union[i, j] == 0:
                continue
            jac = inter[i, j] / union[i, j]
            if jac > cfg.jaccard_threshold:
                g.add_edge(i, j, float(jac))
    return g


def build_stp_graphs(ds: Dataset, cfg: GraphConfig = GraphConfig()) -> dict[str, WeightedGraph]:
    """The spatial, temporal and preference graphs keyed by ``S``, ``T``, ``P``."""
    return {
        "S": build_spatial_graph(ds.poi_coords, cfg),
        "T": build_temporal_graph(ds),
        "P": build_preference_graph(ds),
    }


def write_graph(g: WeightedGraph, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{g.kind}\n{g.num_vertices}\n")
        for i, j, w in g.edges():
            fh.write(f"{i} {j} {w:.12g}\n")


def read_graph(path: str | os.PathLike) -> WeightedGraph:
    with open(path, encoding="utf-8") as fh:
        kind = fh.readline().strip()
        n = int(fh.readline())
        g = WeightedGraph.empty(kind, n, vertex_domain="user" if kind == "user" else "poi")
        for line in fh:
            if line.strip():
                i, j, w = line.split()
                g.add_edge(int(i), int(j), float(w))
    return g
