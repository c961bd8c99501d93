"""Weighted random walks and top-tau exploration of unvisited POIs."""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .dataset import Dataset
from .graphs import WeightedGraph, closed_neighborhood

OPTIONS = ("A", "RW")


@dataclass(frozen=True)
class WalkConfig:
    mu: int = 5
    beta: int = 5
    tau: int = 23
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.mu, self.beta, self.tau) < 1:
            raise ValueError("mu, beta and tau must all be >= 1")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")


@dataclass
class WalkTable:
    """``walks[v, k]`` is the k-th walk from vertex ``v`` (start vertex excluded)."""

    graph_kind: str
    walks: np.ndarray

    @property
    def num_vertices(self) -> int:
        return self.walks.shape[0]

    @property
    def total_steps(self) -> int:
        return int(self.walks.size)

    def steps_from(self, v: int) -> np.ndarray:
        return self.walks[v].ravel()

    def __eq__(self, other):
        if not isinstance(other, WalkTable):
            return NotImplemented
        return self.graph_kind == other.graph_kind and np.array_equal(self.walks, other.walks)


def _transition_tables(g: WeightedGraph):
    nbrs, cdfs = [], []
    for v in range(g.num_vertices):
        ns = g.neighbors(v)
        w = np.array([g.adjacency[v][j] for j in ns], dtype=np.float64)
        nbrs.append(np.array(ns, dtype=np.int64))
        cdfs.append(np.cumsum(w) / w.sum() if len(ns) else w)
    return nbrs, cdfs


def run_walks(g: WeightedGraph, cfg: WalkConfig = WalkConfig()) -> WalkTable:
    """``mu`` weight-proportional walks of ``beta`` steps from every vertex.

    Each start vertex draws from its own generator seeded with
    ``rng_seed ^ v``, so the table does not depend on visiting order. An
    isolated vertex records itself ``beta`` times.
    """
    if g.num_vertices < 1:
        raise ValueError("cannot walk an empty graph")
    nbrs, cdfs = _transition_tables(g)
    out = np.empty((g.num_vertices, cfg.mu, cfg.beta), dtype=np.int64)
    for v in range(g.num_vertices):
        rng = np.random.default_rng(cfg.rng_seed ^ v)
        for k in range(cfg.mu):
            x = v
            for s in range(cfg.beta):
                if len(nbrs[x]):
                    idx = int(np.searchsorted(cdfs[x], rng.random(), side="right"))
                    x = int(nbrs[x][min(idx, len(nbrs[x]) - 1)])
                out[v, k, s] = x
    return WalkTable(g.kind, out)


def rank_new(candidates: Iterable[int], visited: set[int], tau: int) -> list[int]:
    """Top ``tau`` unvisited candidates by multiset frequency, ties by ascending index."""
    counts = Counter(int(c) for c in candidates if int(c) not in visited)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [p for p, _ in ranked[:tau]]


def explore_adjacency(g: WeightedGraph, user_train_pois: Iterable[int], tau: int) -> list[int]:
    seeds = sorted(set(int(p) for p in user_train_pois))
    if not seeds:
        raise ValueError("user has no train POIs")
    pool: list[int] = []
    for v in seeds:
        if v < g.num_vertices:
            pool.extend(closed_neighborhood(g, v))
    return rank_new(pool, set(seeds), tau)


def explore_walks(wt: WalkTable, user_train_pois: Iterable[int], tau: int) -> list[int]:
    seeds = sorted(set(int(p) for p in user_train_pois))
    if not seeds:
        raise ValueError("user has no train POIs")
    pool = [wt.steps_from(v) for v in seeds if v < wt.num_vertices]
    flat = np.concatenate(pool) if pool else np.empty(0, dtype=np.int64)
    return rank_new(flat.tolist(), set(seeds), tau)


@dataclass
class ExplorationSet:
    """Per-user ranked new-POI lists keyed by ``(graph, option)``, e.g. ``("S", "RW")``."""

    tau: int
    entries: list[dict[tuple[str, str], list[int]]] = field(default_factory=list)

    def get(self, user: int, graph: str, option: str) -> list[int]:
        return self.entries[user].get((graph, option), [])

    @property
    def n_users(self) -> int:
        return len(self.entries)

    def __eq__(self, other):
        if not isinstance(other, ExplorationSet):
            return NotImplemented
        return self.tau == other.tau and self.entries == other.entries


def build_explorations(
    ds: Dataset,
    graphs: Mapping[str, WeightedGraph],
    walk_tables: Mapping[str, WalkTable],
    tau: int,
) -> ExplorationSet:
    """Both exploration options for every user and every supplied STP graph."""
    entries = []
    for seq in ds.train_seqs:
        seeds = set(seq)
        e = {}
        for key, g in graphs.items():
            e[(key, "A")] = explore_adjacency(g, seeds, tau)
        for key, wt in walk_tables.items():
            e[(key, "RW")] = explore_walks(wt, seeds, tau)
        entries.append(e)
    return ExplorationSet(tau, entries)


def write_walks(wt: WalkTable, path: str | os.PathLike) -> None:
    n, mu, beta = wt.walks.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{wt.graph_kind}\t{n}\t{mu}\t{beta}\n")
        for v in range(n):
            for walk in wt.walks[v]:
                fh.write(f"{v}: {','.join(map(str, walk.tolist()))}\n")


def read_walks(path: str | os.PathLike) -> WalkTable:
    with open(path, encoding="utf-8") as fh:
        kind, n, mu, beta = fh.readline().rstrip("\n").split("\t")
        out = np.empty((int(n), int(mu), int(beta)), dtype=np.int64)
        fill = [0] * int(n)
        for line in fh:
            if not line.strip():
                continue
            head, steps = line.split(":")
            v = int(head)
            out[v, fill[v]] = [int(s) for s in steps.split(",")]
            fill[v] += 1
    return WalkTable(kind, out)


def write_explorations(ex: ExplorationSet, path: str | os.PathLike) -> None:
    """TSV rows ``user_index, graph_kind, option, ranked POI list``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#tau\t{ex.tau}\n")
        for u, e in enumerate(ex.entries):
            for (graph, option), pois in sorted(e.items()):
                fh.write(f"{u}\t{graph}\t{option}\t{','.join(map(str, pois))}\n")


def read_explorations(path: str | os.PathLike, n_users: int | None = None) -> ExplorationSet:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        tau = int(header[1])
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    size = n_users if n_users is not None else (max((int(r[0]) for r in rows), default=-1) + 1)
    entries: list[dict] = [dict() for _ in range(size)]
    for u, graph, option, pois in rows:
        entries[int(u)][(graph, option)] = [int(p) for p in pois.split(",")] if pois else []
    return ExplorationSet(tau, entries)
