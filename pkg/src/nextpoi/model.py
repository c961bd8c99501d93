"""Dimensional graph attention layers and the explore-exploit recommender.

The network scores every POI given ``(user, previous POI)``:

* exploit: one attention layer over the user's own historical POIs;
* explore: one layer per (option, STP graph) over newly discovered POIs,
  mean-pooled per option and fused across options;
* a fusion layer balancing the two paths;
* an optional user layer attending over similar users;
* dropout and a linear output layer producing logits over all POIs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .graphs import WeightedGraph, build_pp_graph, closed_neighborhood
from .tensor import Tensor
from .walks import OPTIONS, ExplorationSet

GRAPH_ORDER = ("S", "T", "P")
USER_MODULES = ("off", "udgat", "raw_embedding")
ATTENTION_MODES = ("scalar", "dimensional")
EMBEDDING_INIT = 0.05


class ModelError(IndexError):
    pass


class NumericError(FloatingPointError):
    pass


class EmptyNeighborhoodError(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    dim: int = 1024
    delta: int = 1024
    tau: int = 23
    mu: int = 5
    beta: int = 5
    sigma: int = 5
    dropout_rate: float = 0.95
    attention_mode: str = "dimensional"
    options: tuple[str, ...] = ("A", "RW")
    graphs_enabled: tuple[str, ...] = ("S", "T", "P")
    explore_enabled: bool = True
    exploit_enabled: bool = True
    user_module: str = "udgat"
    skip_connection: bool = False

    def __post_init__(self):
        # canonical ordering keeps hashing and layer naming stable
        object.__setattr__(self, "options", tuple(o for o in OPTIONS if o in set(self.options)))
        object.__setattr__(self, "graphs_enabled", tuple(g for g in GRAPH_ORDER if g in set(self.graphs_enabled)))
        if self.dim != self.delta:
            raise ValueError("dim and delta must be equal")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.attention_mode not in ATTENTION_MODES:
            raise ValueError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.user_module not in USER_MODULES:
            raise ValueError(f"user_module must be one of {USER_MODULES}")
        if not (self.explore_enabled or self.exploit_enabled):
            raise ValueError("at least one of explore/exploit must be enabled")
        if self.explore_enabled and not (self.options and self.graphs_enabled):
            raise ValueError("exploration needs at least one option and one graph")
        if self.skip_connection and not self.exploit_enabled:
            raise ValueError("the skip connection wraps the exploit layer")

    @classmethod
    def preset(cls, variant: str, **overrides) -> "HyperParams":
        """Named configurations: ``pp-dgat-skip``, ``stp-dgat`` or ``stp-udgat``."""
        presets = {
            "pp-dgat-skip": dict(explore_enabled=False, user_module="off", skip_connection=True),
            "stp-dgat": dict(user_module="off"),
            "stp-udgat": dict(),
        }
        if variant not in presets:
            raise ValueError(f"unknown variant {variant!r}")
        return cls(**{**presets[variant], **overrides})

    def with_(self, **changes) -> "HyperParams":
        return replace(self, **changes)

    def layer_names(self) -> list[str]:
        names = []
        if self.exploit_enabled:
            names.append("pp")
        if self.explore_enabled:
            names += [f"{opt}_{g}" for opt in self.options for g in self.graphs_enabled]
        if self.user_module == "udgat":
            names.append("user")
        return names


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


def init_params(hp: HyperParams, n_pois: int, n_users: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fresh parameters for the active configuration only."""
    d, k = hp.dim, hp.delta
    att_out = k if hp.attention_mode == "dimensional" else 1
    p: dict[str, np.ndarray] = {}
    p["poi_table"] = rng.uniform(-EMBEDDING_INIT, EMBEDDING_INIT, size=(n_pois, d))
    if hp.user_module != "off":
        p["user_table"] = rng.uniform(-EMBEDDING_INIT, EMBEDDING_INIT, size=(n_users, d))
    for name in hp.layer_names():
        p[f"{name}.W_p"] = _glorot(rng, d, k)
        p[f"{name}.W_a"] = _glorot(rng, 2 * k, att_out)
        p[f"{name}.b_a"] = np.zeros((1, att_out))
    if hp.explore_enabled and len(hp.options) == 2:
        p["f2.W"] = _glorot(rng, 2 * k, k)
    if hp.explore_enabled and hp.exploit_enabled:
        p["f3.W"] = _glorot(rng, 2 * k, k)
    out_in = 2 * k if hp.user_module != "off" else k
    p["f1.W"] = _glorot(rng, out_in, n_pois)
    return p


def dgat_layer(
    W_p: Tensor,
    W_a: Tensor,
    b_a: Tensor,
    center: Tensor,
    neighbors: Tensor,
    mode: str = "dimensional",
) -> tuple[Tensor, Tensor]:
    """Masked self-attention of ``center`` over ``neighbors``.

    Returns the ``1 x delta`` output and the ``n x delta`` (dimensional) or
    ``n x 1`` (scalar) attention coefficients. Coefficients come from
    ``LeakyReLU([W_p i || W_p j] W_a + b_a)`` normalised over neighbours;
    in dimensional mode every output dimension has its own softmax.
    """
    n = neighbors.shape[0]
    if n == 0:
        raise EmptyNeighborhoodError("attention over an empty neighbourhood")
    proj_c = T.matmul(center, W_p)
    proj_n = T.matmul(neighbors, W_p)
    repeated = T.matmul(np.ones((n, 1)), proj_c)
    scores = T.leaky_relu(T.add(T.matmul(T.concat(repeated, proj_n), W_a), b_a))
    alpha = T.softmax_over_neighbors(scores)
    weights = alpha if mode == "dimensional" else T.matmul(alpha, np.ones((1, proj_n.shape[1])))
    out = T.matmul(np.ones((1, n)), T.hadamard(weights, proj_n))
    return out, alpha


@dataclass
class Neighborhoods:
    """Vertex lists feeding each attention layer for one sample.

    ``pp`` and ``users`` start with the centre vertex. ``explore`` maps
    ``(graph, option)`` to ranked new POIs; missing or empty entries fall
    back to the previous POI alone.
    """

    pp: list[int]
    explore: Mapping[tuple[str, str], Sequence[int]] = field(default_factory=dict)
    users: list[int] = field(default_factory=list)


@dataclass
class ForwardTrace:
    attention: dict[str, tuple[list[int], np.ndarray]]
    hidden: dict[str, np.ndarray]
    probs: np.ndarray
    logits: Tensor
    loss: Tensor | None = None


def _check_finite(t: Tensor, layer: str) -> Tensor:
    if not np.all(np.isfinite(t.value)):
        raise NumericError(f"non-finite activation in layer {layer!r}")
    return t


def forward(
    params: Mapping[str, np.ndarray | Tensor],
    hp: HyperParams,
    user_index: int,
    prev_poi_index: int,
    nb: Neighborhoods,
    *,
    target: int | None = None,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardTrace:
    P = {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}
    poi_table = P["poi_table"]
    n_pois = poi_table.shape[0]

    def lookup(table: Tensor, ids: Sequence[int], what: str) -> Tensor:
        ids = [int(i) for i in ids]
        bad = [i for i in ids if not 0 <= i < table.shape[0]]
        if bad:
            raise ModelError(f"{what} index {bad[0]} out of range (size {table.shape[0]})")
        return T.embedding_lookup(table, ids)

    attention: dict[str, tuple[list[int], np.ndarray]] = {}
    hidden: dict[str, np.ndarray] = {}

    def layer(name: str, center: Tensor, ids: Sequence[int], table: Tensor, what: str) -> Tensor:
        out, alpha = dgat_layer(
            P[f"{name}.W_p"], P[f"{name}.W_a"], P[f"{name}.b_a"], center, lookup(table, ids, what), hp.attention_mode
        )
        attention[name] = (list(ids), alpha.value)
        return _check_finite(out, name)

    v_prev = lookup(poi_table, [prev_poi_index], "poi")

    y_exploit = None
    if hp.exploit_enabled:
        y_exploit = layer("pp", v_prev, nb.pp, poi_table, "poi")
        if hp.skip_connection:
            y_exploit = T.add(y_exploit, v_prev)
        hidden["exploit"] = y_exploit.value

    stp = None
    if hp.explore_enabled:
        per_option = []
        for opt in hp.options:
            outs = []
            for g in hp.graphs_enabled:
                ids = list(nb.explore.get((g, opt), ())) or [prev_poi_index]
                outs.append(layer(f"{opt}_{g}", v_prev, ids, poi_table, "poi"))
            o = T.mean_over(outs)
            hidden[f"o_{opt}"] = o.value
            per_option.append(o)
        stp = T.matmul(T.concat(*per_option), P["f2.W"]) if len(per_option) == 2 else per_option[0]
        hidden["stp"] = _check_finite(stp, "f2").value

    if y_exploit is not None and stp is not None:
        y = _check_finite(T.matmul(T.concat(y_exploit, stp), P["f3.W"]), "f3")
    else:
        y = y_exploit if y_exploit is not None else stp
    hidden["y"] = y.value

    h = y
    if hp.user_module != "off":
        user_table = P["user_table"]
        u_emb = lookup(user_table, [user_index], "user")
        if hp.user_module == "udgat":
            u = layer("user", u_emb, nb.users or [user_index], user_table, "user")
        else:
            u = u_emb
        hidden["u"] = u.value
        h = T.concat(y, u)

    h = T.dropout(h, hp.dropout_rate, train_mode, rng)
    logits = _check_finite(T.matmul(h, P["f1.W"]), "f1")
    if logits.shape[1] != n_pois:
        raise ModelError("output layer width does not match the POI table")
    probs = T.softmax(logits.value)[0]
    loss = T.cross_entropy(logits, target) if target is not None else None
    return ForwardTrace(attention, hidden, probs, logits, loss)


def export_attention(trace: ForwardTrace, sample_id: int | str = 0) -> list[tuple]:
    """``(sample_id, layer, neighbour_id, coefficient)`` rows, averaged over dimensions."""
    rows = []
    for name, (ids, alpha) in trace.attention.items():
        for nid, coef in zip(ids, alpha.mean(axis=1)):
            rows.append((sample_id, name, int(nid), float(coef)))
    return rows


class NeighborhoodIndex:
    """Assembles :class:`Neighborhoods` for any ``(user, previous POI)`` query.

    The personalised-preference neighbourhood is the closed neighbourhood of
    the previous POI in the user's complete train-POI graph, i.e. every
    historical POI with the previous one first. When the previous POI is not
    itself a train POI (later test steps) it is prepended to that set.
    """

    def __init__(self, train_seqs: Sequence[Sequence[int]], explorations: ExplorationSet | None,
                 user_graph: WeightedGraph | None):
        self.pp_graphs = [build_pp_graph(seq) for seq in train_seqs]
        self._local = [{p: i for i, p in enumerate(g.labels)} for g in self.pp_graphs]
        self.explorations = explorations
        self.user_graph = user_graph

    def pp(self, user: int, prev: int) -> list[int]:
        g = self.pp_graphs[user]
        local = self._local[user].get(prev)
        if local is None:
            return [prev, *g.labels]
        return [g.label(v) for v in closed_neighborhood(g, local)]

    def __call__(self, user: int, prev: int) -> Neighborhoods:
        explore = self.explorations.entries[user] if self.explorations is not None else {}
        users = closed_neighborhood(self.user_graph, user) if self.user_graph is not None else [user]
        return Neighborhoods(self.pp(user, prev), explore, users)
