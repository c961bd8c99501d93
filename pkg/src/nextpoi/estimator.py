"""scikit-learn style front end for the graph-attention recommender."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dataset import Dataset
from .graphs import GraphConfig, WeightedGraph, build_stp_graphs, build_user_graph
from .metrics import EvalReport
from .model import HyperParams, NeighborhoodIndex, forward
from .training import TrainConfig, derive_seed, evaluate, train
from .validation import check_dataset, check_pairs
from .walks import ExplorationSet, WalkConfig, WalkTable, build_explorations, run_walks


@dataclass
class Artifacts:
    """Everything precomputed from the training data before fitting."""

    graphs: dict[str, WeightedGraph]
    walk_tables: dict[str, WalkTable]
    explorations: ExplorationSet


def build_artifacts(ds: Dataset, hp: HyperParams, graph_cfg: GraphConfig, seed: int) -> Artifacts:
    graphs = build_stp_graphs(ds, graph_cfg)
    walk_seed = derive_seed(seed, "walk")
    tables = {
        key: run_walks(g, WalkConfig(hp.mu, hp.beta, hp.tau, walk_seed + i))
        for i, (key, g) in enumerate(graphs.items())
    }
    explorations = build_explorations(ds, graphs, tables, hp.tau)
    graphs["user"] = build_user_graph(ds, graph_cfg)
    return Artifacts(graphs, tables, explorations)


class DGATRecommender(BaseEstimator):
    """Next-POI recommender built from dimensional graph attention layers.

    ``variant`` selects a preset (``stp-udgat``, ``stp-dgat``,
    ``pp-dgat-skip``); any structural argument left as ``None`` keeps the
    preset's value. ``fit`` takes a preprocessed :class:`Dataset`; queries
    are ``(user, previous POI)`` index pairs.
    """

    def __init__(
        self,
        variant: str = "stp-udgat",
        dim: int = 1024,
        tau: int = 23,
        mu: int = 5,
        beta: int = 5,
        sigma: int = 5,
        jaccard_threshold: float = 0.2,
        dropout_rate: float = 0.95,
        attention_mode: str | None = None,
        options: tuple[str, ...] | None = None,
        graphs_enabled: tuple[str, ...] | None = None,
        explore: bool | None = None,
        exploit: bool | None = None,
        user_module: str | None = None,
        skip_connection: bool | None = None,
        epochs: int = 100,
        lr_initial: float = 1e-3,
        lr_after_decay: float = 1e-4,
        decay_epoch: int = 10,
        random_state: int = 0,
    ):
        self.variant = variant
        self.dim = dim
        self.tau = tau
        self.mu = mu
        self.beta = beta
        self.sigma = sigma
        self.jaccard_threshold = jaccard_threshold
        self.dropout_rate = dropout_rate
        self.attention_mode = attention_mode
        self.options = options
        self.graphs_enabled = graphs_enabled
        self.explore = explore
        self.exploit = exploit
        self.user_module = user_module
        self.skip_connection = skip_connection
        self.epochs = epochs
        self.lr_initial = lr_initial
        self.lr_after_decay = lr_after_decay
        self.decay_epoch = decay_epoch
        self.random_state = random_state

    def hyperparams(self) -> HyperParams:
        structural = {
            "attention_mode": self.attention_mode,
            "options": self.options,
            "graphs_enabled": self.graphs_enabled,
            "explore_enabled": self.explore,
            "exploit_enabled": self.exploit,
            "user_module": self.user_module,
            "skip_connection": self.skip_connection,
        }
        overrides = {k: v for k, v in structural.items() if v is not None}
        return HyperParams.preset(
            self.variant,
            dim=self.dim, delta=self.dim, tau=self.tau, mu=self.mu, beta=self.beta,
            sigma=self.sigma, dropout_rate=self.dropout_rate, **overrides,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, lr_initial=self.lr_initial, lr_after_decay=self.lr_after_decay,
            decay_epoch=min(self.decay_epoch, self.epochs), rng_seed=self.random_state,
        )

    def fit(self, X: Dataset, y=None, artifacts: Artifacts | None = None):
        check_dataset(X, require_test=False)
        hp = self.hyperparams()
        if artifacts is None:
            artifacts = build_artifacts(X, hp, GraphConfig(self.sigma, self.jaccard_threshold), self.random_state)
        result = train(X, artifacts.graphs, artifacts.explorations, hp, self.train_config())
        self.hp_ = hp
        self.dataset_ = X
        self.artifacts_ = artifacts
        self.params_ = result.params
        self.loss_curve_ = result.loss_curve
        self.n_pois_ = X.n_pois
        self.n_users_ = X.n_users
        self._index = NeighborhoodIndex(X.train_seqs, artifacts.explorations, artifacts.graphs.get("user"))
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Probability over all POIs for each ``(user, previous POI)`` row."""
        check_is_fitted(self, "params_")
        X = check_pairs(X, self.n_users_, self.n_pois_)
        return np.stack([
            forward(self.params_, self.hp_, int(u), int(p), self._index(int(u), int(p))).probs for u, p in X
        ])

    def recommend(self, X, k: int = 10) -> np.ndarray:
        """Top-``k`` POI indices per query, ties broken by ascending index."""
        proba = self.predict_proba(X)
        order = np.lexsort((np.broadcast_to(np.arange(proba.shape[1]), proba.shape), -proba))
        return order[:, :k]

    def predict(self, X) -> np.ndarray:
        return self.recommend(X, k=1)[:, 0]

    def score(self, X, y) -> float:
        """Acc@1 of predictions against target POIs ``y``."""
        return float(np.mean(self.predict(X) == np.asarray(y)))

    def evaluate(self, ds: Dataset | None = None) -> EvalReport:
        """Full Acc@K / MAP report on the test pairs of ``ds`` (default: the fitted dataset)."""
        check_is_fitted(self, "params_")
        ds = self.dataset_ if ds is None else check_dataset(ds)
        return evaluate(self.params_, self.hp_, ds, self.artifacts_.graphs, self.artifacts_.explorations)
