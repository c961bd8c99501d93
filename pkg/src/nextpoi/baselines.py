"""Frequency baselines: global popularity (TOP) and per-user popularity (U-TOP)."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dataset import Dataset
from .metrics import EvalReport, rank_in_order, report_from_ranks
from .validation import check_dataset, check_pairs


def global_counts(ds: Dataset) -> np.ndarray:
    counts = np.zeros(ds.n_pois, dtype=np.int64)
    for seq in ds.train_seqs:
        np.add.at(counts, seq, 1)
    return counts


class TopRecommender(BaseEstimator):
    """Ranks every POI by its number of train visits across all users."""

    def fit(self, X: Dataset, y=None):
        check_dataset(X, require_test=False)
        self.counts_ = global_counts(X)
        self.n_users_ = X.n_users
        # ties by ascending index
        self.order_ = np.lexsort((np.arange(X.n_pois), -self.counts_))
        return self

    def rank(self, user: int) -> np.ndarray:
        check_is_fitted(self)
        return self.order_

    def predict(self, X, k: int = 1) -> np.ndarray:
        X = check_pairs(X, self.n_users_, len(self.counts_))
        return np.stack([self.rank(int(u))[:k] for u, _ in X])

    def evaluate(self, ds: Dataset) -> EvalReport:
        ranks, users = [], []
        for u, _, tgt in ds.test_samples():
            ranks.append(rank_in_order(self.rank(u), tgt))
            users.append(u)
        return report_from_ranks(ranks, users)


class UserTopRecommender(TopRecommender):
    """Ranks POIs by the user's own train visit counts.

    POIs the user never visited follow in global popularity order.
    """

    def fit(self, X: Dataset, y=None):
        super().fit(X)
        idx = np.arange(X.n_pois)
        self.user_orders_ = []
        for seq in X.train_seqs:
            own = np.bincount(seq, minlength=X.n_pois)
            self.user_orders_.append(np.lexsort((idx, -self.counts_, -own)))
        return self

    def rank(self, user: int) -> np.ndarray:
        check_is_fitted(self)
        return self.user_orders_[user]


def baseline_top(ds: Dataset) -> EvalReport:
    return TopRecommender().fit(ds).evaluate(ds)


def baseline_utop(ds: Dataset) -> EvalReport:
    return UserTopRecommender().fit(ds).evaluate(ds)
