"""Ranking metrics: Acc@K and mean average precision with one relevant item."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KS = (1, 5, 10, 20)


def rank_of(scores: np.ndarray, target: int) -> int:
    """1-based rank of ``target`` when sorting scores descending, ties by ascending index."""
    scores = np.asarray(scores)
    s = scores[target]
    return int(1 + np.count_nonzero(scores > s) + np.count_nonzero(scores[:target] == s))


def rank_in_order(order: Sequence[int], target: int) -> int:
    """1-based position of ``target`` in an explicit ranked list."""
    pos = np.flatnonzero(np.asarray(order) == target)
    if pos.size == 0:
        raise ValueError(f"target {target} not in ranking")
    return int(pos[0]) + 1


@dataclass
class EvalReport:
    acc_at: dict[int, float]
    map_score: float
    n_samples: int
    per_user: dict[int, dict[str, float]] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "acc_at": {str(k): v for k, v in sorted(self.acc_at.items())},
            "map": self.map_score,
            "n_samples": self.n_samples,
            "per_user": {str(u): d for u, d in sorted(self.per_user.items())},
        }

    def to_text(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(
            acc_at={int(k): v for k, v in d["acc_at"].items()},
            map_score=d["map"],
            n_samples=d["n_samples"],
            per_user={int(u): v for u, v in d["per_user"].items()},
        )

    def summary(self) -> str:
        accs = "  ".join(f"Acc@{k}={v:.4f}" for k, v in sorted(self.acc_at.items()))
        return f"{accs}  MAP={self.map_score:.4f}  (n={self.n_samples})"


def _mean_reciprocal(ranks: np.ndarray) -> float:
    # correctly rounded sum: the result does not depend on sample order
    return math.fsum(1.0 / ranks) / ranks.size


def report_from_ranks(ranks: Sequence[int], users: Sequence[int] | None = None, ks: Sequence[int] = KS) -> EvalReport:
    r = np.asarray(ranks, dtype=np.int64)
    if r.size == 0:
        return EvalReport({k: 0.0 for k in ks}, 0.0, 0)
    acc = {k: float(np.mean(r <= k)) for k in ks}
    ap = _mean_reciprocal(r)
    per_user = {}
    if users is not None:
        u = np.asarray(users)
        for uid in np.unique(u):
            ru = r[u == uid]
            per_user[int(uid)] = {
                "n": int(ru.size),
                **{f"acc@{k}": float(np.mean(ru <= k)) for k in ks},
                "map": _mean_reciprocal(ru),
            }
    return EvalReport(acc, ap, int(r.size), per_user)
