"""Training loop (Adam, batch size one) and model evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .dataset import Dataset
from .graphs import WeightedGraph
from .metrics import EvalReport, rank_of, report_from_ranks
from .model import HyperParams, NeighborhoodIndex, forward, init_params
from .tensor import AdamState, Tape, Tensor, TrainingError, adam_step
from .walks import ExplorationSet

log = logging.getLogger(__name__)

# per-stage salts so reseeding one stage never perturbs another
STAGE_SALTS = {
    "walk": 0x9E3779B1,
    "init": 0x85EBCA6B,
    "shuffle": 0xC2B2AE35,
    "dropout": 0x27D4EB2F,
}


def derive_seed(master: int, stage: str) -> int:
    return (int(master) * 0x100000001B3 ^ STAGE_SALTS[stage]) % (2**31 - 1)


DEFAULT_DECAY_EPOCH = 10


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr_initial: float = 1e-3
    lr_after_decay: float = 1e-4
    decay_epoch: int | None = None  # None: epoch 10, or the last epoch of shorter runs
    rng_seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr_initial <= 0 or self.lr_after_decay <= 0:
            raise ValueError("learning rates must be positive")
        if self.decay_epoch is None:
            object.__setattr__(self, "decay_epoch", min(DEFAULT_DECAY_EPOCH, self.epochs))
        if not 1 <= self.decay_epoch <= self.epochs:
            raise ValueError("decay_epoch must lie in [1, epochs]")

    def learning_rate(self, epoch: int) -> float:
        """Rate for 1-based ``epoch``; the decayed rate applies from ``decay_epoch`` on."""
        return self.lr_initial if epoch < self.decay_epoch else self.lr_after_decay


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    loss_curve: list[tuple[int, float, float]] = field(default_factory=list)
    adam: AdamState | None = None

    def loss_csv(self) -> str:
        lines = ["epoch,mean_loss,learning_rate"]
        lines += [f"{e},{loss!r},{lr!r}" for e, loss, lr in self.loss_curve]
        return "\n".join(lines) + "\n"


def train(
    dataset: Dataset,
    graphs: Mapping[str, WeightedGraph],
    explorations: ExplorationSet | None,
    hp: HyperParams,
    tc: TrainConfig,
    *,
    params: dict[str, np.ndarray] | None = None,
    on_epoch: Callable[[int, dict[str, np.ndarray], AdamState], None] | None = None,
) -> TrainResult:
    """Fit parameters on every consecutive train pair, one Adam step per pair.

    ``graphs`` may carry the user graph under ``"user"``; the STP graphs are
    only needed to have produced ``explorations``.
    """
    if params is None:
        params = init_params(hp, dataset.n_pois, dataset.n_users, np.random.default_rng(derive_seed(tc.rng_seed, "init")))
    index = NeighborhoodIndex(dataset.train_seqs, explorations, graphs.get("user"))
    samples = dataset.train_samples()
    shuffle_rng = np.random.default_rng(derive_seed(tc.rng_seed, "shuffle"))
    drop_rng = np.random.default_rng(derive_seed(tc.rng_seed, "dropout"))
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
    state = AdamState(learning_rate=tc.lr_initial)
    curve = []
    for epoch in range(1, tc.epochs + 1):
        state.learning_rate = tc.learning_rate(epoch)
        total = 0.0
        for i in shuffle_rng.permutation(len(samples)):
            u, prev, target = samples[i]
            for leaf in leaves.values():
                leaf.zero_grad()
            with Tape() as tape:
                trace = forward(leaves, hp, u, prev, index(u, prev), target=target, train_mode=True, rng=drop_rng)
                loss = float(trace.loss.value[0, 0])
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, sample {int(i)} (user {u})")
                tape.backward(trace.loss)
            adam_step(params, {k: leaf.grad for k, leaf in leaves.items()}, state)
            total += loss
        mean = total / len(samples) if samples else 0.0
        curve.append((epoch, mean, state.learning_rate))
        log.info("epoch %d  loss %.5f  lr %g", epoch, mean, state.learning_rate)
        if on_epoch is not None:
            on_epoch(epoch, params, state)
    return TrainResult(params, curve, state)


def predict_scores(
    params: Mapping[str, np.ndarray],
    hp: HyperParams,
    index: NeighborhoodIndex,
    user: int,
    prev: int,
) -> np.ndarray:
    return forward(params, hp, user, prev, index(user, prev)).probs


def evaluate(
    params: Mapping[str, np.ndarray],
    hp: HyperParams,
    dataset: Dataset,
    graphs: Mapping[str, WeightedGraph],
    explorations: ExplorationSet | None,
    samples: list[tuple[int, int, int]] | None = None,
) -> EvalReport:
    """Acc@K and MAP over the test pairs (or the given ``(user, prev, target)`` samples)."""
    index = NeighborhoodIndex(dataset.train_seqs, explorations, graphs.get("user"))
    if samples is None:
        samples = dataset.test_samples()
    ranks, users = [], []
    for u, prev, target in samples:
        ranks.append(rank_of(predict_scores(params, hp, index, u, prev), target))
        users.append(u)
    return report_from_ranks(ranks, users)
