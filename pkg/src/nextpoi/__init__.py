"""Next point-of-interest recommendation with spatial-temporal-preference graph attention."""

from .baselines import TopRecommender, UserTopRecommender, baseline_top, baseline_utop
from .dataset import CheckIn, Dataset, PreprocessConfig, cold_start_preprocess, parse_checkins, preprocess
from .estimator import DGATRecommender, build_artifacts
from .graphs import GraphConfig, WeightedGraph
from .metrics import EvalReport
from .model import HyperParams
from .training import TrainConfig, evaluate, train
from .walks import ExplorationSet, WalkConfig, WalkTable

__all__ = [
    "CheckIn", "Dataset", "PreprocessConfig", "parse_checkins", "preprocess", "cold_start_preprocess",
    "GraphConfig", "WeightedGraph", "WalkConfig", "WalkTable", "ExplorationSet",
    "HyperParams", "TrainConfig", "train", "evaluate", "EvalReport",
    "DGATRecommender", "build_artifacts", "TopRecommender", "UserTopRecommender",
    "baseline_top", "baseline_utop",
]
__version__ = "0.1.0"
