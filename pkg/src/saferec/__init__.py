"""Conformal risk control for top-k recommendation with safe-item replacement."""

__version__ = "0.1.0"

from .calibration import (
    RiskCurve,
    ThresholdResult,
    empirical_risk_curve,
    monotonize,
    select_threshold,
)
from .data import DatasetSplit, InteractionRecord, Schema, k_core_filter, load_interactions, split, watch_fraction
from .metrics import EvalReport, evaluate, ndcg_at_k, recall_at_k, risk_fraction
from .ranker import LatentFactorModel, ScoreTable, rank, score, train_latent_factor
from .selection import (
    RecommendationSet,
    SafePool,
    UserCandidates,
    build_safe_pool,
    filter_candidates,
    recommend,
)
from .simulate import SimConfig, generate, oracle_expected_risk

__all__ = [
    "DatasetSplit", "EvalReport", "InteractionRecord", "LatentFactorModel", "RecommendationSet",
    "RiskCurve", "SafePool", "Schema", "ScoreTable", "SimConfig", "ThresholdResult", "UserCandidates",
    "build_safe_pool", "empirical_risk_curve", "evaluate", "filter_candidates", "generate",
    "k_core_filter", "load_interactions", "monotonize", "ndcg_at_k", "oracle_expected_risk", "rank",
    "recall_at_k", "recommend", "risk_fraction", "score", "select_threshold", "split",
    "train_latent_factor", "watch_fraction",
]
