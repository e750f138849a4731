"""Risk and utility metrics for recommendation sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .selection import RecommendationSet

REPORT_COLUMNS = [
    "alpha", "beta", "strategy", "k", "risk", "ndcg", "recall",
    "mean_set_size", "repeated_fraction", "n_users", "seed",
]


@dataclass
class EvalReport:
    risk: float
    ndcg_at_k: float
    recall_at_k: float
    mean_set_size: float
    repeated_fraction: float
    k: int
    n_users: int = 0
    n_recall_skipped: int = 0

    def row(self, **context) -> dict:
        """One results row; ``context`` supplies alpha, beta, strategy, seed."""
        out = {c: context.get(c, "") for c in REPORT_COLUMNS}
        out.update(
            k=self.k,
            risk=self.risk,
            ndcg=self.ndcg_at_k,
            recall=self.recall_at_k,
            mean_set_size=self.mean_set_size,
            repeated_fraction=self.repeated_fraction,
            n_users=self.n_users,
        )
        for key, v in context.items():
            out.setdefault(key, v)
        return out


@dataclass
class UserTruth:
    flags: Mapping[str, bool]
    relevance: Mapping[str, float] = field(default_factory=dict)


def _ids(ranked) -> list[str]:
    if isinstance(ranked, RecommendationSet):
        return ranked.item_ids
    return list(ranked)


def risk_fraction(rec_set, flags: Mapping[str, bool]) -> float:
    """Fraction of flagged items in the set; 0 for an empty set."""
    ids = _ids(rec_set)
    if not ids:
        return 0.0
    try:
        n_flagged = sum(bool(flags[i]) for i in ids)
    except KeyError as exc:
        raise KeyError(f"no flag recorded for item {exc.args[0]!r}") from None
    return n_flagged / len(ids)


def _discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def ndcg_at_k(ranked, relevance: Mapping[str, float], k: int) -> float:
    """Normalised DCG with gain = relevance and a 1/log2(rank+1) discount.

    The ideal ordering is taken over every item in ``relevance``. Returns 0
    when no item has positive relevance.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rel = np.fromiter(relevance.values(), dtype=float, count=len(relevance))
    if (rel < 0).any():
        raise ValueError("relevance must be non-negative")
    ideal = np.sort(rel)[::-1][:k]
    idcg = float(ideal @ _discounts(len(ideal)))
    if idcg == 0.0:
        return 0.0
    gains = np.array([relevance.get(i, 0.0) for i in _ids(ranked)[:k]], dtype=float)
    if (gains < 0).any():
        raise ValueError("relevance must be non-negative")
    dcg = float(gains @ _discounts(len(gains)))
    return dcg / idcg


def recall_at_k(ranked, relevant: Iterable[str], k: int) -> float:
    """Share of relevant items found in the top ``k``.

    Raises ``ValueError`` for an empty relevant set; :func:`evaluate` skips
    such users instead.
    """
    relevant = set(relevant)
    if not relevant:
        raise ValueError("recall is undefined for an empty relevant set")
    top = set(_ids(ranked)[:k])
    return len(top & relevant) / len(relevant)


def evaluate(
    sets: Mapping[str, RecommendationSet],
    truth: Mapping[str, UserTruth],
    k: int,
) -> EvalReport:
    """Unweighted mean of per-user metrics, reduced in sorted user-id order."""
    missing = set(sets) - set(truth)
    if missing:
        raise KeyError(f"no ground truth for users {sorted(missing)[:5]}")
    risks, ndcgs, recalls, sizes, reps = [], [], [], [], []
    skipped = 0
    for u in sorted(sets):
        s, t = sets[u], truth[u]
        risks.append(risk_fraction(s, t.flags))
        ndcgs.append(ndcg_at_k(s, t.relevance, k))
        relevant = [i for i, r in t.relevance.items() if r > 0]
        if relevant:
            recalls.append(recall_at_k(s, relevant, k))
        else:
            skipped += 1
        sizes.append(len(s))
        reps.append(s.n_replacements / len(s) if len(s) else 0.0)

    def mean(xs):
        return math.fsum(xs) / len(xs) if xs else 0.0

    return EvalReport(
        risk=mean(risks),
        ndcg_at_k=mean(ndcgs),
        recall_at_k=mean(recalls),
        mean_set_size=mean(sizes),
        repeated_fraction=mean(reps),
        k=k,
        n_users=len(sets),
        n_recall_skipped=skipped,
    )
