"""Threshold filtering, safe-pool construction and top-k set assembly.

:func:`recommend` is the deployed pipeline: keep candidates scoring at least
``lambda_hat``, then fill the remaining slots with previously seen items that
were never flagged and were watched past ``beta`` percent. With an empty safe
pool it degenerates to plain removal.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import InteractionRecord, watch_fraction

FRESH = "fresh"
REPLACEMENT = "replacement"
NO_FILTER = -math.inf


@dataclass(frozen=True)
class SafeItem:
    item_id: str
    watch_fraction: float
    last_view: int


@dataclass(frozen=True)
class SafePool:
    """Previously shown, never-flagged items watched past ``beta`` percent.

    ``beta = -inf`` means no watch-fraction filter.
    """

    user_id: str
    items: tuple[SafeItem, ...] = ()
    beta: float = NO_FILTER

    def __len__(self):
        return len(self.items)

    def __contains__(self, item_id):
        return any(s.item_id == item_id for s in self.items)

    @property
    def item_ids(self) -> list[str]:
        return [s.item_id for s in self.items]


@dataclass(frozen=True)
class RecItem:
    item_id: str
    provenance: str
    ordering_value: float


@dataclass(frozen=True)
class RecommendationSet:
    user_id: str
    items: tuple[RecItem, ...]
    k_requested: int
    lambda_used: float

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def item_ids(self) -> list[str]:
        return [r.item_id for r in self.items]

    @property
    def n_replacements(self) -> int:
        return sum(r.provenance == REPLACEMENT for r in self.items)


def parse_beta(beta) -> float:
    """Accept a percent value or ``None``/``"none"`` for no filter."""
    if beta is None:
        return NO_FILTER
    if isinstance(beta, str):
        if beta.strip().lower() in ("none", ""):
            return NO_FILTER
        return float(beta)
    return float(beta)


def beta_label(beta: float) -> str:
    return "none" if beta == NO_FILTER else f"{beta:g}"


def filter_candidates(scored: Iterable[tuple[str, float]], lam: float) -> set[str]:
    """Items whose score is at least ``lam``."""
    return {item for item, s in scored if s >= lam}


def build_safe_pool(
    history: Sequence[InteractionRecord],
    beta=None,
    cap: int | None = None,
) -> SafePool:
    """Collect replacement candidates from one user's prior views.

    An item qualifies when none of its views was flagged and its largest
    watch fraction is strictly above ``beta``. Items are ordered by watch
    fraction (descending), then most recent view first, then item id.
    """
    b = parse_beta(beta)
    users = {r.user_id for r in history}
    if len(users) > 1:
        raise ValueError(f"history spans several users: {sorted(users)[:3]}")
    user = next(iter(users)) if users else ""

    flagged: set[str] = set()
    best: dict[str, float] = {}
    last: dict[str, int] = {}
    for r in history:
        if r.flagged:
            flagged.add(r.item_id)
        w = watch_fraction(r)
        if w > best.get(r.item_id, -math.inf):
            best[r.item_id] = w
        last[r.item_id] = max(last.get(r.item_id, r.timestamp), r.timestamp)

    keep = [SafeItem(i, best[i], last[i]) for i in best if i not in flagged and best[i] > b]
    keep.sort(key=lambda s: (-s.watch_fraction, -s.last_view, s.item_id))
    if cap is not None:
        keep = keep[:cap]
    return SafePool(user, tuple(keep), b)


def recommend(
    user: str,
    scored: Sequence[tuple[str, float]],
    safe_pool: SafePool | None,
    lambda_hat: float,
    k: int,
) -> RecommendationSet:
    """Top-k set from candidates above ``lambda_hat`` backed by safe replacements.

    Fresh candidates (ordered by score, ties by item id) fill the slots first;
    pool items not already present fill the rest in pool order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    fresh = [(i, s) for i, s in scored if s >= lambda_hat]
    fresh.sort(key=lambda t: (-t[1], t[0]))
    out = [RecItem(i, FRESH, float(s)) for i, s in fresh[:k]]
    if safe_pool is not None and len(out) < k:
        taken = {i for i, _ in fresh}
        for s in safe_pool.items:
            if len(out) >= k:
                break
            if s.item_id not in taken:
                out.append(RecItem(s.item_id, REPLACEMENT, s.watch_fraction))
                taken.add(s.item_id)
    return RecommendationSet(user, tuple(out), k, float(lambda_hat))


@dataclass
class UserCandidates:
    """Everything needed to build and score one user's recommendation set.

    Parameters
    ----------
    items, scores, flags
        Fresh candidates with ranker scores and the user's observed flag.
    history
        Prior views used to build the safe pool.
    revealed
        Flag observed when a history item was shown again; only items listed
        here can serve as replacements in an offline evaluation.
    relevance
        Graded relevance of candidates for nDCG/recall.
    """

    user_id: str
    items: tuple[str, ...]
    scores: np.ndarray
    flags: np.ndarray
    history: tuple[InteractionRecord, ...] = ()
    revealed: dict[str, bool] = field(default_factory=dict)
    relevance: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.items = tuple(self.items)
        self.scores = np.asarray(self.scores, dtype=float)
        self.flags = np.asarray(self.flags, dtype=bool)
        if not (len(self.items) == len(self.scores) == len(self.flags)):
            raise ValueError("items, scores and flags must have equal length")

    @property
    def scored(self) -> list[tuple[str, float]]:
        return list(zip(self.items, self.scores.tolist()))

    def safe_pool(self, beta=None, cap: int | None = None) -> SafePool:
        hist = [r for r in self.history if r.item_id in self.revealed]
        pool = build_safe_pool(hist, beta, cap)
        return SafePool(self.user_id, pool.items, pool.beta)

    def flag_map(self, replacement_flags: str = "revealed") -> dict[str, bool]:
        """Flags for every item that can appear in this user's set.

        ``replacement_flags="assumed"`` treats replacements as unflagged,
        which is all that is known about them before they are re-shown.
        """
        if replacement_flags == "revealed":
            flags = {i: bool(v) for i, v in self.revealed.items()}
        elif replacement_flags == "assumed":
            flags = {i: False for i in self.revealed}
        else:
            raise ValueError(f"replacement_flags must be 'revealed' or 'assumed', got {replacement_flags!r}")
        flags.update(zip(self.items, self.flags.tolist()))
        return flags


def write_recommendations(sets: Iterable[RecommendationSet], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "rank", "item_id", "provenance", "ordering_value", "lambda"])
        for rs in sets:
            for rank, r in enumerate(rs.items, start=1):
                w.writerow([rs.user_id, rank, r.item_id, r.provenance, repr(float(r.ordering_value)), repr(float(rs.lambda_used))])


def read_recommendations(path: str | Path, k: int) -> dict[str, RecommendationSet]:
    rows: dict[str, list] = {}
    lam: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["user_id"], []).append(
                (int(row["rank"]), RecItem(row["item_id"], row["provenance"], float(row["ordering_value"])))
            )
            lam[row["user_id"]] = float(row["lambda"])
    return {
        u: RecommendationSet(u, tuple(r for _, r in sorted(v, key=lambda t: t[0])), k, lam[u])
        for u, v in rows.items()
    }


def as_mapping(sets: Iterable[RecommendationSet]) -> Mapping[str, RecommendationSet]:
    return {s.user_id: s for s in sets}
