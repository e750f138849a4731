"""Conformal risk control over a score threshold.

The empirical risk of a threshold is the mean, over calibration users, of the
flagged fraction of the set :func:`~saferec.selection.recommend` would build
for that user. The selected threshold is the smallest grid value whose
finite-sample inflated risk ``n/(n+1) * R + 1/(n+1)`` is at most ``alpha``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InfeasibleAlphaError
from .metrics import risk_fraction
from .selection import SafePool, UserCandidates, recommend

STRATEGIES = ("remove", "replace")


@dataclass(frozen=True)
class RiskCurve:
    grid: np.ndarray
    risk_at: np.ndarray
    n: int
    monotonized: bool = False

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        risk = np.asarray(self.risk_at, dtype=float)
        if grid.ndim != 1 or grid.shape != risk.shape or len(grid) == 0:
            raise ValueError("grid and risk_at must be equal-length non-empty vectors")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly ascending")
        if np.any(risk < 0) or np.any(risk > 1):
            raise ValueError("risk values must lie in [0, 1]")
        if self.n < 1:
            raise ValueError("calibration size must be >= 1")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "risk_at", risk)

    def inflated(self) -> np.ndarray:
        n = self.n
        return n / (n + 1) * self.risk_at + 1 / (n + 1)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "risk", "inflated_risk"])
            for lam, r, ir in zip(self.grid, self.risk_at, self.inflated()):
                w.writerow([repr(float(lam)), repr(float(r)), repr(float(ir))])


@dataclass(frozen=True)
class ThresholdResult:
    alpha: float
    lambda_hat: float
    feasible: bool
    inflated_risk_at_lambda: float
    n: int

    def to_json(self) -> str:
        d = asdict(self)
        # JSON has no infinity
        d["lambda_hat"] = None if math.isinf(self.lambda_hat) else self.lambda_hat
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ThresholdResult":
        d = json.loads(text)
        lam = d["lambda_hat"]
        return cls(
            alpha=float(d["alpha"]),
            lambda_hat=math.inf if lam is None else float(lam),
            feasible=bool(d["feasible"]),
            inflated_risk_at_lambda=float(d["inflated_risk_at_lambda"]),
            n=int(d["n"]),
        )


def default_grid(calibration: Sequence[UserCandidates]) -> np.ndarray:
    """Distinct calibration scores plus one value just above the largest.

    The risk curve only changes at observed scores, and the sentinel makes
    the all-removed threshold reachable.
    """
    scores = np.unique(np.concatenate([np.asarray(c.scores, dtype=float) for c in calibration]))
    return np.append(scores, np.nextafter(scores[-1], np.inf))


def user_risk_steps(
    user: UserCandidates,
    k: int,
    pool: SafePool | None,
    replacement_flags: str = "assumed",
) -> tuple[np.ndarray, np.ndarray]:
    """Risk of one user's set as a step function of the threshold.

    Returns ``(thresholds, risks)`` where ``thresholds`` are the user's
    distinct scores ascending and ``risks[j]`` is the risk for any lambda in
    ``(thresholds[j-1], thresholds[j]]``; ``risks[-1]`` covers lambdas above
    every score.
    """
    thresholds = np.unique(user.scores)
    flags = user.flag_map(replacement_flags)
    scored = user.scored
    risks = np.empty(len(thresholds) + 1)
    for j, lam in enumerate(thresholds):
        risks[j] = risk_fraction(recommend(user.user_id, scored, pool, lam, k), flags)
    risks[-1] = risk_fraction(recommend(user.user_id, scored, pool, math.inf, k), flags)
    return thresholds, risks


def empirical_risk_curve(
    calibration: Sequence[UserCandidates],
    k: int,
    strategy: str = "remove",
    safe_pools: Mapping[str, SafePool] | None = None,
    grid=None,
    replacement_flags: str = "assumed",
) -> RiskCurve:
    """Mean per-user risk at every grid threshold.

    Sets are built exactly as at deployment. With ``strategy="replace"``
    each user's pool comes from ``safe_pools`` (missing users get none).
    Replacement items count as unflagged unless ``replacement_flags`` is
    ``"revealed"``; at calibration time their second-view outcome is unknown.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if strategy == "replace" and safe_pools is None:
        raise ValueError("strategy 'replace' needs safe_pools")
    if not calibration:
        raise ValueError("calibration set is empty")
    for c in calibration:
        if len(c.items) == 0:
            raise ValueError(f"calibration user {c.user_id!r} has no candidates")
    grid = default_grid(calibration) if grid is None else np.asarray(grid, dtype=float)

    users = sorted(calibration, key=lambda c: c.user_id)
    table = np.empty((len(users), len(grid)))
    for row, c in enumerate(users):
        pool = safe_pools.get(c.user_id) if strategy == "replace" else None
        thresholds, risks = user_risk_steps(c, k, pool, replacement_flags)
        table[row] = risks[np.searchsorted(thresholds, grid, side="left")]
    return RiskCurve(grid, table.mean(axis=0), n=len(users), monotonized=False)


def monotonize(curve: RiskCurve) -> RiskCurve:
    """Replace each risk by the maximum over all larger-or-equal thresholds."""
    suffix_max = np.maximum.accumulate(curve.risk_at[::-1])[::-1]
    return RiskCurve(curve.grid, suffix_max, curve.n, monotonized=True)


def select_threshold(curve: RiskCurve, alpha: float) -> ThresholdResult:
    """Smallest grid threshold whose inflated empirical risk is <= ``alpha``.

    The curve is monotonized first if it is not already. When no grid value
    qualifies the result is infeasible with ``lambda_hat = inf``.

    Raises
    ------
    InfeasibleAlphaError
        If ``alpha < 1/(n+1)``: even zero empirical risk cannot qualify.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    n = curve.n
    if alpha < 1 / (n + 1):
        raise InfeasibleAlphaError(
            f"alpha too small for calibration size: alpha={alpha} < 1/(n+1)={1 / (n + 1):.6g} with n={n}"
        )
    if not curve.monotonized:
        curve = monotonize(curve)
    inflated = curve.inflated()
    ok = np.flatnonzero(inflated <= alpha)
    if len(ok) == 0:
        return ThresholdResult(alpha, math.inf, False, float(inflated[-1]), n)
    j = ok[0]
    return ThresholdResult(alpha, float(curve.grid[j]), True, float(inflated[j]), n)


def calibration_fingerprint(calibration: Sequence[UserCandidates], k: int, extra: str = "") -> str:
    """Stable hash of the calibration data a threshold depends on."""
    h = hashlib.sha256()
    h.update(f"k={k};{extra}".encode())
    for c in sorted(calibration, key=lambda c: c.user_id):
        h.update(c.user_id.encode() + b"\0")
        h.update("\0".join(c.items).encode())
        h.update(np.ascontiguousarray(c.scores, dtype=float).tobytes())
        h.update(np.ascontiguousarray(c.flags, dtype=bool).tobytes())
        for r in c.history:
            h.update(f"{r.item_id}|{r.timestamp}|{r.watch_time!r}|{r.duration!r}|{int(r.flagged)}".encode())
        h.update(json.dumps(sorted(c.revealed.items())).encode())
    return h.hexdigest()[:16]


class ThresholdCache:
    """Persistent ``(alpha, strategy, beta, dataset hash) -> ThresholdResult`` map."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.entries: dict[str, dict] = {}
        self.hits = 0
        self.misses = 0
        if self.path and self.path.exists():
            self.entries = json.loads(self.path.read_text())

    @staticmethod
    def key(alpha: float, strategy: str, beta: str, dataset_hash: str) -> str:
        return f"{alpha!r}|{strategy}|{beta}|{dataset_hash}"

    def get(self, alpha, strategy, beta, dataset_hash) -> ThresholdResult | None:
        hit = self.entries.get(self.key(alpha, strategy, beta, dataset_hash))
        if hit is None:
            self.misses += 1
            return None
        self.hits += 1
        return ThresholdResult.from_json(json.dumps(hit))

    def put(self, strategy, beta, dataset_hash, result: ThresholdResult) -> None:
        self.entries[self.key(result.alpha, strategy, beta, dataset_hash)] = json.loads(result.to_json())

    def update(self, other: "ThresholdCache") -> None:
        self.entries.update(other.entries)
        self.hits += other.hits
        self.misses += other.misses

    def save(self) -> None:
        if self.path:
            self.path.write_text(json.dumps(self.entries, indent=1, sort_keys=True))
