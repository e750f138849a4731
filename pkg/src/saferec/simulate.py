"""Synthetic interaction logs with known flag probabilities.

Each user belongs to a low- or high-reporting group. Every item carries a
latent harm level ``h`` in [0, 1]; a user in group ``g`` flags a first view
with probability ``rate_g * (gamma_g + 1) * h**gamma_g``, whose mean over
items is exactly ``rate_g``. Larger ``gamma`` concentrates a group's flags on
the most harmful items.

Watch fractions are zero-inflated: a point mass at 0, a LogNormal (or
Weibull) body truncated to (0, 100], and an overlong tail above 100.

A share of first views is followed by a second view. An item not flagged the
first time is flagged on the second view with probability
``second_view_flag_prob`` only if its first watch fraction was below
``second_view_watch_cutoff``; any safe pool with ``beta >= cutoff`` is
therefore exactly safe.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .data import InteractionRecord, watch_fraction
from .ranker import ScoreTable
from .selection import REPLACEMENT, UserCandidates, parse_beta, recommend

SCORE_MODES = ("item", "user", "engagement")
WATCH_BODIES = ("lognormal", "weibull")
_T0 = 1_649_376_000_000  # 2022-04-08 UTC, ms
_GAP = 60_000


@dataclass
class SimConfig:
    n_users: int = 1000
    n_items: int = 2000
    interactions_per_user: int = 30
    flag_prob_low: float = 0.02
    flag_prob_high: float = 0.2
    frac_high_reporters: float = 0.3
    zero_watch_prob: float = 0.21
    watch_lognormal_mu: float = math.log(40.0)
    watch_lognormal_sigma: float = 1.0
    overlong_prob: float = 0.05
    second_view_flag_prob: float = 0.1
    second_view_watch_cutoff: float = 30.0
    score_noise_sigma: float = 0.02
    seed: int = 0
    # beyond the core behavioural parameters
    repeat_prob: float = 0.3
    reflag_prob: float = 0.5
    harm_sharpness_low: float = 3.0
    harm_sharpness_high: float = 1.0
    watch_body: str = "lognormal"
    weibull_shape: float = 1.2
    weibull_scale: float = 40.0
    overlong_lognormal_mu: float = -1.0
    overlong_lognormal_sigma: float = 0.75
    duration_median_s: float = 10.0
    duration_sigma: float = 0.5
    score_mode: str = "item"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        probs = [
            "flag_prob_low", "flag_prob_high", "frac_high_reporters", "zero_watch_prob",
            "overlong_prob", "second_view_flag_prob", "repeat_prob", "reflag_prob",
        ]
        for name in probs:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.zero_watch_prob + self.overlong_prob > 1.0:
            raise ValueError("zero_watch_prob + overlong_prob must not exceed 1")
        for name in ("watch_lognormal_sigma", "overlong_lognormal_sigma", "duration_sigma", "weibull_shape", "weibull_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.score_noise_sigma < 0:
            raise ValueError("score_noise_sigma must be >= 0")
        if min(self.harm_sharpness_low, self.harm_sharpness_high) < 0:
            raise ValueError("harm sharpness must be >= 0")
        if self.n_users < 1 or self.n_items < 1 or self.interactions_per_user < 1:
            raise ValueError("n_users, n_items and interactions_per_user must be >= 1")
        if self.watch_body not in WATCH_BODIES:
            raise ValueError(f"watch_body must be one of {WATCH_BODIES}")
        if self.score_mode not in SCORE_MODES:
            raise ValueError(f"score_mode must be one of {SCORE_MODES}")

    def replace(self, **kw) -> "SimConfig":
        return SimConfig(**{**asdict(self), **kw})

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SimConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "SimConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))


@dataclass
class SimTruth:
    flag_prob: dict[tuple[str, str], float] = field(default_factory=dict)
    second_view_prob: dict[tuple[str, str], float] = field(default_factory=dict)
    group: dict[str, str] = field(default_factory=dict)
    item_harm: dict[str, float] = field(default_factory=dict)


@dataclass
class SimResult:
    records: list[InteractionRecord]
    truth: SimTruth
    scores: ScoreTable
    config: SimConfig


def user_id(j: int) -> str:
    return f"u{j:06d}"


def item_id(j: int) -> str:
    return f"i{j:06d}"


def harm_weight(h: np.ndarray, gamma: float) -> np.ndarray:
    """Item weight with mean 1 under uniform harm."""
    return (gamma + 1.0) * np.power(h, gamma)


def sample_watch_fraction(rng: np.random.Generator, size: int, cfg: SimConfig) -> np.ndarray:
    """Draw watch fractions (percent) from the zero-inflated mixture."""
    u = rng.random(size)
    v = 1.0 - rng.random(size)  # (0, 1]
    tail = rng.standard_normal(size)
    out = np.zeros(size)
    over = (u >= cfg.zero_watch_prob) & (u < cfg.zero_watch_prob + cfg.overlong_prob)
    body = u >= cfg.zero_watch_prob + cfg.overlong_prob
    if cfg.watch_body == "lognormal":
        mu, sig = cfg.watch_lognormal_mu, cfg.watch_lognormal_sigma
        cap = ndtr((math.log(100.0) - mu) / sig)
        out[body] = np.exp(mu + sig * ndtri(v[body] * cap))
    else:
        c, lam = cfg.weibull_shape, cfg.weibull_scale
        cap = 1.0 - math.exp(-((100.0 / lam) ** c))
        out[body] = lam * np.power(-np.log1p(-v[body] * cap), 1.0 / c)
    out[body] = np.minimum(out[body], 100.0)
    out[over] = 100.0 * (1.0 + np.exp(cfg.overlong_lognormal_mu + cfg.overlong_lognormal_sigma * tail[over]))
    return out


def generate(config: SimConfig) -> SimResult:
    """Simulate a population; identical config (incl. seed) gives identical output.

    Users draw from independent random streams keyed by ``(seed, user index)``.
    """
    cfg = config
    cfg.validate()
    irng = np.random.default_rng([cfg.seed, 0])
    harm = irng.random(cfg.n_items)
    durations = np.maximum(
        np.round(np.exp(math.log(cfg.duration_median_s) + cfg.duration_sigma * irng.standard_normal(cfg.n_items)), 1), 0.5
    )
    w_low = harm_weight(harm, cfg.harm_sharpness_low)
    w_high = harm_weight(harm, cfg.harm_sharpness_high)
    q_low = np.clip(cfg.flag_prob_low * w_low, 0.0, 1.0)
    q_high = np.clip(cfg.flag_prob_high * w_high, 0.0, 1.0)
    q_pooled = (1 - cfg.frac_high_reporters) * q_low + cfg.frac_high_reporters * q_high

    truth = SimTruth(item_harm={item_id(j): float(h) for j, h in enumerate(harm)})
    scores: dict[tuple[str, str], float] = {}
    records: list[InteractionRecord] = []
    n_int = min(cfg.interactions_per_user, cfg.n_items)

    for j in range(cfg.n_users):
        rng = np.random.default_rng([cfg.seed, 1, j])
        uid = user_id(j)
        high = bool(rng.random() < cfg.frac_high_reporters)
        truth.group[uid] = "high" if high else "low"
        items = rng.choice(cfg.n_items, size=n_int, replace=False)
        q = (q_high if high else q_low)[items]
        w1 = sample_watch_fraction(rng, n_int, cfg)
        flag1 = rng.random(n_int) < q
        noise = rng.standard_normal(n_int) * cfg.score_noise_sigma
        repeat = rng.random(n_int) < cfg.repeat_prob
        w2 = sample_watch_fraction(rng, n_int, cfg)
        u2 = rng.random(n_int)

        second = []
        for pos, it in enumerate(items):
            iid = item_id(int(it))
            dur = float(durations[it])
            r1 = InteractionRecord(uid, iid, _T0 + j + pos * _GAP, float(w1[pos]) / 100.0 * dur, dur, bool(flag1[pos]), 1)
            records.append(r1)
            truth.flag_prob[(uid, iid)] = float(q[pos])
            if cfg.score_mode == "item":
                base = 1.0 - q_pooled[it]
            elif cfg.score_mode == "user":
                base = 1.0 - q[pos]
            else:
                base = min(w1[pos], 100.0) / 100.0
            scores[(uid, iid)] = float(base + noise[pos])
            if repeat[pos]:
                # cutoff applied to the stored fraction so float round-off cannot leak past beta
                if r1.flagged:
                    p2 = cfg.reflag_prob
                else:
                    p2 = cfg.second_view_flag_prob if watch_fraction(r1) < cfg.second_view_watch_cutoff else 0.0
                truth.second_view_prob[(uid, iid)] = p2
                ts = _T0 + j + (n_int + len(second)) * _GAP
                second.append(InteractionRecord(uid, iid, ts, float(w2[pos]) / 100.0 * dur, dur, bool(u2[pos] < p2), 2))
        records.extend(second)

    records.sort(key=lambda r: (r.user_id, r.timestamp))
    return SimResult(records, truth, ScoreTable(scores), cfg)


def population_candidates(
    sim: SimResult,
    users: Sequence[str] | None = None,
    relevance_threshold: float = 50.0,
) -> list[UserCandidates]:
    """Per-user candidates: one-off views are fresh candidates, re-viewed items form the history.

    Used to build user-disjoint calibration and test populations directly from
    the generative model.
    """
    by_user: dict[str, list[InteractionRecord]] = {}
    for r in sim.records:
        by_user.setdefault(r.user_id, []).append(r)
    out = []
    for uid in (users if users is not None else sorted(by_user)):
        recs = by_user.get(uid, [])
        second = {r.item_id: r for r in recs if r.view_index == 2}
        firsts = [r for r in recs if r.view_index == 1]
        fresh = [r for r in firsts if r.item_id not in second]
        hist = tuple(r for r in firsts if r.item_id in second)
        out.append(
            UserCandidates(
                user_id=uid,
                items=tuple(r.item_id for r in fresh),
                scores=[sim.scores.score(uid, r.item_id) for r in fresh],
                flags=[r.flagged for r in fresh],
                history=hist,
                revealed={i: r.flagged for i, r in second.items()},
                relevance={r.item_id: float(watch_fraction(r) >= relevance_threshold) for r in fresh},
            )
        )
    return out


def split_population(sim: SimResult, n_calibration: int, relevance_threshold: float = 50.0):
    """First ``n_calibration`` users calibrate, the rest are test users."""
    users = sorted({r.user_id for r in sim.records})
    cands = population_candidates(sim, users, relevance_threshold)
    cal = [c for c in cands[:n_calibration] if len(c.items)]
    test = cands[n_calibration:]
    return cal, test


@dataclass(frozen=True)
class OracleRisk:
    value: float
    stderr: float = 0.0
    approximate: bool = False


def _set_probs(user: UserCandidates, lam: float, strategy: str, beta, truth: SimTruth, k: int) -> list[float]:
    pool = user.safe_pool(beta) if strategy == "replace" else None
    rs = recommend(user.user_id, user.scored, pool, lam, k)
    probs = []
    for r in rs.items:
        key = (user.user_id, r.item_id)
        probs.append(truth.second_view_prob[key] if r.provenance == REPLACEMENT else truth.flag_prob[key])
    return probs


def oracle_expected_risk(
    users: Sequence[UserCandidates],
    lam: float,
    strategy: str,
    beta,
    truth: SimTruth,
    k: int,
    method: str = "exact",
    enumeration_cap: int = 16,
    n_mc: int = 20000,
    seed: int = 0,
) -> OracleRisk:
    """Expected flagged fraction of the policy's sets under the generative model.

    The sets are fixed given scores and histories; only the flags of the
    recommended items are random. ``method="exact"`` sums probabilities,
    ``method="enumerate"`` brute-forces every flag outcome and falls back to
    Monte Carlo for sets larger than ``enumeration_cap`` (the result is then
    marked approximate with its standard error).
    """
    if method not in ("exact", "enumerate"):
        raise ValueError("method must be 'exact' or 'enumerate'")
    parse_beta(beta)
    rng = np.random.default_rng(seed)
    vals, var, approx = [], 0.0, False
    for u in sorted(users, key=lambda c: c.user_id):
        p = _set_probs(u, lam, strategy, beta, truth, k)
        m = len(p)
        if m == 0:
            vals.append(0.0)
        elif method == "exact":
            vals.append(math.fsum(p) / m)
        elif m <= enumeration_cap:
            total = 0.0
            for outcome in product((0, 1), repeat=m):
                w = 1.0
                for o, pi in zip(outcome, p):
                    w *= pi if o else 1.0 - pi
                total += w * sum(outcome) / m
            vals.append(total)
        else:
            draws = (rng.random((n_mc, m)) < np.asarray(p)).mean(axis=1)
            vals.append(float(draws.mean()))
            var += float(draws.var(ddof=1)) / n_mc
            approx = True
    n = len(vals)
    if n == 0:
        return OracleRisk(0.0)
    return OracleRisk(math.fsum(vals) / n, math.sqrt(var) / n, approx)
