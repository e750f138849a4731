"""End-to-end experiment runs and (alpha, beta, strategy, seed) sweeps."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .calibration import (
    STRATEGIES,
    ThresholdCache,
    ThresholdResult,
    calibration_fingerprint,
    empirical_risk_curve,
    select_threshold,
)
from .data import (
    DatasetSplit,
    InteractionRecord,
    Schema,
    k_core_filter,
    load_interactions,
    split,
    watch_fraction,
)
from .errors import InfeasibleAlphaError
from .metrics import REPORT_COLUMNS, UserTruth, evaluate
from .ranker import Scorer, ScoreTable, load_scorer, train_latent_factor
from .selection import RecommendationSet, SafePool, UserCandidates, beta_label, parse_beta, recommend
from .simulate import SimConfig, generate, split_population

_log = logging.getLogger(__name__)

RESULT_COLUMNS = REPORT_COLUMNS + [
    "lambda_hat", "feasible", "status", "inflated_cal_risk", "base_risk",
    "target_reduction", "achieved_reduction", "n_recall_skipped",
]
GROUP_COLUMNS = ["group"] + RESULT_COLUMNS
SUMMARY_METRICS = ["risk", "ndcg", "recall", "mean_set_size", "repeated_fraction", "achieved_reduction", "target_reduction", "lambda_hat"]
REMOVE_BETA = "-"

DECISIONS = {
    "reduction": "achieved_reduction = 1 - risk(lambda_hat) / risk(no filtering); target_reduction = 1 - alpha / risk(no filtering); both per run",
    "risk_aggregation": "per-user flagged fraction of sets of size <= k, unweighted mean over users",
    "empty_set_risk": "0",
    "relevance": "candidate is relevant when its held-out watch fraction >= relevance_threshold percent",
    "interleaving": "fresh candidates (score order) fill slots before safe replacements (watch-fraction order)",
    "calibration_replacement_flags": "replacements count as unflagged during calibration; their second-view flag is used at test time",
    "grid": "distinct calibration scores plus one value just above the maximum",
    "monotonization": "suffix maximum of the mean risk curve before threshold selection",
    "beta": "strict: watch fraction > beta; 'none' disables the filter",
    "safe_pool_flags": "an item flagged on any prior view is excluded",
}


@dataclass
class ExperimentConfig:
    dataset: dict
    scorer: dict = field(default_factory=lambda: {"kind": "simulated"})
    k: int = 20
    alphas: list = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.3, 0.5])
    betas: list = field(default_factory=lambda: ["none"])
    strategies: list = field(default_factory=lambda: ["remove", "replace"])
    seeds: list = field(default_factory=lambda: [0])
    out: str = "runs/experiment"
    k_core: int | None = None
    fractions: list = field(default_factory=lambda: [0.70, 0.15, 0.15])
    relevance_threshold: float = 50.0
    hx_threshold: float = 0.1
    pool_cap: int | None = None
    workers: int = 1
    plots: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        for a in self.alphas:
            if not 0 < float(a) < 1:
                raise ValueError(f"alpha values must be in (0, 1), got {a}")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        for b in self.betas:
            parse_beta(b)
        if "path" not in self.dataset and "simulate" not in self.dataset:
            raise ValueError("dataset needs 'path' or 'simulate'")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def data_digest(self) -> str:
        """Hash of the settings that shape calibration data, not the sweep grid."""
        keys = ("dataset", "scorer", "k", "k_core", "fractions", "relevance_threshold")
        d = {key: getattr(self, key) for key in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# building per-user candidates


def reporting_rates(records: Iterable[InteractionRecord]) -> dict[str, float]:
    """Per-user percent of views that were flagged."""
    views: dict[str, int] = {}
    flags: dict[str, int] = {}
    for r in records:
        views[r.user_id] = views.get(r.user_id, 0) + 1
        flags[r.user_id] = flags.get(r.user_id, 0) + int(r.flagged)
    return {u: 100.0 * flags[u] / views[u] for u in views}


def candidates_from_split(
    ds: DatasetSplit,
    scorer: Scorer,
    part: str,
    relevance_threshold: float = 50.0,
) -> list[UserCandidates]:
    """Candidates for ``part`` ("calibration" or "test") with repeat-view histories.

    A user's replacement history is the first view (from train or
    calibration) of every item re-viewed in the repeated pool; the flag of
    that re-view is what a replacement reveals.
    """
    records = {"calibration": ds.calibration, "test": ds.test}[part]
    revealed: dict[str, dict[str, bool]] = {}
    for r in ds.repeated_pool:
        if r.view_index == 2:
            revealed.setdefault(r.user_id, {})[r.item_id] = r.flagged
    history: dict[str, list[InteractionRecord]] = {}
    for r in (*ds.train, *ds.calibration):
        if r.item_id in revealed.get(r.user_id, ()):
            history.setdefault(r.user_id, []).append(r)

    by_user: dict[str, list[InteractionRecord]] = {}
    for r in records:
        by_user.setdefault(r.user_id, []).append(r)
    out = []
    for u in sorted(by_user):
        recs = by_user[u]
        rev = revealed.get(u, {})
        hist = tuple(history.get(u, ()))
        out.append(
            UserCandidates(
                user_id=u,
                items=tuple(r.item_id for r in recs),
                scores=[scorer.score(u, r.item_id) for r in recs],
                flags=[r.flagged for r in recs],
                history=hist,
                revealed={h.item_id: rev[h.item_id] for h in hist},
                relevance={r.item_id: float(watch_fraction(r) >= relevance_threshold) for r in recs},
            )
        )
    return out


def safe_pools(users: Sequence[UserCandidates], beta, cap: int | None = None) -> dict[str, SafePool]:
    return {u.user_id: u.safe_pool(beta, cap) for u in users}


def recommend_all(
    users: Sequence[UserCandidates], pools: Mapping[str, SafePool] | None, lam: float, k: int
) -> dict[str, RecommendationSet]:
    return {u.user_id: recommend(u.user_id, u.scored, pools.get(u.user_id) if pools else None, lam, k) for u in users}


def truth_for(users: Sequence[UserCandidates]) -> dict[str, UserTruth]:
    return {u.user_id: UserTruth(u.flag_map("revealed"), u.relevance) for u in users}


# --------------------------------------------------------------------------
# one seed of a sweep


@dataclass
class PreparedRun:
    seed: int
    calibration: list[UserCandidates]
    test: list[UserCandidates]
    hx: dict[str, float]
    dataset_hash: str
    meta: dict = field(default_factory=dict)


def _build_scorer(cfg: ExperimentConfig, seed: int, train: Sequence[InteractionRecord], sim_scores: ScoreTable | None) -> Scorer:
    spec = dict(cfg.scorer)
    kind = spec.pop("kind", "simulated")
    if kind == "simulated":
        if sim_scores is None:
            raise ValueError("scorer kind 'simulated' needs a simulated dataset")
        return sim_scores
    if kind == "score-table":
        return ScoreTable.from_csv(spec["path"], default=spec.get("default"))
    if kind == "model":
        return load_scorer(spec["path"])
    if kind == "latent-factor":
        return train_latent_factor(train, seed=seed, **spec)
    raise ValueError(f"unknown scorer kind {kind!r}")


def prepare_run(cfg: ExperimentConfig, seed: int, records: list[InteractionRecord] | None = None) -> PreparedRun:
    """Materialise calibration and test candidates for one seed."""
    sim = None
    if "simulate" in cfg.dataset:
        sim_cfg = SimConfig.from_dict({**cfg.dataset["simulate"], "seed": seed})
        sim = generate(sim_cfg)
        records = sim.records
    elif records is None:
        records, _ = load_interactions(cfg.dataset["path"], Schema.from_dict(cfg.dataset.get("schema", {})))
    if cfg.k_core:
        records = k_core_filter(records, cfg.k_core)
    hx = reporting_rates(records)

    if sim is not None and cfg.dataset.get("split", "interaction") == "user":
        if cfg.scorer.get("kind", "simulated") != "simulated":
            raise ValueError("user-level simulated split supports only the simulated scorer")
        n_cal = int(cfg.dataset.get("n_calibration", sim.config.n_users // 2))
        cal, test = split_population(sim, n_cal, cfg.relevance_threshold)
    else:
        ds = split(records, tuple(cfg.fractions), seed)
        scorer = _build_scorer(cfg, seed, ds.train, sim.scores if sim else None)
        cal = [c for c in candidates_from_split(ds, scorer, "calibration", cfg.relevance_threshold) if len(c.items)]
        test = candidates_from_split(ds, scorer, "test", cfg.relevance_threshold)

    digest = calibration_fingerprint(cal, cfg.k, extra=f"cap={cfg.pool_cap};data={cfg.data_digest()};seed={seed}")
    return PreparedRun(seed, cal, test, hx, digest, {"n_calibration": len(cal), "n_test": len(test)})


def _reduction(base: float, risk: float) -> float:
    return 1.0 - risk / base if base > 0 else float("nan")


def _status(th: ThresholdResult) -> str:
    if th.feasible:
        return "ok"
    if th.alpha < 1 / (th.n + 1):
        return "alpha_below_inflation"
    return "no_feasible_threshold"


def _group_of(hx: float, threshold: float) -> str:
    return "low" if hx < threshold else "high"


def group_report(
    sets: Mapping[str, RecommendationSet],
    truth: Mapping[str, UserTruth],
    base_sets: Mapping[str, RecommendationSet],
    hx: Mapping[str, float],
    k: int,
    threshold: float = 0.1,
    **context,
) -> list[dict]:
    """Metrics split into low (``H_X < threshold``) and high reporters.

    An empty group yields a row with ``n_users = 0``.
    """
    rows = []
    for g in ("low", "high"):
        users = [u for u in sets if _group_of(hx.get(u, 0.0), threshold) == g]
        sub = {u: sets[u] for u in users}
        rep = evaluate(sub, truth, k)
        base = evaluate({u: base_sets[u] for u in users}, truth, k).risk
        row = rep.row(**context)
        row.update(group=g, base_risk=base, achieved_reduction=_reduction(base, rep.risk))
        alpha = context.get("alpha")
        if alpha not in (None, ""):
            row["target_reduction"] = _reduction(base, float(alpha))
        rows.append(row)
    return rows


def run_seed(cfg: ExperimentConfig, seed: int, cache: ThresholdCache, records=None) -> tuple[list[dict], list[dict], dict]:
    """All sweep cells for one seed, in deterministic order."""
    prep = prepare_run(cfg, seed, records)
    test_truth = truth_for(prep.test)
    base_sets = recommend_all(prep.test, None, -math.inf, cfg.k)
    base_risk = evaluate(base_sets, test_truth, cfg.k).risk

    cells: list[tuple[str, object]] = []
    for strat in cfg.strategies:
        if strat == "remove":
            cells.append((strat, None))
        else:
            cells.extend((strat, b) for b in cfg.betas)

    rows, grows = [], []
    for strat, beta in cells:
        blabel = REMOVE_BETA if strat == "remove" else beta_label(parse_beta(beta))
        cal_pools = safe_pools(prep.calibration, beta, cfg.pool_cap) if strat == "replace" else None
        test_pools = safe_pools(prep.test, beta, cfg.pool_cap) if strat == "replace" else None
        curve = None
        for alpha in cfg.alphas:
            alpha = float(alpha)
            th = cache.get(alpha, strat, blabel, prep.dataset_hash)
            if th is None:
                if curve is None:
                    curve = empirical_risk_curve(prep.calibration, cfg.k, strat, cal_pools)
                try:
                    th = select_threshold(curve, alpha)
                except InfeasibleAlphaError:
                    th = ThresholdResult(alpha, math.inf, False, float("nan"), curve.n)
                cache.put(strat, blabel, prep.dataset_hash, th)
            status = _status(th)
            sets = recommend_all(prep.test, test_pools, th.lambda_hat, cfg.k)
            rep = evaluate(sets, test_truth, cfg.k)
            ctx = dict(alpha=alpha, beta=blabel, strategy=strat, seed=seed)
            row = rep.row(**ctx)
            row.update(
                lambda_hat=th.lambda_hat,
                feasible=th.feasible,
                status=status,
                inflated_cal_risk=th.inflated_risk_at_lambda,
                base_risk=base_risk,
                target_reduction=_reduction(base_risk, alpha),
                achieved_reduction=_reduction(base_risk, rep.risk),
                n_recall_skipped=rep.n_recall_skipped,
            )
            rows.append(row)
            for g in group_report(sets, test_truth, base_sets, prep.hx, cfg.k, cfg.hx_threshold, **ctx):
                g.update(lambda_hat=th.lambda_hat, feasible=th.feasible, status=status)
                grows.append(g)
    return rows, grows, {"seed": seed, **prep.meta}


def _seed_worker(args):
    cfg_dict, seed, entries = args
    cache = ThresholdCache()
    cache.entries = dict(entries)
    rows, grows, meta = run_seed(ExperimentConfig.from_dict(cfg_dict), seed, cache)
    return rows, grows, meta, cache


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Mean and sample standard deviation over seeds for every cell."""
    keys = ["alpha", "beta", "strategy", "k"]
    metrics = [m for m in SUMMARY_METRICS if m in results.columns]
    g = results.groupby(keys, sort=False, dropna=False)
    out = g[metrics].agg(["mean", "std"])
    out.columns = [f"{m}_{s}" for m, s in out.columns]
    out["n_seeds"] = g.size()
    out["n_infeasible"] = g["feasible"].apply(lambda s: int((~s.astype(bool)).sum()))
    return out.reset_index()


def run_sweep(cfg: ExperimentConfig, write: bool = True) -> dict[str, pd.DataFrame]:
    """Run every (alpha, beta, strategy, seed) cell and write the result tables.

    Outputs in ``cfg.out``: ``results.csv``, ``summary.csv``, ``groups.csv``,
    ``meta.json``, ``calibration_cache.json`` and ``plots/*.svg``.
    """
    out = Path(cfg.out)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    cache = ThresholdCache(out / "calibration_cache.json" if write else None)
    records = None
    if "path" in cfg.dataset:
        records, _ = load_interactions(cfg.dataset["path"], Schema.from_dict(cfg.dataset.get("schema", {})))

    per_seed = []
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        jobs = [(cfg.to_dict(), s, cache.entries) for s in cfg.seeds]
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            for rows, grows, meta, wc in ex.map(_seed_worker, jobs):
                per_seed.append((rows, grows, meta))
                cache.update(wc)
    else:
        for s in cfg.seeds:
            per_seed.append(run_seed(cfg, int(s), cache, records))

    results = pd.DataFrame([r for rows, _, _ in per_seed for r in rows], columns=RESULT_COLUMNS)
    groups = pd.DataFrame([g for _, grows, _ in per_seed for g in grows], columns=GROUP_COLUMNS)
    summary = summarize(results)
    tables = {"results": results, "summary": summary, "groups": groups}
    if write:
        results.to_csv(out / "results.csv", index=False)
        summary.to_csv(out / "summary.csv", index=False)
        groups.to_csv(out / "groups.csv", index=False)
        cache.save()
        meta = {
            "config": cfg.to_dict(),
            "config_hash": cfg.digest(),
            "versions": {
                "saferec": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "pandas": pd.__version__,
            },
            "decisions": DECISIONS,
            "runs": [m for _, _, m in per_seed],
            "calibration_cache": {"hits": cache.hits, "misses": cache.misses},
        }
        (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))
        if cfg.plots and len(results):
            from .plotting import sweep_plots

            sweep_plots(results, groups, out / "plots")
    return tables
