"""Descriptive statistics of reporting and re-watching behaviour."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import InteractionRecord, watch_fraction

REPORTING_BIN_EDGES = (0.0, 0.1, 0.3, 1.0, 100.0)
TRANSITIONS = (
    ("kept", "kept"),
    ("kept", "reported"),
    ("reported", "reported"),
    ("reported", "kept"),
)
USER_PERCENT_NOTE = (
    "user_percent = percent of users with at least one repeated item who show the transition at least once"
)


@dataclass
class ReportingBin:
    lo: float
    hi: float
    n_users: int
    percent: float
    ecdf: float


@dataclass
class ReportingStats:
    bins: list[ReportingBin]
    per_user: dict[str, float]


@dataclass
class WatchSummary:
    mean: float = 0.0
    sd: float = 0.0
    q75: float = 0.0

    @classmethod
    def of(cls, xs: Sequence[float]) -> "WatchSummary":
        if len(xs) == 0:
            return cls()
        a = np.asarray(xs, dtype=float)
        return cls(float(a.mean()), float(a.std()), float(np.percentile(a, 75)))


@dataclass
class TransitionRow:
    first: str
    second: str
    n_items: int = 0
    item_percent: float = 0.0
    n_users: int = 0
    user_percent: float = 0.0
    first_watch: WatchSummary = field(default_factory=WatchSummary)
    second_watch: WatchSummary = field(default_factory=WatchSummary)


@dataclass
class RepeatTransitionTable:
    rows: list[TransitionRow]
    n_pairs: int
    n_users: int
    note: str = USER_PERCENT_NOTE


def reporting_bins(records: Iterable[InteractionRecord], edges=REPORTING_BIN_EDGES) -> ReportingStats:
    """Per-user reporting rate ``H_X`` (percent of views flagged) in rate bins.

    Bins are half-open ``[lo, hi)`` except the last, which also holds 100.
    """
    views: dict[str, int] = {}
    flagged: dict[str, int] = {}
    for r in records:
        views[r.user_id] = views.get(r.user_id, 0) + 1
        flagged[r.user_id] = flagged.get(r.user_id, 0) + int(r.flagged)
    if not views:
        raise ValueError("no records")
    hx = {u: 100.0 * flagged[u] / views[u] for u in sorted(views)}

    counts = [0] * (len(edges) - 1)
    for h in hx.values():
        j = int(np.searchsorted(edges, h, side="right")) - 1
        counts[min(max(j, 0), len(counts) - 1)] += 1
    n = len(hx)
    cum = np.cumsum(counts)
    bins = [
        ReportingBin(edges[j], edges[j + 1], counts[j], 100.0 * counts[j] / n, float(cum[j] / n))
        for j in range(len(counts))
    ]
    return ReportingStats(bins, hx)


def _pairs(records: Iterable[InteractionRecord]) -> dict[tuple[str, str], dict[int, InteractionRecord]]:
    out: dict[tuple[str, str], dict[int, InteractionRecord]] = {}
    for r in records:
        if r.view_index <= 2:
            out.setdefault((r.user_id, r.item_id), {})[r.view_index] = r
    return {k: v for k, v in out.items() if 1 in v and 2 in v}


def repeat_transition_table(records: Iterable[InteractionRecord]) -> RepeatTransitionTable:
    """Classify re-viewed (user, item) pairs by flag at view 1 and view 2.

    Watch-time summaries are in seconds; ``sd`` is the population standard
    deviation and ``q75`` the third quartile.
    """
    pairs = _pairs(records)
    users_with_repeat = {u for u, _ in pairs}
    groups: dict[tuple[str, str], list[tuple[str, InteractionRecord, InteractionRecord]]] = {t: [] for t in TRANSITIONS}
    for (u, _), views in sorted(pairs.items()):
        v1, v2 = views[1], views[2]
        key = ("reported" if v1.flagged else "kept", "reported" if v2.flagged else "kept")
        groups[key].append((u, v1, v2))

    n_pairs = len(pairs)
    n_users = len(users_with_repeat)
    rows = []
    for t in TRANSITIONS:
        g = groups[t]
        users = {u for u, _, _ in g}
        rows.append(
            TransitionRow(
                first=t[0],
                second=t[1],
                n_items=len(g),
                item_percent=100.0 * len(g) / n_pairs if n_pairs else 0.0,
                n_users=len(users),
                user_percent=100.0 * len(users) / n_users if n_users else 0.0,
                first_watch=WatchSummary.of([v1.watch_time for _, v1, _ in g]),
                second_watch=WatchSummary.of([v2.watch_time for _, _, v2 in g]),
            )
        )
    return RepeatTransitionTable(rows, n_pairs, n_users)


@dataclass
class ValidityPoint:
    beta: float
    probability: float | None
    count: int


def safe_pool_validity_curve(records: Iterable[InteractionRecord], betas: Sequence[float]) -> list[ValidityPoint]:
    """Empirical second-view flag rate of items kept at first view and watched past ``beta``.

    ``probability`` is ``None`` when no item qualifies.
    """
    pairs = _pairs(records)
    w1 = []
    f2 = []
    for views in pairs.values():
        if not views[1].flagged:
            w1.append(watch_fraction(views[1]))
            f2.append(views[2].flagged)
    w1a = np.asarray(w1, dtype=float)
    f2a = np.asarray(f2, dtype=bool)
    out = []
    for b in betas:
        mask = w1a > b
        cnt = int(mask.sum())
        out.append(ValidityPoint(float(b), float(f2a[mask].mean()) if cnt else None, cnt))
    return out


def watch_fraction_histogram(records: Iterable[InteractionRecord], edges=None) -> list[dict]:
    """Counts of watch fraction for flagged and unflagged views.

    Zero-watch views sit in the first bin (left edge inclusive); values past
    the last edge land in a final open bin.
    """
    if edges is None:
        edges = np.linspace(0.0, 200.0, 41)
    edges = np.asarray(edges, dtype=float)
    wf = {True: [], False: []}
    for r in records:
        wf[bool(r.flagged)].append(watch_fraction(r))
    rows = []
    for flag in (False, True):
        vals = np.asarray(wf[flag], dtype=float)
        counts, _ = np.histogram(vals, bins=edges)
        over = int((vals > edges[-1]).sum())
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            rows.append({"flagged": int(flag), "lo": float(lo), "hi": float(hi), "count": int(c)})
        rows.append({"flagged": int(flag), "lo": float(edges[-1]), "hi": math.inf, "count": over})
    return rows


def reported_watch_time_histogram(
    records: Iterable[InteractionRecord],
    duration_window: tuple[float, float] = (7.0, 12.0),
    n_bins: int = 30,
) -> list[dict]:
    """Log-spaced watch-time histogram of flagged views with positive watch time.

    Restricted to items whose duration lies in ``duration_window`` seconds;
    rows are split into views watched at most in full and views beyond full.
    """
    lo, hi = duration_window
    sel = [r for r in records if r.flagged and r.watch_time > 0 and lo <= r.duration <= hi]
    rows = []
    for segment, keep in (("le100", lambda r: watch_fraction(r) <= 100.0), ("gt100", lambda r: watch_fraction(r) > 100.0)):
        vals = np.asarray([r.watch_time for r in sel if keep(r)], dtype=float)
        if len(vals) == 0:
            continue
        edges = np.geomspace(vals.min(), vals.max() * (1 + 1e-9), n_bins + 1) if vals.min() < vals.max() else np.array([vals.min(), vals.min() * (1 + 1e-9) + 1e-12])
        counts, _ = np.histogram(vals, bins=edges)
        for a, b, c in zip(edges[:-1], edges[1:], counts):
            rows.append({"segment": segment, "lo": float(a), "hi": float(b), "count": int(c)})
    return rows


def reporting_users_only(records: Iterable[InteractionRecord]) -> list[InteractionRecord]:
    """Records of users who flagged at least one view."""
    records = list(records)
    reporters = {r.user_id for r in records if r.flagged}
    return [r for r in records if r.user_id in reporters]


# --------------------------------------------------------------------------
# CSV output


def _write_rows(path: Path, rows: list[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for r in rows:
            w.writerow(r)


def write_analysis(
    records: Sequence[InteractionRecord],
    out: str | Path,
    betas: Sequence[float] = (0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100),
    summary_tables: bool = False,
    reporters_only: bool = False,
) -> list[Path]:
    """Write every analysis as CSV under ``out``; returns written paths.

    With ``reporters_only`` users who never flagged anything are dropped first.
    """
    if reporters_only:
        records = reporting_users_only(records)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    stats = reporting_bins(records)
    p = out / "reporting_bins.csv"
    _write_rows(p, [vars(b) for b in stats.bins], ["lo", "hi", "n_users", "percent", "ecdf"])
    written.append(p)
    p = out / "reporting_rate_per_user.csv"
    _write_rows(p, [{"user_id": u, "hx": h} for u, h in stats.per_user.items()], ["user_id", "hx"])
    written.append(p)

    table = repeat_transition_table(records)
    p = out / "repeat_transitions.csv"
    cols = ["first", "second", "n_items", "item_percent", "n_users", "user_percent",
            "first_mean", "first_sd", "first_q75", "second_mean", "second_sd", "second_q75"]
    _write_rows(
        p,
        [
            {
                "first": r.first, "second": r.second, "n_items": r.n_items, "item_percent": r.item_percent,
                "n_users": r.n_users, "user_percent": r.user_percent,
                "first_mean": r.first_watch.mean, "first_sd": r.first_watch.sd, "first_q75": r.first_watch.q75,
                "second_mean": r.second_watch.mean, "second_sd": r.second_watch.sd, "second_q75": r.second_watch.q75,
            }
            for r in table.rows
        ],
        cols,
    )
    written.append(p)

    p = out / "safe_pool_validity.csv"
    _write_rows(
        p,
        [{"beta": v.beta, "probability": "" if v.probability is None else v.probability, "count": v.count}
         for v in safe_pool_validity_curve(records, betas)],
        ["beta", "probability", "count"],
    )
    written.append(p)

    p = out / "watch_fraction_hist.csv"
    _write_rows(p, watch_fraction_histogram(records), ["flagged", "lo", "hi", "count"])
    written.append(p)
    p = out / "reported_watch_time_hist.csv"
    _write_rows(p, reported_watch_time_histogram(records), ["segment", "lo", "hi", "count"])
    written.append(p)

    if summary_tables:
        p = out / "reporting_summary.csv"
        _write_rows(
            p,
            [{"H_X (%)": f"{b.lo:g} <= H < {b.hi:g}", "N. of users": b.n_users,
              "% of users": f"{b.percent:.1f}", "eCDF": f"{b.ecdf:.3f}"} for b in stats.bins],
            ["H_X (%)", "N. of users", "% of users", "eCDF"],
        )
        written.append(p)
        p = out / "repeat_summary.csv"

        def fmt(s: WatchSummary) -> str:
            return f"{s.mean:.2f} +- {s.sd:.2f} ({s.q75:.2f})"

        _write_rows(
            p,
            [{"Behaviour": f"{r.first} -> {r.second}", "I (%)": f"{r.item_percent:.2f}", "U (%)": f"{r.user_percent:.2f}",
              "Watch Time 1st (s)": fmt(r.first_watch), "Watch Time 2nd (s)": fmt(r.second_watch)} for r in table.rows],
            ["Behaviour", "I (%)", "U (%)", "Watch Time 1st (s)", "Watch Time 2nd (s)"],
        )
        written.append(p)

    meta = {"n_records": len(records), "n_users": len(stats.per_user), "reporters_only": reporters_only,
            "repeat_user_percent": USER_PERCENT_NOTE,
            "reporting_rate": "H_X = 100 * flagged views / views per user", "transition_pairs": table.n_pairs}
    p = out / "analysis_meta.json"
    p.write_text(json.dumps(meta, indent=2))
    written.append(p)
    return written
