"""Interaction-log ingestion, k-core filtering and train/calibration/test splits.

Input logs are CSV files with a header row. The logical columns (user, item,
timestamp, watch time, duration, flag) are mapped to physical column names by
a :class:`Schema`, so exports with different naming or units (e.g. KuaiRand's
millisecond columns) load without code changes.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, SchemaError

SPLIT_NAMES = ("train", "calibration", "test", "repeated")

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", ""}


@dataclass(frozen=True, slots=True)
class InteractionRecord:
    """One user-item view event."""

    user_id: str
    item_id: str
    timestamp: int
    watch_time: float
    duration: float
    flagged: bool
    view_index: int = 1

    @property
    def watch_fraction(self) -> float:
        return watch_fraction(self)


@dataclass(frozen=True)
class Schema:
    """Maps logical fields to CSV column names.

    ``watch_time_scale`` and ``duration_scale`` convert the raw column values
    to seconds (use 0.001 for millisecond columns).
    """

    user: str = "user_id"
    item: str = "item_id"
    timestamp: str = "timestamp_ms"
    watch_time: str = "watch_time_s"
    duration: str = "duration_s"
    flagged: str = "flagged"
    watch_time_scale: float = 1.0
    duration_scale: float = 1.0

    @classmethod
    def kuairand(cls) -> "Schema":
        """Column mapping for the KuaiRand ``log_*`` exports."""
        return cls(
            user="user_id",
            item="video_id",
            timestamp="time_ms",
            watch_time="play_time_ms",
            duration="duration_ms",
            flagged="is_hate",
            watch_time_scale=1e-3,
            duration_scale=1e-3,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        if d.get("preset") == "kuairand":
            base = asdict(cls.kuairand())
        else:
            base = asdict(cls())
        base.update({k: v for k, v in d.items() if k != "preset"})
        return cls(**base)

    def columns(self) -> dict[str, str]:
        return {
            "user": self.user,
            "item": self.item,
            "timestamp": self.timestamp,
            "watch_time": self.watch_time,
            "duration": self.duration,
            "flagged": self.flagged,
        }


@dataclass
class IngestStats:
    rows_read: int = 0
    dropped_nonpositive_duration: int = 0
    records: int = 0


@dataclass
class DatasetSplit:
    train: list[InteractionRecord]
    calibration: list[InteractionRecord]
    test: list[InteractionRecord]
    repeated_pool: list[InteractionRecord]
    seed: int
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    meta: dict = field(default_factory=dict)

    def parts(self) -> dict[str, list[InteractionRecord]]:
        return {
            "train": self.train,
            "calibration": self.calibration,
            "test": self.test,
            "repeated": self.repeated_pool,
        }

    def all_records(self) -> list[InteractionRecord]:
        out = [*self.train, *self.calibration, *self.test, *self.repeated_pool]
        out.sort(key=lambda r: (r.user_id, r.timestamp, r.view_index))
        return out


def watch_fraction(rec: InteractionRecord) -> float:
    """Percentage of the item watched; exceeds 100 when the user lingered."""
    return rec.watch_time / rec.duration * 100.0


def _parse_flag(raw: str) -> bool:
    s = raw.strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    try:
        return float(s) != 0.0
    except ValueError:
        raise ValueError(f"cannot parse flag {raw!r}") from None


def assign_view_index(records: Iterable[InteractionRecord]) -> list[InteractionRecord]:
    """Sort by (user, timestamp) and number repeat views of each (user, item).

    The sort is stable, so equal timestamps keep their input order.
    """
    ordered = sorted(records, key=lambda r: (r.user_id, r.timestamp))
    seen: Counter = Counter()
    out = []
    for r in ordered:
        seen[(r.user_id, r.item_id)] += 1
        vi = seen[(r.user_id, r.item_id)]
        out.append(r if r.view_index == vi else replace(r, view_index=vi))
    return out


def load_interactions(
    path: str | Path, schema: Schema | None = None
) -> tuple[list[InteractionRecord], IngestStats]:
    """Read an interaction CSV.

    Rows with duration <= 0 are dropped and counted in the returned stats.
    ``view_index`` is always recomputed from timestamps, never read.

    Raises
    ------
    SchemaError
        If a mapped column is absent from the header.
    ParseError
        If a row cannot be parsed; the error carries the 1-based data row.
    """
    schema = schema or Schema()
    stats = IngestStats()
    raw: list[InteractionRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in schema.columns().values():
            if col not in header:
                raise SchemaError(col, header)
        for rowno, row in enumerate(reader, start=1):
            stats.rows_read += 1
            try:
                duration = float(row[schema.duration]) * schema.duration_scale
                watch = float(row[schema.watch_time]) * schema.watch_time_scale
                ts = int(float(row[schema.timestamp]))
                flag = _parse_flag(row[schema.flagged])
            except (TypeError, ValueError) as exc:
                raise ParseError(rowno, str(exc)) from None
            if not (math.isfinite(duration) and math.isfinite(watch)):
                raise ParseError(rowno, "non-finite value")
            if duration <= 0:
                stats.dropped_nonpositive_duration += 1
                continue
            if watch < 0:
                raise ParseError(rowno, f"negative watch time {watch}")
            raw.append(
                InteractionRecord(
                    user_id=str(row[schema.user]),
                    item_id=str(row[schema.item]),
                    timestamp=ts,
                    watch_time=watch,
                    duration=duration,
                    flagged=flag,
                )
            )
    records = assign_view_index(raw)
    stats.records = len(records)
    return records, stats


def write_interactions(records: Iterable[InteractionRecord], path: str | Path) -> None:
    """Write records in the canonical ingest schema (seconds, 0/1 flags)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "item_id", "timestamp_ms", "watch_time_s", "duration_s", "flagged"])
        for r in records:
            w.writerow([r.user_id, r.item_id, r.timestamp, repr(float(r.watch_time)), repr(float(r.duration)), int(r.flagged)])


def k_core_filter(records: Sequence[InteractionRecord], k: int) -> list[InteractionRecord]:
    """Drop users and items with fewer than ``k`` interactions until none remain."""
    if k < 1:
        raise ValueError("k must be >= 1")
    alive = list(records)
    while True:
        ucount = Counter(r.user_id for r in alive)
        icount = Counter(r.item_id for r in alive)
        bad_u = {u for u, c in ucount.items() if c < k}
        bad_i = {i for i, c in icount.items() if c < k}
        if not bad_u and not bad_i:
            return alive
        alive = [r for r in alive if r.user_id not in bad_u and r.item_id not in bad_i]


def split(
    records: Sequence[InteractionRecord],
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> DatasetSplit:
    """Random per-interaction split of first views; later views form the repeated pool.

    Repeated views (``view_index >= 2``) of any item that appears in the test
    part are excluded from the pool.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ValueError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    if not records:
        raise ValueError("cannot split an empty record list")

    single_idx = [j for j, r in enumerate(records) if r.view_index == 1]
    n = len(single_idx)
    n_train = int(round(fractions[0] * n))
    n_cal = min(int(round(fractions[1] * n)), n - n_train)

    perm = np.random.default_rng(seed).permutation(n)
    label = np.empty(n, dtype=np.int8)
    label[perm[:n_train]] = 0
    label[perm[n_train : n_train + n_cal]] = 1
    label[perm[n_train + n_cal :]] = 2

    parts: list[list[InteractionRecord]] = [[], [], []]
    for pos, j in enumerate(single_idx):
        parts[label[pos]].append(records[j])

    test_items = {r.item_id for r in parts[2]}
    repeated = [r for r in records if r.view_index >= 2]
    pool = [r for r in repeated if r.item_id not in test_items]
    meta = {
        "n_single": n,
        "n_repeated": len(repeated),
        "n_repeated_excluded_test_items": len(repeated) - len(pool),
    }
    return DatasetSplit(parts[0], parts[1], parts[2], pool, seed, tuple(fractions), meta)


def write_split(ds: DatasetSplit, path: str | Path, extra_meta: dict | None = None) -> Path:
    """Write ``ds`` as one CSV with a ``split`` column plus a JSON sidecar.

    Returns the sidecar path.
    """
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "user_id", "item_id", "timestamp_ms", "watch_time_s", "duration_s", "flagged", "view_index"])
        for name, recs in ds.parts().items():
            for r in recs:
                w.writerow([name, r.user_id, r.item_id, r.timestamp, repr(float(r.watch_time)), repr(float(r.duration)), int(r.flagged), r.view_index])
    sidecar = path.with_suffix(".json")
    meta = {
        "seed": ds.seed,
        "fractions": list(ds.fractions),
        "sizes": {k: len(v) for k, v in ds.parts().items()},
        **ds.meta,
        **(extra_meta or {}),
    }
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return sidecar


def read_split(path: str | Path) -> DatasetSplit:
    """Inverse of :func:`write_split`."""
    path = Path(path)
    parts: dict[str, list[InteractionRecord]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in ("split", "view_index"):
            if col not in (reader.fieldnames or []):
                raise SchemaError(col, reader.fieldnames or [])
        for rowno, row in enumerate(reader, start=1):
            try:
                rec = InteractionRecord(
                    user_id=row["user_id"],
                    item_id=row["item_id"],
                    timestamp=int(row["timestamp_ms"]),
                    watch_time=float(row["watch_time_s"]),
                    duration=float(row["duration_s"]),
                    flagged=_parse_flag(row["flagged"]),
                    view_index=int(row["view_index"]),
                )
            except (TypeError, ValueError) as exc:
                raise ParseError(rowno, str(exc)) from None
            if row["split"] not in SPLIT_NAMES:
                raise ParseError(rowno, f"unknown split {row['split']!r}")
            parts[row["split"]].append(rec)
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return DatasetSplit(
        parts["train"],
        parts["calibration"],
        parts["test"],
        parts["repeated"],
        seed=int(meta.get("seed", 0)),
        fractions=tuple(meta.get("fractions", (0.70, 0.15, 0.15))),
        meta=meta,
    )


def group_by_user(records: Iterable[InteractionRecord]) -> dict[str, list[InteractionRecord]]:
    out: dict[str, list[InteractionRecord]] = defaultdict(list)
    for r in records:
        out[r.user_id].append(r)
    return dict(out)
