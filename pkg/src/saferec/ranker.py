"""Relevance scorers: a lookup table and a biased matrix-factorisation baseline.

Any object with a ``score(user, item) -> float`` method can stand in for a
ranker; the two built-ins are :class:`ScoreTable` (scores computed elsewhere)
and :class:`LatentFactorModel` (trained here on watch fractions).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .data import InteractionRecord, watch_fraction
from .errors import DivergenceError, MissingScoreError, ParseError, SchemaError

_log = logging.getLogger(__name__)


class Scorer(Protocol):
    kind: str

    def score(self, user: str, item: str) -> float: ...


class ScoreTable:
    """Precomputed ``(user, item) -> score`` map.

    Unknown pairs raise :class:`MissingScoreError` unless ``default`` is set.
    """

    kind = "score-table"

    def __init__(self, scores: dict[tuple[str, str], float] | None = None, default: float | None = None):
        self.scores: dict[tuple[str, str], float] = {}
        for key, s in (scores or {}).items():
            s = float(s)
            if not math.isfinite(s):
                raise ValueError(f"non-finite score for {key}: {s}")
            self.scores[(str(key[0]), str(key[1]))] = s
        self.default = default

    def score(self, user: str, item: str) -> float:
        try:
            return self.scores[(user, item)]
        except KeyError:
            if self.default is None:
                raise MissingScoreError(user, item) from None
            return float(self.default)

    def __len__(self):
        return len(self.scores)

    @classmethod
    def from_csv(cls, path: str | Path, default: float | None = None) -> "ScoreTable":
        scores = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for col in ("user_id", "item_id", "score"):
                if col not in (reader.fieldnames or []):
                    raise SchemaError(col, reader.fieldnames or [])
            for rowno, row in enumerate(reader, start=1):
                try:
                    s = float(row["score"])
                except ValueError as exc:
                    raise ParseError(rowno, str(exc)) from None
                if not math.isfinite(s):
                    raise ParseError(rowno, f"non-finite score {row['score']!r}")
                scores[(row["user_id"], row["item_id"])] = s
        return cls(scores, default=default)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["user_id", "item_id", "score"])
            for (u, i), s in sorted(self.scores.items()):
                w.writerow([u, i, repr(float(s))])


@dataclass
class LatentFactorModel:
    """Biased dot-product model ``b_u + b_i + <p_u, q_i>``.

    Ids never seen in training get zero embedding and zero bias, so every
    pair has a score.
    """

    user_index: dict[str, int]
    item_index: dict[str, int]
    user_factors: np.ndarray
    item_factors: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    hyperparameters: dict = field(default_factory=dict)
    loss_history: list[float] = field(default_factory=list)

    kind = "latent-factor"

    def __post_init__(self):
        if self.user_factors.ndim != 2 or self.item_factors.ndim != 2:
            raise ValueError("factor matrices must be 2-D")
        if self.user_factors.shape[1] != self.item_factors.shape[1]:
            raise ValueError("user and item factors must share dimension d")

    @property
    def d(self) -> int:
        return self.user_factors.shape[1]

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1] if self.loss_history else float("nan")

    def score(self, user: str, item: str) -> float:
        u = self.user_index.get(user)
        i = self.item_index.get(item)
        s = 0.0
        if u is not None:
            s += self.user_bias[u]
        if i is not None:
            s += self.item_bias[i]
        if u is not None and i is not None:
            s += float(self.user_factors[u] @ self.item_factors[i])
        return float(s)

    def save(self, path: str | Path) -> None:
        """Write a JSON header at ``path`` and the arrays to ``path.npz``."""
        path = Path(path)
        arrays = path.with_suffix(".npz")
        np.savez(
            arrays,
            user_factors=self.user_factors,
            item_factors=self.item_factors,
            user_bias=self.user_bias,
            item_bias=self.item_bias,
        )
        header = {
            "kind": self.kind,
            "d": self.d,
            "hyperparameters": self.hyperparameters,
            "loss_history": self.loss_history,
            "users": sorted(self.user_index, key=self.user_index.get),
            "items": sorted(self.item_index, key=self.item_index.get),
            "arrays": arrays.name,
        }
        path.write_text(json.dumps(header, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "LatentFactorModel":
        path = Path(path)
        header = json.loads(path.read_text())
        arr = np.load(path.parent / header["arrays"])
        return cls(
            user_index={u: j for j, u in enumerate(header["users"])},
            item_index={i: j for j, i in enumerate(header["items"])},
            user_factors=arr["user_factors"],
            item_factors=arr["item_factors"],
            user_bias=arr["user_bias"],
            item_bias=arr["item_bias"],
            hyperparameters=header.get("hyperparameters", {}),
            loss_history=header.get("loss_history", []),
        )


def score(model: Scorer, user: str, item: str) -> float:
    return model.score(user, item)


def rank(model: Scorer, user: str, candidates: Iterable[str]) -> list[str]:
    """Order candidates by descending score, ties by ascending item id."""
    items = list(candidates)
    if not items:
        raise ValueError("rank needs at least one candidate")
    scored = [(model.score(user, i), i) for i in items]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [i for _, i in scored]


# --------------------------------------------------------------------------
# training


@dataclass
class _Params:
    P: np.ndarray
    Q: np.ndarray
    bu: np.ndarray
    bi: np.ndarray

    def copy(self) -> "_Params":
        return _Params(self.P.copy(), self.Q.copy(), self.bu.copy(), self.bi.copy())


def predict(params: _Params, u: np.ndarray, i: np.ndarray) -> np.ndarray:
    return params.bu[u] + params.bi[i] + np.einsum("nd,nd->n", params.P[u], params.Q[i])


def objective(params: _Params, u: np.ndarray, i: np.ndarray, y: np.ndarray, reg: float):
    """Mean per-observation loss and its gradient.

    Each observation contributes ``(s - y)^2 + reg * (|p_u|^2 + |q_i|^2 + b_u^2 + b_i^2)``.
    Returns ``(loss, grads)`` with ``grads`` a :class:`_Params` of the same shapes.
    """
    n = len(y)
    Pu, Qi = params.P[u], params.Q[i]
    bu, bi = params.bu[u], params.bi[i]
    err = bu + bi + np.einsum("nd,nd->n", Pu, Qi) - y
    penalty = (Pu * Pu).sum(1) + (Qi * Qi).sum(1) + bu * bu + bi * bi
    loss = float(np.mean(err * err + reg * penalty))

    g = _Params(np.zeros_like(params.P), np.zeros_like(params.Q), np.zeros_like(params.bu), np.zeros_like(params.bi))
    e2 = (2.0 / n) * err
    r2 = 2.0 * reg / n
    np.add.at(g.P, u, e2[:, None] * Qi + r2 * Pu)
    np.add.at(g.Q, i, e2[:, None] * Pu + r2 * Qi)
    np.add.at(g.bu, u, e2 + r2 * bu)
    np.add.at(g.bi, i, e2 + r2 * bi)
    return loss, g


def training_arrays(train: Sequence[InteractionRecord]):
    """Index maps and ``(u, i, target)`` arrays; targets are watch fractions clipped to [0, 1]."""
    users = sorted({r.user_id for r in train})
    items = sorted({r.item_id for r in train})
    uidx = {u: j for j, u in enumerate(users)}
    iidx = {i: j for j, i in enumerate(items)}
    u = np.fromiter((uidx[r.user_id] for r in train), dtype=np.int64, count=len(train))
    i = np.fromiter((iidx[r.item_id] for r in train), dtype=np.int64, count=len(train))
    y = np.fromiter((min(watch_fraction(r), 100.0) / 100.0 for r in train), dtype=float, count=len(train))
    return uidx, iidx, u, i, y


def train_latent_factor(
    train: Sequence[InteractionRecord],
    d: int = 16,
    epochs: int = 20,
    learning_rate: float = 0.05,
    regularization: float = 0.01,
    seed: int = 0,
    batch_size: int = 256,
    init_scale: float = 0.1,
) -> LatentFactorModel:
    """Fit the biased MF model by mini-batch gradient descent on squared error.

    Batches are drawn from a seeded permutation each epoch; ``batch_size=None``
    (or ``>= len(train)``) gives full-batch descent. The full-data loss after
    every epoch is recorded in ``loss_history``.
    """
    if not train:
        raise ValueError("training set is empty")
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    uidx, iidx, u, i, y = training_arrays(train)
    params = _Params(
        P=rng.normal(0.0, init_scale, size=(len(uidx), d)),
        Q=rng.normal(0.0, init_scale, size=(len(iidx), d)),
        bu=np.zeros(len(uidx)),
        bi=np.zeros(len(iidx)),
    )
    n = len(y)
    bs = n if not batch_size or batch_size >= n else int(batch_size)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        # overflow shows up as a non-finite loss below
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, bs):
                b = order[start : start + bs]
                _, g = objective(params, u[b], i[b], y[b], regularization)
                params.P -= learning_rate * g.P
                params.Q -= learning_rate * g.Q
                params.bu -= learning_rate * g.bu
                params.bi -= learning_rate * g.bi
            loss, _ = objective(params, u, i, y, regularization)
        if not math.isfinite(loss):
            raise DivergenceError(
                f"training loss became non-finite at epoch {epoch + 1}; try a smaller learning_rate (now {learning_rate})"
            )
        history.append(loss)
        _log.debug("epoch %d loss %.6f", epoch + 1, loss)

    return LatentFactorModel(
        user_index=uidx,
        item_index=iidx,
        user_factors=params.P,
        item_factors=params.Q,
        user_bias=params.bu,
        item_bias=params.bi,
        hyperparameters={
            "d": d,
            "epochs": epochs,
            "learning_rate": learning_rate,
            "regularization": regularization,
            "seed": seed,
            "batch_size": batch_size,
            "init_scale": init_scale,
        },
        loss_history=history,
    )


def load_scorer(path: str | Path) -> Scorer:
    """Load a score table (``.csv``) or a saved latent-factor model (``.json``)."""
    path = Path(path)
    if path.suffix == ".json":
        return LatentFactorModel.load(path)
    return ScoreTable.from_csv(path)
