import math
import random

import pytest

from saferec.metrics import EvalReport, UserTruth, evaluate, ndcg_at_k, recall_at_k, risk_fraction
from saferec.selection import FRESH, REPLACEMENT, RecItem, RecommendationSet


def rs(user, ids, provenance=None):
    provenance = provenance or [FRESH] * len(ids)
    return RecommendationSet(user, tuple(RecItem(i, p, 0.0) for i, p in zip(ids, provenance)), 20, 0.0)


def test_risk_examples():
    flags = {"A": False, "B": False, "C": False, "D": True}
    assert risk_fraction(["A", "B", "C"], flags) == 0.0
    assert risk_fraction(["A", "B", "C", "D"], flags) == 0.25
    assert risk_fraction(["D"], flags) == 1.0
    assert risk_fraction([], flags) == 0.0


def test_risk_missing_flag():
    with pytest.raises(KeyError, match="Z"):
        risk_fraction(["Z"], {})


def test_ndcg_examples():
    assert ndcg_at_k(["a", "b", "c"], {"a": 3, "b": 2, "c": 1}, 3) == pytest.approx(1.0)
    assert ndcg_at_k(["a", "b"], {"a": 0, "b": 0}, 2) == 0.0
    # gains 0,1,1 in that order: (1/log2 3 + 1/2) / (1 + 1/log2 3)
    assert ndcg_at_k(["x", "y", "z"], {"x": 0, "y": 1, "z": 1}, 3) == pytest.approx(0.6934264036172708, abs=1e-12)


def test_ndcg_ideal_uses_all_relevant_items():
    # a relevant item missing from the ranking still counts in the ideal
    assert ndcg_at_k(["a"], {"a": 1, "b": 1}, 2) == pytest.approx(1 / (1 + 1 / math.log2(3)))


def test_ndcg_rejects_negative_relevance():
    with pytest.raises(ValueError):
        ndcg_at_k(["a"], {"a": -1}, 1)


def test_recall_examples():
    assert recall_at_k(["a", "b", "c"], {"a", "b"}, 3) == 1.0
    assert recall_at_k(["a", "b"], {"c"}, 2) == 0.0
    assert recall_at_k(["a", "b", "c", "d"], {"a", "x", "c", "y"}, 4) == 0.5
    with pytest.raises(ValueError):
        recall_at_k(["a"], set(), 1)


def test_evaluate_single_perfect_user():
    rep = evaluate({"u": rs("u", ["a", "b"])}, {"u": UserTruth({"a": False, "b": False}, {"a": 1, "b": 1})}, 2)
    assert (rep.risk, rep.ndcg_at_k, rep.recall_at_k) == (0.0, 1.0, 1.0)


def test_evaluate_mean_risk():
    truth = {
        "u": UserTruth({"a": False, "b": False}),
        "v": UserTruth({"a": True, "b": False}),
    }
    rep = evaluate({"u": rs("u", ["a", "b"]), "v": rs("v", ["a", "b"])}, truth, 2)
    assert rep.risk == 0.25
    assert rep.n_recall_skipped == 2


def test_evaluate_matches_brute_force():
    rnd = random.Random(11)
    for _ in range(20):
        sets, truth = {}, {}
        for u in range(5):
            items = [f"i{j}" for j in range(rnd.randint(0, 8))]
            rnd.shuffle(items)
            prov = [rnd.choice((FRESH, REPLACEMENT)) for _ in items]
            uid = f"u{u}"
            sets[uid] = rs(uid, items, prov)
            truth[uid] = UserTruth(
                {i: rnd.random() < 0.3 for i in items},
                {f"i{j}": float(rnd.randint(0, 2)) for j in range(10)},
            )
        k = 5
        rep = evaluate(sets, truth, k)

        def dcg(gains):
            return sum(g / math.log2(r + 2) for r, g in enumerate(gains))

        risks, ndcgs, recalls, sizes, reps = [], [], [], [], []
        for u in sets:
            ids = sets[u].item_ids
            fl = truth[u].flags
            rel = truth[u].relevance
            risks.append(sum(fl[i] for i in ids) / len(ids) if ids else 0.0)
            ideal = dcg(sorted(rel.values(), reverse=True)[:k])
            ndcgs.append(dcg([rel.get(i, 0) for i in ids[:k]]) / ideal if ideal else 0.0)
            relevant = {i for i, r in rel.items() if r > 0}
            if relevant:
                recalls.append(len(set(ids[:k]) & relevant) / len(relevant))
            sizes.append(len(ids))
            reps.append(sum(p.provenance == REPLACEMENT for p in sets[u].items) / len(ids) if ids else 0.0)
        assert rep.risk == pytest.approx(sum(risks) / 5, abs=1e-12)
        assert rep.ndcg_at_k == pytest.approx(sum(ndcgs) / 5, abs=1e-12)
        assert rep.recall_at_k == pytest.approx(sum(recalls) / len(recalls) if recalls else 0.0, abs=1e-12)
        assert rep.mean_set_size == pytest.approx(sum(sizes) / 5)
        assert rep.repeated_fraction == pytest.approx(sum(reps) / 5, abs=1e-12)


def test_evaluate_requires_truth_for_every_user():
    with pytest.raises(KeyError):
        evaluate({"u": rs("u", ["a"])}, {}, 1)


def test_report_row_columns():
    row = EvalReport(0.1, 0.5, 0.4, 3.0, 0.0, 20, 7).row(alpha=0.1, beta="none", strategy="remove", seed=0)
    assert row["risk"] == 0.1 and row["ndcg"] == 0.5 and row["n_users"] == 7 and row["alpha"] == 0.1
