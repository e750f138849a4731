import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from saferec.analyze import reporting_bins, safe_pool_validity_curve
from saferec.calibration import RiskCurve, empirical_risk_curve, monotonize, select_threshold
from saferec.data import k_core_filter, split, watch_fraction
from saferec.metrics import UserTruth, evaluate, ndcg_at_k, recall_at_k, risk_fraction
from saferec.selection import REPLACEMENT, UserCandidates, build_safe_pool, filter_candidates, recommend

from conftest import rec

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

unit = st.floats(0, 1, allow_nan=False)
score_vals = st.integers(0, 6).map(lambda v: v / 2)


@st.composite
def curves(draw):
    n = draw(st.integers(1, 25))
    risk = draw(st.lists(unit, min_size=n, max_size=n))
    return RiskCurve(np.arange(n, dtype=float), risk, n=draw(st.integers(1, 200)))


@given(curves())
def test_monotonize_idempotent_dominating_non_increasing(c):
    m = monotonize(c)
    assert (m.risk_at >= c.risk_at).all()
    assert (np.diff(m.risk_at) <= 0).all()
    np.testing.assert_array_equal(monotonize(m).risk_at, m.risk_at)


@given(curves(), unit, unit)
def test_threshold_monotone_in_alpha(c, a1, a2):
    lo, hi = sorted((a1, a2))
    floor = 1 / (c.n + 1)
    if lo < floor or hi >= 1 or lo <= 0:
        return
    t_lo, t_hi = select_threshold(c, lo), select_threshold(c, hi)
    assert t_hi.lambda_hat <= t_lo.lambda_hat
    for t in (t_lo, t_hi):
        if t.feasible:
            assert t.inflated_risk_at_lambda <= t.alpha


@st.composite
def candidates(draw, max_items=8):
    n = draw(st.integers(0, max_items))
    items = [f"c{j}" for j in range(n)]
    scores = draw(st.lists(score_vals, min_size=n, max_size=n))
    flags = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    return items, scores, flags


@st.composite
def histories(draw):
    m = draw(st.integers(0, 6))
    out = []
    for j in range(m):
        out.append(rec("u", f"h{draw(st.integers(0, 4))}", ts=j, watch=draw(st.floats(0, 20)), duration=10.0,
                       flagged=draw(st.booleans())))
    return out


@given(candidates(), st.lists(score_vals, min_size=2, max_size=2))
def test_filter_nesting(c, lams):
    items, scores, _ = c
    lo, hi = sorted(lams)
    scored = list(zip(items, scores))
    assert filter_candidates(scored, hi) <= filter_candidates(scored, lo)


@given(candidates(), histories(), score_vals, st.integers(1, 10), st.sampled_from([None, 0, 30, 50, 80]))
def test_recommendation_set_invariants(c, hist, lam, k, beta):
    items, scores, _ = c
    scored = list(zip(items, scores))
    pool = build_safe_pool(hist, beta)
    flagged_before = {r.item_id for r in hist if r.flagged}
    s = recommend("u", scored, pool, lam, k)
    removed = recommend("u", scored, None, lam, k)
    assert len(s) <= k
    assert len(s) >= len(removed)
    assert len(set(s.item_ids)) == len(s)
    score_of = dict(scored)
    for r in s.items:
        if r.provenance == REPLACEMENT:
            assert r.item_id in pool
            assert r.item_id not in flagged_before
            assert r.ordering_value > pool.beta
        else:
            assert score_of[r.item_id] >= lam


@given(candidates(), st.data())
def test_removing_flagged_item_never_adds_flags(c, data):
    items, _, flags = c
    fl = dict(zip(items, flags))
    flagged = [i for i in items if fl[i]]
    if not flagged:
        return
    drop = data.draw(st.sampled_from(flagged))
    kept = [i for i in items if i != drop]
    assert sum(fl[i] for i in kept) <= sum(fl[i] for i in items)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=10), st.integers(1, 10), st.randoms())
def test_metrics_invariant_under_relabeling(rels, k, rnd):
    items = [f"i{j}" for j in range(len(rels))]
    order = items[:]
    rnd.shuffle(order)
    rel = dict(zip(items, map(float, rels)))
    relabel = {i: f"z{rnd.random()}{i}" for i in items}
    rel2 = {relabel[i]: v for i, v in rel.items()}
    order2 = [relabel[i] for i in order]
    assert math.isclose(ndcg_at_k(order, rel, k), ndcg_at_k(order2, rel2, k), rel_tol=0, abs_tol=1e-15)
    relevant = {i for i, v in rel.items() if v > 0}
    if relevant:
        assert recall_at_k(order, relevant, k) == recall_at_k(order2, {relabel[i] for i in relevant}, k)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=10), st.integers(1, 10))
def test_ndcg_one_when_sorted_by_relevance(rels, k):
    if max(rels) == 0:
        return
    items = [f"i{j}" for j in range(len(rels))]
    rel = dict(zip(items, map(float, rels)))
    ranked = sorted(items, key=lambda i: -rel[i])
    assert math.isclose(ndcg_at_k(ranked, rel, k), 1.0, abs_tol=1e-12)


@given(candidates(max_items=6), score_vals)
def test_evaluate_single_user_equals_per_user_metric(c, lam):
    items, scores, flags = c
    s = recommend("u", list(zip(items, scores)), None, lam, 4)
    rel = {i: float(f) for i, f in zip(items, flags)}
    rep = evaluate({"u": s}, {"u": UserTruth(dict(zip(items, flags)), rel)}, 4)
    assert rep.risk == risk_fraction(s, dict(zip(items, flags)))
    assert rep.ndcg_at_k == ndcg_at_k(s, rel, 4)


@given(st.floats(0, 1e4), st.floats(1e-3, 1e4))
def test_watch_fraction_sign_and_full_watch(w, d):
    f = watch_fraction(rec(watch=w, duration=d))
    assert f >= 0
    assert (f == 100.0) == (w / d == 1.0)
    assert watch_fraction(rec(watch=d, duration=d)) == 100.0


edges = st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), max_size=40, unique=True)


@given(edges, st.integers(1, 4))
def test_k_core_fixpoint(es, k):
    out = k_core_filter([rec(f"u{u}", f"i{i}", ts=t) for t, (u, i) in enumerate(es)], k)
    uc, ic = {}, {}
    for r in out:
        uc[r.user_id] = uc.get(r.user_id, 0) + 1
        ic[r.item_id] = ic.get(r.item_id, 0) + 1
    assert all(v >= k for v in uc.values()) and all(v >= k for v in ic.values())


@given(edges.filter(bool), st.integers(0, 5))
def test_split_partitions_first_views(es, seed):
    rs = [rec(f"u{u}", f"i{i}", ts=t) for t, (u, i) in enumerate(es)]
    ds = split(rs, seed=seed)
    parts = ds.train + ds.calibration + ds.test
    assert sorted(parts, key=lambda r: r.timestamp) == rs
    assert not {r.item_id for r in ds.test} & {r.item_id for r in ds.repeated_pool}


@given(st.lists(st.tuples(st.integers(0, 4), st.booleans()), min_size=1, max_size=30))
def test_each_user_in_exactly_one_bin(views):
    st_ = reporting_bins([rec(f"u{u}", f"i{j}", ts=j, flagged=f) for j, (u, f) in enumerate(views)])
    assert sum(b.n_users for b in st_.bins) == len({u for u, _ in views})
    assert st_.bins[-1].ecdf == 1.0


@given(st.lists(st.tuples(st.floats(0, 20), st.booleans(), st.booleans()), max_size=20),
       st.lists(st.floats(0, 200), min_size=1, max_size=6))
def test_validity_count_non_increasing(pairs, betas):
    rs = []
    for j, (w, f1, f2) in enumerate(pairs):
        rs += [rec("u", f"i{j}", ts=2 * j, watch=w, flagged=f1, view=1), rec("u", f"i{j}", ts=2 * j + 1, flagged=f2, view=2)]
    betas = sorted(betas)
    counts = [p.count for p in safe_pool_validity_curve(rs, betas)]
    assert counts == sorted(counts, reverse=True)


@given(st.lists(candidates(max_items=5), min_size=1, max_size=5))
def test_curve_in_unit_interval_and_zero_past_all_scores(users):
    cands = [UserCandidates(f"u{j}", items, scores, flags) for j, (items, scores, flags) in enumerate(users) if items]
    if not cands:
        return
    c = empirical_risk_curve(cands, k=3)
    assert ((c.risk_at >= 0) & (c.risk_at <= 1)).all()
    assert c.risk_at[-1] == 0.0
