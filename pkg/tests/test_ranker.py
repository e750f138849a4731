import numpy as np
import pytest

from saferec.errors import MissingScoreError
from saferec.ranker import (
    LatentFactorModel,
    ScoreTable,
    _Params,
    load_scorer,
    objective,
    rank,
    score,
    train_latent_factor,
)

from conftest import rec


def _model(P, Q, bu=None, bi=None):
    P, Q = np.atleast_2d(np.asarray(P, float)), np.atleast_2d(np.asarray(Q, float))
    return LatentFactorModel(
        user_index={f"u{j}": j for j in range(len(P))},
        item_index={f"i{j}": j for j in range(len(Q))},
        user_factors=P,
        item_factors=Q,
        user_bias=np.zeros(len(P)) if bu is None else np.asarray(bu, float),
        item_bias=np.zeros(len(Q)) if bi is None else np.asarray(bi, float),
    )


def test_table_lookup():
    assert score(ScoreTable({("u", "i"): 2.5}), "u", "i") == 2.5


def test_table_missing_pair_raises():
    with pytest.raises(MissingScoreError):
        ScoreTable({("u", "i"): 1.0}).score("u", "j")
    assert ScoreTable({}, default=0.0).score("u", "j") == 0.0


def test_table_rejects_non_finite():
    with pytest.raises(ValueError):
        ScoreTable({("u", "i"): float("nan")})


def test_zero_model_scores_zero():
    m = _model(np.zeros((2, 3)), np.zeros((2, 3)))
    assert all(m.score(u, i) == 0.0 for u in ("u0", "u1") for i in ("i0", "i1"))


def test_dot_product():
    assert _model([[1, 0]], [[0.5, 2]]).score("u0", "i0") == 0.5


def test_unknown_ids_use_zero_vectors():
    m = _model([[1, 0]], [[0.5, 2]], bu=[0.25], bi=[0.125])
    assert m.score("u0", "zzz") == 0.25
    assert m.score("nobody", "i0") == 0.125


@pytest.mark.parametrize(
    "scores,expected",
    [
        ({"A": 1, "B": 3}, ["B", "A"]),
        ({"A": 1, "B": 1}, ["A", "B"]),
        ({"A": 1, "B": 1, "C": 1, "D": 5}, ["D", "A", "B", "C"]),
    ],
)
def test_rank(scores, expected):
    table = ScoreTable({("u", i): s for i, s in scores.items()})
    assert rank(table, "u", list(reversed(list(scores)))) == expected


def test_rank_empty_raises():
    with pytest.raises(ValueError):
        rank(ScoreTable({}), "u", [])


def test_rank_invariant_under_increasing_map():
    rng = np.random.default_rng(0)
    items = [f"i{j}" for j in range(30)]
    s = rng.integers(0, 5, size=30).astype(float)
    a = ScoreTable({("u", i): v for i, v in zip(items, s)})
    b = ScoreTable({("u", i): np.exp(3 * v) - 7 for i, v in zip(items, s)})
    assert rank(a, "u", items) == rank(b, "u", items)
    assert sorted(rank(a, "u", items)) == sorted(items)


def test_zero_learning_rate_keeps_initialisation():
    train = [rec("u1", "a", watch=5), rec("u2", "b", watch=9)]
    m0 = train_latent_factor(train, d=3, epochs=0, seed=7)
    m1 = train_latent_factor(train, d=3, epochs=5, learning_rate=0.0, seed=7)
    np.testing.assert_array_equal(m0.user_factors, m1.user_factors)
    np.testing.assert_array_equal(m0.item_factors, m1.item_factors)
    np.testing.assert_array_equal(m1.user_bias, 0.0)


def test_single_example_fit():
    # with reg=0 the optimum interpolates the single target exactly
    m = train_latent_factor([rec("u", "i", watch=10, duration=10)], d=2, epochs=300, learning_rate=0.1, regularization=0.0)
    assert abs(m.score("u", "i") - 1.0) < 0.05


def test_two_by_two_ordering():
    targets = {("u1", "a"): 0.9, ("u1", "b"): 0.1, ("u2", "a"): 0.2, ("u2", "b"): 0.8}
    train = [rec(u, i, ts=t, watch=10 * y) for t, ((u, i), y) in enumerate(targets.items())]
    m = train_latent_factor(train, d=4, epochs=2000, learning_rate=0.1, regularization=0.0, batch_size=None)
    for u in ("u1", "u2"):
        got = sorted(("a", "b"), key=lambda i: -m.score(u, i))
        want = sorted(("a", "b"), key=lambda i: -targets[(u, i)])
        assert got == want


def test_full_batch_loss_non_increasing():
    rng = np.random.default_rng(1)
    train = [rec(f"u{rng.integers(5)}", f"i{rng.integers(6)}", ts=t, watch=float(rng.uniform(0, 10))) for t in range(40)]
    m = train_latent_factor(train, d=3, epochs=50, learning_rate=0.05, batch_size=None)
    h = np.asarray(m.loss_history)
    assert np.isfinite(h).all()
    assert (np.diff(h) <= 1e-12).all()


def test_targets_clipped_at_full_watch():
    long = train_latent_factor([rec("u", "i", watch=30, duration=10)], d=1, epochs=200, learning_rate=0.1, regularization=0.0, seed=2)
    full = train_latent_factor([rec("u", "i", watch=10, duration=10)], d=1, epochs=200, learning_rate=0.1, regularization=0.0, seed=2)
    assert long.score("u", "i") == full.score("u", "i")


def test_divergence_raises():
    from saferec.errors import DivergenceError

    train = [rec(f"u{j}", f"i{j % 3}", ts=j, watch=10) for j in range(12)]
    with pytest.raises(DivergenceError):
        train_latent_factor(train, d=8, epochs=50, learning_rate=1e4, init_scale=1.0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    u = rng.integers(0, 4, 15)
    i = rng.integers(0, 5, 15)
    y = rng.random(15)
    p = _Params(rng.normal(size=(4, 3)), rng.normal(size=(5, 3)), rng.normal(size=4), rng.normal(size=5))
    _, g = objective(p, u, i, y, 0.05)
    h = 1e-6
    for name in ("P", "Q", "bu", "bi"):
        arr = getattr(p, name)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp, _ = objective(p, u, i, y, 0.05)
            arr[idx] = old - h
            lm, _ = objective(p, u, i, y, 0.05)
            arr[idx] = old
            assert getattr(g, name)[idx] == pytest.approx((lp - lm) / (2 * h), rel=1e-5, abs=1e-8)


def test_save_load_round_trip(tmp_path):
    train = [rec(f"u{j % 3}", f"i{j % 4}", ts=j, watch=j % 10) for j in range(12)]
    m = train_latent_factor(train, d=2, epochs=3)
    m.save(tmp_path / "m.json")
    back = load_scorer(tmp_path / "m.json")
    assert back.score("u1", "i2") == m.score("u1", "i2")
    assert back.loss_history == m.loss_history


def test_table_csv_round_trip(tmp_path):
    t = ScoreTable({("u", "a"): 0.1, ("v", "b"): -2.0})
    t.to_csv(tmp_path / "s.csv")
    assert load_scorer(tmp_path / "s.csv").scores == t.scores
