import math

import numpy as np
import pytest

from saferec.calibration import (
    RiskCurve,
    ThresholdCache,
    ThresholdResult,
    calibration_fingerprint,
    default_grid,
    empirical_risk_curve,
    monotonize,
    select_threshold,
)
from saferec.errors import InfeasibleAlphaError
from saferec.selection import UserCandidates


def test_no_flags_gives_zero_curve():
    users = [UserCandidates(f"u{j}", ("a", "b"), [0.1 * j, 0.5], [False, False]) for j in range(4)]
    c = empirical_risk_curve(users, k=2)
    assert (c.risk_at == 0).all()


def test_four_item_instance_remove(four_item_user):
    c = empirical_risk_curve([four_item_user], k=4, grid=[0, 2, 6])
    np.testing.assert_array_equal(c.risk_at, [0.25, 1.0, 0.0])
    np.testing.assert_array_equal(monotonize(c).risk_at, [1.0, 1.0, 0.0])


def test_four_item_instance_replace(four_item_user_with_safe_item):
    u = four_item_user_with_safe_item
    c = empirical_risk_curve([u], k=4, strategy="replace", safe_pools={"u": u.safe_pool(50)}, grid=[0, 2, 6])
    assert c.risk_at[2] == 0.0
    # at lambda=2: D plus the safe replacement E
    assert c.risk_at[1] == 0.5


def test_curve_equals_direct_evaluation():
    from saferec.metrics import risk_fraction
    from saferec.selection import recommend

    rng = np.random.default_rng(2)
    users = [
        UserCandidates(f"u{j}", tuple(f"i{t}" for t in range(6)), rng.integers(0, 4, 6) / 2, rng.random(6) < 0.4)
        for j in range(7)
    ]
    grid = np.linspace(-0.5, 2.5, 13)
    c = empirical_risk_curve(users, k=3, grid=grid)
    for g, r in zip(grid, c.risk_at):
        direct = np.mean([risk_fraction(recommend(u.user_id, u.scored, None, g, 3), u.flag_map()) for u in users])
        assert r == pytest.approx(direct, abs=1e-15)


def test_default_grid_has_sentinel_above_max():
    users = [UserCandidates("u", ("a", "b"), [0.3, 0.7], [False, True])]
    g = default_grid(users)
    assert list(g[:2]) == [0.3, 0.7] and g[2] > 0.7
    assert empirical_risk_curve(users, k=2).risk_at[-1] == 0.0


def test_monotonize_examples():
    flat = RiskCurve([0, 1, 2], [0.5, 0.2, 0.0], n=3)
    np.testing.assert_array_equal(monotonize(flat).risk_at, flat.risk_at)
    rng = np.random.default_rng(0)
    r = rng.random(30)
    m = monotonize(RiskCurve(np.arange(30), r, n=1)).risk_at
    np.testing.assert_array_equal(m, [max(r[j:]) for j in range(30)])


def test_select_boundary_feasible():
    c = RiskCurve([0.1, 0.2, 0.3], [0.0, 0.0, 0.0], n=9)
    th = select_threshold(c, 0.1)
    assert th.feasible and th.lambda_hat == 0.1
    assert th.inflated_risk_at_lambda <= 0.1


def test_select_too_small_alpha_raises():
    c = RiskCurve([0.1, 0.2], [0.0, 0.0], n=5)
    with pytest.raises(InfeasibleAlphaError, match="n=5"):
        select_threshold(c, 0.1)


def test_select_no_grid_point_qualifies():
    th = select_threshold(RiskCurve([0.0, 1.0], [0.5, 0.4], n=100), 0.2)
    assert not th.feasible and math.isinf(th.lambda_hat)


def test_select_rejects_alpha_outside_unit_interval():
    with pytest.raises(ValueError):
        select_threshold(RiskCurve([0.0], [0.0], n=10), 1.0)


def test_select_three_user_instance_matches_scan():
    users = [
        UserCandidates("a", ("x", "y", "z"), [0.9, 0.5, 0.1], [False, True, True]),
        UserCandidates("b", ("x", "y"), [0.8, 0.3], [True, False]),
        UserCandidates("c", ("x", "y", "z"), [0.6, 0.4, 0.2], [False, False, True]),
    ]
    c = empirical_risk_curve(users, k=3)
    for alpha in (0.25, 0.3, 0.5, 0.7, 0.9):
        th = select_threshold(c, alpha)
        m = [max(c.risk_at[j:]) for j in range(len(c.grid))]
        ok = [g for g, r in zip(c.grid, m) if 3 / 4 * r + 1 / 4 <= alpha]
        assert th.lambda_hat == (ok[0] if ok else math.inf)


def test_replace_requires_pools(four_item_user):
    with pytest.raises(ValueError):
        empirical_risk_curve([four_item_user], k=2, strategy="replace")


def test_curve_validation():
    with pytest.raises(ValueError):
        RiskCurve([1, 0], [0, 0], n=1)
    with pytest.raises(ValueError):
        RiskCurve([0, 1], [0, 1.5], n=1)


def test_threshold_json_round_trip():
    for th in (ThresholdResult(0.1, 0.5, True, 0.09, 10), ThresholdResult(0.1, math.inf, False, 0.3, 10)):
        assert ThresholdResult.from_json(th.to_json()) == th


def test_risk_curve_csv(tmp_path):
    RiskCurve([0, 1], [0.5, 0.0], n=3).to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "lambda,risk,inflated_risk"
    assert lines[1] == "0.0,0.5,0.625"


def test_cache_persists(tmp_path, four_item_user):
    h = calibration_fingerprint([four_item_user], 4)
    cache = ThresholdCache(tmp_path / "c.json")
    assert cache.get(0.5, "remove", "-", h) is None
    th = ThresholdResult(0.5, 6.0, True, 0.4, 1)
    cache.put("remove", "-", h, th)
    cache.save()
    again = ThresholdCache(tmp_path / "c.json")
    assert again.get(0.5, "remove", "-", h) == th
    assert again.hits == 1


def test_fingerprint_sensitive_to_flags(four_item_user):
    other = UserCandidates("u", four_item_user.items, four_item_user.scores, [False] * 4)
    assert calibration_fingerprint([four_item_user], 4) != calibration_fingerprint([other], 4)
