"""Metric tests against plain-Python enumeration oracles."""

import csv

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from upliftlab import metrics as M
from upliftlab.errors import MetricError

from oracles import oracle_auuc, oracle_gain, oracle_kendall_bins, oracle_qini, random_case

FIX4 = dict(pred=[0.9, 0.8, 0.2, 0.1], t=[1, 0, 1, 0], y=[1.0, 0.0, 0.0, 1.0])


# -- fixtures -----------------------------------------------------------------------

def test_auuc_fixture():
    np.testing.assert_allclose(M.uplift_curve(**FIX4), [0, 2, 1.5, 0])
    assert M.auuc(**FIX4) == pytest.approx(0.21875, abs=1e-12)


def test_qini_fixture():
    np.testing.assert_allclose(M.qini_curve(**FIX4), [0, 1, 1, 0])
    assert M.qini(**FIX4) == pytest.approx(0.125, abs=1e-12)


def test_qini_treated_only_top_is_zero():
    q = M.qini_curve([3.0, 2.0, 1.0], [1, 1, 0], [5.0, 1.0, 2.0])
    assert q.tolist() == [0.0, 0.0, 6.0 - 2.0 * 2]


def test_equal_responses_give_zero_auuc(rng):
    t = np.array([0, 1] * 10)
    assert M.auuc(rng.standard_normal(20), t, np.full(20, 3.0)) == 0.0


def test_pehe_fixture():
    y0, y1 = np.array([0.0, 0.0]), np.array([1.0, 3.0])
    assert M.epsilon_ate([2.0, 2.0], y0, y1) == 0.0
    assert M.epsilon_pehe([2.0, 2.0], y0, y1) == 1.0


def test_truth_identity_and_constant_ate(rng):
    y0 = rng.standard_normal(50)
    y1 = y0 + rng.standard_normal(50)
    tau = y1 - y0
    assert M.epsilon_ate(tau, y0, y1) == 0.0 and M.epsilon_pehe(tau, y0, y1) == 0.0
    const = np.full(50, tau.mean())
    assert M.epsilon_ate(const, y0, y1) == pytest.approx(0.0, abs=1e-12)
    assert M.epsilon_pehe(const, y0, y1) == pytest.approx(tau.var(), rel=1e-12)


def test_missing_truth():
    with pytest.raises(MetricError):
        M.epsilon_pehe([1.0], None, [1.0])


@pytest.mark.parametrize("observed,expected", [([3, 2, 1], 1.0), ([1, 2, 3], -1.0), ([3, 1, 2], 1 / 3)])
def test_kendall_small(observed, expected):
    assert M.kendall_tau_a([3, 2, 1], observed) == pytest.approx(expected, abs=1e-15)


def test_kendall_bins_empty_arm_named():
    pred = np.arange(40, 0, -1.0)
    t = np.array([1, 0] * 20)
    t[:2] = 1
    with pytest.raises(MetricError, match="bin 0"):
        M.kendall_bins(pred, t, np.zeros(40))


def test_gain_endpoints(rng):
    y0 = rng.uniform(1, 2, 30)
    y1 = y0 + rng.standard_normal(30)
    g = M.gain_curve(rng.standard_normal(30), y0, y1)
    assert g[0].tolist() == [0.0, 0.0]
    assert g[-1, 0] == 100 and g[-1, 1] == pytest.approx((y1.sum() - y0.sum()) / y0.sum() * 100)
    assert g[:, 0].tolist() == list(range(0, 101, 5))


def test_gain_zero_denominator():
    with pytest.raises(MetricError):
        M.gain_curve([1.0, 2.0], [1.0, -1.0], [2.0, 2.0])


def test_gain_oracle_ranking_dominates_random():
    rng = np.random.default_rng(3)
    n = 2000
    y0 = rng.uniform(5, 10, n)
    tau = rng.standard_normal(n) * 3
    y1 = y0 + tau
    best = M.gain_curve(tau, y0, y1)[:, 1]
    for _ in range(5):
        rand = M.gain_curve(rng.standard_normal(n), y0, y1)[:, 1]
        assert np.all(best[1:-1] > rand[1:-1])
        assert best[0] == rand[0] and best[-1] == pytest.approx(rand[-1])


def test_anti_ranking_negates_qini():
    # mirrored data: treated respond only at high scores, controls only at low
    pred = np.array([4.0, 3, 2, 1, -1, -2, -3, -4])
    t = np.array([1, 0, 1, 0, 1, 0, 1, 0])
    y = np.where(t == 1, pred > 0, pred < 0).astype(float)
    good = M.qini(pred, t, y)
    bad = M.qini(-pred, t, y)
    assert good > 0 > bad


def test_random_shuffle_baseline():
    rng = np.random.default_rng(0)
    n = 2000
    t = rng.integers(0, 2, n)
    y = rng.standard_normal(n) + 0.5 * t
    vals = [M.qini(rng.permutation(n).astype(float), t, y) for _ in range(100)]
    assert abs(np.mean(vals)) < 3 * np.std(vals) / np.sqrt(100) + 1e-3


@pytest.mark.parametrize("bad", [dict(pred=[], t=[], y=[]), dict(pred=[1.0], t=[2], y=[0.0]),
                                 dict(pred=[1.0, 2.0], t=[1], y=[0.0]), dict(pred=[np.nan], t=[1], y=[0.0])])
def test_input_validation(bad):
    with pytest.raises(MetricError):
        M.auuc(**bad)


# -- oracle equivalence -------------------------------------------------------------

def test_brute_force_equivalence_200_cases():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n = int(rng.integers(1, 13))
        pred, t, y, index = random_case(rng, n)
        p, tt, yy, ii = pred.tolist(), t.tolist(), y.tolist(), index.tolist()
        assert abs(M.auuc(pred, t, y, index) - oracle_auuc(p, tt, yy, ii)) <= 1e-12
        assert abs(M.qini(pred, t, y, index) - oracle_qini(p, tt, yy, ii)) <= 1e-12
        y0 = rng.uniform(0.5, 2.0, n)
        y1 = y0 + rng.standard_normal(n)
        assert abs(M.epsilon_ate(pred, y0, y1) - abs(np.mean(y1 - y0) - np.mean(pred))) <= 1e-12
        pehe = sum((a - b - c) ** 2 for a, b, c in zip(y1, y0, pred)) / n
        assert abs(M.epsilon_pehe(pred, y0, y1) - pehe) <= 1e-12
        got = M.gain_curve(pred, y0, y1, index=index)
        want = oracle_gain(p, y0.tolist(), y1.tolist(), ii)
        np.testing.assert_allclose(got, np.array(want), rtol=0, atol=1e-12)
        n_bins = int(rng.integers(2, 5))
        if n >= 2 * n_bins:
            # interleave arms along the ranking so every bin holds both
            order = M.rank_order(pred, index)
            t2 = np.empty(n, dtype=int)
            t2[order] = np.arange(n) % 2
            try:
                want_k = oracle_kendall_bins(p, t2.tolist(), yy, ii, n_bins)
            except ZeroDivisionError:
                continue
            assert abs(M.kendall_bins(pred, t2, y, n_bins, index) - want_k) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.integers(0, 1), st.floats(-5, 5)), min_size=1, max_size=12))
def test_monotone_transform_invariance(rows):
    pred = np.array([r[0] for r in rows])
    t = np.array([r[1] for r in rows])
    y = np.array([r[2] for r in rows])
    for f in (np.exp, lambda v: 2 * v + 1, np.arctan):
        moved = f(pred)
        # floating point may merge nearly equal values; only strict transforms count
        assume(np.unique(moved).size == np.unique(pred).size)
        assert M.auuc(pred, t, y) == M.auuc(moved, t, y)
        assert M.qini(pred, t, y) == M.qini(moved, t, y)


def test_monotone_invariance_kendall(rng):
    pred = rng.standard_normal(200)
    t = rng.integers(0, 2, 200)
    y = rng.standard_normal(200) + t * pred
    assert M.kendall_bins(pred, t, y) == M.kendall_bins(np.exp(pred), t, y)
    assert M.auuc(pred, t, y) == M.auuc(np.exp(pred), t, y)


def test_ties_resolved_by_stable_index():
    pred = [1.0, 1.0, 1.0, 0.0]
    t = [1, 0, 1, 0]
    y = [3.0, 1.0, 0.0, 2.0]
    a = M.qini(pred, t, y, index=[0, 1, 2, 3])
    b = M.qini(pred, t, y, index=[2, 1, 0, 3])
    assert a == oracle_qini(pred, t, y, [0, 1, 2, 3])
    assert b == oracle_qini(pred, t, y, [2, 1, 0, 3])
    assert a != b


def test_evaluate_and_export(tmp_path, rng):
    n = 200
    pred = rng.standard_normal(n)
    t = rng.integers(0, 2, n)
    y0 = rng.uniform(1, 2, n)
    y1 = y0 + pred
    y = np.where(t == 1, y1, y0)
    ev = M.evaluate(pred, t, y, y0, y1)
    d = ev.as_dict()
    assert set(d) == {"auuc", "qini", "kendall", "n", "eps_ate", "eps_pehe"}
    assert d["eps_pehe"] == pytest.approx(0.0, abs=1e-24) and d["n"] == n
    assert set(M.evaluate(pred, t, y).as_dict()) == {"auuc", "qini", "kendall", "n"}
    paths = M.export_curves(tmp_path, pred, t, y, y0, y1)
    rows = list(csv.reader((tmp_path / "gain_curve.csv").open()))
    assert rows[0] == ["s_pct", "gain_pct"] and rows[1] == ["0", "0.0"] and len(rows) == 22
    rows = list(csv.reader((tmp_path / "qini_curve.csv").open()))
    assert rows[0] == ["k", "value"] and len(rows) == n + 1
    assert float(rows[-1][1]) == pytest.approx(M.qini_curve(pred, t, y)[-1])
    assert len(paths) == 3
