import csv
import json
import math

import numpy as np
import pytest

from kftune.consistency import (
    StatSeries,
    average_series,
    chi2_bounds,
    consistency_test,
    j_nees,
    j_nis,
    nees,
    nis,
)
from oracles import linear_gaussian_nees


def _random_spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + n * np.eye(n)


def test_quadratic_forms_trivial():
    assert nees(np.zeros(6), np.eye(6)) == 0.0
    assert nees(np.ones(6), np.eye(6)) == pytest.approx(6.0)
    assert nis(np.zeros(4), np.eye(4)) == 0.0
    assert nis(np.ones(4), np.eye(4)) == pytest.approx(4.0)


@pytest.mark.parametrize("fn,n", [(nees, 6), (nis, 4)])
def test_quadratic_forms_explicit_inverse(fn, n):
    rng = np.random.default_rng(n)
    for _ in range(50):
        P = _random_spd(rng, n)
        e = rng.normal(size=n)
        assert fn(e, P) == pytest.approx(float(e @ np.linalg.inv(P) @ e), abs=1e-10)
    E = rng.normal(size=(7, n))
    Ps = np.stack([_random_spd(rng, n) for _ in range(7)])
    ref = [e @ np.linalg.inv(P) @ e for e, P in zip(E, Ps)]
    np.testing.assert_allclose(fn(E, Ps), ref, atol=1e-10)


def test_quadratic_form_rejects_indefinite():
    with pytest.raises(np.linalg.LinAlgError):
        nees(np.ones(2), np.diag([1.0, -1.0]))


def test_average_series():
    single = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(average_series(single, 3).values, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(average_series(np.full((5, 4), 2.5), 4).values, [2.5] * 4)
    m = np.array([[1.0, 2, 3, 4], [5, 6, 7, 8], [9, 10, 11, 12]])
    np.testing.assert_array_equal(average_series(m, 4).values, [5.0, 6.0, 7.0, 8.0])
    with pytest.raises(ValueError):
        average_series(m, 4, n_runs=2)
    with pytest.raises(ValueError):
        StatSeries([-1.0], 4, 1)


def test_chi2_bounds_reference_values():
    b = chi2_bounds(0.05, 1, 1)
    assert b.lower == pytest.approx(0.000982, abs=1e-3)
    assert b.upper == pytest.approx(5.0239, abs=1e-3)
    big = chi2_bounds(0.05, 10**6, 6)
    assert abs(big.lower - 6) < 0.02 and abs(big.upper - 6) < 0.02
    for alpha in (0.01, 0.05, 0.2):
        for n in (1, 10, 200):
            for dof in (1, 4, 6):
                b = chi2_bounds(alpha, n, dof)
                assert b.lower < dof < b.upper
    with pytest.raises(ValueError):
        chi2_bounds(1.5, 10, 4)


def test_consistency_verdicts():
    b = chi2_bounds(0.05, 50, 4)
    r = consistency_test(StatSeries(np.full(30, 4.0), 4, 50), b)
    assert r.pass_fraction == 1.0 and r.verdict == "consistent"
    r = consistency_test(StatSeries(np.full(30, 400.0), 4, 50), b)
    assert r.pass_fraction == 0.0 and r.verdict == "optimistic"
    r = consistency_test(StatSeries(np.full(30, 0.04), 4, 50), b)
    assert r.verdict == "pessimistic"
    assert list(r.flags) == [-1] * 30


def test_perfect_filter_coverage():
    series = average_series(linear_gaussian_nees(200, 100, seed=0), 4)
    r = consistency_test(series, chi2_bounds(0.05, 200, 4), "nees")
    assert 0.90 <= r.pass_fraction <= 0.99
    assert r.verdict == "consistent"


def test_log_ratio_cost():
    dof = 4
    assert j_nis(StatSeries(np.full(10, 4.0), dof, 1)) == 0.0
    assert j_nis(StatSeries(np.full(10, 4.0 * math.e), dof, 1)) == pytest.approx(1.0)
    assert j_nees(StatSeries(np.full(10, 4.0 / math.e), dof, 1)) == pytest.approx(1.0)
    assert j_nis(StatSeries(np.zeros(5), dof, 1)) == math.inf
    s = StatSeries(np.r_[np.full(5, 100.0), np.full(5, 4.0)], dof, 1)
    assert j_nis(s, discard=5) == 0.0
    with pytest.raises(ValueError):
        j_nis(s, discard=10)


def test_report_serialization(tmp_path):
    b = chi2_bounds(0.05, 10, 4)
    r = consistency_test(StatSeries([4.0, 100.0, 0.01], 4, 10), b)
    r.to_csv(tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["k", "stat", "lower", "upper", "flag"]
    assert [row[4] for row in rows[1:]] == ["in", "above", "below"]
    d = json.loads(r.to_json(tmp_path / "r.json"))
    assert d["verdict"] == r.verdict
    assert json.loads((tmp_path / "r.json").read_text())["per_step"]["k"] == [1, 2, 3]
