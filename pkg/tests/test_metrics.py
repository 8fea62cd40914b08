import math

import numpy as np
import pandas as pd
import pytest

from src.metrics import POOLED, ccc, evaluate_timeline, evaluate_timelines, first_difference_variance, pearson_cc, rmse
from src.errors import MetricError


def _two_pass(p, g):
    n = len(p)
    mp = sum(p) / n
    mg = sum(g) / n
    vp = sum((a - mp) ** 2 for a in p) / n
    vg = sum((b - mg) ** 2 for b in g) / n
    cov = sum((a - mp) * (b - mg) for a, b in zip(p, g)) / n
    return cov / math.sqrt(vp * vg), 2 * cov / (vp + vg + (mp - mg) ** 2)


def test_rmse_values():
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5), abs=1e-15)
    assert rmse([0.5], [0.5]) == 0.0
    with pytest.raises(MetricError):
        rmse([], [])
    with pytest.raises(MetricError):
        rmse([1.0, 2.0], [1.0])


def test_cc_sign_and_affine_invariance():
    x = np.array([0.1, -0.4, 0.3, 0.9, -0.2])
    assert pearson_cc(2 * x + 1, x) == pytest.approx(1.0, abs=1e-12)
    assert pearson_cc(-x, x) == pytest.approx(-1.0, abs=1e-12)


def test_ccc_values():
    assert ccc([0.5, 0.5, 0.5], [1.0, 2.0, 3.0]) == 0.0
    assert ccc([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == pytest.approx(-1.0, abs=1e-12)


def test_shift_penalized_by_ccc_not_cc():
    gold = np.sin(np.linspace(0, 6, 200)) * 0.5
    pred = gold + 0.2
    assert pearson_cc(pred, gold) == pytest.approx(1.0, abs=1e-12)
    assert ccc(pred, gold) < 0.9


def test_perfect_prediction():
    gold = np.linspace(-0.8, 0.6, 50)
    assert rmse(gold, gold) == 0.0
    assert pearson_cc(gold, gold) == pytest.approx(1.0, abs=1e-12)
    assert ccc(gold, gold) == pytest.approx(1.0, abs=1e-12)


def test_against_two_pass_reference():
    r = np.random.default_rng(2015)
    for _ in range(1000):
        n = int(r.integers(2, 60))
        gold = r.uniform(-1, 1, size=n)
        pred = r.uniform(-0.5, 1.5) * gold + r.normal(0, r.uniform(0.01, 0.5), size=n) + r.normal(0, 0.2)
        ref_cc, ref_ccc = _two_pass(list(pred), list(gold))
        ref_rmse = math.sqrt(sum((a - b) ** 2 for a, b in zip(pred, gold)) / n)
        assert rmse(pred, gold) == pytest.approx(ref_rmse, abs=1e-12)
        assert pearson_cc(pred, gold) == pytest.approx(ref_cc, abs=1e-12)
        assert ccc(pred, gold) == pytest.approx(ref_ccc, abs=1e-12)


def test_affine_copies_separate_cc_from_ccc():
    r = np.random.default_rng(7)
    for _ in range(100):
        x = r.normal(size=50)
        a = r.choice([r.uniform(0.1, 0.9), r.uniform(1.1, 3.0)])
        b = r.choice([-1.0, 1.0]) * r.uniform(0.05, 1.0)
        assert pearson_cc(x, a * x + b) == pytest.approx(1.0, abs=1e-12)
        assert ccc(x, a * x + b) < 1.0


def test_symmetry_and_joint_translation():
    r = np.random.default_rng(11)
    for _ in range(50):
        p, g = r.normal(size=30), r.normal(size=30)
        assert rmse(p, g) == rmse(g, p)
        assert pearson_cc(p, g) == pytest.approx(pearson_cc(g, p), abs=1e-15)
        assert ccc(p, g) == pytest.approx(ccc(g, p), abs=1e-15)
        c = r.uniform(-5, 5)
        assert ccc(p + c, g + c) == pytest.approx(ccc(p, g), abs=1e-12)


def test_correlations_are_bounded():
    r = np.random.default_rng(3)
    for _ in range(500):
        g = r.normal(size=int(r.integers(2, 40)))
        p = r.normal(0, 3) * g + r.normal(0, r.choice([0.0, 1e-9, 0.5]), size=g.size) + r.normal()
        assert -1.0 <= pearson_cc(p, g) <= 1.0
        assert -1.0 <= ccc(p, g) <= 1.0


def test_undefined_correlations():
    with pytest.raises(MetricError, match="undefined"):
        pearson_cc([1.0, 1.0, 1.0], [0.1, 0.2, 0.3])
    with pytest.raises(MetricError, match="undefined CCC"):
        ccc([0.3, 0.3], [0.3, 0.3])
    with pytest.raises(MetricError):
        ccc([0.3], [0.3])


def test_ccc_of_constants_with_different_means_is_zero():
    assert ccc([0.3, 0.3], [0.1, 0.1]) == 0.0


def test_evaluate_pools_the_concatenation():
    a_p, a_g = np.array([0.1, 0.2, 0.4]), np.array([0.0, 0.3, 0.5])
    b_p, b_g = np.array([-0.5, -0.1]), np.array([-0.4, 0.0])
    report = evaluate_timelines([("a", a_p, a_g, None), ("b", b_p, b_g, np.array([False, True]))])
    all_p, all_g = np.concatenate([a_p, b_p]), np.concatenate([a_g, b_g])
    assert report.n == 5
    assert report.rmse == rmse(all_p, all_g)
    assert report.ccc == ccc(all_p, all_g)
    assert [r.sequence_id for r in report.per_sequence] == ["a", "b"]
    assert report.per_sequence[1].n_interpolated == 1
    assert report.pooled.n_interpolated == 1


def test_evaluate_strict_and_lenient():
    with pytest.raises(MetricError):
        evaluate_timeline(np.zeros(4), np.linspace(0, 1, 4))
    report = evaluate_timeline(np.zeros(4), np.linspace(0, 1, 4), lenient=True)
    assert math.isnan(report.cc)
    assert report.ccc == 0.0
    with pytest.raises(MetricError):
        evaluate_timelines([])


def test_report_files(tmp_path):
    gold = np.linspace(-0.5, 0.5, 10)
    report = evaluate_timeline(gold * 0.8, gold, sequence_id="seq000")
    report.to_csv(tmp_path / "r.csv")
    df = pd.read_csv(tmp_path / "r.csv")
    assert list(df.columns) == ["sequence_id", "n", "rmse", "cc", "ccc"]
    assert list(df["sequence_id"]) == ["seq000", POOLED]
    assert df["rmse"].iloc[-1] == report.rmse
    report.to_json(tmp_path / "r.json")
    assert (tmp_path / "r.json").read_text().count("reference_best_dev") == 1


def test_first_difference_variance():
    assert first_difference_variance([1.0, 1.0, 1.0]) == 0.0
    assert first_difference_variance([0.0]) == 0.0
    assert first_difference_variance([0.0, 1.0, 0.0]) == pytest.approx(1.0)
