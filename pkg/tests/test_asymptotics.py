import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from semimarkov_exit.asymptotics import (IndexHypothesisError, TailPredictor, ZeroPredictor, ZeroSurvival,
                                         bm_no_drift_predictor, diagnostic_ratios, exponential_predictor,
                                         finite_mean_predictor, general_predictor, mittag_leffler_predictor,
                                         predict_tail, predict_zero, rapid_decay_diagnostic,
                                         write_diagnostics_csv)
from semimarkov_exit.exit_mc import SurvivalEstimate
from semimarkov_exit.special_fn import gamma_fn
from semimarkov_exit.subordination import BernsteinFunction, drift_bernstein, stable_bernstein


def test_finite_mean_example():
    p = finite_mean_predictor(1.0, stable_bernstein(0.7))
    assert predict_tail(p, 50.0) == pytest.approx(50 ** -0.7 / math.gamma(0.3), rel=1e-13)


def test_mittag_leffler_at_zero():
    for a in (0.2, 0.5, 0.9):
        assert predict_tail(mittag_leffler_predictor(1.0, a), 0.0) == 1.0


def test_bm_no_drift_high_precision():
    p = bm_no_drift_predictor(1.0, stable_bernstein(0.75))
    with mpmath.workdps(40):
        fl = mpmath.mpf(50) ** mpmath.mpf(-0.75)
        ref = (1 - mpmath.exp(-mpmath.sqrt(2 * fl))) / mpmath.gamma(1 - mpmath.mpf(0.75) / 2)
    assert predict_tail(p, 50.0) == pytest.approx(float(ref), rel=1e-13)


def test_exponential_matches_mittag_leffler_tail():
    t = 1e3
    ml = predict_tail(mittag_leffler_predictor(1.0, 0.5), t)
    assert abs(ml * math.gamma(0.5) * t ** 0.5 - 1.0) <= 0.1
    ex = predict_tail(exponential_predictor(1.0, stable_bernstein(0.5)), t)
    assert abs(ml / ex - 1.0) <= 0.1


@given(st.floats(0.05, 0.95), st.floats(0.1, 10.0), st.floats(1.0, 1e6))
def test_general_with_linear_g_is_finite_mean(alpha, C, t):
    f = stable_bernstein(alpha)
    a = predict_tail(general_predictor(lambda s: C * s, 1.0, f), t)
    b = predict_tail(finite_mean_predictor(C, f), t)
    assert a == pytest.approx(b, rel=1e-14)


def test_gamma_values_agree_with_special_fn():
    for a in (0.3, 0.5, 0.7):
        p = finite_mean_predictor(1.0, stable_bernstein(a))
        assert predict_tail(p, 1.0) == pytest.approx(1.0 / gamma_fn(1.0 - a), rel=1e-12)


def test_predictor_hypotheses():
    with pytest.raises(IndexHypothesisError):
        general_predictor(lambda s: s, 1.5, stable_bernstein(0.5))
    with pytest.raises(IndexHypothesisError):
        finite_mean_predictor(1.0, drift_bernstein())  # index at zero must be below 1
    with pytest.raises(ValueError):
        TailPredictor("nonsense", stable_bernstein(0.5))
    with pytest.raises(ValueError):
        finite_mean_predictor(-1.0, stable_bernstein(0.5))
    with pytest.raises(ValueError):
        predict_tail(finite_mean_predictor(1.0, stable_bernstein(0.5)), 0.0)
    custom = BernsteinFunction(lambda lam: np.sqrt(lam), 0.5, 0.5)
    with pytest.raises(IndexHypothesisError):
        TailPredictor("mittag-leffler", custom, {"h": 1.0})


def test_array_evaluation():
    p = finite_mean_predictor(2.0, stable_bernstein(0.6))
    t = np.array([1.0, 10.0, 100.0])
    np.testing.assert_allclose(predict_tail(p, t), [predict_tail(p, x) for x in t], rtol=1e-15)


# small time -------------------------------------------------------------------

def test_zero_predictor_examples():
    p = ZeroPredictor(lambda t: t, 1.0, stable_bernstein(0.5))
    assert predict_zero(p, 0.01) == pytest.approx(0.1 / math.gamma(1.5), rel=1e-13)
    assert predict_zero(p, 0.01) == pytest.approx(0.11284, abs=1e-5)
    for a in (0.3, 0.8):
        q = ZeroPredictor(lambda t: t, 1.0, stable_bernstein(a))
        assert predict_zero(q, 0.2) == pytest.approx(0.2 ** a / math.gamma(1 + a), rel=1e-13)
    ident = ZeroPredictor(lambda t: np.sin(t), 1.0, drift_bernstein())
    t = np.array([0.001, 0.01, 0.3])
    np.testing.assert_array_equal(predict_zero(ident, t), np.sin(t))


def test_zero_predictor_hypotheses():
    with pytest.raises(IndexHypothesisError):
        ZeroPredictor(lambda t: t, 0.0, stable_bernstein(0.5))
    with pytest.raises(ValueError):
        predict_zero(ZeroPredictor(lambda t: t, 1.0, stable_bernstein(0.5)), 0.0)


# diagnostics -------------------------------------------------------------------

def _estimate_from_survival(grid, surv, n=10_000):
    alive = np.round(np.asarray(surv) * n).astype(np.int64)
    return SurvivalEstimate(np.asarray(grid), alive, n, int(alive[-1]))


def test_diagnostics_on_exact_power_law():
    a = 0.5
    grid = np.arange(0, 101) * 1.0
    surv = np.r_[1.0, grid[1:] ** -a / math.gamma(1 - a)]
    n = 2 ** 40  # fine counts so the rounding is negligible
    est = SurvivalEstimate(grid, np.round(surv * n).astype(np.int64), n, 0)
    rows = diagnostic_ratios(est, finite_mean_predictor(1.0, stable_bernstein(a)), [25, 50, 100])
    for r in rows:
        assert r.R == pytest.approx(1.0, abs=1e-9)
        assert r.RL == pytest.approx(-a, abs=1e-9)
        assert r.reliable


def test_diagnostics_flags_and_errors(tmp_path):
    grid = np.arange(0, 11) * 1.0
    surv = np.r_[1.0, 0.5, 0.2, 0.05, 0.009, 0.005, 0.001, 0.0, 0.0, 0.0, 0.0]
    est = _estimate_from_survival(grid, surv)
    p = finite_mean_predictor(1.0, stable_bernstein(0.5))
    rows = diagnostic_ratios(est, p, [2, 4])
    assert rows[0].reliable and not rows[1].reliable
    with pytest.raises(ZeroSurvival):
        diagnostic_ratios(est, p, [8])
    bm = diagnostic_ratios(est, bm_no_drift_predictor(1.0, stable_bernstein(0.5)), [2])
    assert math.isnan(bm[0].RL) and bm[0].R > 0
    write_diagnostics_csv(tmp_path / "d.csv", rows, seed=5)
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "# seed=5" and lines[1] == "t,RL,R,n_alive,reliable" and len(lines) == 4


def test_rapid_decay_on_doubles():
    power = rapid_decay_diagnostic(lambda t: t ** 0.5)
    assert not power.consistent_with_rapid_decay and not power.strictly_rapid
    assert power.ratios[1][0] < power.ratios[1][-1]  # t^-0.5 grows as t shrinks
    fast = rapid_decay_diagnostic(lambda t: math.exp(-4.0 / t))
    assert fast.strictly_rapid and fast.consistent_with_rapid_decay
    zero = rapid_decay_diagnostic(lambda t: 0.0 if t < 0.3 else t)
    assert zero.ratios[2][1:] == (0.0, 0.0)
    assert zero.consistent_with_rapid_decay and not zero.strictly_rapid


def test_rapid_decay_resolution_checks():
    est = _estimate_from_survival(np.arange(0, 5) * 0.25, [1, 1, 0.9, 0.8, 0.7])
    with pytest.raises(ValueError):
        rapid_decay_diagnostic(est)  # 0.1 is below the grid step
    with pytest.raises(ValueError):
        rapid_decay_diagnostic(lambda t: t, times=(0.1,))
