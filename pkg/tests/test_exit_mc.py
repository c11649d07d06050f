import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import signal

from semimarkov_exit.exit_mc import (ExitExperimentConfig, ExponentialExit, GaussMarkovPathModel, LinearSDE,
                                     SurvivalEstimate, estimate_survival, exit_indices, exit_times,
                                     path_stream, simulate_exit_time, simulate_moving_set_exit,
                                     simulate_spike_train, simulate_spike_trains, survival_from_indices,
                                     trace_exit)
from semimarkov_exit.gauss_markov import Threshold, constant_threshold, ou_spec
from semimarkov_exit.lif import LifParams, lif_config
from semimarkov_exit.rng_stable import RandomStream
from semimarkov_exit.special_fn import mittag_leffler
from semimarkov_exit.subordination import BernsteinFunction, drift_bernstein, stable_bernstein


def wiener_config(alpha=0.7, drift=1.0, c=1.0, n_paths=200, horizon=20.0, seed=3, dt=0.01, dy=0.01):
    f = drift_bernstein() if alpha is None else stable_bernstein(alpha)
    return ExitExperimentConfig(LinearSDE(math.inf, drift, 1.0), f, constant_threshold(c),
                                dt=dt, dy=dy, horizon=horizon, n_paths=n_paths, seed=seed)


# configuration --------------------------------------------------------------

def test_config_rejects_threshold_at_start():
    with pytest.raises(ValueError):
        ExitExperimentConfig(LinearSDE(math.inf, 0.0, 1.0, x0=1.0), drift_bernstein(), constant_threshold(1.0))


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(dy=-1.0), dict(horizon=0.0), dict(n_paths=0)])
def test_config_rejects_bad_numbers(kw):
    with pytest.raises(ValueError):
        wiener_config().__class__(LinearSDE(math.inf, 0.0, 1.0), drift_bernstein(), constant_threshold(1.0), **kw)


def test_config_rejects_custom_bernstein():
    f = BernsteinFunction(lambda lam: np.log1p(lam), 1.0, 0.01)
    with pytest.raises(NotImplementedError):
        ExitExperimentConfig(LinearSDE(math.inf, 0.0, 1.0), f, constant_threshold(1.0))


# single trajectories --------------------------------------------------------

@given(st.integers(0, 2 ** 32), st.floats(0.2, 3.0))
def test_identity_time_change_reproduces_markov_exit(seed, c):
    # with sigma(y) = y the engine draws only model noise, so M can be rebuilt from the same stream
    cfg = wiener_config(alpha=None, drift=0.5, c=c, horizon=10.0)
    tr = trace_exit(cfg, RandomStream(seed, 0))
    z = RandomStream(seed, 0).normal(4096 * 4)
    m = np.cumsum(0.5 * 0.01 + math.sqrt(0.01) * z)
    hits = np.flatnonzero(m >= c)
    first = int(hits[0]) + 1 if hits.size else None
    if first is None or first > cfg.n_grid:
        assert tr.censored
    else:
        assert tr.m_star == first and tr.n_exit == first


def test_linear_sde_matches_recursion():
    model = LinearSDE(2.0, 1.5, 0.3, x0=0.2)
    x, last = model.advance(0.2, 0, 50, 0.1, RandomStream(1, 1))
    z = RandomStream(1, 1).normal(50)
    ref, v = [], 0.2
    for k in range(50):
        v = v + (-v / 2.0 + 1.5) * 0.1 + 0.3 * math.sqrt(0.1) * z[k]
        ref.append(v)
    np.testing.assert_allclose(x, ref, rtol=1e-12)
    assert last == x[-1]


def test_gauss_markov_path_model_variance():
    model = GaussMarkovPathModel(ou_spec(1.0, 1.0))
    vals = np.array([model.advance(model.start(None), 0, 100, 0.01, RandomStream(9, i))[0][-1]
                     for i in range(4000)])
    target = ou_spec(1.0, 1.0).variance(1.0)
    assert abs(vals.var(ddof=1) - target) <= 3 * math.sqrt(2 / 3999) * target


@given(st.integers(0, 2 ** 32))
def test_calendar_exit_is_sigma_left_limit(seed):
    cfg = wiener_config(alpha=0.6, horizon=1e4)
    tr = trace_exit(cfg, RandomStream(seed, 7))
    if not tr.censored:
        # first calendar grid time strictly after sigma~(y_{m*-1})
        assert tr.n_exit * cfg.dt > tr.sigma_left
        assert (tr.n_exit - 1) * cfg.dt <= tr.sigma_left
        # the calendar exit never precedes the operational exit mapped through sigma~ left limits
        assert tr.n_exit * cfg.dt >= tr.sigma_left


def test_censored_paths_report_inf():
    cfg = wiener_config(alpha=0.7, drift=0.0, c=50.0, horizon=1.0)
    assert simulate_exit_time(cfg, RandomStream(0, 0)) == math.inf


def test_single_path_step_function():
    cfg = wiener_config(n_paths=1, horizon=200.0, seed=5)
    est = estimate_survival(cfg)
    t_exit = simulate_exit_time(cfg, path_stream(cfg, 0))
    assert math.isfinite(t_exit)
    expected = (est.grid < t_exit - 1e-12).astype(float)
    np.testing.assert_array_equal(est.survival, expected)


# estimates ------------------------------------------------------------------

def test_censoring_accounting_and_reproducibility():
    cfg = wiener_config(alpha=0.7, n_paths=300, horizon=5.0, seed=11)
    a = estimate_survival(cfg)
    b = estimate_survival(cfg)
    assert a.n_exits + a.n_censored == cfg.n_paths
    assert a.n_censored == a.n_alive[-1] and 0 < a.n_censored < cfg.n_paths
    np.testing.assert_array_equal(a.n_alive, b.n_alive)
    assert a.survival[0] == 1.0
    assert np.all(np.diff(a.survival) <= 0)
    np.testing.assert_allclose(a.stderr, np.sqrt(a.survival * (1 - a.survival) / 300))


def test_workers_and_merge_do_not_change_counts():
    cfg = wiener_config(alpha=0.7, n_paths=240, horizon=10.0, seed=12)
    one = exit_indices(cfg)
    many = exit_indices(cfg, workers=3)
    np.testing.assert_array_equal(one, many)
    whole = survival_from_indices(one, cfg.n_grid, cfg.dt)
    parts = survival_from_indices(one[:100], cfg.n_grid, cfg.dt).merge(
        survival_from_indices(one[100:], cfg.n_grid, cfg.dt))
    swapped = survival_from_indices(one[100:], cfg.n_grid, cfg.dt).merge(
        survival_from_indices(one[:100], cfg.n_grid, cfg.dt))
    for m in (parts, swapped):
        np.testing.assert_array_equal(m.n_alive, whole.n_alive)
        assert (m.n_paths, m.n_censored) == (whole.n_paths, whole.n_censored)


def test_merge_rejects_other_grid():
    a = survival_from_indices([1, 2], 5, 0.1)
    b = survival_from_indices([1, 2], 6, 0.1)
    with pytest.raises(ValueError):
        a.merge(b)


def test_estimate_lookup_and_csv(tmp_path):
    est = survival_from_indices([3, 3, 5, 7], 6, 0.5, seed=99)
    assert est.at(1.5) == 0.5 and est.n_censored == 1
    with pytest.raises(ValueError):
        est.index_of(0.7)
    est.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "# seed=99" and lines[1] == "t,survival,stderr,n_alive"
    assert len(lines) == 2 + 7


def test_mittag_leffler_oracle():
    cfg = ExitExperimentConfig(ExponentialExit(1.0), stable_bernstein(0.5), constant_threshold(1.0),
                               horizon=20.0, n_paths=5000, seed=13)
    est = estimate_survival(cfg, workers=4)
    exact = mittag_leffler(0.5, -np.sqrt(est.grid))
    assert np.max(np.abs(est.survival - exact)) <= 0.03


def test_exponential_killing_two_estimators():
    # P(T > e_lam) and E[1 - exp(-lam T)] from the same draws
    cfg = wiener_config(alpha=0.7, n_paths=4000, horizon=60.0, seed=14)
    t = exit_times(cfg, workers=4)
    e = RandomStream(14, 2 ** 40).exponential(len(t))
    d = (t > e).astype(float) - (1.0 - np.exp(-t))
    assert abs(d.mean()) <= 3 * d.std(ddof=1) / math.sqrt(len(d))


def test_exponential_killing_links_both_clocks():
    # P(exit > e_lam) = E[1 - exp(-f(lam) T)], T the operational inverse-Gaussian passage
    lam, alpha = 1.0, 0.7
    cfg = wiener_config(alpha=alpha, n_paths=4000, horizon=60.0, seed=15)
    t = exit_times(cfg, workers=4)
    e = RandomStream(15, 2 ** 40).exponential(len(t)) / lam
    p = (t > e).mean()
    s = lam ** alpha
    exact = 1.0 - math.exp(1.0 - math.sqrt(1.0 + 2.0 * s))
    se = math.sqrt(p * (1 - p) / len(t))
    assert abs(p - exact) <= 3 * se + 0.02  # grid monitoring delays exits by O(sqrt(dy))


# moving sets ----------------------------------------------------------------

def test_constant_family_equals_fixed_threshold():
    cfg = wiener_config(alpha=0.7, n_paths=300, horizon=50.0, seed=16)
    a = exit_indices(cfg)
    b = exit_indices(cfg, family=lambda t: 1.0)
    np.testing.assert_array_equal(a, b)
    s = path_stream(cfg, 4)
    assert simulate_moving_set_exit(cfg, lambda t: 1.0, s) == simulate_exit_time(cfg, path_stream(cfg, 4))


@pytest.mark.parametrize("alpha", [0.5, 0.9])
def test_sandwich_pathwise(alpha):
    cfg = wiener_config(alpha=alpha, n_paths=500, horizon=30.0, seed=17)
    base = exit_indices(cfg)
    shrink = exit_indices(cfg, family=lambda t: 1.0 - 0.5 * (1.0 - np.exp(-t)))
    expand = exit_indices(cfg, family=lambda t: 1.0 + 0.05 * t)
    assert np.all(shrink <= base)
    assert np.all(expand >= base)
    assert np.any(shrink < base) and np.any(expand > base)
    sb = survival_from_indices(base, cfg.n_grid, cfg.dt).survival
    assert np.all(survival_from_indices(shrink, cfg.n_grid, cfg.dt).survival <= sb)
    assert np.all(survival_from_indices(expand, cfg.n_grid, cfg.dt).survival >= sb)


# spike trains ---------------------------------------------------------------

def test_spike_train_without_threshold_is_empty():
    cfg = lif_config(LifParams(v_th=math.inf), alpha=0.75, horizon=5.0, n_paths=4, seed=1)
    sample = simulate_spike_trains(cfg, 3)
    assert all(len(s) == 0 for s in sample.spike_times)
    assert all(sample.censored)


def test_spike_train_is_renewal_of_exit_times():
    cfg = lif_config(LifParams(), alpha=0.75, horizon=500.0, n_paths=1, seed=2)
    times, censored = simulate_spike_train(cfg, 5, RandomStream(2, 0))
    stream = RandomStream(2, 0)
    isi = [trace_exit(cfg, stream).n_exit * cfg.dt for _ in range(5)]
    assert not censored
    np.testing.assert_allclose(times, np.cumsum(isi), rtol=1e-12)
    with pytest.raises(ValueError):
        simulate_spike_train(cfg, 0, stream)


def test_spike_sample_isi_and_csv(tmp_path):
    cfg = lif_config(LifParams(), alpha=None, horizon=200.0, n_paths=3, seed=4)
    sample = simulate_spike_trains(cfg, 4)
    for s, isi in zip(sample.spike_times, sample.isi):
        np.testing.assert_allclose(np.cumsum(isi), s)
    assert len(sample.all_isi()) == 12
    sample.to_csv(tmp_path / "spikes.csv", seed=4)
    lines = (tmp_path / "spikes.csv").read_text().splitlines()
    assert lines[:2] == ["# seed=4", "path_id,spike_index,spike_time"] and len(lines) == 14


def test_markov_isi_running_mean_stabilizes():
    t = exit_times(lif_config(LifParams(), None, horizon=200.0, n_paths=4000, seed=5), workers=4)
    assert np.all(np.isfinite(t))
    running = np.cumsum(t) / np.arange(1, len(t) + 1)
    se = t.std(ddof=1) / math.sqrt(len(t))
    assert abs(running[1999] - running[-1]) <= 4 * se * math.sqrt(2)


def test_counting_process_mittag_leffler_comparison():
    p = LifParams()
    C = exit_times(lif_config(p, None, horizon=200.0, n_paths=4000, seed=71), workers=4).mean()
    est = estimate_survival(lif_config(p, 0.75, horizon=60.0, n_paths=4000, seed=72), workers=4)
    large = np.arange(20.0, 60.0 + 1e-9, 1.0)
    ml = mittag_leffler(0.75, -large ** 0.75 / C)
    assert np.max(np.abs([est.at(t) - m for t, m in zip(large, ml)])) <= 0.05
    # near zero the time-changed ISI law decays rapidly while the Mittag-Leffler CDF grows like t^alpha
    small = np.array([0.1, 0.2, 0.5])
    cdf_ml = 1.0 - mittag_leffler(0.75, -small ** 0.75 / C)
    cdf_emp = np.array([1.0 - est.at(t) for t in small])
    assert np.all(cdf_ml - cdf_emp > 0.04)
