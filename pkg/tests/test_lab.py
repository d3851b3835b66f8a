import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phi4lab import lab
from phi4lab.errors import InputError
from phi4lab.sampler import CutoffConfig
from phi4lab.schedules import RenormSchedule
from phi4lab.spectral import variance

NULL = {"name": "null", "d": 2}


def test_null_schedule_gives_unit_density():
    est = lab.estimate_log_partition(2, 2, NULL, 200, 7)
    assert est.log_Z == 0.0 and est.normalized == 0.0
    stats = lab.density_statistics(2, 2, NULL, 200, 7)
    assert stats.quantiles == [0.0] * len(stats.quantile_levels)
    assert stats.mean_R == 1.0 and stats.fraction_above_1 == 0.0


def test_sample_count_floor():
    with pytest.raises(InputError):
        lab.estimate_log_partition(2, 2, NULL, 199, 7)


@pytest.mark.parametrize("A", [0.1, 0.3])
def test_quadratic_action_matches_gaussian_determinant(A):
    # action -A M_n: log E exp(A M_n) has a closed form via the V-site covariance matrix
    d, n = 2, 2
    cfg = CutoffConfig.for_cutoff(d, n)
    sched = RenormSchedule("quad", d, m=repr(A / variance(n, d)), case="A2")
    est = lab.estimate_log_partition(d, n, sched, 4000, 11)
    exact = lab.exact_quadratic_log_partition(cfg, A)
    assert abs(est.log_Z - exact) < 3 * est.std_error
    assert abs(est.log_Z_cv - exact) < 3 * est.std_error_cv
    assert not est.tail_dominated


def test_quadratic_oracle_small_coupling_limit():
    # second order: log E exp(t M) ~ t^2 Var(M) / 2
    cfg = CutoffConfig.for_cutoff(2, 2)
    var_M = lab.exact_moments(cfg)["var_M"]
    t = 1e-4
    assert lab.exact_quadratic_log_partition(cfg, t) == pytest.approx(t * t * var_M / 2, rel=1e-3)


def test_log_partition_flags_tail_domination():
    action = np.zeros(300)
    action[17] = -50.0
    log_Z, se, mx, share, cv, _ = lab.log_partition_from_action(action, 1.0)
    assert share > 0.5 and mx == 50.0
    assert log_Z == pytest.approx(50.0 - math.log(300), rel=1e-9)


@given(st.lists(st.floats(-30, 30), min_size=20, max_size=200))
@settings(max_examples=30)
def test_log_mean_exp_is_stable(xs):
    action = np.array(xs)
    log_Z = lab.log_partition_from_action(action, 1.0)[0]
    ref = np.log(np.mean(np.exp(-action)))
    assert log_Z == pytest.approx(ref, rel=1e-9, abs=1e-9)
    # shifting the action shifts log Z exactly
    assert lab.log_partition_from_action(action + 1000.0, 1.0)[0] == pytest.approx(log_Z - 1000.0, abs=1e-9)


def test_density_statistics_identity():
    rng = np.random.default_rng(3)
    action = 0.3 * rng.standard_normal(5000)
    log_Z = lab.log_partition_from_action(action, 1.0)[0]
    st_ = lab.density_from_action(action, log_Z, 4, "x")
    assert st_.mean_R == pytest.approx(1.0, abs=1e-12)
    assert st_.quantiles == sorted(st_.quantiles)


def test_bootstrap_trend_labels():
    rng = np.random.default_rng(0)
    clear = {n: rng.normal(-n, 0.1, 300) for n in (4, 6, 8)}
    rep = lab.bootstrap_trend(clear, np.median, "decreasing", seed=1, resamples=200)
    assert rep["confidence"] == 1.0 and rep["label"] == "confirmed"
    flat = {n: rng.normal(0.0, 1.0, 300) for n in (4, 6, 8)}
    rep = lab.bootstrap_trend(flat, np.median, "decreasing", seed=1, resamples=200)
    assert rep["confidence"] < 0.9 and rep["label"] == "inconclusive"
    again = lab.bootstrap_trend(flat, np.median, "decreasing", seed=1, resamples=200)
    assert again == rep
    with pytest.raises(InputError):
        lab.bootstrap_trend({4: [1.0]}, np.median, "decreasing", seed=1)


def test_bank_disk_cache_round_trip(tmp_path):
    cfg = CutoffConfig.for_cutoff(2, 2)
    a = lab.ObservableBank(cfg, 5, cache_dir=str(tmp_path)).ensure(6)
    b = lab.ObservableBank(cfg, 5, cache_dir=str(tmp_path))
    assert b.count == 6
    assert np.array_equal(a.I, b.I) and np.array_equal(a.D, b.D)
    # extending a bank keeps its prefix; threads do not change values
    c = lab.ObservableBank(cfg, 5, threads=3).ensure(9)
    assert np.array_equal(c.I[:6], a.I)
    b.ensure(9)
    assert np.array_equal(c.M, b.M)


def test_lln_sweep_and_decorrelation_d2():
    res = lab.lln_sweep(2, [2, 3, 4], 300, seed=2)
    assert res.fits["I"].exponent < 0 and res.fits["M"].exponent < 0
    for i, n in enumerate(res.n_range):
        exact = lab.get_bank(2, n, 2).exact()
        # <I_n^2> is an eighth-order Gaussian moment: its sample SE is unreliable at this size
        for k in "MD":
            assert abs(res.second_moments[k][i] - exact["var_" + k]) < 4 * res.std_errors[k][i]
    rep = lab.decorrelation_report(2, 4, 300, seed=2)
    assert rep["n"] == 4 and rep["samples"] == 300
    with pytest.raises(InputError):
        lab.lln_sweep(2, [2, 3], 300, seed=2)


def test_case_experiment_small_d2():
    rep = lab.case_experiment("d2-standard", None, [2, 3, 4], 300, seed=4, resamples=100)
    assert rep.branch == "n/a"
    assert len(rep.log_partition) == 3 and len(rep.densities) == 3
    for dens in rep.densities:
        assert abs(dens["mean_R"] - 1.0) < 5 * dens["mean_R_se"]
    assert rep.verdict
    assert rep.array_bound["violations"] == 0
