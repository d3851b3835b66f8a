"""Acceptance criteria 1-14.

Each test records one PASS/FAIL line (printed in the terminal summary) and then
asserts.  Criteria that are red for a documented reason are marked
``xfail(strict=True)``: the line still reads FAIL, and the suite turns red if
they ever start passing so the analysis gets revisited.

The d=4 observable banks are cached under ``.pytest_cache``; a cold run
regenerates them (about 50 minutes on one core).
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import ACCEPTANCE_SEED as SEED
from phi4lab import lab
from phi4lab.ldp import (FiniteDistribution, PiecewiseLinear, cramer_lower_bound_check, exact_cgf, i_projection,
                         kl_divergence, legendre_transform, markov_liminf_check, positive_part_diagnostics,
                         spike_law, step_log_integral, sup_f_minus_rate, third_moment_growth, varadhan_lower_check)
from phi4lab.sampler import CutoffConfig, rng_for
from phi4lab.spectral import (POWER_INTEGRAL_FORMS, covariance_power_integral, gradient_variance, ratio_drift,
                              scaling_fit, variance)
from phi4lab.wick import wick_power

NS = [8, 16, 32, 64]
LAB_NS = [4, 6, 8]
LAB_SAMPLES = 800
# the n=4 -> 6 step of normalized log Z is ~1e-6, so branch (2) needs more samples at small n
BRANCH_TWO_SAMPLES = {4: 4000, 6: 3000, 8: 800}
BERNOULLI_RATE_07 = 0.082283  # KL(0.7 || 0.5) in nats
MARKOV_GAP = 0.368064         # log 2 - H(0.9)


def binary_kl(h, p):
    return h * math.log(h / p) + (1 - h) * math.log((1 - h) / (1 - p))


# --- 1, 2: covariance and gradient variance ------------------------------------------

@pytest.mark.parametrize("d,tol", [(3, 0.1), (4, 0.15)])
def test_criterion_01_covariance_scaling(record, d, tol):
    t = time.time()
    fit = scaling_fit([(n, variance(n, d)) for n in NS])
    dt = time.time() - t
    ok = abs(fit.exponent - (d - 2)) <= tol and dt < 60
    record(f"1.d{d}", ok, f"exponent {fit.exponent:.4f}, target {d - 2} +/- {tol} ({dt:.1f} s)")
    assert ok


@pytest.mark.parametrize("d", [3, 4])
def test_criterion_02_gradient_variance(record, d):
    t = time.time()
    fit = scaling_fit([(n, gradient_variance(n, d)) for n in NS])
    dt = time.time() - t
    ok = abs(fit.exponent - d) <= 0.2 and dt < 60
    record(f"2.d{d}", ok, f"exponent {fit.exponent:.4f}, target {d} +/- 0.2 ({dt:.1f} s)")
    assert ok


# --- 3: power integrals --------------------------------------------------------------

# In d=3, c_n -> e^{-r}/(4 pi r): c^2 is integrable (bounded in n) and c^3 grows
# like log n, so the tabulated n^1 growth cannot be met at either power.
_TABLE_DEFECT = pytest.mark.xfail(strict=True, reason="d=3 table form n^1 contradicts integrable/log growth")


@pytest.mark.parametrize("d,p", [pytest.param(d, p, marks=_TABLE_DEFECT) if (d, p) in {(3, 2), (3, 3)}
                                 else (d, p) for d, p in POWER_INTEGRAL_FORMS])
def test_criterion_03_power_integrals(record, d, p):
    a, k = POWER_INTEGRAL_FORMS[(d, p)]
    t = time.time()
    series = [(n, covariance_power_integral(n, d, p)) for n in NS]
    fit = scaling_fit(series, log_power=k)
    dt = time.time() - t
    ok = abs(fit.exponent - a) <= 0.15 and dt < 300
    detail = f"n^{a:g}" + (f" (log n)^{k}" if k else "") + f": fitted exponent {fit.exponent:.3f}"
    if k:
        drift = ratio_drift(series, lambda n: n**a * math.log(n) ** k)
        ok = ok and drift < 0.2
        detail += f", ratio drift {drift:.3f}"
    record(f"3.d{d}p{p}", ok, detail)
    assert ok


# --- 4: Wick orthogonality -------------------------------------------------------------

@pytest.mark.parametrize("rho", [0.0, 0.5, 0.9])
def test_criterion_04_wick_orthogonality(record, rho):
    t = time.time()
    rng = rng_for(SEED, 4, int(round(10 * rho)))
    z = rng.standard_normal((2, 100_000))
    x, y = z[0], rho * z[0] + math.sqrt(1 - rho * rho) * z[1]
    prod = wick_power(x, 1.0, 4) * wick_power(y, 1.0, 4)
    est, se = prod.mean(), prod.std(ddof=1) / math.sqrt(prod.size)
    target = 24 * rho**4
    dt = time.time() - t
    ok = abs(est - target) < 4 * se and dt < 60
    record(f"4.rho{rho}", ok, f"{est:.4f} vs {target:.4f} (SE {se:.4f})")
    assert ok


# --- 5, 6: LLN decay and decorrelation ------------------------------------------------------

@pytest.fixture(scope="module")
def lln_run(bank_cache):
    t = time.time()
    res = lab.lln_sweep(4, LAB_NS, LAB_SAMPLES, SEED, cache_dir=bank_cache)
    return res, time.time() - t


def test_criterion_05_lln_interaction_decay(record, lln_run):
    res, dt = lln_run
    e = res.fits["I"].exponent
    ok = abs(e + 4) <= 0.3 and dt < 1800
    record("5.I", ok, f"<I_n^2> exponent {e:.3f}, target -4 +/- 0.3 ({dt:.0f} s)")
    assert ok


@pytest.mark.xfail(strict=True, reason="<D_n^2> decays like n^-1.5 at n=4..8; exact lattice moments agree")
def test_criterion_05_lln_gradient_decay(record, lln_run, bank_cache):
    res, dt = lln_run
    e = res.fits["D"].exponent
    exact = [lab.get_bank(4, n, SEED, cache_dir=bank_cache).exact()["var_D"] for n in LAB_NS]
    e_exact = scaling_fit(list(zip(LAB_NS, exact))).exponent
    ok = abs(e + 2) <= 0.3
    record("5.D", ok, f"<D_n^2> exponent {e:.3f} (exact lattice {e_exact:.3f}), target -2 +/- 0.3")
    assert ok


def test_criterion_06_decorrelation(record, bank_cache):
    rep = lab.decorrelation_report(4, LAB_NS[-1], LAB_SAMPLES, SEED, cache_dir=bank_cache)
    worst = max(rep["correlations"], key=lambda c: abs(c["corr"]) / max(c["std_error"], 1e-300))
    ok = all(abs(c["corr"]) < 0.05 or abs(c["corr"]) < 3 * c["std_error"] for c in rep["correlations"])
    record("6", ok, f"n={rep['n']}: worst corr {worst['quantity']} {worst['corr']:+.4f} (SE {worst['std_error']:.4f})")
    assert ok


# --- 7-10, 13: large deviations ------------------------------------------------------------------

def test_criterion_07_legendre_oracles(record):
    t = time.time()
    hs = np.linspace(0.0, 3.0, 31)
    gauss = legendre_transform(exact_cgf(lambda s: 0.5 * s * s, 10.0, 201), hs)
    g_err = float(np.max(np.abs(gauss.values - hs**2 / 2)))
    rate = i_projection(FiniteDistribution.bernoulli(0.5), 0.7)[2]
    P = FiniteDistribution([(-2.0, 0.1), (-0.5, 0.3), (0.0, 0.2), (1.0, 0.25), (3.0, 0.15)])
    lo, hi = P.support()
    csiszar = 0.0
    for h in np.linspace(lo, hi, 12)[1:-1]:
        Q, _, D = i_projection(P, h)
        csiszar = max(csiszar, abs(kl_divergence(Q, P) - P.rate(h)), abs(D - P.rate(h)))
    dt = time.time() - t
    ok = g_err < 1e-6 and abs(rate - BERNOULLI_RATE_07) < 1e-6 and csiszar < 1e-8 and dt < 1
    record("7", ok, f"gaussian {g_err:.1e}, bernoulli {rate:.7f}, csiszar {csiszar:.1e} ({dt:.2f} s)")
    assert ok


def test_criterion_08_cramer_gap(record):
    t = time.time()
    rep = cramer_lower_bound_check(FiniteDistribution.bernoulli(0.5), 0.7, [50, 100, 200, 400])
    at100 = rep.log_prob_rate[rep.N.index(100)]
    dt = time.time() - t
    ok = abs(at100 + BERNOULLI_RATE_07) < 0.03 and rep.gap_decreasing and dt < 10
    record("8", ok, "gaps " + ", ".join(f"{g:+.4f}" for g in rep.gaps) + f" ({dt:.2f} s)")
    assert ok


def test_criterion_09_markov_liminf(record):
    t = time.time()
    rep = markov_liminf_check(np.array([[0.9, 0.1], [0.1, 0.9]]), 10_000, 1000, SEED)
    dt = time.time() - t
    ok = rep.minimum >= -0.01 and abs(rep.mean - MARKOV_GAP) <= 3 * rep.std_error and dt < 60
    assert rep.reference == pytest.approx(math.log(2) - (-0.9 * math.log(0.9) - 0.1 * math.log(0.1)))
    record("9", ok, f"min {rep.minimum:.4f}, mean {rep.mean:.6f} (SE {rep.std_error:.1e}) ({dt:.1f} s)")
    assert ok


def _unit_variance(P):
    m = P.mean()
    s = math.sqrt(P.moment(lambda y: (y - m) ** 2))
    return FiniteDistribution([((v - m) / s, p) for v, p in P.atoms])


def test_criterion_10_positive_part(record):
    t = time.time()
    rng = rng_for(SEED, 10, 0)
    laws = [FiniteDistribution.bernoulli(p) for p in (0.01, 0.1, 0.5, 0.9)]
    laws.append(FiniteDistribution([(float(k), 1 / 7) for k in range(7)]))
    for _ in range(200):
        k = int(rng.integers(2, 8))
        w = rng.random(k) + 0.01
        laws.append(FiniteDistribution(list(zip(rng.choice(np.arange(-40, 41), k, replace=False) / 4.0, w / w.sum()))))
    reps = [positive_part_diagnostics(_unit_variance(P)) for P in laws]
    holds = all(r.holds_literal and r.holds for r in reps)
    ns = [25, 100, 400]
    spikes = [positive_part_diagnostics(spike_law(n)) for n in ns]
    exact = all(abs(r.mean_pos - 1 / math.sqrt(n)) <= 1e-12 / math.sqrt(n) for r, n in zip(spikes, ns))
    flagged = not third_moment_growth(spikes, ns)["bounded"]
    dt = time.time() - t
    ok = holds and exact and flagged and dt < 1
    record("10", ok, f"bound holds on {len(reps)} laws: {holds}; spike exact {exact}, flagged {flagged} ({dt:.2f} s)")
    assert ok


def test_criterion_13_varadhan(record):
    t = time.time()
    Ns = [1, 10, 100, 1000]
    worst = 0.0
    for a, b in ((1.0, 0.0), (-0.7, 0.3), (2.0, -1.0)):
        F = PiecewiseLinear.linear(a, b)
        # (1/N) log E exp(N F(X)) for X ~ N(0, 1/N), by quadrature
        logs = {}
        for N in Ns:
            s = 1 / math.sqrt(N)
            val = quad(lambda x: math.exp(N * (a * x + b) - x * x / (2 * s * s) - N * (a * a / 2 + b)),
                       a - 40 * s, a + 40 * s, points=[a])[0] / (s * math.sqrt(2 * math.pi))
            logs[N] = math.log(val) + N * (a * a / 2 + b)
        rep = varadhan_lower_check(lambda h: h * h / 2, F, logs, h_range=(-20, 20))
        worst = max(worst, float(np.max(np.abs(rep.gaps))))
        assert not rep.violation
    P = FiniteDistribution.bernoulli(0.5)
    F = PiecewiseLinear.step(0.7, 1.0)
    steps = {N: step_log_integral(P, N, 0.7) for N in (50, 100, 200, 400)}
    rate = lambda h: binary_kl(h, 0.5) if 0 < h < 1 else (math.log(2) if h in (0, 1) else math.inf)
    step = varadhan_lower_check(rate, F, steps, h_range=(0.0, 1.0))
    sup_ok = abs(sup_f_minus_rate(F, rate, (0.0, 1.0)) - (1 - BERNOULLI_RATE_07)) < 1e-5
    dt = time.time() - t
    ok = worst < 1e-9 and not step.violation and sup_ok and dt < 10
    record("13", ok, f"linear-F max gap {worst:.1e}; step instance extrapolated {step.extrapolated:.4f} "
                     f">= sup {step.sup_value:.4f} ({dt:.2f} s)")
    assert ok


# --- 11, 12: case studies ---------------------------------------------------------------------------

def _case(preset, bank_cache, samples=LAB_SAMPLES):
    t = time.time()
    rep = lab.case_experiment(preset, None, LAB_NS, samples, SEED, cache_dir=bank_cache)
    return rep, time.time() - t


def test_criterion_11_branch_one_trend(record, bank_cache):
    rep, dt = _case("B-d4", bank_cache)
    trend = rep.trends.get("median_abs_log_R")
    unit = all(abs(x["mean_R"] - 1.0) <= 5 * x["mean_R_se"] for x in rep.densities)
    ok = trend is not None and trend["confidence"] >= 0.9 and unit and dt < 2700
    conf = "n/a" if trend is None else f"{trend['confidence']:.3f}"
    meds = ", ".join(f"{x['median_abs_log_R']:.4f}" for x in rep.densities)
    record("11", ok, f"median |log R| {meds}; confidence {conf}; E R = 1 within 5 SE: {unit} ({dt:.0f} s)")
    assert ok


def test_criterion_12_branch_two_trend(record, bank_cache):
    rep, dt = _case("A1-d4", bank_cache, BRANCH_TWO_SAMPLES)
    tz, tr = rep.trends.get("normalized_log_Z"), rep.trends.get("median_log_R")
    ok = tz is not None and tr is not None and tz["confidence"] >= 0.9 and tr["confidence"] >= 0.9 and dt < 3600
    zs = ", ".join(f"{e['normalized']:.4g}" for e in rep.log_partition)
    cz, cr = (("n/a" if t is None else f"{t['confidence']:.3f}") for t in (tz, tr))
    record("12", ok, f"normalized log Z {zs}; confidence log Z {cz}, median log R {cr}; "
                     f"tail-dominated {rep.tail_dominated_count} ({dt:.0f} s)")
    assert ok


# --- 14: determinism -------------------------------------------------------------------------------

def test_criterion_14_determinism(record, bank_cache):
    cached = lab.get_bank(4, 4, SEED, cache_dir=bank_cache).ensure(6)
    fresh = lab.ObservableBank(CutoffConfig.for_cutoff(4, 4), SEED).ensure(6)
    same_samples = all(np.array_equal(getattr(fresh, k), getattr(cached, k)[:6]) for k in "IMD")
    first = (lab.lln_sweep(4, LAB_NS, LAB_SAMPLES, SEED, cache_dir=bank_cache).to_dict(),
             markov_liminf_check(np.array([[0.9, 0.1], [0.1, 0.9]]), 2000, 200, SEED).to_dict(),
             lab.case_experiment("B-d4", None, LAB_NS, LAB_SAMPLES, SEED, cache_dir=bank_cache,
                                 resamples=200).to_dict())
    lab._BANKS.clear()  # force a reload from disk
    second = (lab.lln_sweep(4, LAB_NS, LAB_SAMPLES, SEED, cache_dir=bank_cache).to_dict(),
              markov_liminf_check(np.array([[0.9, 0.1], [0.1, 0.9]]), 2000, 200, SEED).to_dict(),
              lab.case_experiment("B-d4", None, LAB_NS, LAB_SAMPLES, SEED, cache_dir=bank_cache,
                                  resamples=200).to_dict())
    same_numbers = repr(first) == repr(second)
    ok = same_samples and same_numbers
    record("14", ok, f"regenerated samples bitwise equal: {same_samples}; reruns identical: {same_numbers}")
    assert ok
