import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erfc, erfcx, exp1

from phi4lab.errors import InputError
from phi4lab.spectral import (POWER_INTEGRAL_FORMS, MollifierSpec, covariance_at, covariance_power_integral,
                              covariance_profile, cube_shell_density, gradient_variance, mollifier_density,
                              mollifier_hat, ratio_drift, scaling_fit, variance, write_covariance_csv)


def closed_form_variance(n, d, width):
    """c_n(0) for the gaussian mollifier, from one-dimensional special functions."""
    a = 2.0 * width**2 / n**2
    if d == 2:
        return math.exp(a) * exp1(a) / (4.0 * math.pi)
    if d == 3:
        # int k^2 e^{-a k^2} / (1 + k^2) dk = sqrt(pi)/(2 sqrt a) - (pi/2) e^a erfc(sqrt a)
        return (math.sqrt(math.pi) / (2.0 * math.sqrt(a)) - 0.5 * math.pi * erfcx(math.sqrt(a))) / (2.0 * math.pi**2)
    if d == 4:
        return (1.0 / a - math.exp(a) * exp1(a)) / (16.0 * math.pi**2)
    raise ValueError(d)


@pytest.mark.parametrize("d", [2, 3, 4])
@pytest.mark.parametrize("n", [1, 4, 16, 64])
def test_variance_matches_closed_form(d, n):
    spec = MollifierSpec()
    assert variance(n, d, spec) == pytest.approx(closed_form_variance(n, d, spec.width), rel=1e-10)


@given(st.floats(0.1, 2.0), st.integers(1, 40))
@settings(max_examples=20, deadline=None)
def test_variance_closed_form_any_width(width, n):
    spec = MollifierSpec(width=width)
    assert variance(n, 3, spec) == pytest.approx(closed_form_variance(n, 3, width), rel=1e-9)


def test_gradient_variance_d3_closed_form():
    # sum_j <(d_j phi)^2> = int k^2 S(k): in d=3 it is (1/2 pi^2) int k^4 e^{-a k^2}/(1+k^2)
    n, spec = 8, MollifierSpec()
    a = 2.0 * spec.width**2 / n**2
    inner = (math.sqrt(math.pi) / (4.0 * a**1.5) - math.sqrt(math.pi) / (2.0 * math.sqrt(a))
             + 0.5 * math.pi * erfcx(math.sqrt(a)))
    assert gradient_variance(n, 3, spec) == pytest.approx(inner / (2.0 * math.pi**2), rel=1e-10)


def test_mollifier_hat_and_density():
    spec = MollifierSpec()
    assert mollifier_hat(spec, [0.0, 0.0]) == 1.0
    assert mollifier_hat(MollifierSpec("sharp", 0.5), 2.5) == 0.0
    x = np.linspace(-4, 4, 4001)
    assert np.trapezoid(mollifier_density(spec, x), x) == pytest.approx(1.0, abs=1e-10)


def test_mollifier_rejects_bad_input():
    with pytest.raises(InputError):
        MollifierSpec("box")
    with pytest.raises(InputError):
        MollifierSpec(width=-1.0)
    with pytest.raises(InputError):
        mollifier_hat(MollifierSpec(), [np.nan])


def test_covariance_origin_equals_variance_and_decays():
    r = np.linspace(0.0, 1.0, 41)
    c = covariance_at(r, 8, 3)
    assert c[0] == pytest.approx(variance(8, 3), rel=1e-10)
    assert np.all(np.diff(c) < 0)
    assert np.all(c > 0)


@pytest.mark.parametrize("n", [2, 8, 16])
def test_covariance_d3_closed_form(n):
    # e^{-a k^2}/(1+k^2) in d=3 is the Yukawa kernel run through the heat flow for time a
    a = 2.0 * MollifierSpec().width ** 2 / n**2
    r = np.array([0.01, 0.05, 0.2, 0.5, 1.0])
    s = math.sqrt(a)
    ref = (np.exp(a - r) * erfc(s - r / (2 * s)) - np.exp(a + r) * erfc(s + r / (2 * s))) / (8 * np.pi * r)
    assert covariance_at(r, n, 3) == pytest.approx(ref, rel=1e-9)


def test_profile_requires_resolution():
    with pytest.raises(InputError):
        covariance_profile(8, 3, 63)
    prof = covariance_profile(8, 3, 64)
    assert len(prof.radial_table) == 65
    assert sum(prof.second_derivs_at_zero) == pytest.approx(-prof.grad_variance)


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_cube_radial_density_moments(d):
    # |x|^2 for x uniform in [0,1]^d: E = d/3, E|x|^4 = d/5 + d(d-1)/9
    r = np.linspace(0.0, math.sqrt(d), 200001)
    f = cube_shell_density(r, d)
    assert np.trapezoid(f, r) == pytest.approx(1.0, abs=1e-6)
    assert np.trapezoid(f * r**2, r) == pytest.approx(d / 3.0, rel=1e-6)
    assert np.trapezoid(f * r**4, r) == pytest.approx(d / 5.0 + d * (d - 1) / 9.0, rel=1e-6)


def test_power_integral_against_tensor_quadrature():
    # d=2, coarse cutoff: a direct tensor Gauss-Legendre rule over the square
    n, d = 2, 2
    x, w = np.polynomial.legendre.leggauss(48)
    edges = np.linspace(0.0, 1.0, 9)
    pts = np.concatenate([(b - a) / 2 * x + (a + b) / 2 for a, b in zip(edges[:-1], edges[1:])])
    wts = np.concatenate([(b - a) / 2 * w for a, b in zip(edges[:-1], edges[1:])])
    X, Y = np.meshgrid(pts, pts, indexing="ij")
    rad = np.hypot(X, Y).ravel()
    uniq, inv = np.unique(np.round(rad, 15), return_inverse=True)
    c = covariance_at(uniq, n, d)[inv].reshape(X.shape)
    ref = float(wts @ (c**2) @ wts)
    assert covariance_power_integral(n, d, 2) == pytest.approx(ref, rel=1e-6)


def test_power_integral_rejects_bad_power():
    with pytest.raises(InputError):
        covariance_power_integral(8, 3, 5)


def test_power_integral_forms_table_is_complete():
    assert set(POWER_INTEGRAL_FORMS) == {(3, 2), (3, 3), (3, 4), (4, 2), (4, 3), (4, 4), (5, 2)}


@given(st.floats(-3, 5), st.floats(0.1, 10.0))
@settings(max_examples=50)
def test_scaling_fit_recovers_power_law(a, K):
    ns = [8, 16, 32, 64]
    fit = scaling_fit([(n, K * n**a) for n in ns])
    assert fit.exponent == pytest.approx(a, abs=1e-9)
    assert fit.residual < 1e-9


def test_scaling_fit_log_power_and_drift():
    ns = [8, 16, 32, 64]
    series = [(n, 3.0 * n * math.log(n)) for n in ns]
    assert scaling_fit(series, log_power=1).exponent == pytest.approx(1.0, abs=1e-12)
    assert ratio_drift(series, lambda n: n * math.log(n)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(InputError):
        scaling_fit(series[:2])
    with pytest.raises(InputError):
        scaling_fit([(8, 1.0), (16, -1.0), (32, 1.0)])


def test_covariance_csv(tmp_path):
    prof = covariance_profile(8, 3, 64)
    path = tmp_path / "cov.csv"
    write_covariance_csv([prof], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "d,n,r,c_n(r)"
    assert len(lines) == 66


def test_d3_low_powers_grow_slower_than_linear():
    # c_n -> e^{-r}/(4 pi r): c^2 is integrable in d=3 and c^3 picks up (1/8) log n / (16 pi^2)
    from scipy.integrate import quad

    yukawa = lambda r: math.exp(-r) / (4 * math.pi * r)
    limit = quad(lambda r: float(cube_shell_density(r, 3)) * yukawa(r) ** 2, 0, math.sqrt(3),
                 points=[1, math.sqrt(2)], limit=200)[0]
    ns = [8, 16, 32, 64, 128]
    p2 = [covariance_power_integral(n, 3, 2) for n in ns]
    gaps = [limit - v for v in p2]
    assert all(g > 0 for g in gaps)
    assert all(0.4 < b / a < 0.6 for a, b in zip(gaps, gaps[1:]))
    p3 = [covariance_power_integral(n, 3, 3) for n in ns]
    steps = np.diff(p3)
    assert np.all(np.diff(steps) > 0)
    assert steps[-1] == pytest.approx(math.log(2) / (128 * math.pi**2), rel=0.05)
