"""Special functions, quadrature and golden-section search."""

import math

import numpy as np
import pytest
from scipy import integrate

from loramu.numerics import (NumericsError, chi2_sum_cdf, erf,
                             golden_section_min, integrate_semi_infinite)


def erf_series(x, terms=120):
    """Maclaurin-series oracle for erf, accurate for |x| <= 3."""
    s = 0.0
    for n in range(terms):
        s += (-1) ** n * x ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1))
    return 2.0 / math.sqrt(math.pi) * s


def test_erf_basic_values():
    assert erf(0.0) == 0.0
    assert erf(1.0) == pytest.approx(0.842700792949715, abs=1e-12)
    assert erf(1.0) == pytest.approx(erf_series(1.0), abs=1e-12)
    for x in (0.25, 0.5, 1.5, 2.75):
        assert erf(x) == pytest.approx(erf_series(x), abs=1e-11)


def test_erf_odd_symmetry_and_monotonicity():
    xs = np.linspace(-4, 4, 41)
    vals = erf(xs)
    assert np.allclose(vals + erf(-xs), 0.0, atol=1e-15)
    assert np.all(np.diff(vals) > 0)


def test_chi2_sum_cdf_exponential_case():
    assert chi2_sum_cdf(0.0, 1, 1.0) == 0.0
    assert chi2_sum_cdf(1.0, 1, 1.0) == pytest.approx(1 - math.exp(-1), abs=1e-12)


def test_chi2_sum_cdf_matches_quadrature():
    a, s = 5, 2.0
    density = lambda t: t ** (a - 1) * np.exp(-t / s) / (s ** a * math.factorial(a - 1))
    val, _ = integrate.quad(density, 0, 10.0)
    assert chi2_sum_cdf(10.0, a, s) == pytest.approx(val, abs=1e-10)


def test_chi2_sum_cdf_matches_truncated_sum():
    # 1 - e^{-u/s} * sum_{q<a} (u/s)^q / q!  evaluated in log domain
    for a, s, u in ((120, 1.0, 100.0), (120, 1.0, 140.0), (40, 0.5, 25.0)):
        x = u / s
        logs = [q * math.log(x) - math.lgamma(q + 1) for q in range(a)]
        mx = max(logs)
        tail = math.exp(-x + mx) * sum(math.exp(l - mx) for l in logs)
        assert chi2_sum_cdf(u, a, s) == pytest.approx(1 - tail, abs=1e-10)


def test_chi2_sum_cdf_monotone_and_bounded():
    u = np.linspace(0, 400, 200)
    vals = chi2_sum_cdf(u, 120, 1.0)
    assert np.all(vals >= 0) and np.all(vals <= 1)
    assert np.all(np.diff(vals) >= 0)


def test_chi2_sum_cdf_domain_errors():
    with pytest.raises(ValueError):
        chi2_sum_cdf(-1.0, 5, 1.0)
    with pytest.raises(ValueError):
        chi2_sum_cdf(1.0, 0, 1.0)
    with pytest.raises(ValueError):
        chi2_sum_cdf(1.0, 5, 0.0)


def gaussian_density(mean, sd):
    return lambda u: np.exp(-0.5 * ((u - mean) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))


def test_integrate_gaussian_normalisation():
    f = gaussian_density(3.0, 0.5)
    val = integrate_semi_infinite(f, 3.0 - 12 * 0.5, tol=1e-10)
    assert val == pytest.approx(1.0, abs=1e-9)


def test_integrate_gaussian_half_mass():
    f = gaussian_density(-1.0, 2.0)
    val = integrate_semi_infinite(f, -1.0, tol=1e-10, upper=-1.0 + 12 * 2.0)
    assert val == pytest.approx(0.5, abs=1e-9)


def test_integrate_explicit_upper():
    f = lambda u: np.exp(-u)
    val = integrate_semi_infinite(f, 0.0, tol=1e-10, upper=60.0)
    assert val == pytest.approx(1.0, abs=1e-9)


def test_integrate_resolution_stability():
    # halving the tolerance changes the result by less than the looser tol
    f = gaussian_density(0.0, 1.0)
    a = integrate_semi_infinite(f, -0.7, tol=1e-8)
    b = integrate_semi_infinite(f, -0.7, tol=1e-10)
    assert abs(a - b) < 1e-8


def test_integrate_detects_non_decaying_tail():
    with pytest.raises(NumericsError):
        integrate_semi_infinite(lambda u: 1.0, 0.0, tol=1e-10)


def test_golden_section_quadratic():
    x = golden_section_min(lambda t: (t - 2.0) ** 2, 0.0, 5.0, tol=1e-8)
    assert x == pytest.approx(2.0, abs=1e-7)


def test_golden_section_nonsmooth():
    x = golden_section_min(lambda t: abs(t - 1.0), 0.0, 3.0, tol=1e-8)
    assert x == pytest.approx(1.0, abs=1e-7)


def test_golden_section_evaluation_budget():
    calls = [0]

    def f(t):
        calls[0] += 1
        return (t - 0.3) ** 2

    lo, hi, tol = 0.0, 1.0, 1e-6
    golden_section_min(f, lo, hi, tol)
    budget = math.ceil(math.log((hi - lo) / tol) / math.log(1.618)) + 2
    assert calls[0] <= budget


def test_golden_section_rejects_bad_bracket():
    with pytest.raises(ValueError):
        golden_section_min(lambda t: t, 1.0, 1.0, tol=1e-8)
