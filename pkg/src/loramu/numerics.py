"""Special functions, quadrature and scalar search used by threshold calibration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

__all__ = [
    "ActiveBinStats",
    "NumericsError",
    "erf",
    "chi2_sum_cdf",
    "integrate_semi_infinite",
    "golden_section_min",
]

_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


class NumericsError(RuntimeError):
    pass


@dataclass(frozen=True)
class ActiveBinStats:
    """Per-device active-bin moments used by the stage-1 error bound.

    mu[g] is the gateway-averaged expected active-bin power (mW), sigma2_g[g]
    the gateway-averaged second moment (mW^2).
    """

    mu: np.ndarray
    sigma2_g: np.ndarray
    n_gateways: int
    n_antennas: int
    M: int
    sigma2: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        s2 = np.asarray(self.sigma2_g, dtype=float)
        if np.any(mu < self.sigma2) or np.any(s2 <= 0):
            raise ValueError("invalid active-bin statistics")


def erf(x):
    return special.erf(x)


def chi2_sum_cdf(u, shape: int, scale: float):
    """CDF of a Gamma(shape, scale) sum of exponentials, i.e. P(shape, u/scale).

    Equals the truncated-Poisson-tail form 1 - e^{-u/s} sum_{q<shape} (u/s)^q/q!
    for integer shape; gammainc evaluates it stably for shape up to hundreds.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("u must be non-negative")
    if shape < 1 or scale <= 0:
        raise ValueError("need shape >= 1 and scale > 0")
    return special.gammainc(shape, u / scale)


def integrate_semi_infinite(f, lower: float, tol: float = 1e-10,
                            upper: float | None = None) -> float:
    """Integrate f from `lower` to infinity by truncating the decaying tail.

    If `upper` is not given, the cutoff is expanded geometrically until the
    integrand has fallen below tol times the largest magnitude seen.  Callers
    that know the integrand's mode (e.g. a Gaussian factor) should pass
    upper >= mean + 10 standard deviations directly.
    """
    if upper is None:
        step = max(1.0, abs(lower))
        peak = abs(f(lower))
        upper = lower + step
        for _ in range(80):
            val = abs(f(upper))
            peak = max(peak, val)
            if val <= tol * max(peak, 1e-300):
                break
            upper = lower + (upper - lower) * 2.0
        else:
            raise NumericsError("could not locate a decaying tail cutoff")
    if upper <= lower:
        return 0.0
    val, abserr = integrate.quad(f, lower, upper, epsabs=tol, epsrel=1e-10,
                                 limit=400)
    if not np.isfinite(val) or abserr > max(100.0 * tol, 1e-7 * abs(val)):
        raise NumericsError(
            f"quadrature did not converge (value={val}, abserr={abserr})")
    return val


def golden_section_min(f, lo: float, hi: float, tol: float = 1e-8) -> float:
    """Golden-section argmin of a unimodal f on [lo, hi] to within tol."""
    if lo >= hi:
        raise ValueError("need lo < hi")
    a, b = lo, hi
    c = b - (b - a) * _INV_PHI
    d = a + (b - a) * _INV_PHI
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - (b - a) * _INV_PHI
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + (b - a) * _INV_PHI
            fd = f(d)
    return 0.5 * (a + b)
