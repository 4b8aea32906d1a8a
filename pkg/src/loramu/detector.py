"""Non-coherent multiuser detection: exhaustive ML and two-stage variants.

The two-stage detector first thresholds the fused bin powers to identify the
active bins, then scores the reduced candidate set with the same Gamma
log-likelihood, restricted to the identified bins.  The power threshold is
calibrated analytically from the per-device active-bin statistics.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import NetworkTopology
from .numerics import (ActiveBinStats, chi2_sum_cdf, erf, golden_section_min,
                       integrate_semi_infinite)
from .phy import BinPowerTensor, SpreadingConfig

__all__ = [
    "DetectionResult",
    "ThresholdCalibration",
    "CapabilityError",
    "CalibrationError",
    "rho",
    "loglik",
    "ml_detect",
    "count_tuples",
    "prob_support_size",
    "active_bin_stats",
    "error_upper_bound",
    "calibrate_threshold",
    "stage1_identify",
    "enumerate_candidates",
    "two_stage_detect",
    "ExhaustiveScorer",
    "TwoStageDetector",
]

# bin powers are clamped to this floor before taking logs
_POWER_FLOOR = 1e-300


class CapabilityError(RuntimeError):
    """Exhaustive search would exceed the configured enumeration budget."""


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DetectionResult:
    m_hat: tuple
    active_bins: tuple
    loglik: float
    stage1_bin_count: int


@dataclass(frozen=True)
class ThresholdCalibration:
    p_th: float
    p_error_ub: float
    stats: ActiveBinStats


def _device_contrib(topology: NetworkTopology, powers, cfg: SpreadingConfig):
    """Per-(gateway, device) expected active-bin signal power M*beta*p, (L, N_u)."""
    p = np.asarray(getattr(powers, "p", powers), dtype=float)
    return cfg.M * topology.beta * p[None, :]


def rho(symbols, topology: NetworkTopology, powers,
        cfg: SpreadingConfig) -> np.ndarray:
    """Expected per-antenna bin powers rho[l, k] for a candidate tuple."""
    contrib = _device_contrib(topology, powers, cfg)
    out = np.full((topology.n_gateways, cfg.M), topology.sigma2)
    for g, m in enumerate(symbols):
        out[:, int(m)] += contrib[:, g]
    return out


def loglik(symbols, bins: BinPowerTensor, topology: NetworkTopology, powers,
           cfg: SpreadingConfig, restrict_to=None) -> float:
    """Gamma log-likelihood of the per-gateway bin powers for one tuple.

    The symbol-independent additive constant is dropped.  With restrict_to
    the sum runs over that bin set only (second-stage rule).
    """
    rho_ = rho(symbols, topology, powers, cfg)
    r = np.maximum(np.asarray(bins.r, dtype=float), _POWER_FLOOR)
    if r.shape != rho_.shape:
        raise ValueError("bin tensor does not match topology/config dimensions")
    if restrict_to is not None:
        k = np.asarray(sorted(restrict_to), dtype=int)
        r = r[:, k]
        rho_ = rho_[:, k]
    n_t = bins.n_antennas
    return float(np.sum((n_t - 1) * np.log(r) - n_t * np.log(rho_) - r / rho_))


def count_tuples(n_u: int, i: int) -> int:
    """Number of N_u-tuples whose support is exactly a given set of i symbols."""
    if not 1 <= i <= n_u:
        raise ValueError("need 1 <= i <= n_u")
    c = [0, 1]
    for j in range(2, i + 1):
        c.append(j ** n_u - sum(c[k] * math.comb(j, k) for k in range(1, j)))
    return c[i]


def prob_support_size(M: int, n_u: int, i: int) -> float:
    """P(exactly i distinct symbols among n_u uniform draws from M)."""
    if not 1 <= i <= n_u <= M:
        raise ValueError("need 1 <= i <= n_u <= M")
    return count_tuples(n_u, i) * math.comb(M, i) / M ** n_u


def active_bin_stats(topology: NetworkTopology, powers, cfg: SpreadingConfig,
                     n_antennas: int) -> ActiveBinStats:
    """Gateway-averaged active-bin moments for each device transmitting alone."""
    contrib = _device_contrib(topology, powers, cfg) + topology.sigma2
    return ActiveBinStats(
        mu=contrib.mean(axis=0),
        sigma2_g=(contrib ** 2).mean(axis=0),
        n_gateways=topology.n_gateways,
        n_antennas=n_antennas,
        M=cfg.M,
        sigma2=topology.sigma2,
    )


def _exceed_prob(u, mean, var):
    """P(Gaussian(mean, var) > u)."""
    return 0.5 - 0.5 * erf((u - mean) / np.sqrt(2.0 * var))


def error_upper_bound(p_th: float, stats: ActiveBinStats) -> float:
    """Upper bound on the stage-1 misidentification probability at threshold p_th.

    Active-bin powers are treated as Gaussian with mean L*mu_g and variance
    L*sigma2_g/N_t; inactive bins follow the chi-square sum of the L*N_t noise
    branches, expressed in the fused (antenna-normalised) power scale.
    """
    if p_th <= 0:
        raise ValueError("p_th must be positive")
    L, n_t, M, s2 = (stats.n_gateways, stats.n_antennas, stats.M, stats.sigma2)
    mu = np.asarray(stats.mu, dtype=float)
    n_u = len(mu)
    mean = L * mu
    var = L * np.asarray(stats.sigma2_g, dtype=float) / n_t

    def inactive_cdf(u):
        return chi2_sum_cdf(u, n_t * L, s2 / n_t)

    p_correct = 0.0

    # all symbols distinct: integrate over the weakest-looking active bin
    # power, standardised per device so the quadrature sees each Gaussian
    # peak regardless of how far apart the device power levels are
    total = 0.0
    sd = np.sqrt(var)
    for g in range(n_u):

        def integrand(z, g=g):
            u = mean[g] + sd[g] * z
            val = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
            val *= inactive_cdf(u) ** (M - n_u)
            for q in range(n_u):
                if q != g:
                    val *= _exceed_prob(u, mean[q], var[q])
            return val

        z_lo = max((p_th - mean[g]) / sd[g], -12.0)
        if z_lo < 12.0:
            total += integrate_semi_infinite(integrand, z_lo, tol=1e-10,
                                             upper=12.0)
    p_correct += total * prob_support_size(M, n_u, n_u)

    # fewer distinct symbols: lower bound using the i weakest devices
    order = np.argsort(mu, kind="stable")
    for i in range(1, n_u):
        term = inactive_cdf(p_th) ** (M - i)
        for g in order[:i]:
            term *= _exceed_prob(p_th, mean[g], var[g])
        p_correct += term * prob_support_size(M, n_u, i)

    return float(1.0 - p_correct)


def calibrate_threshold(stats: ActiveBinStats,
                        tol: float | None = None) -> ThresholdCalibration:
    """Minimise the stage-1 error bound over the power threshold.

    Golden-section search over [L*sigma2, weakest active mean + 10 sd]; a
    coarse grid cross-check falls back to a dense-grid argmin if the curve
    turns out not to be unimodal numerically.  The bracket tops out at the
    weakest device because any threshold above its active-bin mean misses
    that device almost surely, so the minimiser cannot lie there.
    """
    L, n_t = stats.n_gateways, stats.n_antennas
    lo = L * stats.sigma2
    mean = L * np.asarray(stats.mu, dtype=float)
    sd = np.sqrt(L * np.asarray(stats.sigma2_g, dtype=float) / n_t)
    g_min = int(np.argmin(mean))
    hi = float(mean[g_min] + 10.0 * sd[g_min])
    if np.max(mean) <= lo * (1.0 + 1e-9) or hi <= lo * (1.0 + 1e-9):
        raise CalibrationError(
            "threshold bracket collapsed; no active-bin power above noise")
    if tol is None:
        tol = (hi - lo) * 1e-5

    f = lambda x: error_upper_bound(x, stats)
    x = golden_section_min(f, lo * (1.0 + 1e-12), hi, tol)
    fx = f(x)

    grid = np.linspace(lo * (1.0 + 1e-12), hi, 128)
    vals = np.array([f(v) for v in grid])
    if vals.min() < fx - (1e-12 + 1e-9 * abs(fx)):
        # non-unimodal pathology: dense grid argmin, refined locally
        dense = np.linspace(lo * (1.0 + 1e-12), hi, 2000)
        dvals = np.array([f(v) for v in dense])
        j = int(np.argmin(dvals))
        a = dense[max(j - 1, 0)]
        b = dense[min(j + 1, len(dense) - 1)]
        x = golden_section_min(f, a, b, tol) if a < b else dense[j]
        fx = f(x)
    return ThresholdCalibration(p_th=float(x), p_error_ub=float(fx), stats=stats)


def stage1_identify(bins, p_th: float, n_u: int) -> tuple:
    """Identify the active bin set from the fused powers.

    At most n_u bins above the threshold are all taken; with more, the n_u
    strongest win; with none, the single strongest bin is returned so a
    decision is always produced.  Ties break towards the lowest bin index.
    """
    if p_th <= 0:
        raise ValueError("p_th must be positive")
    ups = np.asarray(bins.upsilon if isinstance(bins, BinPowerTensor) else bins,
                     dtype=float)
    above = np.flatnonzero(ups > p_th)
    if len(above) == 0:
        return (int(np.argmax(ups)),)
    if len(above) <= n_u:
        return tuple(int(k) for k in above)
    order = np.argsort(-ups, kind="stable")[:n_u]
    return tuple(int(k) for k in np.sort(order))


def enumerate_candidates(s_plus, n_u: int, surjective: bool = True) -> list:
    """All n_u-tuples over the identified bins, lexicographically ordered.

    surjective=True keeps only tuples using every identified bin (count
    C_{|S+|}); surjective=False yields all |S+|**n_u tuples.
    """
    bins_sorted = sorted(int(k) for k in s_plus)
    if not 1 <= len(bins_sorted) <= n_u:
        raise ValueError("need 1 <= |S+| <= n_u")
    full = set(bins_sorted)
    out = []
    for t in itertools.product(bins_sorted, repeat=n_u):
        if not surjective or set(t) == full:
            out.append(t)
    return out


def two_stage_detect(bins: BinPowerTensor, topology: NetworkTopology, powers,
                     calibration: ThresholdCalibration, cfg: SpreadingConfig,
                     surjective: bool = True) -> DetectionResult:
    """Threshold, enumerate over the identified bins, score restricted likelihood."""
    n_u = topology.n_devices
    s_plus = stage1_identify(bins, calibration.p_th, n_u)
    best = None
    best_score = -np.inf
    for cand in enumerate_candidates(s_plus, n_u, surjective):
        score = loglik(cand, bins, topology, powers, cfg, restrict_to=s_plus)
        if score > best_score:
            best, best_score = cand, score
    return DetectionResult(m_hat=best, active_bins=s_plus, loglik=best_score,
                           stage1_bin_count=len(s_plus))


@lru_cache(maxsize=None)
def _support_patterns(n_u: int, i: int, surjective: bool = True) -> np.ndarray:
    """Position patterns (C, n_u) over i slots, lexicographic; support == slots
    when surjective."""
    pats = [t for t in itertools.product(range(i), repeat=n_u)
            if not surjective or len(set(t)) == i]
    return np.array(pats, dtype=int).reshape(len(pats), n_u)


class ExhaustiveScorer:
    """Precomputed exhaustive-search ML detector for one (topology, powers).

    The candidate expected-power tensors depend only on the topology and the
    allocation, so the per-frame work reduces to one inner product per
    candidate; detect_batch turns a trial batch into a single matmul.
    """

    def __init__(self, topology: NetworkTopology, powers, cfg: SpreadingConfig,
                 n_antennas: int, budget: int = 1 << 20):
        M, L, n_u = cfg.M, topology.n_gateways, topology.n_devices
        n_cand = M ** n_u
        if n_cand > budget:
            raise CapabilityError(
                f"M^N_u = {n_cand} exceeds the enumeration budget {budget}; "
                "use the two-stage detector")
        self.cfg = cfg
        self.n_antennas = n_antennas
        cand = np.indices((M,) * n_u).reshape(n_u, -1).T  # lexicographic
        contrib = _device_contrib(topology, powers, cfg)
        rho_all = np.full((n_cand, L, M), topology.sigma2)
        rows = np.arange(n_cand)[:, None]
        cols = np.arange(L)[None, :]
        for g in range(n_u):
            np.add.at(rho_all, (rows, cols, cand[:, g][:, None]),
                      contrib[None, :, g])
        self.candidates = cand
        self._inv_rho = (1.0 / rho_all).reshape(n_cand, L * M)
        self._c0 = -n_antennas * np.log(rho_all).sum(axis=(1, 2))

    def scores(self, r: np.ndarray) -> np.ndarray:
        """Symbol-dependent part of the log-likelihood, one entry per candidate."""
        return self._c0 - self._inv_rho @ np.asarray(r, dtype=float).ravel()

    def detect(self, r: np.ndarray) -> tuple:
        idx = int(np.argmax(self.scores(r)))
        return tuple(int(v) for v in self.candidates[idx])

    def detect_batch(self, r_batch: np.ndarray) -> np.ndarray:
        """r_batch (B, L, M) -> detected tuples (B, n_u)."""
        flat = np.asarray(r_batch, dtype=float).reshape(len(r_batch), -1)
        s = flat @ self._inv_rho.T
        np.negative(s, out=s)
        s += self._c0[None, :]
        return self.candidates[np.argmax(s, axis=1)]


def ml_detect(bins: BinPowerTensor, topology: NetworkTopology, powers,
              cfg: SpreadingConfig, budget: int = 1 << 20) -> DetectionResult:
    """Exhaustive non-coherent ML detection over all M**N_u tuples."""
    scorer = ExhaustiveScorer(topology, powers, cfg, bins.n_antennas, budget)
    m_hat = scorer.detect(bins.r)
    return DetectionResult(
        m_hat=m_hat,
        active_bins=tuple(sorted(set(m_hat))),
        loglik=loglik(m_hat, bins, topology, powers, cfg),
        stage1_bin_count=0,
    )


class TwoStageDetector:
    """Fast two-stage detector with per-support-size precomputed tables.

    For each possible number of identified bins i, the candidate assignment
    patterns and their expected-power tables are precomputed once; a frame
    then costs one gather plus a (C_i x L*i) inner product.  Matches
    two_stage_detect decision-for-decision.
    """

    def __init__(self, topology: NetworkTopology, powers, cfg: SpreadingConfig,
                 n_antennas: int, p_th: float, surjective: bool = True):
        self.cfg = cfg
        self.n_u = topology.n_devices
        self.n_antennas = n_antennas
        self.p_th = p_th
        contrib = _device_contrib(topology, powers, cfg)  # (L, n_u)
        s2 = topology.sigma2
        self._tables = {}
        for i in range(1, self.n_u + 1):
            pats = _support_patterns(self.n_u, i, surjective)
            c, L = len(pats), contrib.shape[0]
            # scatter device contributions onto their assigned slots
            rho_pat = np.full((c, L, i), s2)
            for g in range(self.n_u):
                slot = pats[:, g]                       # (c,)
                rows = np.arange(c)
                rho_pat[rows, :, slot] += contrib[:, g][None, :]
            self._tables[i] = (
                pats,
                (1.0 / rho_pat).reshape(c, L * i),
                -n_antennas * np.log(rho_pat).sum(axis=(1, 2)),
            )

    def detect(self, r: np.ndarray, upsilon: np.ndarray) -> tuple:
        s_plus = stage1_identify(upsilon, self.p_th, self.n_u)
        pats, inv_rho, c0 = self._tables[len(s_plus)]
        bins = np.asarray(s_plus, dtype=int)
        r_sub = np.maximum(np.asarray(r, dtype=float)[:, bins], _POWER_FLOOR)
        scores = c0 - inv_rho @ r_sub.ravel()
        idx = int(np.argmax(scores))
        return tuple(int(bins[s]) for s in pats[idx])

    def detect_batch(self, r_batch: np.ndarray,
                     upsilon_batch: np.ndarray) -> np.ndarray:
        out = np.empty((len(r_batch), self.n_u), dtype=int)
        for b in range(len(r_batch)):
            out[b] = self.detect(r_batch[b], upsilon_batch[b])
        return out
