"""Jaccard-similarity power control via successive convex approximation.

The non-convex max-min dissimilarity program is solved as a sequence of
convex subproblems: each pairwise inverse-similarity constraint is rewritten
through ||u+v||^2/(lambda+3) >= u.v and bounded with the two standard
surrogates (ratio lower bound, product upper bound), both tight at the
expansion point.  The subproblems are solved with cvxpy in a normalised
(powers / p_max, powers in noise units) coordinate system for conditioning;
the Jaccard coefficient is scale-invariant so this changes nothing.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .channel import NetworkTopology
from .phy import SpreadingConfig

__all__ = [
    "PowerAllocation",
    "ExpectedBinPowerVectors",
    "SCAIteration",
    "OptimizationError",
    "ConfigurationError",
    "jaccard",
    "build_mu_vectors",
    "objective_similarity",
    "solve_sca_subproblem",
    "run_power_control",
    "modeled_inverse_similarity",
    "surrogate_ratio_lower",
    "surrogate_product_upper",
    "write_trace_csv",
]

log = logging.getLogger(__name__)

_P_FLOOR = 1e-9  # relative lower bound on p/p_max keeping linearisations defined


class OptimizationError(RuntimeError):
    pass


class ConfigurationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PowerAllocation:
    p: np.ndarray          # per-device transmit powers, mW
    p_max: float
    epsilon: float         # received-SNR floor (linear)

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if np.any(p < -1e-12) or np.any(p > self.p_max * (1 + 1e-9)):
            raise ValueError("powers outside [0, p_max]")


@dataclass(frozen=True)
class ExpectedBinPowerVectors:
    """Per-device and per-pair expected bin-power vectors across the gateways.

    single[g] has entries M*beta[l,g]*p_g + sigma2; pair[g, gp] adds both
    devices' signal terms over a single sigma2.
    """

    single: np.ndarray     # (N_u, L)
    pair: np.ndarray       # (N_u, N_u, L), diagonal unused


@dataclass
class SCAIteration:
    iteration: int
    lam: float
    max_pair_jaccard: float
    snr_residual: float
    budget_residual: float


def jaccard(u, v) -> float:
    """Inner-product Jaccard similarity of two positive vectors, in [0, 1]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    dot = float(u @ v)
    denom = float(u @ u + v @ v) - dot
    if denom <= 0:
        raise ValueError("Jaccard undefined: zero denominator")
    return dot / denom


def build_mu_vectors(topology: NetworkTopology, powers,
                     cfg: SpreadingConfig) -> ExpectedBinPowerVectors:
    p = np.asarray(getattr(powers, "p", powers), dtype=float)
    sig = cfg.M * topology.beta * p[None, :]      # (L, N_u)
    single = sig.T + topology.sigma2
    pair = sig.T[:, None, :] + sig.T[None, :, :] + topology.sigma2
    return ExpectedBinPowerVectors(single=single, pair=pair)


def objective_similarity(topology: NetworkTopology, powers,
                         cfg: SpreadingConfig) -> float:
    """Max over device pairs of the distinct-chirp and shared-chirp Jaccard."""
    mu = build_mu_vectors(topology, powers, cfg)
    n_u = topology.n_devices
    worst = 0.0
    for g, gp in itertools.combinations(range(n_u), 2):
        worst = max(worst,
                    jaccard(mu.single[g], mu.single[gp]),
                    jaccard(mu.pair[g, gp], mu.single[gp]))
    return worst


def surrogate_ratio_lower(x, y, xbar, ybar):
    """Linear lower bound on x^2/y, tight at (xbar, ybar)."""
    return 2.0 * xbar / ybar * x - (xbar / ybar) ** 2 * y


def surrogate_product_upper(x, y, xbar, ybar):
    """Convex upper bound on x*y, tight at (xbar, ybar)."""
    return xbar * ybar / 4.0 * (x / xbar + y / ybar) ** 2


def _normalised_gains(topology: NetworkTopology, cfg: SpreadingConfig,
                      p_max: float) -> np.ndarray:
    """b[l, g] = M * beta[l, g] * p_max / sigma2 (dimensionless)."""
    return cfg.M * topology.beta * p_max / topology.sigma2


def _pair_quantities(b, q, g, gp):
    """theta vector and both inner products for one pair at normalised powers q.

    theta[l] = b_g q_g + b_gp q_gp + 2; inner_distinct = mu_g . mu_gp and
    inner_shared = mu_{g,gp} . mu_gp, all in noise units.
    """
    sg = b[:, g] * q[g]
    sgp = b[:, gp] * q[gp]
    theta = sg + sgp + 2.0
    inner_distinct = float(np.sum((sg + 1.0) * (sgp + 1.0)))
    inner_shared = float(np.sum((sg + sgp + 1.0) * (sgp + 1.0)))
    return theta, inner_distinct, inner_shared


def modeled_inverse_similarity(topology: NetworkTopology, powers,
                               cfg: SpreadingConfig, alpha: float,
                               p_max: float) -> float:
    """Min over pairs of the inverse similarities the SCA constraints model.

    For the distinct-chirp constraint this is exactly J^{-1}; the shared-chirp
    constraint is modelled through the alpha-scaled theta vector, giving
    alpha^2 * ||theta||^2 / (mu_{g,gp} . mu_gp) - 3.
    """
    b = _normalised_gains(topology, cfg, p_max)
    q = np.asarray(getattr(powers, "p", powers), dtype=float) / p_max
    worst = np.inf
    for g, gp in itertools.combinations(range(topology.n_devices), 2):
        theta, inner_d, inner_s = _pair_quantities(b, q, g, gp)
        t2 = float(theta @ theta)
        worst = min(worst, t2 / inner_d - 3.0,
                    alpha ** 2 * t2 / inner_s - 3.0)
    return worst


def _solver_chain(problem: cp.Problem) -> None:
    for solver in (cp.CLARABEL, cp.ECOS, cp.SCS):
        try:
            problem.solve(solver=solver)
        except (cp.SolverError, Exception):
            continue
        if problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            return
    raise OptimizationError(f"convex subproblem failed (status {problem.status})")


def solve_sca_subproblem(topology: NetworkTopology, cfg: SpreadingConfig,
                         p_prev: np.ndarray, lambda_prev: float,
                         alpha: float, p_max: float, epsilon: float):
    """One convex SCA instance expanded at (p_prev, lambda_prev).

    Returns (p_new, lambda_new).  p_prev must be strictly positive.
    """
    p_prev = np.asarray(p_prev, dtype=float)
    if np.any(p_prev <= 0):
        raise ValueError("linearisation point requires strictly positive powers")
    if lambda_prev <= -3.0:
        raise ValueError("lambda_prev + 3 must be positive")
    n_u = topology.n_devices
    b = _normalised_gains(topology, cfg, p_max)
    qbar = p_prev / p_max

    q = cp.Variable(n_u)
    lam = cp.Variable()
    cons = [q >= _P_FLOOR, q <= 1.0]
    # SNR floor: (1/(L sigma2)) sum_l M beta p_g >= eps
    snr_coef = b.mean(axis=0)                  # (n_u,)
    cons += [snr_coef[g] * q[g] >= epsilon for g in range(n_u)]

    lp3 = lambda_prev + 3.0
    L = b.shape[0]
    for g, gp in itertools.combinations(range(n_u), 2):
        theta_bar, _, _ = _pair_quantities(b, qbar, g, gp)
        theta = b[:, g] * q[g] + b[:, gp] * q[gp] + 2.0
        cross = float(b[:, g] @ b[:, gp])
        # bilinear p_g*p_gp term, upper-bounded by the product surrogate
        rhs_quad = (qbar[g] * qbar[gp] / 4.0 * cross
                    * cp.square(q[g] / qbar[g] + q[gp] / qbar[gp]))
        # distinct-chirp pair: mu_g . mu_gp
        rhs_d = rhs_quad + cp.sum(b[:, g] * q[g] + b[:, gp] * q[gp]) + L
        lhs_d = (cp.sum(cp.multiply(2.0 * theta_bar / lp3, theta))
                 - float(theta_bar @ theta_bar) / lp3 ** 2 * (lam + 3.0))
        cons.append(lhs_d >= rhs_d)
        # shared-chirp pair: mu_{g,gp} . mu_gp with the alpha-scaled theta
        rhs_s = (rhs_quad
                 + float(b[:, gp] @ b[:, gp]) * cp.square(q[gp])
                 + cp.sum(b[:, g] * q[g] + 2.0 * b[:, gp] * q[gp]) + L)
        tb = alpha * theta_bar
        lhs_s = (cp.sum(cp.multiply(2.0 * tb / lp3, alpha * theta))
                 - float(tb @ tb) / lp3 ** 2 * (lam + 3.0))
        cons.append(lhs_s >= rhs_s)

    problem = cp.Problem(cp.Maximize(lam), cons)
    _solver_chain(problem)
    q_new = np.clip(np.asarray(q.value, dtype=float), _P_FLOOR, 1.0)
    return q_new * p_max, float(lam.value)


def run_power_control(topology: NetworkTopology, cfg: SpreadingConfig,
                      p_max: float, epsilon: float, alpha: float = 1.061,
                      tol: float = 1e-5, max_iter: int = 100):
    """Full SCA loop starting from p = p_max for every device.

    Returns (PowerAllocation, trace) where trace is a list of SCAIteration.
    lambda starts from the modelled inverse similarity at the starting point,
    which makes the first linearisation feasible by construction.
    """
    n_u = topology.n_devices
    if n_u < 2:
        return PowerAllocation(p=np.full(max(n_u, 1), p_max), p_max=p_max,
                               epsilon=epsilon), []

    b = _normalised_gains(topology, cfg, p_max)
    snr_at_pmax = b.mean(axis=0)
    if np.any(snr_at_pmax < epsilon):
        raise ConfigurationError(
            "SNR floor infeasible even at p_max for device(s) "
            f"{np.flatnonzero(snr_at_pmax < epsilon).tolist()}")

    p = np.full(n_u, float(p_max))
    lam = modeled_inverse_similarity(topology, p, cfg, alpha, p_max)
    trace = [_record(0, lam, topology, p, cfg, p_max, epsilon)]
    for it in range(1, max_iter + 1):
        p_new, lam_new = solve_sca_subproblem(topology, cfg, p, lam, alpha,
                                              p_max, epsilon)
        if lam_new < lam:
            # the previous iterate stays feasible in every subproblem, so a
            # decrease can only be solver noise; keep the old point, which
            # registers as a zero-improvement step and terminates the loop
            log.debug("solver returned lambda %.12g < %.12g, keeping iterate",
                      lam_new, lam)
            p_new, lam_new = p, lam
        converged = abs(lam_new - lam) < tol
        p, lam = p_new, lam_new
        trace.append(_record(it, lam, topology, p, cfg, p_max, epsilon))
        if converged:
            break
    else:
        log.warning("power control hit max_iter=%d without |dlambda|<%g",
                    max_iter, tol)
    return PowerAllocation(p=p, p_max=p_max, epsilon=epsilon), trace


def _record(it, lam, topology, p, cfg, p_max, epsilon) -> SCAIteration:
    snr = (_normalised_gains(topology, cfg, p_max) * (p / p_max)).mean(axis=0)
    return SCAIteration(
        iteration=it,
        lam=float(lam),
        max_pair_jaccard=objective_similarity(topology, p, cfg),
        snr_residual=float(np.min(snr) - epsilon),
        budget_residual=float(p_max - np.max(p)),
    )


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "lambda", "max_pair_jaccard",
                    "snr_residual", "budget_residual"])
        for t in trace:
            w.writerow([t.iteration, f"{t.lam:.12g}",
                        f"{t.max_pair_jaccard:.12g}",
                        f"{t.snr_residual:.12g}", f"{t.budget_residual:.12g}"])
