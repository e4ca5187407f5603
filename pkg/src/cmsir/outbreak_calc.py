"""Branching-process approximation of the early epidemic.

An infective vertex with ``l`` free half-edges pairs ``Y_l`` of them before it
recovers.  A newly infected vertex is reached along a size-biased half-edge,
so the offspring law ``xi`` mixes ``Y_{k-1}`` over the size-biased degree law
(plus an atom at 0 for half-edges of recovered vertices).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from numpy.polynomial import polynomial as P

from .degree_model import AsymptoticParams

__all__ = [
    "OffspringModel",
    "y_pmf",
    "y_pgf",
    "y_mean",
    "offspring_distribution",
    "extinction_prob",
    "outbreak_probability",
    "simulate_gw",
    "offspring_model",
]

LOG_SPACE_ABOVE = 60


def y_pmf(ell: int, rho_over_beta: float) -> np.ndarray:
    """pmf of Y_ell on {0, ..., ell}.

    P(Y = 0) = r / (ell + r) with r = rho/beta, and consecutive terms have ratio
    (ell - j) / (ell + r - 1 - j).  The product is evaluated as j won races
    against recovery, each with probability (ell - i) / (ell - i + r), followed
    by a lost one, so every factor is at most 1 and tiny r cannot overflow.
    """
    ell = int(ell)
    r = float(rho_over_beta)
    if ell < 0 or r < 0:
        raise ValueError("need ell >= 0 and rho/beta >= 0")
    out = np.zeros(ell + 1)
    if r == 0:
        out[ell] = 1.0
        return out
    left = ell - np.arange(ell + 1, dtype=float)
    win = left[:-1] / (left[:-1] + r)
    lose = r / (left + r)
    if ell <= LOG_SPACE_ABOVE:
        prefix = np.concatenate([[1.0], np.cumprod(win)])
    else:
        with np.errstate(divide="ignore"):
            prefix = np.exp(np.concatenate([[0.0], np.cumsum(np.log(win))]))
    out[:] = prefix * lose
    return out


def y_mean(ell: int, rho_over_beta: float) -> float:
    return ell / (1.0 + rho_over_beta)


def y_pgf(ell: int, rho_over_beta: float, x) -> np.ndarray | float:
    """E x^{Y_ell} by direct summation."""
    return P.polyval(x, y_pmf(ell, rho_over_beta))


@dataclass
class OffspringModel:
    rho_over_beta: float
    xi_pmf: np.ndarray
    tail_mass: float
    truncation_K: int
    q: float | None = None
    outbreak_prob: float | None = None
    R0: float | None = None

    @property
    def E_xi(self) -> float:
        return float(np.dot(np.arange(len(self.xi_pmf)), self.xi_pmf))

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "outbreak_prob": self.outbreak_prob,
            "E_xi": self.E_xi,
            "R0": self.R0,
            "truncation_K": self.truncation_K,
            "tail_mass": self.tail_mass,
        }


def offspring_distribution(params: AsymptoticParams, K: int | None = None) -> tuple[np.ndarray, float]:
    """pmf of xi (truncated at ``K`` if given) and the discarded tail mass.

    Only meaningful in the small-seed regime, where the mixture weights
    ``alpha_S k p_k / mu`` and ``mu_R / mu`` sum to one.
    """
    if params.mu_i > 0:
        raise ValueError(
            "offspring law needs mu_I = 0; use AsymptoticParams.small_seed_limit() "
            "for instances with a few seeds"
        )
    r = params.ratio
    mu = params.mu
    kmax = int(params.degrees.max(initial=0))
    pmf = np.zeros(max(kmax, 1))
    pmf[0] += params.mu_r / mu
    for k, p in zip(params.degrees.tolist(), params.pk.tolist()):
        if k < 1 or p == 0:
            continue
        pmf[:k] += params.alpha_s * k * p / mu * y_pmf(k - 1, r)
    tail = params.tail_mass
    if K is not None and len(pmf) > K + 1:
        tail += float(pmf[K + 1:].sum())
        pmf = pmf[:K + 1]
    return pmf, tail


def extinction_prob(xi_pmf, tol: float = 1e-14, max_iter: int = 10_000_000) -> float:
    """Smallest fixed point of q = E q^xi, by monotone iteration from 0."""
    pmf = np.asarray(xi_pmf, dtype=float)
    if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-9:
        raise ValueError("xi_pmf must be a probability vector")
    mean = float(np.dot(np.arange(len(pmf)), pmf))
    if mean <= 1.0 + 1e-12:
        return 1.0
    q = 0.0
    dpmf = P.polyder(pmf)
    for _ in range(max_iter):
        nxt = float(P.polyval(q, pmf))
        if nxt - q <= tol:
            break
        q = nxt
    else:
        raise RuntimeError("fixed-point iteration did not converge")
    # the iterate sits just below the root where the pgf slope is < 1, so
    # Newton steps stay on the smallest fixed point and remove the slow tail
    for _ in range(3):
        slope = float(P.polyval(nxt, dpmf))
        if slope >= 1:
            break
        nxt -= (float(P.polyval(nxt, pmf)) - nxt) / (slope - 1.0)
    return min(max(nxt, 0.0), 1.0)


def outbreak_probability(params: AsymptoticParams, initial: Mapping[int, int], K: int | None = None) -> float:
    """1 - prod_k phi_k(q)^{n_I,k}: probability of a large outbreak."""
    if all(k == 0 or c == 0 for k, c in initial.items()):
        return 0.0
    pmf, _ = offspring_distribution(params, K)
    q = extinction_prob(pmf)
    r = params.ratio
    log_ext = sum(c * math.log(max(float(y_pgf(k, r, q)), 1e-300))
                  for k, c in initial.items() if c and k)
    return 1.0 - math.exp(log_ext)


def offspring_model(params: AsymptoticParams, initial: Mapping[int, int] | None = None,
                    K: int | None = None) -> OffspringModel:
    from .limit_system import compute_R0

    pmf, tail = offspring_distribution(params, K)
    q = extinction_prob(pmf)
    model = OffspringModel(params.ratio, pmf, tail, len(pmf) - 1, q=q, R0=compute_R0(params))
    if initial is not None:
        model.outbreak_prob = outbreak_probability(params, initial, K)
    return model


def simulate_gw(xi_pmf, initial: Mapping[int, int], rho_over_beta: float, rng_seed=None,
                cap: int = 10**6) -> tuple[bool, int]:
    """Run the Galton-Watson process through its random-walk representation.

    Founders: one ``Y_k`` draw per initial infective of degree ``k``.  Each
    step explores one individual: ``W <- W - 1 + xi``.  Returns
    ``(extinct, total_individuals)``; reaching ``cap`` individuals counts as
    survival.
    """
    rng = np.random.default_rng(rng_seed)
    pmf = np.asarray(xi_pmf, dtype=float)
    cdf = np.cumsum(pmf / pmf.sum())
    founders = 0
    for k, c in initial.items():
        if k and c:
            ycdf = np.cumsum(y_pmf(k, rho_over_beta))
            founders += int(np.searchsorted(ycdf, rng.random(c) * ycdf[-1], side="right").sum())
    alive = founders
    explored = 0
    batch = 16
    while alive > 0:
        if explored + alive >= cap:
            return False, explored + alive
        steps = np.searchsorted(cdf, rng.random(batch) * cdf[-1], side="right") - 1
        walk = alive + np.cumsum(steps)
        hit = np.flatnonzero(walk <= 0)
        if len(hit):
            explored += int(hit[0]) + 1
            return True, explored
        explored += batch
        alive = int(walk[-1])
        batch = min(2 * batch, 1 << 16)
    return True, explored
