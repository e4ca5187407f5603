"""Degree-dependent vaccination with a perfect vaccine.

A vaccinated susceptible never becomes infective, so it is moved to the
recovered class before the epidemic starts.  ``vaccinated_by_degree`` keeps a
separate tally so reports can subtract those vertices again.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy import optimize

from .degree_model import AsymptoticParams, DegreeProfile, extract_params
from .limit_system import compute_R0

__all__ = [
    "VaccinationStrategy",
    "VaccinationResult",
    "apply_vaccination",
    "vaccinate_params",
    "modified_R0",
    "critical_coverage",
]


@dataclass(frozen=True)
class VaccinationStrategy:
    kind: str
    v: float = 0.0
    table: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("uniform", "edgewise", "custom"):
            raise ValueError(f"unknown vaccination kind {self.kind!r}")
        if self.kind != "custom" and not 0 <= self.v < 1:
            raise ValueError(f"coverage v must lie in [0, 1), got {self.v}")
        if self.kind == "custom" and any(not 0 <= p < 1 for p in self.table.values()):
            raise ValueError("every pi_k must lie in [0, 1)")

    @classmethod
    def uniform(cls, v: float) -> "VaccinationStrategy":
        return cls("uniform", v)

    @classmethod
    def edgewise(cls, v: float) -> "VaccinationStrategy":
        return cls("edgewise", v)

    @classmethod
    def custom(cls, table: Mapping[int, float]) -> "VaccinationStrategy":
        return cls("custom", table={int(k): float(p) for k, p in table.items()})

    def pi(self, k):
        k = np.asarray(k)
        if self.kind == "uniform":
            return np.full(k.shape, self.v, dtype=float)
        if self.kind == "edgewise":
            return 1.0 - (1.0 - self.v) ** k.astype(float)
        return np.array([self.table.get(int(x), 0.0) for x in np.ravel(k)], dtype=float).reshape(k.shape)


@dataclass
class VaccinationResult:
    profile: DegreeProfile
    params: AsymptoticParams
    vaccinated_by_degree: dict[int, int]

    @property
    def V(self) -> int:
        return sum(self.vaccinated_by_degree.values())


def vaccinate_params(params: AsymptoticParams, strategy: VaccinationStrategy) -> AsymptoticParams:
    """Post-vaccination parameters in expectation."""
    k = params.degrees
    pi = strategy.pi(k)
    keep = params.pk * (1 - pi)
    a_s = params.alpha_s * keep.sum()
    pk = keep / keep.sum()
    moved = params.alpha_s * float(np.dot(k * pi, params.pk))
    return replace(
        params,
        alpha_s=a_s,
        alpha_r=params.alpha_r + params.alpha_s * float(np.dot(pi, params.pk)),
        pk=pk,
        mu_s=params.mu_s - moved,
        mu_r=params.mu_r + moved,
    )


def apply_vaccination(
    profile: DegreeProfile,
    strategy: VaccinationStrategy,
    beta: float,
    rho: float,
    rng_seed=None,
    mode: str = "stochastic",
) -> VaccinationResult:
    """Vaccinate susceptibles of degree k independently with probability pi_k.

    ``mode="stochastic"`` draws binomial counts per degree; ``"expectation"``
    returns analytic parameters and a profile with rounded expected counts.
    """
    rng = np.random.default_rng(rng_seed)
    ns = dict(profile.n_s_by_degree)
    vacc: dict[int, int] = {}
    for k, c in ns.items():
        pi = float(strategy.pi(k))
        if mode == "stochastic":
            m = int(rng.binomial(c, pi))
        elif mode == "expectation":
            m = int(np.floor(c * pi + 0.5))
        else:
            raise ValueError(f"unknown mode {mode!r}")
        if m:
            vacc[k] = m
    new_s = {k: c - vacc.get(k, 0) for k, c in ns.items()}
    new_r = dict(profile.n_r_by_degree)
    for k, m in vacc.items():
        new_r[k] = new_r.get(k, 0) + m
    new_profile = DegreeProfile(new_s, dict(profile.n_i_by_degree), new_r)
    if mode == "expectation":
        params = vaccinate_params(extract_params(profile, beta, rho), strategy)
    else:
        params = extract_params(new_profile, beta, rho)
    return VaccinationResult(new_profile, params, vacc)


def modified_R0(params: AsymptoticParams, strategy: VaccinationStrategy) -> float:
    k = params.degrees.astype(float)
    pi = strategy.pi(params.degrees)
    s = float(np.dot(k * (k - 1) * (1 - pi), params.pk))
    return params.beta / (params.rho + params.beta) * params.alpha_s / params.mu * s


def critical_coverage(params: AsymptoticParams, family: str = "uniform", tol: float = 1e-10) -> float:
    """Smallest coverage v with modified R0 <= 1 (0 if already subcritical)."""
    if compute_R0(params) <= 1:
        return 0.0
    make = {"uniform": VaccinationStrategy.uniform, "edgewise": VaccinationStrategy.edgewise}[family]
    f = lambda v: modified_R0(params, make(v)) - 1.0
    v = optimize.brentq(f, 0.0, 1.0 - 1e-15, xtol=1e-15, rtol=1e-15, maxiter=500)
    if abs(f(v)) > tol:
        raise RuntimeError(f"coverage root not resolved: |R0~ - 1| = {abs(f(v)):.3g}")
    return float(v)
