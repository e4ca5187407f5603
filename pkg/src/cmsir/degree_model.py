"""Degree sequences with typed initial conditions.

A :class:`DegreeProfile` stores, for every degree ``k``, how many vertices of
that degree start susceptible, infective and recovered.  Only nonzero degrees
are stored.  :class:`AsymptoticParams` holds the limiting parameters (vertex
fractions, susceptible degree law, mean-degree contributions and rates) that
drive the deterministic limit and the branching approximation.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "ProfileError",
    "DegreeProfile",
    "AsymptoticParams",
    "ConditionStatus",
    "RegularityReport",
    "build_profile",
    "seed_infectives",
    "extract_params",
    "params_from_distribution",
    "truncated_pmf",
    "validate_regularity",
    "read_profile",
    "write_profile",
]


class ProfileError(ValueError):
    """Raised for impossible or malformed degree profiles."""


def _clean(counts: Mapping[int, int] | None, label: str) -> dict[int, int]:
    out: dict[int, int] = {}
    for k, c in (counts or {}).items():
        k, c_int = int(k), int(c)
        if c_int != c:
            raise ProfileError(f"{label}[{k}] = {c!r} is not an integer")
        if k < 0:
            raise ProfileError(f"{label} has negative degree {k}")
        if c_int < 0:
            raise ProfileError(f"{label}[{k}] = {c_int} is negative")
        if c_int:
            out[k] = out.get(k, 0) + c_int
    return dict(sorted(out.items()))


@dataclass(frozen=True)
class DegreeProfile:
    """Per-degree counts of initially susceptible, infective and recovered vertices."""

    n_s_by_degree: dict[int, int] = field(default_factory=dict)
    n_i_by_degree: dict[int, int] = field(default_factory=dict)
    n_r_by_degree: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "n_s_by_degree", _clean(self.n_s_by_degree, "ns"))
        object.__setattr__(self, "n_i_by_degree", _clean(self.n_i_by_degree, "ni"))
        object.__setattr__(self, "n_r_by_degree", _clean(self.n_r_by_degree, "nr"))
        if self.half_edges % 2:
            raise ProfileError(
                f"half-edge total {self.half_edges} is odd; no perfect matching exists"
            )

    @property
    def n_s(self) -> int:
        return sum(self.n_s_by_degree.values())

    @property
    def n_i(self) -> int:
        return sum(self.n_i_by_degree.values())

    @property
    def n_r(self) -> int:
        return sum(self.n_r_by_degree.values())

    @property
    def n(self) -> int:
        return self.n_s + self.n_i + self.n_r

    @property
    def xs0(self) -> int:
        return sum(k * c for k, c in self.n_s_by_degree.items())

    @property
    def xi0(self) -> int:
        return sum(k * c for k, c in self.n_i_by_degree.items())

    @property
    def xr0(self) -> int:
        return sum(k * c for k, c in self.n_r_by_degree.items())

    @property
    def half_edges(self) -> int:
        return self.xs0 + self.xi0 + self.xr0

    @property
    def degrees(self) -> list[int]:
        return sorted(set(self.n_s_by_degree) | set(self.n_i_by_degree) | set(self.n_r_by_degree))

    def n_by_degree(self) -> dict[int, int]:
        return {
            k: self.n_s_by_degree.get(k, 0) + self.n_i_by_degree.get(k, 0) + self.n_r_by_degree.get(k, 0)
            for k in self.degrees
        }

    def vertex_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(degree, status)`` arrays with one entry per vertex.

        Vertices are laid out susceptible first, then infective, then
        recovered, each block in increasing degree.  Status codes are
        0 = susceptible, 1 = infective, 2 = recovered.
        """
        degree = np.empty(self.n, dtype=np.int64)
        status = np.empty(self.n, dtype=np.int8)
        pos = 0
        for code, table in enumerate((self.n_s_by_degree, self.n_i_by_degree, self.n_r_by_degree)):
            for k, c in table.items():
                degree[pos:pos + c] = k
                status[pos:pos + c] = code
                pos += c
        return degree, status


def build_profile(
    n: int | None = None,
    pk: Mapping[int, float] | None = None,
    alpha_s: float = 1.0,
    alpha_i: float = 0.0,
    alpha_r: float = 0.0,
    rounding: str = "nearest",
    *,
    ns: Mapping[int, int] | None = None,
    ni: Mapping[int, int] | None = None,
    nr: Mapping[int, int] | None = None,
) -> DegreeProfile:
    """Build a profile from explicit counts or from a target degree law.

    Explicit mode: pass any of ``ns``, ``ni``, ``nr`` (degree -> count).

    Target mode: pass ``n`` and ``pk``; each class gets ``round(n * alpha * p_k)``
    vertices of degree ``k``.  If the half-edge total comes out odd, the
    susceptible bucket with the largest odd degree loses one vertex; when no
    such bucket exists a degree-1 recovered vertex is added instead.
    """
    if ns is not None or ni is not None or nr is not None:
        if pk is not None:
            raise ProfileError("give either explicit counts or (n, pk), not both")
        return DegreeProfile(dict(ns or {}), dict(ni or {}), dict(nr or {}))

    if n is None or pk is None:
        raise ProfileError("target mode needs both n and pk")
    if n < 0:
        raise ProfileError(f"n = {n} is negative")
    alphas = (alpha_s, alpha_i, alpha_r)
    if min(alphas) < 0 or abs(sum(alphas) - 1.0) > 1e-9:
        raise ProfileError(f"alpha fractions {alphas} must be nonnegative and sum to 1")
    if any(p < 0 for p in pk.values()) or abs(sum(pk.values()) - 1.0) > 1e-9:
        raise ProfileError("pk must be a probability distribution")
    rnd: Callable[[float], int]
    if rounding == "nearest":
        rnd = lambda x: int(math.floor(x + 0.5))
    elif rounding == "floor":
        rnd = lambda x: int(math.floor(x + 1e-9))
    else:
        raise ProfileError(f"unknown rounding rule {rounding!r}")

    tables = [
        {int(k): rnd(n * a * p) for k, p in pk.items()} for a in alphas
    ]
    total = sum(k * c for t in tables for k, c in t.items())
    if total % 2:
        odd = [k for k, c in tables[0].items() if k % 2 == 1 and c > 0]
        if odd:
            tables[0][max(odd)] -= 1
        else:
            tables[2][1] = tables[2].get(1, 0) + 1
    return DegreeProfile(*tables)


def seed_infectives(profile: DegreeProfile, seeds: Mapping[int, int]) -> DegreeProfile:
    """Turn ``seeds[k]`` susceptible vertices of degree ``k`` into infectives.

    Vertex count and half-edge parity are unchanged.
    """
    ns = dict(profile.n_s_by_degree)
    ni = dict(profile.n_i_by_degree)
    for k, m in seeds.items():
        have = ns.get(k, 0)
        if m > have:
            raise ProfileError(f"cannot seed {m} infectives of degree {k}: only {have} susceptible")
        ns[k] = have - m
        ni[k] = ni.get(k, 0) + m
    return DegreeProfile(ns, ni, dict(profile.n_r_by_degree))


@dataclass(frozen=True)
class AsymptoticParams:
    """Limiting parameters of a degree sequence plus the epidemic rates.

    ``degrees``/``pk`` give the degree law of a random initially susceptible
    vertex (sparse, increasing degrees).
    """

    alpha_s: float
    alpha_i: float
    alpha_r: float
    degrees: np.ndarray
    pk: np.ndarray
    mu_s: float
    mu_i: float
    mu_r: float
    beta: float
    rho: float
    tail_mass: float = 0.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ProfileError(f"beta must be positive, got {self.beta}")
        if not self.rho >= 0:
            raise ProfileError(f"rho must be nonnegative, got {self.rho}")
        object.__setattr__(self, "degrees", np.asarray(self.degrees, dtype=np.int64))
        object.__setattr__(self, "pk", np.asarray(self.pk, dtype=float))

    @property
    def lam(self) -> float:
        return float(np.dot(self.degrees, self.pk))

    @property
    def mu(self) -> float:
        return self.mu_s + self.mu_i + self.mu_r

    @property
    def ratio(self) -> float:
        """rho / beta."""
        return self.rho / self.beta

    def p(self, k: int) -> float:
        idx = np.searchsorted(self.degrees, k)
        if idx < len(self.degrees) and self.degrees[idx] == k:
            return float(self.pk[idx])
        return 0.0

    def small_seed_limit(self) -> "AsymptoticParams":
        """Parameters of the same population with the infectives removed.

        Used for the small-seed regime (``alpha_I = mu_I = 0``) when the
        finite instance carries a handful of seeds.
        """
        rest = self.alpha_s + self.alpha_r
        if rest <= 0:
            raise ProfileError("no susceptible or recovered vertices left")
        a_s = self.alpha_s / rest
        return replace(
            self,
            alpha_s=a_s,
            alpha_i=0.0,
            alpha_r=self.alpha_r / rest,
            mu_s=a_s * self.lam,
            mu_i=0.0,
            mu_r=self.mu_r / rest,
        )

    def with_rates(self, beta: float, rho: float) -> "AsymptoticParams":
        return replace(self, beta=beta, rho=rho)

    def to_dict(self) -> dict:
        return {
            "alpha_s": self.alpha_s,
            "alpha_i": self.alpha_i,
            "alpha_r": self.alpha_r,
            "pk": {int(k): float(p) for k, p in zip(self.degrees, self.pk)},
            "lambda": self.lam,
            "mu": self.mu,
            "mu_s": self.mu_s,
            "mu_i": self.mu_i,
            "mu_r": self.mu_r,
            "beta": self.beta,
            "rho": self.rho,
        }


def extract_params(profile: DegreeProfile, beta: float, rho: float) -> AsymptoticParams:
    """Exact finite-n parameters of ``profile``."""
    n_s = profile.n_s
    if n_s == 0:
        raise ProfileError("no susceptible vertices: alpha_S must be positive")
    n = profile.n
    degrees = np.array(list(profile.n_s_by_degree), dtype=np.int64)
    counts = np.array(list(profile.n_s_by_degree.values()), dtype=float)
    return AsymptoticParams(
        alpha_s=n_s / n,
        alpha_i=profile.n_i / n,
        alpha_r=profile.n_r / n,
        degrees=degrees,
        pk=counts / n_s,
        mu_s=profile.xs0 / n,
        mu_i=profile.xi0 / n,
        mu_r=profile.xr0 / n,
        beta=beta,
        rho=rho,
    )


def truncated_pmf(pmf: Callable[[int], float], tail_tol: float = 1e-12, k_max: int = 100_000):
    """Tabulate an analytic degree law up to the smallest ``K`` with a small tail.

    ``K`` is the smallest degree for which ``sum_{k>K} k^2 p_k < tail_tol``;
    the tail is estimated from the tabulated mass and second moment, so the
    pmf must have a finite second moment.  Returns ``(degrees, pk, tail_mass)``
    with ``pk`` renormalised and ``tail_mass`` the discarded probability.
    """
    ks = []
    ps = []
    mass = 0.0
    for k in range(k_max + 1):
        p = float(pmf(k))
        ks.append(k)
        ps.append(p)
        mass += p
        # remaining second moment is bounded via the lookahead terms below
        if k >= 2 and mass > 1 - 1e-3:
            tail = 0.0
            j = k + 1
            while True:
                t = j * j * float(pmf(j))
                tail += t
                if t < tail_tol * 1e-3 or j > k_max:
                    break
                j += 1
            if tail < tail_tol:
                break
    else:
        raise ProfileError(f"tail condition not met by k_max = {k_max}")
    pk = np.array(ps)
    keep = pk > 0
    tail_mass = max(0.0, 1.0 - pk.sum())
    return np.array(ks)[keep], pk[keep] / pk.sum(), tail_mass


def params_from_distribution(
    pk: Mapping[int, float] | tuple[np.ndarray, np.ndarray],
    beta: float,
    rho: float,
    alpha_s: float = 1.0,
    alpha_i: float = 0.0,
    alpha_r: float = 0.0,
    mu_i: float = 0.0,
    mu_r: float = 0.0,
    tail_mass: float = 0.0,
) -> AsymptoticParams:
    """Asymptotic parameters from a target degree law; ``mu_S = alpha_S * lambda``."""
    if isinstance(pk, tuple):
        degrees, probs = (np.asarray(a) for a in pk)
    else:
        items = sorted((int(k), float(p)) for k, p in pk.items() if p > 0)
        degrees = np.array([k for k, _ in items], dtype=np.int64)
        probs = np.array([p for _, p in items])
    if abs(alpha_s + alpha_i + alpha_r - 1.0) > 1e-9:
        raise ProfileError("alpha fractions must sum to 1")
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ProfileError("pk must sum to 1")
    lam = float(np.dot(degrees, probs))
    return AsymptoticParams(
        alpha_s=alpha_s,
        alpha_i=alpha_i,
        alpha_r=alpha_r,
        degrees=degrees,
        pk=probs,
        mu_s=alpha_s * lam,
        mu_i=mu_i,
        mu_r=mu_r,
        beta=beta,
        rho=rho,
        tail_mass=tail_mass,
    )


@dataclass(frozen=True)
class ConditionStatus:
    name: str
    ok: bool
    value: float
    message: str = ""

    @property
    def status(self) -> str:
        return "pass" if self.ok else "warn"


@dataclass(frozen=True)
class RegularityReport:
    conditions: dict[str, ConditionStatus]
    second_moment_ratio: float
    max_infective_degree: int

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.conditions.values())

    def warnings(self) -> list[ConditionStatus]:
        return [c for c in self.conditions.values() if not c.ok]


def validate_regularity(
    profile: DegreeProfile,
    params: AsymptoticParams,
    d5_exponent: float = 0.75,
    g1_threshold: float = 100.0,
    tail_exponent: float = 0.75,
) -> RegularityReport:
    """Finite-n diagnostics for the degree-sequence conditions D1-D6 and G1.

    These conditions constrain sequences of instances, so nothing here raises;
    each condition is reported as pass or warn with a numeric diagnostic.
    """
    n = max(profile.n, 1)
    nk = profile.n_by_degree()
    second = sum(k * k * c for k, c in nk.items()) / n
    max_i = max(profile.n_i_by_degree, default=0)
    max_s = max(profile.n_s_by_degree, default=0)
    p1 = params.p(1)
    lam = params.lam

    conds = [
        ConditionStatus("D1", params.alpha_s > 0, params.alpha_s,
                        "" if params.alpha_s > 0 else "no susceptible vertices"),
        ConditionStatus("D2", 0 < lam < math.inf, lam,
                        "" if lam > 0 else "susceptible degree law has zero mean"),
        ConditionStatus("D3", max_s <= n ** tail_exponent, float(max_s),
                        "" if max_s <= n ** tail_exponent
                        else f"max susceptible degree {max_s} > n^{tail_exponent}"),
        ConditionStatus("D4", params.mu > 0, params.mu,
                        "" if params.mu > 0 else "mean degree is zero"),
        ConditionStatus("D5", max_i <= n ** d5_exponent, float(max_i),
                        "" if max_i <= n ** d5_exponent
                        else f"max infective degree {max_i} > n^{d5_exponent}"),
        ConditionStatus("D6", p1 > 0 or params.rho > 0 or params.mu_r > 0,
                        p1 + params.rho + params.mu_r,
                        "" if (p1 > 0 or params.rho > 0 or params.mu_r > 0)
                        else "p_1 = 0, rho = 0 and mu_R = 0"),
        ConditionStatus("G1", second <= g1_threshold, second,
                        "" if second <= g1_threshold
                        else f"sum k^2 n_k / n = {second:.4g} exceeds {g1_threshold}"),
    ]
    return RegularityReport({c.name: c for c in conds}, second, max_i)


PROFILE_HEADER = ["degree", "ns", "ni", "nr"]


def write_profile(profile: DegreeProfile, path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PROFILE_HEADER)
    for k in profile.degrees:
        w.writerow([k, profile.n_s_by_degree.get(k, 0), profile.n_i_by_degree.get(k, 0),
                    profile.n_r_by_degree.get(k, 0)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    return text


def read_profile(source: str | Path) -> DegreeProfile:
    """Read a ``degree,ns,ni,nr`` table from a path or from literal text."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [h.strip() for h in rows[0]] != PROFILE_HEADER:
        raise ProfileError(f"profile header must be {','.join(PROFILE_HEADER)}")
    ns, ni, nr = {}, {}, {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 4:
            raise ProfileError(f"line {lineno}: expected 4 fields, got {len(row)}")
        try:
            k, s, i, r = (int(x) for x in row)
        except ValueError as exc:
            raise ProfileError(f"line {lineno}: {exc}") from None
        ns[k], ni[k], nr[k] = ns.get(k, 0) + s, ni.get(k, 0) + i, nr.get(k, 0) + r
    return DegreeProfile(ns, ni, nr)
