"""Deterministic large-population limit of the epidemic.

Everything is expressed through ``theta``, the limiting probability that an
initially susceptible half-edge is still unpaired.  ``theta_t`` decreases from
1 (or from ``vS^{-1}(s0)`` in the shifted regime) to ``theta_inf``, the root of
``h_I`` in (0, 1).

The primary integrator builds the time map ``A(tau) = int dsigma /
(beta * p_I(exp(-sigma)))`` by adaptive quadrature and inverts it; the
integrand blows up like ``1/u`` at both ends, so those ends are handled with
the local logarithmic asymptotics instead of quadrature.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import integrate, interpolate, optimize

from .degree_model import AsymptoticParams

__all__ = [
    "LimitError",
    "SubcriticalError",
    "DegenerateError",
    "LimitValues",
    "LimitSolution",
    "eval_limit_functions",
    "compute_R0",
    "solve_theta_inf",
    "vS_inverse",
    "integrate_theta",
    "solve_iv",
    "solve_limit",
    "default_s0",
    "volz_residual",
    "volz_rhs",
]


class LimitError(ValueError):
    pass


class SubcriticalError(LimitError):
    """No interior root of h_I: R0 <= 1 with mu_I = 0."""


class DegenerateError(LimitError):
    """h vanishes identically or at 0 (p_1 = rho = mu_R = 0)."""


class LimitValues(NamedTuple):
    vS: np.ndarray
    hS: np.ndarray
    hX: np.ndarray
    hR: np.ndarray
    hI: np.ndarray
    pI: np.ndarray
    pS: np.ndarray
    gS: np.ndarray


def _theta(theta) -> np.ndarray:
    th = np.asarray(theta, dtype=float)
    if np.any(th < 0) or np.any(th > 1) or np.any(np.isnan(th)):
        raise LimitError("theta must lie in [0, 1]")
    return th


def _moments(params: AsymptoticParams, th: np.ndarray):
    """g_S, theta*g_S', theta^2*g_S'', theta^3*g_S''' evaluated at theta."""
    k = params.degrees.astype(float)
    p = params.pk
    pw = np.power(th[..., None], k)
    g = pw @ p
    g1 = pw @ (k * p)
    g2 = pw @ (k * (k - 1) * p)
    g3 = pw @ (k * (k - 1) * (k - 2) * p)
    return g, g1, g2, g3


def eval_limit_functions(params: AsymptoticParams, theta) -> LimitValues:
    """All limit functions at ``theta``; ``pI``/``pS`` are NaN at theta = 0."""
    th = _theta(theta)
    g, tg1, _, _ = _moments(params, th)
    a = params.alpha_s
    vS = a * g
    hS = a * tg1
    hX = params.mu * th ** 2
    hR = params.mu_r * th + params.mu * params.ratio * th * (1 - th)
    hI = hX - hS - hR
    with np.errstate(divide="ignore", invalid="ignore"):
        pI = np.where(th > 0, hI / hX, np.nan)
        pS = np.where(th > 0, hS / hX, np.nan)
    return LimitValues(vS, hS, hX, hR, hI, pI, pS, g)


def _hI(params, th):
    th = np.asarray(th, dtype=float)
    _, tg1, _, _ = _moments(params, th)
    return (params.mu * th ** 2 - params.alpha_s * tg1 - params.mu_r * th
            - params.mu * params.ratio * th * (1 - th))


def _h(params, th):
    """h_I(theta) / theta, written out so that theta = 0 is fine."""
    th = np.asarray(th, dtype=float)
    k = params.degrees.astype(float)
    pos = k >= 1
    dg = np.power(th[..., None], k[pos] - 1) @ (k[pos] * params.pk[pos])
    return (params.mu * th - params.alpha_s * dg - params.mu_r
            - params.ratio * params.mu * (1 - th))


def _dhI(params, th):
    th = np.asarray(th, dtype=float)
    k = params.degrees.astype(float)
    pos = k >= 1
    d = np.power(th[..., None], k[pos] - 1) @ (k[pos] ** 2 * params.pk[pos])
    return (2 * params.mu * th - params.alpha_s * d - params.mu_r
            - params.mu * params.ratio * (1 - 2 * th))


def _pI(params, th):
    return _hI(params, th) / (params.mu * th ** 2)


def compute_R0(params: AsymptoticParams) -> float:
    k = params.degrees.astype(float)
    s = float(np.dot(k * (k - 1), params.pk))
    if not math.isfinite(s):
        return math.inf
    return params.beta / (params.rho + params.beta) * params.alpha_s / params.mu * s


def solve_theta_inf(params: AsymptoticParams, tol: float = 1e-12) -> float:
    """Unique root of h_I in (0, 1), by bisection on h_I(theta)/theta."""
    h0 = float(_h(params, 0.0))
    if h0 >= 0:
        raise DegenerateError(
            "p_1 = 0, rho = 0 and mu_R = 0: h(0) = 0, no interior root "
            "(for all-degree-2 populations h vanishes identically)"
        )
    # h(1) = mu_I; when that is lost in rounding, bracket from inside (0, 1)
    if params.mu_i > 0 and _h(params, 1.0) > 0:
        hi = 1.0
    else:
        if params.mu_i == 0 and compute_R0(params) <= 1:
            raise SubcriticalError(f"R0 = {compute_R0(params):.6g} <= 1 with mu_I = 0")
        hi = None
        for j in range(1, 60):
            cand = 1.0 - 2.0 ** -j
            if _h(params, cand) > 0:
                hi = cand
                break
        if hi is None:
            raise SubcriticalError("h has no positive values below 1")
    root = optimize.bisect(lambda x: float(_h(params, x)), 0.0, hi, xtol=1e-16, rtol=1e-15,
                           maxiter=200)
    if abs(float(_hI(params, root))) > tol:
        raise LimitError(f"root refinement failed: |h_I(theta_inf)| = {abs(_hI(params, root)):.3g}")
    return float(root)


def vS_inverse(params: AsymptoticParams, s: float, tol: float = 1e-12) -> float:
    lo_val = float(eval_limit_functions(params, 0.0).vS)
    hi_val = params.alpha_s
    if not lo_val - tol <= s <= hi_val + tol:
        raise LimitError(f"s = {s} outside [vS(0), vS(1)] = [{lo_val}, {hi_val}]")
    if s >= hi_val:
        return 1.0
    if s <= lo_val:
        return 0.0
    f = lambda x: float(eval_limit_functions(params, x).vS) - s
    return float(optimize.bisect(f, 0.0, 1.0, xtol=1e-16, rtol=1e-15, maxiter=200))


def default_s0(params: AsymptoticParams, theta_inf: float | None = None) -> float:
    if theta_inf is None:
        theta_inf = solve_theta_inf(params)
    return 0.5 * (float(eval_limit_functions(params, theta_inf).vS) + params.alpha_s)


@dataclass
class _ShiftMap:
    """Tabulated A(sigma) with exact slopes, plus logarithmic end asymptotics."""

    sigma: np.ndarray
    A: np.ndarray
    slope: np.ndarray
    t_hat_inf: float
    c_end: float
    c_start: float | None
    beta: float

    def __post_init__(self):
        self._t_of_sigma = interpolate.CubicHermiteSpline(self.sigma, self.A, self.slope)
        self._sigma_of_t = interpolate.CubicHermiteSpline(self.A, self.sigma, 1.0 / self.slope)

    def A_of(self, sigma) -> np.ndarray:
        sigma = np.asarray(sigma, dtype=float)
        out = self._t_of_sigma(np.clip(sigma, self.sigma[0], self.sigma[-1]))
        u_end = self.t_hat_inf - self.sigma[-1]
        hi = sigma > self.sigma[-1]
        if np.any(hi):
            u = np.maximum(self.t_hat_inf - sigma[hi], 1e-300)
            out[hi] = self.A[-1] + np.log(u_end / u) / (self.beta * self.c_end)
        lo = sigma < self.sigma[0]
        if np.any(lo):
            if self.c_start is None:
                raise LimitError("A is only defined for sigma >= 0 in the bulk regime")
            out[lo] = self.A[0] - np.log(self.sigma[0] / sigma[lo]) / (self.beta * self.c_start)
        return out

    def sigma_of(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = self._sigma_of_t(np.clip(t, self.A[0], self.A[-1]))
        hi = t > self.A[-1]
        if np.any(hi):
            u_end = self.t_hat_inf - self.sigma[-1]
            out[hi] = self.t_hat_inf - u_end * np.exp(-self.beta * self.c_end * (t[hi] - self.A[-1]))
        lo = t < self.A[0]
        if np.any(lo):
            if self.c_start is None:
                out[lo] = np.nan
            else:
                out[lo] = self.sigma[0] * np.exp(self.beta * self.c_start * (t[lo] - self.A[0]))
        return out


def _pI_scalar(params):
    """Fast scalar p_I for the quadrature integrand."""
    k = params.degrees.astype(float)
    kp = params.alpha_s * k * params.pk
    mu, mu_r, ratio = params.mu, params.mu_r, params.ratio

    def f(th):
        hS = float(np.dot(kp, th ** k))
        hX = mu * th * th
        return (hX - hS - mu_r * th - mu * ratio * th * (1 - th)) / hX

    return f


def _build_shift_map(params, theta_inf, sigma0, shifted, max_dt, edge=1e-8):
    beta = params.beta
    T = -math.log(theta_inf)
    pI = _pI_scalar(params)
    integrand = lambda s: 1.0 / (beta * pI(math.exp(-s)))
    c_end = float(_dhI(params, theta_inf)) / (params.mu * theta_inf)
    if shifted:
        c_start = -float(_dhI(params, 1.0)) / params.mu
        head = np.geomspace(edge * T, 0.25 * T, 40)
    else:
        c_start = None
        head = np.array([0.0])
    tail = T - np.geomspace(0.25 * T, edge * T, 40)
    mid = np.linspace(head[-1], tail[0], 50)
    nodes = np.unique(np.concatenate([head, mid, tail]))

    def segment(a, b):
        # near the ends h_I carries ~1e-16 cancellation error, so quad may
        # report roundoff; accuracy is audited by the ODE cross-check instead
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, _ = integrate.quad(integrand, a, b, epsabs=1e-13, epsrel=1e-11, limit=200)
        return val

    # split segments until each spans at most max_dt of real time
    done_nodes = [nodes[0]]
    done = []
    todo = list(zip(nodes[:-1], nodes[1:]))[::-1]
    while todo:
        a, b = todo.pop()
        v = segment(a, b)
        if v > max_dt:
            parts = np.linspace(a, b, 2 + int(v // max_dt))
            todo.extend(list(zip(parts[:-1], parts[1:]))[::-1])
        else:
            done.append(v)
            done_nodes.append(b)
    nodes = np.array(done_nodes)
    pieces = done

    A = np.concatenate([[0.0], np.cumsum(pieces)])
    slope = np.array([integrand(s) for s in nodes])
    if shifted:
        # anchor A(sigma0) = 0
        j = int(np.searchsorted(nodes, sigma0)) - 1
        j = min(max(j, 0), len(nodes) - 2)
        A = A - (A[j] + segment(nodes[j], sigma0))
    return _ShiftMap(nodes, A, slope, T, c_end, c_start, beta)


@dataclass
class LimitSolution:
    """The limit functions tabulated on a uniform time grid."""

    params: AsymptoticParams
    regime: str
    theta_inf: float
    R0: float
    s0: float | None
    t: np.ndarray
    theta: np.ndarray
    vS: np.ndarray
    iv: np.ndarray
    rv: np.ndarray
    hS: np.ndarray
    hI: np.ndarray
    hR: np.ndarray
    hX: np.ndarray
    pI: np.ndarray
    pS: np.ndarray
    shift_map: _ShiftMap | None = None
    ode_theta: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def t_hat_inf(self) -> float:
        return -math.log(self.theta_inf)

    @property
    def tau0(self) -> float | None:
        return None if self.s0 is None else -math.log(vS_inverse(self.params, self.s0))

    @property
    def final_susceptible(self) -> float:
        return float(eval_limit_functions(self.params, self.theta_inf).vS)

    @property
    def cross_check_error(self) -> float:
        if self.ode_theta is None:
            return float("nan")
        return float(np.max(np.abs(self.ode_theta - self.theta)))

    def theta_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.shift_map is None:
            return np.interp(t, self.t, self.theta)
        return np.exp(-self.shift_map.sigma_of(t))

    def summary(self) -> dict:
        return {
            "regime": self.regime,
            "R0": self.R0,
            "theta_inf": self.theta_inf,
            "final_susceptible_fraction": self.final_susceptible,
            "s0": self.s0,
            "t_hat_inf": self.t_hat_inf,
            "horizon": [float(self.t[0]), float(self.t[-1])],
            "cross_check_error": self.cross_check_error,
        }

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "theta", "vS", "i", "r", "hS", "hI", "hR", "hX", "pI", "pS"])
        cols = (self.t, self.theta, self.vS, self.iv, self.rv, self.hS, self.hI, self.hR,
                self.hX, self.pI, self.pS)
        for row in zip(*cols):
            w.writerow([f"{x:.12g}" for x in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="\n")
        return text


def _ode_theta(params, t_grid, theta0):
    beta = params.beta
    rhs = lambda t, y: -beta * y * _pI(params, y)
    out = np.empty_like(t_grid)
    fwd = t_grid >= 0
    kw = dict(method="DOP853", rtol=1e-12, atol=1e-14, dense_output=True)
    if np.any(fwd):
        sol = integrate.solve_ivp(rhs, (0.0, max(t_grid[fwd].max(), 1e-12)), [theta0], **kw)
        out[fwd] = sol.sol(t_grid[fwd])[0]
    if np.any(~fwd):
        sol = integrate.solve_ivp(rhs, (0.0, t_grid[~fwd].min()), [theta0], **kw)
        out[~fwd] = sol.sol(t_grid[~fwd])[0]
    return out


def integrate_theta(
    params: AsymptoticParams,
    regime: str = "bulk",
    s0: float | None = None,
    horizon: tuple[float, float] | float | None = None,
    dt: float | None = None,
    tol: float = 1e-10,
    cross_check: bool = True,
):
    """theta_t on a uniform grid, plus the tabulated time map.

    ``regime="bulk"`` needs mu_I > 0 and starts from theta_0 = 1 at t = 0.
    ``regime="shifted"`` needs mu_I = 0 and R0 > 1; theta_0 = vS^{-1}(s0) and
    the grid is two-sided.  ``horizon`` is ``t_max`` or ``(t_min, t_max)``;
    by default the grid runs until theta is within ``tol`` of its end values.
    Returns ``(t, theta, shift_map, theta_inf, s0, ode_theta)``.
    """
    beta = params.beta
    theta_inf = solve_theta_inf(params)
    if regime == "bulk":
        if not params.mu_i > 0:
            raise LimitError("bulk regime needs mu_I > 0")
        theta0 = 1.0
        s0 = None
        shifted = False
    elif regime == "shifted":
        if params.mu_i != 0:
            raise LimitError("shifted regime needs mu_I = 0 (see AsymptoticParams.small_seed_limit)")
        lo, hi = float(eval_limit_functions(params, theta_inf).vS), params.alpha_s
        if s0 is None:
            s0 = 0.5 * (lo + hi)
        if not lo < s0 < hi:
            raise LimitError(f"s0 = {s0} must lie in (vS(theta_inf), vS(1)) = ({lo}, {hi})")
        theta0 = vS_inverse(params, s0)
        shifted = True
    else:
        raise LimitError(f"unknown regime {regime!r}")

    span_guess = 1.0 / beta
    max_dt = 0.05 * span_guess
    smap = _build_shift_map(params, theta_inf, -math.log(theta0), shifted, max_dt)
    T = smap.t_hat_inf
    # real time at which theta - theta_inf (resp. 1 - theta) drops below tol
    u_end = T - smap.sigma[-1]
    u_tol = tol / theta_inf
    t_end = smap.A[-1] + max(0.0, math.log(u_end / u_tol)) / (beta * smap.c_end)
    if params.rho > 0:
        t_end += math.log(1e6) / params.rho
    if shifted:
        t_start = smap.A[0] - max(0.0, math.log(smap.sigma[0] / tol)) / (beta * smap.c_start)
    else:
        t_start = 0.0
    if horizon is not None:
        if isinstance(horizon, (tuple, list)):
            t_start, t_end = float(horizon[0]), float(horizon[1])
        else:
            t_end = float(horizon)
        if not shifted:
            t_start = max(t_start, 0.0)
    if dt is None:
        dt = min(0.01 / beta, (t_end - t_start) / 2000)
    num = int(math.ceil((t_end - t_start) / dt))
    t = t_start + dt * np.arange(num + 1)
    if shifted and t_start < 0 < t_end:
        # keep t = 0 (the calibration point) on the grid
        t = t - t[np.argmin(np.abs(t))]
        t = t[(t >= t_start - 1e-12) & (t <= t_end + dt)]
    theta = np.exp(-smap.sigma_of(t))
    ode = _ode_theta(params, t, theta0) if cross_check else None
    return t, theta, smap, theta_inf, s0, ode


def _infection_rate(params, theta):
    vals = eval_limit_functions(params, theta)
    return params.beta * vals.hI * vals.hS / vals.hX


def solve_iv(params: AsymptoticParams, t: np.ndarray, theta_at, regime: str = "bulk"):
    """i(t) and r(t) on the grid ``t``.

    ``theta_at`` evaluates theta at arbitrary times (midpoints are needed for
    Simpson's rule with the exact exponential weights).
    """
    rho = params.rho
    dt = np.diff(t)
    F = _infection_rate(params, np.asarray(theta_at(t)))
    Fm = _infection_rate(params, np.asarray(theta_at(t[:-1] + dt / 2)))
    iv = np.empty_like(t)
    theta0 = float(np.asarray(theta_at(t[:1]))[0])
    if regime == "bulk":
        iv[0] = params.alpha_i
    else:
        # mass infected before the grid starts; recoveries there are negligible
        iv[0] = params.alpha_s - float(eval_limit_functions(params, theta0).vS)
    decay = np.exp(-rho * dt)
    half = np.exp(-rho * dt / 2)
    incr = dt / 6 * (F[:-1] * decay + 4 * Fm * half + F[1:])
    for j in range(len(dt)):
        iv[j + 1] = iv[j] * decay[j] + incr[j]
    vS = eval_limit_functions(params, np.asarray(theta_at(t))).vS
    rv = 1.0 - vS - iv
    return iv, rv


def solve_limit(
    params: AsymptoticParams,
    regime: str = "auto",
    s0: float | None = None,
    horizon=None,
    dt: float | None = None,
    cross_check: bool = True,
) -> LimitSolution:
    """Full limit: theta_t, vS, i, r and the half-edge functions on one grid."""
    if regime == "auto":
        regime = "bulk" if params.mu_i > 0 else "shifted"
    t, theta, smap, theta_inf, s0, ode = integrate_theta(
        params, regime, s0, horizon, dt, cross_check=cross_check)
    theta_at = lambda tt: np.exp(-smap.sigma_of(tt))
    iv, rv = solve_iv(params, t, theta_at, regime)
    vals = eval_limit_functions(params, theta)
    return LimitSolution(
        params=params, regime=regime, theta_inf=theta_inf, R0=compute_R0(params), s0=s0,
        t=t, theta=theta, vS=vals.vS, iv=iv, rv=rv, hS=vals.hS, hI=vals.hI, hR=vals.hR,
        hX=vals.hX, pI=vals.pI, pS=vals.pS, shift_map=smap, ode_theta=ode,
    )


def volz_rhs(params: AsymptoticParams, theta) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand sides of the Volz equations for d p_I/dt and d p_S/dt."""
    th = np.asarray(theta, dtype=float)
    beta, rho = params.beta, params.rho
    vals = eval_limit_functions(params, th)
    _, tg1, t2g2, _ = _moments(params, th)
    # theta * gS''/gS' = (theta^2 gS'') / (theta gS')
    ratio = t2g2 / tg1
    pI, pS = vals.pI, vals.pS
    dpI = pI * (-(rho + beta) + beta * pI + beta * pS * ratio)
    dpS = beta * pI * pS * (1 - ratio)
    return dpI, dpS


def volz_residual(solution: LimitSolution, delta: float = 1e-6) -> float:
    """Max |finite-difference derivative - Volz right-hand side| along the grid.

    Grid points with theta within ``delta`` of theta_inf are skipped.
    """
    t, theta = solution.t, solution.theta
    params = solution.params
    vals = eval_limit_functions(params, theta)
    if len(t) < 3:
        return 0.0
    dpI = np.gradient(vals.pI, t, edge_order=2)
    dpS = np.gradient(vals.pS, t, edge_order=2)
    rI, rS = volz_rhs(params, theta)
    keep = theta >= solution.theta_inf + delta
    if not np.any(keep):
        return 0.0
    return float(max(np.max(np.abs(dpI - rI)[keep]), np.max(np.abs(dpS - rS)[keep])))
