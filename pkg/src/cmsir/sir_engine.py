"""Exact stochastic simulation of SIR on configuration-model (multi)graphs.

Half-edges are paired on demand: each free infective half-edge fires at rate
``beta`` and joins a uniformly chosen other free half-edge; infective vertices
recover at rate ``rho``.  The run stops once no free infective half-edge is
left.  A pregenerated matching can be supplied instead, in which case firing
reveals the pre-assigned partner.

The same kernel runs in the time-changed clock, where every rate out of a
state with ``x`` free half-edges (``x_I`` of them infective) is multiplied by
``(x - 1) / (beta * x_I)``; the additive functional ``A`` mapping that clock
back to real time is accumulated along the way.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from numba import njit

from .config_graph import HalfEdgeSystem, half_edge_layout, pair_configuration, sample_simple
from .degree_model import DegreeProfile, ProfileError

__all__ = [
    "INFECTION",
    "RECOVERY",
    "IN_GROUP",
    "TO_RECOVERED",
    "EVENT_NAMES",
    "Trajectory",
    "run_epidemic",
    "run_time_changed",
    "invert_time_change",
    "detect_T0",
    "run_colored",
]

START = -1
INFECTION = 0
RECOVERY = 1
IN_GROUP = 2
TO_RECOVERED = 3
EVENT_NAMES = {START: "start", INFECTION: "infection", RECOVERY: "recovery",
               IN_GROUP: "in-group pairing", TO_RECOVERED: "pairing-to-recovered"}

SUSC, INF, REC = 0, 1, 2


@dataclass
class Trajectory:
    """Event-by-event record of one epidemic realisation.

    Row 0 is the initial state.  ``time`` is in the clock named by ``clock``;
    time-changed runs also carry ``A`` (the real time of every event).
    Counts are step functions: the value in row ``j`` holds on
    ``[time[j], time[j + 1])``.
    """

    clock: str
    n: int
    time: np.ndarray
    S: np.ndarray
    I: np.ndarray
    R: np.ndarray
    XS: np.ndarray
    XI: np.ndarray
    XR: np.ndarray
    kind: np.ndarray
    vertex: np.ndarray
    degree: np.ndarray
    tau_star: Optional[float] = None
    A: Optional[np.ndarray] = None
    Z: Optional[np.ndarray] = None
    partner: Optional[np.ndarray] = None
    seed: Optional[int] = None
    truncated: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def X(self) -> np.ndarray:
        return self.XS + self.XI + self.XR

    @property
    def num_events(self) -> int:
        return len(self.time) - 1

    @property
    def S_final(self) -> int:
        return int(self.S[-1])

    @property
    def total_infected(self) -> int:
        """Vertices ever infective, initial infectives included."""
        return int(self.I[0] + self.S[0] - self.S[-1])

    @property
    def end_time(self) -> float:
        return float(self.time[-1])

    def check(self) -> None:
        """Assert the conservation and monotonicity invariants on every row."""
        assert np.all(self.S + self.I + self.R == self.n)
        assert np.all(np.diff(self.S) <= 0)
        assert np.all(np.diff(self.R) >= 0)
        assert np.all(np.diff(self.XS) <= 0)
        assert np.all(np.diff(self.time) >= 0)
        X = self.X
        pairing = np.isin(self.kind[1:], (INFECTION, IN_GROUP, TO_RECOVERED))
        dX = np.diff(X)
        assert np.all(dX[pairing] == -2)
        assert np.all(dX[~pairing] == 0)
        assert np.all(X % 2 == X[0] % 2)
        if not self.truncated and not self.meta.get("post_recoveries"):
            assert self.XI[-1] == 0

    def at(self, t) -> dict:
        """Step-function values of the counts at time(s) ``t``."""
        idx = np.searchsorted(self.time, np.asarray(t), side="right") - 1
        idx = np.clip(idx, 0, len(self.time) - 1)
        return {name: getattr(self, name)[idx] for name in ("S", "I", "R", "XS", "XI", "XR")}


@njit(cache=True, nogil=True)
def _simulate(rng, degree, status0, offset, owner, pre_partner, beta, rho,
              time_changed, tau_horizon, post_recoveries):
    n = degree.shape[0]
    m = owner.shape[0]
    use_pre = pre_partner.shape[0] == m and m > 0

    vstat = status0.copy()
    partner = np.full(m, -1, dtype=np.int64)

    fpool = np.arange(m)
    fpos = np.arange(m)
    X = m
    ipool = np.empty(m, dtype=np.int64)
    ipos = np.full(m, -1, dtype=np.int64)
    XI = 0
    vpool = np.empty(n, dtype=np.int64)
    vpos = np.full(n, -1, dtype=np.int64)
    I = 0
    S = 0
    XS = 0
    XR = 0
    for v in range(n):
        d = degree[v]
        if vstat[v] == 0:
            S += 1
            XS += d
        elif vstat[v] == 1:
            vpool[I] = v
            vpos[v] = I
            I += 1
            for h in range(offset[v], offset[v + 1]):
                ipool[XI] = h
                ipos[h] = XI
                XI += 1
        else:
            XR += d
    R = n - S - I

    cap = m // 2 + n + 2
    t_rec = np.empty(cap)
    tau_rec = np.empty(cap)
    rows = np.empty((cap, 9), dtype=np.int64)

    t = 0.0
    tau = 0.0
    A = 0.0
    k = 0
    t_rec[0] = 0.0
    tau_rec[0] = 0.0
    rows[0, 0] = S; rows[0, 1] = I; rows[0, 2] = R
    rows[0, 3] = XS; rows[0, 4] = XI; rows[0, 5] = XR
    rows[0, 6] = -1; rows[0, 7] = -1; rows[0, 8] = -1
    truncated = False

    while XI > 0:
        pair_rate = beta * XI
        total = pair_rate + rho * I
        e = rng.exponential(1.0)
        if time_changed:
            f = (X - 1) / (beta * XI)
            dtau = e / (total * f)
            if tau + dtau > tau_horizon:
                truncated = True
                A += (tau_horizon - tau) * f
                tau = tau_horizon
                break
            tau += dtau
            A += dtau * f
            t = A
        else:
            t += e / total

        if rng.random() * total < pair_rate:
            # the firing free infective half-edge
            j = rng.integers(0, XI)
            h = ipool[j]
            last = ipool[XI - 1]
            ipool[j] = last
            ipos[last] = j
            ipos[h] = -1
            XI -= 1
            p = fpos[h]
            last = fpool[X - 1]
            fpool[p] = last
            fpos[last] = p
            fpos[h] = -1
            X -= 1
            if use_pre:
                g = pre_partner[h]
            else:
                g = fpool[rng.integers(0, X)]
            p = fpos[g]
            last = fpool[X - 1]
            fpool[p] = last
            fpos[last] = p
            fpos[g] = -1
            X -= 1
            partner[h] = g
            partner[g] = h
            w = owner[g]
            st = vstat[w]
            if st == 0:
                vstat[w] = 1
                S -= 1
                vpool[I] = w
                vpos[w] = I
                I += 1
                XS -= degree[w]
                for hh in range(offset[w], offset[w + 1]):
                    if hh != g:
                        ipool[XI] = hh
                        ipos[hh] = XI
                        XI += 1
                kind = 0
            elif st == 1:
                jj = ipos[g]
                last = ipool[XI - 1]
                ipool[jj] = last
                ipos[last] = jj
                ipos[g] = -1
                XI -= 1
                kind = 2
            else:
                XR -= 1
                kind = 3
        else:
            j = rng.integers(0, I)
            w = vpool[j]
            last = vpool[I - 1]
            vpool[j] = last
            vpos[last] = j
            vpos[w] = -1
            I -= 1
            R += 1
            vstat[w] = 2
            for hh in range(offset[w], offset[w + 1]):
                jj = ipos[hh]
                if jj >= 0:
                    last = ipool[XI - 1]
                    ipool[jj] = last
                    ipos[last] = jj
                    ipos[hh] = -1
                    XI -= 1
                    XR += 1
            kind = 1

        k += 1
        t_rec[k] = t
        tau_rec[k] = tau
        rows[k, 0] = S; rows[k, 1] = I; rows[k, 2] = R
        rows[k, 3] = XS; rows[k, 4] = XI; rows[k, 5] = XR
        rows[k, 6] = kind; rows[k, 7] = w; rows[k, 8] = degree[w]

    tau_star = tau

    if post_recoveries and rho > 0 and not truncated:
        # No free infective half-edges remain; leftover infectives recover
        # without touching anyone.  In the time-changed clock the bracket of
        # the additive functional is 1/2 here, so d(tau) = 2 beta d(t).
        while I > 0:
            dt = rng.exponential(1.0) / (rho * I)
            t = t + dt
            if time_changed:
                tau += 2.0 * beta * dt
                A = t
            j = rng.integers(0, I)
            w = vpool[j]
            last = vpool[I - 1]
            vpool[j] = last
            vpos[last] = j
            I -= 1
            R += 1
            vstat[w] = 2
            for hh in range(offset[w], offset[w + 1]):
                if fpos[hh] >= 0:
                    XR += 1
            k += 1
            t_rec[k] = t
            tau_rec[k] = tau
            rows[k, 0] = S; rows[k, 1] = I; rows[k, 2] = R
            rows[k, 3] = XS; rows[k, 4] = XI; rows[k, 5] = XR
            rows[k, 6] = 1; rows[k, 7] = w; rows[k, 8] = degree[w]

    return t_rec[:k + 1], tau_rec[:k + 1], rows[:k + 1], partner, tau_star, truncated


def _check_rates(beta, rho):
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if not rho >= 0:
        raise ValueError(f"rho must be nonnegative, got {rho}")


def _build(profile, n, t_rec, tau_rec, rows, partner, tau_star, truncated, time_changed,
           seed, post):
    common = dict(
        n=n, S=rows[:, 0], I=rows[:, 1], R=rows[:, 2], XS=rows[:, 3], XI=rows[:, 4],
        XR=rows[:, 5], kind=rows[:, 6], vertex=rows[:, 7], degree=rows[:, 8],
        partner=partner, seed=seed, truncated=bool(truncated),
        meta={"post_recoveries": bool(post)},
    )
    if time_changed:
        return Trajectory(clock="time_changed", time=tau_rec, A=t_rec,
                          tau_star=float(tau_star), **common)
    return Trajectory(clock="original", time=t_rec, **common)


def _seed_value(rng_seed):
    return rng_seed if isinstance(rng_seed, (int, np.integer)) else None


def run_epidemic(
    profile: DegreeProfile,
    beta: float,
    rho: float,
    rng_seed=None,
    mode: str = "dynamic_pairing",
    *,
    graph: HalfEdgeSystem | None = None,
    post_recoveries: bool = False,
    simple: bool = False,
    max_attempts: int = 1000,
) -> Trajectory:
    """Simulate one epidemic in the original clock.

    ``mode`` is ``"dynamic_pairing"`` (reveal edges as they are used) or
    ``"pregenerated"`` (draw the whole multigraph first, or use ``graph``;
    ``simple=True`` conditions it on being simple by rejection).  With
    ``post_recoveries`` the leftover infectives' recoveries are simulated
    after the last free infective half-edge is gone.
    """
    _check_rates(beta, rho)
    rng = np.random.default_rng(rng_seed)
    degree, status, offset, owner = half_edge_layout(profile)
    if mode == "dynamic_pairing":
        pre = np.empty(0, dtype=np.int64)
    elif mode == "pregenerated":
        if graph is None:
            graph = (sample_simple(profile, rng, max_attempts) if simple
                     else pair_configuration(profile, rng))
        if len(graph.owner) != len(owner) or not np.array_equal(graph.owner, owner):
            raise ProfileError("graph does not match the profile's half-edge layout")
        pre = graph.partner.astype(np.int64)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out = _simulate(rng, degree, status, offset, owner, pre, float(beta), float(rho),
                    False, np.inf, post_recoveries)
    traj = _build(profile, profile.n, *out, False, _seed_value(rng_seed), post_recoveries)
    traj.meta["mode"] = mode
    return traj


def run_time_changed(
    profile: DegreeProfile,
    beta: float,
    rho: float,
    rng_seed=None,
    tau_horizon: float = np.inf,
    *,
    post_recoveries: bool = False,
) -> Trajectory:
    """Simulate in the time-changed clock, where each free susceptible
    half-edge is hit at total rate 1.  ``A`` holds the real time of each event."""
    _check_rates(beta, rho)
    rng = np.random.default_rng(rng_seed)
    degree, status, offset, owner = half_edge_layout(profile)
    pre = np.empty(0, dtype=np.int64)
    out = _simulate(rng, degree, status, offset, owner, pre, float(beta), float(rho),
                    True, float(tau_horizon), post_recoveries)
    traj = _build(profile, profile.n, *out, True, _seed_value(rng_seed), post_recoveries)
    traj.meta["beta"] = float(beta)
    return traj


def invert_time_change(traj: Trajectory) -> Trajectory:
    """Map a time-changed trajectory back to the original clock (tau -> A_tau)."""
    if traj.A is None:
        raise ValueError("trajectory has no A samples; was it produced by run_time_changed?")
    out = replace(traj, clock="original", time=traj.A.copy(), A=None,
                  meta=dict(traj.meta, tau=traj.time.copy()))
    return out


def additive_functional(traj: Trajectory, tau) -> np.ndarray:
    """``A_tau`` at arbitrary ``tau``, by linear interpolation between events.

    ``A`` is piecewise linear in tau (constant slope between events), so the
    interpolation is exact.  Beyond the last event the slope is the
    post-extinction value ``1 / (2 beta)``.
    """
    tau = np.asarray(tau, dtype=float)
    beta = traj.meta["beta"]
    out = np.interp(tau, traj.time, traj.A)
    beyond = tau > traj.time[-1]
    out = np.where(beyond, traj.A[-1] + (tau - traj.time[-1]) / (2 * beta), out)
    return out


def inverse_time(traj: Trajectory, t) -> np.ndarray:
    """tau(t), the inverse of :func:`additive_functional`."""
    t = np.asarray(t, dtype=float)
    beta = traj.meta["beta"]
    out = np.interp(t, traj.A, traj.time)
    beyond = t > traj.A[-1]
    return np.where(beyond, traj.time[-1] + 2 * beta * (t - traj.A[-1]), out)


def detect_T0(traj: Trajectory, s0: float) -> Optional[float]:
    """First event time with ``S <= n * s0``; ``None`` means a small outbreak."""
    if not 0 < s0 < 1:
        raise ValueError(f"s0 must lie in (0, 1), got {s0}")
    hit = np.flatnonzero(traj.S <= traj.n * s0)
    if len(hit) == 0:
        return None
    return float(traj.time[hit[0]])


def run_colored(profile: DegreeProfile, beta: float, rho: float, rng_seed=None) -> Trajectory:
    """Explicit-timer simulation that also tracks red half-edges ``Z``.

    Each newly infective vertex gets an Exp(rho) recovery time and each of its
    free half-edges an Exp(beta) firing time; a half-edge is red when it would
    fire before its vertex recovers.  ``Z`` counts free red half-edges.  The
    law of ``(S, I, R, X_S, X_I, X_R)`` is that of :func:`run_epidemic`; this
    engine is slower and meant for branching-approximation diagnostics.
    """
    _check_rates(beta, rho)
    rng = np.random.default_rng(rng_seed)
    degree, status, offset, owner = half_edge_layout(profile)
    n, m = len(degree), len(owner)
    vstat = status.astype(np.int64)
    fpool = list(range(m))
    fpos = list(range(m))
    fire = np.full(m, np.inf)
    recover_at = np.full(n, np.inf)
    red = np.zeros(m, dtype=bool)
    heap: list[tuple[float, int, int]] = []  # (time, code, id); code 0 fire, 1 recover

    counts = {
        "S": int(np.sum(vstat == SUSC)), "I": int(np.sum(vstat == INF)),
        "R": int(np.sum(vstat == REC)),
        "XS": int(degree[vstat == SUSC].sum()), "XI": int(degree[vstat == INF].sum()),
        "XR": int(degree[vstat == REC].sum()),
    }
    Z = 0

    def remove_free(h):
        p = fpos[h]
        last = fpool[-1]
        fpool[p] = last
        fpos[last] = p
        fpool.pop()
        fpos[h] = -1

    def infect(v, now, skip=-1):
        nonlocal Z
        rec = now + (rng.exponential(1 / rho) if rho > 0 else np.inf)
        recover_at[v] = rec
        if rec < np.inf:
            heapq.heappush(heap, (rec, 1, v))
        for h in range(offset[v], offset[v + 1]):
            if h == skip:
                continue
            fire[h] = now + rng.exponential(1 / beta)
            red[h] = fire[h] < rec
            Z += int(red[h])
            if red[h]:
                heapq.heappush(heap, (fire[h], 0, h))

    for v in np.flatnonzero(vstat == INF):
        infect(v, 0.0)

    times, rows, kinds, verts, degs, zs = [0.0], [tuple(counts.values())], [START], [-1], [-1], [Z]
    while counts["XI"] > 0 and heap:
        now, code, idx = heapq.heappop(heap)
        if code == 1:
            v = idx
            if vstat[v] != INF or recover_at[v] != now:
                continue
            vstat[v] = REC
            counts["I"] -= 1
            counts["R"] += 1
            for h in range(offset[v], offset[v + 1]):
                if fpos[h] >= 0:
                    counts["XI"] -= 1
                    counts["XR"] += 1
            kind, w = RECOVERY, v
        else:
            h = idx
            if fpos[h] < 0 or fire[h] != now:
                continue
            remove_free(h)
            Z -= 1
            g = fpool[int(rng.integers(0, len(fpool)))]
            remove_free(g)
            w = int(owner[g])
            counts["XI"] -= 1
            if vstat[w] == SUSC:
                vstat[w] = INF
                counts["S"] -= 1
                counts["I"] += 1
                counts["XS"] -= int(degree[w])
                counts["XI"] += int(degree[w]) - 1
                infect(w, now, skip=g)
                kind = INFECTION
            elif vstat[w] == INF:
                counts["XI"] -= 1
                Z -= int(red[g])
                kind = IN_GROUP
            else:
                counts["XR"] -= 1
                kind = TO_RECOVERED
        times.append(now)
        rows.append(tuple(counts.values()))
        kinds.append(kind)
        verts.append(w)
        degs.append(int(degree[w]))
        zs.append(Z)
        if counts["XI"] == 0:
            break

    arr = np.array(rows, dtype=np.int64)
    return Trajectory(
        clock="original", n=n, time=np.array(times), S=arr[:, 0], I=arr[:, 1], R=arr[:, 2],
        XS=arr[:, 3], XI=arr[:, 4], XR=arr[:, 5], kind=np.array(kinds), vertex=np.array(verts),
        degree=np.array(degs), Z=np.array(zs), seed=_seed_value(rng_seed),
    )
