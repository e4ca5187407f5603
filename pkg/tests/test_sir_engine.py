import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse, stats
from scipy.sparse import csgraph

from cmsir.config_graph import pair_configuration
from cmsir.degree_model import build_profile, seed_infectives
from cmsir.sir_engine import (
    INFECTION,
    Trajectory,
    additive_functional,
    detect_T0,
    invert_time_change,
    inverse_time,
    run_colored,
    run_epidemic,
    run_time_changed,
)

EDGE = build_profile(ns={1: 1}, ni={1: 1})


def test_single_edge_rho_zero_always_infects():
    for seed in range(50):
        tr = run_epidemic(EDGE, 1.0, 0.0, seed)
        assert tr.S_final == 0


def test_single_edge_exponential_race():
    beta, rho, runs = 1.0, 0.5, 10_000
    hits = sum(run_epidemic(EDGE, beta, rho, s).S_final == 0 for s in range(runs))
    p = beta / (beta + rho)
    assert abs(hits / runs - p) <= 3 * math.sqrt(p * (1 - p) / runs)


def test_no_infectives_is_trivial():
    tr = run_epidemic(build_profile(ns={2: 5}), 1.0, 1.0, 0)
    assert tr.num_events == 0 and tr.S_final == 5


def test_invalid_rates():
    with pytest.raises(ValueError):
        run_epidemic(EDGE, 0.0, 1.0, 0)
    with pytest.raises(ValueError):
        run_epidemic(EDGE, 1.0, -1.0, 0)


def test_determinism(mixed_profile):
    a = run_epidemic(mixed_profile, 1.0, 0.5, 42)
    b = run_epidemic(mixed_profile, 1.0, 0.5, 42)
    assert np.array_equal(a.time, b.time) and np.array_equal(a.S, b.S)


@settings(max_examples=40, deadline=None)
@given(
    counts=st.dictionaries(st.integers(1, 6), st.integers(1, 40), min_size=1, max_size=4),
    seeds=st.integers(1, 3),
    rho=st.sampled_from([0.0, 0.3, 1.0, 4.0]),
    seed=st.integers(0, 2**31),
    mode=st.sampled_from(["dynamic", "pregenerated", "time_changed", "post"]),
)
def test_trajectory_invariants(counts, seeds, rho, seed, mode):
    k = max(counts)
    counts = dict(counts)
    counts[k] += seeds
    if sum(d * c for d, c in counts.items()) % 2:
        counts[1] = counts.get(1, 0) + 1
    prof = seed_infectives(build_profile(ns=counts), {k: seeds})
    if mode == "dynamic":
        tr = run_epidemic(prof, 1.3, rho, seed)
    elif mode == "pregenerated":
        tr = run_epidemic(prof, 1.3, rho, seed, mode="pregenerated")
    elif mode == "post":
        tr = run_epidemic(prof, 1.3, rho, seed, post_recoveries=True)
        assert tr.I[-1] == 0 or rho == 0
    else:
        tr = run_time_changed(prof, 1.3, rho, seed)
        assert np.all(np.diff(tr.A) >= 0)
    tr.check()
    assert tr.XI[-1] == 0
    assert tr.total_infected >= prof.n_i


def _final_sizes(fn, seeds):
    return np.array([fn(s).total_infected for s in seeds])


def test_dynamic_and_pregenerated_agree_in_law():
    prof = seed_infectives(build_profile(300, {1: 0.3, 3: 0.7}), {3: 1})
    a = _final_sizes(lambda s: run_epidemic(prof, 1.0, 0.6, s), range(1000))
    b = _final_sizes(lambda s: run_epidemic(prof, 1.0, 0.6, s, mode="pregenerated"),
                     range(10_000, 11_000))
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_simple_graph_mode_runs():
    prof = seed_infectives(build_profile(200, {2: 0.5, 3: 0.5}), {3: 1})
    tr = run_epidemic(prof, 1.0, 0.5, 3, mode="pregenerated", simple=True)
    tr.check()


def test_time_change_round_trip():
    prof = seed_infectives(build_profile(2000, {3: 1.0}), {3: 2})
    tc = run_time_changed(prof, 2.0, 1.0, 7, post_recoveries=True)
    assert np.all(np.diff(tc.A) > 0) or tc.num_events == 0
    orig = invert_time_change(tc)
    assert np.array_equal(orig.time, tc.A)
    assert np.array_equal(orig.S, tc.S)
    taus = np.linspace(0, tc.time[-1] + 1.0, 500)
    back = inverse_time(tc, additive_functional(tc, taus))
    assert np.max(np.abs(back - taus)) < 1e-9
    with pytest.raises(ValueError):
        invert_time_change(orig)


def test_time_changed_final_sizes_match_direct():
    prof = seed_infectives(build_profile(400, {3: 1.0}), {3: 1})
    a = _final_sizes(lambda s: run_epidemic(prof, 1.0, 1.0, s), range(800))
    b = _final_sizes(lambda s: invert_time_change(run_time_changed(prof, 1.0, 1.0, s)),
                     range(5000, 5800))
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_time_changed_susceptible_half_edges_hit_at_unit_rate():
    # with mu_I > 0 the run lasts past tau = 1 and S'_tau / n tracks alpha_S e^{-3 tau}
    prof = build_profile(100_000, {3: 1.0}, alpha_s=0.9, alpha_i=0.1)
    tc = run_time_changed(prof, 1.0, 0.5, 1, tau_horizon=1.0)
    mask = tc.time <= min(1.0, tc.time[-1])
    err = np.abs(tc.S[mask] / tc.n - 0.9 * np.exp(-3 * tc.time[mask]))
    assert err.max() <= 0.02


def test_two_regular_tau_star_is_exponential():
    prof = build_profile(ns={2: 499}, ni={2: 1})
    taus = [run_time_changed(prof, 1.0, 0.0, 100 + s).tau_star for s in range(400)]
    assert stats.kstest(taus, "expon").pvalue > 0.01


def test_rho_zero_infects_the_seed_component():
    prof = seed_infectives(build_profile(500, {1: 0.5, 2: 0.3, 3: 0.2}), {2: 1})
    for seed in range(10):
        g = pair_configuration(prof, seed)
        tr = run_epidemic(prof, 1.0, 0.0, seed, mode="pregenerated", graph=g)
        e = g.edges()
        adj = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(g.n, g.n))
        _, lab = csgraph.connected_components(adj, directed=False)
        seed_v = np.flatnonzero(g.vertex_status == 1)
        component = set(np.flatnonzero(np.isin(lab, lab[seed_v])).tolist())
        infected = set(seed_v.tolist()) | set(tr.vertex[tr.kind == INFECTION].tolist())
        assert infected == component


def _fake(S):
    S = np.array(S)
    n = int(S[0])
    z = np.zeros_like(S)
    return Trajectory(clock="original", n=n, time=np.arange(len(S), dtype=float), S=S,
                      I=n - S, R=z, XS=z, XI=z, XR=z, kind=z, vertex=z, degree=z)


def test_detect_T0():
    assert detect_T0(_fake([10, 9, 9, 8]), 0.5) is None
    assert detect_T0(_fake([10, 9, 8, 4, 3]), 0.5) == 3.0
    with pytest.raises(ValueError):
        detect_T0(_fake([10, 9]), 1.0)


def test_colored_engine_matches_in_law_and_tracks_red():
    prof = seed_infectives(build_profile(300, {3: 1.0}), {3: 1})
    a = _final_sizes(lambda s: run_epidemic(prof, 1.0, 1.0, s), range(600))
    runs = [run_colored(prof, 1.0, 1.0, 20_000 + s) for s in range(600)]
    b = np.array([r.total_infected for r in runs])
    assert stats.ks_2samp(a, b).pvalue > 0.01
    for r in runs[:50]:
        r.check()
        assert np.all(r.Z >= 0) and np.all(r.Z <= r.XI)
    r0 = run_colored(prof, 1.0, 0.0, 3)
    assert np.array_equal(r0.Z, r0.XI)
