import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from cmsir.degree_model import build_profile, params_from_distribution, seed_infectives
from cmsir.limit_system import compute_R0
from cmsir.outbreak_calc import (
    extinction_prob,
    offspring_distribution,
    offspring_model,
    outbreak_probability,
    simulate_gw,
    y_pgf,
    y_pmf,
)
from cmsir.sir_engine import detect_T0, run_epidemic

from conftest import poisson_params


def _y_pmf_oracle(ell, r):
    """Condition on the recovery time: binomial(ell, 1 - e^{-t}) mixed over Exp(r)."""
    out = []
    for j in range(ell + 1):
        f = lambda t: math.comb(ell, j) * (1 - math.exp(-t)) ** j * math.exp(-(ell - j) * t) \
            * r * math.exp(-r * t)
        out.append(integrate.quad(f, 0, math.inf, epsabs=1e-14, epsrel=1e-12)[0])
    return np.array(out)


def test_y_pmf_examples():
    assert y_pmf(5, 0.0).tolist() == [0, 0, 0, 0, 0, 1]
    assert y_pmf(1, 1.0) == pytest.approx([0.5, 0.5])
    assert y_pmf(2, 1.0) == pytest.approx([1 / 3, 1 / 3, 1 / 3])


@pytest.mark.parametrize("ell,r", [(1, 0.3), (4, 1.7), (9, 0.5), (25, 2.0)])
def test_y_pmf_against_quadrature(ell, r):
    assert y_pmf(ell, r) == pytest.approx(_y_pmf_oracle(ell, r), abs=1e-10)


def test_y_pmf_log_space_continuity():
    # both branches of the evaluation agree around the switch-over
    for ell in (59, 60, 61, 62):
        p = y_pmf(ell, 0.8)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert p[0] == pytest.approx(0.8 / (ell + 0.8), rel=1e-13)


def test_y_pgf_examples():
    assert y_pgf(7, 0.4, 1.0) == pytest.approx(1.0)
    assert y_pgf(4, 0.0, 0.3) == pytest.approx(0.3 ** 4)
    assert y_pgf(2, 1.0, 0.5) == pytest.approx(7 / 12)


@pytest.mark.parametrize("r", [0.0, 0.2, 1.0, 3.3])
def test_normalisation_and_mean(r):
    for ell in range(0, 201):
        p = y_pmf(ell, r)
        assert abs(p.sum() - 1) <= 1e-12
        assert np.dot(np.arange(ell + 1), p) == pytest.approx(ell / (1 + r), abs=1e-10)


def test_pgf_monotone_convex():
    x = np.linspace(0, 1, 201)
    for ell, r in ((1, 0.5), (5, 1.0), (40, 0.1)):
        v = y_pgf(ell, r, x)
        assert np.all(np.diff(v) >= -1e-15)
        assert np.all(np.diff(v, 2) >= -1e-12)


def test_offspring_examples():
    pmf, _ = offspring_distribution(params_from_distribution({3: 1.0}, 1.0, 0.0))
    assert pmf.tolist() == [0.0, 0.0, 1.0]
    pmf, _ = offspring_distribution(params_from_distribution({3: 1.0}, 1.0, 1.0))
    assert pmf == pytest.approx([1 / 3] * 3)
    pmf, _ = offspring_distribution(params_from_distribution({1: 0.5, 3: 0.5}, 1.0, 0.0))
    assert pmf == pytest.approx([0.25, 0.0, 0.75])
    with pytest.raises(ValueError):
        offspring_distribution(params_from_distribution({2: 1.0}, 1.0, 1.0, alpha_s=0.9,
                                                        alpha_i=0.1, mu_i=0.2))


def test_offspring_truncation_reports_tail():
    p = poisson_params(lam=4.0, kmax=40)
    full, t0 = offspring_distribution(p)
    cut, tail = offspring_distribution(p, K=10)
    assert len(cut) == 11
    assert tail == pytest.approx(full[11:].sum() + t0)
    assert np.dot(np.arange(len(full)), full) == pytest.approx(compute_R0(p), rel=1e-12)


def test_recovered_atom():
    p = params_from_distribution({3: 1.0}, 1.0, 0.0, alpha_s=0.8, alpha_r=0.2, mu_r=0.6)
    pmf, _ = offspring_distribution(p)
    assert pmf[0] == pytest.approx(0.6 / p.mu)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-12)


def test_extinction_examples():
    assert extinction_prob([0, 0, 1]) == 0.0
    assert extinction_prob([1 / 3, 1 / 3, 1 / 3]) == 1.0
    assert extinction_prob([0.25, 0, 0.75]) == pytest.approx(1 / 3, abs=1e-12)
    with pytest.raises(ValueError):
        extinction_prob([0.5, 0.6])


def test_extinction_near_critical_precision():
    e = 1e-3
    pmf = [0.3 - e, 0.4, 0.3 + e]
    q = extinction_prob(pmf)
    assert q == pytest.approx((0.3 - e) / (0.3 + e), abs=1e-12)


def test_outbreak_probability_examples(p13_params):
    assert outbreak_probability(p13_params, {0: 3}) == 0.0
    assert outbreak_probability(p13_params, {1: 1}) == pytest.approx(2 / 3, abs=1e-12)
    assert outbreak_probability(params_from_distribution({3: 1.0}, 1.0, 0.0), {3: 1}) == 1.0
    assert outbreak_probability(params_from_distribution({3: 1.0}, 1.0, 2.0), {3: 1}) == 0.0


def test_model_json_fields(p13_params):
    d = offspring_model(p13_params, {1: 1}).to_dict()
    assert set(d) == {"q", "outbreak_prob", "E_xi", "R0", "truncation_K", "tail_mass"}
    assert d["E_xi"] == pytest.approx(d["R0"])


def test_gw_trivial():
    for f in (1, 4):
        assert simulate_gw([1.0], {1: f}, 0.0, 3) == (True, f)
    assert simulate_gw([1.0], {}, 0.0, 3) == (True, 0)
    assert simulate_gw([0, 0, 1.0], {1: 1}, 0.0, 3, cap=100)[0] is False


def test_gw_extinction_frequency(p13_params):
    pmf, _ = offspring_distribution(p13_params)
    runs = 100_000
    rng = np.random.default_rng(77)
    ext = sum(simulate_gw(pmf, {1: 1}, 0.0, rng, cap=300)[0] for _ in range(runs))
    q = 1 / 3
    assert abs(ext / runs - q) <= 3 * math.sqrt(q * (1 - q) / runs)


def test_subcritical_progeny_quantiles_stable():
    pmf, _ = offspring_distribution(params_from_distribution({3: 1.0}, 1.0, 2.0))
    qs = []
    for cap in (10**3, 10**5):
        sizes = [simulate_gw(pmf, {3: 1}, 2.0, 500 + s, cap=cap)[1] for s in range(3000)]
        qs.append(np.percentile(sizes, [50, 90, 99]))
    assert np.array_equal(qs[0], qs[1])


def test_epidemic_outbreak_frequency_matches_branching():
    prof = seed_infectives(build_profile(10_000, {3: 1.0}), {3: 1})
    small = params_from_distribution({3: 1.0}, 1.0, 0.5)
    pred = outbreak_probability(small, {3: 1})
    s0 = 0.5625
    runs = 3000
    large = sum(detect_T0(run_epidemic(prof, 1.0, 0.5, 900_000 + s), s0) is not None
                for s in range(runs))
    assert abs(large / runs - pred) <= 0.02


def test_small_outbreaks_dominated_by_gw_progeny():
    prof = seed_infectives(build_profile(10_000, {3: 1.0}), {3: 1})
    params = params_from_distribution({3: 1.0}, 1.0, 0.5)
    pmf, _ = offspring_distribution(params)
    epi = []
    for s in range(3000):
        tr = run_epidemic(prof, 1.0, 0.5, 700_000 + s)
        if detect_T0(tr, 0.5625) is None:
            epi.append(tr.total_infected - 1)
    gw = []
    rng = np.random.default_rng(3)
    while len(gw) < 3000:
        extinct, size = simulate_gw(pmf, {3: 1}, 0.5, rng, cap=10_000)
        if extinct:
            gw.append(size)
    grid = np.arange(0, 40)
    F_epi = np.searchsorted(np.sort(epi), grid, side="right") / len(epi)
    F_gw = np.searchsorted(np.sort(gw), grid, side="right") / len(gw)
    # dominance: the epidemic CDF lies above the GW CDF, up to Monte Carlo error
    slack = 3 * math.sqrt(0.25 / len(epi) + 0.25 / len(gw))
    assert np.all(F_epi >= F_gw - slack)


@settings(max_examples=50, deadline=None)
@given(w=st.lists(st.floats(0.01, 1.0), min_size=1, max_size=8), r=st.floats(0.0, 3.0),
       a_r=st.floats(0.0, 0.4))
def test_xi_normalised_and_mean_is_R0(w, r, a_r):
    tot = sum(w)
    pk = {k + 1: x / tot for k, x in enumerate(w)}
    p = params_from_distribution(pk, 1.0, r, alpha_s=1 - a_r, alpha_r=a_r, mu_r=2 * a_r)
    pmf, tail = offspring_distribution(p)
    assert abs(pmf.sum() - 1) <= 1e-12 and tail == 0
    assert np.dot(np.arange(len(pmf)), pmf) == pytest.approx(compute_R0(p), rel=1e-10, abs=1e-14)
    q = extinction_prob(pmf)
    assert 0 <= q <= 1
    assert abs(np.polynomial.polynomial.polyval(q, pmf) - q) <= 1e-12
