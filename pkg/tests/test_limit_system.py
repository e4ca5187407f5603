import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize

from cmsir.degree_model import params_from_distribution
from cmsir.limit_system import (
    DegenerateError,
    LimitError,
    SubcriticalError,
    compute_R0,
    eval_limit_functions,
    integrate_theta,
    solve_iv,
    solve_limit,
    solve_theta_inf,
    vS_inverse,
    volz_residual,
    volz_rhs,
)

from conftest import poisson_params


def test_values_at_theta_one(bulk2_params):
    p = params_from_distribution({1: 0.2, 3: 0.8}, 1.0, 0.4, alpha_s=0.8, alpha_i=0.1,
                                 alpha_r=0.1, mu_i=0.25, mu_r=0.35)
    v = eval_limit_functions(p, 1.0)
    assert v.vS == pytest.approx(p.alpha_s)
    assert v.hS == pytest.approx(p.mu_s)
    assert v.hX == pytest.approx(p.mu)
    assert v.hR == pytest.approx(p.mu_r)
    assert v.hI == pytest.approx(p.mu_i)
    assert v.pI == pytest.approx(p.mu_i / p.mu)
    assert v.pS == pytest.approx(p.mu_s / p.mu)
    assert v.gS == pytest.approx(1.0)


def test_hand_algebra_p3(p3_params):
    assert eval_limit_functions(p3_params, 0.5).hI == pytest.approx(0.0, abs=1e-15)


def test_theta_zero():
    p = params_from_distribution({0: 0.25, 3: 0.75}, 1.0, 0.5)
    v = eval_limit_functions(p, 0.0)
    assert v.hX == 0 and v.hI == 0
    assert v.vS == pytest.approx(0.25)
    assert math.isnan(v.pI) and math.isnan(v.pS)
    with pytest.raises(LimitError):
        eval_limit_functions(p, 1.5)


def test_R0_examples():
    assert compute_R0(params_from_distribution({3: 1.0}, 1.0, 1.0)) == pytest.approx(1.0)
    assert compute_R0(params_from_distribution({2: 1.0}, 1.0, 0.0)) == pytest.approx(1.0)
    assert compute_R0(params_from_distribution({1: 0.5, 3: 0.5}, 1.0, 0.0)) == pytest.approx(1.5)


def test_theta_inf_examples(p3_params, bulk2_params):
    assert solve_theta_inf(p3_params) == pytest.approx(0.5, abs=1e-12)
    assert solve_theta_inf(bulk2_params) == pytest.approx(10 / 11, abs=1e-12)
    with pytest.raises(DegenerateError):
        solve_theta_inf(params_from_distribution({2: 1.0}, 1.0, 0.0))
    with pytest.raises(SubcriticalError):
        solve_theta_inf(params_from_distribution({3: 1.0}, 1.0, 2.0))


def test_theta_inf_against_brentq_oracle():
    p = poisson_params()
    th = solve_theta_inf(p)
    h = lambda x: eval_limit_functions(p, x).hI / x
    assert th == pytest.approx(optimize.brentq(h, 1e-6, 1 - 1e-6, xtol=1e-15), abs=1e-11)
    assert abs(eval_limit_functions(p, th).hI) <= 1e-12


def test_vS_inverse():
    p = params_from_distribution({3: 1.0}, 1.0, 0.5)
    assert vS_inverse(p, 1.0) == pytest.approx(1.0)
    assert vS_inverse(p, 1 / 8) == pytest.approx(0.5, abs=1e-12)
    q = params_from_distribution({1: 0.5, 3: 0.5}, 1.0, 0.0)
    th = vS_inverse(q, 0.75)
    grid = np.linspace(0, 1, 2_000_001)
    scan = grid[np.argmin(np.abs((grid + grid ** 3) / 2 - 0.75))]
    assert th == pytest.approx(scan, abs=1e-6)
    assert abs((th + th ** 3) / 2 - 0.75) <= 1e-12
    with pytest.raises(LimitError):
        vS_inverse(p, 1.5)


def _check_monotone(sol):
    # strictly decreasing wherever the gaps to 1 and to theta_inf are resolvable
    d = np.diff(sol.theta)
    assert np.all(d <= 0)
    live = (sol.theta[1:] - sol.theta_inf > 1e-9) & (1 - sol.theta[:-1] > 1e-9)
    assert np.all(d[live] < 0)
    assert np.all(sol.theta >= sol.theta_inf)


def test_bulk_regime(bulk2_params):
    sol = solve_limit(bulk2_params, horizon=40.0, dt=1e-2)
    assert sol.regime == "bulk"
    _check_monotone(sol)
    assert sol.theta[-1] - 10 / 11 < 1e-3
    assert sol.cross_check_error < 1e-6
    # initial slope -beta * theta * p_I(1) = -0.1 beta
    slope = (sol.theta_at(1e-6) - 1.0) / 1e-6
    assert slope == pytest.approx(-0.1, rel=1e-4)
    assert sol.iv[0] == pytest.approx(0.1)
    assert sol.iv[-1] < 1e-3
    assert abs(sol.vS[-1] - sol.final_susceptible) < 1e-3
    assert np.max(np.abs(sol.vS + sol.iv + sol.rv - 1)) < 1e-8


def test_shifted_regime_p3(p3_params):
    s0 = (1 / 8 + 1) / 2
    sol = solve_limit(p3_params, s0=s0)
    assert sol.regime == "shifted"
    assert sol.theta_at(0.0) == pytest.approx(s0 ** (1 / 3), abs=1e-10)
    assert sol.t[0] < 0 < sol.t[-1]
    _check_monotone(sol)
    assert 1 - sol.theta[0] < 1e-8
    assert sol.theta[-1] - 0.5 < 1e-8
    assert sol.cross_check_error < 1e-6
    assert sol.final_susceptible == pytest.approx(1 / 8)
    assert sol.iv[0] < 1e-6 and sol.iv[-1] < 1e-3


def test_shifted_requires_supercritical_and_valid_s0(p3_params):
    with pytest.raises(LimitError):
        solve_limit(params_from_distribution({3: 1.0}, 1.0, 2.0), regime="shifted")
    with pytest.raises(LimitError):
        solve_limit(p3_params, s0=0.1)
    with pytest.raises(LimitError):
        solve_limit(p3_params, regime="bulk")


def test_rho_zero_i_nondecreasing(p13_params):
    sol = solve_limit(p13_params)
    assert np.all(np.diff(sol.iv) >= -1e-12)
    assert np.max(np.abs(sol.rv)) < 1e-8
    assert sol.theta_inf == pytest.approx(1 / 3, abs=1e-12)


def test_iv_matches_direct_quadrature(bulk2_params):
    sol = solve_limit(bulk2_params, horizon=10.0, dt=1e-2)
    p = bulk2_params
    F = lambda s: (lambda v: p.beta * v.hI * v.hS / v.hX)(eval_limit_functions(p, sol.theta_at(s)))
    for t in (0.5, 2.0, 7.0):
        direct = p.alpha_i * math.exp(-p.rho * t) + integrate.quad(
            lambda s: math.exp(-p.rho * (t - s)) * F(s), 0, t, epsabs=1e-12)[0]
        j = int(round(t / 1e-2))
        assert sol.iv[j] == pytest.approx(direct, abs=1e-8)


def test_theta_ode_local_residual(p3_params):
    sol = solve_limit(p3_params)
    d = np.gradient(sol.theta, sol.t, edge_order=2)
    rhs = -p3_params.beta * sol.theta * sol.pI
    assert np.max(np.abs(d - rhs)[2:-2]) <= 1e-4
    mid = slice(len(sol.t) // 4, 3 * len(sol.t) // 4)
    h = 1e-4
    fine = (sol.theta_at(sol.t[mid] + h) - sol.theta_at(sol.t[mid] - h)) / (2 * h)
    assert np.max(np.abs(fine - rhs[mid])) <= 1e-6


def test_volz_residual():
    sol = solve_limit(params_from_distribution({3: 1.0}, 1.0, 0.5, alpha_s=0.95, alpha_i=0.05,
                                               mu_i=0.15), dt=1e-3, horizon=20.0)
    assert volz_residual(sol) <= 1e-4
    sol2 = solve_limit(params_from_distribution({2: 1.0}, 1.0, 0.5, alpha_s=0.95, alpha_i=0.05,
                                                mu_i=0.1), dt=1e-3, horizon=20.0)
    assert volz_residual(sol2) <= 1e-4


def test_volz_rhs_vanishes_at_theta_inf(p3_params):
    dpi, dps = volz_rhs(p3_params, solve_theta_inf(p3_params))
    assert abs(dpi) < 1e-12 and abs(dps) < 1e-12


def test_poisson_family_solves():
    sol = solve_limit(poisson_params())
    assert sol.cross_check_error < 1e-6
    assert np.max(np.abs(sol.vS + sol.iv + sol.rv - 1)) < 1e-8


def test_csv_and_summary(tmp_path, p3_params):
    sol = solve_limit(p3_params)
    text = sol.to_csv(tmp_path / "limit.csv")
    assert text.splitlines()[0] == "t,theta,vS,i,r,hS,hI,hR,hX,pI,pS"
    assert len(text.splitlines()) == len(sol.t) + 1
    s = sol.summary()
    assert s["theta_inf"] == pytest.approx(0.5)
    assert s["t_hat_inf"] == pytest.approx(math.log(2))


param_sets = st.builds(
    lambda w, rho, a_i, a_r, m_r: (w, rho, a_i, a_r, m_r),
    st.lists(st.floats(0.05, 1.0), min_size=2, max_size=6),
    st.floats(0.0, 3.0),
    st.floats(0.0, 0.2),
    st.floats(0.0, 0.2),
    st.floats(0.0, 0.5),
)


def _params(spec):
    w, rho, a_i, a_r, m_r = spec
    tot = sum(w)
    pk = {k + 1: x / tot for k, x in enumerate(w)}
    mu_i = a_i * 3.0
    return params_from_distribution(pk, 1.0, rho, alpha_s=1 - a_i - a_r, alpha_i=a_i,
                                    alpha_r=a_r, mu_i=mu_i, mu_r=m_r if a_r > 0 else 0.0)


@settings(max_examples=80, deadline=None)
@given(spec=param_sets, thetas=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20))
def test_half_edge_identity(spec, thetas):
    p = _params(spec)
    v = eval_limit_functions(p, np.array(thetas))
    assert np.max(np.abs(v.hS + v.hI + v.hR - v.hX)) <= 1e-10
    k = p.degrees.astype(float)
    mix = np.sum(p.alpha_s * k * p.pk / p.mu * (k - 1)) / (1 + p.ratio)
    assert mix == pytest.approx(compute_R0(p), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(spec=param_sets)
def test_sign_of_hI_around_root(spec):
    p = _params(spec)
    try:
        th = solve_theta_inf(p)
    except LimitError:
        return
    assert abs(eval_limit_functions(p, th).hI) <= 1e-12
    above = np.linspace(th, 1, 60)[1:-1]
    below = np.linspace(0, th, 60)[1:-1]
    vals_above = eval_limit_functions(p, above).hI
    vals_below = eval_limit_functions(p, below).hI
    # tolerance for cancellation right next to the root
    assert np.all(vals_above > -1e-13)
    assert np.all(vals_below < 1e-13)
