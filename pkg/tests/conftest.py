import numpy as np
import pytest

from cmsir.degree_model import build_profile, params_from_distribution, seed_infectives


@pytest.fixture
def p3_params():
    """All susceptibles of degree 3, rho/beta = 1/2: theta_inf = 1/2."""
    return params_from_distribution({3: 1.0}, 1.0, 0.5)


@pytest.fixture
def bulk2_params():
    """All degree 2, 10% initially infective, rho = beta: theta_inf = 10/11."""
    return params_from_distribution({2: 1.0}, 1.0, 1.0, alpha_s=0.9, alpha_i=0.1, mu_i=0.2)


@pytest.fixture
def p13_params():
    """p_1 = p_3 = 1/2, rho = 0: q = 1/3, R0 = 3/2."""
    return params_from_distribution({1: 0.5, 3: 0.5}, 1.0, 0.0)


@pytest.fixture
def mixed_profile():
    return seed_infectives(build_profile(2000, {1: 0.2, 3: 0.5, 4: 0.3}), {3: 2})


def poisson_params(lam=3.0, beta=1.0, rho=0.7, kmax=60):
    from scipy import stats

    k = np.arange(kmax)
    pk = stats.poisson(lam).pmf(k)
    return params_from_distribution((k, pk / pk.sum()), beta, rho)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
