"""The acceptance checks, shared by the test suite and ``cmsir demo``.

Each check returns a :class:`CriterionResult`; seeds are fixed so the
outcome is reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .config_graph import count_defects, pair_configuration
from .degree_model import build_profile, params_from_distribution, seed_infectives
from .harness import ExperimentConfig, run_experiment
from .limit_system import (
    compute_R0,
    eval_limit_functions,
    solve_limit,
    solve_theta_inf,
    volz_residual,
)
from .outbreak_calc import offspring_distribution, outbreak_probability, y_pmf
from .sir_engine import invert_time_change, run_epidemic, run_time_changed
from .vaccination import critical_coverage

__all__ = ["CriterionResult", "CRITERIA", "run_all", "format_line", "cached_run"]


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    values: dict = field(default_factory=dict)


def format_line(res: CriterionResult) -> str:
    return f"[{'PASS' if res.passed else 'FAIL'}] criterion {res.number:>2}: {res.title}: {res.detail}"


# fields that do not change the replicates or the report
_COSMETIC = ("name", "output_dir", "trajectory_files", "workers")


def _key(cfg: ExperimentConfig) -> str:
    d = {k: v for k, v in cfg.to_dict().items() if k not in _COSMETIC}
    return json.dumps(d, sort_keys=True, default=str)


_cache: dict = {}


def cached_run(cfg: ExperimentConfig, with_limit: bool = True):
    """run_experiment without writing files, memoised on the effective settings."""
    key = (_key(cfg), with_limit)
    if key not in _cache:
        _cache[key] = run_experiment(cfg, write=False, with_limit=with_limit)
    return _cache[key]


FINAL_SIZE = dict(profile={"n": 100_000, "pk": {"3": 1.0}, "seeds": {"3": 1}},
                  beta=1.0, rho=0.5, replicates=200, base_seed=10_000)
BULK = dict(profile={"n": 100_000, "pk": {"2": 1.0}, "alpha_s": 0.9, "alpha_i": 0.1},
            beta=1.0, rho=1.0, replicates=100, base_seed=20_000)
OUTBREAK = dict(profile={"n": 100_000, "pk": {"1": 0.5, "3": 0.5}, "seeds": {"1": 1}},
                beta=1.0, rho=0.0, replicates=2000, base_seed=30_000, metrics=[])
TWO_REGULAR = dict(profile={"ns": {"2": 999}, "ni": {"2": 1}}, beta=1.0, rho=0.0,
                   clock="time_changed", replicates=1000, base_seed=50_000, metrics=[],
                   post_recoveries=False)
VACCINATION = dict(profile={"n": 100_000, "pk": {"3": 1.0}, "seeds": {"3": 1}}, beta=1.0,
                   rho=0.0, replicates=300, base_seed=90_000, metrics=[],
                   vaccination={"kind": "uniform", "v": 0.45})


def _final_size_report():
    return cached_run(ExperimentConfig(**FINAL_SIZE))


def final_size_lln() -> CriterionResult:
    rep = _final_size_report()
    mean = rep.conditional_final_mean
    ok = rep.num_replicates >= 200 and rep.num_large > 0 and abs(mean - 0.125) <= 0.01
    return CriterionResult(
        1, "final-size law of large numbers", ok,
        f"mean S_inf/n = {mean:.5f} over {rep.num_large}/{rep.num_replicates} large outbreaks "
        f"(target 0.125 +- 0.01)",
        {"mean": mean, "large": rep.num_large},
    )


def trajectory_convergence() -> CriterionResult:
    rep = _final_size_report()
    med = {k: rep.median_sup(k) for k in ("S", "I", "R")}
    ok = rep.num_large > 0 and all(v <= 0.02 for v in med.values())
    return CriterionResult(
        2, "trajectory convergence after T0", ok,
        "median sup-norms " + ", ".join(f"{k}={v:.4f}" for k, v in med.items()) + " (tol 0.02)",
        med,
    )


def bulk_regime() -> CriterionResult:
    params = params_from_distribution({2: 1.0}, 1.0, 1.0, alpha_s=0.9, alpha_i=0.1, mu_i=0.2)
    theta_inf = solve_theta_inf(params)
    rep = cached_run(ExperimentConfig(**BULK))
    worst = {k: max(r.sup[k] for r in rep.replicates) for k in ("S", "I")}
    ok = (rep.regime == "bulk" and abs(theta_inf - 10 / 11) <= 1e-10
          and all(v <= 0.02 for v in worst.values()))
    return CriterionResult(
        3, "bulk regime", ok,
        f"theta_inf - 10/11 = {theta_inf - 10 / 11:.2e}; worst sup-norms "
        + ", ".join(f"{k}={v:.4f}" for k, v in worst.items()) + " (tol 0.02)",
        {"theta_inf": theta_inf, **worst},
    )


def outbreak_probability_check() -> CriterionResult:
    exact = outbreak_probability(params_from_distribution({1: 0.5, 3: 0.5}, 1.0, 0.0), {1: 1})
    rep = cached_run(ExperimentConfig(**OUTBREAK))
    freq = rep.outbreak_frequency
    ok = abs(freq - 2 / 3) <= 0.03 and abs(exact - 2 / 3) <= 1e-12
    return CriterionResult(
        4, "large-outbreak probability", ok,
        f"empirical {freq:.4f} (2/3 +- 0.03), analytic - 2/3 = {exact - 2 / 3:.1e}",
        {"empirical": freq, "analytic": exact},
    )


def subcritical_smallness() -> CriterionResult:
    q95 = {}
    for n in (1_000, 10_000, 100_000):
        profile = seed_infectives(build_profile(n, {3: 1.0}), {3: 1})
        sizes = [run_epidemic(profile, 1.0, 2.0, 40_000 + r).total_infected for r in range(500)]
        q95[n] = float(np.percentile(sizes, 95))
    ratio = max(q95.values()) / min(q95.values())
    ok = ratio <= 1.5
    return CriterionResult(
        5, "subcritical outbreaks stay O(1)", ok,
        "95th percentiles " + ", ".join(f"n={n}: {v:g}" for n, v in q95.items())
        + f"; max/min = {ratio:.3f} (<= 1.5)",
        {"q95": q95, "ratio": ratio},
    )


def exact_time_changed_laws() -> CriterionResult:
    rep = cached_run(ExperimentConfig(**TWO_REGULAR), with_limit=False)
    ks = rep.ks
    p1 = ks["tau_star_vs_exp1"]["pvalue"]
    p2 = ks["exp_minus_2tau_vs_beta_half_1"]["pvalue"]
    ok = p1 > 0.01 and p2 > 0.01
    return CriterionResult(
        6, "exact laws of tau* on the 2-regular graph", ok,
        f"KS p-values: tau* vs Exp(1) {p1:.3f}, exp(-2 tau*) vs Beta(1/2,1) {p2:.3f} (> 0.01)",
        {"p_exp": p1, "p_beta": p2},
    )


def time_change_equivalence() -> CriterionResult:
    profile = seed_infectives(build_profile(1_000, {3: 1.0}), {3: 1})
    direct = []
    changed = []
    dur_direct = []
    dur_changed = []
    for r in range(1000):
        a = run_epidemic(profile, 1.0, 1.0, 60_000 + r)
        # disjoint seed range: identical seeds would reproduce identical paths
        b = invert_time_change(run_time_changed(profile, 1.0, 1.0, 70_000 + r))
        direct.append(a.total_infected)
        changed.append(b.total_infected)
        dur_direct.append(a.end_time)
        dur_changed.append(b.end_time)
    p = float(stats.ks_2samp(direct, changed).pvalue)
    p_dur = float(stats.ks_2samp(dur_direct, dur_changed).pvalue)
    ok = p > 0.01
    return CriterionResult(
        7, "time-change equivalence", ok,
        f"two-sample KS p on final sizes {p:.3f} (> 0.01); on durations {p_dur:.3f} (reported)",
        {"p_final": p, "p_duration": p_dur},
    )


def _identity_params():
    yield params_from_distribution({3: 1.0}, 1.0, 0.5)
    yield params_from_distribution({1: 0.5, 3: 0.5}, 1.0, 0.0)
    yield params_from_distribution({1: 0.2, 2: 0.3, 5: 0.5}, 2.0, 1.0, alpha_s=0.9, alpha_r=0.1,
                                   mu_r=0.3)
    yield params_from_distribution({2: 1.0}, 1.0, 1.0, alpha_s=0.9, alpha_i=0.1, mu_i=0.2)
    k = np.arange(0, 60)
    yield params_from_distribution((k, stats.poisson(3.0).pmf(k) / stats.poisson(3.0).pmf(k).sum()),
                                   1.0, 0.7)


def identity_suite() -> CriterionResult:
    worst = {}

    def record(name, value):
        worst[name] = max(worst.get(name, 0.0), float(value))

    for r in (0.0, 0.3, 1.0, 2.5):
        for ell in range(0, 201):
            pmf = y_pmf(ell, r)
            record("y_norm", abs(pmf.sum() - 1))
            record("y_mean", abs(np.dot(np.arange(ell + 1), pmf) - ell / (1 + r)))
    theta = np.linspace(0, 1, 401)
    for params in _identity_params():
        vals = eval_limit_functions(params, theta)
        record("h_sum", np.max(np.abs(vals.hS + vals.hI + vals.hR - vals.hX)))
        th = solve_theta_inf(params)
        record("hI_root", abs(eval_limit_functions(params, th).hI))
        if params.mu_i == 0:
            pmf, _ = offspring_distribution(params)
            record("xi_norm", abs(pmf.sum() - 1))
            record("xi_mean", abs(np.dot(np.arange(len(pmf)), pmf) - compute_R0(params)))
    record("volz", volz_residual(solve_limit(params_from_distribution({3: 1.0}, 1.0, 0.5))))
    conserved = True
    profile = seed_infectives(build_profile(10_000, {1: 0.2, 3: 0.5, 4: 0.3}), {3: 2})
    for r in range(20):
        tr = run_epidemic(profile, 1.0, 0.5, 80_000 + r, post_recoveries=r % 2 == 0)
        conserved &= bool(np.all(tr.S + tr.I + tr.R == tr.n))
    tol = {"y_norm": 1e-12, "y_mean": 1e-10, "xi_norm": 1e-12, "xi_mean": 1e-10,
           "h_sum": 1e-12, "hI_root": 1e-12, "volz": 1e-4}
    bad = [k for k, v in worst.items() if v > tol[k]]
    ok = not bad and conserved
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f", conservation={conserved}"
    return CriterionResult(8, "identity and property suite", ok, detail, dict(worst, conserved=conserved))


def vaccination_threshold() -> CriterionResult:
    vstar = critical_coverage(params_from_distribution({3: 1.0}, 1.0, 0.0), "uniform")
    freq = {}
    for v, seed in ((0.45, 90_000), (0.55, 95_000)):
        cfg = ExperimentConfig(**dict(VACCINATION, base_seed=seed,
                                      vaccination={"kind": "uniform", "v": v}))
        freq[v] = cached_run(cfg).outbreak_frequency
    ok = abs(vstar - 0.5) <= 1e-10 and freq[0.45] > 0.2 and freq[0.55] <= 0.05
    return CriterionResult(
        9, "vaccination threshold", ok,
        f"v* - 0.5 = {vstar - 0.5:.1e}; outbreak frequency {freq[0.45]:.3f} at v=0.45 (> 0.2), "
        f"{freq[0.55]:.3f} at v=0.55 (<= 0.05)",
        {"vstar": vstar, "freq": freq},
    )


def pairing_uniformity() -> CriterionResult:
    profile = build_profile(ns={2: 3})
    trials = 10_000
    rng = np.random.default_rng(99_000)
    hits = sum(count_defects(pair_configuration(profile, rng)).simple for _ in range(trials))
    p = 8 / 15
    sigma = math.sqrt(p * (1 - p) / trials)
    freq = hits / trials
    ok = abs(freq - p) <= 3 * sigma
    return CriterionResult(
        10, "configuration-model simplicity rate", ok,
        f"P(simple) = {freq:.4f} vs 8/15 = {p:.4f} (3 sigma = {3 * sigma:.4f})",
        {"freq": freq},
    )


CRITERIA: dict[int, Callable[[], CriterionResult]] = {
    1: final_size_lln,
    2: trajectory_convergence,
    3: bulk_regime,
    4: outbreak_probability_check,
    5: subcritical_smallness,
    6: exact_time_changed_laws,
    7: time_change_equivalence,
    8: identity_suite,
    9: vaccination_threshold,
    10: pairing_uniformity,
}


def run_all(only=None, echo: Callable[[str], None] | None = print) -> list[CriterionResult]:
    out = []
    for num, fn in CRITERIA.items():
        if only and num not in only:
            continue
        res = fn()
        if echo is not None:
            echo(format_line(res))
        out.append(res)
    return out
