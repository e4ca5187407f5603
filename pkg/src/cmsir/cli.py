"""Command-line entry point: ``cmsir <subcommand> [options]``.

Exit codes: 0 ok, 1 config error, 2 runtime failure, 3 acceptance violation
(``demo`` only).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config_graph import SimplicityError
from .degree_model import ProfileError, extract_params, write_profile
from .harness import (
    ConfigError,
    ExperimentConfig,
    InvariantViolation,
    atomic_write,
    prepare,
    run_experiment,
)
from .limit_system import LimitError, compute_R0
from .outbreak_calc import offspring_model, simulate_gw
from .vaccination import apply_vaccination, critical_coverage, modified_R0

log = logging.getLogger("cmsir")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ACCEPTANCE = 0, 1, 2, 3


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if getattr(args, "replicates", None) is not None:
        cfg = replace(cfg, replicates=args.replicates)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, base_seed=args.seed)
    if getattr(args, "workers", None) is not None:
        cfg = replace(cfg, workers=args.workers)
    return cfg


def cmd_simulate(args) -> int:
    cfg = replace(_load(args), metrics=[])
    rep = run_experiment(cfg, out_dir=args.out)
    print(_dump({k: v for k, v in rep.to_dict().items() if k != "per_replicate"}), end="")
    return EXIT_OK


def cmd_compare(args) -> int:
    rep = run_experiment(_load(args), out_dir=args.out)
    print(_dump({k: v for k, v in rep.to_dict().items() if k != "per_replicate"}), end="")
    return EXIT_OK


def cmd_limit(args) -> int:
    cfg = _load(args)
    prep = prepare(cfg)
    if prep.limit is None:
        raise LimitError(prep.limit_error)
    out = cfg.resolved_output_dir(args.out)
    atomic_write(out / "limit.csv", prep.limit.to_csv())
    summary = prep.limit.summary()
    summary["params"] = prep.params.to_dict()
    atomic_write(out / "limit.json", _dump(summary))
    print(_dump(summary), end="")
    return EXIT_OK


def cmd_outbreak(args) -> int:
    cfg = _load(args)
    prep = prepare(cfg, with_limit=False)
    params = prep.params if prep.params.mu_i == 0 else prep.params.small_seed_limit()
    model = offspring_model(params, prep.profile.n_i_by_degree)
    result = model.to_dict()
    if args.gw_runs:
        ext = [simulate_gw(model.xi_pmf, prep.profile.n_i_by_degree, params.ratio,
                           cfg.base_seed + r, cap=args.gw_cap)[0] for r in range(args.gw_runs)]
        result["gw_runs"] = args.gw_runs
        result["gw_outbreak_frequency"] = 1 - sum(ext) / len(ext)
    atomic_write(cfg.resolved_output_dir(args.out) / "outbreak.json", _dump(result))
    print(_dump(result), end="")
    return EXIT_OK


def cmd_vaccinate(args) -> int:
    cfg = _load(args)
    strategy = cfg.strategy()
    if strategy is None:
        raise ConfigError("config has no vaccination section")
    prep = prepare(replace(cfg, vaccination=None), with_limit=False)
    base = extract_params(prep.profile, cfg.beta, cfg.rho)
    if prep.regime == "shifted":
        base = base.small_seed_limit()
    mode = "expectation" if args.expectation else "stochastic"
    res = apply_vaccination(prep.profile, strategy, cfg.beta, cfg.rho, cfg.base_seed, mode)
    out = cfg.resolved_output_dir(args.out)
    atomic_write(out / "vaccinated_profile.csv", write_profile(res.profile))
    summary = {
        "strategy": {"kind": strategy.kind, "v": strategy.v, "table": dict(strategy.table)},
        "mode": mode,
        "R0": compute_R0(base),
        "R0_tilde": modified_R0(base, strategy),
        "v_star": {fam: critical_coverage(base, fam) for fam in ("uniform", "edgewise")},
        "V": res.V,
        "vaccinated_by_degree": {str(k): v for k, v in res.vaccinated_by_degree.items()},
    }
    atomic_write(out / "vaccination.json", _dump(summary))
    print(_dump(summary), end="")
    return EXIT_OK


def cmd_demo(args) -> int:
    from .acceptance import run_all

    only = {int(x) for x in args.only.split(",")} if args.only else None
    results = run_all(only)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cmsir", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="JSON experiment config")
        p.add_argument("--out", help="output directory (overrides env and config)")
        p.add_argument("--seed", type=int, help="base seed override")
        p.set_defaults(func=func)
        return p

    for name, func, help_ in (("simulate", cmd_simulate, "run an ensemble and write trajectories"),
                              ("compare", cmd_compare, "run an ensemble and compare with the limit")):
        p = with_config(name, func, help_)
        p.add_argument("--replicates", type=int)
        p.add_argument("--workers", type=int)
    with_config("limit", cmd_limit, "tabulate the deterministic limit")
    p = with_config("outbreak", cmd_outbreak, "branching-process outbreak probability")
    p.add_argument("--gw-runs", type=int, default=0, help="also simulate this many GW processes")
    p.add_argument("--gw-cap", type=int, default=10**6)
    p = with_config("vaccinate", cmd_vaccinate, "apply the config's vaccination strategy")
    p.add_argument("--expectation", action="store_true", help="expected counts instead of sampling")
    p = sub.add_parser("demo", help="run the acceptance checks")
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.set_defaults(func=cmd_demo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ProfileError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (LimitError, InvariantViolation, SimplicityError, OSError, RuntimeError, ValueError) as exc:
        log.error("runtime failure: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
