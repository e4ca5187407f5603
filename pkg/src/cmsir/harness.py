"""Configuration-driven experiments: ensembles, the limit, and their comparison.

Replicate ``r`` is seeded with ``base_seed + r``; the same generator drives
stochastic vaccination and then the epidemic, so reruns are bit-identical.
Full-resolution trajectories are reduced to metrics inside each replicate
task and dropped; only the first few are written to disk (subsampled).
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np
from scipy import stats

from .degree_model import (
    AsymptoticParams,
    DegreeProfile,
    ProfileError,
    build_profile,
    extract_params,
    read_profile,
    seed_infectives,
    write_profile,
)
from .limit_system import LimitError, LimitSolution, solve_limit
from .outbreak_calc import outbreak_probability
from .sir_engine import Trajectory, detect_T0, invert_time_change, run_epidemic, run_time_changed
from .vaccination import VaccinationStrategy, apply_vaccination, vaccinate_params

__all__ = [
    "ConfigError",
    "InvariantViolation",
    "ExperimentConfig",
    "ReplicateRecord",
    "ComparisonReport",
    "Prepared",
    "prepare",
    "align_trajectory",
    "align_trajectories",
    "run_experiment",
    "emit_outputs",
    "write_trajectory_csv",
    "atomic_write",
    "OUTPUT_DIR_ENV",
]

OUTPUT_DIR_ENV = "CMSIR_OUTPUT_DIR"
MAX_ROWS = 100_000
VARIABLES = ("S", "I", "R", "XS", "XI", "XR")
LIMIT_COLUMN = {"S": "vS", "I": "iv", "R": "rv", "XS": "hS", "XI": "hI", "XR": "hR"}
# when no large-outbreak threshold follows from the limit (subcritical or
# degenerate), a drop of 10% of the initial susceptibles counts as large
FALLBACK_S0_FRACTION = 0.9


class ConfigError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    profile: dict
    beta: float = 1.0
    rho: float = 0.0
    graph: str = "multigraph"
    clock: str = "original"
    replicates: int = 1
    base_seed: int = 0
    s0: Any = "auto"
    horizon: Optional[float] = None
    regime: str = "auto"
    output_dir: str = "cmsir_out"
    metrics: list = field(default_factory=lambda: list(VARIABLES))
    vaccination: Optional[dict] = None
    workers: int = 1
    trajectory_files: int = 20
    post_recoveries: bool = True
    name: str = "experiment"

    def __post_init__(self):
        if not isinstance(self.profile, dict):
            raise ConfigError("profile must be a section (mapping)")
        if int(self.replicates) < 0:
            raise ConfigError("replicates must be nonnegative")
        if not self.beta > 0 or not self.rho >= 0:
            raise ConfigError("need beta > 0 and rho >= 0")
        if self.graph not in ("multigraph", "simple"):
            raise ConfigError(f"graph must be 'multigraph' or 'simple', got {self.graph!r}")
        if self.clock not in ("original", "time_changed"):
            raise ConfigError(f"clock must be 'original' or 'time_changed', got {self.clock!r}")
        if self.regime not in ("auto", "bulk", "shifted"):
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.s0 != "auto" and not (isinstance(self.s0, (int, float)) and 0 < self.s0 < 1):
            raise ConfigError(f"s0 must be 'auto' or a number in (0, 1), got {self.s0!r}")
        bad = [m for m in self.metrics if m not in VARIABLES]
        if bad:
            raise ConfigError(f"unknown metrics {bad}")
        if self.clock == "time_changed" and self.graph == "simple":
            raise ConfigError("the time-changed clock runs on dynamic pairing only")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if "profile" not in data:
            raise ConfigError("config needs a profile section")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = cls.from_dict(data)
        base = Path(path).resolve().parent
        if "file" in cfg.profile and not Path(cfg.profile["file"]).is_absolute():
            cfg.profile = dict(cfg.profile, file=str(base / cfg.profile["file"]))
        return cfg

    def resolved_output_dir(self, override: str | None = None) -> Path:
        return Path(override or os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)

    def strategy(self) -> VaccinationStrategy | None:
        if not self.vaccination:
            return None
        v = dict(self.vaccination)
        try:
            if v.get("kind") == "custom":
                return VaccinationStrategy.custom(v["table"])
            return VaccinationStrategy(v["kind"], float(v.get("v", 0.0)))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad vaccination section: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


def _int_keys(d: dict | None) -> dict[int, int]:
    return {int(k): int(v) for k, v in (d or {}).items()}


def build_config_profile(spec: dict) -> DegreeProfile:
    """Profile from the config section: ``file``, explicit ``ns/ni/nr``, or ``n`` + ``pk``.

    ``seeds`` (degree -> count) then moves susceptibles to the infective class.
    """
    try:
        if "file" in spec:
            profile = read_profile(Path(spec["file"]))
        elif any(k in spec for k in ("ns", "ni", "nr")):
            profile = build_profile(ns=_int_keys(spec.get("ns")), ni=_int_keys(spec.get("ni")),
                                    nr=_int_keys(spec.get("nr")))
        else:
            pk = {int(k): float(p) for k, p in spec["pk"].items()}
            profile = build_profile(int(spec["n"]), pk, spec.get("alpha_s", 1.0),
                                    spec.get("alpha_i", 0.0), spec.get("alpha_r", 0.0),
                                    spec.get("rounding", "nearest"))
        if spec.get("seeds"):
            profile = seed_infectives(profile, _int_keys(spec["seeds"]))
    except (KeyError, ValueError, OSError) as exc:
        raise ConfigError(f"bad profile section: {exc}") from exc
    return profile


@dataclass
class Prepared:
    """Everything computed once per experiment, before the replicates."""

    profile: DegreeProfile
    params: AsymptoticParams
    regime: str
    limit: Optional[LimitSolution]
    s0: float
    predicted_outbreak_prob: Optional[float]
    R0: Optional[float]
    limit_error: str = ""


def prepare(cfg: ExperimentConfig, with_limit: bool = True) -> Prepared:
    profile = build_config_profile(cfg.profile)
    if profile.n_s == 0:
        raise ConfigError("profile has no susceptible vertices")
    params = extract_params(profile, cfg.beta, cfg.rho)
    strategy = cfg.strategy()
    if strategy is not None:
        params = vaccinate_params(params, strategy)
    regime = cfg.regime
    if regime == "auto":
        regime = "shifted" if profile.n_i <= math.sqrt(profile.n) else "bulk"
    lim_params = params.small_seed_limit() if regime == "shifted" else params

    limit = None
    err = ""
    if with_limit:
        s0 = None if cfg.s0 == "auto" else float(cfg.s0)
        try:
            limit = solve_limit(lim_params, regime, s0=s0 if regime == "shifted" else None,
                                horizon=cfg.horizon)
        except LimitError as exc:
            err = str(exc)
    if cfg.s0 != "auto":
        s0 = float(cfg.s0)
    elif limit is not None and limit.s0 is not None:
        s0 = float(limit.s0)
    elif limit is not None:
        s0 = 0.5 * (limit.final_susceptible + lim_params.alpha_s)
    else:
        s0 = FALLBACK_S0_FRACTION * lim_params.alpha_s

    pred = None
    R0 = None
    if regime == "shifted":
        from .limit_system import compute_R0

        R0 = compute_R0(lim_params)
        pred = outbreak_probability(lim_params, profile.n_i_by_degree)
    return Prepared(profile, lim_params, regime, limit, s0, pred, R0, err)


@dataclass
class ReplicateRecord:
    replicate: int
    seed: int
    large: bool
    T0: Optional[float]
    final_S: int
    total_infected: int
    final_susceptible_fraction: float
    events: int
    end_time: float
    vaccinated: int = 0
    tau_star: Optional[float] = None
    sup: dict = field(default_factory=dict)
    trajectory_file: Optional[str] = None


def align_trajectory(traj: Trajectory, limit: LimitSolution, T0: float | None,
                     metrics: Iterable[str] = VARIABLES) -> dict[str, float]:
    """sup over the limit grid of |X_{T0 + t} / n - x(t)| for each variable.

    The trajectory is read as a step function; before its first event it
    holds the initial state.  In the bulk regime pass ``T0 = 0``.
    """
    shift = 0.0 if T0 is None else T0
    vals = traj.at(limit.t + shift)
    n = traj.n
    out = {}
    for name in metrics:
        ref = getattr(limit, LIMIT_COLUMN[name])
        out[name] = float(np.max(np.abs(vals[name] / n - ref)))
    return out


def _wald(k: int, m: int, z: float = 1.96) -> tuple[float, float]:
    if m == 0:
        return (float("nan"), float("nan"))
    p = k / m
    half = z * math.sqrt(p * (1 - p) / m)
    return (p - half, p + half)


@dataclass
class ComparisonReport:
    n: int
    regime: str
    s0: float
    replicates: list
    limit_summary: Optional[dict] = None
    predicted_outbreak_prob: Optional[float] = None
    R0: Optional[float] = None
    horizon: Optional[list] = None
    ks: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def num_replicates(self) -> int:
        return len(self.replicates)

    @property
    def num_large(self) -> int:
        return sum(r.large for r in self.replicates)

    @property
    def outbreak_frequency(self) -> float:
        return self.num_large / self.num_replicates if self.replicates else float("nan")

    @property
    def wald_interval(self) -> tuple[float, float]:
        return _wald(self.num_large, self.num_replicates)

    def large(self) -> list:
        return [r for r in self.replicates if r.large]

    @property
    def conditional_final_mean(self) -> float:
        xs = [r.final_susceptible_fraction for r in self.large()]
        return float(np.mean(xs)) if xs else float("nan")

    def median_sup(self, name: str) -> float:
        xs = [r.sup[name] for r in self.large() if name in r.sup]
        return float(np.median(xs)) if xs else float("nan")

    def to_dict(self) -> dict:
        names = sorted({k for r in self.replicates for k in r.sup})
        return {
            "n": self.n,
            "regime": self.regime,
            "s0": self.s0,
            "R0": self.R0,
            "replicates": self.num_replicates,
            "large_outbreaks": self.num_large,
            "outbreak_frequency": self.outbreak_frequency if self.replicates else None,
            "wald_interval": list(self.wald_interval) if self.replicates else None,
            "predicted_outbreak_prob": self.predicted_outbreak_prob,
            "conditional_final_susceptible_mean": (self.conditional_final_mean
                                                   if self.large() else None),
            "limit": self.limit_summary,
            "horizon": self.horizon,
            "median_sup_norm": {k: self.median_sup(k) for k in names},
            "ks": self.ks,
            "notes": self.notes,
            "per_replicate": [asdict(r) for r in self.replicates],
        }


def align_trajectories(ensemble: Iterable[Trajectory], limit: LimitSolution, s0: float,
                       metrics: Iterable[str] = VARIABLES) -> ComparisonReport:
    """Report for trajectories already in memory (small ensembles)."""
    records = []
    n = 0
    for i, traj in enumerate(ensemble):
        n = traj.n
        records.append(_record(i, traj.seed if traj.seed is not None else -1, traj, limit,
                               s0, tuple(metrics), 0))
    return ComparisonReport(n, limit.regime, s0, records, limit.summary(),
                            horizon=[float(limit.t[0]), float(limit.t[-1])])


def _record(i, seed, traj, limit, s0, metrics, vaccinated):
    if limit is not None and limit.regime == "bulk":
        T0, large = 0.0, True
    else:
        T0 = detect_T0(traj, s0)
        large = T0 is not None
    sup = align_trajectory(traj, limit, T0, metrics) if (large and limit is not None) else {}
    return ReplicateRecord(
        replicate=i, seed=seed, large=large, T0=T0, final_S=traj.S_final,
        total_infected=traj.total_infected,
        final_susceptible_fraction=traj.S_final / traj.n,
        events=traj.num_events, end_time=traj.end_time, vaccinated=vaccinated,
        tau_star=traj.tau_star, sup=sup,
    )


def _subsample(m: int, cap: int = MAX_ROWS) -> np.ndarray:
    if m <= cap:
        return np.arange(m)
    return np.unique(np.linspace(0, m - 1, cap).round().astype(np.int64))


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trajectory_csv(traj: Trajectory, path: Path, cap: int = MAX_ROWS) -> None:
    idx = _subsample(len(traj.time), cap)
    cols = np.column_stack([traj.time[idx], traj.S[idx], traj.I[idx], traj.R[idx],
                            traj.XS[idx], traj.XI[idx], traj.XR[idx]])
    lines = ["time,S,I,R,XS,XI,XR"]
    lines += [f"{r[0]:.12g},{int(r[1])},{int(r[2])},{int(r[3])},{int(r[4])},{int(r[5])},{int(r[6])}"
              for r in cols.tolist()]
    atomic_write(path, "\n".join(lines) + "\n")


def _run_one(cfg: ExperimentConfig, prep: Prepared, r: int, out_dir: Path | None) -> ReplicateRecord:
    seed = int(cfg.base_seed) + r
    rng = np.random.default_rng(seed)
    profile = prep.profile
    vaccinated = 0
    strategy = cfg.strategy()
    if strategy is not None:
        res = apply_vaccination(profile, strategy, cfg.beta, cfg.rho, rng)
        profile, vaccinated = res.profile, res.V
    if cfg.clock == "time_changed":
        traj = run_time_changed(profile, cfg.beta, cfg.rho, rng, post_recoveries=cfg.post_recoveries)
        traj = invert_time_change(traj)
    else:
        mode = "pregenerated" if cfg.graph == "simple" else "dynamic_pairing"
        traj = run_epidemic(profile, cfg.beta, cfg.rho, rng, mode=mode,
                            simple=cfg.graph == "simple", post_recoveries=cfg.post_recoveries)
    try:
        traj.check()
    except AssertionError as exc:
        raise InvariantViolation(f"replicate {r} (seed {seed}) violates an invariant: {exc}") from exc
    rec = _record(r, seed, traj, prep.limit, prep.s0, tuple(cfg.metrics), vaccinated)
    if out_dir is not None and r < cfg.trajectory_files:
        name = f"trajectory_{r:05d}.csv"
        write_trajectory_csv(traj, out_dir / name)
        rec.trajectory_file = name
    return rec


def _oracle_ks(prep: Prepared, records: list, cfg: ExperimentConfig) -> dict:
    """KS tests against the exact laws of the 2-regular, rho = 0, one-seed case."""
    taus = np.array([r.tau_star for r in records if r.tau_star is not None])
    p = prep.profile
    two_regular = set(p.n_by_degree()) == {2} and p.n_i == 1 and p.n_r == 0
    if cfg.clock != "time_changed" or cfg.rho != 0 or not two_regular or len(taus) < 2:
        return {}
    exp = stats.kstest(taus, "expon")
    beta = stats.kstest(np.exp(-2 * taus), stats.beta(0.5, 1).cdf)
    return {
        "tau_star_vs_exp1": {"statistic": float(exp.statistic), "pvalue": float(exp.pvalue)},
        "exp_minus_2tau_vs_beta_half_1": {"statistic": float(beta.statistic),
                                          "pvalue": float(beta.pvalue)},
    }


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                   write: bool = True, with_limit: bool = True) -> ComparisonReport:
    """Run the ensemble, compare against the limit and (optionally) write outputs."""
    prep = prepare(cfg, with_limit)
    target = cfg.resolved_output_dir(str(out_dir) if out_dir else None) if write else None
    reps = range(int(cfg.replicates))
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            records = list(pool.map(lambda r: _run_one(cfg, prep, r, target), reps))
    else:
        records = [_run_one(cfg, prep, r, target) for r in reps]
    records.sort(key=lambda rec: rec.replicate)
    lim = prep.limit
    report = ComparisonReport(
        n=prep.profile.n, regime=prep.regime, s0=prep.s0, replicates=records,
        limit_summary=lim.summary() if lim is not None else None,
        predicted_outbreak_prob=prep.predicted_outbreak_prob, R0=prep.R0,
        horizon=[float(lim.t[0]), float(lim.t[-1])] if lim is not None else None,
    )
    report.ks = _oracle_ks(prep, records, cfg)
    if prep.limit_error:
        report.notes.append(f"no limit trajectory: {prep.limit_error}")
    if write:
        emit_outputs(report, target, cfg, prep)
    return report


def _plot_script(report: ComparisonReport, files: list[tuple[str, float]], n: int) -> str:
    lines = [
        "# gnuplot script: simulated S/I/R fractions against the limit",
        "set datafile separator ','",
        "set key outside",
        "set xlabel 't - T0'",
        "set ylabel 'fraction of n'",
        "plot \\",
    ]
    parts = []
    if report.limit_summary is not None:
        parts += [
            "  'limit.csv' using 1:3 with lines lw 2 title 'vS'",
            "  'limit.csv' using 1:4 with lines lw 2 title 'i'",
            "  'limit.csv' using 1:5 with lines lw 2 title 'r'",
        ]
    for name, shift in files:
        for col, lab in ((2, "S"), (3, "I"), (4, "R")):
            parts.append(f"  '{name}' using ($1-{shift!r}):(${col}/{n}.0) with steps notitle")
    if not parts:
        return "# nothing to plot\n"
    return "\n".join(lines) + "\n" + ", \\\n".join(parts) + "\n"


def emit_outputs(report: ComparisonReport, out_dir: str | Path, cfg: ExperimentConfig | None = None,
                 prep: Prepared | None = None) -> list[Path]:
    """Summary JSON, replicate table, limit table and plot script; returns paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    summary = report.to_dict()
    if cfg is not None:
        summary["config"] = cfg.to_dict()
    p = out / "summary.json"
    atomic_write(p, json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    written.append(p)
    if not report.replicates:
        return written
    if prep is not None:
        p = out / "profile.csv"
        atomic_write(p, write_profile(prep.profile))
        written.append(p)
        if prep.limit is not None:
            p = out / "limit.csv"
            atomic_write(p, prep.limit.to_csv())
            written.append(p)
    files = [(r.trajectory_file, r.T0 if (r.T0 is not None and report.regime == "shifted") else 0.0)
             for r in report.replicates if r.trajectory_file and (out / r.trajectory_file).exists()]
    p = out / "plot.gp"
    atomic_write(p, _plot_script(report, files, report.n))
    written.append(p)
    return written


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serialisable: {type(x)}")
