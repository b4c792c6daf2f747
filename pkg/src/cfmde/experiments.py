"""Config-driven Monte-Carlo experiments and their on-disk artifacts.

A config is a flat text file with one ``key = value`` per line; ``#`` starts a
comment. Every run writes

* ``estimates.csv``  one row per replication (failed rows included)
* ``timings.csv``    wall time per replication
* ``summary.json``   mean, standard deviation and counts
* ``manifest.json``  resolved config, seeds and software versions

``estimates.csv`` and ``summary.json`` depend only on the config and seeds, so
a replay of the manifest reproduces them byte for byte. Timings live in their
own file for that reason.
"""
from __future__ import annotations

import csv
import json
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .asymptotics import (
    EPS_LADDER,
    MultiscaleModel,
    bump_function,
    cf_gap_ladder,
    gaussian_function,
    meets_order,
    oscillatory_bound,
    oscillatory_ladder,
    series_ladder,
    tau_squared,
)
from .dynamics import (
    FcnSpec,
    build_multiscale_langevin,
    default_dt,
    default_fcn_dt,
    euler_maruyama,
    rk4_fcn,
)
from .estimator import Problem, estimate
from .gibbs import homogenization_factor, quadratic, quadratic_form, quartic, sine

EXPERIMENTS = ("langevin1d", "langevin1d_quartic", "langevin2d", "fcn", "normality", "rates")
FAILURE_LIMIT = 0.2

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILURES = 2


class ConfigError(ValueError):
    pass


# --- config -------------------------------------------------------------------------------

_PER_EXPERIMENT = {
    "langevin1d": dict(alpha=2.0, sigma=1.0, eps=0.1, T=2000.0, init="10", x0="10", replications=50),
    "langevin1d_quartic": dict(alpha=2.0, sigma=1.0, eps=0.1, T=2000.0, init="10", x0="10", replications=50),
    "normality": dict(alpha=2.0, sigma=1.0, eps=0.1, T=1000.0, init="10", x0="10", replications=200),
    "langevin2d": dict(alpha=1.0, sigma=1.5, eps=0.1, T=1000.0, init="auto", x0="10,10", replications=20),
    "fcn": dict(A=-1.0, B=0.0, eps=10 ** -1.5, T=500.0, init="0.8", x0="1,1,1,1", replications=1),
    "rates": dict(replications=1),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    alpha: float = 2.0
    sigma: float = 1.0
    eps: float = 0.1
    T: float = 2000.0
    dt: str = "auto"
    obs_dt: float = 0.01
    beta: float = 1.0
    init: str = "10"
    x0: str = "10"
    replications: int = 50
    master_seed: int = 0
    output_dir: str = "out"
    A: float = -1.0
    B: float = 0.0
    lam: float = 2.0 / 45.0
    M0: str = "4,2;2,3"
    eps_ladder: str = ",".join(str(e) for e in EPS_LADDER)
    u: float = 1.0
    k: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        for name in ("sigma", "T", "beta", "obs_dt", "alpha"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.dt != "auto":
            try:
                dt = float(self.dt)
            except ValueError:
                raise ConfigError(f"dt must be a number or 'auto', got {self.dt!r}") from None
            if not dt > 0:
                raise ConfigError("dt must be positive")
            if self.experiment == "fcn":
                if dt > self.eps ** 2 / 10:
                    raise ConfigError(f"fcn step rule violated: dt={dt} > eps^2/10")
            elif self.experiment != "rates" and not dt < self.eps ** 3:
                raise ConfigError(f"multiscale step rule violated: dt={dt} must be < eps^3={self.eps ** 3}")
        try:
            self.initial_point()
            self.start()
            self.ladder()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # parsed views of the string-valued keys
    def start(self) -> np.ndarray:
        return _vector(self.x0)

    def ladder(self) -> tuple:
        return tuple(float(e) for e in self.eps_ladder.split(","))

    def m0(self) -> np.ndarray:
        return _matrix(self.M0)

    def initial_point(self):
        if self.experiment == "langevin2d":
            if self.init == "auto":
                S = self.sigma_matrix()
                return np.array([[3.0, S[0, 0] / 2], [S[1, 1] / 2, 6.0]])
            return _matrix(self.init)
        return float(self.init) if self.init != "auto" else None

    def sigma_matrix(self) -> np.ndarray:
        k1, k2 = (homogenization_factor(p, self.sigma) for p in _pert_2d())
        return self.sigma * np.diag([k1, k2])

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in str(text).split(",")])


def _matrix(text: str) -> np.ndarray:
    rows = [[float(v) for v in r.split(",")] for r in str(text).split(";")]
    M = np.array(rows)
    if M.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix 'a,b;c,d', got {text!r}")
    return M


def _pert_2d():
    return sine(1.0, 2 * math.pi), sine(0.5, 2 * math.pi)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def config_from_dict(values: dict) -> ExperimentConfig:
    unknown = sorted(set(values) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "experiment" not in values:
        raise ConfigError("config needs an 'experiment' key")
    exp = str(values["experiment"])
    merged = dict(_PER_EXPERIMENT.get(exp, {}))
    merged.update(values)
    coerced = {k: _coerce(k, str(v)) if isinstance(v, str) else v for k, v in merged.items()}
    return ExperimentConfig(**coerced)


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return config_from_dict(values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# --- single replication --------------------------------------------------------------

def reference_value(cfg: ExperimentConfig):
    """True parameter of the homogenized model (``None`` where it is not known in closed form)."""
    if cfg.experiment in ("langevin1d", "langevin1d_quartic", "normality"):
        return cfg.alpha * homogenization_factor(sine(), cfg.sigma)
    if cfg.experiment == "langevin2d":
        k = cfg.sigma_matrix() / cfg.sigma
        return cfg.alpha * k @ cfg.m0()
    return None


def step_size(cfg: ExperimentConfig) -> float:
    """Integration step the simulation will use."""
    if cfg.dt != "auto":
        return float(cfg.dt)
    if cfg.experiment == "fcn":
        return default_fcn_dt(cfg.eps)
    return default_dt(_sde(cfg))


def _sde(cfg: ExperimentConfig):
    if cfg.experiment == "langevin2d":
        return build_multiscale_langevin(cfg.alpha, cfg.sigma, cfg.eps, quadratic_form(cfg.m0()), _pert_2d())
    pot = quartic() if cfg.experiment == "langevin1d_quartic" else quadratic()
    return build_multiscale_langevin(cfg.alpha, cfg.sigma, cfg.eps, pot, sine())


def simulate(cfg: ExperimentConfig, seed: int):
    if cfg.experiment == "fcn":
        return rk4_fcn(FcnSpec(cfg.A, cfg.B, cfg.lam, cfg.eps), cfg.start(), cfg.T, step_size(cfg), cfg.obs_dt)
    return euler_maruyama(_sde(cfg), cfg.start(), cfg.T, step_size(cfg), seed, cfg.obs_dt)


def problem_for(cfg: ExperimentConfig) -> Problem:
    init = cfg.initial_point()
    if cfg.experiment == "fcn":
        return Problem("fcn_diffusion", A=cfg.A, B=cfg.B, beta=cfg.beta, init=init)
    if cfg.experiment == "langevin2d":
        return Problem("langevin2d_drift", sigma_bar=cfg.sigma_matrix(), beta=cfg.beta, init=init)
    pot = quartic() if cfg.experiment == "langevin1d_quartic" else quadratic()
    K = homogenization_factor(sine(), cfg.sigma)
    return Problem("langevin1d_drift", sigma_bar=cfg.sigma * K, potential=pot, beta=cfg.beta, init=init)


def run_replication(cfg: ExperimentConfig, seed: int) -> dict:
    """Simulate and estimate once; failures come back as data, not exceptions."""
    t0 = time.perf_counter()
    row = dict(seed=seed, theta_hat=None, objective=math.nan, iterations=0, converged=False,
               failed=False, error="")
    try:
        traj = simulate(cfg, seed)
        res = estimate(problem_for(cfg), traj)
        row.update(theta_hat=res.theta_hat, objective=res.objective, iterations=res.iterations,
                   converged=bool(res.converged))
    except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        row.update(failed=True, error=f"{type(exc).__name__}: {exc}")
    row["wall_time"] = time.perf_counter() - t0
    return row


# --- artifacts --------------------------------------------------------------------------------

def _theta_columns(cfg: ExperimentConfig):
    if cfg.experiment == "langevin2d":
        return ["theta_11", "theta_12", "theta_21", "theta_22"]
    return ["theta_hat"]


def _fmt(v) -> str:
    return repr(float(v))


def write_estimates(path, cfg: ExperimentConfig, rows) -> None:
    cols = _theta_columns(cfg)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replication", "seed", *cols, "objective", "iterations", "converged", "failed", "error"])
        for i, r in enumerate(rows):
            if r["theta_hat"] is None:
                vals = ["nan"] * len(cols)
            else:
                vals = [_fmt(v) for v in np.ravel(r["theta_hat"])]
            w.writerow([i, r["seed"], *vals, _fmt(r["objective"]), r["iterations"],
                        int(r["converged"]), int(r["failed"]), r["error"]])


def write_timings(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replication", "seed", "wall_time"])
        for i, r in enumerate(rows):
            w.writerow([i, r["seed"], f"{r['wall_time']:.6f}"])


def _json_dump(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _to_json(v):
    if v is None:
        return None
    arr = np.asarray(v, dtype=float)
    return arr.tolist() if arr.ndim else float(arr)


def summarize(cfg: ExperimentConfig, rows) -> dict:
    """Statistics over converged rows, with all-row counterparts and counts disclosed."""
    ref = reference_value(cfg)
    ok = [r for r in rows if not r["failed"]]
    conv = [r for r in ok if r["converged"]]

    def stats(sel):
        if not sel:
            return None, None, None
        est = np.array([np.asarray(r["theta_hat"], dtype=float) for r in sel])
        mean = est.mean(axis=0)
        std = est.std(axis=0, ddof=1) if len(sel) > 1 else np.zeros_like(mean)
        mae = None if ref is None else np.mean(np.abs(est - ref), axis=0)
        return mean, std, mae

    mean, std, mae = stats(conv)
    mean_all, _, _ = stats(ok)
    out = dict(
        experiment=cfg.experiment,
        replications=len(rows),
        n_converged=len(conv),
        n_failed=len(rows) - len(ok),
        mean=_to_json(mean),
        std=_to_json(std),
        mean_all=_to_json(mean_all),
        reference=_to_json(ref),
        abs_error=None if (ref is None or mean is None) else _to_json(np.abs(mean - ref)),
        mean_abs_error=_to_json(mae),
        averaging="converged rows; mean_all also includes non-converged, non-failed rows",
    )
    return out


def software_versions() -> dict:
    import numba

    return dict(cfmde=__version__, numpy=np.__version__, numba=numba.__version__,
                python=platform.python_version())


def _manifest(cfg: ExperimentConfig, seeds, wall: float, artifacts) -> dict:
    man = dict(
        config=cfg.to_dict(),
        seeds=list(seeds),
        software=software_versions(),
        wall_time_total=round(wall, 3),
        artifacts=sorted(artifacts),
    )
    if cfg.experiment != "rates":
        man["dt_used"] = step_size(cfg)
        man["dt_rule"] = ("user" if cfg.dt != "auto" else
                          "min(1e-3, eps^2/10)" if cfg.experiment == "fcn" else
                          "min(eps^3/2, 0.1/max|d(fast drift)/dx|)")
    return man


@dataclass
class RunOutcome:
    out_dir: Path
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    exit_code: int = EXIT_OK


def run_replications(cfg: ExperimentConfig, threads: int = 1):
    seeds = [cfg.master_seed + r for r in range(cfg.replications)]
    if threads <= 1:
        rows = [run_replication(cfg, s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(lambda s: run_replication(cfg, s), seeds))
    return seeds, rows


def run(cfg: ExperimentConfig, threads: int = 1, out_dir=None) -> RunOutcome:
    """Run an experiment and write its artifacts. Dispatches ``normality`` and ``rates``."""
    if cfg.experiment == "normality":
        return normality_study(cfg, threads, out_dir)
    if cfg.experiment == "rates":
        return rates_study(cfg, out_dir)
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    seeds, rows = run_replications(cfg, threads)
    summary = summarize(cfg, rows)
    _write_common(out, cfg, rows, summary, seeds, time.perf_counter() - t0)
    return RunOutcome(out, rows, summary, _exit_code(rows))


def _exit_code(rows) -> int:
    failed = sum(r["failed"] for r in rows)
    return EXIT_FAILURES if failed > FAILURE_LIMIT * len(rows) else EXIT_OK


def _write_common(out: Path, cfg, rows, summary, seeds, wall, extra=()):
    write_estimates(out / "estimates.csv", cfg, rows)
    write_timings(out / "timings.csv", rows)
    _json_dump(out / "summary.json", summary)
    arts = ["estimates.csv", "timings.csv", "summary.json", "manifest.json", *extra]
    _json_dump(out / "manifest.json", _manifest(cfg, seeds, wall, arts))


# --- normality study -------------------------------------------------------------------------

@dataclass(frozen=True)
class BinRule:
    width: float
    count: int
    fallback: bool = False

    def __iter__(self):
        return iter((self.width, self.count))

    @property
    def rule(self) -> str:
        return "sturges" if self.fallback else "freedman-diaconis"


#: Freedman-Diaconis counts above this fall back to Sturges.
MAX_BINS = 10_000


def freedman_diaconis_bins(samples) -> BinRule:
    """Bin width ``2 IQR n^(-1/3)`` with type-7 (linear) quantiles.

    Falls back to Sturges, flagged, when ``IQR = 0`` or the rule asks for more than
    ``MAX_BINS`` bins.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 4:
        raise ValueError("freedman_diaconis_bins needs at least 4 samples")
    q1, q3 = np.percentile(x, [25, 75])
    span = float(x.max() - x.min())
    iqr = float(q3 - q1)
    if iqr > 0:
        width = 2.0 * iqr * n ** (-1.0 / 3.0)
        # an IQR that is negligible against the range is as degenerate as a zero one
        if span / width <= MAX_BINS:
            return BinRule(width, max(1, int(math.ceil(span / width))))
    count = int(math.ceil(math.log2(n))) + 1
    if span == 0:
        return BinRule(1.0, 1, True)
    return BinRule(span / count, count, True)


def histogram(samples, rule: BinRule):
    """``(edges, counts, normalized_height)`` with bins starting at the sample minimum."""
    x = np.asarray(samples, dtype=float)
    lo = float(x.min()) if rule.count > 1 or x.max() > x.min() else float(x.min()) - 0.5 * rule.width
    edges = lo + rule.width * np.arange(rule.count + 1)
    counts, _ = np.histogram(x, bins=edges)
    # the top edge can fall a hair short of the maximum in floating point
    counts[-1] += int(np.sum(x > edges[-1]))
    heights = counts / (x.size * rule.width)
    return edges, counts, heights


def normal_overlay(variance: float, n: int = 2001, width: float = 8.0):
    sd = math.sqrt(variance)
    x = np.linspace(-width * sd, width * sd, n)
    return x, np.exp(-0.5 * x * x / variance) / math.sqrt(2 * math.pi * variance)


def normality_study(cfg: ExperimentConfig, threads: int = 1, out_dir=None) -> RunOutcome:
    """Centred, scaled estimates ``sqrt(T)(theta_hat - theta0)`` against ``N(0, tau^2/J^2)``."""
    if cfg.experiment != "normality":
        raise ConfigError("normality_study needs experiment = normality")
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    seeds, rows = run_replications(cfg, threads)
    theta0 = reference_value(cfg)
    K = homogenization_factor(sine(), cfg.sigma)
    stats = tau_squared(theta0, cfg.sigma * K, cfg.beta)
    conv = [r for r in rows if not r["failed"] and r["converged"]]
    z = np.sqrt(cfg.T) * (np.array([r["theta_hat"] for r in conv], dtype=float) - theta0)

    summary = summarize(cfg, rows)
    summary.update(predicted_variance=stats.ratio, J=stats.J, tau_sq=stats.tau_sq)
    extra = ["overlay.csv"]
    if z.size >= 4:
        rule = freedman_diaconis_bins(z)
        edges, counts, heights = histogram(z, rule)
        with open(out / "hist.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left", "bin_right", "count", "normalized_height"])
            for i in range(rule.count):
                w.writerow([_fmt(edges[i]), _fmt(edges[i + 1]), int(counts[i]), _fmt(heights[i])])
        extra.append("hist.csv")
        summary.update(bin_width=rule.width, bin_count=rule.count, bin_rule=rule.rule)
    if z.size:
        var = float(np.var(z, ddof=1)) if z.size > 1 else 0.0
        summary.update(sample_mean=float(z.mean()), sample_variance=var,
                       standard_error=math.sqrt(stats.ratio / z.size))
    x, dens = normal_overlay(stats.ratio)
    with open(out / "overlay.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "density"])
        for a, b in zip(x, dens):
            w.writerow([_fmt(a), _fmt(b)])
    _write_common(out, cfg, rows, summary, seeds, time.perf_counter() - t0, extra)
    return RunOutcome(out, rows, summary, _exit_code(rows))


# --- rates ------------------------------------------------------------------------------------------

def rates_study(cfg: ExperimentConfig, out_dir=None) -> RunOutcome:
    """``cf_gap`` and ``oscillatory_gap`` ladders with fitted slopes and the bound check."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    ladder = cfg.ladder()
    model = MultiscaleModel(cfg.alpha, cfg.sigma, quadratic(), sine())
    cf = cf_gap_ladder(ladder, cfg.u, model)
    osc = oscillatory_ladder(ladder, gaussian_function(), sine())
    bump = oscillatory_ladder(ladder, bump_function(), sine())
    cf.write_csv(out / "cf_gap.csv")
    osc.write_csv(out / "oscillatory_gap.csv")
    bump.write_csv(out / "oscillatory_gap_bump.csv")
    bounds = [oscillatory_bound(gaussian_function(), sine(), e, cfg.k) for e in ladder]
    with open(out / "bound.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "gap", "bound", "holds"])
        for e, g, b in zip(ladder, osc.gaps, bounds):
            w.writerow([_fmt(e), _fmt(g), _fmt(b), int(g <= b)])
    summary = dict(
        experiment="rates",
        eps=list(ladder),
        cf_gap_slope=cf.slope,
        cf_gap_order2=meets_order(cf.slope, 2.0),
        oscillatory_slope=osc.slope,
        oscillatory_order2=meets_order(osc.slope, 2.0),
        bump_slope=bump.slope,
        cf_gap_series_slope=series_ladder("cf_gap", ladder, cfg.u, model)[1],
        oscillatory_series_slope=series_ladder("oscillatory_gap", ladder)[1],
        bound_holds=all(g <= b for g, b in zip(osc.gaps, bounds)),
    )
    _json_dump(out / "summary.json", summary)
    arts = ["cf_gap.csv", "oscillatory_gap.csv", "oscillatory_gap_bump.csv", "bound.csv", "summary.json",
            "manifest.json"]
    _json_dump(out / "manifest.json", _manifest(cfg, [], time.perf_counter() - t0, arts))
    return RunOutcome(out, [], summary, EXIT_OK)


# --- replay -------------------------------------------------------------------------------------------

def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def replay(manifest_path, out_dir, threads: int = 1) -> RunOutcome:
    """Rerun the experiment recorded in a manifest into ``out_dir``."""
    man = load_manifest(manifest_path)
    cfg = config_from_dict(man["config"])
    if man.get("seeds") and man["seeds"] != [cfg.master_seed + r for r in range(cfg.replications)]:
        raise ConfigError("manifest seeds do not follow master_seed + r")
    return run(cfg, threads, out_dir)


def with_overrides(cfg: ExperimentConfig, reps: Optional[int] = None, seed: Optional[int] = None,
                   out: Optional[str] = None) -> ExperimentConfig:
    changes = {}
    if reps is not None:
        changes["replications"] = reps
    if seed is not None:
        changes["master_seed"] = seed
    if out is not None:
        changes["output_dir"] = str(out)
    return replace(cfg, **changes) if changes else cfg


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)
