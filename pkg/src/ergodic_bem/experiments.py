"""Named experiments driven by flat key-value configs.

Each experiment validates its whole config before any simulation starts,
writes one long-format CSV plus a JSON sidecar, and returns an exit status:

* 0 success
* 1 validation failure (bad config or precondition)
* 2 solver failure
* 3 acceptance-property failure (suite mode)
"""

from dataclasses import asdict, dataclass, field, fields
import csv
import io
import json
import logging
import math
import os
import subprocess
import time

import numpy as np
import yaml

from . import __version__
from .errors import ConfigurationError, ContractViolation, ErgodicBemError, SolverError
from .ergodic import (ErgodicLimitEstimate, clt_table, estimate_ergodic_limit,
                      invariant_bias_order, sample_deviations, steps_for)
from .integrator import (BemConfig, check_step_size, coupled_mean_square_distance,
                         moment_profile, strong_error_profile)
from .model import builtin_model, builtin_test_function
from .parallel import resolve_workers
from .poisson import (PoissonTable, asymptotic_variance, clt_decomposition, poisson_residual_profile,
                      solve_phi)
from .stats import fit_order, ks_to_normal, plateau_check

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_ACCEPTANCE = 0, 1, 2, 3

EXPERIMENTS = (
    "ergodic-limit", "clt-table", "deviations", "clt-ks", "strong-order", "moment-scan",
    "contractivity", "bias-order", "poisson-solve", "poisson-check", "variance", "decomposition",
)

# keys that change how a run executes but never what it computes
EXECUTION_KEYS = ("workers", "out")


@dataclass
class ExperimentConfig:
    experiment: str
    model: str = "example51"
    theta: float = 8.0
    s: float = 1.0
    h: str = "sin_plus_one"
    f: list = field(default_factory=lambda: ["cos"])
    alpha: float = 2.0
    tau: float = None
    taus: list = None
    tau_ref: float = None
    horizon: float = None
    n_paths: int = None
    x0: list = None
    x0_list: list = None
    y0: list = None
    seed: int = 2024
    out: str = "results"
    workers: object = None
    pi_h: object = "estimate"
    pi_tau: float = 2.0 ** -10
    pi_horizon: float = 10.0
    pi_paths: int = 2000
    variance: object = "estimate"
    grid: list = field(default_factory=lambda: [-3.0, 3.0, 301])
    t_trunc: float = None
    quad_tau: float = 2.0 ** -9
    n_inner_paths: int = 10_000
    n_steps: int = None
    burn_in: int = None
    p_list: list = field(default_factory=lambda: [2, 4, 8])
    record_every: int = None
    slack: float = 2.0
    table: str = None

    def model_params(self):
        return {"theta": self.theta, "s": self.s} if self.model == "ou" else {}

    def build_model(self):
        import warnings

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            model = builtin_model(self.model, **self.model_params())
        return model, [str(w.message) for w in caught]

    def as_dict(self, provenance=False):
        d = asdict(self)
        if provenance:
            for k in EXECUTION_KEYS:
                d.pop(k, None)
        return d


# -- config loading ------------------------------------------------------------

def _as_list(value, cast=float):
    if value is None:
        return None
    if isinstance(value, str):
        value = [v for v in value.replace(";", ",").split(",") if v.strip()]
    if not isinstance(value, (list, tuple)):
        value = [value]
    return [cast(v) for v in value]


def _as_points(value):
    """``1`` / ``[1]`` -> ``[1.0]``; ``[-2, 1]`` for x0_list -> ``[[-2.0], [1.0]]``."""
    if value is None:
        return None
    return [[float(v)] if not isinstance(v, (list, tuple)) else [float(u) for u in v]
            for v in _as_list(value, lambda v: v)]


def normalize(raw):
    """Coerce raw key-value pairs (file or CLI) into an :class:`ExperimentConfig`."""
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    if "experiment" not in raw:
        raise ConfigurationError("config must name an experiment")
    cfg = dict(raw)
    for key in ("theta", "s", "alpha", "tau", "tau_ref", "horizon", "pi_tau", "pi_horizon",
                "t_trunc", "quad_tau", "slack"):
        if cfg.get(key) is not None:
            cfg[key] = float(cfg[key])
    for key in ("n_paths", "seed", "pi_paths", "n_inner_paths", "n_steps", "burn_in",
                "record_every"):
        if cfg.get(key) is not None:
            cfg[key] = int(cfg[key])
    if "f" in cfg:
        cfg["f"] = _as_list(cfg["f"], str)
    if "h" in cfg:
        cfg["h"] = str(cfg["h"])
    if cfg.get("taus") is not None:
        cfg["taus"] = _as_list(cfg["taus"])
    if cfg.get("p_list") is not None:
        cfg["p_list"] = _as_list(cfg["p_list"], int)
    if cfg.get("grid") is not None:
        g = _as_list(cfg["grid"])
        if len(g) != 3:
            raise ConfigurationError("grid must be [a, b, n_grid]")
        cfg["grid"] = [g[0], g[1], int(g[2])]
    for key in ("x0", "y0"):
        if cfg.get(key) is not None:
            cfg[key] = [float(v) for v in _as_list(cfg[key])]
    if cfg.get("x0_list") is not None:
        cfg["x0_list"] = _as_points(cfg["x0_list"])
    for key in ("pi_h", "variance"):
        v = cfg.get(key)
        if v is not None and not (isinstance(v, str) and v == "estimate"):
            cfg[key] = float(v)
    return ExperimentConfig(**cfg)


def load_config(path=None, overrides=None, experiment=None):
    """Read a flat YAML file and apply ``overrides`` (None values are skipped).

    ``experiment`` fills the experiment key; a file naming a different
    experiment is rejected.
    """
    raw = {}
    if path:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict) or any(isinstance(v, dict) for v in raw.values()):
            raise ConfigurationError(f"{path}: config must be a flat mapping of keys to values")
    if experiment is not None:
        if raw.get("experiment", experiment) != experiment:
            raise ConfigurationError(f"config names experiment {raw['experiment']!r} "
                                     f"but {experiment!r} was requested")
        raw["experiment"] = experiment
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    return normalize(raw)


# -- validation ------------------------------------------------------------------

_DEFAULTS = {
    "ergodic-limit": dict(tau=2.0 ** -10, horizon=10.0, x0_list=[[-2.0], [1.0]]),
    "clt-table": dict(taus=[0.05, 0.03, 0.02, 0.01], x0=[1.0]),
    "deviations": dict(tau=0.05, x0=[1.0]),
    "clt-ks": dict(tau=0.02, x0=[0.0]),
    "strong-order": dict(taus=[2.0 ** -k for k in range(6, 11)], tau_ref=2.0 ** -13,
                         horizon=4.0, x0=[1.0], n_paths=500),
    "moment-scan": dict(tau=0.01, n_steps=100_000, x0=[1.0], n_paths=500),
    "contractivity": dict(tau=0.01, horizon=2.0, x0=[2.0], y0=[-2.0], n_paths=500),
    "bias-order": dict(taus=[0.2, 0.1, 0.05], tau_ref=2.0 ** -8, horizon=50.0, n_paths=200),
    "poisson-solve": dict(t_trunc=3.0),
    "poisson-check": dict(t_trunc=3.0),
    "variance": dict(tau=0.01, n_steps=100_000),
    "decomposition": dict(tau=0.02, x0=[1.0], n_paths=1000),
}


def resolve_defaults(cfg):
    """Fill experiment-specific defaults for keys left unset."""
    for key, value in _DEFAULTS.get(cfg.experiment, {}).items():
        if getattr(cfg, key) is None:
            setattr(cfg, key, value)
    if cfg.n_paths is None:
        cfg.n_paths = 2000
    return cfg


def validate(cfg):
    """Check every precondition up front; raises :class:`ConfigurationError`."""
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment {cfg.experiment!r}; "
                                 f"choose from {', '.join(EXPERIMENTS)}")
    resolve_defaults(cfg)
    model, _ = cfg.build_model()
    h = builtin_test_function(cfg.h)
    fs = [builtin_test_function(name) for name in cfg.f]
    if not 1 < cfg.alpha <= 2:
        raise ConfigurationError(f"alpha={cfg.alpha} is outside the admissible range (1, 2]")
    if cfg.n_paths < 1:
        raise ConfigurationError("n_paths must be >= 1")
    resolve_workers(cfg.workers)
    for key in ("tau", "tau_ref", "pi_tau", "quad_tau"):
        v = getattr(cfg, key)
        if v is not None:
            if not v > 0:
                raise ConfigurationError(f"{key} must be positive, got {v}")
            check_step_size(model, BemConfig(v))
    if cfg.taus is not None:
        for t in cfg.taus:
            if not t > 0:
                raise ConfigurationError(f"taus must be positive, got {t}")
            check_step_size(model, BemConfig(t))
        if cfg.experiment in ("clt-table", "strong-order", "bias-order") and \
                any(a < b for a, b in zip(cfg.taus, cfg.taus[1:])):
            raise ConfigurationError("taus must be in descending order")
    if cfg.experiment in ("clt-table",):
        for t in cfg.taus:
            steps_for(t, cfg.alpha)
    if cfg.experiment in ("deviations", "clt-ks"):
        steps_for(cfg.tau, cfg.alpha)
    if cfg.experiment == "strong-order":
        if len(cfg.taus) < 3:
            raise ConfigurationError("strong-order needs at least 3 step sizes")
        for t in cfg.taus:
            for what, total in (("tau", t), ("horizon", cfg.horizon)):
                r = total / (cfg.tau_ref if what == "tau" else t)
                if abs(r - round(r)) > 1e-9 * r:
                    raise ConfigurationError(f"{what}={total} is not an integer multiple of "
                                             f"{cfg.tau_ref if what == 'tau' else t}")
    if cfg.experiment == "bias-order" and cfg.tau_ref > min(cfg.taus) / 8:
        raise ConfigurationError("bias-order needs tau_ref <= min(taus)/8")
    if cfg.experiment in ("poisson-solve", "poisson-check", "variance", "decomposition"):
        if model.state_dim != 1:
            raise ConfigurationError("Poisson experiments support 1-D models only")
        if cfg.grid[2] < (101 if cfg.experiment == "poisson-check" else 3):
            raise ConfigurationError("poisson-check needs at least 101 grid points")
        if cfg.table is None and cfg.n_inner_paths % 2:
            raise ConfigurationError("n_inner_paths must be even (antithetic pairs)")
    if cfg.experiment == "variance" and cfg.n_steps < 100_000:
        raise ConfigurationError("variance needs n_steps >= 100000")
    if cfg.experiment in ("moment-scan",) and cfg.n_steps < 8:
        raise ConfigurationError("moment-scan needs n_steps >= 8")
    return model, h, fs


# -- provenance and output ---------------------------------------------------------

def build_id():
    """``git describe`` of the source checkout, else the package version."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(u) for u in v)
    return str(v)


def render_csv(rows, columns, cfg, build):
    """CSV text: ``#`` provenance lines, a header row, then one line per row."""
    buf = io.StringIO()
    buf.write(f"# build: {build}\n")
    buf.write(f"# config: {json.dumps(cfg.as_dict(provenance=True), sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if hasattr(o, "as_dict"):
        return o.as_dict()
    return str(o)


@dataclass
class RunResult:
    status: int
    csv_path: str = None
    json_path: str = None
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    error: dict = None


# -- experiment bodies ----------------------------------------------------------------
# each returns (rows, columns, meta)

def _reference_limit(cfg, model, h, workers):
    if cfg.pi_h != "estimate":
        return ErgodicLimitEstimate.exact(cfg.pi_h, h.name)
    x0s = cfg.x0_list or [cfg.x0 or [1.0]]
    return estimate_ergodic_limit(model, BemConfig(cfg.pi_tau), h, x0s, cfg.pi_horizon,
                                  cfg.pi_paths, cfg.seed + 1, workers=workers)


def _exp_ergodic_limit(cfg, model, h, fs, workers):
    est = estimate_ergodic_limit(model, BemConfig(cfg.tau), h, cfg.x0_list, cfg.horizon,
                                 cfg.n_paths, cfg.seed, record_every=cfg.record_every,
                                 workers=workers)
    rows = [{"x0": p["x0"], "h": h.name, "value": p["value"], "stderr": p["stderr"],
             "n_paths": cfg.n_paths, "tau": cfg.tau, "horizon": cfg.horizon, "seed": p["seed"]}
            for p in est.per_initial]
    rows.append({"x0": "all", "h": h.name, "value": est.value, "stderr": est.stderr,
                 "n_paths": est.n_paths, "tau": cfg.tau, "horizon": cfg.horizon, "seed": cfg.seed})
    meta = {"estimate": est.as_dict(), "curves": {str(k): v for k, v in est.curves.items()}}
    return rows, ["x0", "h", "value", "stderr", "n_paths", "tau", "horizon", "seed"], meta


def _exp_clt_table(cfg, model, h, fs, workers):
    pi_h = _reference_limit(cfg, model, h, workers)
    batches = []
    table = clt_table(model, h, fs, cfg.alpha, cfg.taus, cfg.n_paths, cfg.x0, pi_h, cfg.seed,
                      workers=workers, batches=batches)
    rows = [{"tau": r.tau, "alpha": r.alpha, "n_paths": r.n_paths, "f_mean": r.f_mean,
             "f_stderr": r.f_stderr, "N_steps": r.n_steps, "pi_h_ref": r.pi_h_ref,
             "pi_h_stderr": r.pi_h_stderr, "seed": r.seed, "f": r.f_id, "h": r.h_id}
            for r in table]
    cols = ["tau", "alpha", "n_paths", "f_mean", "f_stderr", "N_steps", "pi_h_ref",
            "pi_h_stderr", "seed", "f", "h"]
    meta = {"pi_h": pi_h.as_dict(), "batches": [b.metadata() for b in batches],
            "N_per_tau": {repr(b.tau): [b.n_steps_used, b.tau_pow] for b in batches}}
    return rows, cols, meta


def _exp_deviations(cfg, model, h, fs, workers):
    pi_h = _reference_limit(cfg, model, h, workers)
    batch = sample_deviations(model, BemConfig(cfg.tau), h, cfg.x0, cfg.alpha, cfg.n_paths,
                              pi_h, cfg.seed, workers)
    rows = [{"path": i, "Z": z} for i, z in enumerate(batch.samples)]
    return rows, ["path", "Z"], {"batch": batch.metadata(), "pi_h": pi_h.as_dict()}


def _variance_reference(cfg, model, h, pi_h, workers):
    if cfg.variance != "estimate":
        return {"value": cfg.variance, "stderr": 0.0, "method": "given"}
    table = _poisson_table(cfg, model, h, pi_h.value, workers)
    est = asymptotic_variance(model, table, BemConfig(cfg.tau), cfg.n_steps or 100_000,
                              cfg.burn_in, cfg.seed + 2, x0=cfg.x0)
    return est.as_dict()


def _exp_clt_ks(cfg, model, h, fs, workers):
    pi_h = _reference_limit(cfg, model, h, workers)
    batch = sample_deviations(model, BemConfig(cfg.tau), h, cfg.x0, cfg.alpha, cfg.n_paths,
                              pi_h, cfg.seed, workers)
    var = _variance_reference(cfg, model, h, pi_h, workers)
    rep = ks_to_normal(batch.samples, var["value"], slack=cfg.slack)
    rows = [{"tau": cfg.tau, "alpha": cfg.alpha, "n_paths": cfg.n_paths,
             "statistic": rep.statistic, "threshold": rep.pass_threshold,
             "passed": int(rep.passed), "variance": var["value"],
             "mean_Z": float(batch.samples.mean()), "var_Z": float(batch.samples.var(ddof=1)),
             "seed": cfg.seed}]
    meta = {"ks": rep.as_dict(), "variance": var, "batch": batch.metadata(),
            "pi_h": pi_h.as_dict()}
    return rows, list(rows[0]), meta


def _exp_strong_order(cfg, model, h, fs, workers):
    pts = strong_error_profile(model, cfg.taus, cfg.tau_ref, cfg.horizon, cfg.x0, cfg.n_paths,
                               cfg.seed, workers=workers)
    fit = fit_order([p for p in pts if p[1] > 0]) if sum(p[1] > 0 for p in pts) >= 3 else None
    rows = [{"tau": t, "rms_error": e, "tau_ref": cfg.tau_ref, "n_paths": cfg.n_paths}
            for t, e in pts]
    return rows, ["tau", "rms_error", "tau_ref", "n_paths"], \
        {"fit": None if fit is None else fit.as_dict()}


def _exp_moment_scan(cfg, model, h, fs, workers):
    curve = moment_profile(model, BemConfig(cfg.tau), cfg.x0, cfg.n_steps, cfg.n_paths,
                           cfg.seed, cfg.p_list, workers)
    every = cfg.record_every or max(1, cfg.n_steps // 1000)
    rows = [{"step": n, "t": n * cfg.tau, "p": p, "moment": curve[n, j]}
            for n in range(0, cfg.n_steps + 1, every) for j, p in enumerate(cfg.p_list)]
    plateaus = {str(p): plateau_check(curve[:, j]).as_dict() for j, p in enumerate(cfg.p_list)}
    return rows, ["step", "t", "p", "moment"], {"plateau": plateaus,
                                               "passed": all(v["passed"] for v in plateaus.values())}


def _exp_contractivity(cfg, model, h, fs, workers):
    n = int(round(cfg.horizon / cfg.tau))
    msd = coupled_mean_square_distance(model, BemConfig(cfg.tau), cfg.x0, cfg.y0, n,
                                       cfg.n_paths, cfg.seed, workers)
    rows = [{"step": k, "t": k * cfg.tau, "msd": v} for k, v in enumerate(msd)]
    d0 = float(np.sum((np.array(cfg.x0) - np.array(cfg.y0)) ** 2))
    meta = {"monotone": bool(np.all(np.diff(msd) <= 0)), "final": float(msd[-1]),
            "initial_sq_distance": d0}
    return rows, ["step", "t", "msd"], meta


def _exp_bias_order(cfg, model, h, fs, workers):
    f = fs[0]
    res = invariant_bias_order(model, f, cfg.taus, cfg.tau_ref, cfg.horizon, cfg.n_paths,
                               cfg.seed, x0=cfg.x0, workers=workers)
    rows = [dict(e, f=f.name) for e in res.estimates]
    rows = [dict(r, significant=int(r["significant"])) for r in rows]
    return rows, ["tau", "value", "stderr", "bias", "noise", "significant", "f"], res.as_dict()


def _poisson_table(cfg, model, h, pi_h, workers):
    if cfg.table:
        return PoissonTable.from_csv(cfg.table)
    return solve_phi(model, h, pi_h, tuple(cfg.grid), cfg.t_trunc, cfg.quad_tau,
                     cfg.n_inner_paths, cfg.seed + 3, workers=workers)


def _exp_poisson_solve(cfg, model, h, fs, workers):
    pi_h = _reference_limit(cfg, model, h, workers)
    table = _poisson_table(cfg, model, h, pi_h.value, workers)
    rows = [{"x": x, "phi": p, "grad_phi": g}
            for x, p, g in zip(table.grid, table.phi, table.grad_phi)]
    return rows, ["x", "phi", "grad_phi"], {"table": table.metadata(), "pi_h": pi_h.as_dict()}


def _exp_poisson_check(cfg, model, h, fs, workers):
    pi_h = _reference_limit(cfg, model, h, workers)
    table = _poisson_table(cfg, model, h, pi_h.value, workers)
    x, res = poisson_residual_profile(table, model, h, pi_h.value)
    scale = float(np.max(np.abs(h.value(table.grid[:, None]) - pi_h.value)))
    worst = float(np.max(np.abs(res)))
    rows = [{"x": a, "residual": r} for a, r in zip(x, res)]
    meta = {"max_residual": worst, "scale": scale, "passed": worst < 0.05 * scale,
            "table": table.metadata(), "pi_h": pi_h.as_dict()}
    return rows, ["x", "residual"], meta


def _exp_variance(cfg, model, h, fs, workers):
    pi_h = _reference_limit(cfg, model, h, workers)
    table = _poisson_table(cfg, model, h, pi_h.value, workers)
    est = asymptotic_variance(model, table, BemConfig(cfg.tau), cfg.n_steps, cfg.burn_in,
                              cfg.seed, x0=cfg.x0)
    rows = [{"value": est.value, "stderr": est.stderr, "method": est.method,
             "n_steps": est.n_steps, "burn_in_steps": est.burn_in_steps, "clamped": est.clamped}]
    return rows, list(rows[0]), {"variance": est.as_dict(), "table": table.metadata(),
                                 "warnings": est.warnings}


def _exp_decomposition(cfg, model, h, fs, workers):
    pi_h = _reference_limit(cfg, model, h, workers)
    table = _poisson_table(cfg, model, h, pi_h.value, workers)
    rep = clt_decomposition(model, table, BemConfig(cfg.tau), h, pi_h, cfg.x0, cfg.n_paths,
                            cfg.seed, workers)
    rows = [{"path": i, "Z": z, "H": a, "R": r}
            for i, (z, a, r) in enumerate(zip(rep.Z_samples, rep.H_samples, rep.R_samples))]
    return rows, ["path", "Z", "H", "R"], {"summary": rep.as_dict(), "table": table.metadata(),
                                           "pi_h": pi_h.as_dict()}


_BODIES = {
    "ergodic-limit": _exp_ergodic_limit, "clt-table": _exp_clt_table,
    "deviations": _exp_deviations, "clt-ks": _exp_clt_ks, "strong-order": _exp_strong_order,
    "moment-scan": _exp_moment_scan, "contractivity": _exp_contractivity,
    "bias-order": _exp_bias_order, "poisson-solve": _exp_poisson_solve,
    "poisson-check": _exp_poisson_check, "variance": _exp_variance,
    "decomposition": _exp_decomposition,
}


def run(cfg, write=True):
    """Validate ``cfg``, run the experiment and write ``<out>/<experiment>.csv/.json``."""
    try:
        model, h, fs = validate(cfg)
    except (ConfigurationError, ContractViolation) as exc:
        log.error("invalid configuration: %s", exc)
        return RunResult(EXIT_INVALID, error={"error": "configuration", "message": str(exc)})
    _, model_warnings = cfg.build_model()
    workers = resolve_workers(cfg.workers)
    started = time.perf_counter()
    try:
        rows, columns, meta = _BODIES[cfg.experiment](cfg, model, h, fs, workers)
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        return _write_failure(cfg, EXIT_SOLVER, exc.as_dict(), write)
    except (ConfigurationError, ContractViolation) as exc:
        log.error("invalid configuration: %s", exc)
        return _write_failure(cfg, EXIT_INVALID, {"error": "configuration", "message": str(exc)},
                              write)
    build = build_id()
    meta = dict(meta, config=cfg.as_dict(), build=build, model_warnings=model_warnings,
                workers=workers, elapsed_s=time.perf_counter() - started)
    result = RunResult(EXIT_OK, rows=rows, meta=meta)
    if write:
        os.makedirs(cfg.out, exist_ok=True)
        stem = os.path.join(cfg.out, cfg.experiment)
        with open(stem + ".csv", "w") as fh:
            fh.write(render_csv(rows, columns, cfg, build))
        with open(stem + ".json", "w") as fh:
            json.dump(meta, fh, indent=2, default=_json_default, sort_keys=True)
        result.csv_path, result.json_path = stem + ".csv", stem + ".json"
    return result


def _write_failure(cfg, status, error, write):
    result = RunResult(status, error=error)
    if write:
        os.makedirs(cfg.out, exist_ok=True)
        path = os.path.join(cfg.out, cfg.experiment + ".json")
        with open(path, "w") as fh:
            json.dump({"config": cfg.as_dict(), "build": build_id(), **error}, fh, indent=2,
                      default=_json_default)
        result.json_path = path
    return result


def run_suite(suite, profile="desk", out=None, workers=None, seed=None, criteria=None):
    """Run the acceptance criteria of ``suite`` and return ``(status, report)``.

    ``suite`` is one of ``properties``, ``paper-figures``, ``paper-tables``
    or ``all``.
    """
    from .acceptance import SUITES, run_criteria

    if suite not in SUITES:
        raise ConfigurationError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    numbers = criteria or SUITES[suite]
    results = run_criteria(numbers, profile=profile, workers=workers, seed=seed)
    report = {"suite": suite, "profile": profile, "build": build_id(),
              "passed": all(r.passed for r in results),
              "criteria": [r.as_dict() for r in results]}
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, f"suite-{suite}.json"), "w") as fh:
            json.dump(report, fh, indent=2, default=_json_default)
    return (EXIT_OK if report["passed"] else EXIT_ACCEPTANCE), report


__all__ = ["ExperimentConfig", "EXPERIMENTS", "load_config", "normalize", "validate", "run",
           "run_suite", "RunResult", "build_id", "render_csv"]
