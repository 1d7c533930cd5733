"""Temporal averages of BEM paths, ergodic-limit estimates and the scaled
deviation statistic ``Z = tau^{-(alpha-1)/2} (Pi - pi_hat(h))``."""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigurationError, ContractViolation, ErgodicityCheckError
from .integrator import NoiseFeed, SolverStats, _initial_block, check_step_size, run_block
from .model import dissipativity_rate
from .parallel import map_blocks, path_blocks
from .rng import derive_seed, derive_stream
from .stats import OrderFit, fit_order, mean_and_stderr
from .summation import CompensatedSum


def steps_for(tau, alpha):
    """``(N, tau^-alpha)`` with N the nearest integer to ``tau^-alpha``."""
    if not 1 < alpha <= 2:
        raise ConfigurationError(f"alpha must lie in (1, 2], got {alpha}")
    exact = tau ** (-alpha)
    n = int(round(exact))
    if n < 2:
        raise ConfigurationError(f"tau={tau}, alpha={alpha} gives N={n} < 2 steps")
    return n, exact


def deviation_scale(tau, alpha):
    return tau ** (-(alpha - 1.0) / 2.0)


@dataclass
class ErgodicLimitEstimate:
    value: float
    stderr: float
    tau_fine: float
    horizon_T: float
    n_paths: int
    per_initial: list = field(default_factory=list)
    consistent: bool = True
    curves: dict = field(default_factory=dict)
    h_id: str = ""
    model_id: str = ""

    @classmethod
    def exact(cls, value, h_id=""):
        """A known ergodic limit (zero stderr), e.g. from symmetry."""
        return cls(float(value), 0.0, 0.0, math.inf, 0, h_id=h_id)

    def as_dict(self):
        return {"value": self.value, "stderr": self.stderr, "tau_fine": self.tau_fine,
                "horizon_T": self.horizon_T, "n_paths": self.n_paths,
                "per_initial": self.per_initial, "consistent": self.consistent,
                "h": self.h_id, "model": self.model_id}


@dataclass
class DeviationBatch:
    samples: np.ndarray
    alpha: float
    tau: float
    n_steps_used: int
    tau_pow: float
    pi_h_reference: float
    pi_h_stderr: float
    model_id: str
    h_id: str
    master_seed: int
    x0: list = field(default_factory=list)
    solver: dict = field(default_factory=dict)

    @property
    def systematic_bound(self):
        """Shift of every Z induced by one stderr of the reference limit."""
        return deviation_scale(self.tau, self.alpha) * self.pi_h_stderr

    def metadata(self):
        return {"alpha": self.alpha, "tau": self.tau, "N": self.n_steps_used,
                "tau_pow_alpha": self.tau_pow, "pi_h_ref": self.pi_h_reference,
                "pi_h_stderr": self.pi_h_stderr, "systematic_bound": self.systematic_bound,
                "model": self.model_id, "h": self.h_id, "seed": self.master_seed,
                "n_paths": int(self.samples.size), "solver": self.solver}


# -- block tasks ---------------------------------------------------------------

def _average_task(model, cfg, h, x0, n_avg, master_seed, block):
    ids = list(block)
    acc = CompensatedSum(len(ids))

    def visit(k, X, dW):
        if k < n_avg:
            acc.add(h.value(X))

    stats = SolverStats()
    feed = NoiseFeed([derive_stream(master_seed, i) for i in ids], model.noise_dim, cfg.tau)
    run_block(model, cfg, _initial_block(x0, len(ids), model.state_dim), feed, n_avg - 1,
              visit, stats, path_offset=ids[0])
    return acc.value / n_avg, stats


def _terminal_task(model, cfg, h, x0, n_steps, record_every, master_seed, block):
    ids = list(block)
    curve = {}

    def visit(k, X, dW):
        if record_every and k % record_every == 0:
            curve[k] = float(np.sum(h.value(X)))

    stats = SolverStats()
    feed = NoiseFeed([derive_stream(master_seed, i) for i in ids], model.noise_dim, cfg.tau)
    X = run_block(model, cfg, _initial_block(x0, len(ids), model.state_dim), feed, n_steps,
                  visit if record_every else None, stats, path_offset=ids[0])
    return h.value(X), curve, stats


def _time_average_task(model, cfg, f, x0, n_burn, n_avg, master_seed, block):
    ids = list(block)
    acc = CompensatedSum(len(ids))

    def visit(k, X, dW):
        if k >= n_burn:
            acc.add(f.value(X))

    feed = NoiseFeed([derive_stream(master_seed, i) for i in ids], model.noise_dim, cfg.tau)
    run_block(model, cfg, _initial_block(x0, len(ids), model.state_dim), feed,
              n_burn + n_avg - 1, visit, path_offset=ids[0])
    return acc.value / n_avg


def _merge_stats(parts):
    total = SolverStats()
    for s in parts:
        total.merge(s)
    return total


# -- operations ----------------------------------------------------------------

def temporal_average(model, cfg, h, x0, alpha, stream):
    """``(1/N) sum_{k=0}^{N-1} h(X_k)`` along one path, N = round(tau^-alpha)."""
    check_step_size(model, cfg)
    n, _ = steps_for(cfg.tau, alpha)
    acc = CompensatedSum(1)

    def visit(k, X, dW):
        if k < n:
            acc.add(h.value(X))

    feed = NoiseFeed([stream], model.noise_dim, cfg.tau)
    run_block(model, cfg, _initial_block(x0, 1, model.state_dim), feed, n - 1, visit)
    return float(acc.value[0] / n)


def temporal_averages(model, cfg, h, x0, alpha, n_paths, master_seed, workers=None):
    """Temporal averages of paths ``0..n_paths-1`` plus merged solver stats."""
    check_step_size(model, cfg)
    n, _ = steps_for(cfg.tau, alpha)
    parts = map_blocks(_average_task, path_blocks(n_paths),
                       (model, cfg, h, x0, n, master_seed), workers)
    return np.concatenate([p[0] for p in parts]), _merge_stats(p[1] for p in parts)


def estimate_ergodic_limit(model, cfg_fine, h, x0_list, horizon_T, n_paths, master_seed,
                           record_every=None, strict=False, workers=None):
    """Mean of ``h(X_N)`` at time ``horizon_T`` over independent paths.

    Each initial value gets its own ``n_paths`` paths; the returned value
    pools all of them.  Estimates from different initial values must agree
    within 4 joint standard errors, otherwise ``consistent`` is False (and
    :class:`ErgodicityCheckError` is raised when ``strict``).  With
    ``record_every`` the path-mean curve of ``h(X_n)`` is kept per initial
    value.
    """
    check_step_size(model, cfg_fine)
    c1 = dissipativity_rate(model)
    if math.exp(-c1 * horizon_T) >= 1e-10:
        raise ConfigurationError(
            f"horizon_T={horizon_T} too short: need exp(-c1*T) < 1e-10 with c1_hat={c1:.3g}")
    n_steps = int(round(horizon_T / cfg_fine.tau))
    if abs(n_steps * cfg_fine.tau - horizon_T) > 1e-9 * horizon_T:
        raise ConfigurationError(f"horizon_T={horizon_T} is not a multiple of tau={cfg_fine.tau}")
    all_vals, per_initial, curves = [], [], {}
    for idx, x0 in enumerate(x0_list):
        seed = derive_seed(master_seed, 1, idx)
        parts = map_blocks(_terminal_task, path_blocks(n_paths),
                           (model, cfg_fine, h, x0, n_steps, record_every, seed), workers)
        vals = np.concatenate([p[0] for p in parts])
        mean, se = mean_and_stderr(vals)
        per_initial.append({"x0": np.atleast_1d(x0).tolist(), "value": mean, "stderr": se,
                            "seed": seed})
        if record_every:
            steps = sorted(parts[0][1])
            curves[idx] = [(k, sum(p[1][k] for p in parts) / n_paths) for k in steps]
        all_vals.append(vals)
    value, stderr = mean_and_stderr(np.concatenate(all_vals))
    consistent = True
    for i in range(len(per_initial)):
        for j in range(i + 1, len(per_initial)):
            a, b = per_initial[i], per_initial[j]
            joint = math.hypot(a["stderr"], b["stderr"])
            if abs(a["value"] - b["value"]) > 4.0 * joint:
                consistent = False
    est = ErgodicLimitEstimate(value, stderr, cfg_fine.tau, horizon_T,
                               n_paths * len(x0_list), per_initial, consistent, curves,
                               h.name, model.name)
    if strict and not consistent:
        raise ErgodicityCheckError("ergodic-limit estimates depend on the initial value", est)
    return est


def sample_deviations(model, cfg, h, x0, alpha, n_paths, pi_h, master_seed, workers=None):
    """``Z_i = tau^{-(alpha-1)/2} (Pi_i - pi_hat(h))`` over independent paths."""
    n, exact = steps_for(cfg.tau, alpha)
    avgs, stats = temporal_averages(model, cfg, h, x0, alpha, n_paths, master_seed, workers)
    z = deviation_scale(cfg.tau, alpha) * (avgs - pi_h.value)
    return DeviationBatch(z, float(alpha), cfg.tau, n, exact, pi_h.value, pi_h.stderr,
                          model.name, h.name, int(master_seed), np.atleast_1d(x0).tolist(),
                          stats.as_dict())


@dataclass
class CltRow:
    tau: float
    alpha: float
    n_paths: int
    f_id: str
    f_mean: float
    f_stderr: float
    n_steps: int
    pi_h_ref: float
    pi_h_stderr: float
    seed: int
    h_id: str = ""


def clt_table(model, h, fs, alpha, taus, n_paths, x0, pi_h, master_seed, cfg=None,
              workers=None, batches=None):
    """``E f(Z_{tau,alpha}(h))`` with stderr, one row per (tau, f).

    All step sizes reuse path indices ``0..n_paths-1`` of ``master_seed``.
    """
    from .integrator import BemConfig

    taus = [float(t) for t in taus]
    if any(a < b for a, b in zip(taus, taus[1:])):
        raise ContractViolation("taus must be in descending order")
    if not isinstance(fs, (list, tuple)):
        fs = [fs]
    rows = []
    for tau in taus:
        c = (cfg or BemConfig(tau)).with_tau(tau)
        batch = sample_deviations(model, c, h, x0, alpha, n_paths, pi_h, master_seed, workers)
        if batches is not None:
            batches.append(batch)
        for f in fs:
            mean, se = mean_and_stderr(f.value(batch.samples[:, None]))
            rows.append(CltRow(tau, float(alpha), n_paths, f.name, mean, se, batch.n_steps_used,
                               pi_h.value, pi_h.stderr, int(master_seed), h.name))
    return rows


@dataclass
class BiasOrderResult:
    verdict: str  # "fitted" or "inconclusive"
    fit: OrderFit = None
    reference: tuple = (0.0, 0.0)
    estimates: list = field(default_factory=list)

    def as_dict(self):
        return {"verdict": self.verdict, "fit": None if self.fit is None else self.fit.as_dict(),
                "reference": list(self.reference), "estimates": self.estimates}


def time_average_estimate(model, cfg, f, horizon_T, n_paths, master_seed, x0=None,
                          burn_in_time=None, workers=None):
    """pi_tau(f) by per-path time averages over ``horizon_T`` after burn-in.

    Burn-in defaults to ``3 / c1_hat``.  Returns ``(mean, stderr)`` over paths.
    """
    check_step_size(model, cfg)
    if burn_in_time is None:
        burn_in_time = 3.0 / dissipativity_rate(model)
    n_burn = int(math.ceil(burn_in_time / cfg.tau))
    n_avg = max(1, int(round(horizon_T / cfg.tau)))
    if x0 is None:
        x0 = np.zeros(model.state_dim)
    parts = map_blocks(_time_average_task, path_blocks(n_paths),
                       (model, cfg, f, x0, n_burn, n_avg, master_seed), workers)
    return mean_and_stderr(np.concatenate(parts))


def invariant_bias_order(model, f, taus, tau_ref, horizon_T, n_paths, master_seed, x0=None,
                         cfg=None, workers=None, n_sigma=2.0):
    """Fit ``|pi_tau(f) - pi_ref(f)|`` against tau on a log-log scale.

    Points whose bias is within ``n_sigma`` joint standard errors of zero are
    Monte-Carlo noise; with fewer than three significant points the verdict is
    ``inconclusive`` rather than a failure.
    """
    from .integrator import BemConfig

    taus = [float(t) for t in taus]
    if tau_ref > min(taus) / 8:
        raise ContractViolation(f"tau_ref={tau_ref} must be <= min(taus)/8")
    base = cfg or BemConfig(tau_ref)
    ref = time_average_estimate(model, base.with_tau(tau_ref), f, horizon_T, n_paths,
                                derive_seed(master_seed, 2, 0), x0, workers=workers)
    estimates, significant = [], []
    for i, tau in enumerate(taus):
        mean, se = time_average_estimate(model, base.with_tau(tau), f, horizon_T, n_paths,
                                         derive_seed(master_seed, 2, i + 1), x0, workers=workers)
        bias = abs(mean - ref[0])
        noise = math.hypot(se, ref[1])
        sig = bias > n_sigma * noise and bias > 0
        estimates.append({"tau": tau, "value": mean, "stderr": se, "bias": bias,
                          "noise": noise, "significant": bool(sig)})
        if sig:
            significant.append((tau, bias))
    if len(significant) < 3:
        return BiasOrderResult("inconclusive", None, ref, estimates)
    return BiasOrderResult("fitted", fit_order(significant), ref, estimates)


__all__ = [
    "steps_for", "deviation_scale", "ErgodicLimitEstimate", "DeviationBatch", "CltRow",
    "BiasOrderResult", "temporal_average", "temporal_averages", "estimate_ergodic_limit",
    "sample_deviations", "clt_table", "time_average_estimate", "invariant_bias_order",
]
