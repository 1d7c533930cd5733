"""Gridded solutions of the Poisson equation ``L phi = h - pi(h)`` for 1-D
models, the generator ``L``, the asymptotic CLT variance
``pi(|sigma^T grad phi|^2)`` and the martingale/remainder split ``Z = H + R``.

``phi(x) = -int_0^T E(h(X^x(t)) - pi(h)) dt`` is computed by Monte Carlo over
inner BEM paths.  All grid points share the same inner increments (common
random numbers), which keeps finite differences of ``phi`` smooth.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigurationError, ContractViolation, SolverError
from .ergodic import deviation_scale, steps_for
from .integrator import (BemConfig, NoiseFeed, check_step_size, run_block, _bem_rows,
                         _initial_block)
from .model import dissipativity_rate
from .parallel import map_blocks, path_blocks
from .rng import derive_stream
from .stats import batch_means_stderr
from .summation import CompensatedSum, compensated_total

TARGET_ROWS = 16384
BOUNDARY_EXCLUDE = 5


def uniform_grid(a, b, n_grid):
    if not b > a or n_grid < 3:
        raise ConfigurationError(f"grid needs a < b and at least 3 points, got [{a}, {b}] x {n_grid}")
    return np.linspace(float(a), float(b), int(n_grid))


@dataclass
class PoissonTable:
    grid: np.ndarray
    phi: np.ndarray
    grad_phi: np.ndarray
    t_trunc: float
    quad_tau: float
    n_inner_paths: int
    pi_h_used: float
    seed: int = 0
    h_id: str = ""
    model_id: str = ""
    phi_stderr: np.ndarray = None
    truncation_bound: float = 0.0
    gradient_check: dict = field(default_factory=dict)

    @property
    def spacing(self):
        return float(self.grid[1] - self.grid[0])

    @classmethod
    def from_function(cls, grid, phi, grad_phi=None, pi_h=0.0, h_id="", model_id=""):
        """Tabulate a known ``phi`` (and optionally its exact gradient)."""
        grid = np.asarray(grid, dtype=np.float64)
        values = np.asarray(phi(grid), dtype=np.float64)
        grads = (np.gradient(values, grid[1] - grid[0]) if grad_phi is None
                 else np.asarray(grad_phi(grid), dtype=np.float64) * np.ones_like(grid))
        return cls(grid, values, grads, math.inf, 0.0, 0, float(pi_h), h_id=h_id,
                   model_id=model_id, gradient_check=_gradient_check(grid, values, grads))

    def grad_at(self, x):
        """Linear interpolation of ``grad_phi``; returns ``(values, n_clamped)``.

        States outside the grid use the end values and are counted.
        """
        x = np.asarray(x, dtype=np.float64)
        outside = int(np.count_nonzero((x < self.grid[0]) | (x > self.grid[-1])))
        return np.interp(x, self.grid, self.grad_phi), outside

    def metadata(self):
        return {"t_trunc": self.t_trunc, "quad_tau": self.quad_tau,
                "n_inner_paths": self.n_inner_paths, "seed": self.seed,
                "pi_h_used": self.pi_h_used, "h": self.h_id, "model": self.model_id,
                "truncation_bound": self.truncation_bound,
                "grid": [float(self.grid[0]), float(self.grid[-1]), int(self.grid.size)],
                "gradient_check": self.gradient_check}

    def to_csv(self, path):
        meta = self.metadata()
        with open(path, "w") as fh:
            for key in ("t_trunc", "quad_tau", "n_inner_paths", "seed", "pi_h_used", "h",
                        "model", "truncation_bound"):
                fh.write(f"# {key}: {meta[key]!r}\n")
            fh.write("x,phi,grad_phi\n")
            for row in zip(self.grid, self.phi, self.grad_phi):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path):
        meta = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    key, _, value = line[1:].partition(":")
                    meta[key.strip()] = value.strip()
                elif line.startswith("x,"):
                    continue
                elif line.strip():
                    rows.append([float(v) for v in line.split(",")])
        data = np.array(rows)
        unq = lambda k, d="": meta.get(k, repr(d)).strip("'\"")
        return cls(data[:, 0], data[:, 1], data[:, 2], float(unq("t_trunc", 0.0)),
                   float(unq("quad_tau", 0.0)), int(unq("n_inner_paths", 0)),
                   float(unq("pi_h_used", 0.0)), int(unq("seed", 0)), unq("h"), unq("model"),
                   None, float(unq("truncation_bound", 0.0)),
                   _gradient_check(data[:, 0], data[:, 1], data[:, 2]))


def _gradient_check(grid, phi, grad):
    """Compare ``grad`` with central differences of ``phi`` on interior points."""
    if grid.size < 5:
        return {}
    h = grid[1] - grid[0]
    central = (phi[2:] - phi[:-2]) / (2 * h)
    third = np.max(np.abs(np.diff(phi, 3))) / h ** 3
    return {"max_gap": float(np.max(np.abs(central - grad[1:-1]))),
            "tolerance": float(2 * h * h * third)}


# -- phi by inner Monte Carlo --------------------------------------------------

def _phi_task(model, cfg, h, pi_h, grid, n_steps, antithetic, master_seed, block):
    streams = [derive_stream(master_seed, i) for i in block]
    per = len(streams) * (2 if antithetic else 1)
    G = grid.size
    X0 = np.repeat(grid, per)[:, None]
    acc = CompensatedSum(G * per)
    last = {}

    def visit(k, X, dW):
        w = 0.5 if k == 0 or k == n_steps else 1.0
        dev = h.value(X) - pi_h
        acc.add(w * dev)
        if k == n_steps:
            last["dev"] = dev

    feed = NoiseFeed(streams, model.noise_dim, cfg.tau, antithetic=antithetic)
    try:
        run_block(model, cfg, X0, feed, n_steps, visit, repeat=G, path_offset=block[0])
    except SolverError as exc:
        if exc.row is not None:
            exc.args = (f"{exc.args[0]} (grid index {exc.row // per})",)
            exc.grid_index = exc.row // per
        raise
    integral = cfg.tau * acc.value.reshape(G, per)
    if not np.all(np.isfinite(integral)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(integral), axis=1))[0])
        raise SolverError(f"inner simulation is not finite at grid index {bad}", path=block[0])
    if antithetic:
        integral = 0.5 * (integral[:, 0::2] + integral[:, 1::2])
    tail = last["dev"].reshape(G, per).sum(axis=1)
    return integral, tail


def solve_phi(model, h, pi_h, grid_spec, t_trunc=None, quad_tau=2.0 ** -8,
              n_inner_paths=10_000, master_seed=0, antithetic=True, workers=None):
    """Tabulate ``phi`` on ``uniform_grid(*grid_spec)`` by inner BEM Monte Carlo.

    ``phi(x_j) = -quad_tau * sum_k w_k (mean h(X^{x_j}_k) - pi_h)`` with
    trapezoid weights ``w`` over ``t_trunc / quad_tau`` steps.  With
    ``antithetic`` the inner paths come in sign-flipped pairs sharing one
    stream, so ``n_inner_paths`` must be even.  ``grad_phi`` uses central
    differences (one-sided at the ends).  The reported truncation bound is
    ``max_j |mean h(X^{x_j}_T) - pi_h| / c1_hat``, the tail integral of an
    exponential decay at rate ``c1_hat``.
    """
    if model.state_dim != 1:
        raise ContractViolation("solve_phi supports 1-D models only")
    pi_h = float(getattr(pi_h, "value", pi_h))
    c1 = dissipativity_rate(model)
    if t_trunc is None:
        t_trunc = 3.0 / c1
    if t_trunc < 3.0 / c1 * (1 - 1e-12):
        raise ContractViolation(f"t_trunc={t_trunc} is below 3/c1_hat={3.0 / c1:.4g}")
    if not 0 < quad_tau <= t_trunc / 100:
        raise ContractViolation(f"quad_tau={quad_tau} must lie in (0, t_trunc/100]")
    n_steps = int(round(t_trunc / quad_tau))
    if abs(n_steps * quad_tau - t_trunc) > 1e-9 * t_trunc:
        raise ConfigurationError(f"t_trunc={t_trunc} is not a multiple of quad_tau={quad_tau}")
    if antithetic and n_inner_paths % 2:
        raise ConfigurationError("antithetic inner paths need an even n_inner_paths")
    cfg = BemConfig(quad_tau)
    check_step_size(model, cfg)
    grid = uniform_grid(*grid_spec)
    n_streams = n_inner_paths // 2 if antithetic else n_inner_paths
    per_stream = 2 if antithetic else 1
    block = max(1, TARGET_ROWS // (grid.size * per_stream))
    parts = map_blocks(_phi_task, path_blocks(n_streams, block),
                       (model, cfg, h, pi_h, grid, n_steps, antithetic, master_seed), workers)
    integrals = np.concatenate([p[0] for p in parts], axis=1)
    tail = sum(p[1] for p in parts) / n_inner_paths
    phi = -integrals.mean(axis=1)
    se = integrals.std(axis=1, ddof=1) / math.sqrt(integrals.shape[1]) \
        if integrals.shape[1] > 1 else np.zeros_like(phi)
    grad = np.gradient(phi, grid[1] - grid[0])
    return PoissonTable(grid, phi, grad, float(t_trunc), float(quad_tau), int(n_inner_paths),
                        pi_h, int(master_seed), h.name, model.name, se,
                        float(np.max(np.abs(tail)) / c1), _gradient_check(grid, phi, grad))


# -- generator and residual ------------------------------------------------------

def generator_apply(model, f_value, f_grad, f_hess, x):
    """``Lf(x) = <grad f, b> + 1/2 <hess f, sigma sigma^T>`` at a point or batch.

    ``f_grad`` / ``f_hess`` map ``(n, d)`` to ``(n, d)`` / ``(n, d, d)``;
    either may be None, in which case it is taken by finite differences of
    ``f_value`` (respectively ``f_grad``).
    """
    from .model import TestFunction

    f = TestFunction(f_value, "f", f_grad, f_hess)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    xb = np.atleast_2d(x).reshape(-1, model.state_dim)
    g = np.atleast_2d(f.grad(xb))
    H = f.hess(xb).reshape(xb.shape[0], model.state_dim, model.state_dim)
    b = model.eval_drift(xb)
    s = model.eval_diffusion(xb)
    a = np.einsum("nij,nkj->nik", s, s)
    out = np.einsum("ni,ni->n", g, b) + 0.5 * np.einsum("nij,nij->n", H, a)
    return float(out[0]) if single else out


def poisson_residual_profile(table, model, h, pi_h):
    """``L phi - (h - pi_h)`` at every interior point of the table.

    ``grad phi`` is taken from the table and ``phi''`` from second central
    differences; returns ``(x, residual)`` excluding the first and last
    :data:`BOUNDARY_EXCLUDE` points.
    """
    if table.grid.size < 101:
        raise ContractViolation(f"poisson_residual needs n_grid >= 101, got {table.grid.size}")
    pi_h = float(getattr(pi_h, "value", pi_h))
    dx = table.spacing
    phi = table.phi
    second = np.empty_like(phi)
    second[1:-1] = (phi[2:] - 2 * phi[1:-1] + phi[:-2]) / dx ** 2
    second[0], second[-1] = second[1], second[-2]
    xb = table.grid[:, None]
    b = model.eval_drift(xb)[:, 0]
    sig2 = np.sum(model.eval_diffusion(xb)[:, 0, :] ** 2, axis=1)
    L_phi = table.grad_phi * b + 0.5 * second * sig2
    res = L_phi - (h.value(xb) - pi_h)
    k = BOUNDARY_EXCLUDE
    return table.grid[k:-k], res[k:-k]


def poisson_residual(table, model, h, pi_h):
    """Max-abs residual of ``L phi = h - pi_h`` over the interior grid."""
    _, res = poisson_residual_profile(table, model, h, pi_h)
    return float(np.max(np.abs(res)))


# -- asymptotic variance ---------------------------------------------------------

@dataclass
class VarianceEstimate:
    value: float
    stderr: float
    method: str = "ergodic-average"
    n_steps: int = 0
    burn_in_steps: int = 0
    clamped: int = 0
    warnings: list = field(default_factory=list)

    def as_dict(self):
        return {"value": self.value, "stderr": self.stderr, "method": self.method,
                "n_steps": self.n_steps, "burn_in_steps": self.burn_in_steps,
                "clamped": self.clamped, "warnings": list(self.warnings)}


def _sigma_grad_sq(model, table, X):
    grad, outside = table.grad_at(X[:, 0])
    sig = model.eval_diffusion(X)  # (n, 1, D)
    return np.sum((sig[:, 0, :] * grad[:, None]) ** 2, axis=1), outside


def asymptotic_variance(model, table, cfg, n_steps=100_000, burn_in_steps=None, master_seed=0,
                        x0=None, n_batches=30, min_steps=100_000):
    """``pi(|sigma^T grad phi|^2)`` as an ergodic average along one BEM path.

    Burn-in defaults to ``3 / c1_hat`` in time; ``x0`` defaults to the grid
    centre.  The stderr comes from ``n_batches`` batch means.  States outside
    the table are clamped to its ends and counted in ``clamped``.
    """
    if model.state_dim != 1:
        raise ContractViolation("asymptotic_variance supports 1-D models only")
    if n_steps < min_steps:
        raise ContractViolation(f"n_steps must be >= {min_steps} after burn-in, got {n_steps}")
    if n_batches < 30:
        raise ContractViolation("at least 30 batches are required")
    check_step_size(model, cfg)
    if burn_in_steps is None:
        burn_in_steps = int(math.ceil(3.0 / dissipativity_rate(model) / cfg.tau))
    if x0 is None:
        x0 = [0.5 * (table.grid[0] + table.grid[-1])]
    series = np.empty(n_steps)
    clamped = [0]

    def visit(k, X, dW):
        if k >= burn_in_steps:
            v, outside = _sigma_grad_sq(model, table, X)
            series[k - burn_in_steps] = v[0]
            clamped[0] += outside

    feed = NoiseFeed([derive_stream(master_seed, 0)], model.noise_dim, cfg.tau)
    run_block(model, cfg, _initial_block(x0, 1, 1), feed, burn_in_steps + n_steps - 1, visit)
    value = max(0.0, float(compensated_total(series)) / n_steps)
    warnings = []
    if clamped[0]:
        warnings.append(f"{clamped[0]} of {n_steps} states left the table range and were clamped")
    return VarianceEstimate(value, batch_means_stderr(series, n_batches), "ergodic-average",
                            int(n_steps), int(burn_in_steps), clamped[0], warnings)


def grid_quadrature_variance(model, table, density):
    """``int |sigma grad phi|^2 p(x) dx`` for a known invariant density ``p``."""
    X = table.grid[:, None]
    v, _ = _sigma_grad_sq(model, table, X)
    p = np.asarray(density(table.grid), dtype=np.float64)
    value = float(np.trapezoid(v * p, table.grid) / np.trapezoid(p, table.grid))
    return VarianceEstimate(max(0.0, value), 0.0, "grid-quadrature")


# -- decomposition -----------------------------------------------------------------

@dataclass
class DecompositionReport:
    H_samples: np.ndarray
    R_samples: np.ndarray
    Z_samples: np.ndarray
    tau: float
    m_steps: int
    clamped: int = 0

    def identity_gap(self):
        """max_i |H_i + R_i - Z_i| / (1 + |Z_i|)."""
        return float(np.max(np.abs(self.H_samples + self.R_samples - self.Z_samples)
                            / (1 + np.abs(self.Z_samples))))

    def as_dict(self):
        return {"tau": self.tau, "m": self.m_steps, "n_paths": int(self.H_samples.size),
                "mean_abs_R": float(np.mean(np.abs(self.R_samples))),
                "var_H": float(np.var(self.H_samples, ddof=1)) if self.H_samples.size > 1 else 0.0,
                "clamped": self.clamped, "identity_gap": self.identity_gap()}


def _decomp_task(model, cfg, table, h, pi_h, x0, m, master_seed, block):
    ids = list(block)
    n = len(ids)
    pi_acc = CompensatedSum(n)
    mart = CompensatedSum(n)
    clamped = [0]

    def visit(k, X, dW):
        if k < m:
            pi_acc.add(h.value(X))
            grad, outside = table.grad_at(X[:, 0])
            clamped[0] += outside
            sig = model.eval_diffusion(X)[:, 0, :]
            mart.add(grad * np.sum(sig * dW, axis=1))

    feed = NoiseFeed([derive_stream(master_seed, i) for i in ids], model.noise_dim, cfg.tau)
    run_block(model, cfg, _initial_block(x0, n, 1), feed, m, visit, path_offset=ids[0])
    return pi_acc.value / m, mart.value, clamped[0]


def clt_decomposition(model, table, cfg, h, pi_h, x0, n_paths, master_seed, workers=None):
    """Split ``Z_{tau,2}(h)`` per path into ``H_tau`` and ``R_tau = Z - H_tau``.

    ``H_tau = -sqrt(tau) sum_{k<m} grad phi(X_k) sigma(X_k) dW_k`` with
    ``m = round(tau^-2)``, accumulated on the same increments as ``Z``.  Paths
    ``0..n_paths-1`` of ``master_seed`` are those used by
    :func:`~ergodic_bem.ergodic.sample_deviations`, so ``Z`` agrees with it.
    """
    if model.state_dim != 1:
        raise ContractViolation("clt_decomposition supports 1-D models only")
    check_step_size(model, cfg)
    pi_h = float(getattr(pi_h, "value", pi_h))
    m, _ = steps_for(cfg.tau, 2.0)
    parts = map_blocks(_decomp_task, path_blocks(n_paths),
                       (model, cfg, table, h, pi_h, x0, m, master_seed), workers)
    avgs = np.concatenate([p[0] for p in parts])
    mart = np.concatenate([p[1] for p in parts])
    Z = deviation_scale(cfg.tau, 2.0) * (avgs - pi_h)
    H = -math.sqrt(cfg.tau) * mart
    return DecompositionReport(H, Z - H, Z, cfg.tau, m, sum(p[2] for p in parts))


# -- first-variation gradient estimator -------------------------------------------

def _variation_task(model, cfg, h, points, n_steps, master_seed, block):
    streams = [derive_stream(master_seed, i) for i in block]
    per = 2 * len(streams)
    G, d = points.shape
    X = np.repeat(points, per, axis=0)
    eta = np.tile(np.eye(d), (G * per, 1, 1))
    acc = CompensatedSum((G * per, d))
    feed = NoiseFeed(streams, model.noise_dim, cfg.tau, antithetic=True)
    for k in range(n_steps + 1):
        w = 0.5 if k in (0, n_steps) else 1.0
        acc.add(w * np.einsum("ni,nic->nc", h.grad(X).reshape(-1, d), eta))
        if k == n_steps:
            break
        dW = np.tile(feed.next(), (G, 1))
        dsig = model.eval_diffusion_jacobian(X).reshape(-1, d, model.noise_dim, d)
        noise = np.einsum("nijl,nlc,nj->nic", dsig, eta, dW)
        X, _, _ = _bem_rows(model, cfg, X, dW)
        J = np.eye(d)[None] - cfg.tau * model.eval_jacobian(X).reshape(-1, d, d)
        eta = np.linalg.solve(J, eta + noise)
    vals = cfg.tau * acc.value.reshape(G, per, d)
    return 0.5 * (vals[:, 0::2] + vals[:, 1::2])


def variational_gradient(model, h, points, t_trunc, quad_tau, n_inner_paths, master_seed,
                         workers=None):
    """``grad phi(x)`` via the first-variation process of the BEM chain.

    ``eta_{k+1} = (I - tau grad b(X_{k+1}))^{-1} (eta_k + grad sigma(X_k) eta_k dW_k)``
    is the exact derivative of the BEM map with respect to ``x``, so
    ``grad phi(x) = -quad_tau sum_k w_k E[grad h(X_k)^T eta_k]`` (trapezoid
    weights).  Returns ``(gradients (n, d), stderr (n, d))``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != model.state_dim:
        points = points.reshape(-1, model.state_dim)
    if n_inner_paths % 2:
        raise ConfigurationError("n_inner_paths must be even (antithetic pairs)")
    n_steps = int(round(t_trunc / quad_tau))
    cfg = BemConfig(quad_tau)
    check_step_size(model, cfg)
    block = max(1, TARGET_ROWS // (2 * points.shape[0] * max(1, model.state_dim ** 2)))
    parts = map_blocks(_variation_task, path_blocks(n_inner_paths // 2, block),
                       (model, cfg, h, points, n_steps, master_seed), workers)
    vals = np.concatenate(parts, axis=1)
    grad = -vals.mean(axis=1)
    se = vals.std(axis=1, ddof=1) / math.sqrt(vals.shape[1]) if vals.shape[1] > 1 \
        else np.zeros_like(grad)
    return grad, se


__all__ = [
    "uniform_grid", "PoissonTable", "VarianceEstimate", "DecompositionReport", "solve_phi",
    "generator_apply", "poisson_residual", "poisson_residual_profile", "asymptotic_variance",
    "grid_quadrature_variance", "clt_decomposition", "variational_gradient",
]
