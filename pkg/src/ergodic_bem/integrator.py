"""Backward Euler-Maruyama steps and path simulation.

The implicit step solves ``y - tau*b(y) = x + sigma(x) dW`` by damped Newton.
All solvers are batched over rows; each row is iterated only while its own
residual is above tolerance, so a path's result never depends on which other
paths share its batch.
"""

from dataclasses import dataclass, replace
from math import gcd

import numpy as np

from .errors import ConfigurationError, ContractViolation, SolverError
from .parallel import map_blocks, path_blocks
from .rng import aggregate_increments, block_normals, derive_stream

# Steps of noise drawn per stream per refill; fixed so results never depend on it.
NOISE_CHUNK = 1024


@dataclass(frozen=True)
class BemConfig:
    tau: float
    newton_rtol: float = 1e-12
    newton_max_iter: int = 50
    damping_min: float = 2.0 ** -20

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if not self.newton_rtol > 0:
            raise ConfigurationError("newton_rtol must be positive")
        if self.newton_max_iter < 1:
            raise ConfigurationError("newton_max_iter must be >= 1")
        if not 0 < self.damping_min <= 1:
            raise ConfigurationError("damping_min must lie in (0, 1]")

    def tolerance(self, rhs):
        """Residual tolerance per row: newton_rtol * (1 + |rhs|)."""
        return self.newton_rtol * (1.0 + np.linalg.norm(rhs, axis=-1))

    def with_tau(self, tau):
        return replace(self, tau=float(tau))

    def as_dict(self):
        return {"tau": self.tau, "newton_rtol": self.newton_rtol,
                "newton_max_iter": self.newton_max_iter, "damping_min": self.damping_min}


def check_step_size(model, cfg):
    if model.superlinear and cfg.tau >= 1:
        raise ConfigurationError(
            f"tau={cfg.tau} refused for super-linear model {model.name}: tau must be < 1")


@dataclass
class StepOutcome:
    state: np.ndarray
    iterations: np.ndarray
    residual_norm: np.ndarray


@dataclass
class SolverStats:
    """Newton bookkeeping aggregated over steps and paths."""

    steps: int = 0
    solves: int = 0
    total_iterations: int = 0
    max_iterations: int = 0
    max_residual: float = 0.0

    def record(self, iterations, residual):
        self.steps += 1
        self.solves += int(iterations.size)
        self.total_iterations += int(iterations.sum())
        if iterations.size:
            self.max_iterations = max(self.max_iterations, int(iterations.max()))
            self.max_residual = max(self.max_residual, float(residual.max()))

    def merge(self, other):
        self.steps = max(self.steps, other.steps)
        self.solves += other.solves
        self.total_iterations += other.total_iterations
        self.max_iterations = max(self.max_iterations, other.max_iterations)
        self.max_residual = max(self.max_residual, other.max_residual)
        return self

    def as_dict(self):
        mean = self.total_iterations / self.solves if self.solves else 0.0
        return {"solves": self.solves, "mean_newton_iterations": mean,
                "max_newton_iterations": self.max_iterations,
                "max_residual": self.max_residual}


def _residual(model, tau, y, rhs):
    return y - tau * model.drift(y) - rhs


def _row_norm(F):
    if F.shape[1] == 1:
        return np.abs(F[:, 0])
    return np.linalg.norm(F, axis=1)


def _newton_direction(model, tau, y, F):
    d = y.shape[1]
    jac = model.drift_jacobian(y) if model.drift_jacobian is not None else model.eval_jacobian(y)
    if d == 1:
        return F / (1.0 - tau * jac[:, 0, :])
    J = np.eye(d)[None, :, :] - tau * jac
    return np.linalg.solve(J, F[:, :, None])[:, :, 0]


def solve_implicit(model, cfg, rhs, guess):
    """Rows ``y`` with ``|y - tau*b(y) - rhs| <= tol`` by damped Newton.

    Returns ``(y, iterations, residual_norm)``.  Damping halves the Newton
    step until the residual norm decreases; a row whose damping factor falls
    below ``cfg.damping_min`` or that exhausts ``newton_max_iter`` raises
    :class:`SolverError`.
    """
    tau = cfg.tau
    y = np.array(guess, dtype=np.float64)
    F = _residual(model, tau, y, rhs)
    r = _row_norm(F)
    tol = cfg.tolerance(rhs)
    iters = np.zeros(y.shape[0], dtype=np.int64)
    if not np.all(np.isfinite(r)):
        # non-finite predictor (explicit step overflowed): restart from rhs
        bad = ~np.isfinite(r)
        y[bad] = rhs[bad]
        F[bad] = _residual(model, tau, y[bad], rhs[bad])
        r[bad] = _row_norm(F[bad])
        if not np.all(np.isfinite(r)):
            raise SolverError("drift is not finite at the implicit-step start point",
                              residual=float("inf"),
                              row=int(np.flatnonzero(~np.isfinite(r))[0]))
    active = np.flatnonzero(r > tol)
    for _ in range(cfg.newton_max_iter):
        if active.size == 0:
            break
        full = active.size == y.shape[0]
        if full:
            ya, Fa, ra, rhs_a = y, F, r, rhs
        else:
            ya, Fa, ra, rhs_a = y[active], F[active], r[active], rhs[active]
        step = _newton_direction(model, tau, ya, Fa)
        lam = np.ones(active.size)
        trial = ya - step
        Ft = _residual(model, tau, trial, rhs_a)
        rt = _row_norm(Ft)
        worse = ~(rt < ra)
        while worse.any():
            idx = np.flatnonzero(worse)
            lam[idx] *= 0.5
            if np.any(lam[idx] < cfg.damping_min):
                raise SolverError(
                    "Newton damping exhausted without decreasing the residual",
                    residual=float(np.max(ra[idx])),
                    row=int(active[idx[np.argmin(lam[idx])]]))
            trial[idx] = ya[idx] - lam[idx, None] * step[idx]
            Ft[idx] = _residual(model, tau, trial[idx], rhs_a[idx])
            rt[idx] = _row_norm(Ft[idx])
            worse[idx] = ~(rt[idx] < ra[idx])
        if full:
            y, F, r = trial, Ft, rt
            iters += 1
        else:
            y[active], F[active], r[active] = trial, Ft, rt
            iters[active] += 1
        active = active[rt > tol[active]]
    if active.size:
        raise SolverError(f"Newton did not converge in {cfg.newton_max_iter} iterations",
                          residual=float(np.max(r[active])), row=int(active[0]))
    return y, iters, r


def _bem_rows(model, cfg, x, dW):
    sig = model.diffusion(x)
    rhs = x + np.einsum("nij,nj->ni", sig, dW) if model.noise_dim > 1 or model.state_dim > 1 \
        else x + sig[:, :, 0] * dW
    with np.errstate(over="ignore", invalid="ignore"):
        guess = rhs + cfg.tau * model.drift(x)
    return solve_implicit(model, cfg, rhs, guess)


def bem_step(model, cfg, x, dW):
    """One implicit step ``y = x + tau*b(y) + sigma(x) dW``.

    ``x`` may be one state ``(d,)`` or a batch ``(n, d)`` with ``dW`` of
    matching shape ``(D,)`` / ``(n, D)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    dWb = np.atleast_2d(np.asarray(dW, dtype=np.float64))
    y, it, res = _bem_rows(model, cfg, xb, dWb)
    if single:
        return StepOutcome(y[0], it[0], res[0])
    return StepOutcome(y, it, res)


def em_step(model, tau, x, dW):
    """Explicit Euler-Maruyama step ``x + tau*b(x) + sigma(x) dW``."""
    if not tau > 0:
        raise ContractViolation(f"tau must be positive, got {tau}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    dWb = np.atleast_2d(np.asarray(dW, dtype=np.float64))
    with np.errstate(over="ignore", invalid="ignore"):
        out = xb + tau * model.drift(xb) + np.einsum("nij,nj->ni", model.diffusion(xb), dWb)
    return out[0] if single else out


# -- batched path driver -----------------------------------------------------

class NoiseFeed:
    """Serves per-step increments ``(P, D)`` for a block of paths.

    With ``antithetic=True`` the block holds ``2*len(streams)`` paths: path
    ``2j`` uses stream ``j`` and path ``2j+1`` its negation.
    """

    def __init__(self, streams, noise_dim, tau, antithetic=False, chunk=NOISE_CHUNK):
        self.streams = streams
        self.noise_dim = noise_dim
        self.scale = np.sqrt(tau)
        self.antithetic = antithetic
        self.chunk = chunk
        self._buf = None
        self._pos = 0

    def _refill(self):
        z = block_normals(self.streams, self.chunk, self.noise_dim)
        if self.antithetic:
            z = np.stack([z, -z], axis=2).reshape(self.chunk, -1, self.noise_dim)
        self._buf = self.scale * z
        self._pos = 0

    def next(self):
        if self._buf is None or self._pos == self.chunk:
            self._refill()
        dW = self._buf[self._pos]
        self._pos += 1
        return dW

    def take(self, n):
        """The next ``n`` increments as one array ``(n, P, D)``."""
        out = []
        while n > 0:
            if self._buf is None or self._pos == self.chunk:
                self._refill()
            k = min(n, self.chunk - self._pos)
            out.append(self._buf[self._pos:self._pos + k])
            self._pos += k
            n -= k
        return np.concatenate(out, axis=0)


def run_block(model, cfg, x0, feed, n_steps, visitor=None, stats=None, repeat=1,
              path_offset=0):
    """Advance a block of paths ``n_steps`` BEM steps.

    ``visitor(k, X, dW)`` is called with the state at step ``k`` and the
    increment about to be applied (``dW`` is None at ``k == n_steps``).  With
    ``repeat > 1`` every increment is tiled ``repeat`` times along the row
    axis (common random numbers for several initial states per path).
    """
    X = np.array(x0, dtype=np.float64)
    for k in range(n_steps):
        dW = feed.next()
        if repeat > 1:
            dW = np.tile(dW, (repeat, 1))
        if visitor is not None:
            visitor(k, X, dW)
        try:
            X, it, res = _bem_rows(model, cfg, X, dW)
        except SolverError as exc:
            exc.step = k
            if exc.path is None:
                local = 0
                if exc.row is not None:
                    local = exc.row % (X.shape[0] // repeat)
                    if getattr(feed, "antithetic", False):
                        local //= 2
                exc.path = path_offset + local
            raise
        if stats is not None:
            stats.record(it, res)
    if visitor is not None:
        visitor(n_steps, X, None)
    return X


def _initial_block(x0, n, d):
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    if x0.shape[0] != d:
        raise ContractViolation(f"initial state has dimension {x0.shape[0]}, model needs {d}")
    return np.tile(x0, (n, 1))


def simulate_path(model, cfg, x0, n_steps, stream, visitor=None, record=False):
    """Single BEM path driven by ``stream``.

    ``visitor(k, state)`` sees every state including the initial one, which
    keeps memory O(1) for long horizons.  Returns the trajectory
    ``(n_steps + 1, d)`` when ``record`` is set, else the final state.
    """
    if n_steps < 0:
        raise ContractViolation("n_steps must be >= 0")
    check_step_size(model, cfg)
    traj = [] if record else None

    def visit(k, X, dW):
        if visitor is not None:
            visitor(k, X[0].copy())
        if record:
            traj.append(X[0].copy())

    feed = NoiseFeed([stream], model.noise_dim, cfg.tau)
    X = run_block(model, cfg, _initial_block(x0, 1, model.state_dim), feed, n_steps, visit)
    return np.array(traj) if record else X[0]


def simulate_coupled_pair(model, cfg, x0, y0, n_steps, stream, record=True):
    """Two BEM paths from ``x0`` and ``y0`` driven by the same increments.

    Returns ``(traj_x, traj_y)`` each of shape ``(n_steps + 1, d)``.
    """
    if n_steps < 0:
        raise ContractViolation("n_steps must be >= 0")
    check_step_size(model, cfg)
    d = model.state_dim
    start = np.vstack([_initial_block(x0, 1, d), _initial_block(y0, 1, d)])
    traj = []
    feed = NoiseFeed([stream], model.noise_dim, cfg.tau)
    run_block(model, cfg, start, feed, n_steps,
              lambda k, X, dW: traj.append(X.copy()) if record else None, repeat=2)
    traj = np.array(traj)
    return traj[:, 0, :], traj[:, 1, :]


def _contract_task(model, cfg, x0, y0, n_steps, master_seed, block):
    d = model.state_dim
    ids = list(block)
    n = len(ids)
    start = np.vstack([_initial_block(x0, n, d), _initial_block(y0, n, d)])
    sq = np.zeros(n_steps + 1)

    def visit(k, X, dW):
        diff = X[:n] - X[n:]
        sq[k] = np.sum(diff * diff)

    feed = NoiseFeed([derive_stream(master_seed, i) for i in ids], model.noise_dim, cfg.tau)
    run_block(model, cfg, start, feed, n_steps, visit, repeat=2, path_offset=ids[0])
    return sq


def coupled_mean_square_distance(model, cfg, x0, y0, n_steps, n_pairs, master_seed,
                                 workers=None):
    """``E|X^x_n - X^y_n|^2`` over ``n_pairs`` coupled pairs, for n = 0..n_steps."""
    check_step_size(model, cfg)
    parts = map_blocks(_contract_task, path_blocks(n_pairs),
                       (model, cfg, x0, y0, n_steps, master_seed), workers)
    total = np.zeros(n_steps + 1)
    for p in parts:
        total += p
    return total / n_pairs


def _moment_task(model, cfg, x0, n_steps, p_list, master_seed, block):
    ids = list(block)
    sums = np.zeros((n_steps + 1, len(p_list)))

    def visit(k, X, dW):
        r = np.sum(X * X, axis=1)
        for j, p in enumerate(p_list):
            sums[k, j] = np.sum(r ** (p / 2))

    feed = NoiseFeed([derive_stream(master_seed, i) for i in ids], model.noise_dim, cfg.tau)
    run_block(model, cfg, _initial_block(x0, len(ids), model.state_dim), feed, n_steps, visit,
              path_offset=ids[0])
    return sums


def moment_profile(model, cfg, x0, n_steps, n_paths, master_seed, p_list=(2, 4, 8),
                   workers=None):
    """``E|X_n|^p`` over ``n_paths`` paths for n = 0..n_steps, shape ``(n_steps+1, len(p))``."""
    check_step_size(model, cfg)
    parts = map_blocks(_moment_task, path_blocks(n_paths),
                       (model, cfg, x0, n_steps, tuple(p_list), master_seed), workers)
    total = np.zeros_like(parts[0])
    for part in parts:
        total += part
    return total / n_paths


# -- strong self-convergence ---------------------------------------------------

def _ratio(tau, tau_ref, what):
    r = tau / tau_ref
    k = int(round(r))
    if k < 1 or abs(r - k) > 1e-9 * r:
        raise ConfigurationError(f"{what}={tau} is not an integer multiple of {tau_ref}")
    return k


def _strong_task(model, cfg_ref, ratios, n_ref, x0, master_seed, block):
    ids = list(block)
    n = len(ids)
    d = model.state_dim
    lcm = 1
    for r in ratios:
        lcm = lcm * r // gcd(lcm, r)
    chunk = lcm * max(1, NOISE_CHUNK // lcm)
    feed = NoiseFeed([derive_stream(master_seed, i) for i in ids], model.noise_dim, cfg_ref.tau,
                     chunk=chunk)
    cfgs = [cfg_ref.with_tau(cfg_ref.tau * r) for r in ratios]
    Xref = _initial_block(x0, n, d)
    Xc = [Xref.copy() for _ in ratios]
    sq = [np.zeros(n_ref // r + 1) for r in ratios]
    done = 0
    while done < n_ref:
        fine = feed.take(min(chunk, n_ref - done))
        coarse = [aggregate_increments(fine, r) for r in ratios]
        for j in range(fine.shape[0]):
            Xref, _, _ = _bem_rows(model, cfg_ref, Xref, fine[j])
            step = done + j + 1
            for li, r in enumerate(ratios):
                if step % r == 0:
                    Xc[li], _, _ = _bem_rows(model, cfgs[li], Xc[li], coarse[li][step // r - 1 - done // r])
                    diff = Xc[li] - Xref
                    sq[li][step // r] = np.sum(diff * diff)
        done += fine.shape[0]
    return sq


def strong_error_profile(model, taus, tau_ref, horizon_T, x0, n_paths, master_seed,
                         cfg=None, workers=None):
    """Sup over the coarse grid of the RMS gap to a fine-step BEM reference.

    Coarse increments are sums of the reference increments, so every level
    is driven by the same Brownian path.  Returns ``[(tau, error), ...]``.
    """
    cfg_ref = (cfg or BemConfig(tau_ref)).with_tau(tau_ref)
    check_step_size(model, cfg_ref)
    ratios = [_ratio(t, tau_ref, "tau") for t in taus]
    for t in taus:
        check_step_size(model, cfg_ref.with_tau(t))
        _ratio(horizon_T, t, "horizon_T")
    n_ref = _ratio(horizon_T, tau_ref, "horizon_T")
    parts = map_blocks(_strong_task, path_blocks(n_paths),
                       (model, cfg_ref, ratios, n_ref, x0, master_seed), workers)
    out = []
    for li, t in enumerate(taus):
        total = np.zeros_like(parts[0][li])
        for p in parts:
            total += p[li]
        out.append((float(t), float(np.sqrt(np.max(total / n_paths)))))
    return out


__all__ = [
    "BemConfig", "StepOutcome", "SolverStats", "bem_step", "em_step", "solve_implicit",
    "simulate_path", "simulate_coupled_pair", "coupled_mean_square_distance",
    "strong_error_profile", "moment_profile", "run_block", "NoiseFeed", "check_step_size", "NOISE_CHUNK",
]
