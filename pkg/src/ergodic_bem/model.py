"""SDE problem definitions, test functions and assumption probes.

Evaluators are batched: a state array of shape ``(n, d)`` maps to drift
``(n, d)``, diffusion ``(n, d, D)`` and drift Jacobian ``(n, d, d)``.  The
``eval_*`` methods also accept a single state of shape ``(d,)``.

Built-in coefficients are module-level functions (or partials of them) so
models pickle cleanly and can be shipped to worker processes.
"""

from dataclasses import dataclass, field
from functools import partial
import warnings

import numpy as np

from .errors import ConfigurationError, ContractViolation, DiagnosticError


def _as_batch(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ContractViolation(f"expected a state of dimension {dim}, got {x.shape}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != dim:
        raise ContractViolation(f"expected states of shape (n, {dim}), got {x.shape}")
    return x, False


def fd_step(x):
    """Central-difference step, scale-aware: max(1e-6, 1e-6 |x|)."""
    return np.maximum(1e-6, 1e-6 * np.abs(x))


def finite_difference_jacobian(func, x):
    """Central-difference Jacobian of a batched ``func: (n, d) -> (n, m)``.

    Returns shape ``(n, m, d)``.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    cols = []
    for j in range(d):
        h = fd_step(x[:, j])
        xp = x.copy()
        xm = x.copy()
        xp[:, j] += h
        xm[:, j] -= h
        cols.append((func(xp) - func(xm)) / (2.0 * h)[:, None])
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class SdeModel:
    """dX = b(X) dt + sigma(X) dW with X in R^d and W in R^D."""

    state_dim: int
    noise_dim: int
    drift: object
    diffusion: object
    name: str
    growth_hint: int = 1
    drift_jacobian: object = None
    # d sigma / dx, shape (n, d, D, d); only needed by the variational estimator
    diffusion_jacobian: object = None
    warnings: tuple = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.state_dim < 1 or self.noise_dim < 1:
            raise ConfigurationError("state_dim and noise_dim must be positive")
        if self.growth_hint < 1:
            raise ConfigurationError("growth_hint must be a positive integer")

    @property
    def superlinear(self):
        return self.growth_hint > 1

    def eval_drift(self, x):
        xb, single = _as_batch(x, self.state_dim)
        out = np.asarray(self.drift(xb), dtype=np.float64).reshape(xb.shape)
        return out[0] if single else out

    def eval_diffusion(self, x):
        xb, single = _as_batch(x, self.state_dim)
        out = np.asarray(self.diffusion(xb), dtype=np.float64)
        out = out.reshape(xb.shape[0], self.state_dim, self.noise_dim)
        return out[0] if single else out

    def eval_jacobian(self, x):
        xb, single = _as_batch(x, self.state_dim)
        if self.drift_jacobian is not None:
            out = np.asarray(self.drift_jacobian(xb), dtype=np.float64)
            out = out.reshape(xb.shape[0], self.state_dim, self.state_dim)
        else:
            out = finite_difference_jacobian(self.drift, xb)
        return out[0] if single else out

    def eval_diffusion_jacobian(self, x):
        xb, single = _as_batch(x, self.state_dim)
        if self.diffusion_jacobian is not None:
            out = np.asarray(self.diffusion_jacobian(xb), dtype=np.float64)
        else:
            d, D = self.state_dim, self.noise_dim
            flat = finite_difference_jacobian(
                lambda y: self.diffusion(y).reshape(y.shape[0], d * D), xb)
            out = flat.reshape(xb.shape[0], d, D, d)
        out = out.reshape(xb.shape[0], self.state_dim, self.noise_dim, self.state_dim)
        return out[0] if single else out


# -- built-in coefficients ---------------------------------------------------

def _cubic_drift(x, linear):
    return -(x * x * x + linear * x)


def _cubic_drift_jac(x, linear):
    return (-(3.0 * x * x + linear))[:, :, None]


def _sin_diffusion(x):
    return np.sin(x)[:, :, None]


def _sin_diffusion_jac(x):
    return np.cos(x)[:, :, None, None]


def _square_diffusion(x, scale):
    return (scale * x ** 2)[:, :, None]


def _square_diffusion_jac(x, scale):
    return (2.0 * scale * x)[:, :, None, None]


def _linear_drift(x, theta):
    return -theta * x


def _linear_drift_jac(x, theta):
    n, d = x.shape
    return np.broadcast_to(-theta * np.eye(d), (n, d, d)).copy()


def _const_diffusion(x, s):
    n, d = x.shape
    return np.broadcast_to(s * np.eye(d), (n, d, d)).copy()


def _zero_diffusion_jac(x):
    n, d = x.shape
    return np.zeros((n, d, d, d))


def example51():
    return SdeModel(
        state_dim=1, noise_dim=1, name="example51", growth_hint=3,
        drift=partial(_cubic_drift, linear=8.0),
        drift_jacobian=partial(_cubic_drift_jac, linear=8.0),
        diffusion=_sin_diffusion,
        diffusion_jacobian=_sin_diffusion_jac,
    )


def example52():
    return SdeModel(
        state_dim=1, noise_dim=1, name="example52", growth_hint=3,
        drift=partial(_cubic_drift, linear=10.0),
        drift_jacobian=partial(_cubic_drift_jac, linear=10.0),
        diffusion=partial(_square_diffusion, scale=0.5),
        diffusion_jacobian=partial(_square_diffusion_jac, scale=0.5),
        warnings=("diffusion 0.5*x^2 is unbounded and not globally Lipschitz; "
                  "the bounded-diffusion assumption does not hold",),
    )


def ornstein_uhlenbeck(theta=8.0, s=1.0, dim=1):
    if theta <= 0:
        raise ConfigurationError(f"ou requires theta > 0, got {theta}")
    if s < 0:
        raise ConfigurationError(f"ou requires s >= 0, got {s}")
    return SdeModel(
        state_dim=int(dim), noise_dim=int(dim), name="ou", growth_hint=1,
        drift=partial(_linear_drift, theta=float(theta)),
        drift_jacobian=partial(_linear_drift_jac, theta=float(theta)),
        diffusion=partial(_const_diffusion, s=float(s)),
        diffusion_jacobian=_zero_diffusion_jac,
        params={"theta": float(theta), "s": float(s), "dim": int(dim)},
    )


_MODEL_FACTORIES = {
    "example51": example51,
    "example52": example52,
    "ou": ornstein_uhlenbeck,
}


def register_model(name, factory):
    """Make a custom model factory available to :func:`builtin_model` and the CLI."""
    _MODEL_FACTORIES[name] = factory


def builtin_model(name, **params):
    try:
        factory = _MODEL_FACTORIES[name]
    except KeyError:
        known = ", ".join(sorted(_MODEL_FACTORIES))
        raise ConfigurationError(f"unknown model {name!r}; known models: {known}") from None
    try:
        model = factory(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for model {name!r}: {exc}") from None
    for msg in model.warnings:
        warnings.warn(f"{model.name}: {msg}", stacklevel=2)
    return model


# -- test functions ----------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """Scalar observable on R^d with optional analytic derivatives.

    ``value`` maps ``(n, d) -> (n,)``, ``gradient`` ``(n, d) -> (n, d)`` and
    ``hessian`` ``(n, d) -> (n, d, d)``.  Unbounded functions are allowed.
    """

    __test__ = False  # not a pytest class

    value: object
    name: str
    gradient: object = None
    hessian: object = None

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim <= 1:
            return np.asarray(self.value(np.atleast_1d(x)[None, :]))[0]
        return np.asarray(self.value(x))

    def grad(self, x):
        xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.gradient is not None:
            out = np.asarray(self.gradient(xb), dtype=np.float64)
        else:
            out = finite_difference_jacobian(lambda y: self.value(y)[:, None], xb)[:, 0, :]
        return out[0] if np.ndim(x) <= 1 else out

    def hess(self, x):
        xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.hessian is not None:
            out = np.asarray(self.hessian(xb), dtype=np.float64)
        else:
            out = finite_difference_jacobian(self.grad, xb)
        return out[0] if np.ndim(x) <= 1 else out

    def affine(self, scale, shift, name=None):
        """The function ``scale * self + shift`` (derivatives scale accordingly)."""
        return TestFunction(
            value=partial(_affine_value, self.value, scale, shift),
            gradient=None if self.gradient is None else partial(_scaled, self.gradient, scale),
            hessian=None if self.hessian is None else partial(_scaled, self.hessian, scale),
            name=name or f"{scale}*{self.name}+{shift}",
        )


def _affine_value(f, scale, shift, x):
    return scale * f(x) + shift


def _scaled(f, scale, x):
    return scale * f(x)


def _first_axis_hessian(second, x):
    n, d = x.shape
    out = np.zeros((n, d, d))
    out[:, 0, 0] = second(x[:, 0])
    return out


def _first_axis_gradient(first, x):
    out = np.zeros_like(x)
    out[:, 0] = first(x[:, 0])
    return out


def _on_first(f, x):
    return f(x[:, 0])


def _const_value(c, x):
    return np.full(x.shape[0], float(c))


def _zero_grad(x):
    return np.zeros_like(x)


def _zero_hess(x):
    n, d = x.shape
    return np.zeros((n, d, d))


def _norm_power_value(p, x):
    return np.sum(x * x, axis=1) ** (p // 2)


def _norm_power_grad(p, x):
    r2 = np.sum(x * x, axis=1)
    return (p * r2 ** (p // 2 - 1))[:, None] * x


def _norm_power_hess(p, x):
    n, d = x.shape
    r2 = np.sum(x * x, axis=1)
    k = p // 2
    eye = np.broadcast_to(np.eye(d), (n, d, d))
    out = (p * r2 ** (k - 1))[:, None, None] * eye
    if k >= 2:
        out = out + (p * (p - 2) * r2 ** (k - 2))[:, None, None] * x[:, :, None] * x[:, None, :]
    return out


def _scalar_fn(f, df, d2f, name):
    return TestFunction(
        value=partial(_on_first, f),
        gradient=partial(_first_axis_gradient, df),
        hessian=partial(_first_axis_hessian, d2f),
        name=name,
    )


def _sin1(u):
    return np.sin(u) + 1.0


def _neg_sin(u):
    return -np.sin(u)


def _neg_cos(u):
    return -np.cos(u)


def _ident(u):
    return u


def _one(u):
    return np.ones_like(u)


def _zero(u):
    return np.zeros_like(u)


def _pow5(u):
    return u ** 5


def _d_pow5(u):
    return 5.0 * u ** 4


def _d2_pow5(u):
    return 20.0 * u ** 3


def _sin6(u):
    return np.sin(u ** 6)


def _d_sin6(u):
    return 6.0 * u ** 5 * np.cos(u ** 6)


def _d2_sin6(u):
    return 30.0 * u ** 4 * np.cos(u ** 6) - 36.0 * u ** 10 * np.sin(u ** 6)


def _norm_power(p):
    return TestFunction(value=partial(_norm_power_value, p), gradient=partial(_norm_power_grad, p),
                        hessian=partial(_norm_power_hess, p), name=f"x{p}")


def builtin_test_function(name, **params):
    """Test functions by identifier.

    Scalar-argument ones (``x``, ``x5``, ``sin_plus_one``, ``cos``, ``sin_x6``)
    act on the first coordinate; ``x2``/``x4`` are powers of the Euclidean norm.
    """
    if name == "const":
        c = float(params.get("c", 1.0))
        return TestFunction(value=partial(_const_value, c), gradient=_zero_grad,
                            hessian=_zero_hess, name="const")
    table = {
        "x": lambda: _scalar_fn(_ident, _one, _zero, "x"),
        "x2": lambda: _norm_power(2),
        "x4": lambda: _norm_power(4),
        "x5": lambda: _scalar_fn(_pow5, _d_pow5, _d2_pow5, "x5"),
        "sin_plus_one": lambda: _scalar_fn(_sin1, np.cos, _neg_sin, "sin_plus_one"),
        "cos": lambda: _scalar_fn(np.cos, _neg_sin, _neg_cos, "cos"),
        "sin_x6": lambda: _scalar_fn(_sin6, _d_sin6, _d2_sin6, "sin_x6"),
    }
    if name not in table:
        raise ConfigurationError(
            f"unknown test function {name!r}; known: const, {', '.join(sorted(table))}")
    return table[name]()


# -- assumption probes -------------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    c1_hat: float
    sigma_sup_hat: float
    sigma_lip_hat: float
    n_probes: int
    probe_radius: float
    dissipativity_dominates: bool
    warnings: tuple = ()

    def as_dict(self):
        return {
            "c1_hat": self.c1_hat,
            "sigma_sup_hat": self.sigma_sup_hat,
            "sigma_lip_hat": self.sigma_lip_hat,
            "n_probes": self.n_probes,
            "probe_radius": self.probe_radius,
            "dissipativity_dominates": self.dissipativity_dominates,
            "warnings": list(self.warnings),
        }


def probe_pairs(n_probes, probe_radius, dim, seed):
    """Point pairs drawn uniformly from the ball of radius ``probe_radius``."""
    rng = np.random.default_rng(seed)

    def ball(n):
        direction = rng.standard_normal((n, dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = probe_radius * rng.random(n) ** (1.0 / dim)
        return direction * radius[:, None]

    return ball(n_probes), ball(n_probes)


def estimate_assumptions(model, n_probes=1000, probe_radius=3.0, seed=0):
    """Empirical dissipativity and diffusion bounds on a ball.

    ``c1_hat`` is the minimum over probed pairs of
    ``-<u-v, b(u)-b(v)> / |u-v|^2``; the Lipschitz and sup estimates of sigma
    use the Hilbert-Schmidt norm.  These are estimates on the probed region,
    not global certificates.
    """
    if n_probes < 100:
        raise ContractViolation(f"n_probes must be >= 100, got {n_probes}")
    if not probe_radius > 0:
        raise ContractViolation(f"probe_radius must be positive, got {probe_radius}")
    u, v = probe_pairs(n_probes, probe_radius, model.state_dim, seed)
    bu, bv = model.eval_drift(u), model.eval_drift(v)
    for pts, vals in ((u, bu), (v, bv)):
        bad = ~np.all(np.isfinite(vals), axis=1)
        if bad.any():
            point = pts[np.argmax(bad)]
            raise DiagnosticError(f"drift is not finite at probe point {point.tolist()}", point)
    delta = u - v
    dist2 = np.sum(delta * delta, axis=1)
    keep = dist2 > 0
    ratio = -np.sum(delta * (bu - bv), axis=1)[keep] / dist2[keep]
    su, sv = model.eval_diffusion(u), model.eval_diffusion(v)
    hs_u = np.sqrt(np.sum(su * su, axis=(1, 2)))
    hs_v = np.sqrt(np.sum(sv * sv, axis=(1, 2)))
    dsig = np.sqrt(np.sum((su - sv) ** 2, axis=(1, 2)))[keep] / np.sqrt(dist2[keep])
    c1 = float(ratio.min())
    lip = float(dsig.max())
    return AssumptionReport(
        c1_hat=c1,
        sigma_sup_hat=float(max(hs_u.max(), hs_v.max())),
        sigma_lip_hat=lip,
        n_probes=int(n_probes),
        probe_radius=float(probe_radius),
        dissipativity_dominates=bool(c1 > 7.5 * lip ** 2),
        warnings=tuple(model.warnings),
    )


def dissipativity_rate(model, probe_radius=3.0, seed=0):
    """c1_hat used as a mixing-rate proxy for burn-in and truncation defaults."""
    c1 = estimate_assumptions(model, 1000, probe_radius, seed).c1_hat
    if not c1 > 0:
        raise ConfigurationError(f"model {model.name} is not dissipative on the probe ball "
                                 f"(c1_hat={c1:.4g})")
    return c1


def mixing_time(model, factor=3.0):
    return factor / dissipativity_rate(model)


__all__ = [
    "SdeModel", "TestFunction", "AssumptionReport", "builtin_model", "register_model",
    "builtin_test_function", "estimate_assumptions", "probe_pairs", "finite_difference_jacobian",
    "dissipativity_rate", "mixing_time", "example51", "example52", "ornstein_uhlenbeck",
]
