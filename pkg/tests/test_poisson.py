import numpy as np
import pytest

from ergodic_bem.errors import ConfigurationError, ContractViolation
from ergodic_bem.integrator import BemConfig
from ergodic_bem.model import TestFunction, builtin_model, builtin_test_function
from ergodic_bem.poisson import (PoissonTable, asymptotic_variance, clt_decomposition,
                                 generator_apply, grid_quadrature_variance, poisson_residual,
                                 solve_phi, uniform_grid, variational_gradient)
from ergodic_bem.stats import ks_to_normal

THETA = 8.0
OU = builtin_model("ou", theta=THETA, s=1.0)
OU_QUIET = builtin_model("ou", theta=THETA, s=0.0)
EXAMPLE51 = builtin_model("example51")


def ou_trapezoid_phi(x, tau, t_trunc, theta=THETA):
    """Exact trapezoid sum of -tau * sum_k w_k E X_k for BEM on OU with h(x) = x.

    E X_k = x r^k with r = 1/(1 + theta tau); the weights are 1/2 at both ends.
    """
    n = int(round(t_trunc / tau))
    r = 1.0 / (1.0 + theta * tau)
    total = (1 - r ** (n + 1)) / (1 - r) - 0.5 - 0.5 * r ** n
    return -tau * total * np.asarray(x)


def test_uniform_grid_validation():
    np.testing.assert_array_equal(uniform_grid(-1, 1, 3), [-1.0, 0.0, 1.0])
    with pytest.raises(ConfigurationError):
        uniform_grid(1, 1, 10)


def test_constant_h_gives_zero_phi():
    h = builtin_test_function("const", c=1.7)
    table = solve_phi(EXAMPLE51, h, 1.7, (-2, 2, 21), t_trunc=1.0, quad_tau=2.0 ** -7,
                      n_inner_paths=20, workers=1)
    assert np.all(table.phi == 0.0)
    assert np.all(table.grad_phi == 0.0)


def test_ou_phi_matches_closed_form_mean():
    tau, t_trunc = 2.0 ** -10, 1.5
    table = solve_phi(OU, builtin_test_function("x"), 0.0, (-2, 2, 41), t_trunc=t_trunc,
                      quad_tau=tau, n_inner_paths=200, master_seed=1, workers=1)
    i = int(np.argmin(np.abs(table.grid - 1.0)))
    assert table.phi[i] == pytest.approx(-0.125, abs=1e-3)
    # antithetic pairs cancel the noise of a linear h exactly
    np.testing.assert_allclose(table.phi, ou_trapezoid_phi(table.grid, tau, t_trunc), atol=1e-12)
    np.testing.assert_allclose(table.grad_phi, -1 / THETA, atol=1e-3)
    assert table.truncation_bound < 1e-5


def test_phi_is_linear_in_h():
    h1, h2 = builtin_test_function("sin_plus_one"), builtin_test_function("x2")
    a, b = 2.0, -0.5
    combo = TestFunction(lambda x: a * h1.value(x) + b * h2.value(x), "combo")
    kw = dict(t_trunc=0.5, quad_tau=2.0 ** -8, n_inner_paths=100, master_seed=3, workers=1)
    t1 = solve_phi(EXAMPLE51, h1, 1.0, (-2, 2, 11), **kw)
    t2 = solve_phi(EXAMPLE51, h2, 0.0, (-2, 2, 11), **kw)
    tc = solve_phi(EXAMPLE51, combo, a * 1.0 + b * 0.0, (-2, 2, 11), **kw)
    expect = a * t1.phi + b * t2.phi
    assert np.all(np.abs(tc.phi - expect) <= 1e-10 * np.maximum(1.0, np.abs(expect)))


def test_example51_phi_vanishes_at_origin():
    table = solve_phi(EXAMPLE51, builtin_test_function("sin_plus_one"), 1.0, (-2, 2, 21),
                      t_trunc=1.0, quad_tau=2.0 ** -7, n_inner_paths=400, master_seed=4,
                      workers=1)
    i = int(np.argmin(np.abs(table.grid)))
    assert abs(table.phi[i]) <= 3 * table.phi_stderr[i]
    # odd dynamics and odd h - pi: phi is odd
    np.testing.assert_allclose(table.phi, -table.phi[::-1], atol=1e-12)


def test_solve_phi_preconditions():
    h = builtin_test_function("x")
    with pytest.raises(ContractViolation, match="t_trunc"):
        solve_phi(OU, h, 0.0, (-1, 1, 11), t_trunc=0.1, quad_tau=1e-4, n_inner_paths=10)
    with pytest.raises(ContractViolation, match="quad_tau"):
        solve_phi(OU, h, 0.0, (-1, 1, 11), t_trunc=1.0, quad_tau=0.05, n_inner_paths=10)
    with pytest.raises(ConfigurationError, match="even"):
        solve_phi(OU, h, 0.0, (-1, 1, 11), t_trunc=1.0, quad_tau=0.01, n_inner_paths=11)


def test_seed_determinism_of_phi():
    kw = dict(t_trunc=0.5, quad_tau=2.0 ** -8, n_inner_paths=40, master_seed=5)
    h = builtin_test_function("sin_plus_one")
    a = solve_phi(EXAMPLE51, h, 1.0, (-2, 2, 9), workers=1, **kw)
    b = solve_phi(EXAMPLE51, h, 1.0, (-2, 2, 9), workers=2, **kw)
    np.testing.assert_array_equal(a.phi, b.phi)


def test_generator_examples():
    const = builtin_test_function("const", c=3.0)
    assert generator_apply(EXAMPLE51, const.value, const.gradient, const.hessian, [0.7]) == 0.0
    sq = builtin_test_function("x2")
    s = 0.6
    ou = builtin_model("ou", theta=THETA, s=s)
    x = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(generator_apply(ou, sq.value, sq.gradient, sq.hessian, x),
                               -2 * THETA * x[:, 0] ** 2 + s ** 2, rtol=1e-12)
    lin = builtin_test_function("x")
    assert generator_apply(EXAMPLE51, lin.value, lin.gradient, lin.hessian, [1.0]) == -9.0


def test_generator_finite_difference_fallback():
    sq = builtin_test_function("x2")
    val = generator_apply(OU, sq.value, None, None, [0.5])
    assert val == pytest.approx(-2 * THETA * 0.25 + 1.0, rel=1e-4)


def test_residual_of_exact_ou_phi_vanishes():
    table = PoissonTable.from_function(np.linspace(-3, 3, 121), lambda x: -x / THETA,
                                       lambda x: -1 / THETA)
    assert poisson_residual(table, OU, builtin_test_function("x"), 0.0) < 1e-10


def test_residual_of_zero_phi_for_constant_h():
    table = PoissonTable.from_function(np.linspace(-3, 3, 121), np.zeros_like)
    assert poisson_residual(table, EXAMPLE51, builtin_test_function("const", c=2.0), 2.0) == 0.0


def test_residual_needs_fine_grid():
    table = PoissonTable.from_function(np.linspace(-3, 3, 50), np.zeros_like)
    with pytest.raises(ContractViolation):
        poisson_residual(table, OU, builtin_test_function("x"), 0.0)


def test_table_csv_round_trip(tmp_path):
    table = PoissonTable.from_function(np.linspace(-1, 1, 11), np.sin, np.cos, pi_h=0.25,
                                       h_id="sin", model_id="ou")
    path = tmp_path / "phi.csv"
    table.to_csv(path)
    back = PoissonTable.from_csv(path)
    np.testing.assert_array_equal(back.phi, table.phi)
    np.testing.assert_array_equal(back.grad_phi, table.grad_phi)
    assert (back.pi_h_used, back.h_id, back.model_id) == (0.25, "sin", "ou")
    assert path.read_text().splitlines()[8] == "x,phi,grad_phi"


def test_grad_at_counts_clamped_points():
    table = PoissonTable.from_function(np.linspace(-1, 1, 11), lambda x: x * x, lambda x: 2 * x)
    vals, outside = table.grad_at(np.array([-5.0, 0.5, 7.0]))
    np.testing.assert_allclose(vals, [-2.0, 1.0, 2.0])
    assert outside == 2


def test_variance_without_noise_is_zero():
    table = PoissonTable.from_function(np.linspace(-3, 3, 121), lambda x: -x / THETA,
                                       lambda x: -1 / THETA)
    est = asymptotic_variance(OU_QUIET, table, BemConfig(0.05), n_steps=100_000, master_seed=6)
    assert est.value == 0.0 and est.stderr == 0.0


def test_variance_of_exact_ou_gradient():
    table = PoissonTable.from_function(np.linspace(-3, 3, 121), lambda x: -x / THETA,
                                       lambda x: -1 / THETA)
    est = asymptotic_variance(OU, table, BemConfig(0.05), n_steps=100_000, master_seed=7)
    assert est.value == pytest.approx(1 / 64, rel=1e-12)
    assert est.clamped == 0
    with pytest.raises(ContractViolation):
        asymptotic_variance(OU, table, BemConfig(0.05), n_steps=10)


def test_grid_quadrature_variance_with_gaussian_density():
    table = PoissonTable.from_function(np.linspace(-2, 2, 201), lambda x: -x / THETA,
                                       lambda x: -1 / THETA)
    est = grid_quadrature_variance(OU, table, lambda x: np.exp(-THETA * x * x))
    assert est.value == pytest.approx(1 / 64, rel=1e-12)


def test_decomposition_without_noise_has_zero_martingale():
    table = PoissonTable.from_function(np.linspace(-3, 3, 121), lambda x: -x / THETA,
                                       lambda x: -1 / THETA)
    rep = clt_decomposition(OU_QUIET, table, BemConfig(0.1), builtin_test_function("x"), 0.0,
                            [1.0], 50, 8, workers=1)
    assert np.all(rep.H_samples == 0.0)
    assert rep.identity_gap() <= 1e-10


def test_decomposition_of_ou_with_exact_gradient():
    table = PoissonTable.from_function(np.linspace(-3, 3, 121), lambda x: -x / THETA,
                                       lambda x: -1 / THETA)
    n = 4000
    rep = clt_decomposition(OU, table, BemConfig(0.1), builtin_test_function("x"), 0.0, [0.0], n,
                            9, workers=1)
    assert rep.m_steps == 100
    var = np.var(rep.H_samples, ddof=1)
    # stderr of a Gaussian sample variance: var * sqrt(2 / (n - 1))
    assert abs(var - 1 / 64) < 3 * (1 / 64) * np.sqrt(2 / (n - 1))
    assert ks_to_normal(rep.H_samples, 1 / 64).statistic < 0.05
    assert rep.identity_gap() <= 1e-10


def test_variational_gradient_of_ou_matches_closed_form():
    tau, t_trunc = 2.0 ** -8, 1.0
    grad, se = variational_gradient(OU, builtin_test_function("x"), [[-1.0], [0.5]], t_trunc, tau,
                                    20, 10, workers=1)
    np.testing.assert_allclose(grad[:, 0], ou_trapezoid_phi(1.0, tau, t_trunc), rtol=1e-12)
    assert np.all(se == 0.0)


def test_variational_gradient_of_example51_matches_finite_differences():
    h = builtin_test_function("sin_plus_one")
    kw = dict(t_trunc=1.0, quad_tau=2.0 ** -7, n_inner_paths=2000, master_seed=11, workers=1)
    eps = 0.05
    fd = solve_phi(EXAMPLE51, h, 1.0, (0.5 - eps, 0.5 + eps, 3), **kw)
    grad, se = variational_gradient(EXAMPLE51, h, [[0.5]], **kw)
    central = (fd.phi[2] - fd.phi[0]) / (2 * eps)
    assert grad[0, 0] == pytest.approx(central, abs=max(5 * se[0, 0], 0.01 * abs(central)))
