import numpy as np
import pytest
from scipy.optimize import bisect

from ergodic_bem.errors import ConfigurationError, ContractViolation, SolverError
from ergodic_bem.integrator import (BemConfig, SolverStats, bem_step, coupled_mean_square_distance,
                                    em_step, moment_profile, simulate_coupled_pair, simulate_path,
                                    strong_error_profile)
from ergodic_bem.model import SdeModel, builtin_model
from ergodic_bem.rng import derive_stream
from ergodic_bem.stats import fit_order


def brownian_model():
    """b = 0, sigma = 1 in one dimension."""
    return SdeModel(1, 1, lambda x: np.zeros_like(x), lambda x: np.ones((x.shape[0], 1, 1)),
                    "brownian")


def test_zero_drift_bem_step_is_explicit():
    out = bem_step(brownian_model(), BemConfig(0.1), np.array([0.3]), np.array([0.2]))
    assert out.state[0] == pytest.approx(0.5, abs=1e-15)


def test_ou_bem_step_closed_form():
    out = bem_step(builtin_model("ou", theta=8.0, s=1.0), BemConfig(0.1), np.array([1.0]),
                   np.array([0.0]))
    assert out.state[0] == pytest.approx(1 / 1.8, rel=1e-12)


def test_example51_bem_step_against_bisection():
    m = builtin_model("example51")
    # sin(x0) dW = 0 at x0 = 1, dW = 0 so rhs = 1
    root = bisect(lambda y: 0.1 * y ** 3 + 1.8 * y - 1, 0.0, 1.0, xtol=1e-14)
    out = bem_step(m, BemConfig(0.1), np.array([1.0]), np.array([0.0]))
    assert out.state[0] == pytest.approx(root, abs=1e-12)
    assert out.iterations >= 1


def test_example51_bem_step_many_triples_against_bisection():
    m = builtin_model("example51")
    rng = np.random.default_rng(0)
    taus = rng.uniform(0.001, 0.9, 1000)
    x = rng.uniform(-5, 5, 1000)
    dW = rng.normal(0, 1, 1000) * np.sqrt(taus)
    for tau, xi, dwi in zip(taus, x, dW):
        rhs = xi + np.sin(xi) * dwi
        lo, hi = -abs(rhs) - 1, abs(rhs) + 1
        root = bisect(lambda y: y + tau * (y ** 3 + 8 * y) - rhs, lo, hi, xtol=1e-14)
        y = bem_step(m, BemConfig(tau), np.array([xi]), np.array([dwi])).state[0]
        assert y == pytest.approx(root, abs=1e-11 * (1 + abs(rhs)))


def test_bem_step_batch_equals_rowwise():
    m = builtin_model("example51")
    rng = np.random.default_rng(1)
    x, dW = rng.uniform(-3, 3, (50, 1)), rng.normal(0, 0.3, (50, 1))
    batch = bem_step(m, BemConfig(0.05), x, dW).state
    rows = np.array([bem_step(m, BemConfig(0.05), x[i], dW[i]).state for i in range(50)])
    np.testing.assert_array_equal(batch, rows)


def test_bem_step_reports_solver_error_on_nonfinite_drift():
    m = SdeModel(1, 1, lambda x: np.full_like(x, np.nan), lambda x: np.zeros((x.shape[0], 1, 1)),
                 "nan")
    with pytest.raises(SolverError) as info:
        bem_step(m, BemConfig(0.1), np.array([1.0]), np.array([0.0]))
    assert info.value.row == 0


def test_bem_step_reports_iteration_exhaustion():
    m = builtin_model("example51")
    cfg = BemConfig(0.5, newton_max_iter=1, newton_rtol=1e-15)
    with pytest.raises(SolverError, match="did not converge") as info:
        bem_step(m, cfg, np.array([50.0]), np.array([0.0]))
    assert info.value.residual > 0


def test_bem_config_validation():
    with pytest.raises(ConfigurationError):
        BemConfig(0.0)
    with pytest.raises(ConfigurationError):
        BemConfig(0.1, newton_max_iter=0)


def test_superlinear_model_refuses_large_tau():
    with pytest.raises(ConfigurationError, match="tau must be < 1"):
        simulate_path(builtin_model("example51"), BemConfig(1.0), [1.0], 3, derive_stream(0, 0))


def test_em_step_values():
    assert em_step(brownian_model(), 0.1, np.array([0.3]), np.array([0.2]))[0] == pytest.approx(0.5)
    ou = builtin_model("ou", theta=8.0, s=0.0)
    assert em_step(ou, 0.1, np.array([1.0]), np.array([0.0]))[0] == pytest.approx(0.2)
    with pytest.raises(ContractViolation):
        em_step(ou, 0.0, np.array([1.0]), np.array([0.0]))


def test_em_diverges_where_bem_stays_bounded():
    m = builtin_model("example51")
    tau = 0.5
    x_em = np.full((100, 1), 3.0)
    x_bem = x_em.copy()
    rng = np.random.default_rng(2)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(50):
            dW = rng.normal(0, np.sqrt(tau), (100, 1))
            x_em = em_step(m, tau, x_em, dW)
            x_bem = bem_step(m, BemConfig(tau), x_bem, dW).state
    assert np.any(~np.isfinite(x_em) | (np.abs(x_em) > 1e100))
    assert np.all(np.abs(x_bem) < 10)


def test_simulate_path_zero_steps_returns_initial_state():
    traj = simulate_path(builtin_model("example51"), BemConfig(0.01), [0.7], 0,
                         derive_stream(0, 0), record=True)
    np.testing.assert_array_equal(traj, [[0.7]])


def test_deterministic_ou_path_closed_form():
    theta, tau, x0 = 8.0, 0.05, 2.0
    traj = simulate_path(builtin_model("ou", theta=theta, s=0.0), BemConfig(tau), [x0], 20,
                         derive_stream(0, 0), record=True)
    exact = x0 / (1 + theta * tau) ** np.arange(21)
    np.testing.assert_allclose(traj[:, 0], exact, rtol=1e-12)


def test_simulate_path_visitor_sees_every_state():
    seen = []
    final = simulate_path(builtin_model("example51"), BemConfig(0.01), [1.0], 5,
                          derive_stream(3, 0), visitor=lambda k, x: seen.append((k, x[0])))
    assert [k for k, _ in seen] == list(range(6))
    assert seen[-1][1] == final[0]


def test_simulate_path_is_seed_deterministic():
    m = builtin_model("example51")
    a = simulate_path(m, BemConfig(0.01), [1.0], 500, derive_stream(4, 2), record=True)
    b = simulate_path(m, BemConfig(0.01), [1.0], 500, derive_stream(4, 2), record=True)
    np.testing.assert_array_equal(a, b)


def test_example51_second_moment_stays_bounded():
    prof = moment_profile(builtin_model("example51"), BemConfig(0.01), [1.0], 10_000, 200,
                          master_seed=5, p_list=(2,), workers=1)
    assert prof.shape == (10_001, 1)
    assert prof[0, 0] == 1.0
    assert prof[:, 0].max() < 1.2


def test_coupled_pair_identical_starts_stay_identical():
    xs, ys = simulate_coupled_pair(builtin_model("example51"), BemConfig(0.01), [1.5], [1.5],
                                   300, derive_stream(6, 0))
    np.testing.assert_array_equal(xs, ys)


def test_coupled_pair_ou_linear_contraction():
    theta, tau = 8.0, 0.02
    xs, ys = simulate_coupled_pair(builtin_model("ou", theta=theta, s=1.0), BemConfig(tau), [2.0],
                                   [-1.0], 40, derive_stream(7, 0))
    np.testing.assert_allclose(np.abs(xs - ys)[:, 0], 3.0 / (1 + theta * tau) ** np.arange(41),
                               rtol=1e-10)


def test_example51_coupled_distance_is_nonincreasing():
    msd = coupled_mean_square_distance(builtin_model("example51"), BemConfig(0.01), [2.0], [-2.0],
                                       200, 500, master_seed=8, workers=1)
    assert msd[0] == pytest.approx(16.0)
    assert np.all(np.diff(msd) <= 0)


def test_strong_profile_self_comparison_is_zero():
    out = strong_error_profile(builtin_model("example51"), [2.0 ** -6], 2.0 ** -6, 1.0, [1.0],
                               20, master_seed=9, workers=1)
    assert out == [(2.0 ** -6, 0.0)]


def test_strong_profile_divisibility_errors():
    m = builtin_model("ou")
    with pytest.raises(ConfigurationError):
        strong_error_profile(m, [0.3], 0.2, 1.2, [1.0], 10, 0)
    with pytest.raises(ConfigurationError):
        strong_error_profile(m, [0.25], 0.125, 1.1, [1.0], 10, 0)


def test_ou_strong_order_is_at_least_one_half():
    # additive noise: BEM is first-order strongly, so the slope sits near 1
    taus = [2.0 ** -k for k in range(4, 9)]
    prof = strong_error_profile(builtin_model("ou", theta=8.0, s=1.0), taus, 2.0 ** -11, 2.0,
                                [1.0], 400, master_seed=10, workers=1)
    fit = fit_order(prof)
    assert fit.slope >= 0.45
    assert fit.slope == pytest.approx(1.0, abs=0.15)
    assert fit.r_squared > 0.95


def test_solver_stats_record_and_merge():
    a, b = SolverStats(), SolverStats()
    a.record(np.array([1, 3]), np.array([1e-14, 2e-14]))
    b.record(np.array([5]), np.array([1e-13]))
    a.merge(b)
    # blocks merged side by side cover the same time steps
    assert (a.steps, a.solves, a.total_iterations, a.max_iterations) == (1, 3, 9, 5)
    assert a.max_residual == 1e-13
