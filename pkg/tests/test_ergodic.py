import numpy as np
import pytest

from ergodic_bem.errors import ConfigurationError, ContractViolation
from ergodic_bem.ergodic import (ErgodicLimitEstimate, clt_table, deviation_scale,
                                 estimate_ergodic_limit, invariant_bias_order, sample_deviations,
                                 steps_for, temporal_average, temporal_averages,
                                 time_average_estimate)
from ergodic_bem.integrator import BemConfig
from ergodic_bem.model import SdeModel, builtin_model, builtin_test_function
from ergodic_bem.rng import derive_stream

EXAMPLE51 = builtin_model("example51")


def frozen_model():
    """b = 0, sigma = 0: every path stays at its initial value."""
    return SdeModel(1, 1, lambda x: np.zeros_like(x), lambda x: np.zeros((x.shape[0], 1, 1)),
                    "frozen")


def test_steps_for_rounds_to_nearest_integer():
    assert steps_for(0.05, 2.0) == (400, pytest.approx(400.0))
    n, exact = steps_for(0.03, 2.0)
    assert n == 1111 and exact == pytest.approx(1111.111, rel=1e-6)


def test_steps_for_rejects_bad_alpha_and_tiny_n():
    for alpha in (1.0, 0.5, 2.5):
        with pytest.raises(ConfigurationError, match="alpha"):
            steps_for(0.1, alpha)
    with pytest.raises(ConfigurationError, match="< 2"):
        steps_for(0.9, 1.1)


def test_n_tau_increases_along_descending_sweep():
    for alpha in (1.25, 1.5, 2.0):
        taus = [0.05, 0.03, 0.02, 0.01, 0.005]
        n_tau = [steps_for(t, alpha)[0] * t for t in taus]
        assert all(b > a for a, b in zip(n_tau, n_tau[1:]))


def test_constant_h_average_is_exact():
    h = builtin_test_function("const", c=2.5)
    assert temporal_average(EXAMPLE51, BemConfig(0.05), h, [1.0], 2.0, derive_stream(0, 0)) == 2.5


def test_frozen_path_average():
    h = builtin_test_function("x")
    assert temporal_average(frozen_model(), BemConfig(0.1), h, [1.0], 2.0,
                            derive_stream(0, 0)) == 1.0


def test_single_path_average_matches_batched_average():
    h = builtin_test_function("sin_plus_one")
    one = temporal_average(EXAMPLE51, BemConfig(0.05), h, [1.0], 2.0, derive_stream(3, 4))
    many, _ = temporal_averages(EXAMPLE51, BemConfig(0.05), h, [1.0], 2.0, 5, 3, workers=1)
    assert one == pytest.approx(many[4], abs=1e-15)


def test_example51_average_from_the_invariant_point():
    avgs, _ = temporal_averages(EXAMPLE51, BemConfig(0.05), builtin_test_function("sin_plus_one"),
                                [0.0], 2.0, 2000, 11, workers=1)
    assert avgs.mean() == 1.0


def test_example51_averages_are_odd_in_the_initial_state():
    # drift and diffusion are odd, so the path from -x0 is minus the path from x0
    h = builtin_test_function("sin_plus_one")
    up, _ = temporal_averages(EXAMPLE51, BemConfig(0.05), h, [1.0], 2.0, 500, 11, workers=1)
    down, _ = temporal_averages(EXAMPLE51, BemConfig(0.05), h, [-1.0], 2.0, 500, 11, workers=1)
    np.testing.assert_allclose(up + down, 2.0, atol=1e-12)


def test_constant_h_deviations_vanish():
    h = builtin_test_function("const", c=3.0)
    batch = sample_deviations(EXAMPLE51, BemConfig(0.05), h, [1.0], 2.0, 50,
                              ErgodicLimitEstimate.exact(3.0), 0, workers=1)
    assert np.all(batch.samples == 0.0)
    assert batch.n_steps_used == 400
    assert batch.systematic_bound == 0.0


def test_deviation_scale_equivariance():
    h = builtin_test_function("sin_plus_one")
    a, c = -2.5, 4.0
    g = h.affine(a, c)
    cfg = BemConfig(0.05)
    z = sample_deviations(EXAMPLE51, cfg, h, [1.0], 1.5, 20, ErgodicLimitEstimate.exact(1.0), 5,
                          workers=1).samples
    z2 = sample_deviations(EXAMPLE51, cfg, g, [1.0], 1.5, 20,
                           ErgodicLimitEstimate.exact(a * 1.0 + c), 5, workers=1).samples
    assert np.all(np.abs(z2 - a * z) <= 1e-10 * (1 + np.abs(a * z)))


def test_deviation_scale_formula():
    assert deviation_scale(0.04, 2.0) == pytest.approx(5.0)
    assert deviation_scale(0.04, 1.5) == pytest.approx(0.04 ** -0.25)


def test_ergodic_limit_requires_long_horizon():
    with pytest.raises(ConfigurationError, match="too short"):
        estimate_ergodic_limit(EXAMPLE51, BemConfig(2.0 ** -6), builtin_test_function("x4"),
                               [[1.0]], 2.0, 10, 0)


def test_ergodic_limit_of_constant_and_curve_recording():
    est = estimate_ergodic_limit(EXAMPLE51, BemConfig(2.0 ** -6), builtin_test_function("const"),
                                 [[1.0], [-2.0]], 3.0, 40, 0, record_every=64, workers=1)
    assert est.value == 1.0 and est.stderr == 0.0 and est.consistent
    assert est.n_paths == 80
    assert est.curves[1][0] == (0, 1.0)


def test_ou_ergodic_limit_of_square_matches_discrete_invariant_variance():
    theta, s, tau = 8.0, 1.0, 2.0 ** -6
    est = estimate_ergodic_limit(builtin_model("ou", theta=theta, s=s), BemConfig(tau),
                                 builtin_test_function("x2"), [[0.0], [1.0]], 4.0, 4000, 1,
                                 workers=1)
    exact = s ** 2 / (2 * theta + theta ** 2 * tau)
    assert abs(est.value - exact) < 4 * est.stderr
    assert est.consistent


def test_clt_table_needs_descending_taus():
    with pytest.raises(ContractViolation):
        clt_table(EXAMPLE51, builtin_test_function("sin_plus_one"), builtin_test_function("cos"),
                  2.0, [0.02, 0.05], 10, [1.0], ErgodicLimitEstimate.exact(1.0), 0)


def test_cos_of_x4_deviation_matches_reference_anchor():
    rows = clt_table(EXAMPLE51, builtin_test_function("x4"), [builtin_test_function("cos")], 2.0,
                     [0.05], 2000, [-2.0], ErgodicLimitEstimate.exact(0.0), 12, workers=1)
    row = rows[0]
    assert row.n_steps == 400 and row.f_id == "cos"
    assert abs(row.f_mean - 0.9732673) < 4 * row.f_stderr + 1e-4


def test_ou_time_average_matches_discrete_invariant_variance():
    theta, s, tau = 8.0, 1.0, 0.1
    mean, se = time_average_estimate(builtin_model("ou", theta=theta, s=s), BemConfig(tau),
                                     builtin_test_function("x2"), 200.0, 200, 2, workers=1)
    exact = s ** 2 / (2 * theta + theta ** 2 * tau)
    assert abs(mean - exact) < 4 * se


def test_ou_first_moment_bias_is_inconclusive():
    res = invariant_bias_order(builtin_model("ou", theta=8.0, s=1.0), builtin_test_function("x"),
                               [0.1, 0.05, 0.025], 0.003, 50.0, 100, 3, workers=1)
    assert res.verdict == "inconclusive" or res.fit.slope < 0.1
    assert sum(e["significant"] for e in res.estimates) <= 1


def test_ou_second_moment_bias_order_is_one():
    theta, s = 8.0, 1.0
    taus = [0.1, 0.05, 0.025]
    res = invariant_bias_order(builtin_model("ou", theta=theta, s=s), builtin_test_function("x2"),
                               taus, 0.003, 100.0, 100, 4, workers=1)
    for e in res.estimates:
        exact = s ** 2 / (2 * theta + theta ** 2 * e["tau"])
        assert abs(e["value"] - exact) < 4 * e["stderr"]
    assert res.verdict == "fitted"
    assert res.fit.slope == pytest.approx(1.0, abs=0.2)


def test_example51_bias_order_fitted_in_band_or_inconclusive():
    # the invariant law is the point mass at 0, so pi_tau(x^2) = 0 for every tau
    res = invariant_bias_order(EXAMPLE51, builtin_test_function("x2"), [0.1, 0.05, 0.025], 0.003,
                               10.0, 200, 5, workers=1)
    assert res.verdict == "inconclusive"


def test_bias_order_reference_must_be_finer():
    with pytest.raises(ContractViolation):
        invariant_bias_order(EXAMPLE51, builtin_test_function("x2"), [0.1, 0.05], 0.01, 1.0, 10, 0)
