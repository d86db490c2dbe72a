import numpy as np
import oracles
import pytest
from scipy import optimize

from frem.chain import simulate_forward
from frem.em import m_step, q_function
from frem.errors import (MStepFailureError, NonIntegrableStatisticError,
                         ParameterDomainError)
from frem.models import cir

DT = 0.1
GAMMA = 0.3
THETA = np.array([0.5, 0.8, 1.0])  # (sig, lam, mean)


def simulated_z(rng, n_steps=60, gamma=GAMMA):
    model = cir.make_model(DT, gamma)
    stats = cir.make_suffstats(DT, gamma)
    path = simulate_forward(model, THETA, [1.0], 0, n_steps, rng)
    x = path.states
    z = stats.gap_stats(x[:1], x[-1:], x[None, 1:-1, :])[0]
    return stats, z, x


def numeric_maximizer(stats, z, start):
    # Optimize over log sig to keep the objective inside its domain.
    def neg_q(p):
        return -q_function(stats, [np.exp(p[0]), p[1], p[2]], z)

    p0 = np.array([np.log(start[0]), start[1], start[2]])
    res = optimize.minimize(neg_q, p0, method="Nelder-Mead",
                            options={"maxfev": 4000, "xatol": 1e-11,
                                     "fatol": 1e-13})
    assert res.success
    return np.array([np.exp(res.x[0]), res.x[1], res.x[2]])


def test_gap_stats_hand_example():
    stats = cir.make_suffstats(DT, GAMMA)
    z = stats.gap_stats(np.array([[1.0]]), np.array([[1.3]]),
                        np.array([[[1.2]]]))[0]
    r0, r1 = 1.0, 1.2 ** (2 * GAMMA)
    want = [2.0,
            1.2 ** 2 / r0 + 1.3 ** 2 / r1,
            1.2 / r0 + 1.3 / r1,
            1.0 * 1.2 / r0 + 1.2 * 1.3 / r1,
            1.0 / r0 + 1.0 / r1,
            1.0 / r0 + 1.2 / r1,
            1.0 / r0 + 1.2 ** 2 / r1,
            np.log(1.0) + np.log(1.2)]
    np.testing.assert_allclose(z, want, rtol=1e-13)


def test_objective_equals_path_loglikelihood(rng):
    stats, z, x = simulated_z(rng, n_steps=25)
    for theta in ([0.5, 0.8, 1.0], [0.3, -0.5, 2.0], [1.1, 0.0, 0.0]):
        want = oracles.mean_reverting_path_loglik(DT, GAMMA, theta, x[:, 0])
        assert q_function(stats, theta, z) == pytest.approx(want, rel=1e-12)


def test_closed_form_maximizer_matches_numeric_search(rng_factory):
    for i in range(3):
        stats, z, _ = simulated_z(rng_factory("mstep", i))
        closed = m_step(stats, z)
        numeric = numeric_maximizer(stats, z, closed * 1.15 + 0.05)
        np.testing.assert_allclose(numeric, closed, rtol=2e-5)
        # the closed form sits at a stationary point: tiny perturbations
        # only lower the objective
        q0 = q_function(stats, closed, z)
        for bump in np.eye(3) * 1e-4:
            assert q_function(stats, closed + bump, z) <= q0 + 1e-12
            assert q_function(stats, closed - bump, z) <= q0 + 1e-12


def test_additive_noise_variance_is_residual_mean_square(rng):
    stats, z, x = simulated_z(rng, gamma=0.0)
    sig, lam, mean = m_step(stats, z)
    path = x[:, 0]
    resid = np.diff(path) - lam * (mean - path[:-1]) * DT
    assert sig ** 2 == pytest.approx(np.mean(resid ** 2) / DT, rel=1e-10)


def test_noise_exponent_half_not_integrable():
    for gamma in (0.5, 0.7):
        with pytest.raises(NonIntegrableStatisticError):
            cir.make_suffstats(DT, gamma)
    cir.make_suffstats(DT, 0.49)  # strictly below the threshold is fine


def test_constructor_validation():
    with pytest.raises(ValueError):
        cir.make_model(0.0, GAMMA)
    with pytest.raises(ValueError):
        cir.make_model(DT, -0.1)
    with pytest.raises(ValueError):
        cir.make_suffstats(-1.0, GAMMA)
    with pytest.raises(ValueError):
        cir.make_reverse(DT, GAMMA, [0.0, 0.5, 1.0], horizon=3)  # sig = 0
    with pytest.raises(ParameterDomainError):
        model = cir.make_model(DT, GAMMA)
        model.require_admissible([-0.5, 0.5, 1.0])


def test_constant_path_m_step_degenerates():
    stats = cir.make_suffstats(DT, GAMMA)
    z = stats.gap_stats(np.array([[0.8]]), np.array([[0.8]]),
                        np.full((1, 4, 1), 0.8))[0]
    with pytest.raises(MStepFailureError):
        m_step(stats, z)


def test_forward_noise_uses_absolute_state(rng):
    # The diffusion coefficient reads |x|^gamma, so the transition out of a
    # negative state has the same spread as out of its mirror image.
    model = cir.make_model(DT, GAMMA)
    for x0 in (0.7, -0.7):
        x = np.array([[x0]])
        y = np.array([[0.2]])
        sig, lam, mean = THETA
        var = sig ** 2 * DT * abs(x0) ** (2 * GAMMA)
        m = x0 + lam * (mean - x0) * DT
        want = -0.5 * (np.log(2 * np.pi * var) + (0.2 - m) ** 2 / var)
        got = model.step_logdensity(0, THETA, x, y)[0]
        assert got == pytest.approx(want, rel=1e-13)
