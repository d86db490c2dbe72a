import numpy as np
import pytest

import oracles
from frem.chain import (ChainModel, ForwardPath, ObservationSet,
                        path_loglikelihood, simulate_forward,
                        simulate_forward_batch)
from frem.errors import EstimatorFailureError, ParameterDomainError
from frem.models import build


@pytest.fixture(scope="module")
def ou():
    return build("ou", dt=0.1)[0]


def test_forward_batch_shape_and_start(ou, rng):
    states = simulate_forward_batch(ou, [1.0], [0.3], 2, 7, 50, rng)
    assert states.shape == (6, 50, 1)
    assert np.all(states[0] == 0.3)


def test_forward_batch_reproducible(ou, rng_factory):
    a = simulate_forward_batch(ou, [1.0], [0.3], 0, 5, 20, rng_factory("s"))
    b = simulate_forward_batch(ou, [1.0], [0.3], 0, 5, 20, rng_factory("s"))
    np.testing.assert_array_equal(a, b)


def test_single_path_matches_batch_of_one(ou, rng_factory):
    path = simulate_forward(ou, [0.8], [0.5], 0, 6, rng_factory("p"))
    batch = simulate_forward_batch(ou, [0.8], [0.5], 0, 6, 1,
                                   rng_factory("p"))
    np.testing.assert_array_equal(path.states, batch[:, 0, :])
    assert path.stop == 6
    np.testing.assert_array_equal(path.times, np.arange(7))


def test_zero_steps_consumes_no_randomness(ou, rng_factory):
    g = rng_factory("z")
    states = simulate_forward_batch(ou, [1.0], [0.1], 3, 3, 4, g)
    assert states.shape == (1, 4, 1)
    np.testing.assert_array_equal(g.standard_normal(4),
                                  rng_factory("z").standard_normal(4))


def test_step_distribution_moments(ou, rng):
    # One step from x: mean (1 + lam dt) x, variance dt.
    x = np.full((200000, 1), 2.0)
    y = ou.step_sampler(0, np.array([1.0]), x, rng)
    assert abs(y.mean() - 2.2) < 0.005
    assert abs(y.var() - 0.1) < 0.002


def test_step_logdensity_is_gaussian(ou):
    x = np.array([[0.7]])
    y = np.array([[1.1]])
    ld = ou.step_logdensity(0, np.array([0.5]), x, y)
    resid = 1.1 - 1.05 * 0.7
    expect = -0.5 * (np.log(2 * np.pi * 0.1) + resid ** 2 / 0.1)
    np.testing.assert_allclose(ld, [expect], rtol=1e-12)


def test_inadmissible_theta_rejected(ou):
    with pytest.raises(ParameterDomainError):
        simulate_forward_batch(ou, [-11.0], [0.1], 0, 3, 2,
                               np.random.default_rng(0))
    with pytest.raises(ParameterDomainError):
        ou.require_admissible([1.0, 2.0])


def test_stop_before_start_rejected(ou, rng):
    with pytest.raises(ValueError):
        simulate_forward_batch(ou, [1.0], [0.1], 5, 4, 2, rng)


def test_path_loglikelihood_sums_steps(ou):
    states = np.array([0.1, 0.3, 0.2, 0.5])
    total = path_loglikelihood(ou, [0.9], states)
    np.testing.assert_allclose(
        total, oracles.linear_drift_path_loglik(0.9, 0.1, states),
        rtol=1e-12)


def test_path_loglikelihood_flags_nonfinite():
    bad = ChainModel(name="bad", dim=1, param_dim=1,
                     step_sampler=lambda k, t, x, r: x,
                     step_logdensity=lambda k, t, x, y: np.array([np.nan]))
    with pytest.raises(EstimatorFailureError):
        path_loglikelihood(bad, [0.0], np.array([0.0, 1.0]))


def test_forward_path_validation():
    with pytest.raises(ValueError):
        ForwardPath(start=0, states=np.empty((0, 1)))


def test_observation_set_validation():
    with pytest.raises(ValueError):
        ObservationSet(times=[0, 0], values=[[1.0], [2.0]])
    with pytest.raises(ValueError):
        ObservationSet(times=[0, 2, 1], values=[[1.0], [2.0], [3.0]])
    with pytest.raises(ValueError):
        ObservationSet(times=[0, 1], values=[[1.0]])
    with pytest.raises(ValueError):
        ObservationSet(times=[0, 1], values=[[1.0], [2.0]],
                       mask=[[True], [False]])


def test_observation_set_mask_semantics():
    obs = ObservationSet(times=[0, 1, 2],
                         values=[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
                         mask=[[True, True], [True, False], [True, True]])
    np.testing.assert_array_equal(obs.fully_observed(),
                                  [True, False, True])
    assert obs.dim == 2
    full = ObservationSet(times=[0, 5], values=[1.0, 2.0])
    assert full.values.shape == (2, 1)
    assert full.fully_observed().all()
