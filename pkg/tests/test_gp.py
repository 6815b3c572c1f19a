import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from speedbo.gp import (GaussianProcess, GPHyperparams, GPNumericalError,
                        HyperparamBounds, fit, kernel_eval,
                        log_marginal_likelihood, log_marginal_likelihood_grad,
                        optimize_hyperparams, predict)


def oracle_kernel(a, b, amp, ls):
    r = math.sqrt(sum((ai - bi) ** 2 / l ** 2 for ai, bi, l in zip(a, b, ls)))
    return amp * (1 + math.sqrt(5) * r + 5 * r * r / 3) * math.exp(-math.sqrt(5) * r)


def oracle_posterior(hp, X, y, Xq):
    """Dense Gram matrix from loops and a generic solve, no factorization reuse."""
    n = len(X)
    K = np.array([[oracle_kernel(X[i], X[j], hp.amplitude, hp.lengthscales)
                   for j in range(n)] for i in range(n)])
    K += hp.noise_variance * np.eye(n)
    means, variances = [], []
    for q in Xq:
        k = np.array([oracle_kernel(q, X[i], hp.amplitude, hp.lengthscales)
                      for i in range(n)])
        means.append(k @ np.linalg.solve(K, y))
        variances.append(hp.amplitude - k @ np.linalg.solve(K, k))
    return np.array(means), np.array(variances)


def test_kernel_closed_form():
    hp = GPHyperparams(1.0, (1.0,), 0.0)
    assert kernel_eval(hp, [0.3], [0.3]) == 1.0
    expected = (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5))
    assert kernel_eval(hp, [0.0], [1.0]) == pytest.approx(expected, abs=1e-12)
    assert kernel_eval(hp, [0.0], [1.0]) == pytest.approx(0.5240, abs=1e-4)
    assert kernel_eval(hp, [0.0], [50.0]) < 1e-15


def test_kernel_dimension_mismatch():
    with pytest.raises(ValueError):
        kernel_eval(GPHyperparams(1.0, (1.0, 1.0), 0.0), [0.0], [1.0])


def test_single_observation_interpolates():
    hp = GPHyperparams(1.0, (0.5,), 0.0)
    m = fit(hp, [[0.2]], [1.7])
    p = predict(m, [0.2])
    assert p.mean == pytest.approx(1.7, abs=1e-12)
    assert p.variance == pytest.approx(0.0, abs=1e-12)


def test_far_point_reverts_to_prior():
    hp = GPHyperparams(2.0, (0.1,), 0.3)
    m = fit(hp, [[0.0], [0.1]], [1.0, -0.5])
    mean, var = m.predict([[100.0]], return_var=True, include_noise=True)
    assert mean[0] == pytest.approx(0.0, abs=1e-12)
    assert var[0] == pytest.approx(2.0 + 0.3)
    _, latent = m.predict([[100.0]], return_var=True)
    assert latent[0] == pytest.approx(2.0)


def test_two_points_match_direct_solve():
    hp = GPHyperparams(1.3, (0.4, 0.7), 0.05)
    X = np.array([[0.1, 0.2], [0.6, 0.9]])
    y = np.array([0.5, -1.2])
    q = np.array([[0.3, 0.3], [0.9, 0.1]])
    k12 = oracle_kernel(X[0], X[1], 1.3, (0.4, 0.7))
    K = np.array([[1.3 + 0.05, k12], [k12, 1.3 + 0.05]])
    m = fit(hp, X, y)
    mean, var = m.predict(q, return_var=True)
    for i, xq in enumerate(q):
        ks = np.array([oracle_kernel(xq, X[0], 1.3, (0.4, 0.7)),
                       oracle_kernel(xq, X[1], 1.3, (0.4, 0.7))])
        assert mean[i] == pytest.approx(ks @ np.linalg.solve(K, y), abs=1e-8)
        assert var[i] == pytest.approx(1.3 - ks @ np.linalg.solve(K, ks), abs=1e-8)


def test_symmetric_points_zero_mean_at_midpoint():
    m = fit(GPHyperparams(1.0, (0.3,), 0.01), [[0.2], [0.8]], [2.0, -2.0])
    assert predict(m, [0.5]).mean == pytest.approx(0.0, abs=1e-12)


def test_five_points_smooth_function_matches_oracle():
    rng = np.random.default_rng(4)
    X = rng.uniform(size=(5, 3))
    y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2 - X[:, 2]
    hp = GPHyperparams(0.8, (0.5, 0.6, 0.7), 1e-3)
    q = rng.uniform(size=(10, 3))
    mean, var = fit(hp, X, y).predict(q, return_var=True)
    om, ov = oracle_posterior(hp, X, y, q)
    np.testing.assert_allclose(mean, om, atol=1e-8)
    np.testing.assert_allclose(var, ov, atol=1e-8)


def test_lml_single_observation():
    hp = GPHyperparams(1.0, (1.0,), 0.0)
    assert log_marginal_likelihood(hp, [[0.0]], [0.0]) == pytest.approx(
        -0.5 * math.log(2 * math.pi), abs=1e-12)
    assert log_marginal_likelihood(hp, [[0.0]], [1.0]) == pytest.approx(
        -0.5 - 0.5 * math.log(2 * math.pi), abs=1e-12)


def test_lml_duplicate_with_noise_is_finite():
    hp = GPHyperparams(1.0, (0.3,), 0.01)
    v = log_marginal_likelihood(hp, [[0.4], [0.4]], [1.0, 1.0])
    assert np.isfinite(v)


def test_lml_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(25, 3))
    y = np.cos(4 * X).sum(1) + 0.05 * rng.normal(size=25)
    hp = GPHyperparams(1.3, (0.3, 0.5, 0.7), 0.05)
    grad = log_marginal_likelihood_grad(hp, X, y)
    theta = hp.to_log()
    h = 1e-6
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        fd = (log_marginal_likelihood(GPHyperparams.from_log(theta + e), X, y)
              - log_marginal_likelihood(GPHyperparams.from_log(theta - e), X, y)) / (2 * h)
        assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-6)


def _sample_prior(hp, n, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, hp.dim))
    K = np.array([[oracle_kernel(a, b, hp.amplitude, hp.lengthscales) for b in X]
                  for a in X]) + hp.noise_variance * np.eye(n)
    y = np.linalg.cholesky(K + 1e-10 * np.eye(n)) @ rng.normal(size=n)
    return X, y


def test_optimize_recovers_lengthscale():
    truth = GPHyperparams(1.0, (0.3,), 1e-3)
    X, y = _sample_prior(truth, 50, seed=3)
    init = GPHyperparams(1.0, (1.0,), 0.1)
    hp = optimize_hyperparams(X, y, init, n_restarts=5, rng=0)
    assert 0.15 <= hp.lengthscales[0] <= 0.6


def test_optimize_constant_targets_hits_amplitude_floor():
    X = np.random.default_rng(0).uniform(size=(10, 2))
    hp = optimize_hyperparams(X, np.zeros(10), GPHyperparams(1.0, (0.3, 0.3), 0.1),
                              n_restarts=2, rng=0)
    assert hp.amplitude == pytest.approx(1e-4, rel=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 20), st.integers(0, 10_000))
def test_optimize_contract(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 3))
    y = rng.normal(size=n)
    init = GPHyperparams(1.0, (0.3, 0.3, 0.3), 0.1)
    bounds = HyperparamBounds()
    hp = optimize_hyperparams(X, y, init, bounds, n_restarts=1, rng=seed)
    lb = bounds.log_bounds(3, float(np.var(y)))
    theta = hp.to_log()
    for v, (lo, hi) in zip(theta, lb):
        assert lo - 1e-9 <= v <= hi + 1e-9
    clipped = GPHyperparams.from_log(np.clip(init.to_log(), [b[0] for b in lb],
                                             [b[1] for b in lb]))
    assert (log_marginal_likelihood(hp, X, y)
            >= log_marginal_likelihood(clipped, X, y) - 1e-9)


def test_optimize_needs_two_points():
    with pytest.raises(ValueError):
        optimize_hyperparams([[0.1]], [1.0], GPHyperparams(1, (1,), 0.1))


def test_kernel_symmetry_and_gram_symmetric():
    rng = np.random.default_rng(2)
    hp = GPHyperparams(1.5, (0.2, 0.9), 0.0)
    a, b = rng.uniform(size=(2, 2))
    assert kernel_eval(hp, a, b) == kernel_eval(hp, b, a)
    m = fit(GPHyperparams(1.5, (0.2, 0.9), 0.01), rng.uniform(size=(8, 2)), rng.normal(size=8))
    K = m.L_ @ m.L_.T
    np.testing.assert_allclose(K, K.T, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 15), st.integers(0, 10_000),
       st.floats(1e-3, 1.0), st.floats(0.0, 0.5))
def test_variance_bounds(n, seed, ls, noise):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 3))
    hp = GPHyperparams(1.7, (ls,) * 3, noise)
    m = GaussianProcess(1.7, ls, noise)
    try:
        m.fit(X, rng.normal(size=n))
    except GPNumericalError:
        return
    _, var = m.predict(rng.uniform(size=(50, 3)), return_var=True)
    assert np.all(var >= 0)
    assert np.all(var <= hp.amplitude + hp.noise_variance + 1e-8)


def test_noise_free_interpolation():
    rng = np.random.default_rng(5)
    X = rng.uniform(size=(12, 3))
    y = rng.normal(size=12)
    m = GaussianProcess(1.0, 0.4, 0.0).fit(X, y)
    np.testing.assert_allclose(m.predict(X), y, atol=1e-6)


def test_permutation_invariance():
    rng = np.random.default_rng(6)
    X = rng.uniform(size=(20, 3))
    y = rng.normal(size=20)
    q = rng.uniform(size=(30, 3))
    perm = rng.permutation(20)
    est = GaussianProcess(1.0, 0.3, 0.01, normalize_y=True)
    m1, v1 = clone(est).fit(X, y).predict(q, return_var=True)
    m2, v2 = clone(est).fit(X[perm], y[perm]).predict(q, return_var=True)
    np.testing.assert_allclose(m1, m2, atol=1e-8)
    np.testing.assert_allclose(v1, v2, atol=1e-8)


def test_jitter_rescues_duplicates_without_noise():
    X = np.array([[0.5, 0.5], [0.5, 0.5], [0.1, 0.9]])
    m = GaussianProcess(1.0, 0.3, 0.0).fit(X, [1.0, 1.0, 0.0])
    assert 0 < m.jitter_ <= 1e-4


def test_estimator_api():
    est = GaussianProcess(amplitude=2.0, lengthscales=0.5, noise_variance=0.1)
    params = est.get_params()
    assert params["amplitude"] == 2.0
    est.set_params(amplitude=3.0)
    assert clone(est).amplitude == 3.0
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(10, 2))
    y = X.sum(1)
    assert est.fit(X, y) is est
    assert est.score(X, y) > 0.9
    with pytest.raises(ValueError):
        GaussianProcess().fit(X, y[:5])


def test_normalized_fit_handles_offset_targets():
    rng = np.random.default_rng(8)
    X = rng.uniform(size=(30, 3))
    y = 36.0 + np.sin(3 * X[:, 0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m = GaussianProcess(optimize=True, normalize_y=True, random_state=0).fit(X, y)
    pred = m.predict(X)
    assert np.max(np.abs(pred - y)) < 0.05
