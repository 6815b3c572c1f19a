"""Zero-mean Gaussian process regression with a Matern-5/2 kernel.

The estimator follows the scikit-learn conventions: hyperparameters are
constructor arguments, ``fit`` learns the posterior state (trailing
underscore attributes) and returns ``self``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

SQRT5 = math.sqrt(5.0)
JITTER_START = 1e-8
JITTER_MAX = 1e-4


class GPNumericalError(np.linalg.LinAlgError):
    """Gram matrix could not be factorized even with maximal jitter."""


class HyperparameterWarning(UserWarning):
    """Every hyperparameter restart failed; the initial values were kept."""


@dataclass(frozen=True)
class GPHyperparams:
    amplitude: float
    lengthscales: tuple
    noise_variance: float

    def __post_init__(self):
        object.__setattr__(self, "lengthscales",
                           tuple(float(v) for v in np.atleast_1d(self.lengthscales)))
        if self.amplitude <= 0:
            raise ValueError("amplitude must be > 0")
        if any(v <= 0 for v in self.lengthscales):
            raise ValueError("lengthscales must be > 0")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def to_log(self) -> np.ndarray:
        # noise enters in log space, so clamp an exact zero
        return np.log(np.r_[self.amplitude, self.lengthscales,
                            max(self.noise_variance, 1e-300)])

    @classmethod
    def from_log(cls, theta) -> "GPHyperparams":
        theta = np.exp(np.asarray(theta, dtype=float))
        return cls(float(theta[0]), tuple(theta[1:-1]), float(theta[-1]))


@dataclass(frozen=True)
class HyperparamBounds:
    """Box bounds in natural units.

    Amplitude and noise bounds are multiples of var(y) unless ``relative`` is
    false, in which case they are absolute.
    """
    lengthscale: tuple = (0.01, 10.0)
    amplitude: tuple = (1e-4, 1e2)
    noise: tuple = (1e-8, 1.0)
    relative: bool = True

    def log_bounds(self, dim: int, y_var: float) -> list[tuple]:
        v = y_var if y_var > 0 and self.relative else 1.0
        amp = (self.amplitude[0] * v, self.amplitude[1] * v)
        noise = (self.noise[0], max(self.noise[1] * v, self.noise[0] * 10))
        out = [amp] + [self.lengthscale] * dim + [noise]
        return [(math.log(lo), math.log(hi)) for lo, hi in out]


@dataclass(frozen=True)
class PosteriorPrediction:
    mean: float
    variance: float

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def _scaled_sqdist(X1, X2, lengthscales):
    diff = (X1[:, None, :] - X2[None, :, :]) / lengthscales
    return np.einsum("ijk,ijk->ij", diff, diff)


def matern52(X1, X2, amplitude, lengthscales):
    """Matern-5/2 cross-covariance matrix between the rows of X1 and X2."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    ls = np.asarray(lengthscales, dtype=float)
    if X1.shape[1] != ls.size or X2.shape[1] != ls.size:
        raise ValueError(
            f"input dimension {X1.shape[1]}/{X2.shape[1]} does not match "
            f"{ls.size} lengthscales")
    r = np.sqrt(_scaled_sqdist(X1, X2, ls))
    return amplitude * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)


def kernel_eval(hp: GPHyperparams, x, x_prime) -> float:
    x = np.asarray(x, dtype=float).ravel()
    x_prime = np.asarray(x_prime, dtype=float).ravel()
    if x.size != hp.dim or x_prime.size != hp.dim:
        raise ValueError("vector dimension does not match lengthscales")
    return float(matern52(x[None], x_prime[None], hp.amplitude, hp.lengthscales)[0, 0])


def _cholesky(K):
    """Cholesky factor with escalating diagonal jitter; returns (L, jitter)."""
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(K + jitter * np.eye(len(K))), jitter
        except np.linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                cond = np.linalg.cond(K)
                raise GPNumericalError(
                    f"Gram matrix not positive definite up to jitter "
                    f"{JITTER_MAX:g} (n={len(K)}, cond={cond:.3g})") from None


def _pairwise_sq(X):
    diff = X[:, None, :] - X[None, :, :]
    return diff * diff


def _lml_and_grad(theta, X, y, with_grad=True, sq=None):
    """LML and its gradient in log-hyperparameters.

    ``sq`` caches the per-dimension squared differences of X across calls.
    """
    hp = GPHyperparams.from_log(theta)
    inv_ls2 = 1.0 / np.asarray(hp.lengthscales) ** 2
    n = len(y)
    if sq is None:
        sq = _pairwise_sq(X)
    scaled = sq * inv_ls2
    r = np.sqrt(scaled.sum(-1))
    e = np.exp(-SQRT5 * r)
    Ks = hp.amplitude * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * e
    K = Ks + hp.noise_variance * np.eye(n)
    L, _ = _cholesky(K)
    alpha = cho_solve((L, True), y, check_finite=False)
    lml = (-0.5 * y @ alpha - np.log(np.diag(L)).sum()
           - 0.5 * n * math.log(2 * math.pi))
    if not with_grad:
        return lml, None
    Linv = solve_triangular(L, np.eye(n), lower=True, check_finite=False)
    W = np.outer(alpha, alpha) - Linv.T @ Linv
    grad = np.empty(len(theta))
    grad[0] = 0.5 * np.sum(W * Ks)
    base = hp.amplitude * (5.0 / 3.0) * (1.0 + SQRT5 * r) * e
    grad[1:-1] = 0.5 * np.einsum("ij,ijk->k", W * base, scaled)
    grad[-1] = 0.5 * hp.noise_variance * np.trace(W)
    return lml, grad


def log_marginal_likelihood(hp: GPHyperparams, X, y) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    return float(_lml_and_grad(hp.to_log(), X, y, with_grad=False)[0])


def log_marginal_likelihood_grad(hp: GPHyperparams, X, y) -> np.ndarray:
    """Gradient with respect to (log amplitude, log lengthscales, log noise)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    return _lml_and_grad(hp.to_log(), X, y)[1]


def optimize_hyperparams(X, y, init: GPHyperparams,
                         bounds: HyperparamBounds | None = None,
                         n_restarts: int = 3, rng=None) -> GPHyperparams:
    """Maximize the log marginal likelihood over log-hyperparameters.

    Starts from ``init`` (clipped into bounds) plus ``n_restarts`` random
    points drawn uniformly in the log-box. The result never has a lower
    likelihood than the clipped ``init``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(y) < 2:
        raise ValueError("need at least two observations")
    bounds = bounds or HyperparamBounds()
    lb = bounds.log_bounds(X.shape[1], float(np.var(y)))
    lo = np.array([b[0] for b in lb])
    hi = np.array([b[1] for b in lb])
    theta0 = np.clip(init.to_log(), lo, hi)
    rng = np.random.default_rng(rng)
    starts = [theta0] + [rng.uniform(lo, hi) for _ in range(n_restarts)]

    sq = _pairwise_sq(X)

    def neg(theta):
        try:
            f, g = _lml_and_grad(theta, X, y, sq=sq)
        except GPNumericalError:
            return 1e25, np.zeros_like(theta)
        return -f, -g

    best_theta, best_f = None, np.inf
    try:
        f0 = neg(theta0)[0]
        if f0 < 1e25:
            best_theta, best_f = theta0, f0
    except (FloatingPointError, ValueError):
        pass
    for start in starts:
        try:
            res = minimize(neg, start, jac=True, method="L-BFGS-B",
                           bounds=lb, options={"maxiter": 200})
        except (FloatingPointError, ValueError, np.linalg.LinAlgError):
            continue
        if np.isfinite(res.fun) and res.fun < best_f:
            best_theta, best_f = np.clip(res.x, lo, hi), res.fun
    if best_theta is None:
        warnings.warn("all hyperparameter restarts failed; keeping init",
                      HyperparameterWarning)
        return init
    return GPHyperparams.from_log(best_theta)


class GaussianProcess(RegressorMixin, BaseEstimator):
    """GP regressor with Matern-5/2 kernel and Gaussian noise.

    Parameters
    ----------
    amplitude : float
        Signal variance (in standardized target units if ``normalize_y``).
    lengthscales : float or sequence of float, optional
        One per input dimension; a scalar is broadcast. Defaults to 0.3.
    noise_variance : float
        Observation noise variance.
    optimize : bool
        Fit hyperparameters by marginal likelihood on each ``fit`` call,
        using the constructor values as the first start.
    n_restarts : int
        Random restarts for the hyperparameter search.
    normalize_y : bool or "center"
        Standardize targets before fitting (``"center"`` only subtracts the
        mean); predictions are mapped back.
    random_state : int or None
        Seed for the restart draws.
    """

    def __init__(self, amplitude=1.0, lengthscales=None, noise_variance=1e-2,
                 optimize=False, n_restarts=3, normalize_y=False,
                 bounds=None, random_state=None):
        self.amplitude = amplitude
        self.lengthscales = lengthscales
        self.noise_variance = noise_variance
        self.optimize = optimize
        self.n_restarts = n_restarts
        self.normalize_y = normalize_y
        self.bounds = bounds
        self.random_state = random_state

    def _init_hyperparams(self, dim):
        ls = 0.3 if self.lengthscales is None else self.lengthscales
        ls = np.broadcast_to(np.asarray(ls, dtype=float), (dim,))
        return GPHyperparams(float(self.amplitude), tuple(ls),
                             float(self.noise_variance))

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        y = y.astype(float)
        if self.normalize_y:
            self.y_mean_ = float(y.mean())
            std = float(y.std()) if self.normalize_y != "center" else 1.0
            self.y_std_ = std if std > 0 else 1.0
        else:
            self.y_mean_, self.y_std_ = 0.0, 1.0
        ys = (y - self.y_mean_) / self.y_std_
        hp = self._init_hyperparams(X.shape[1])
        if self.optimize and len(y) >= 2:
            hp = optimize_hyperparams(X, ys, hp, self.bounds,
                                      self.n_restarts, self.random_state)
        self.hyperparams_ = hp
        self.X_train_ = X
        self.y_train_ = y
        K = matern52(X, X, hp.amplitude, hp.lengthscales)
        K[np.diag_indices_from(K)] += hp.noise_variance
        self.L_, self.jitter_ = _cholesky(K)
        self.alpha_ = cho_solve((self.L_, True), ys)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, return_var=False, include_noise=False):
        """Posterior mean (and variance) at the rows of X.

        The variance is that of the latent function unless
        ``include_noise`` asks for the noisy-observation variance.
        """
        check_is_fitted(self, "alpha_")
        X = check_array(X)
        return self._predict(X, return_var, include_noise)

    def _predict(self, X, return_var=False, include_noise=False):
        hp = self.hyperparams_
        Ks = matern52(X, self.X_train_, hp.amplitude, hp.lengthscales)
        mean = self.y_mean_ + self.y_std_ * (Ks @ self.alpha_)
        if not return_var:
            return mean
        v = solve_triangular(self.L_, Ks.T, lower=True)
        var = hp.amplitude - (v * v).sum(0)
        if include_noise:
            var = var + hp.noise_variance
        var = np.maximum(var, 0.0) * self.y_std_ ** 2
        return mean, var

    def log_marginal_likelihood(self, hyperparams: GPHyperparams | None = None):
        """LML of the (standardized) training targets."""
        check_is_fitted(self, "alpha_")
        hp = hyperparams or self.hyperparams_
        ys = (self.y_train_ - self.y_mean_) / self.y_std_
        return log_marginal_likelihood(hp, self.X_train_, ys)

    def with_hyperparams(self, hp: GPHyperparams) -> "GaussianProcess":
        """Unfitted copy whose constructor arguments are ``hp``."""
        return type(self)(**{**self.get_params(), "amplitude": hp.amplitude,
                             "lengthscales": hp.lengthscales,
                             "noise_variance": hp.noise_variance,
                             "optimize": False})


def fit(hp: GPHyperparams, X, y) -> GaussianProcess:
    """Fixed-hyperparameter fit without target standardization."""
    return GaussianProcess(hp.amplitude, hp.lengthscales, hp.noise_variance).fit(X, y)


def predict(model: GaussianProcess, x) -> PosteriorPrediction:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mean, var = model.predict(x, return_var=True)
    return PosteriorPrediction(float(mean[0]), float(var[0]))


def warm_fit(template: GaussianProcess, previous: GaussianProcess | None, X, y):
    """Fit a clone of ``template``, seeding the search at ``previous``'s fit."""
    est = clone(template)
    if previous is not None and template.optimize:
        hp = previous.hyperparams_
        est.set_params(amplitude=hp.amplitude, lengthscales=hp.lengthscales,
                       noise_variance=hp.noise_variance)
    return est.fit(X, y)
