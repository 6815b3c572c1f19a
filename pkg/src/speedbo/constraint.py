"""Probabilistic speed constraint modelled on log-throughput."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .gp import GaussianProcess, HyperparamBounds, warm_fit


class MeasurementError(ValueError):
    """A speed measurement was not strictly positive."""


@dataclass(frozen=True)
class ConstraintSpec:
    """Minimum raw throughput ``threshold`` accepted with tolerance ``delta``."""
    threshold: float
    delta: float = 0.01

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be > 0")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def log_threshold(self) -> float:
        return math.log(self.threshold)


def log_speed(speed):
    speed = np.asarray(speed, dtype=float)
    if np.any(~(speed > 0)):
        raise MeasurementError(f"speed must be > 0, got {speed}")
    return np.log(speed)


def feasibility_probability(mean, var, log_threshold):
    """Phi((mean - log_threshold) / std), with the sigma = 0 limit handled."""
    mean = np.asarray(mean, dtype=float)
    std = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    z = np.divide(mean - log_threshold, std, out=np.zeros_like(mean),
                  where=std > 0)
    p = ndtr(z)
    return np.where(std > 0, p, (mean > log_threshold).astype(float))


LOG_SPEED_BOUNDS = HyperparamBounds(lengthscale=(0.01, 10.0),
                                    amplitude=(1.0, 100.0),
                                    noise=(1e-6, 1.0), relative=False)


def default_constraint_gp(seed=0):
    """Log-speed GP with bounds in nats so few, similar measurements cannot
    shrink the prior spread to their own sample variance."""
    return GaussianProcess(amplitude=4.0, lengthscales=0.5, noise_variance=1e-2,
                           optimize=True, n_restarts=2, normalize_y="center",
                           bounds=LOG_SPEED_BOUNDS, random_state=seed)


class ConstraintModel:
    """GP over (unit x, ln speed) pairs answering p(speed(x) > t) queries.

    ``gp`` is an unfitted :class:`GaussianProcess` used as a template; every
    new observation refits a clone of it from scratch.
    """

    def __init__(self, spec: ConstraintSpec, gp: GaussianProcess | None = None,
                 prior_amplitude: float = 1.0):
        self.spec = spec
        self.gp = gp if gp is not None else default_constraint_gp()
        self.prior_amplitude = prior_amplitude
        self.X = []
        self.log_speeds = []
        self.model_ = None

    def __len__(self):
        return len(self.log_speeds)

    def add_speed_observation(self, x, speed_raw: float, refit=True):
        self.log_speeds.append(float(log_speed(speed_raw)))
        self.X.append(np.asarray(x, dtype=float))
        if refit:
            self.refit()
        return self

    def refit(self, gp: GaussianProcess | None = None):
        if not self.log_speeds:
            self.model_ = None
            return self
        template = gp if gp is not None else self.gp
        self.model_ = warm_fit(template, self.model_, np.array(self.X),
                               np.array(self.log_speeds))
        return self

    def posterior(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.model_ is None:
            return np.zeros(len(X)), np.full(len(X), self.prior_amplitude)
        return self.model_._predict(X, return_var=True)

    def prob_feasible(self, X):
        mean, var = self.posterior(X)
        return feasibility_probability(mean, var, self.spec.log_threshold)

    def is_trusted(self, X):
        return self.prob_feasible(X) >= 1.0 - self.spec.delta
