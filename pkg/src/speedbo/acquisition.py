"""Acquisition functions, task selection and acquisition maximization.

Coupled runs score candidates with expected improvement weighted by the
probability of feasibility. Decoupled runs compare a utility for measuring
the objective against one for measuring the constraint, each divided by the
expected cost of the measurement.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class TaskKind(str, enum.Enum):
    BOTH = "both"
    OBJECTIVE = "objective"
    CONSTRAINT = "constraint"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Suggestion:
    x: np.ndarray
    task: TaskKind
    acquisition_value: float
    predicted_cost_seconds: float = 1.0


def expected_improvement(mean, var, incumbent):
    """Closed-form EI for maximization; the zero-variance limit is exact."""
    mean = np.asarray(mean, dtype=float)
    std = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    gain = mean - incumbent
    safe = np.where(std > 0, std, 1.0)
    z = gain / safe
    ei = safe * (z * ndtr(z) + _INV_SQRT_2PI * np.exp(-0.5 * z * z))
    ei = np.where(std > 0, ei, np.maximum(gain, 0.0))
    return np.maximum(ei, 0.0)


def binary_entropy(p):
    """Entropy in nats, zero at p = 0 and p = 1."""
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -p * np.log(p) - (1 - p) * np.log1p(-p)
    return np.nan_to_num(h, nan=0.0)


def constrained_acquisition(X, obj_model, con_model, incumbent=None):
    """EI x PoF, or PoF alone while no trusted incumbent exists."""
    X = np.atleast_2d(X)
    pof = con_model.prob_feasible(X)
    if incumbent is None or obj_model is None:
        return pof
    mean, var = obj_model._predict(X, return_var=True)
    return expected_improvement(mean, var, incumbent) * pof


def decoupled_utilities(X, obj_model, con_model, incumbent=None):
    """(objective utility, constraint utility) arrays for the rows of X.

    The constraint utility weights EI by the entropy of the feasibility
    outcome, so it vanishes where feasibility is already certain. Without an
    incumbent, EI is replaced by 1 and both utilities reduce to feasibility
    search.
    """
    X = np.atleast_2d(X)
    pof = con_model.prob_feasible(X)
    if incumbent is None or obj_model is None:
        ei = np.ones(len(X))
    else:
        mean, var = obj_model._predict(X, return_var=True)
        ei = expected_improvement(mean, var, incumbent)
    return ei * pof, ei * binary_entropy(pof)


def select_task(best_obj, best_con, cost_obj, cost_con) -> Suggestion:
    """Pick the task with the larger utility per second; ties go to the objective.

    ``best_obj`` and ``best_con`` are ``(x, utility)`` pairs.
    """
    if not (cost_obj > 0 and cost_con > 0):
        raise ValueError("task costs must be > 0")
    (x_obj, u_obj), (x_con, u_con) = best_obj, best_con
    if u_con / cost_con > u_obj / cost_obj:
        return Suggestion(np.asarray(x_con), TaskKind.CONSTRAINT, float(u_con),
                          float(cost_con))
    return Suggestion(np.asarray(x_obj), TaskKind.OBJECTIVE, float(u_obj),
                      float(cost_obj))


def _local_search(X, F, score_fn, step=0.1, min_step=1e-3):
    """Coordinate search run in lockstep for every start (rows of X)."""
    X, F = X.copy(), F.copy()
    k, dim = X.shape
    eye = np.eye(dim)
    steps = np.full(k, float(step))
    active = steps >= min_step
    while active.any():
        idx = np.flatnonzero(active)
        dirs = np.vstack([eye, -eye])
        moves = X[idx, None, :] + steps[idx, None, None] * dirs[None]
        moves = np.clip(moves, 0.0, 1.0)
        vals = np.asarray(score_fn(moves.reshape(-1, dim))).reshape(len(idx), -1)
        j = np.argmax(vals, axis=1)
        best = vals[np.arange(len(idx)), j]
        better = best > F[idx]
        X[idx[better]] = moves[np.flatnonzero(better), j[better]]
        F[idx[better]] = best[better]
        steps[idx[~better]] *= 0.5
        active = steps >= min_step
    return X, F


def maximize_acquisition(space, score_fn: Callable, rng=None, observed=None,
                         n_candidates=512, n_refine=5):
    """Multi-start maximization of a vectorized score over the unit cube.

    Scores ``n_candidates`` uniform draws plus any ``observed`` points, then
    polishes the best ``n_refine`` by coordinate search. ``space`` may be a
    :class:`~speedbo.space.SearchSpace` or an integer dimension.
    """
    dim = space if isinstance(space, int) else space.dim
    rng = np.random.default_rng(rng)
    cands = rng.uniform(size=(n_candidates, dim))
    if observed is not None and len(observed):
        cands = np.vstack([cands, np.atleast_2d(observed)])
    # canonical order makes the result independent of how seeds were listed
    cands = cands[np.lexsort(cands.T[::-1])]
    vals = np.asarray(score_fn(cands), dtype=float)
    order = np.argsort(-vals, kind="stable")[:n_refine]
    X, F = _local_search(cands[order], vals[order], score_fn)
    i = int(np.argmax(F))
    return X[i], float(F[i])
