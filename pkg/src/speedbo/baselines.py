"""Grid and random search baselines.

Both decode every configuration once and return the highest measured score
among configurations whose single speed measurement exceeds the threshold.
"""
from __future__ import annotations

import numpy as np

from .acquisition import TaskKind
from .evaluator import EvaluationError
from .optimizer import History, Observation


def _evaluate_all(points, evaluator, on_observation=None, config=None):
    history = History(config=dict(config or {}))
    for i, x in enumerate(points):
        try:
            res = evaluator(x, TaskKind.BOTH)
        except EvaluationError as exc:
            obs = Observation(tuple(x), TaskKind.BOTH, None, None, 0.0, i,
                              failed=True, error=str(exc))
        else:
            obs = Observation(tuple(int(v) for v in x), TaskKind.BOTH,
                              res.objective, res.speed_wpm, res.wall_seconds, i)
        history.append(obs)
        if on_observation is not None:
            on_observation(obs, None)
    return history


def best_measured(history: History, threshold: float):
    """Highest-objective observation with measured speed strictly above threshold."""
    best = None
    for o in history:
        if o.failed or o.speed is None or o.objective is None:
            continue
        if o.speed > threshold and (best is None or o.objective > best.objective):
            best = o
    return best


def grid_search(space, evaluator, constraint_spec, values_per_dim,
                on_observation=None):
    points = space.grid_values(values_per_dim)
    history = _evaluate_all(points, evaluator, on_observation,
                            dict(mode="grid", values_per_dim=values_per_dim,
                                 threshold=constraint_spec.threshold))
    best = best_measured(history, constraint_spec.threshold)
    return history, (best.x if best else None)


def random_search(space, evaluator, constraint_spec, budget, seed=0,
                  on_observation=None):
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    points = [space.sample_uniform(rng) for _ in range(budget)]
    history = _evaluate_all(points, evaluator, on_observation,
                            dict(mode="random", budget=budget, seed=seed,
                                 threshold=constraint_spec.threshold))
    best = best_measured(history, constraint_spec.threshold)
    return history, (best.x if best else None)
