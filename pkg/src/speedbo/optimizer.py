"""Sequential constrained Bayesian optimization loop.

Coupled mode measures objective and speed together at every iteration.
Decoupled mode chooses, per iteration, whether to decode the full set for the
objective or the cheap subset for speed, and refits only the matching model.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .acquisition import (Suggestion, TaskKind, constrained_acquisition,
                          decoupled_utilities, maximize_acquisition,
                          select_task)
from .constraint import ConstraintModel, ConstraintSpec, default_constraint_gp
from .evaluator import EvaluationError
from .gp import GaussianProcess, warm_fit
from .space import SearchSpace

log = logging.getLogger(__name__)

COUPLED = "coupled"
DECOUPLED = "decoupled"
DEFAULT_DELTA = {COUPLED: 0.01, DECOUPLED: 0.05}


class BudgetExhausted(RuntimeError):
    pass


@dataclass
class Observation:
    x: tuple
    task: TaskKind
    objective: Optional[float]
    speed: Optional[float]
    duration_seconds: float
    iteration: int
    overhead_seconds: float = 0.0
    failed: bool = False
    error: Optional[str] = None

    def __post_init__(self):
        self.task = TaskKind(self.task)
        if self.failed:
            return
        need_obj = self.task is not TaskKind.CONSTRAINT
        need_con = self.task is not TaskKind.OBJECTIVE
        if need_obj != (self.objective is not None) or \
                need_con != (self.speed is not None):
            raise ValueError(
                f"task {self.task.value} inconsistent with measured values")


@dataclass
class History:
    observations: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def append(self, obs: Observation):
        if self.observations and obs.iteration <= self.observations[-1].iteration:
            raise ValueError("iteration indices must strictly increase")
        self.observations.append(obs)

    def __len__(self):
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    def objective_data(self):
        return [o for o in self.observations
                if not o.failed and o.objective is not None]

    def constraint_data(self):
        return [o for o in self.observations
                if not o.failed and o.speed is not None]

    def count(self, *tasks):
        return sum(o.task in tasks for o in self.observations)

    @property
    def objective_evaluations(self):
        return self.count(TaskKind.BOTH, TaskKind.OBJECTIVE)


@dataclass(frozen=True)
class Recommendation:
    x: tuple
    posterior_objective_mean: float
    prob_feasible: float
    feasible_under_model: bool
    fallback_used: bool


def default_gp(seed=0):
    return GaussianProcess(amplitude=1.0, lengthscales=0.3, noise_variance=1e-2,
                           optimize=True, n_restarts=2, normalize_y=True,
                           random_state=seed)


class ConstrainedBayesOpt:
    """Maximize a noisy objective subject to p(speed > t) >= 1 - delta.

    Parameters
    ----------
    space : SearchSpace
    evaluator : callable
        ``evaluator(raw_x, task) -> EvaluationResult``.
    constraint : ConstraintSpec
    mode : {"coupled", "decoupled"}
    budget : int
        Total iterations, including the ``n_init`` random evaluations.
    clock : callable or None
        Source of BO overhead timings; ``None`` records zero overhead, which
        keeps traces byte-identical across runs.
    on_observation : callable, optional
        Called as ``on_observation(observation, recommendation_or_None)``
        after every evaluation.
    """

    def __init__(self, space: SearchSpace, evaluator, constraint: ConstraintSpec,
                 mode=COUPLED, budget=125, n_init=3, seed=0,
                 objective_gp=None, constraint_gp=None, n_candidates=512,
                 n_refine=5, max_constraint_streak=10,
                 clock: Optional[Callable[[], float]] = time.perf_counter,
                 on_observation=None):
        if mode not in (COUPLED, DECOUPLED):
            raise ValueError(f"unknown mode {mode!r}")
        if n_init < 1:
            raise ValueError("n_init must be >= 1")
        if budget < n_init:
            raise ValueError("budget must be >= n_init")
        self.space = space
        self.evaluator = evaluator
        self.spec = constraint
        self.mode = mode
        self.budget = budget
        self.n_init = n_init
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.objective_gp = objective_gp or default_gp(seed)
        self.constraint_model = ConstraintModel(
            constraint, constraint_gp or default_constraint_gp(seed + 1))
        self.objective_model_ = None
        self.n_candidates = n_candidates
        self.n_refine = n_refine
        self.max_constraint_streak = max_constraint_streak
        self.clock = clock
        self.on_observation = on_observation
        self.history = History(config=dict(
            mode=mode, budget=budget, n_init=n_init, seed=seed,
            threshold=constraint.threshold, delta=constraint.delta))

    # -- bookkeeping -------------------------------------------------------

    def _now(self):
        return self.clock() if self.clock is not None else 0.0

    @property
    def iterations_done(self):
        return len(self.history)

    def _unit(self, obs_list):
        return np.array([self.space.to_unit(o.x) for o in obs_list])

    def _refit_objective(self):
        data = self.history.objective_data()
        if not data:
            self.objective_model_ = None
            return
        self.objective_model_ = warm_fit(
            self.objective_gp, self.objective_model_, self._unit(data),
            np.array([o.objective for o in data]))

    def _refit_constraint(self):
        cm = self.constraint_model
        data = self.history.constraint_data()
        cm.X = list(self._unit(data))
        cm.log_speeds = [float(np.log(o.speed)) for o in data]
        cm.refit()

    def _evaluate(self, x_raw, task, overhead, propagate=False):
        it = self.iterations_done
        try:
            res = self.evaluator(x_raw, task)
        except EvaluationError as exc:
            if propagate:
                raise
            log.warning("evaluation failed at %s: %s", x_raw, exc)
            obs = Observation(tuple(x_raw), task, None, None, 0.0, it,
                              overhead, failed=True, error=str(exc))
        else:
            obs = Observation(tuple(int(v) for v in x_raw), task,
                              res.objective, res.speed_wpm, res.wall_seconds,
                              it, overhead)
        self.history.append(obs)
        return obs

    def _notify(self, obs):
        if self.on_observation is not None:
            rec = self.recommend() if self.history.objective_data() else None
            self.on_observation(obs, rec)

    # -- algorithm ---------------------------------------------------------

    def initialize(self):
        """Evaluate ``n_init`` uniform random points with both measurements.

        A failing initial evaluation raises: there is nothing to model yet.
        """
        init = [self.space.sample_uniform(self.rng) for _ in range(self.n_init)]
        for x in init:
            self._evaluate(x, TaskKind.BOTH, 0.0, propagate=True)
        t0 = self._now()
        self._refit_objective()
        self._refit_constraint()
        overhead = self._now() - t0
        if self.history.observations:
            self.history.observations[-1].overhead_seconds += overhead
        for obs in self.history.observations:
            self._notify(obs)
        return self.history

    def incumbent(self):
        """Best observed objective among points trusted by the speed model."""
        data = self.history.objective_data()
        if not data:
            return None
        trusted = self.constraint_model.is_trusted(self._unit(data))
        vals = [o.objective for o, ok in zip(data, trusted) if ok]
        return max(vals) if vals else None

    def _observed_unit(self):
        return self._unit(self.history.observations) if len(self.history) else None

    def task_costs(self):
        """Running mean duration of full-set and subset decodes (None if unseen)."""
        full = [o.duration_seconds for o in self.history
                if not o.failed and o.task is not TaskKind.CONSTRAINT]
        sub = [o.duration_seconds for o in self.history
               if not o.failed and o.task is TaskKind.CONSTRAINT]
        return (float(np.mean(full)) if full else None,
                float(np.mean(sub)) if sub else None)

    def _constraint_streak(self):
        k = 0
        for o in reversed(self.history.observations):
            if o.task is not TaskKind.CONSTRAINT:
                break
            k += 1
        return k

    def suggest(self) -> Suggestion:
        inc = self.incumbent()
        obj, con = self.objective_model_, self.constraint_model
        seed = int(self.rng.integers(2**32))
        observed = self._observed_unit()
        if self.mode == COUPLED:
            x, v = maximize_acquisition(
                self.space,
                lambda X: constrained_acquisition(X, obj, con, inc),
                seed, observed, self.n_candidates, self.n_refine)
            return Suggestion(x, TaskKind.BOTH, max(v, 0.0),
                              self.task_costs()[0] or 1.0)

        x_obj, u_obj = maximize_acquisition(
            self.space, lambda X: decoupled_utilities(X, obj, con, inc)[0],
            seed, observed, self.n_candidates, self.n_refine)
        x_con, u_con = maximize_acquisition(
            self.space, lambda X: decoupled_utilities(X, obj, con, inc)[1],
            seed, observed, self.n_candidates, self.n_refine)
        cost_obj, cost_con = self.task_costs()
        if cost_con is None:
            # first subset decode measures its cost
            return Suggestion(x_con, TaskKind.CONSTRAINT, max(u_con, 0.0),
                              cost_obj or 1.0)
        if cost_obj is None or self._constraint_streak() >= self.max_constraint_streak:
            return Suggestion(x_obj, TaskKind.OBJECTIVE, max(u_obj, 0.0),
                              cost_obj or cost_con)
        return select_task((x_obj, max(u_obj, 0.0)), (x_con, max(u_con, 0.0)),
                           cost_obj, cost_con)

    def step(self):
        if self.iterations_done >= self.budget:
            raise BudgetExhausted(f"budget of {self.budget} iterations used")
        t0 = self._now()
        sug = self.suggest()
        x_raw = self.space.from_unit(np.clip(sug.x, 0.0, 1.0))
        overhead = self._now() - t0
        obs = self._evaluate(x_raw, sug.task, overhead)
        t1 = self._now()
        if not obs.failed:
            if obs.objective is not None:
                self._refit_objective()
            if obs.speed is not None:
                self._refit_constraint()
        obs.overhead_seconds += self._now() - t1
        self._notify(obs)
        return self.history

    def recommend(self) -> Recommendation:
        """Best posterior objective mean among observed, model-trusted points."""
        if not len(self.history):
            raise ValueError("cannot recommend from an empty history")
        data = self.history.objective_data()
        if not data or self.objective_model_ is None:
            raise ValueError("no successful objective measurements")
        xs = sorted({o.x for o in data})
        U = np.array([self.space.to_unit(x) for x in xs])
        means = self.objective_model_.predict(U)
        pof = self.constraint_model.prob_feasible(U)
        trusted = pof >= 1.0 - self.spec.delta
        if trusted.any():
            i = int(np.argmax(np.where(trusted, means, -np.inf)))
            fallback = False
        else:
            i = int(np.argmax(pof))
            fallback = True
        return Recommendation(xs[i], float(means[i]), float(pof[i]),
                              bool(trusted[i]), fallback)

    def run(self):
        self.initialize()
        while self.iterations_done < self.budget:
            self.step()
        return self.history, self.recommend()

    def rescore_trace(self):
        """Per-iteration best trusted posterior mean under the final models."""
        obs = self.history.observations
        if not obs or self.objective_model_ is None:
            return []
        out, best = [], -np.inf
        for o in obs:
            if not o.failed and o.objective is not None:
                u = self.space.to_unit(o.x)[None]
                if self.constraint_model.is_trusted(u)[0]:
                    best = max(best, float(self.objective_model_.predict(u)[0]))
            out.append(best)
        return out


def run(space, evaluator, constraint_spec, budget, mode=COUPLED, seed=0, **kw):
    """Initialize, iterate to ``budget`` and recommend."""
    bo = ConstrainedBayesOpt(space, evaluator, constraint_spec, mode=mode,
                             budget=budget, seed=seed, **kw)
    return bo.run()
