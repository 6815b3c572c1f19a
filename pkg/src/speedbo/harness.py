"""Experiment orchestration: configs, traces, summaries, studies and reports."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .acquisition import TaskKind
from .baselines import best_measured, grid_search, random_search
from .constraint import ConstraintSpec
from .evaluator import (FAST_SETTING, SLOW_SETTING, ExternalCommandSpec,
                        ExternalDecoder, SimulatedDecoder, SimulatorConfig)
from .optimizer import COUPLED, DECOUPLED, DEFAULT_DELTA, ConstrainedBayesOpt
from .space import SearchSpace, decoder_space

log = logging.getLogger(__name__)

METHODS = ("bo-s", "bo-d", "grid", "random")
DEFAULT_BUDGET = {"bo-s": 125, "bo-d": 250, "random": 125}

TRACE_FIELDS = (
    "method", "iteration", "task", "x", "objective", "speed_wpm",
    "wall_seconds", "cumulative_decode_seconds", "bo_overhead_seconds",
    "cumulative_overhead_seconds", "failed", "incumbent_x",
    "incumbent_objective", "incumbent_pof", "threshold", "delta",
)


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the culprit."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    method: str = "bo-s"
    threshold: float = 2000.0
    delta: Optional[float] = None
    budget: Optional[int] = None
    values_per_dim: int = 5
    n_init: int = 3
    seed: int = 0
    space: Optional[list] = None
    simulator: Optional[dict] = None
    external: Optional[dict] = None
    output_dir: str = "runs/out"
    record_overhead: bool = True
    final_measurements: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {METHODS}")
        if not self.threshold > 0:
            raise ConfigError("threshold", "must be > 0")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ConfigError("delta", "must lie in (0, 1)")
        if self.budget is not None and self.budget < 1:
            raise ConfigError("budget", "must be positive")
        if self.values_per_dim < 2:
            raise ConfigError("values_per_dim", "must be >= 2")
        if self.n_init < 1:
            raise ConfigError("n_init", "must be >= 1")
        if self.method in ("bo-s", "bo-d") and self.resolved_budget < self.n_init:
            raise ConfigError("budget", "must be >= n_init")
        if self.simulator is not None and self.external is not None:
            raise ConfigError("external", "configure either simulator or external, not both")
        if self.final_measurements < 1:
            raise ConfigError("final_measurements", "must be >= 1")
        try:
            self.search_space()
            self.make_evaluator()
        except (TypeError, ValueError, KeyError) as exc:
            name = "external" if self.external is not None else "simulator"
            if not isinstance(exc, ConfigError):
                name = "space" if "space" in str(exc) else name
            raise ConfigError(getattr(exc, "field", name), str(exc)) from exc

    @property
    def resolved_delta(self) -> float:
        if self.delta is not None:
            return self.delta
        return DEFAULT_DELTA[DECOUPLED if self.method == "bo-d" else COUPLED]

    @property
    def resolved_budget(self) -> int:
        if self.budget is not None:
            return self.budget
        if self.method == "grid":
            return self.values_per_dim ** len(self.space or [0, 0, 0])
        return DEFAULT_BUDGET[self.method]

    def search_space(self) -> SearchSpace:
        if self.space is None:
            return decoder_space()
        return SearchSpace.from_dict(self.space)

    def make_evaluator(self):
        if self.external is not None:
            return ExternalDecoder(ExternalCommandSpec(**self.external))
        return SimulatedDecoder(SimulatorConfig(**(self.simulator or {})),
                                seed=self.seed)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config field")
        return cls(**data)

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        with open(path) as fh:
            data = json.load(fh)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


class TraceWriter:
    """Writes one JSON record per evaluation, flushed as it goes."""

    def __init__(self, path, method, threshold, delta):
        self.path = Path(path)
        self.method = method
        self.threshold = threshold
        self.delta = delta
        self.cum_decode = 0.0
        self.cum_overhead = 0.0
        self.rows = []
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")

    def __call__(self, obs, rec=None):
        self.cum_decode += obs.duration_seconds
        self.cum_overhead += obs.overhead_seconds
        row = dict(
            method=self.method, iteration=obs.iteration, task=obs.task.value,
            x=list(obs.x), objective=_num(obs.objective),
            speed_wpm=_num(obs.speed), wall_seconds=_num(obs.duration_seconds),
            cumulative_decode_seconds=self.cum_decode,
            bo_overhead_seconds=_num(obs.overhead_seconds),
            cumulative_overhead_seconds=self.cum_overhead,
            failed=obs.failed,
            incumbent_x=list(rec.x) if rec is not None and rec.feasible_under_model else None,
            incumbent_objective=(_num(rec.posterior_objective_mean)
                                 if rec is not None and rec.feasible_under_model else None),
            incumbent_pof=_num(rec.prob_feasible) if rec is not None else None,
            threshold=self.threshold, delta=self.delta,
        )
        self._fh.write(json.dumps({k: row[k] for k in TRACE_FIELDS}) + "\n")
        self._fh.flush()
        self.rows.append(row)

    def close(self):
        self._fh.close()


def read_trace(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def best_so_far(rows, series=None):
    """Running best feasible objective per row.

    Baseline rows count as feasible when the measured speed exceeds the
    threshold; BO rows use ``series`` (final-model rescoring) when given,
    else their recorded incumbent.
    """
    out, best = [], -math.inf
    for i, r in enumerate(rows):
        if r["method"] in ("grid", "random"):
            if (not r["failed"] and r["speed_wpm"] is not None
                    and r["objective"] is not None
                    and r["speed_wpm"] > r["threshold"]):
                best = max(best, r["objective"])
        elif series is not None:
            v = series[i]
            best = max(best, v if v is not None else -math.inf)
        elif r["incumbent_objective"] is not None:
            best = max(best, r["incumbent_objective"])
        out.append(best if best > -math.inf else None)
    return out


def write_plot_data(path, rows, series=None):
    best = best_so_far(rows, series)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "cumulative_decode_seconds",
                    "cumulative_total_seconds", "best_feasible_objective"])
        for r, b in zip(rows, best):
            w.writerow([r["iteration"], repr(r["cumulative_decode_seconds"]),
                        repr(r["cumulative_decode_seconds"] + r["cumulative_overhead_seconds"]),
                        "" if b is None else repr(b)])


def _final_measurements(evaluator, x, k):
    objs, speeds = [], []
    for _ in range(k):
        res = evaluator(x, TaskKind.BOTH)
        objs.append(res.objective)
        speeds.append(res.speed_wpm)
    return float(np.mean(objs)), float(np.mean(speeds))


def run_experiment(config: ExperimentConfig) -> dict:
    """Run one method and write trace.jsonl, summary.json and best_so_far.csv."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    space = config.search_space()
    evaluator = config.make_evaluator()
    delta = config.resolved_delta
    spec = ConstraintSpec(config.threshold, delta)
    trace = TraceWriter(out / "trace.jsonl", config.method, config.threshold, delta)
    summary = dict(method=config.method, threshold=config.threshold, delta=delta,
                   config=config.to_dict())
    rescored = None
    try:
        if config.method in ("bo-s", "bo-d"):
            bo = ConstrainedBayesOpt(
                space, evaluator, spec,
                mode=COUPLED if config.method == "bo-s" else DECOUPLED,
                budget=config.resolved_budget, n_init=config.n_init,
                seed=config.seed,
                clock=time.perf_counter if config.record_overhead else None,
                on_observation=trace)
            history, rec = bo.run()
            rescored = [None if not math.isfinite(v) else v
                        for v in bo.rescore_trace()]
            x_final = rec.x
            summary.update(posterior_objective_mean=rec.posterior_objective_mean,
                           prob_feasible=rec.prob_feasible,
                           feasible_under_model=rec.feasible_under_model,
                           fallback_used=rec.fallback_used,
                           final_model_rescore=rescored)
        else:
            if config.method == "grid":
                history, x_final = grid_search(space, evaluator, spec,
                                               config.values_per_dim, trace)
            else:
                history, x_final = random_search(space, evaluator, spec,
                                                 config.resolved_budget,
                                                 config.seed, trace)
            best = best_measured(history, config.threshold)
            summary.update(best_measured_objective=best.objective if best else None,
                           best_measured_speed=best.speed if best else None)
    finally:
        trace.close()

    summary.update(
        x=list(x_final) if x_final is not None else None,
        parameter_names=space.names,
        iterations=len(history),
        objective_evaluations=history.objective_evaluations,
        constraint_only_evaluations=history.count(TaskKind.CONSTRAINT),
        total_decode_seconds=trace.cum_decode,
        total_overhead_seconds=trace.cum_overhead,
    )
    if x_final is not None:
        obj, speed = _final_measurements(evaluator, x_final,
                                         config.final_measurements)
        summary.update(tuning_objective=obj, measured_speed_wpm=speed,
                       final_measurements=config.final_measurements)
    else:
        summary.update(tuning_objective=None, measured_speed_wpm=None)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    write_plot_data(out / "best_so_far.csv", trace.rows, rescored)
    return summary


def noise_study(evaluator, slow=SLOW_SETTING, fast=FAST_SETTING, repeats=100,
                bins=20) -> dict:
    """Repeated full-set speed measurements at a slow and a fast setting."""
    if repeats < 2:
        raise ValueError("repeats must be >= 2")
    report = {}
    for label, x in (("slow", tuple(slow)), ("fast", tuple(fast))):
        speeds = np.array([evaluator(x, TaskKind.BOTH).speed_wpm
                           for _ in range(repeats)])
        logs = np.log(speeds)
        counts, edges = np.histogram(speeds, bins=bins)
        report[label] = dict(
            x=list(x), speeds=speeds.tolist(),
            mean=float(speeds.mean()), std=float(speeds.std(ddof=1)),
            log_mean=float(logs.mean()), log_std=float(logs.std(ddof=1)),
            hist_counts=counts.tolist(), hist_edges=edges.tolist())
    report["raw_std_ratio"] = report["fast"]["std"] / report["slow"]["std"]
    report["log_std_ratio"] = report["fast"]["log_std"] / report["slow"]["log_std"]
    return report


def format_noise_table(report) -> str:
    s, f = report["slow"], report["fast"]
    lines = [
        f"{'':10s} {'slow mean':>12s} {'slow std':>10s} {'fast mean':>12s} {'fast std':>10s}",
        f"{'speed':10s} {s['mean']:12.2f} {s['std']:10.2f} {f['mean']:12.1f} {f['std']:10.1f}",
        f"{'log speed':10s} {s['log_mean']:12.2f} {s['log_std']:10.4f} {f['log_mean']:12.2f} {f['log_std']:10.4f}",
    ]
    return "\n".join(lines)


def _load_run(path):
    path = Path(path)
    if path.is_dir():
        path = path / "trace.jsonl"
    rows = read_trace(path)
    summary_path = path.parent / "summary.json"
    summary = None
    if summary_path.exists():
        with open(summary_path) as fh:
            summary = json.load(fh)
    return path, rows, summary


def compare_report(paths, epsilon=0.0) -> list[dict]:
    """Best feasible objective and time-to-within-epsilon per trace.

    Rows are ordered by decode time to reach the overall best minus
    ``epsilon``; traces that never get there sort last.
    """
    runs = []
    for p in paths:
        path, rows, summary = _load_run(p)
        series = summary.get("final_model_rescore") if summary else None
        runs.append((path, rows, summary, best_so_far(rows, series)))
    finals = [b[-1] for *_, b in runs if b and b[-1] is not None]
    overall = max(finals) if finals else None
    table = []
    for path, rows, summary, best in runs:
        hit = None
        if overall is not None:
            for r, b in zip(rows, best):
                if b is not None and b >= overall - epsilon:
                    hit = r
                    break
        method = rows[0]["method"] if rows else "unknown"
        table.append(dict(
            trace=str(path), method=method,
            best_feasible_objective=best[-1] if best else None,
            evaluations_to_target=(hit["iteration"] + 1) if hit else None,
            decode_seconds_to_target=hit["cumulative_decode_seconds"] if hit else None,
            total_seconds_to_target=(hit["cumulative_decode_seconds"]
                                     + hit["cumulative_overhead_seconds"]) if hit else None,
            final_x=summary.get("x") if summary else None,
        ))
    table.sort(key=lambda r: (r["decode_seconds_to_target"] is None,
                              r["decode_seconds_to_target"] or 0.0))
    return table


def write_report(table, path):
    keys = list(table[0]) if table else ["trace"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in table:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})


def format_report(table) -> str:
    def fmt(v, spec):
        return "-" if v is None else format(v, spec)
    lines = [f"{'method':8s} {'best':>9s} {'evals':>6s} {'decode min':>11s} {'total min':>10s}  trace"]
    for r in table:
        dec = r["decode_seconds_to_target"]
        tot = r["total_seconds_to_target"]
        lines.append(
            f"{r['method']:8s} {fmt(r['best_feasible_objective'], '9.3f')} "
            f"{fmt(r['evaluations_to_target'], '6d')} "
            f"{fmt(dec / 60 if dec is not None else None, '11.1f')} "
            f"{fmt(tot / 60 if tot is not None else None, '10.1f')}  {r['trace']}")
    return "\n".join(lines)
