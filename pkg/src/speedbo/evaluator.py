"""Measurement back-ends: a synthetic decoder and an external-process adapter.

Both are callables ``evaluator(raw_x, task) -> EvaluationResult``. A
constraint-only request decodes the small sentence subset and reports speed
only; every other request decodes the full set.
"""
from __future__ import annotations

import logging
import math
import re
import shlex
import subprocess
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .acquisition import TaskKind

log = logging.getLogger(__name__)

FAST_SPEED = 105_700.0
SLOW_SPEED = 854.23
SLOW_SETTING = (5, 100, 100)
FAST_SETTING = (0, 1, 1)

_SCORE_RE = re.compile(r"^\s*SCORE\s+([-+0-9.eE]+)\s*$", re.MULTILINE)


class EvaluationError(RuntimeError):
    """A measurement could not be obtained for ``x``."""

    def __init__(self, message, x=None, output=""):
        super().__init__(f"{message} (x={x})" if x is not None else message)
        self.x = x
        self.output = output


@dataclass
class EvaluationResult:
    objective: Optional[float]
    speed_wpm: Optional[float]
    words_translated: int
    wall_seconds: float


def _solve_gamma(alpha=0.5, beta=0.55):
    # slow/fast anchors: ln(W0 / slow) = alpha ln 6 + (beta + gamma) ln 100
    return (math.log(FAST_SPEED / SLOW_SPEED) - alpha * math.log(6.0)) \
        / math.log(100.0) - beta


@dataclass
class SimulatorConfig:
    """Noiseless speed is a power law; noiseless score saturates in each knob."""
    W0: float = FAST_SPEED
    alpha: float = 0.5
    beta: float = 0.55
    gamma: float = field(default_factory=_solve_gamma)
    sigma_log: float = 0.05
    B_star: float = 40.0
    A_d: float = 4.0
    A_s: float = 8.0
    A_n: float = 3.0
    tau_d: float = 2.0
    tau_s: float = 1.5
    tau_n: float = 1.5
    sigma_B: float = 0.05
    full_set_words: int = 25_000
    subset_words: int = 1_000
    time_scale: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "tau_d", "tau_s", "tau_n"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("sigma_log", "sigma_B", "A_d", "A_s", "A_n"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.full_set_words <= 0 or self.subset_words <= 0:
            raise ValueError("word counts must be > 0")

    def noiseless_speed(self, d, s, n):
        d, s, n = (np.asarray(v, dtype=float) for v in (d, s, n))
        return (self.W0 * (1.0 + d) ** -self.alpha * s ** -self.beta
                * n ** -self.gamma)

    def noiseless_score(self, d, s, n):
        d, s, n = (np.asarray(v, dtype=float) for v in (d, s, n))
        return (self.B_star - self.A_d * np.exp(-d / self.tau_d)
                - self.A_s * np.exp(-np.log(s) / self.tau_s)
                - self.A_n * np.exp(-np.log(n) / self.tau_n))

    def to_dict(self):
        return asdict(self)


def simulate(cfg: SimulatorConfig, x, task, rng) -> EvaluationResult:
    """One noisy decode of configuration ``x = (d, s, n)``."""
    task = TaskKind(task)
    rng = np.random.default_rng(rng)
    d, s, n = x
    speed = float(cfg.noiseless_speed(d, s, n)) * math.exp(
        rng.normal(0.0, cfg.sigma_log))
    score = float(cfg.noiseless_score(d, s, n)) + rng.normal(0.0, cfg.sigma_B)
    words = cfg.subset_words if task is TaskKind.CONSTRAINT else cfg.full_set_words
    wall = cfg.time_scale * words / (speed / 60.0)
    objective = None if task is TaskKind.CONSTRAINT else min(max(score, 0.0), 100.0)
    speed_out = None if task is TaskKind.OBJECTIVE else speed
    return EvaluationResult(objective, speed_out, words, wall)


class SimulatedDecoder:
    """Seeded stream of :func:`simulate` calls."""

    def __init__(self, config: SimulatorConfig | None = None, seed=None):
        self.config = config or SimulatorConfig()
        self.rng = np.random.default_rng(seed)

    def __call__(self, x, task=TaskKind.BOTH) -> EvaluationResult:
        return simulate(self.config, x, task, self.rng)


@dataclass
class ExternalCommandSpec:
    """Shell-style command template with ``{d} {s} {n} {sentences}`` fields."""
    command: str
    full_set_path: str
    subset_path: str
    full_set_words: int
    subset_words: int
    timeout_seconds: float = 3600.0

    def __post_init__(self):
        missing = [k for k in ("{d}", "{s}", "{n}") if k not in self.command]
        if missing:
            raise ValueError(f"command template lacks {', '.join(missing)}")


def run_external(spec: ExternalCommandSpec, x, task=TaskKind.BOTH) -> EvaluationResult:
    task = TaskKind(task)
    d, s, n = (int(v) for v in x)
    subset = task is TaskKind.CONSTRAINT
    path = spec.subset_path if subset else spec.full_set_path
    words = spec.subset_words if subset else spec.full_set_words
    argv = shlex.split(spec.command.format(d=d, s=s, n=n,
                                           sentences=shlex.quote(path)))
    start = time.perf_counter()
    try:
        proc = subprocess.run(argv, capture_output=True, text=True,
                              timeout=spec.timeout_seconds)
    except subprocess.TimeoutExpired as exc:
        raise EvaluationError(f"timed out after {spec.timeout_seconds}s",
                              x, exc.stdout or "") from exc
    except OSError as exc:
        raise EvaluationError(f"could not start {argv[0]!r}: {exc}", x) from exc
    wall = time.perf_counter() - start
    output = proc.stdout + proc.stderr
    if proc.returncode != 0:
        raise EvaluationError(f"exit status {proc.returncode}", x, output)
    objective = None
    if task is not TaskKind.CONSTRAINT:
        m = _SCORE_RE.findall(proc.stdout)
        if not m:
            raise EvaluationError("no SCORE line in output", x, output)
        objective = float(m[-1])
    speed = None
    if task is not TaskKind.OBJECTIVE:
        speed = speed_from_timing(words, wall)
    return EvaluationResult(objective, speed, words, wall)


def speed_from_timing(words, wall_seconds):
    if wall_seconds <= 0:
        raise EvaluationError("non-positive wall time")
    return 60.0 * words / wall_seconds


class ExternalDecoder:
    """Runs one external decode at a time."""

    def __init__(self, spec: ExternalCommandSpec):
        self.spec = spec

    def __call__(self, x, task=TaskKind.BOTH) -> EvaluationResult:
        log.info("decoding %s (%s)", tuple(x), TaskKind(task).value)
        return run_external(self.spec, x, task)


def measure_speed_subset(evaluator, x) -> float:
    return evaluator(x, TaskKind.CONSTRAINT).speed_wpm
