"""Box-bounded integer parameter spaces with linear or logarithmic warping.

Every model and acquisition works in the unit cube; raw integer vectors only
appear at evaluation boundaries.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

LINEAR = "linear"
LOG = "log"


class BoundsError(ValueError):
    """A raw value fell outside its parameter's bounds."""


@dataclass(frozen=True)
class ParamSpec:
    name: str
    lower: int
    upper: int
    scale: str = LINEAR
    integer: bool = True

    def __post_init__(self):
        if self.scale not in (LINEAR, LOG):
            raise ValueError(f"{self.name}: unknown scale {self.scale!r}")
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be < upper")
        if self.scale == LOG and self.lower < 1:
            raise ValueError(f"{self.name}: log scale requires lower >= 1")

    def _warp(self, v):
        if self.scale == LOG:
            return math.log(v)
        return float(v)

    def to_unit(self, v: float) -> float:
        if not self.lower <= v <= self.upper:
            raise BoundsError(
                f"{self.name}={v} outside [{self.lower}, {self.upper}]")
        lo, hi = self._warp(self.lower), self._warp(self.upper)
        return (self._warp(v) - lo) / (hi - lo)

    def from_unit(self, u: float) -> int:
        lo, hi = self._warp(self.lower), self._warp(self.upper)
        w = lo + float(u) * (hi - lo)
        v = math.exp(w) if self.scale == LOG else w
        # exp/log round trips can land a hair below an exact integer
        v = math.floor(v + 1e-9)
        return int(min(max(v, self.lower), self.upper))


class SearchSpace:
    """Ordered collection of :class:`ParamSpec`."""

    def __init__(self, params: Sequence[ParamSpec]):
        params = list(params)
        if not params:
            raise ValueError("search space needs at least one parameter")
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names: {names}")
        self.params = params

    @property
    def dim(self) -> int:
        return len(self.params)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def __repr__(self):
        return f"SearchSpace({self.params!r})"

    def to_unit(self, raw: Sequence[float]) -> np.ndarray:
        if len(raw) != self.dim:
            raise ValueError(f"expected {self.dim} values, got {len(raw)}")
        return np.array([p.to_unit(v) for p, v in zip(self.params, raw)])

    def from_unit(self, unit: Sequence[float]) -> tuple[int, ...]:
        if len(unit) != self.dim:
            raise ValueError(f"expected {self.dim} values, got {len(unit)}")
        return tuple(p.from_unit(u) for p, u in zip(self.params, unit))

    def grid_values(self, values_per_dim: int) -> list[tuple[int, ...]]:
        """All ``m**D`` grid points, row-major, duplicates kept."""
        m = int(values_per_dim)
        if m < 2:
            raise ValueError("values_per_dim must be >= 2")
        axes = [[p.from_unit(k / (m - 1)) for k in range(m)]
                for p in self.params]
        return list(itertools.product(*axes))

    def sample_uniform(self, rng) -> tuple[int, ...]:
        """Uniform draw in unit space mapped to raw integers.

        ``rng`` may be a seed or a ``numpy.random.Generator``.
        """
        rng = np.random.default_rng(rng)
        return self.from_unit(rng.uniform(size=self.dim))

    def to_dict(self) -> list[dict]:
        return [dict(name=p.name, lower=p.lower, upper=p.upper, scale=p.scale)
                for p in self.params]

    @classmethod
    def from_dict(cls, items: Iterable[dict]) -> "SearchSpace":
        return cls([ParamSpec(name=it["name"], lower=int(it["lower"]),
                              upper=int(it["upper"]),
                              scale=it.get("scale", LINEAR))
                    for it in items])


def decoder_space() -> SearchSpace:
    """Distortion limit, stack size and number of translations."""
    return SearchSpace([
        ParamSpec("d", 0, 10, LINEAR),
        ParamSpec("s", 1, 500, LOG),
        ParamSpec("n", 1, 100, LOG),
    ])
