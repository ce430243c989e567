"""Bounded search spaces and their mapping to the unit hypercube."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError

LINEAR = "linear"
LOG10 = "log10"

_BOUND_TOL = 1e-12


@dataclass(frozen=True)
class Dimension:
    """One named, bounded search dimension.

    ``scale="log10"`` maps the dimension affinely in log10 space.  ``grid``
    optionally restricts it to a finite sorted set of values.
    """

    name: str
    lower: float
    upper: float
    scale: str = LINEAR
    grid: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise InvalidArgumentError(f"{self.name}: bounds must be finite")
        if not self.lower < self.upper:
            raise InvalidArgumentError(f"{self.name}: lower bound must be below upper bound")
        if self.scale not in (LINEAR, LOG10):
            raise InvalidArgumentError(f"{self.name}: unknown scale {self.scale!r}")
        if self.scale == LOG10 and self.lower <= 0:
            raise InvalidArgumentError(f"{self.name}: log10 scale needs a positive lower bound")
        if self.grid is not None:
            grid = tuple(sorted(float(v) for v in self.grid))
            if not grid:
                raise InvalidArgumentError(f"{self.name}: grid must not be empty")
            if grid[0] < self.lower or grid[-1] > self.upper or not all(map(math.isfinite, grid)):
                raise InvalidArgumentError(f"{self.name}: grid values must lie within bounds")
            object.__setattr__(self, "grid", grid)

    def _edges(self) -> tuple[float, float]:
        if self.scale == LOG10:
            return math.log10(self.lower), math.log10(self.upper)
        return self.lower, self.upper

    def to_unit(self, value: float) -> float:
        span = self.upper - self.lower
        if not (self.lower - _BOUND_TOL * span <= value <= self.upper + _BOUND_TOL * span):
            raise InvalidArgumentError(f"{self.name}={value!r} is outside [{self.lower}, {self.upper}]")
        value = min(max(value, self.lower), self.upper)
        lo, hi = self._edges()
        v = math.log10(value) if self.scale == LOG10 else value
        return min(max((v - lo) / (hi - lo), 0.0), 1.0)

    def from_unit(self, u: float) -> float:
        if not (-_BOUND_TOL <= u <= 1.0 + _BOUND_TOL):
            raise InvalidArgumentError(f"{self.name}: unit coordinate {u!r} is outside [0, 1]")
        u = min(max(u, 0.0), 1.0)
        lo, hi = self._edges()
        v = lo + u * (hi - lo)
        if self.scale == LOG10:
            v = 10.0**v
        return min(max(v, self.lower), self.upper)

    def to_dict(self) -> dict:
        doc = {"name": self.name, "lower": self.lower, "upper": self.upper, "scale": self.scale}
        if self.grid is not None:
            doc["grid"] = list(self.grid)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Dimension":
        for key in ("name", "lower", "upper"):
            if key not in doc:
                raise InvalidArgumentError(f"dimension is missing field {key!r}")
        return cls(doc["name"], doc["lower"], doc["upper"], doc.get("scale", LINEAR), doc.get("grid"))


class ParameterSpace:
    """An ordered collection of dimensions, optionally restricted to a grid.

    The grid comes either from per-dimension ``grid`` values (their
    Cartesian product) or from an explicit list of native points.
    """

    def __init__(self, dims: Sequence[Dimension], grid_points=None):
        self.dims = tuple(dims)
        if not self.dims:
            raise InvalidArgumentError("a parameter space needs at least one dimension")
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise InvalidArgumentError("dimension names must be unique")
        gridded = [d.grid is not None for d in self.dims]
        if any(gridded) and not all(gridded):
            raise InvalidArgumentError("either every dimension has a grid or none does")
        if grid_points is not None:
            pts = np.atleast_2d(np.asarray(grid_points, dtype=float))
            if pts.shape[1] != len(self.dims) or pts.shape[0] == 0:
                raise InvalidArgumentError("grid points must be a non-empty list of full points")
            for p in pts:
                self.to_unit(p)
            self._grid = pts
        elif all(gridded):
            self._grid = np.array(list(itertools.product(*(d.grid for d in self.dims))), dtype=float)
        else:
            self._grid = None
        self._unit_grid = None if self._grid is None else np.array([self.to_unit(p) for p in self._grid])
        self._explicit_grid = grid_points is not None

    @property
    def dim(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list:
        return [d.name for d in self.dims]

    @property
    def is_grid(self) -> bool:
        return self._grid is not None

    @property
    def grid(self) -> Optional[np.ndarray]:
        """Native grid points, shape (G, D), or None."""
        return self._grid

    @property
    def unit_grid(self) -> Optional[np.ndarray]:
        return self._unit_grid

    def to_unit(self, native) -> np.ndarray:
        native = np.asarray(native, dtype=float).reshape(-1)
        if native.size != self.dim:
            raise InvalidArgumentError(f"expected {self.dim} coordinates, got {native.size}")
        return np.array([d.to_unit(float(v)) for d, v in zip(self.dims, native)])

    def from_unit(self, unit) -> np.ndarray:
        unit = np.asarray(unit, dtype=float).reshape(-1)
        if unit.size != self.dim:
            raise InvalidArgumentError(f"expected {self.dim} coordinates, got {unit.size}")
        return np.array([d.from_unit(float(u)) for d, u in zip(self.dims, unit)])

    def as_params(self, native) -> dict:
        return {d.name: float(v) for d, v in zip(self.dims, np.asarray(native).reshape(-1))}

    def from_params(self, params: dict) -> np.ndarray:
        missing = [n for n in self.names if n not in params]
        if missing:
            raise InvalidArgumentError(f"missing parameters: {', '.join(missing)}")
        return np.array([float(params[n]) for n in self.names])

    def contains(self, native) -> bool:
        try:
            self.to_unit(native)
        except InvalidArgumentError:
            return False
        return True

    def to_dict(self) -> dict:
        doc = {"dimensions": [d.to_dict() for d in self.dims]}
        if self._explicit_grid:
            doc["grid_points"] = self._grid.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc) -> "ParameterSpace":
        if isinstance(doc, list):
            doc = {"dimensions": doc}
        if not isinstance(doc, dict) or "dimensions" not in doc:
            raise InvalidArgumentError("space must be a list of dimensions or have a 'dimensions' field")
        return cls([Dimension.from_dict(d) for d in doc["dimensions"]], doc.get("grid_points"))

    def __repr__(self) -> str:
        return f"ParameterSpace({list(self.dims)!r})"


def to_unit(space: ParameterSpace, native_point) -> np.ndarray:
    return space.to_unit(native_point)


def from_unit(space: ParameterSpace, unit_point) -> np.ndarray:
    return space.from_unit(unit_point)
