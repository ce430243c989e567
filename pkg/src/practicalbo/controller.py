"""The suggest/observe optimization loop and its persistent state.

Strategies:

* ``ei-mcmc``: EI integrated over slice-sampled GP hyperparameters.
* ``ei-opt``: EI under a maximum a posteriori point estimate.
* ``ei-per-second``: ``ei-mcmc`` weighted by the expected inverse duration
  predicted by an independent GP on log durations.

Any strategy runs in parallel by allowing several pending suggestions;
pending outcomes are marginalized with Monte Carlo fantasies.

All GP math happens on unit-cube inputs and standardized targets.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .acquisition import (
    EI,
    AcquisitionKind,
    InverseDuration,
    candidate_points,
    cost_weighted,
    fit_posteriors,
    maximize_acquisition,
)
from .errors import EmptyStateError, ExhaustedGridError, InvalidArgumentError, StateFormatError, UnsupportedVersionError
from .gp import KERNEL_KINDS, MATERN52
from .hypers import HyperPrior, HyperSampleSet, optimize_hypers, sample_hypers
from .pending import pending_score
from .space import Dimension, ParameterSpace

logger = logging.getLogger(__name__)

STATE_VERSION = 1

MCMC = "mcmc"
POINT_ESTIMATE = "point"

STRATEGY_NAMES = ("ei-mcmc", "ei-opt", "ei-per-second")

__all__ = [
    "Dimension",
    "Observation",
    "Optimizer",
    "OptimizerState",
    "ParameterSpace",
    "StrategyConfig",
    "best",
    "load_state",
    "new_state",
    "observe",
    "save_state",
    "suggest",
]


@dataclass(frozen=True)
class StrategyConfig:
    treatment: str = MCMC
    mcmc_samples: int = 10
    burn_in: int = 50
    warm_burn_in: int = 10
    acquisition: AcquisitionKind = AcquisitionKind(EI)
    cost_aware: bool = False
    parallel_degree: int = 1
    fantasy_count: int = 10
    initial_design_count: int = 2
    initial_design: str = "sobol"
    kernel: str = MATERN52
    n_candidates: int = 1000
    pending_cap: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.treatment not in (MCMC, POINT_ESTIMATE):
            raise InvalidArgumentError(f"unknown hyperparameter treatment {self.treatment!r}")
        if self.cost_aware and self.acquisition.name != EI:
            raise InvalidArgumentError("cost-aware optimization requires expected improvement")
        if self.parallel_degree < 1:
            raise InvalidArgumentError("parallel_degree must be at least 1")
        if self.mcmc_samples < 1 or self.fantasy_count < 1:
            raise InvalidArgumentError("mcmc_samples and fantasy_count must be at least 1")
        if self.burn_in < 0 or self.warm_burn_in < 0 or self.initial_design_count < 0:
            raise InvalidArgumentError("burn-in lengths and initial_design_count must be >= 0")
        if self.initial_design not in ("sobol", "random"):
            raise InvalidArgumentError(f"unknown initial design {self.initial_design!r}")
        if self.kernel not in KERNEL_KINDS:
            raise InvalidArgumentError(f"unknown kernel {self.kernel!r}")
        if self.pending_cap is not None and self.pending_cap < 1:
            raise InvalidArgumentError("pending_cap must be at least 1")

    @property
    def cap(self) -> int:
        return self.pending_cap if self.pending_cap is not None else self.parallel_degree

    @classmethod
    def from_name(cls, name: str, **overrides) -> "StrategyConfig":
        """Build a config from a strategy label (``ei-mcmc``, ``ei-opt``, ``ei-per-second``)."""
        if name == "ei-mcmc":
            base = {"treatment": MCMC}
        elif name == "ei-opt":
            base = {"treatment": POINT_ESTIMATE}
        elif name == "ei-per-second":
            base = {"treatment": MCMC, "cost_aware": True}
        else:
            raise InvalidArgumentError(f"unknown strategy {name!r}; expected one of {STRATEGY_NAMES}")
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        doc = {k: getattr(self, k) for k in self.__dataclass_fields__}
        doc["acquisition"] = self.acquisition.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "StrategyConfig":
        doc = dict(doc)
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown strategy fields: {', '.join(sorted(unknown))}")
        if isinstance(doc.get("acquisition"), dict):
            doc["acquisition"] = AcquisitionKind.from_dict(doc["acquisition"])
        elif isinstance(doc.get("acquisition"), str):
            doc["acquisition"] = AcquisitionKind(doc["acquisition"])
        return cls(**doc)


@dataclass
class Observation:
    location: np.ndarray
    value: Optional[float]
    duration: Optional[float] = None
    failed: bool = False

    def to_dict(self) -> dict:
        return {
            "location": [float(v) for v in self.location],
            "value": self.value,
            "duration": self.duration,
            "failed": self.failed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Observation":
        return cls(np.asarray(doc["location"], dtype=float), doc["value"], doc.get("duration"), bool(doc.get("failed", False)))


@dataclass
class OptimizerState:
    space: ParameterSpace
    strategy: StrategyConfig
    rng: np.random.Generator
    design: np.ndarray
    completed: list = field(default_factory=list)
    pending: list = field(default_factory=list)
    hypers: Optional[HyperSampleSet] = None
    duration_hypers: Optional[HyperSampleSet] = None
    design_used: int = 0
    iteration: int = 0

    def completed_unit(self) -> np.ndarray:
        if not self.completed:
            return np.empty((0, self.space.dim))
        return np.array([self.space.to_unit(o.location) for o in self.completed])

    def pending_unit(self) -> np.ndarray:
        if not self.pending:
            return np.empty((0, self.space.dim))
        return np.array([self.space.to_unit(p) for p in self.pending])

    def effective_values(self) -> np.ndarray:
        """Objective values with failures replaced by worst + one standard deviation."""
        valid = np.array([o.value for o in self.completed if not o.failed], dtype=float)
        if valid.size:
            spread = float(np.std(valid)) or 1.0
            fill = float(np.max(valid)) + spread
        else:
            fill = 0.0
        return np.array([fill if o.failed else o.value for o in self.completed], dtype=float)


def new_state(space: ParameterSpace, strategy: StrategyConfig = StrategyConfig()) -> OptimizerState:
    rng = np.random.default_rng(strategy.seed)
    n = strategy.initial_design_count
    if space.is_grid or n == 0:
        design = np.empty((0, space.dim))
    elif strategy.initial_design == "sobol":
        design = candidate_points(space.dim, n, rng)
    else:
        design = rng.random((n, space.dim))
    return OptimizerState(space, strategy, rng, design)


def _standardize(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    center = float(np.mean(values))
    scale = float(np.std(values))
    if not scale > 0:
        scale = 1.0
    return (values - center) / scale, center, scale


def _refresh_hypers(X, y, previous: Optional[HyperSampleSet], strategy: StrategyConfig, rng) -> HyperSampleSet:
    prior = HyperPrior.default(X.shape[1], y)
    if strategy.treatment == MCMC:
        burn = strategy.burn_in if previous is None else strategy.warm_burn_in
        return sample_hypers(
            (X, y), prior, strategy.mcmc_samples, burn, rng, strategy.kernel, start=previous
        )
    extra = () if previous is None else (previous.samples[-1],)
    return HyperSampleSet((optimize_hypers((X, y), prior, rng, strategy.kernel, extra_starts=extra),))


def _taken(state: OptimizerState) -> np.ndarray:
    return np.vstack([state.completed_unit(), state.pending_unit()])


def _free_grid_indices(state: OptimizerState) -> np.ndarray:
    grid = state.space.unit_grid
    taken = _taken(state)
    if taken.size == 0:
        return np.arange(grid.shape[0])
    d2 = np.sum((grid[:, None, :] - taken[None, :, :]) ** 2, axis=-1)
    return np.flatnonzero(~np.any(d2 <= 1e-18, axis=1))


def _design_point(state: OptimizerState) -> np.ndarray:
    """Next initialization point in native units."""
    space = state.space
    if space.is_grid:
        free = _free_grid_indices(state)
        if free.size == 0:
            raise ExhaustedGridError("all grid points are completed or pending")
        return space.grid[int(state.rng.choice(free))].copy()
    if state.design_used < state.design.shape[0]:
        unit = state.design[state.design_used]
    else:
        unit = state.rng.random(space.dim)
    return space.from_unit(unit)


def duration_training_data(state: OptimizerState) -> tuple[np.ndarray, np.ndarray]:
    """Unit-cube inputs and log durations of the successful, timed observations."""
    timed = [o for o in state.completed if o.duration is not None and not o.failed]
    if not timed:
        return np.empty((0, state.space.dim)), np.empty(0)
    X = np.array([state.space.to_unit(o.location) for o in timed])
    return X, np.log([o.duration for o in timed])


def _model_point(state: OptimizerState) -> np.ndarray:
    space, strategy, rng = state.space, state.strategy, state.rng
    X = state.completed_unit()
    y, _, _ = _standardize(state.effective_values())

    state.hypers = _refresh_hypers(X, y, state.hypers, strategy, rng)
    posteriors = fit_posteriors(X, y, state.hypers, strategy.kernel)
    pending = state.pending_unit()
    score = pending_score(
        posteriors, float(np.min(y)), pending, strategy.fantasy_count, strategy.acquisition, rng
    )

    if strategy.cost_aware:
        Xd, log_durations = duration_training_data(state)
        if log_durations.size >= 2:
            logd, offset, scale = _standardize(log_durations)
            state.duration_hypers = _refresh_hypers(Xd, logd, state.duration_hypers, strategy, rng)
            inverse = InverseDuration(
                fit_posteriors(Xd, logd, state.duration_hypers, strategy.kernel), offset, scale
            )
            score = cost_weighted(score, inverse)

    unit = maximize_acquisition(
        score,
        space.dim,
        rng,
        completed=X,
        pending=pending,
        grid=space.unit_grid,
        n_candidates=strategy.n_candidates,
    )
    if space.is_grid:
        i = int(np.argmin(np.sum((space.unit_grid - unit) ** 2, axis=1)))
        return space.grid[i].copy()
    return space.from_unit(unit)


def suggest(state: OptimizerState) -> np.ndarray:
    """Propose the next point (native units) and mark it pending."""
    if len(state.pending) >= state.strategy.cap:
        raise InvalidArgumentError(
            f"{len(state.pending)} evaluations already pending (cap {state.strategy.cap}); "
            "observe a result first"
        )
    if state.design_used < state.strategy.initial_design_count or not state.completed:
        point = _design_point(state)
        if state.design_used < state.strategy.initial_design_count:
            state.design_used += 1
    else:
        point = _model_point(state)
    state.pending.append(np.asarray(point, dtype=float))
    state.iteration += 1
    return point.copy()


def _pending_index(state: OptimizerState, point) -> Optional[int]:
    if not state.pending:
        return None
    unit = state.space.to_unit(point)
    d2 = np.sum((state.pending_unit() - unit) ** 2, axis=1)
    i = int(np.argmin(d2))
    return i if d2[i] <= 1e-18 else None


def observe(
    state: OptimizerState,
    point,
    value: Optional[float] = None,
    duration: Optional[float] = None,
    failed: bool = False,
    force: bool = False,
) -> OptimizerState:
    """Fold a finished evaluation into the state.

    Pass ``failed=True`` (and no value) for an evaluation that crashed; it
    is modeled as slightly worse than the worst observed value and ignored
    by the duration model.
    """
    point = np.asarray(point, dtype=float).reshape(-1)
    state.space.to_unit(point)
    if failed:
        value = None
    elif value is None or not math.isfinite(float(value)):
        raise InvalidArgumentError(f"objective value must be finite, got {value!r}; report failures explicitly")
    if duration is not None and not (math.isfinite(duration) and duration > 0):
        raise InvalidArgumentError(f"duration must be positive, got {duration!r}")
    i = _pending_index(state, point)
    if i is None:
        if not force:
            raise InvalidArgumentError(f"point {point.tolist()} was never suggested (use force to insert)")
    else:
        point = state.pending.pop(i)
    state.completed.append(
        Observation(point.copy(), None if failed else float(value), None if failed else duration, failed)
    )
    return state


def best(state: OptimizerState) -> tuple[np.ndarray, float]:
    """Lowest observed value and its location; the earliest wins ties."""
    valid = [o for o in state.completed if not o.failed]
    if not valid:
        raise EmptyStateError("no completed observations")
    winner = min(valid, key=lambda o: o.value)
    return winner.location.copy(), winner.value


def save_state(state: OptimizerState) -> dict:
    return {
        "version": STATE_VERSION,
        "space": state.space.to_dict(),
        "strategy": state.strategy.to_dict(),
        "completed": [o.to_dict() for o in state.completed],
        "pending": [[float(v) for v in p] for p in state.pending],
        "rng": state.rng.bit_generator.state,
        "iteration": state.iteration,
        "design": state.design.tolist(),
        "design_used": state.design_used,
        "hypers": None if state.hypers is None else state.hypers.to_dict(),
        "duration_hypers": None if state.duration_hypers is None else state.duration_hypers.to_dict(),
    }


_REQUIRED = ("version", "space", "strategy", "completed", "pending", "rng", "iteration")


def load_state(doc: dict) -> OptimizerState:
    if not isinstance(doc, dict):
        raise StateFormatError("state document must be a JSON object")
    if "version" not in doc:
        raise StateFormatError("state document has no version field")
    if doc["version"] != STATE_VERSION:
        raise UnsupportedVersionError(
            f"state version {doc['version']!r} is not supported (expected {STATE_VERSION})"
        )
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise StateFormatError(f"state document is missing fields: {', '.join(missing)}")
    try:
        space = ParameterSpace.from_dict(doc["space"])
        strategy = StrategyConfig.from_dict(doc["strategy"])
        bitgen = np.random.PCG64(0)  # fixed seed sequence; the state below is what matters
        bitgen.state = doc["rng"]
        design = np.asarray(doc.get("design", []), dtype=float).reshape(-1, space.dim)
        state = OptimizerState(
            space,
            strategy,
            np.random.Generator(bitgen),
            design,
            [Observation.from_dict(o) for o in doc["completed"]],
            [np.asarray(p, dtype=float) for p in doc["pending"]],
            None if doc.get("hypers") is None else HyperSampleSet.from_dict(doc["hypers"]),
            None if doc.get("duration_hypers") is None else HyperSampleSet.from_dict(doc["duration_hypers"]),
            int(doc.get("design_used", 0)),
            int(doc["iteration"]),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise StateFormatError(f"malformed state document: {exc}") from exc
    return state


def dumps_state(state: OptimizerState) -> str:
    return json.dumps(save_state(state), indent=1)


def loads_state(text: str) -> OptimizerState:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StateFormatError(f"state file is not valid JSON: {exc}") from exc
    return load_state(doc)


class Optimizer:
    """Object wrapper around :class:`OptimizerState` and the loop functions.

    >>> space = ParameterSpace([Dimension("x", 0.0, 1.0)])
    >>> opt = Optimizer(space, StrategyConfig.from_name("ei-mcmc", seed=3))
    >>> x = opt.suggest()
    >>> _ = opt.observe(x, float((x[0] - 0.3) ** 2))
    """

    def __init__(self, space: ParameterSpace, strategy: StrategyConfig = StrategyConfig(), state=None):
        self.state = state if state is not None else new_state(space, strategy)

    @classmethod
    def from_state(cls, state: OptimizerState) -> "Optimizer":
        return cls(state.space, state.strategy, state)

    @property
    def space(self) -> ParameterSpace:
        return self.state.space

    @property
    def strategy(self) -> StrategyConfig:
        return self.state.strategy

    def suggest(self) -> np.ndarray:
        return suggest(self.state)

    def observe(self, point, value=None, duration=None, failed=False, force=False) -> "Optimizer":
        observe(self.state, point, value, duration, failed, force)
        return self

    def best(self) -> tuple[np.ndarray, float]:
        return best(self.state)

    def save(self) -> dict:
        return save_state(self.state)

    @classmethod
    def load(cls, doc: dict) -> "Optimizer":
        return cls.from_state(load_state(doc))


def with_seed(strategy: StrategyConfig, seed: int) -> StrategyConfig:
    return replace(strategy, seed=seed)
