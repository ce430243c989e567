"""Benchmark objectives, external objective execution and run loops.

Built-in benchmarks
-------------------
``branin``
    The Branin-Hoo function on 0 <= x1 <= 15, -5 <= x2 <= 15.  Two of its
    three global minimizers, (pi, 2.275) and (3*pi, 2.475), lie inside
    this box; the minimum value is 5 / (4*pi) = 0.397887...
``two-basin``
    ``16 * |x - a|^2 * |x - b|^2`` on the unit square with a = (0.25, 0.5)
    and b = (0.75, 0.5).  Both minimizers have value exactly 0.  The
    synthetic duration is ``10 ** (2*x1 - 0.5)`` seconds: 1 s at ``a``,
    10 s at ``b``.
``kinked-1d``
    ``|x - 1/3| + 0.5 * |sin(12 * pi * x)|`` on [0, 1]: continuous but
    non-differentiable at every multiple of 1/12.  Both terms vanish only
    at x = 1/3, so the global minimum is exactly 0 there.

External objectives speak line-delimited JSON: the harness writes
``{"params": {...}}`` to the child's stdin and reads
``{"value": v, "duration_seconds": d}`` (duration optional) from its
stdout.
"""

from __future__ import annotations

import heapq
import json
import math
import shlex
import subprocess
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .controller import Optimizer, StrategyConfig
from .errors import InvalidArgumentError
from .space import Dimension, ParameterSpace

BRANIN_MINIMUM = 5.0 / (4.0 * math.pi)
BRANIN_BOX = ((0.0, 15.0), (-5.0, 15.0))

TWO_BASIN_CHEAP = np.array([0.25, 0.5])
TWO_BASIN_EXPENSIVE = np.array([0.75, 0.5])


def branin(x1: float, x2: float) -> float:
    """Branin-Hoo function, restricted to 0 <= x1 <= 15, -5 <= x2 <= 15."""
    (lo1, hi1), (lo2, hi2) = BRANIN_BOX
    if not (lo1 <= x1 <= hi1 and lo2 <= x2 <= hi2):
        raise InvalidArgumentError(f"({x1}, {x2}) is outside the Branin box")
    b = 5.1 / (4.0 * math.pi**2)
    c = 5.0 / math.pi
    t = 1.0 / (8.0 * math.pi)
    return (x2 - b * x1**2 + c * x1 - 6.0) ** 2 + 10.0 * (1.0 - t) * math.cos(x1) + 10.0


def synthetic_cost_objective(x) -> tuple[float, float]:
    """Two equal-depth basins whose evaluation costs differ tenfold.

    Returns ``(value, duration_seconds)``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != 2 or np.any(x < 0) or np.any(x > 1):
        raise InvalidArgumentError("two-basin objective is defined on [0, 1]^2")
    da = float(np.sum((x - TWO_BASIN_CHEAP) ** 2))
    db = float(np.sum((x - TWO_BASIN_EXPENSIVE) ** 2))
    return 16.0 * da * db, float(10.0 ** (2.0 * x[0] - 0.5))


def kinked_1d(x: float) -> float:
    return abs(x - 1.0 / 3.0) + 0.5 * abs(math.sin(12.0 * math.pi * x))


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    space: ParameterSpace
    objective: Callable[[np.ndarray], float]
    true_minimum: Optional[float] = None
    duration: Optional[Callable[[np.ndarray], float]] = None

    def evaluate(self, x) -> tuple[float, float]:
        """Value and (synthetic) duration; 1 s when the benchmark has no cost model."""
        x = np.asarray(x, dtype=float)
        value = float(self.objective(x))
        return value, float(self.duration(x)) if self.duration is not None else 1.0


def _two_basin_duration(x) -> float:
    return synthetic_cost_objective(x)[1]


BENCHMARKS = {
    "branin": BenchmarkSpec(
        "branin",
        ParameterSpace([Dimension("x1", *BRANIN_BOX[0]), Dimension("x2", *BRANIN_BOX[1])]),
        lambda x: branin(float(x[0]), float(x[1])),
        BRANIN_MINIMUM,
    ),
    "two-basin": BenchmarkSpec(
        "two-basin",
        ParameterSpace([Dimension("x1", 0.0, 1.0), Dimension("x2", 0.0, 1.0)]),
        lambda x: synthetic_cost_objective(x)[0],
        0.0,
        _two_basin_duration,
    ),
    "kinked-1d": BenchmarkSpec(
        "kinked-1d",
        ParameterSpace([Dimension("x", 0.0, 1.0)]),
        lambda x: kinked_1d(float(x[0])),
        0.0,
    ),
}


def get_benchmark(name: str, space: Optional[ParameterSpace] = None) -> BenchmarkSpec:
    try:
        bench = BENCHMARKS[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown benchmark {name!r}; available: {', '.join(sorted(BENCHMARKS))}"
        ) from None
    return bench if space is None else replace(bench, space=space)


@dataclass(frozen=True)
class TrialRecord:
    iter: int
    x: list
    y: Optional[float]
    duration_s: Optional[float]
    best_y: Optional[float]
    wall_s: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "iter": self.iter,
                "x": self.x,
                "y": self.y,
                "duration_s": self.duration_s,
                "best_y": self.best_y,
                "wall_s": self.wall_s,
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        doc = json.loads(line)
        return cls(doc["iter"], doc["x"], doc["y"], doc["duration_s"], doc["best_y"], doc["wall_s"])


@dataclass(frozen=True)
class ExternalResult:
    """Outcome of one external evaluation; ``failed`` marks the failure path."""

    value: Optional[float]
    duration: Optional[float]
    raw_log: str
    failed: bool = False
    reason: str = ""


def run_external(command, params: dict, timeout: Optional[float] = None) -> ExternalResult:
    """Evaluate ``params`` by running ``command`` under the JSON-lines protocol.

    Nonzero exit, timeout, or malformed output yields a failed result
    rather than an exception.  The child is killed and reaped on timeout.
    """
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    payload = json.dumps({"params": {k: float(v) for k, v in params.items()}}) + "\n"
    start = time.perf_counter()
    try:
        proc = subprocess.run(
            argv, input=payload, capture_output=True, text=True, timeout=timeout, check=False
        )
    except subprocess.TimeoutExpired as exc:
        out = (exc.stdout or b"") if isinstance(exc.stdout, bytes) else (exc.stdout or "")
        log = out.decode(errors="replace") if isinstance(out, bytes) else out
        return ExternalResult(None, None, log, True, f"timed out after {timeout} s")
    except OSError as exc:
        return ExternalResult(None, None, "", True, f"could not start command: {exc}")
    elapsed = time.perf_counter() - start
    log = proc.stdout + (("\n[stderr]\n" + proc.stderr) if proc.stderr else "")
    if proc.returncode != 0:
        return ExternalResult(None, None, log, True, f"exit code {proc.returncode}")
    lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
    try:
        doc = json.loads(lines[-1])
        value = float(doc["value"])
        duration = doc.get("duration_seconds")
        duration = elapsed if duration is None else float(duration)
    except (IndexError, ValueError, KeyError, TypeError, AttributeError) as exc:
        return ExternalResult(None, None, log, True, f"malformed output: {exc!r}")
    if not math.isfinite(value) or not (math.isfinite(duration) and duration > 0):
        return ExternalResult(None, None, log, True, "non-finite value or non-positive duration")
    return ExternalResult(value, duration, log)


def _records_from(opt: Optimizer, completions) -> list:
    records, best = [], None
    for i, (x, y, d, wall) in enumerate(completions, start=1):
        if y is not None:
            best = y if best is None else min(best, y)
        records.append(TrialRecord(i, [float(v) for v in x], y, d, best, wall))
    return records


def run_sequential(benchmark: BenchmarkSpec, strategy: StrategyConfig, evals: int) -> list:
    """Plain suggest/evaluate/observe loop; wallclock is the running sum of durations."""
    opt = Optimizer(benchmark.space, replace(strategy, parallel_degree=1))
    wall, done = 0.0, []
    for _ in range(evals):
        x = opt.suggest()
        y, d = benchmark.evaluate(x)
        opt.observe(x, y, d)
        wall += d
        done.append((x, y, d, wall))
    return _records_from(opt, done)


def run_parallel_simulation(
    benchmark: BenchmarkSpec,
    strategy: StrategyConfig,
    parallel_degree: int,
    max_evals: Optional[int] = None,
    horizon_seconds: Optional[float] = None,
) -> list:
    """Event-driven simulation of asynchronous parallel evaluation.

    Up to ``parallel_degree`` evaluations run at once on a simulated clock.
    Whenever one finishes it is observed and a replacement is suggested
    with the others still pending.  Stops after ``max_evals`` completions
    or once the clock passes ``horizon_seconds``.
    """
    if max_evals is None and horizon_seconds is None:
        raise InvalidArgumentError("give max_evals, horizon_seconds, or both")
    if parallel_degree < 1:
        raise InvalidArgumentError("parallel_degree must be at least 1")
    opt = Optimizer(benchmark.space, replace(strategy, parallel_degree=parallel_degree))
    queue: list = []
    issued = 0
    seq = 0

    def launch(now: float) -> None:
        nonlocal issued, seq
        x = opt.suggest()
        y, d = benchmark.evaluate(x)
        heapq.heappush(queue, (now + d, seq, x, y, d))
        issued += 1
        seq += 1

    def may_launch(now: float) -> bool:
        if max_evals is not None and issued >= max_evals:
            return False
        return horizon_seconds is None or now < horizon_seconds

    while len(queue) < parallel_degree and may_launch(0.0):
        launch(0.0)
    done = []
    while queue:
        t, _, x, y, d = heapq.heappop(queue)
        if horizon_seconds is not None and t > horizon_seconds:
            break
        opt.observe(x, y, d)
        done.append((x, y, d, t))
        if may_launch(t):
            launch(t)
    return _records_from(opt, done)


def run_benchmark(
    benchmark: BenchmarkSpec,
    strategy: StrategyConfig,
    evals: int,
    parallel_degree: int = 1,
    horizon_seconds: Optional[float] = None,
) -> list:
    if parallel_degree == 1 and horizon_seconds is None:
        return run_sequential(benchmark, strategy, evals)
    return run_parallel_simulation(benchmark, strategy, parallel_degree, evals, horizon_seconds)


def time_to_target(records: Sequence[TrialRecord], target: float) -> float:
    """Wallclock at which best_y first reaches ``target`` (inf if never)."""
    for r in records:
        if r.best_y is not None and r.best_y <= target:
            return r.wall_s
    return math.inf
