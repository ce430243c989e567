"""Command-line front end.

Subcommands::

    practicalbo bench --function branin --strategy ei-mcmc --evals 40 --repeats 20 --out runs/
    practicalbo run config.json
    practicalbo suggest --state s.json [--init space.json]
    practicalbo observe --state s.json --point '{"x": 0.3}' --value 1.2 [--duration 3.2]
    practicalbo best --state s.json

Exit codes: 0 on success, 1 on runtime or numerical failure, 2 on usage
or configuration errors.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import fcntl
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .controller import (
    STRATEGY_NAMES,
    Optimizer,
    StrategyConfig,
    dumps_state,
    loads_state,
    new_state,
    observe,
    suggest,
    best,
)
from .errors import (
    EmptyStateError,
    ExhaustedGridError,
    InvalidArgumentError,
    NumericalError,
    StateFormatError,
)
from .gp import KERNEL_KINDS
from .harness import BENCHMARKS, TrialRecord, get_benchmark, run_benchmark, run_external
from .space import ParameterSpace

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 2."""


def _fail(message: str, code: int) -> int:
    print(f"practicalbo: error: {message}", file=sys.stderr)
    return code


# ---------------------------------------------------------------- bench


def repeat_seeds(seed: int, repeats: int) -> list:
    """Independent per-repeat seeds derived from one master seed."""
    children = np.random.SeedSequence(seed).spawn(repeats)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def summarize(traces: list) -> list:
    """Per-iteration (iter, mean_best, stderr_best, mean_wall_s) over repeats.

    Repeats that stopped early (time horizon) drop out of later rows.
    """
    rows = []
    longest = max((len(t) for t in traces), default=0)
    for i in range(longest):
        recs = [t[i] for t in traces if len(t) > i and t[i].best_y is not None]
        if not recs:
            continue
        b = np.array([r.best_y for r in recs])
        w = np.array([r.wall_s for r in recs])
        se = float(np.std(b, ddof=1) / math.sqrt(b.size)) if b.size > 1 else 0.0
        rows.append((i + 1, float(np.mean(b)), se, float(np.mean(w))))
    return rows


def write_trace(path: Path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_trace(path) -> list:
    with open(path) as fh:
        return [TrialRecord.from_json(line) for line in fh if line.strip()]


def write_summary(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "mean_best", "stderr_best", "mean_wall_s"])
        for it, mean, se, wall in rows:
            w.writerow([it, repr(mean), repr(se), repr(wall)])


def _load_grid(path: str, space: ParameterSpace) -> ParameterSpace:
    try:
        with open(path) as fh:
            points = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read grid file {path}: {exc}") from exc
    if not isinstance(points, list):
        raise UsageError("grid file must hold a JSON array of native points")
    if points and isinstance(points[0], dict):
        points = [space.from_params(p) for p in points]
    return ParameterSpace(space.dims, grid_points=points)


def cmd_bench(args) -> int:
    if args.function not in BENCHMARKS:
        raise UsageError(f"unknown benchmark {args.function!r}; available: {', '.join(sorted(BENCHMARKS))}")
    if args.evals < 1 or args.repeats < 1:
        raise UsageError("--evals and --repeats must be at least 1")
    bench = get_benchmark(args.function)
    if args.grid:
        bench = get_benchmark(args.function, _load_grid(args.grid, bench.space))
    strategy = StrategyConfig.from_name(args.strategy, kernel=args.kernel)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    traces = []
    for r, seed in enumerate(repeat_seeds(args.seed, args.repeats)):
        records = run_benchmark(
            bench, replace(strategy, seed=seed), args.evals, args.parallel, args.horizon_seconds
        )
        write_trace(out / f"trace_{r:03d}.jsonl", records)
        traces.append(records)
        if not args.quiet:
            print(f"repeat {r + 1}/{args.repeats}: best_y={records[-1].best_y:.6g}", file=sys.stderr)
    write_summary(out / "summary.csv", summarize(traces))
    finals = [t[-1].best_y for t in traces]
    print(json.dumps({"repeats": len(finals), "mean_final_best": float(np.mean(finals)),
                      "median_final_best": float(np.median(finals))}))
    return EXIT_OK


# ---------------------------------------------------------------- run


@dataclass(frozen=True)
class RunConfig:
    """Parsed ``run`` configuration document.

    Schema (JSON object)::

        space        list of dimensions, or {"dimensions": [...], "grid_points": [...]}
        objective    {"command": str | [str], "timeout": seconds?} or {"builtin": name}
        strategy     "ei-mcmc" | "ei-opt" | "ei-per-second", or {"name": ..., <StrategyConfig fields>}
        budget       number of evaluations (>= 1)
        repeats      independent runs (>= 1, default 1)
        seed         integer (default 0)
        parallel     concurrent evaluations (default 1)
        output       trace path (default "trace.jsonl"); a directory when repeats > 1
        max_failures failed evaluations tolerated before giving up (default 5)
    """

    space: ParameterSpace
    strategy: StrategyConfig
    objective: dict
    budget: int
    repeats: int = 1
    seed: int = 0
    parallel: int = 1
    output: str = "trace.jsonl"
    max_failures: int = 5

    @classmethod
    def from_dict(cls, doc) -> "RunConfig":
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        known = {"space", "objective", "strategy", "budget", "repeats", "seed", "parallel", "output", "max_failures"}
        unknown = set(doc) - known
        if unknown:
            raise UsageError(f"config: unknown fields {', '.join(sorted(unknown))}")
        for key in ("space", "objective", "budget"):
            if key not in doc:
                raise UsageError(f"config: missing required field '{key}'")
        try:
            space = ParameterSpace.from_dict(doc["space"])
        except (InvalidArgumentError, TypeError, ValueError) as exc:
            raise UsageError(f"config field 'space': {exc}") from exc

        objective = doc["objective"]
        if not isinstance(objective, dict) or ("command" in objective) == ("builtin" in objective):
            raise UsageError("config field 'objective': give exactly one of 'command' or 'builtin'")
        if "builtin" in objective and objective["builtin"] not in BENCHMARKS:
            raise UsageError(f"config field 'objective.builtin': unknown benchmark {objective['builtin']!r}")

        parallel = _int_field(doc, "parallel", 1)
        seed = _int_field(doc, "seed", 0, minimum=0)
        raw = doc.get("strategy", "ei-mcmc")
        try:
            if isinstance(raw, str):
                strategy = StrategyConfig.from_name(raw)
            elif isinstance(raw, dict):
                fields = dict(raw)
                name = fields.pop("name", "ei-mcmc")
                base = StrategyConfig.from_name(name).to_dict()
                base.update(fields)
                strategy = StrategyConfig.from_dict(base)
            else:
                raise UsageError("config field 'strategy' must be a name or an object")
            strategy = replace(strategy, parallel_degree=parallel, seed=seed)
        except (InvalidArgumentError, TypeError) as exc:
            raise UsageError(f"config field 'strategy': {exc}") from exc
        return cls(
            space,
            strategy,
            objective,
            _int_field(doc, "budget", None),
            _int_field(doc, "repeats", 1),
            seed,
            parallel,
            str(doc.get("output", "trace.jsonl")),
            _int_field(doc, "max_failures", 5, minimum=0),
        )


def _int_field(doc: dict, key: str, default, minimum: int = 1) -> int:
    value = doc.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise UsageError(f"config field '{key}' must be an integer >= {minimum}")
    return value


class _Evaluator:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        obj = cfg.objective
        self.bench = get_benchmark(obj["builtin"]) if "builtin" in obj else None
        self.timeout = obj.get("timeout")

    def __call__(self, point: np.ndarray):
        """(value, duration, failed) for one native point."""
        if self.bench is not None:
            try:
                value, duration = self.bench.evaluate(point)
            except InvalidArgumentError:
                return None, None, True
            return value, duration, False
        res = run_external(self.cfg.objective["command"], self.cfg.space.as_params(point), self.timeout)
        if res.failed:
            print(f"evaluation failed ({res.reason})", file=sys.stderr)
        return res.value, res.duration, res.failed


def tune(cfg: RunConfig, seed: int, sink) -> Optimizer:
    """Run one tuning loop, streaming TrialRecords to ``sink`` as they complete."""
    opt = Optimizer(cfg.space, replace(cfg.strategy, seed=seed))
    evaluate = _Evaluator(cfg)
    start = time.perf_counter()
    best_y: Optional[float] = None
    failures = completed = issued = 0
    with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
        running = {}
        while completed < cfg.budget:
            while issued < cfg.budget and len(running) < cfg.parallel:
                x = opt.suggest()
                running[pool.submit(evaluate, x)] = x
                issued += 1
            finished, _ = wait(running, return_when=FIRST_COMPLETED)
            for fut in sorted(finished, key=lambda f: list(running).index(f)):
                x = running.pop(fut)
                value, duration, failed = fut.result()
                opt.observe(x, value, duration, failed=failed)
                completed += 1
                if failed:
                    failures += 1
                    if failures > cfg.max_failures:
                        raise RuntimeError(f"{failures} evaluations failed (limit {cfg.max_failures})")
                else:
                    best_y = value if best_y is None else min(best_y, value)
                rec = TrialRecord(completed, [float(v) for v in x], value, duration, best_y,
                                  time.perf_counter() - start)
                sink(rec)
    return opt


def cmd_run(args) -> int:
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc
    cfg = RunConfig.from_dict(doc)
    base = Path(args.config).parent
    output = Path(cfg.output) if Path(cfg.output).is_absolute() else base / cfg.output
    seeds = [cfg.seed] if cfg.repeats == 1 else repeat_seeds(cfg.seed, cfg.repeats)
    results = []
    for r, seed in enumerate(seeds):
        path = output if cfg.repeats == 1 else output / f"trace_{r:03d}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:

            def sink(rec, fh=fh):
                fh.write(rec.to_json() + "\n")
                fh.flush()

            try:
                opt = tune(cfg, seed, sink)
            except RuntimeError as exc:
                return _fail(str(exc), EXIT_FAILURE)
        try:
            loc, value = opt.best()
        except EmptyStateError:
            return _fail("no evaluation succeeded", EXIT_FAILURE)
        results.append({"best_params": cfg.space.as_params(loc), "best_value": value})
    print(json.dumps(results[0] if len(results) == 1 else results))
    return EXIT_OK


# ---------------------------------------------------------------- suggest / observe


@contextlib.contextmanager
def locked_state(path: Path):
    """Exclusive advisory lock on ``path`` held for the duration of the block."""
    lock_path = path.with_name(path.name + ".lock")
    with open(lock_path, "a") as lock:
        fcntl.flock(lock, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(lock, fcntl.LOCK_UN)


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _read_state(path: Path):
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise UsageError(f"state file {path} does not exist (use --init to create it)") from None
    return loads_state(text)


def _init_state(init_path: str, args):
    try:
        with open(init_path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read init document {init_path}: {exc}") from exc
    strategy_doc = None
    if isinstance(doc, dict) and "space" in doc:
        strategy_doc = doc.get("strategy")
        doc = doc["space"]
    space = ParameterSpace.from_dict(doc)
    if isinstance(strategy_doc, dict):
        base = StrategyConfig.from_name(strategy_doc.get("name", args.strategy)).to_dict()
        base.update({k: v for k, v in strategy_doc.items() if k != "name"})
        strategy = StrategyConfig.from_dict(base)
    else:
        strategy = StrategyConfig.from_name(strategy_doc or args.strategy)
    return new_state(space, replace(strategy, seed=args.seed, pending_cap=args.max_pending))


def cmd_suggest(args) -> int:
    path = Path(args.state)
    with locked_state(path):
        if path.exists() and path.stat().st_size > 0:
            if args.init:
                raise UsageError(f"state file {path} already exists; drop --init")
            state = _read_state(path)
        elif args.init:
            state = _init_state(args.init, args)
        else:
            raise UsageError(f"state file {path} does not exist (use --init to create it)")
        point = suggest(state)
        _write_atomic(path, dumps_state(state))
    print(json.dumps(state.space.as_params(point)))
    return EXIT_OK


def _parse_point(text: str, space: ParameterSpace) -> np.ndarray:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--point is not valid JSON: {exc}") from exc
    if isinstance(raw, dict):
        return space.from_params(raw)
    if isinstance(raw, (int, float)):
        raw = [raw]
    return np.asarray(raw, dtype=float)


def cmd_observe(args) -> int:
    if args.failed == (args.value is not None):
        raise UsageError("give exactly one of --value or --failed")
    path = Path(args.state)
    with locked_state(path):
        state = _read_state(path)
        point = _parse_point(args.point, state.space)
        observe(state, point, args.value, args.duration, failed=args.failed, force=args.force)
        _write_atomic(path, dumps_state(state))
    return EXIT_OK


def cmd_best(args) -> int:
    path = Path(args.state)
    with locked_state(path):
        state = _read_state(path)
    loc, value = best(state)
    print(json.dumps({"best_params": state.space.as_params(loc), "best_value": value}))
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="practicalbo", description="Bayesian optimization with GP expected improvement.")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run a built-in benchmark repeatedly and write traces")
    b.add_argument("--function", required=True, help=f"one of: {', '.join(sorted(BENCHMARKS))}")
    b.add_argument("--strategy", default="ei-mcmc", choices=STRATEGY_NAMES)
    b.add_argument("--evals", type=int, default=40, help="evaluations per repeat")
    b.add_argument("--repeats", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--parallel", type=int, default=1, help="concurrent evaluations on a simulated clock")
    b.add_argument("--horizon-seconds", type=float, default=None, help="simulated time budget")
    b.add_argument("--kernel", default="matern52", choices=KERNEL_KINDS)
    b.add_argument("--grid", default=None, help="JSON file with an array of native grid points")
    b.add_argument("--quiet", action="store_true")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("run", help="tune an external command described by a JSON config")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("suggest", help="print the next point and mark it pending")
    s.add_argument("--state", required=True)
    s.add_argument("--init", default=None, help="space definition used to create a new state")
    s.add_argument("--strategy", default="ei-mcmc", choices=STRATEGY_NAMES)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-pending", type=int, default=8, help="pending suggestions allowed at once (new states)")
    s.set_defaults(func=cmd_suggest)

    o = sub.add_parser("observe", help="record the result for a suggested point")
    o.add_argument("--state", required=True)
    o.add_argument("--point", required=True, help='JSON object {"name": value} or array')
    o.add_argument("--value", type=float, default=None)
    o.add_argument("--duration", type=float, default=None)
    o.add_argument("--failed", action="store_true")
    o.add_argument("--force", action="store_true", help="accept a point that was never suggested")
    o.set_defaults(func=cmd_observe)

    k = sub.add_parser("best", help="print the best observation so far")
    k.add_argument("--state", required=True)
    k.set_defaults(func=cmd_best)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, InvalidArgumentError, StateFormatError) as exc:
        return _fail(str(exc), EXIT_USAGE)
    except (NumericalError, ExhaustedGridError, EmptyStateError) as exc:
        return _fail(str(exc), EXIT_FAILURE)


if __name__ == "__main__":
    sys.exit(main())
