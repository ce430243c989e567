"""Hyperparameter treatment: priors, slice sampling and point estimation.

Positive hyperparameters (amplitude, length scales, noise) are handled in
log coordinates; the constant mean stays in its natural coordinate.  The
packed "sampling vector" layout is::

    [log amplitude, log length_scale_1 .. log length_scale_D, log noise, mean]
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import InvalidArgumentError, NumericalError
from .gp import MATERN52, GpHyperparams, MarginalLikelihood

logger = logging.getLogger(__name__)

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

MAX_SHRINK_STEPS = 1000
MAX_STEP_OUT = 50


@dataclass(frozen=True)
class LogNormal:
    location: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidArgumentError(f"log-normal scale must be positive, got {self.scale}")

    def logpdf(self, x: float) -> float:
        if not x > 0 or not math.isfinite(x):
            return -math.inf
        z = (math.log(x) - self.location) / self.scale
        return -math.log(x) - math.log(self.scale) - _HALF_LOG_2PI - 0.5 * z * z

    def center(self) -> float:
        return math.exp(self.location)

    def sample(self, rng: np.random.Generator) -> float:
        return math.exp(self.location + self.scale * rng.standard_normal())


@dataclass(frozen=True)
class Gaussian:
    center_value: float
    spread: float

    def __post_init__(self):
        if not self.spread > 0:
            raise InvalidArgumentError(f"Gaussian spread must be positive, got {self.spread}")

    def logpdf(self, x: float) -> float:
        if not math.isfinite(x):
            return -math.inf
        z = (x - self.center_value) / self.spread
        return -math.log(self.spread) - _HALF_LOG_2PI - 0.5 * z * z

    def center(self) -> float:
        return self.center_value

    def sample(self, rng: np.random.Generator) -> float:
        return self.center_value + self.spread * rng.standard_normal()


@dataclass(frozen=True)
class HyperPrior:
    """Independent priors over the D + 3 GP hyperparameters."""

    amplitude: LogNormal
    length_scales: tuple
    noise: LogNormal
    mean: Gaussian

    def __post_init__(self):
        object.__setattr__(self, "length_scales", tuple(self.length_scales))
        if not self.length_scales:
            raise InvalidArgumentError("at least one length-scale prior is required")

    @property
    def dim(self) -> int:
        return len(self.length_scales)

    @classmethod
    def default(cls, dim: int, targets=None) -> "HyperPrior":
        """Weakly informative priors for unit-cube inputs.

        The mean prior is centred on the observed targets with a spread of
        their standard deviation, floored at 1.
        """
        if targets is not None and np.size(targets) > 0:
            y = np.asarray(targets, dtype=float)
            center, spread = float(np.mean(y)), max(float(np.std(y)), 1.0)
        else:
            center, spread = 0.0, 1.0
        return cls(
            amplitude=LogNormal(0.0, 1.0),
            length_scales=tuple(LogNormal(math.log(0.1), 1.0) for _ in range(dim)),
            noise=LogNormal(math.log(1e-3), 1.0),
            mean=Gaussian(center, spread),
        )

    def log_density(self, hyper: GpHyperparams) -> float:
        if hyper.dim != self.dim:
            raise InvalidArgumentError(f"hyper has {hyper.dim} length scales, prior has {self.dim}")
        total = self.amplitude.logpdf(hyper.amplitude)
        for prior, value in zip(self.length_scales, hyper.length_scales):
            total += prior.logpdf(float(value))
        total += self.noise.logpdf(hyper.noise_variance)
        total += self.mean.logpdf(hyper.mean)
        return total

    def center(self) -> GpHyperparams:
        """The mode in sampling coordinates (the median for log-normal terms)."""
        return GpHyperparams(
            self.amplitude.center(),
            [p.center() for p in self.length_scales],
            self.noise.center(),
            self.mean.center(),
        )

    def sample(self, rng: np.random.Generator) -> GpHyperparams:
        return GpHyperparams(
            self.amplitude.sample(rng),
            [p.sample(rng) for p in self.length_scales],
            self.noise.sample(rng),
            self.mean.sample(rng),
        )

    def sampling_widths(self) -> np.ndarray:
        """Initial slice widths per packed coordinate."""
        return np.concatenate([np.ones(self.dim + 2), [self.mean.spread]])


@dataclass(frozen=True)
class HyperSampleSet:
    samples: tuple
    burn_in: int = 0
    thin: int = 1
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.samples:
            raise InvalidArgumentError("a hyperparameter sample set cannot be empty")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def to_dict(self) -> dict:
        return {
            "samples": [s.to_dict() for s in self.samples],
            "burn_in": self.burn_in,
            "thin": self.thin,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HyperSampleSet":
        return cls(
            tuple(GpHyperparams.from_dict(s) for s in doc["samples"]),
            doc.get("burn_in", 0),
            doc.get("thin", 1),
            doc.get("seed"),
        )


def pack(hyper: GpHyperparams) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.concatenate(
            [
                [math.log(hyper.amplitude)],
                np.log(hyper.length_scales),
                [math.log(hyper.noise_variance) if hyper.noise_variance > 0 else -math.inf],
                [hyper.mean],
            ]
        )


def unpack(vec) -> GpHyperparams:
    vec = np.asarray(vec, dtype=float)
    with np.errstate(over="ignore"):
        return GpHyperparams(
            math.exp(min(vec[0], 700.0)),
            np.exp(np.minimum(vec[1:-2], 700.0)),
            math.exp(min(vec[-2], 700.0)),
            vec[-1],
        )


def _as_data(data):
    X, y = data
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size == 0:
        raise InvalidArgumentError("at least one observation is required")
    return X, y


class _PosteriorDensity:
    """Log posterior density for fixed data; reuses cached input differences."""

    def __init__(self, data, prior: HyperPrior, kernel: str):
        X, y = _as_data(data)
        self.prior = prior
        self.likelihood = MarginalLikelihood(X, y, kernel)
        logs = [prior.amplitude, *prior.length_scales, prior.noise]
        self._loc = np.array([p.location for p in logs])
        self._scale = np.array([p.scale for p in logs])
        self._norm = float(np.sum(np.log(self._scale))) + len(logs) * _HALF_LOG_2PI

    def __call__(self, hyper: GpHyperparams) -> float:
        if not hyper.is_valid() or hyper.noise_variance <= 0:
            return -math.inf
        log_prior = self.prior.log_density(hyper)
        if not math.isfinite(log_prior):
            return -math.inf
        return self.likelihood(hyper) + log_prior

    def packed(self, vec: np.ndarray) -> float:
        """Log posterior at a finite packed vector, without the Jacobian.

        Works on the log coordinates directly; the hot path of sampling
        and optimization.
        """
        logs = vec[:-1]
        if np.any(logs > 700.0):
            return -math.inf
        z = (logs - self._loc) / self._scale
        log_prior = -float(np.sum(logs) + 0.5 * (z @ z)) - self._norm + self.prior.mean.logpdf(vec[-1])
        vals = np.exp(logs)
        if vals[-1] <= 0 or not np.all(vals[:-1] > 0):
            return -math.inf
        return self.likelihood.evaluate(vals[0], vals[1:-1], vals[-1], float(vec[-1])) + log_prior


def log_posterior_density(hyper: GpHyperparams, data, prior: HyperPrior, kernel: str = MATERN52) -> float:
    """Unnormalized log posterior of the hyperparameters given (X, y).

    Returns ``-inf`` when ``hyper`` lies outside the support.
    """
    return _PosteriorDensity(data, prior, kernel)(hyper)


def _sampling_target(data, prior: HyperPrior, kernel: str) -> Callable[[np.ndarray], float]:
    """Log density in packed coordinates, including the log-transform Jacobian."""
    dim = prior.dim
    density = _PosteriorDensity(data, prior, kernel)

    def target(vec: np.ndarray) -> float:
        if not np.all(np.isfinite(vec)):
            return -math.inf
        try:
            lp = density.packed(vec)
        except NumericalError:
            return -math.inf
        if not math.isfinite(lp):
            return -math.inf
        return lp + float(np.sum(vec[: dim + 2]))

    return target


def slice_sweep(
    x,
    log_density: Callable[[np.ndarray], float],
    rng: np.random.Generator,
    widths=1.0,
    log_px: Optional[float] = None,
    active: Optional[Sequence[int]] = None,
) -> tuple[np.ndarray, float]:
    """One random-scan sweep of univariate step-out/shrink slice sampling.

    Parameters
    ----------
    x : array_like
        Current state; ``log_density(x)`` must be finite.
    log_density : callable
        Unnormalized log density of a state vector.
    rng : numpy Generator
    widths : float or array_like
        Initial bracket width per coordinate.
    log_px : float, optional
        Cached ``log_density(x)``.
    active : sequence of int, optional
        Coordinates to update; the rest stay fixed.

    Returns
    -------
    x_new, log_density(x_new)
    """
    x = np.array(x, dtype=float).reshape(-1)
    widths = np.broadcast_to(np.asarray(widths, dtype=float), x.shape)
    if log_px is None:
        log_px = log_density(x)
    if not math.isfinite(log_px):
        raise InvalidArgumentError("slice sampling must start where the density is positive")
    coords = np.arange(x.size) if active is None else np.asarray(active, dtype=int)

    for d in rng.permutation(coords):
        log_u = log_px + math.log(rng.random())
        w = widths[d]
        x0 = x[d]
        lo = x0 - rng.random() * w
        hi = lo + w
        probe = x.copy()

        def at(value):
            probe[d] = value
            return log_density(probe)

        for _ in range(MAX_STEP_OUT):
            if at(lo) <= log_u:
                break
            lo -= w
        for _ in range(MAX_STEP_OUT):
            if at(hi) <= log_u:
                break
            hi += w

        for _ in range(MAX_SHRINK_STEPS):
            proposal = lo + rng.random() * (hi - lo)
            lp = at(proposal)
            if lp > log_u:
                x[d] = proposal
                log_px = lp
                break
            if proposal > x0:
                hi = proposal
            else:
                lo = proposal
        else:
            raise NumericalError(
                f"slice sampler failed to find an acceptable point after {MAX_SHRINK_STEPS} shrinks"
            )
    return x, log_px


def slice_sample_step(
    current: GpHyperparams,
    data,
    prior: HyperPrior,
    rng: np.random.Generator,
    kernel: str = MATERN52,
    frozen: Sequence[int] = (),
) -> GpHyperparams:
    """One slice-sampling sweep over the hyperparameters.

    ``frozen`` lists packed coordinates (see module docstring) to hold fixed.
    """
    data = _as_data(data)
    target = _sampling_target(data, prior, kernel)
    vec = pack(current)
    active = [i for i in range(vec.size) if i not in set(frozen)]
    vec, _ = slice_sweep(vec, target, rng, prior.sampling_widths(), active=active)
    return unpack(vec)


def _generator(rng) -> tuple[np.random.Generator, Optional[int]]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), rng


def sample_hypers(
    data,
    prior: HyperPrior,
    count: int = 10,
    burn_in: int = 50,
    rng=None,
    kernel: str = MATERN52,
    start=None,
    thin: int = 1,
    frozen: Sequence[int] = (),
) -> HyperSampleSet:
    """Draw posterior hyperparameter samples with slice sampling.

    ``start`` may be a previous :class:`HyperSampleSet` (its last sample is
    used as a warm start), a single :class:`GpHyperparams`, or None for the
    prior centre.
    """
    if count < 1:
        raise InvalidArgumentError("count must be at least 1")
    if thin < 1 or burn_in < 0:
        raise InvalidArgumentError("thin must be >= 1 and burn_in >= 0")
    rng, seed = _generator(rng)
    data = _as_data(data)
    target = _sampling_target(data, prior, kernel)
    widths = prior.sampling_widths()

    if isinstance(start, HyperSampleSet):
        start = start.samples[-1]
    if start is None or start.dim != prior.dim:
        start = prior.center()
    vec = pack(start)
    log_px = target(vec)
    if not math.isfinite(log_px):
        vec = pack(prior.center())
        log_px = target(vec)
        if not math.isfinite(log_px):
            raise NumericalError("log posterior is not finite at the prior centre")

    active = [i for i in range(vec.size) if i not in set(frozen)]
    for _ in range(burn_in):
        vec, log_px = slice_sweep(vec, target, rng, widths, log_px, active)
    samples = []
    for _ in range(count):
        for _ in range(thin):
            vec, log_px = slice_sweep(vec, target, rng, widths, log_px, active)
        samples.append(unpack(vec))
    return HyperSampleSet(tuple(samples), burn_in, thin, seed)


def optimize_hypers(
    data,
    prior: HyperPrior,
    rng=None,
    kernel: str = MATERN52,
    n_starts: int = 10,
    extra_starts: Sequence[GpHyperparams] = (),
    max_evals: int = 300,
) -> GpHyperparams:
    """Maximum a posteriori hyperparameters by multi-start Nelder-Mead.

    Starts are ``n_starts`` prior draws plus any ``extra_starts``.  The
    search runs in packed coordinates but maximizes the log posterior
    density itself (no Jacobian term).
    """
    rng, _ = _generator(rng)
    density = _PosteriorDensity(data, prior, kernel)
    dim = prior.dim

    def objective(vec):
        if not np.all(np.isfinite(vec)):
            return math.inf
        try:
            lp = density.packed(vec)
        except NumericalError:
            return math.inf
        return -lp if math.isfinite(lp) else math.inf

    starts = [prior.sample(rng) for _ in range(n_starts)]
    starts.extend(s for s in extra_starts if s.dim == dim)
    best_vec, best_val = None, math.inf
    for hyper in starts:
        vec0 = pack(hyper)
        f0 = objective(vec0)
        if not math.isfinite(f0):
            continue
        if f0 < best_val:
            best_vec, best_val = vec0, f0
        res = minimize(
            objective,
            vec0,
            method="Nelder-Mead",
            options={"maxfev": max_evals, "xatol": 1e-4, "fatol": 1e-7},
        )
        if math.isfinite(res.fun) and res.fun < best_val:
            best_vec, best_val = np.asarray(res.x, dtype=float), float(res.fun)
    if best_vec is None:
        raise NumericalError("every optimization start had a non-finite log posterior")
    logger.debug("point estimate log posterior %.6g", -best_val)
    return unpack(best_vec)
