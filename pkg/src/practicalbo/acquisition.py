"""Acquisition functions and their maximization.

All scores are oriented so that larger is better.  Score callables take a
batch of unit-cube points with shape (M, D) and return an array of M
scores.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import ExhaustedGridError, InvalidArgumentError
from .gp import MATERN52, GpPosterior, PosteriorStack, PredictiveMoments, gp_fit, norm_cdf, norm_pdf

PI = "pi"
EI = "ei"
LCB = "lcb"

ScoreFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class AcquisitionKind:
    """Which closed-form acquisition to use; ``kappa`` only matters for LCB."""

    name: str = EI
    kappa: float = 2.0

    def __post_init__(self):
        if self.name not in (PI, EI, LCB):
            raise InvalidArgumentError(f"unknown acquisition {self.name!r}")
        if self.name == LCB and not self.kappa > 0:
            raise InvalidArgumentError("LCB requires kappa > 0")

    def to_dict(self) -> dict:
        return {"name": self.name, "kappa": self.kappa}

    @classmethod
    def from_dict(cls, doc: dict) -> "AcquisitionKind":
        return cls(doc["name"], doc.get("kappa", 2.0))


@dataclass(frozen=True)
class Incumbent:
    best_value: float
    best_location: Optional[np.ndarray] = None

    @classmethod
    def from_data(cls, inputs, targets) -> "Incumbent":
        y = np.asarray(targets, dtype=float).reshape(-1)
        i = int(np.argmin(y))
        return cls(float(y[i]), np.atleast_2d(np.asarray(inputs, dtype=float))[i].copy())


def _best(incumbent):
    if isinstance(incumbent, Incumbent):
        return incumbent.best_value
    return np.asarray(incumbent, dtype=float) if np.ndim(incumbent) else float(incumbent)


def gamma(mu, sigma, best_value):
    """Standardized improvement (best_value - mu) / sigma; sigma must be > 0."""
    return (best_value - mu) / sigma


def _moments(moments):
    mu = np.asarray(moments.mean, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(moments.variance, dtype=float), 0.0))
    return mu, sigma


def _scalarize(out, like):
    return float(out) if np.ndim(like) == 0 else out


def probability_of_improvement(moments: PredictiveMoments, incumbent):
    best = _best(incumbent)
    mu, sigma = _moments(moments)
    positive = sigma > 0
    g = np.where(positive, (best - mu) / np.where(positive, sigma, 1.0), 0.0)
    out = np.where(positive, norm_cdf(g), (mu < best).astype(float))
    return _scalarize(out, moments.mean)


def expected_improvement(moments: PredictiveMoments, incumbent):
    best = _best(incumbent)
    mu, sigma = _moments(moments)
    positive = sigma > 0
    safe = np.where(positive, sigma, 1.0)
    g = (best - mu) / safe
    ei = safe * (g * norm_cdf(g) + norm_pdf(g))
    out = np.where(positive, np.maximum(ei, 0.0), np.maximum(best - mu, 0.0))
    return _scalarize(out, moments.mean)


def lower_confidence_bound(moments: PredictiveMoments, kappa: float):
    """mu - kappa * sigma; lower is better."""
    if not kappa > 0:
        raise InvalidArgumentError("kappa must be positive")
    mu, sigma = _moments(moments)
    return _scalarize(mu - kappa * sigma, moments.mean)


def acquisition_utility(moments: PredictiveMoments, best_value, kind: AcquisitionKind):
    """Larger-is-better utility for any acquisition kind."""
    if kind.name == EI:
        return expected_improvement(moments, best_value)
    if kind.name == PI:
        return probability_of_improvement(moments, best_value)
    return -lower_confidence_bound(moments, kind.kappa)


class IntegratedAcquisition:
    """Acquisition averaged over a set of fitted posteriors.

    This is the Monte Carlo estimate of the acquisition integrated against
    the hyperparameter posterior, when ``posteriors`` were fitted under
    posterior samples.
    """

    def __init__(self, posteriors: Sequence[GpPosterior], best_value: float, kind: AcquisitionKind):
        if not posteriors:
            raise InvalidArgumentError("at least one posterior is required")
        self.posteriors = list(posteriors)
        self.stack = PosteriorStack(self.posteriors)
        self.best_value = float(best_value)
        self.kind = kind

    def per_sample(self, X) -> np.ndarray:
        """Acquisition under each posterior, shape (S, M)."""
        return acquisition_utility(self.stack.predict(X), self.best_value, self.kind)

    def __call__(self, X) -> np.ndarray:
        return np.mean(self.per_sample(X), axis=0)


def fit_posteriors(inputs, targets, hyper_samples, kernel: str = MATERN52) -> list:
    return [gp_fit(inputs, targets, h, kernel) for h in hyper_samples]


def integrated_acquisition(
    x, data, hyper_samples, kind: AcquisitionKind = AcquisitionKind(), kernel: str = MATERN52
):
    """Mean of the per-sample acquisition at x over hyperparameter samples."""
    X, y = data
    score = IntegratedAcquisition(fit_posteriors(X, y, hyper_samples, kernel), np.min(y), kind)
    x = np.asarray(x, dtype=float)
    out = score(np.atleast_2d(x))
    return float(out[0]) if x.ndim == 1 else out


def expected_inverse_duration(duration_moments: PredictiveMoments):
    """E[1/c] when ln c ~ N(mu_c, sigma_c^2)."""
    mu = np.asarray(duration_moments.mean, dtype=float)
    var = np.maximum(np.asarray(duration_moments.variance, dtype=float), 0.0)
    return _scalarize(np.exp(-mu + 0.5 * var), duration_moments.mean)


class InverseDuration:
    """Expected inverse duration averaged over duration-model posteriors.

    The posteriors model a standardized log duration ``z``; the log
    duration is ``offset + scale * z``.
    """

    def __init__(self, posteriors: Sequence[GpPosterior], offset: float = 0.0, scale: float = 1.0):
        self.stack = PosteriorStack(posteriors)
        self.offset = float(offset)
        self.scale = float(scale)

    def __call__(self, X) -> np.ndarray:
        m = self.stack.predict(X)
        log_moments = PredictiveMoments(self.offset + self.scale * m.mean, self.scale**2 * m.variance)
        return np.mean(expected_inverse_duration(log_moments), axis=0)


def expected_improvement_per_second(x, objective_model, duration_model, incumbent):
    """EI at x times the expected inverse duration at x.

    ``objective_model`` and ``duration_model`` are fitted posteriors (or
    sequences of them, which are averaged); the duration model is trained
    on log durations.
    """
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    objs = objective_model if isinstance(objective_model, (list, tuple)) else [objective_model]
    durs = duration_model if isinstance(duration_model, (list, tuple)) else [duration_model]
    ei = IntegratedAcquisition(objs, _best(incumbent), AcquisitionKind(EI))(X)
    out = ei * InverseDuration(durs)(X)
    return float(out[0]) if x.ndim == 1 else out


def cost_weighted(score: ScoreFn, inverse_duration: ScoreFn) -> ScoreFn:
    def weighted(X):
        return score(X) * inverse_duration(X)

    return weighted


def _too_close(points: np.ndarray, taken: np.ndarray, tol: float) -> np.ndarray:
    if taken.size == 0:
        return np.zeros(points.shape[0], dtype=bool)
    d2 = np.sum((points[:, None, :] - taken[None, :, :]) ** 2, axis=-1)
    return np.any(d2 <= tol * tol, axis=1)


def candidate_points(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Scrambled Sobol points in the unit cube (first ``count`` of a base-2 run)."""
    # an integer seed keeps the scramble a function of the generator state
    # alone (a Generator would be consumed through its seed sequence, which
    # is not part of the persisted state)
    sampler = qmc.Sobol(dim, scramble=True, seed=int(rng.integers(2**63)))
    m = max(int(math.ceil(math.log2(max(count, 1)))), 0)
    return sampler.random_base2(m)[:count]


def _initial_simplex(x0: np.ndarray, step: float) -> np.ndarray:
    dim = x0.size
    simplex = np.tile(x0, (dim + 1, 1))
    for i in range(dim):
        simplex[i + 1, i] += step if x0[i] + step <= 1.0 else -step
    return simplex


def maximize_acquisition(
    score_fn: ScoreFn,
    dim: int,
    rng: np.random.Generator,
    completed=None,
    pending=None,
    grid=None,
    n_candidates: int = 1000,
    n_refine: int = 5,
    refine_iters: int = 50,
    exclusion_tol: float = 1e-6,
) -> np.ndarray:
    """Return the unit-cube point that maximizes ``score_fn``.

    Continuous mode scans ``n_candidates`` quasi-random points and refines
    the best ``n_refine`` with a bounded Nelder-Mead simplex.  Grid mode
    (``grid`` given as an array of unit points) returns the best grid point
    that is neither completed nor pending.  Ties go to the lowest index.
    """
    taken = [np.atleast_2d(np.asarray(a, dtype=float)) for a in (completed, pending) if a is not None]
    taken = [t for t in taken if t.size]
    taken = np.vstack(taken) if taken else np.empty((0, dim))

    if grid is not None:
        grid = np.atleast_2d(np.asarray(grid, dtype=float))
        free = ~_too_close(grid, taken, 1e-9)
        if not np.any(free):
            raise ExhaustedGridError("all grid points are completed or pending")
        idx = np.flatnonzero(free)
        scores = np.asarray(score_fn(grid[idx]), dtype=float)
        return grid[idx[int(np.argmax(scores))]].copy()

    cands = candidate_points(dim, n_candidates, rng)
    cands = cands[~_too_close(cands, taken, exclusion_tol)]
    scores = np.asarray(score_fn(cands), dtype=float)
    scores = np.where(np.isfinite(scores), scores, -np.inf)
    order = np.argsort(-scores, kind="stable")
    best_x, best_s = cands[order[0]].copy(), scores[order[0]]

    def negative(x):
        return -float(score_fn(np.clip(x, 0.0, 1.0)[None, :])[0])

    bounds = [(0.0, 1.0)] * dim
    for i in order[:n_refine]:
        x0 = cands[i]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = minimize(
                negative,
                x0,
                method="Nelder-Mead",
                bounds=bounds,
                options={
                    "maxiter": refine_iters,
                    "xatol": 1e-9,
                    "fatol": 0.0,
                    "initial_simplex": _initial_simplex(x0, 0.02),
                },
            )
        x = np.clip(res.x, 0.0, 1.0)
        s = -float(res.fun)
        if s > best_s and not _too_close(x[None, :], taken, exclusion_tol)[0]:
            best_x, best_s = x, s
    return best_x
