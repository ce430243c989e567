"""Acquisition under pending evaluations via Monte Carlo fantasies.

For every hyperparameter sample, outcomes at the pending locations are
drawn from the joint posterior predictive (observation noise included),
the data set is augmented with them, and the acquisition is averaged over
the fantasies and then over the hyperparameter samples.

All fantasies drawn under one hyperparameter sample share their inputs,
so one factorization serves all of them; only the solved targets differ.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .acquisition import AcquisitionKind, IntegratedAcquisition, acquisition_utility, fit_posteriors
from .errors import InvalidArgumentError
from .gp import MATERN52, GpHyperparams, GpPosterior, PosteriorStack, PredictiveMoments, gp_fit


@dataclass
class PendingSet:
    """In-flight evaluation locations (unit cube) and their issue times."""

    dim: int
    locations: Optional[np.ndarray] = None
    issued: list = field(default_factory=list)

    def __post_init__(self):
        if self.locations is None:
            self.locations = np.empty((0, self.dim))
        self.locations = np.asarray(self.locations, dtype=float).reshape(-1, self.dim)
        if np.any(self.locations < 0) or np.any(self.locations > 1):
            raise InvalidArgumentError("pending locations must lie in the unit cube")
        self.issued = list(self.issued) + [0.0] * (len(self) - len(self.issued))

    def __len__(self) -> int:
        return self.locations.shape[0]

    def index_of(self, x, tol: float = 1e-9) -> Optional[int]:
        if len(self) == 0:
            return None
        d2 = np.sum((self.locations - np.asarray(x, dtype=float).reshape(1, -1)) ** 2, axis=1)
        i = int(np.argmin(d2))
        return i if d2[i] <= tol * tol else None

    def add(self, x, issued_at: float = 0.0) -> None:
        x = np.asarray(x, dtype=float).reshape(1, self.dim)
        if np.any(x < 0) or np.any(x > 1):
            raise InvalidArgumentError("pending locations must lie in the unit cube")
        if self.index_of(x) is not None:
            raise InvalidArgumentError("location is already pending")
        self.locations = np.vstack([self.locations, x])
        self.issued.append(float(issued_at))

    def remove(self, index: int) -> None:
        self.locations = np.delete(self.locations, index, axis=0)
        del self.issued[index]


@dataclass(frozen=True)
class FantasySample:
    values: np.ndarray
    hyper: Optional[GpHyperparams] = None


def joint_pending_predictive(posterior: GpPosterior, pending) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and covariance of the noisy outcomes at the pending rows."""
    P = np.atleast_2d(np.asarray(pending, dtype=float))
    if P.shape[0] < 1:
        raise InvalidArgumentError("at least one pending location is required")
    mean, cov = posterior.predict_joint(P)
    cov = cov + posterior.hyper.noise_variance * np.eye(P.shape[0])
    return mean, cov


def _covariance_root(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    return vecs * np.sqrt(np.maximum(vals, 0.0))


def sample_fantasies(joint_moments, count: int, rng: np.random.Generator, hyper=None) -> list:
    """Draw ``count`` outcome vectors from a joint Gaussian."""
    if count < 1:
        raise InvalidArgumentError("count must be at least 1")
    mean, cov = joint_moments
    mean = np.asarray(mean, dtype=float).reshape(-1)
    root = _covariance_root(np.asarray(cov, dtype=float).reshape(mean.size, mean.size))
    draws = mean + rng.standard_normal((count, mean.size)) @ root.T
    return [FantasySample(d, hyper) for d in draws]


def _fantasy_branch(posterior: GpPosterior, pending: np.ndarray, count: int, rng, best_value: float):
    """Augmented posterior, solved fantasy targets (N+J, F) and per-fantasy incumbents (F,).

    Every fantasy under one hyperparameter sample shares the augmented
    inputs, so a single factorization serves all of them.
    """
    fantasies = sample_fantasies(joint_pending_predictive(posterior, pending), count, rng, posterior.hyper)
    Y = np.stack([f.values for f in fantasies], axis=1)  # (J, F)
    X_aug = np.vstack([posterior.inputs, pending])
    augmented = gp_fit(X_aug, np.concatenate([posterior.targets, Y[:, 0]]), posterior.hyper, posterior.kernel)
    observed = np.repeat(posterior.targets[:, None], count, axis=1)
    alphas = augmented.solve(np.vstack([observed, Y]) - posterior.hyper.mean)
    return augmented, alphas, np.minimum(best_value, Y.min(axis=0))


class PendingAcquisition:
    """Acquisition averaged over hyperparameter samples and fantasies.

    Fantasies are drawn once at construction, so repeated calls score a
    fixed Monte Carlo estimate (needed for a stable maximization).  Each
    fantasy's incumbent includes its own fantasized outcomes.
    """

    def __init__(
        self,
        posteriors: Sequence[GpPosterior],
        best_value: float,
        pending,
        fantasy_count: int,
        kind: AcquisitionKind,
        rng: np.random.Generator,
    ):
        if fantasy_count < 1:
            raise InvalidArgumentError("fantasy_count must be at least 1")
        pending = np.atleast_2d(np.asarray(pending, dtype=float))
        branches = [_fantasy_branch(p, pending, fantasy_count, rng, best_value) for p in posteriors]
        self.kind = kind
        self.stack = PosteriorStack([b[0] for b in branches], np.stack([b[1] for b in branches]))
        self.best = np.stack([b[2] for b in branches])[:, None, :]  # (S, 1, F)

    def per_sample(self, X) -> np.ndarray:
        """Fantasy-averaged acquisition under each hyperparameter sample, shape (S, M)."""
        m = self.stack.predict(X)
        moments = PredictiveMoments(m.mean, np.broadcast_to(m.variance[:, :, None], m.mean.shape))
        return np.mean(acquisition_utility(moments, self.best, self.kind), axis=2)

    def __call__(self, X) -> np.ndarray:
        return np.mean(self.per_sample(X), axis=0)


def pending_score(posteriors, best_value, pending, fantasy_count, kind, rng):
    """Score function for the current pending set; plain integrated acquisition when empty."""
    pending = None if pending is None else np.asarray(pending, dtype=float)
    if pending is None or pending.size == 0:
        return IntegratedAcquisition(posteriors, best_value, kind)
    return PendingAcquisition(posteriors, best_value, pending, fantasy_count, kind, rng)


def acquisition_with_pending(
    x,
    data,
    pending,
    hyper_samples,
    fantasy_count: int = 10,
    kind: AcquisitionKind = AcquisitionKind(),
    rng=None,
    kernel: str = MATERN52,
):
    """Monte Carlo estimate of the acquisition at x marginalized over pending outcomes."""
    X, y = data
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    posteriors = fit_posteriors(X, y, hyper_samples, kernel)
    score = pending_score(posteriors, float(np.min(y)), pending, fantasy_count, kind, rng)
    x = np.asarray(x, dtype=float)
    out = score(np.atleast_2d(x))
    return float(out[0]) if x.ndim == 1 else out
