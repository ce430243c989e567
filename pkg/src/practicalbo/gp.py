"""Gaussian-process regression core.

Kernels (ARD squared exponential and ARD Matern 5/2), exact posterior
prediction via a Cholesky factorization, the log marginal likelihood, and
the standard-normal helpers used by the acquisition functions.

Inputs are expected in the unit hypercube; nothing here enforces it, but
the default hyperparameter priors assume that scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr

from .errors import InvalidArgumentError, NumericalError

SQUARED_EXPONENTIAL = "se"
MATERN52 = "matern52"
KERNEL_KINDS = (SQUARED_EXPONENTIAL, MATERN52)

# Diagonal jitter tried in turn (relative to the prior variance theta0 + nu).
JITTER_LEVELS = (0.0, 1e-10, 1e-8, 1e-6)

_LOG_2PI = math.log(2.0 * math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True, eq=False)
class GpHyperparams:
    """The D + 3 quantities governing one GP.

    Attributes
    ----------
    amplitude : float
        Covariance scale theta0 (> 0).
    length_scales : ndarray, shape (D,)
        ARD length scales theta_1..theta_D (each > 0).
    noise_variance : float
        Observation noise variance nu (>= 0).
    mean : float
        Constant prior mean m.
    """

    amplitude: float
    length_scales: np.ndarray
    noise_variance: float
    mean: float = 0.0

    def __post_init__(self):
        ls = np.array(self.length_scales, dtype=float).reshape(-1)
        ls.setflags(write=False)
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        object.__setattr__(self, "mean", float(self.mean))
        if ls.size == 0:
            raise InvalidArgumentError("at least one length scale is required")

    @property
    def dim(self) -> int:
        return self.length_scales.size

    def is_valid(self) -> bool:
        """True when every parameter lies inside its support."""
        return bool(
            np.isfinite(self.amplitude)
            and self.amplitude > 0
            and np.all(np.isfinite(self.length_scales))
            and np.all(self.length_scales > 0)
            and np.isfinite(self.noise_variance)
            and self.noise_variance >= 0
            and np.isfinite(self.mean)
        )

    def validate(self) -> "GpHyperparams":
        if not self.is_valid():
            raise InvalidArgumentError(f"hyperparameters outside their support: {self}")
        return self

    def replace(self, **changes: Any) -> "GpHyperparams":
        values = {
            "amplitude": self.amplitude,
            "length_scales": self.length_scales,
            "noise_variance": self.noise_variance,
            "mean": self.mean,
        }
        values.update(changes)
        return GpHyperparams(**values)

    def to_dict(self) -> dict:
        return {
            "amplitude": self.amplitude,
            "length_scales": [float(v) for v in self.length_scales],
            "noise_variance": self.noise_variance,
            "mean": self.mean,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GpHyperparams":
        return cls(
            amplitude=doc["amplitude"],
            length_scales=doc["length_scales"],
            noise_variance=doc["noise_variance"],
            mean=doc["mean"],
        )

    def __repr__(self) -> str:
        ls = ", ".join(f"{v:.4g}" for v in self.length_scales)
        return (
            f"GpHyperparams(amplitude={self.amplitude:.4g}, length_scales=[{ls}], "
            f"noise_variance={self.noise_variance:.4g}, mean={self.mean:.4g})"
        )


@dataclass(frozen=True)
class PredictiveMoments:
    """Predictive mean and latent variance (scalars or arrays)."""

    mean: Any
    variance: Any

    @property
    def std(self):
        return np.sqrt(self.variance)


def _check_kernel(kind: str) -> None:
    if kind not in KERNEL_KINDS:
        raise InvalidArgumentError(f"unknown kernel {kind!r}; expected one of {KERNEL_KINDS}")


def squared_distance(x, x_other, length_scales) -> float:
    """Length-scale weighted squared distance between two points."""
    x = np.asarray(x, dtype=float).reshape(-1)
    x_other = np.asarray(x_other, dtype=float).reshape(-1)
    ls = np.asarray(length_scales, dtype=float).reshape(-1)
    if not (x.size == x_other.size == ls.size):
        raise InvalidArgumentError(
            f"dimension mismatch: {x.size}, {x_other.size} and {ls.size} length scales"
        )
    return float(np.sum(((x - x_other) / ls) ** 2))


def pairwise_squared_distance(X1, X2, length_scales) -> np.ndarray:
    """Matrix of scaled squared distances between the rows of X1 and X2."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    ls = np.asarray(length_scales, dtype=float).reshape(-1)
    if X1.shape[1] != ls.size or X2.shape[1] != ls.size:
        raise InvalidArgumentError(
            f"dimension mismatch: inputs of width {X1.shape[1]} and {X2.shape[1]}, "
            f"{ls.size} length scales"
        )
    diff = X1[:, None, :] / ls - X2[None, :, :] / ls
    return np.einsum("ijk,ijk->ij", diff, diff)


def covariance_from_r2(r2, amplitude: float, kind: str):
    """Evaluate a stationary kernel given scaled squared distances."""
    if kind == SQUARED_EXPONENTIAL:
        return amplitude * np.exp(-0.5 * r2)
    if kind == MATERN52:
        r = np.sqrt(5.0 * r2)
        return amplitude * (1.0 + r + (5.0 / 3.0) * r2) * np.exp(-r)
    _check_kernel(kind)


def kernel_se(x, x_other, hyper: GpHyperparams) -> float:
    """ARD squared-exponential covariance between two points."""
    r2 = squared_distance(x, x_other, hyper.length_scales)
    return float(hyper.amplitude * math.exp(-0.5 * r2))


def kernel_m52(x, x_other, hyper: GpHyperparams) -> float:
    """ARD Matern 5/2 covariance between two points."""
    r2 = squared_distance(x, x_other, hyper.length_scales)
    r = _SQRT5 * math.sqrt(r2)
    return float(hyper.amplitude * (1.0 + r + (5.0 / 3.0) * r2) * math.exp(-r))


def kernel_matrix(X1, X2, hyper: GpHyperparams, kind: str = MATERN52) -> np.ndarray:
    return covariance_from_r2(
        pairwise_squared_distance(X1, X2, hyper.length_scales), hyper.amplitude, kind
    )


@dataclass(frozen=True, eq=False)
class GpPosterior:
    """Trained GP state.

    Holds the training data, the lower Cholesky factor of
    ``K + nu*I + jitter*I`` and ``alpha = (K + nu*I)^-1 (y - m)``.
    Treat instances as immutable; they are safe to share between threads.
    """

    inputs: np.ndarray
    targets: np.ndarray
    hyper: GpHyperparams
    kernel: str
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.targets.size

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def cross_covariance(self, X) -> np.ndarray:
        """Covariance between query rows of X and the training inputs, shape (M, N)."""
        return kernel_matrix(X, self.inputs, self.hyper, self.kernel)

    def solve(self, b) -> np.ndarray:
        """Apply the inverse of the (jittered) training covariance to b."""
        tmp = solve_triangular(self.chol, b, lower=True, check_finite=False)
        return solve_triangular(self.chol.T, tmp, lower=False, check_finite=False)

    def predict(self, X) -> PredictiveMoments:
        """Posterior moments of the latent function at the rows of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise InvalidArgumentError(f"query has width {X.shape[1]}, model has {self.dim}")
        Ks = self.cross_covariance(X)
        mean = self.hyper.mean + Ks @ self.alpha
        v = solve_triangular(self.chol, Ks.T, lower=True, check_finite=False)
        var = self.hyper.amplitude - np.einsum("ij,ij->j", v, v)
        return PredictiveMoments(mean, np.maximum(var, 0.0))

    def predict_joint(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean vector and latent covariance matrix at the rows of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Ks = self.cross_covariance(X)
        mean = self.hyper.mean + Ks @ self.alpha
        v = solve_triangular(self.chol, Ks.T, lower=True, check_finite=False)
        cov = kernel_matrix(X, X, self.hyper, self.kernel) - v.T @ v
        cov = 0.5 * (cov + cov.T)
        # same arithmetic as predict() so the marginals agree exactly
        cov[np.diag_indices_from(cov)] = np.maximum(self.hyper.amplitude - np.einsum("ij,ij->j", v, v), 0.0)
        return mean, cov

    def log_marginal_likelihood(self) -> float:
        resid = self.targets - self.hyper.mean
        return float(
            -0.5 * resid @ self.alpha
            - np.sum(np.log(np.diag(self.chol)))
            - 0.5 * self.n * _LOG_2PI
        )


class PosteriorStack:
    """Several posteriors over the same training inputs, evaluated together.

    Used to average an acquisition over hyperparameter samples without a
    Python-level loop per sample.  ``alphas`` may carry an extra trailing
    axis of alternative target vectors (e.g. fantasies) that share each
    posterior's factorization.
    """

    def __init__(self, posteriors, alphas=None):
        posteriors = list(posteriors)
        if not posteriors:
            raise InvalidArgumentError("at least one posterior is required")
        first = posteriors[0]
        for p in posteriors[1:]:
            if p.kernel != first.kernel or p.inputs.shape != first.inputs.shape or not np.array_equal(
                p.inputs, first.inputs
            ):
                raise InvalidArgumentError("stacked posteriors must share inputs and kernel")
        self.posteriors = posteriors
        self.kernel = first.kernel
        self.inputs = first.inputs
        self.length_scales = np.stack([p.hyper.length_scales for p in posteriors])  # (S, D)
        self.amplitudes = np.array([p.hyper.amplitude for p in posteriors])
        self.means = np.array([p.hyper.mean for p in posteriors])
        self.alphas = np.stack([p.alpha for p in posteriors]) if alphas is None else np.asarray(alphas)
        eye = np.eye(first.n)
        self.chol_inv = np.stack(
            [solve_triangular(p.chol, eye, lower=True, check_finite=False) for p in posteriors]
        )  # (S, N, N)
        self._scaled_inputs = self.inputs[None, :, :] / self.length_scales[:, None, :]

    def __len__(self) -> int:
        return len(self.posteriors)

    def cross_covariance(self, X) -> np.ndarray:
        """Shape (S, M, N)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        scaled = X[None, :, :] / self.length_scales[:, None, :]
        diff = scaled[:, :, None, :] - self._scaled_inputs[:, None, :, :]
        r2 = np.einsum("smnd,smnd->smn", diff, diff)
        return covariance_from_r2(r2, self.amplitudes[:, None, None], self.kernel)

    def predict(self, X) -> PredictiveMoments:
        """Means of shape (S, M) (or (S, M, F)) and latent variances of shape (S, M)."""
        Ks = self.cross_covariance(X)
        if self.alphas.ndim == 2:
            mean = self.means[:, None] + np.einsum("smn,sn->sm", Ks, self.alphas)
        else:
            mean = self.means[:, None, None] + np.einsum("smn,snf->smf", Ks, self.alphas)
        v = np.einsum("skn,smn->smk", self.chol_inv, Ks)
        var = self.amplitudes[:, None] - np.einsum("smk,smk->sm", v, v)
        return PredictiveMoments(mean, np.maximum(var, 0.0))


def factorize(K: np.ndarray, scale: float = 1.0) -> tuple[np.ndarray, float]:
    """Cholesky factor of a symmetric matrix with escalating diagonal jitter.

    Returns the lower factor and the absolute jitter that was added.
    """
    n = K.shape[0]
    for level in JITTER_LEVELS:
        jitter = level * scale
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(n) if jitter else K)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return L, jitter
    raise NumericalError(
        f"covariance matrix of size {n} is not positive definite even with "
        f"{JITTER_LEVELS[-1]:g} relative diagonal jitter; the inputs are badly conditioned"
    )


class MarginalLikelihood:
    """log N(y | m*1, K + nu*I) for fixed data, as a function of hyperparameters.

    Caches the per-dimension squared differences of the inputs so repeated
    evaluations (sampling, optimization) only redo the kernel and the
    factorization.
    """

    def __init__(self, inputs, targets, kernel: str = MATERN52):
        _check_kernel(kernel)
        self.inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        self.targets = np.asarray(targets, dtype=float).reshape(-1)
        if self.inputs.shape[0] != self.targets.size:
            raise InvalidArgumentError(f"{self.inputs.shape[0]} inputs but {self.targets.size} targets")
        if self.targets.size == 0:
            raise InvalidArgumentError("at least one observation is required")
        self.kernel = kernel
        self._sqdiff = (self.inputs[:, None, :] - self.inputs[None, :, :]) ** 2
        self._diag = np.diag_indices(self.targets.size)

    def __call__(self, hyper: GpHyperparams) -> float:
        if hyper.dim != self.inputs.shape[1]:
            raise InvalidArgumentError(f"inputs have width {self.inputs.shape[1]}, hyper has {hyper.dim}")
        return self.evaluate(hyper.amplitude, hyper.length_scales, hyper.noise_variance, hyper.mean)

    def evaluate(self, amplitude: float, length_scales: np.ndarray, noise_variance: float, mean: float) -> float:
        """Same as calling with a GpHyperparams, minus construction and validation."""
        r2 = self._sqdiff @ (1.0 / length_scales**2)
        K = covariance_from_r2(r2, amplitude, self.kernel)
        K[self._diag] += noise_variance
        L, _ = factorize(K, amplitude + noise_variance)
        a = solve_triangular(L, self.targets - mean, lower=True, check_finite=False)
        return float(-0.5 * a @ a - np.sum(np.log(np.diag(L))) - 0.5 * self.targets.size * _LOG_2PI)


def gp_fit(inputs, targets, hyper: GpHyperparams, kernel: str = MATERN52) -> GpPosterior:
    """Condition a GP on data."""
    _check_kernel(kernel)
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(-1)
    if X.shape[0] != y.size:
        raise InvalidArgumentError(f"{X.shape[0]} inputs but {y.size} targets")
    if y.size == 0:
        raise InvalidArgumentError("at least one observation is required")
    if X.shape[1] != hyper.dim:
        raise InvalidArgumentError(f"inputs have width {X.shape[1]}, hyper has {hyper.dim}")
    hyper.validate()
    K = kernel_matrix(X, X, hyper, kernel)
    K[np.diag_indices_from(K)] += hyper.noise_variance
    L, jitter = factorize(K, hyper.amplitude + hyper.noise_variance)
    tmp = solve_triangular(L, y - hyper.mean, lower=True, check_finite=False)
    alpha = solve_triangular(L.T, tmp, lower=False, check_finite=False)
    X = X.copy()
    y = y.copy()
    for arr in (X, y, L, alpha):
        arr.setflags(write=False)
    return GpPosterior(X, y, hyper, kernel, L, alpha, jitter)


def gp_predict(posterior: GpPosterior, x) -> PredictiveMoments:
    """Predictive mean and latent variance at one point (or rows of a matrix).

    A 1-D ``x`` gives scalar moments; a 2-D ``x`` gives arrays.
    """
    x = np.asarray(x, dtype=float)
    moments = posterior.predict(x)
    if x.ndim == 1:
        return PredictiveMoments(float(moments.mean[0]), float(moments.variance[0]))
    return moments


def log_marginal_likelihood(inputs, targets, hyper: GpHyperparams, kernel: str = MATERN52) -> float:
    """log N(y | m*1, K + nu*I)."""
    return gp_fit(inputs, targets, hyper, kernel).log_marginal_likelihood()


def norm_cdf(z):
    """Standard normal CDF."""
    return ndtr(z)


def norm_pdf(z):
    """Standard normal density."""
    z = np.asarray(z, dtype=float)
    out = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return float(out) if out.ndim == 0 else out
