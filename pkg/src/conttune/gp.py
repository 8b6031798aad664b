"""Gaussian-process regression over integer parallelism levels.

Squared-exponential kernel in raw parallelism units, targets standardized
before fitting and denormalized on predict.  ``noise_variance`` is relative
to the signal variance of the standardized targets, so the default 1e-4
means "one part in ten thousand of the target spread"; pass 0 for exact
interpolation.  Training observations are canonicalized (sorted) so that
predictions are bit-for-bit invariant under reordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrainingSet, SingularCovariance

LENGTH_SCALE_GRID = (1.0, 2.0, 3.0, 5.0, 8.0)
_MAX_JITTER = 1e-2


@dataclass(frozen=True)
class KernelConfig:
    length_scale: float = 3.0
    signal_variance: float | None = None  # None: variance of the standardized targets
    noise_variance: float = 1e-4          # relative to signal_variance
    jitter: float = 1e-8

    def __post_init__(self):
        if self.length_scale <= 0:
            raise ValueError("length_scale must be > 0")
        if self.signal_variance is not None and self.signal_variance <= 0:
            raise ValueError("signal_variance must be > 0")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")
        if self.jitter <= 0:
            raise ValueError("jitter must be > 0")


def _se_kernel(a: np.ndarray, b: np.ndarray, length_scale: float, signal: float) -> np.ndarray:
    d = a[:, None] - b[None, :]
    return signal * np.exp(-0.5 * (d / length_scale) ** 2)


def _chol_with_jitter(k: np.ndarray, jitter: float) -> tuple[np.ndarray, float]:
    j = jitter
    while j <= _MAX_JITTER:
        try:
            return np.linalg.cholesky(k + j * np.eye(len(k))), j
        except np.linalg.LinAlgError:
            j *= 10.0
    raise SingularCovariance(f"covariance not positive definite up to jitter {_MAX_JITTER}")


class GpModel:
    """Immutable after fit(); predict() is safe to call concurrently."""

    def __init__(self, x, y_norm, y_mean, y_scale, length_scale, signal, noise, chol, alpha):
        self._x = x
        self._y_norm = y_norm
        self.y_mean = y_mean
        self.y_scale = y_scale
        self.length_scale = length_scale
        self._signal = signal
        self._noise = noise
        self._chol = chol
        self._alpha = alpha

    @property
    def n_train(self) -> int:
        return len(self._x)

    @property
    def signal_variance(self) -> float:
        """Prior (far-from-data) predictive variance, in raw target units squared."""
        return self._signal * self.y_scale ** 2

    @property
    def prior_mean(self) -> float:
        return self.y_mean

    @classmethod
    def fit(
        cls,
        observations,
        kernel: KernelConfig = KernelConfig(),
        tune_length_scale: bool = False,
    ) -> "GpModel":
        """Fit on (p, pa) pairs; duplicates allowed (noise/jitter absorb them).

        With tune_length_scale=True the length scale is refined over a small
        grid by log marginal likelihood.
        """
        obs = sorted((float(p), float(pa)) for p, pa in observations)
        if not obs:
            raise EmptyTrainingSet("need at least one observation")
        x = np.array([p for p, _ in obs])
        y = np.array([pa for _, pa in obs])
        y_mean = float(np.mean(y))
        std = float(np.std(y))
        y_scale = std if std > 0 else 1.0
        y_norm = (y - y_mean) / y_scale
        var = float(np.var(y_norm))
        signal = kernel.signal_variance if kernel.signal_variance is not None else (var if var > 0 else 1.0)
        noise = kernel.noise_variance * signal

        def build(ls: float) -> tuple[np.ndarray, np.ndarray]:
            k = _se_kernel(x, x, ls, signal) + noise * np.eye(len(x))
            chol, _ = _chol_with_jitter(k, kernel.jitter)
            alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y_norm))
            return chol, alpha

        length_scale = kernel.length_scale
        if tune_length_scale and len(x) > 1:
            best = None
            for ls in LENGTH_SCALE_GRID:
                try:
                    chol, alpha = build(ls)
                except SingularCovariance:
                    continue
                lml = -0.5 * float(y_norm @ alpha) - float(np.sum(np.log(np.diag(chol))))
                if best is None or lml > best[0]:
                    best = (lml, ls, chol, alpha)
            if best is None:
                raise SingularCovariance("no length scale in the grid yields a usable fit")
            _, length_scale, chol, alpha = best
        else:
            chol, alpha = build(length_scale)
        return cls(x, y_norm, y_mean, y_scale, length_scale, signal, noise, chol, alpha)

    def predict(self, p) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance (raw units); variance clamped at 0."""
        q = np.atleast_1d(np.asarray(p, dtype=float))
        k_star = _se_kernel(self._x, q, self.length_scale, self._signal)
        mu_norm = k_star.T @ self._alpha
        v = np.linalg.solve(self._chol, k_star)
        var_norm = np.maximum(self._signal - np.sum(v * v, axis=0), 0.0)
        mu = mu_norm * self.y_scale + self.y_mean
        var = var_norm * self.y_scale ** 2
        return mu, var

    def confidence_bounds(self, p, beta: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
        """(mu - beta*sigma, mu + beta*sigma)."""
        if beta < 0:
            raise ValueError("beta must be >= 0")
        mu, var = self.predict(p)
        half = beta * np.sqrt(var)
        return mu - half, mu + half


def fit(observations, kernel: KernelConfig = KernelConfig(), tune_length_scale: bool = False) -> GpModel:
    return GpModel.fit(observations, kernel, tune_length_scale)


def predict(model: GpModel, p) -> tuple[np.ndarray, np.ndarray]:
    return model.predict(p)


def confidence_bounds(model: GpModel, p, beta: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    return model.confidence_bounds(p, beta)
