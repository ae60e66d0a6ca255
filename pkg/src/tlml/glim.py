"""Dated log-likelihoods and their derivatives.

Three families share one vectorised contract: ``logl``, ``score``,
``hessian`` and ``third`` take arrays ``y`` (shape ``(m,)``), ``z`` (shape
``(m, d)``) and a parameter vector ``theta`` (shape ``(d,)``), and return
per-observation values of shape ``(m,)``, ``(m, d)``, ``(m, d, d)`` and
``(m, d, d, d)``.

Additive constants are dropped per family, so log-likelihood values are
comparable only within a family.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INTENSITY_FLOOR = 1e-12
THETA_LOWER = 1e-6
THETA_UPPER = 1.0 - 1e-6


class DomainError(ValueError):
    """An intensity fell below the evaluation floor."""

    def __init__(self, message, dates=None):
        super().__init__(message)
        self.dates = dates


@dataclass
class RegressionFrame:
    """Counts arranged as a dynamic regression.

    ``y[t]`` is the observation at date ``t`` for t = 0..T and ``z[t]`` the
    regressor built from ``y[t-1]``: ``[(n - y[t-1]) y[t-1] / n, y[t-1]]``.
    Row 0 of ``z`` is undefined (NaN); estimation uses dates 1..T.
    """

    y: np.ndarray
    z: np.ndarray
    n: int | None = None

    @classmethod
    def from_counts(cls, N2, n: int) -> "RegressionFrame":
        y = np.asarray(N2, dtype=float)
        z = np.full((len(y), 2), np.nan)
        prev = y[:-1]
        z[1:, 0] = (n - prev) * prev / n
        z[1:, 1] = prev
        return cls(y=y, z=z, n=int(n))

    @classmethod
    def from_series(cls, obs) -> "RegressionFrame":
        """Frame for i.i.d.-style observations y_1..y_T (no regressors)."""
        obs = np.asarray(obs, dtype=float)
        y = np.concatenate([[np.nan], obs])
        return cls(y=y, z=np.zeros((len(y), 0)), n=None)

    @property
    def T(self) -> int:
        return len(self.y) - 1

    def window(self, T: int):
        """Observations and regressors for dates 1..T, oldest first."""
        if not 1 <= T <= self.T:
            raise ValueError(f"date {T} outside frame 1..{self.T}")
        return self.y[1:T + 1], self.z[1:T + 1]


def _intensity(z, theta, dates=None):
    lam = z @ theta
    bad = lam < INTENSITY_FLOOR
    if np.any(bad):
        idx = np.flatnonzero(bad)
        where = idx if dates is None else np.asarray(dates)[idx]
        raise DomainError(f"nonpositive intensity at t={where.tolist()[:5]}", dates=where)
    return lam


def poisson_logl(y, z, theta):
    """-z'theta + y log(z'theta), elementwise over observations."""
    y = np.asarray(y, dtype=float)
    lam = _intensity(np.atleast_2d(z), np.asarray(theta, dtype=float))
    out = -lam + y * np.log(lam)
    return out if np.ndim(y) else float(out[0])


def poisson_derivatives(y, z, theta):
    """Return (score, hessian, third) of the Poisson log-density."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    lam = _intensity(z, np.asarray(theta, dtype=float))
    d1 = y / lam - 1.0
    d2 = -y / lam ** 2
    d3 = 2.0 * y / lam ** 3
    return _chain(z, d1, d2, d3)


def poisson_gaussian_logl(y, z, theta):
    """Exact log-density of Normal(lambda, lambda) with the 2*pi term dropped."""
    y = np.asarray(y, dtype=float)
    lam = _intensity(np.atleast_2d(z), np.asarray(theta, dtype=float))
    out = -0.5 * np.log(lam) - (y - lam) ** 2 / (2.0 * lam)
    return out if np.ndim(y) else float(out[0])


def poisson_gaussian_logl_and_score(y, z, theta):
    score, _, _ = poisson_gaussian_derivatives(y, z, theta)
    logl = poisson_gaussian_logl(y, z, theta)
    return logl, (score if np.ndim(y) else score[0])


def poisson_gaussian_derivatives(y, z, theta):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    lam = _intensity(z, np.asarray(theta, dtype=float))
    y2 = y * y
    d1 = (y2 - lam - lam ** 2) / (2.0 * lam ** 2)
    d2 = 0.5 / lam ** 2 - y2 / lam ** 3
    d3 = -1.0 / lam ** 3 + 3.0 * y2 / lam ** 4
    return _chain(z, d1, d2, d3)


def _chain(z, d1, d2, d3):
    # lambda is linear in theta, so derivatives are scalar factors times z-products
    score = d1[:, None] * z
    zz = z[:, :, None] * z[:, None, :]
    hess = d2[:, None, None] * zz
    third = d3[:, None, None, None] * zz[:, :, :, None] * z[:, None, None, :]
    return score, hess, third


def gaussian_mean_logl(y, theta):
    """-(y - theta)^2 / 2 for unit-variance Gaussian observations."""
    return -0.5 * (np.asarray(y, dtype=float) - theta) ** 2


class PoissonGlim:
    name = "poisson"
    dim = 2
    lower = np.array([THETA_LOWER, THETA_LOWER])
    upper = np.array([THETA_UPPER, THETA_UPPER])

    def usable(self, y, z):
        # y_{t-1} = 0 gives lambda = 0 and, since then y_t = 0, a unit density
        return np.any(z > 0.0, axis=1)

    def logl(self, y, z, theta):
        return poisson_logl(y, z, theta)

    def derivatives(self, y, z, theta):
        return poisson_derivatives(y, z, theta)

    def score_hessian(self, y, z, theta):
        lam = _intensity(z, theta)
        return (y / lam - 1.0)[:, None] * z, (-y / lam ** 2)[:, None, None] * (z[:, :, None] * z[:, None, :])


class PoissonGaussianGlim(PoissonGlim):
    name = "poisson_gaussian"

    def logl(self, y, z, theta):
        return poisson_gaussian_logl(y, z, theta)

    def derivatives(self, y, z, theta):
        return poisson_gaussian_derivatives(y, z, theta)

    def score_hessian(self, y, z, theta):
        score, hess, _ = poisson_gaussian_derivatives(y, z, theta)
        return score, hess


class GaussianMean:
    """y_t ~ N(theta, 1); the parameter is a length-1 vector."""

    name = "gaussian_mean"
    dim = 1
    lower = np.array([-np.inf])
    upper = np.array([np.inf])

    def usable(self, y, z):
        return np.isfinite(y)

    def logl(self, y, z, theta):
        return gaussian_mean_logl(y, theta[0])

    def derivatives(self, y, z, theta):
        m = len(y)
        score = (np.asarray(y, dtype=float) - theta[0])[:, None]
        return score, -np.ones((m, 1, 1)), np.zeros((m, 1, 1, 1))

    def score_hessian(self, y, z, theta):
        score, hess, _ = self.derivatives(y, z, theta)
        return score, hess


MODELS = {
    "poisson": PoissonGlim,
    "poisson_gaussian": PoissonGaussianGlim,
    "gaussian_mean": GaussianMean,
}


def get_model(name: str):
    try:
        return MODELS[name]()
    except KeyError:
        raise ValueError(f"unknown model family {name!r}; choose from {sorted(MODELS)}") from None
