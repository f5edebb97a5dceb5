"""Linear-Gaussian regression with three scalar Gibbs blocks.

    y = X theta + e,   e ~ N(0, sigma^2 I),   theta_k ~ N(mu_k, tau_k^2) independently.

Everything is available in closed form, which makes it the reference
problem for checking Chib's estimator.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy.stats import multivariate_normal

from .chib import State, ThreeBlockModel

_LOG_2PI = math.log(2.0 * math.pi)


def _log_normal(x, mean, var):
    return -0.5 * (_LOG_2PI + math.log(var) + (x - mean) ** 2 / var)


class LinearGaussianToy(ThreeBlockModel):
    def __init__(self, X: np.ndarray, y: np.ndarray, sigma: float, prior_mean=None, prior_sd=None):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.X.shape != (len(self.y), 3):
            raise ValueError("X must be (n, 3) with one row per observation")
        self.sigma2 = float(sigma) ** 2
        self.mu = np.zeros(3) if prior_mean is None else np.asarray(prior_mean, dtype=float)
        self.tau2 = np.ones(3) if prior_sd is None else np.asarray(prior_sd, dtype=float) ** 2
        self._xtx = self.X.T @ self.X
        self._xty = self.X.T @ self.y

    def initial_state(self) -> State:
        return [float(m) for m in self.mu]

    def _conditional(self, k: int, state: State):
        theta = np.asarray(state, dtype=float)
        others = self._xty[k] - sum(self._xtx[k, j] * theta[j] for j in range(3) if j != k)
        prec = 1.0 / self.tau2[k] + self._xtx[k, k] / self.sigma2
        mean = (self.mu[k] / self.tau2[k] + others / self.sigma2) / prec
        return mean, 1.0 / prec

    def sample_block(self, k: int, state: State, rng: np.random.Generator) -> float:
        mean, var = self._conditional(k, state)
        return float(mean + math.sqrt(var) * rng.standard_normal())

    def log_conditional(self, k: int, value, state: State) -> float:
        mean, var = self._conditional(k, state)
        return _log_normal(float(value), mean, var)

    def log_likelihood(self, state: State) -> float:
        r = self.y - self.X @ np.asarray(state, dtype=float)
        n = len(self.y)
        return float(-0.5 * (n * (_LOG_2PI + math.log(self.sigma2)) + r @ r / self.sigma2))

    def log_prior(self, state: State) -> float:
        return float(sum(_log_normal(float(state[k]), self.mu[k], self.tau2[k]) for k in range(3)))

    # closed forms

    def posterior(self):
        """Mean and covariance of theta | y."""
        prec = np.diag(1.0 / self.tau2) + self._xtx / self.sigma2
        cov = np.linalg.inv(prec)
        mean = cov @ (self.mu / self.tau2 + self._xty / self.sigma2)
        return mean, cov

    def log_posterior(self, state: State) -> float:
        mean, cov = self.posterior()
        return float(multivariate_normal(mean, cov).logpdf(np.asarray(state, dtype=float)))

    def log_marginal_likelihood(self) -> float:
        cov = self.sigma2 * np.eye(len(self.y)) + self.X @ np.diag(self.tau2) @ self.X.T
        return float(multivariate_normal(self.X @ self.mu, cov).logpdf(self.y))


def make_toy(
    n_obs: int = 30,
    seed: int = 0,
    sigma: float = 1.0,
    correlation: float = 0.3,
    orthogonal: bool = False,
    theta: Optional[np.ndarray] = None,
) -> LinearGaussianToy:
    """Simulated toy instance; ``orthogonal=True`` makes the three blocks a posteriori independent."""
    rng = np.random.default_rng(seed)
    if orthogonal:
        q, _ = np.linalg.qr(rng.standard_normal((n_obs, 3)))
        X = q * math.sqrt(n_obs)
    else:
        cov = (1 - correlation) * np.eye(3) + correlation * np.ones((3, 3))
        X = rng.multivariate_normal(np.zeros(3), cov, size=n_obs)
    theta = np.array([0.5, -1.0, 1.5]) if theta is None else np.asarray(theta, dtype=float)
    y = X @ theta + sigma * rng.standard_normal(n_obs)
    return LinearGaussianToy(X, y, sigma, prior_mean=np.zeros(3), prior_sd=np.full(3, 2.0))
