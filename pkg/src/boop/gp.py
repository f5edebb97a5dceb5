"""Gaussian process regression with per-point (heteroscedastic) noise.

Inputs are expected to be pre-scaled (the optimization driver maps the search
box onto the unit cube); a single isotropic length scale is used.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from scipy.stats import qmc

logger = logging.getLogger(__name__)

_SQRT5 = math.sqrt(5.0)
_LOG_2PI = math.log(2.0 * math.pi)
_MAX_JITTER_DOUBLINGS = 6
_BAD_OBJECTIVE = 1e25


class GpNumericalError(RuntimeError):
    """Cholesky factorization failed even after the maximum jitter."""

    def __init__(self, message: str, condition: float, jitter: float):
        super().__init__(f"{message} (condition estimate {condition:.3e}, last jitter {jitter:.3e})")
        self.condition = condition
        self.jitter = jitter


class KernelFamily(str, enum.Enum):
    SQUARED_EXPONENTIAL = "squared_exponential"
    MATERN52 = "matern52"


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily
    sigma_f: float
    ell: float

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if not (self.sigma_f > 0 and math.isfinite(self.sigma_f)):
            raise ValueError(f"sigma_f must be positive and finite, got {self.sigma_f}")
        if not (self.ell > 0 and math.isfinite(self.ell)):
            raise ValueError(f"ell must be positive and finite, got {self.ell}")

    def from_distance(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        var = self.sigma_f**2
        if self.family is KernelFamily.SQUARED_EXPONENTIAL:
            return var * np.exp(-0.5 * (r / self.ell) ** 2)
        t = _SQRT5 * r / self.ell
        return var * (1.0 + t + t * t / 3.0) * np.exp(-t)

    def gram(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Covariance matrix between the rows of ``a`` and ``b``."""
        return self.from_distance(cdist(np.atleast_2d(a), np.atleast_2d(b)))

    def dlog_ell(self, r: np.ndarray) -> np.ndarray:
        """Derivative of k(r) with respect to log(ell)."""
        r = np.asarray(r, dtype=float)
        var = self.sigma_f**2
        if self.family is KernelFamily.SQUARED_EXPONENTIAL:
            u = (r / self.ell) ** 2
            return var * u * np.exp(-0.5 * u)
        t = _SQRT5 * r / self.ell
        return var * t * t * (1.0 + t) * np.exp(-t) / 3.0


def kernel_eval(spec: KernelSpec, x, x_prime) -> float:
    """k(x, x') for a single pair of points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x_prime.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x_prime))):
        raise ValueError("kernel inputs must be finite")
    # symmetric by construction: |x - x'| == |x' - x| bitwise
    r = math.sqrt(float(np.sum((x - x_prime) ** 2)))
    return float(spec.from_distance(r))


def _as_matrix(a) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim == 2:
        return arr
    if arr.size == 0:
        return arr.reshape(0, 1)
    # a flat sequence is read as n one-dimensional points
    return arr.reshape(len(arr), -1)


@dataclass(frozen=True)
class TrainingSet:
    """Inputs, noisy observations and their noise variances."""

    inputs: np.ndarray
    observations: np.ndarray
    noise_variances: np.ndarray

    def __post_init__(self):
        x = _as_matrix(self.inputs)
        y = np.array(self.observations, dtype=float).ravel()
        v = np.array(self.noise_variances, dtype=float).ravel()
        if not (len(x) == len(y) == len(v)):
            raise ValueError(f"length mismatch: {len(x)} inputs, {len(y)} observations, {len(v)} variances")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("noise variances must be finite and non-negative")
        if not np.all(np.isfinite(x)):
            raise ValueError("inputs must be finite")
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        for name, arr in (("inputs", x), ("observations", y), ("noise_variances", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls, dim: int) -> "TrainingSet":
        return cls(np.zeros((0, dim)), np.zeros(0), np.zeros(0))

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def with_point(self, x, y: float, noise_variance: float) -> "TrainingSet":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        inputs = x if len(self) == 0 else np.vstack([self.inputs, x])
        return TrainingSet(
            inputs,
            np.append(self.observations, y),
            np.append(self.noise_variances, noise_variance),
        )


class GpPosteriorPoint(NamedTuple):
    mean: float
    sd: float


def stable_cholesky(k: np.ndarray) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``k``, adding diagonal jitter only on failure.

    Jitter starts at 1e-10 * trace(k) / n and doubles up to six times.
    """
    n = len(k)
    try:
        return np.linalg.cholesky(k), 0.0
    except np.linalg.LinAlgError:
        pass
    base = 1e-10 * max(np.trace(k) / max(n, 1), np.finfo(float).tiny)
    jitter = base
    for _ in range(_MAX_JITTER_DOUBLINGS + 1):
        try:
            return np.linalg.cholesky(k + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            jitter *= 2.0
    try:
        cond = float(np.linalg.cond(k))
    except np.linalg.LinAlgError:
        cond = float("inf")
    raise GpNumericalError("covariance matrix not positive definite", cond, jitter / 2.0)


class GpModel:
    """Conditioned GP: kernel, constant prior mean, data and a cached factorization.

    ``prior_mean=None`` centres the process on the mean of the observations.
    ``nugget`` is a homoscedastic variance added on top of the per-point
    noise variances.
    """

    def __init__(
        self,
        train: TrainingSet,
        spec: KernelSpec,
        prior_mean: Optional[float] = None,
        nugget: float = 0.0,
    ):
        if nugget < 0:
            raise ValueError("nugget must be non-negative")
        self.train = train
        self.spec = spec
        self.nugget = float(nugget)
        if prior_mean is None:
            prior_mean = float(np.mean(train.observations)) if len(train) else 0.0
        self.prior_mean = float(prior_mean)
        self.jitter = 0.0
        if len(train):
            k = spec.gram(train.inputs, train.inputs)
            k[np.diag_indices_from(k)] += train.noise_variances + self.nugget
            self._chol, self.jitter = stable_cholesky(k)
            resid = train.observations - self.prior_mean
            self._alpha = solve_triangular(
                self._chol.T, solve_triangular(self._chol, resid, lower=True), lower=False
            )
            self._resid = resid
        else:
            self._chol = np.zeros((0, 0))
            self._alpha = np.zeros(0)
            self._resid = np.zeros(0)

    def __len__(self) -> int:
        return len(self.train)

    def predict(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation of f at each row of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        prior_var = self.spec.sigma_f**2
        if len(self.train) == 0:
            return np.full(len(x), self.prior_mean), np.full(len(x), self.spec.sigma_f)
        ks = self.spec.gram(self.train.inputs, x)
        mean = self.prior_mean + ks.T @ self._alpha
        v = solve_triangular(self._chol, ks, lower=True, check_finite=False)
        var = prior_var - np.sum(v * v, axis=0)
        return mean, np.sqrt(np.clip(var, 0.0, prior_var))

    def posterior(self, x) -> GpPosteriorPoint:
        m, s = self.predict(np.asarray(x, dtype=float).reshape(1, -1))
        return GpPosteriorPoint(float(m[0]), float(s[0]))

    def log_marginal_likelihood(self) -> float:
        n = len(self.train)
        if n == 0:
            return 0.0
        return float(
            -0.5 * self._resid @ self._alpha
            - np.sum(np.log(np.diag(self._chol)))
            - 0.5 * n * _LOG_2PI
        )

    def with_observation(self, x, y: float, noise_variance: float) -> "GpModel":
        """A new model with one more observation; kernel and prior mean are kept."""
        return GpModel(
            self.train.with_point(x, y, noise_variance), self.spec, self.prior_mean, self.nugget
        )


def gp_posterior(train: TrainingSet, spec: KernelSpec, prior_mean: float, x_star) -> GpPosteriorPoint:
    return GpModel(train, spec, prior_mean).posterior(x_star)


def gp_log_marginal_likelihood(train: TrainingSet, spec: KernelSpec, prior_mean: float) -> float:
    return GpModel(train, spec, prior_mean).log_marginal_likelihood()


@dataclass(frozen=True)
class HyperBounds:
    """Box for kernel hyperparameters; ``nugget=None`` keeps the nugget at zero."""

    sigma_f: Tuple[float, float]
    ell: Tuple[float, float]
    nugget: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        boxes = [self.sigma_f, self.ell] + ([self.nugget] if self.nugget is not None else [])
        for lo, hi in boxes:
            if not (0 < lo <= hi):
                raise ValueError(f"hyperparameter bounds must be positive with lo <= hi, got {(lo, hi)}")

    def log_box(self) -> np.ndarray:
        rows = [self.sigma_f, self.ell]
        if self.nugget is not None:
            rows.append(self.nugget)
        return np.log(np.asarray(rows, dtype=float))


@dataclass(frozen=True)
class HyperFit:
    spec: KernelSpec
    nugget: float
    log_ml: float
    converged: bool
    n_evaluations: int = field(default=0, compare=False)


def default_bounds(observations: np.ndarray, fit_nugget: bool = False) -> HyperBounds:
    """Data-scaled bounds for the surrogate on unit-cube inputs."""
    y = np.asarray(observations, dtype=float)
    scale = float(np.std(y)) if len(y) > 1 else 0.0
    if not scale > 0:
        scale = max(1.0, float(np.max(np.abs(y))) * 1e-3) if len(y) else 1.0
    nugget = (1e-8 * scale**2, scale**2) if fit_nugget else None
    return HyperBounds(sigma_f=(1e-2 * scale, 20.0 * scale), ell=(0.02, 10.0), nugget=nugget)


def _log_ml_gradient(model: GpModel, spec: KernelSpec, dist: np.ndarray, nugget: float, fit_nugget: bool):
    """Gradient of the log marginal likelihood in (log sigma_f, log ell[, log nugget])."""
    n = len(dist)
    k_inv = solve_triangular(model._chol.T, solve_triangular(model._chol, np.eye(n), lower=True), lower=False)
    inner = np.outer(model._alpha, model._alpha) - k_inv
    parts = [2.0 * spec.from_distance(dist), spec.dlog_ell(dist)]
    if fit_nugget:
        parts.append(nugget * np.eye(n))
    return np.array([0.5 * float(np.sum(inner * d)) for d in parts])


def gp_fit_hyperparams(
    train: TrainingSet,
    family: KernelFamily,
    bounds: HyperBounds,
    prior_mean: Optional[float] = None,
    n_starts: int = 8,
    seed: int = 0,
) -> HyperFit:
    """Maximize the GP log marginal likelihood over ``bounds`` from a Latin-hypercube multistart.

    The returned hyperparameters are the best ones seen across every
    objective evaluation (starting points included); ties go to the
    earliest evaluation.
    """
    if len(train) < 2:
        raise ValueError("need at least two training points to fit hyperparameters")
    family = KernelFamily(family)
    box = bounds.log_box()
    fit_nugget = bounds.nugget is not None
    best = {"f": math.inf, "theta": None}
    n_evals = 0

    def unpack(theta):
        spec = KernelSpec(family, float(np.exp(theta[0])), float(np.exp(theta[1])))
        nugget = float(np.exp(theta[2])) if fit_nugget else 0.0
        return spec, nugget

    dist = cdist(train.inputs, train.inputs)
    n_par = len(box)

    def objective(theta):
        nonlocal n_evals
        n_evals += 1
        theta = np.clip(theta, box[:, 0], box[:, 1])
        spec, nugget = unpack(theta)
        grad = np.zeros(n_par)
        try:
            model = GpModel(train, spec, prior_mean, nugget)
            val = -model.log_marginal_likelihood()
            grad = -_log_ml_gradient(model, spec, dist, nugget, fit_nugget)
        except GpNumericalError:
            val = _BAD_OBJECTIVE
        if not (math.isfinite(val) and np.all(np.isfinite(grad))):
            val, grad = _BAD_OBJECTIVE, np.zeros(n_par)
        if val < best["f"]:
            best["f"], best["theta"] = val, theta.copy()
        return val, grad

    width = box[:, 1] - box[:, 0]
    if np.all(width == 0):
        objective(box[:, 0])
        spec, nugget = unpack(box[:, 0])
        return HyperFit(spec, nugget, -best["f"], best["f"] < _BAD_OBJECTIVE, n_evals)

    sampler = qmc.LatinHypercube(d=len(box), seed=seed)
    starts = box[:, 0] + sampler.random(n_starts) * width
    converged = False
    for x0 in starts:
        objective(x0)
        res = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=[tuple(b) for b in box])
        converged |= bool(res.success)
    if best["f"] >= _BAD_OBJECTIVE:
        raise GpNumericalError("hyperparameter fit failed at every candidate", float("inf"), 0.0)
    if not converged:
        logger.warning("no multistart run converged; returning best evaluated hyperparameters")
    spec, nugget = unpack(best["theta"])
    return HyperFit(spec, nugget, -best["f"], converged, n_evals)


def fit_gp(
    train: TrainingSet,
    family: KernelFamily = KernelFamily.MATERN52,
    bounds: Optional[HyperBounds] = None,
    fit_nugget: bool = False,
    seed: int = 0,
) -> GpModel:
    """Fit hyperparameters (empirical-mean prior) and return the conditioned model."""
    if bounds is None:
        bounds = default_bounds(train.observations, fit_nugget=fit_nugget)
    prior_mean = float(np.mean(train.observations))
    if len(train) < 2:
        # geometric midpoint of the box; nothing to fit
        sigma_f, ell = (float(np.sqrt(lo * hi)) for lo, hi in (bounds.sigma_f, bounds.ell))
        return GpModel(train, KernelSpec(family, sigma_f, ell), prior_mean)
    fit = gp_fit_hyperparams(train, family, bounds, prior_mean=prior_mean, seed=seed)
    return GpModel(train, fit.spec, prior_mean, fit.nugget)
