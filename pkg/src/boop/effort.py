"""Prediction of the MCMC effort (draws until the early-stopping rule fires).

A GP with a homoscedastic nugget is fitted to log G over covariates
z = (x, d, s, u), where d = m(x) - f_max, s = sd(x) and u = d / s come from
the objective surrogate at the time x was chosen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .gp import GpModel, GpPosteriorPoint, HyperBounds, KernelFamily, TrainingSet, gp_fit_hyperparams

U_CAP = 50.0
MIN_RECORDS = 3


class EffortColdStart(RuntimeError):
    """Too few records to fit the effort model; callers fall back to plain EI."""


@dataclass(frozen=True)
class EffortCovariates:
    x: np.ndarray
    d: float
    s: float
    u: float

    def vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.x, dtype=float).ravel(), [self.d, self.s, self.u]])


def standardized_gap(d, s):
    """u = d / s, with |u| capped at U_CAP (and sign(d) * U_CAP where s == 0)."""
    d = np.asarray(d, dtype=float)
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(s > 0, d / np.where(s > 0, s, 1.0), np.sign(d) * U_CAP)
    return np.clip(u, -U_CAP, U_CAP)


def build_covariates(x, surrogate_posterior: GpPosteriorPoint, f_max: float) -> EffortCovariates:
    if not math.isfinite(f_max):
        raise ValueError("f_max must be finite")
    d = float(surrogate_posterior.mean - f_max)
    s = float(surrogate_posterior.sd)
    return EffortCovariates(np.asarray(x, dtype=float).ravel(), d, s, float(standardized_gap(d, s)))


def covariate_matrix(x: np.ndarray, mean: np.ndarray, sd: np.ndarray, f_max: float) -> np.ndarray:
    """Row-wise covariates for a batch of candidates."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = np.asarray(mean, dtype=float) - f_max
    sd = np.asarray(sd, dtype=float)
    return np.column_stack([x, d, sd, standardized_gap(d, sd)])


@dataclass(frozen=True)
class EffortRecord:
    z: np.ndarray
    log_g: float

    def __post_init__(self):
        z = np.array(self.z, dtype=float).ravel()
        if not np.all(np.isfinite(z)):
            raise ValueError("effort covariates must be finite")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)


class EffortModel:
    """Fitted GP on standardized covariates; predicts the median draw count."""

    def __init__(self, gp: GpModel, z_mean: np.ndarray, z_scale: np.ndarray, g_min: float, g_max: float):
        self.gp = gp
        self.z_mean = z_mean
        self.z_scale = z_scale
        self.g_min = float(g_min)
        self.g_max = float(g_max)

    @property
    def nugget(self) -> float:
        return self.gp.nugget

    def log_mean(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        mean, _ = self.gp.predict((z - self.z_mean) / self.z_scale)
        return mean

    def predict(self, z) -> np.ndarray:
        # exp of the posterior mean of log G: the log-normal median, no variance correction
        return np.clip(np.exp(self.log_mean(z)), self.g_min, self.g_max)


def effort_fit(
    records: Sequence[EffortRecord],
    g_min: float,
    g_max: float,
    seed: int = 0,
    bounds: HyperBounds | None = None,
) -> EffortModel:
    if len(records) < MIN_RECORDS:
        raise EffortColdStart(f"effort model needs {MIN_RECORDS} records, have {len(records)}")
    z = np.vstack([r.z for r in records])
    log_g = np.array([r.log_g for r in records])
    z_mean = z.mean(axis=0)
    z_scale = z.std(axis=0)
    z_scale[z_scale == 0] = 1.0
    zs = (z - z_mean) / z_scale
    train = TrainingSet(zs, log_g, np.zeros(len(log_g)))
    if bounds is None:
        spread = max(float(np.std(log_g)), 0.05)
        bounds = HyperBounds(
            sigma_f=(1e-2 * spread, 10.0 * spread),
            ell=(0.1, 50.0),
            nugget=(1e-8, max(spread**2, 1e-4)),
        )
    fit = gp_fit_hyperparams(train, KernelFamily.MATERN52, bounds, prior_mean=float(log_g.mean()), seed=seed)
    gp = GpModel(train, fit.spec, float(log_g.mean()), fit.nugget)
    return EffortModel(gp, z_mean, z_scale, g_min, g_max)


def effort_predict(model: EffortModel, z) -> float:
    if isinstance(z, EffortCovariates):
        z = z.vector()
    return float(model.predict(np.asarray(z, dtype=float).reshape(1, -1))[0])
