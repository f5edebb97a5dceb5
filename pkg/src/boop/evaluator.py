"""Early-stopping evaluation of a noisy, precision-controllable objective.

The estimator is grown in batches. At every checkpoint the in-progress
estimate joins the surrogate's data as one extra heteroscedastic
observation, and the evaluation stops once the probability that f(x)
beats the incumbent drops below ``alpha`` (or the draw budget runs out).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Tuple

import numpy as np

from .acquisition import prob_improvement
from .gp import GpModel


class PrecisionEstimator(Protocol):
    """Anything whose precision grows with the number of simulation draws."""

    def extend(self, n: int, rng: np.random.Generator) -> Tuple[float, float]:
        """Consume ``n`` more draws; return the running estimate and its standard error."""

    def draws_used(self) -> int:
        ...


class EstimatorFailure(RuntimeError):
    """The estimator broke down mid-evaluation."""

    def __init__(self, message: str, draws_used: int, checkpoints: List[Tuple[int, float, float]]):
        super().__init__(f"{message} (after {draws_used} draws)")
        self.draws_used = draws_used
        self.checkpoints = checkpoints


@dataclass(frozen=True)
class EarlyStoppingConfig:
    alpha: float = 0.001
    g_min: int = 3000
    batch: int = 200
    g_max: int = 10000

    def __post_init__(self):
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if self.g_min < 1 or self.batch < 1:
            raise ValueError("g_min and batch must be positive")
        if self.g_max < self.g_min:
            raise ValueError("g_max must be at least g_min")


@dataclass(frozen=True)
class EvaluationOutcome:
    x: np.ndarray
    f_hat: float
    se: float
    g_used: int
    stopped_early: bool
    pi_at_stop: float
    checkpoints: Tuple[Tuple[int, float, float, float], ...] = field(default=(), compare=False)


def improvement_probability(m: float, s: float, f_max: float) -> float:
    """PI with the zero-variance limit made explicit."""
    if s > 0:
        return float(prob_improvement(m, s, f_max))
    return 1.0 if m > f_max else 0.0


def checkpoint(surrogate: GpModel, x, f_hat: float, se: float, f_max: float) -> Tuple[float, float, float]:
    """Posterior (mean, sd, PI) at ``x`` after adding the running estimate.

    The surrogate itself is left untouched.
    """
    provisional = surrogate.with_observation(x, f_hat, se * se)
    m, s = provisional.posterior(x)
    return m, s, improvement_probability(m, s, f_max)


def _extend(estimator: PrecisionEstimator, n: int, rng, log) -> Tuple[float, float]:
    try:
        f_hat, se = estimator.extend(n, rng)
    except EstimatorFailure:
        raise
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise EstimatorFailure(str(exc), estimator.draws_used(), log) from exc
    if not (math.isfinite(f_hat) and math.isfinite(se)) or se < 0:
        raise EstimatorFailure(f"estimator returned f_hat={f_hat}, se={se}", estimator.draws_used(), log)
    return float(f_hat), float(se)


def evaluate_with_early_stopping(
    estimator: PrecisionEstimator,
    x,
    surrogate: GpModel,
    f_max: float,
    cfg: EarlyStoppingConfig,
    rng: np.random.Generator,
) -> EvaluationOutcome:
    """Run ``estimator`` at ``x`` until PI < alpha or ``cfg.g_max`` draws.

    ``x`` is in the surrogate's input coordinates.
    """
    x = np.asarray(x, dtype=float).ravel()
    log: List[Tuple[int, float, float, float]] = []
    f_hat, se = _extend(estimator, cfg.g_min, rng, log)
    while True:
        g = estimator.draws_used()
        _, _, pi = checkpoint(surrogate, x, f_hat, se, f_max)
        log.append((g, f_hat, se, pi))
        if pi < cfg.alpha or g >= cfg.g_max:
            break
        f_hat, se = _extend(estimator, min(cfg.batch, cfg.g_max - g), rng, log)
    return EvaluationOutcome(x, f_hat, se, g, pi < cfg.alpha, pi, tuple(log))


def evaluate_full(
    estimator: PrecisionEstimator,
    x,
    g_max: int,
    rng: np.random.Generator,
    surrogate: Optional[GpModel] = None,
    f_max: Optional[float] = None,
) -> EvaluationOutcome:
    """Spend the whole budget in one go (initial design and the plain-EI baseline)."""
    x = np.asarray(x, dtype=float).ravel()
    f_hat, se = _extend(estimator, g_max, rng, [])
    g = estimator.draws_used()
    pi = 1.0
    if surrogate is not None and f_max is not None and len(surrogate):
        _, _, pi = checkpoint(surrogate, x, f_hat, se, f_max)
    return EvaluationOutcome(x, f_hat, se, g, False, pi, ((g, f_hat, se, pi),))
