"""Chib's marginal-likelihood estimator for three-block Gibbs samplers.

Block roles, in the order the posterior ordinate is factorized::

    p(b0*, b1*, b2* | y) = p(b0* | b1*, b2*, y) p(b1* | b2*, y) p(b2* | y)

* block 0: full conditional evaluated exactly at the reference point;
* block 1: ordinate estimated from a reduced run with block 2 held fixed;
* block 2: ordinate estimated by Rao-Blackwellization over the full run.

Models choose which of their parameters plays which role. The steady-state
BVAR uses (Psi, Sigma, Pi): Pi is fixed in the reduced run.

Standard errors follow the usual Newey-West / delta-method recipe on the
two Rao-Blackwell averages.
"""

from __future__ import annotations

import abc
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

DEFAULT_Q = 10
State = List[Any]


class GibbsError(RuntimeError):
    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class ChibError(RuntimeError):
    def __init__(self, message: str, index: Optional[int] = None):
        where = "" if index is None else f" at draw {index}"
        super().__init__(message + where)
        self.index = index


class ThreeBlockModel(abc.ABC):
    """Full conditionals and densities for a three-block Gibbs sampler."""

    #: order in which blocks are updated within one sweep
    sweep_order: Tuple[int, int, int] = (0, 1, 2)

    @abc.abstractmethod
    def initial_state(self) -> State:
        ...

    @abc.abstractmethod
    def sample_block(self, k: int, state: State, rng: np.random.Generator) -> Any:
        """Draw block ``k`` from its full conditional given the other blocks."""

    @abc.abstractmethod
    def log_conditional(self, k: int, value: Any, state: State) -> float:
        """log p(block k = value | other blocks of ``state``, y)."""

    @abc.abstractmethod
    def log_likelihood(self, state: State) -> float:
        ...

    @abc.abstractmethod
    def log_prior(self, state: State) -> float:
        ...


@dataclass
class DrawStore:
    """Retained Gibbs draws; ``draws[i][k]`` is block k of draw i."""

    draws: List[State] = field(default_factory=list)
    iterations: int = 0

    def __len__(self) -> int:
        return len(self.draws)

    def block(self, k: int) -> np.ndarray:
        return np.array([d[k] for d in self.draws])


class GibbsChain:
    """A resumable Gibbs chain, optionally with one block frozen."""

    def __init__(self, model: ThreeBlockModel, state: Optional[State] = None, fixed: Optional[int] = None):
        self.model = model
        self.state = list(model.initial_state() if state is None else state)
        self.fixed = fixed
        self.iterations = 0

    def sweep(self, rng: np.random.Generator) -> State:
        for k in self.model.sweep_order:
            if k == self.fixed:
                continue
            try:
                self.state[k] = self.model.sample_block(k, self.state, rng)
            except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
                raise GibbsError(f"block {k} sampler failed: {exc}", self.iterations + 1) from exc
        self.iterations += 1
        return list(self.state)

    def run(self, n: int, rng: np.random.Generator, burn: int = 0) -> DrawStore:
        store = DrawStore()
        for i in range(n):
            state = self.sweep(rng)
            if i >= burn:
                store.draws.append(state)
        store.iterations = n
        return store


def run_full_gibbs(model: ThreeBlockModel, g: int, burn: int, rng: np.random.Generator) -> DrawStore:
    if not g > burn >= 0:
        raise ValueError("need g > burn >= 0")
    return GibbsChain(model).run(g, rng, burn)


def run_reduced_gibbs(
    model: ThreeBlockModel,
    fixed_value: Any,
    g: int,
    burn: int,
    rng: np.random.Generator,
    start: Optional[State] = None,
    fixed_block: int = 2,
) -> DrawStore:
    """Gibbs run with ``fixed_block`` held at ``fixed_value`` in every sweep."""
    if not g > burn >= 0:
        raise ValueError("need g > burn >= 0")
    state = list(model.initial_state() if start is None else start)
    state[fixed_block] = fixed_value
    return GibbsChain(model, state, fixed=fixed_block).run(g, rng, burn)


def select_theta_star(draws: DrawStore) -> State:
    """Component-wise posterior mean of the retained draws."""
    if len(draws) == 0:
        raise ValueError("empty draw store")
    return [np.mean(draws.block(k), axis=0) for k in range(3)]


def nw_variance(h: np.ndarray, q: int) -> np.ndarray:
    """Bartlett-weighted long-run covariance of the mean of ``h`` (shape (G, k))."""
    h = np.asarray(h, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    g = len(h)
    if q < 0 or q >= g:
        raise ValueError(f"need 0 <= q < series length, got q={q}, length={g}")
    c = h - h.mean(axis=0)
    omega = c.T @ c / g
    for s in range(1, q + 1):
        omega_s = c[:-s].T @ c[s:] / g
        omega = omega + (1.0 - s / (q + 1.0)) * (omega_s + omega_s.T)
    return omega / g


def _var_aic(h: np.ndarray, q: int, q_max: int) -> float:
    """AIC of a VAR(q) with intercept, fitted on the common sample t > q_max."""
    g, k = h.shape
    y = h[q_max:]
    cols = [np.ones((g - q_max, 1))] + [h[q_max - s : g - s] for s in range(1, q + 1)]
    x = np.hstack(cols)
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    cov = resid.T @ resid / len(y)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise np.linalg.LinAlgError("singular residual covariance")
    return logdet + 2.0 * k * k * q / len(y)


def select_q(h: np.ndarray, q_max: int) -> int:
    """Lag order in [0, q_max] minimizing AIC of a VAR fitted to ``h``.

    Components with no variation are dropped first; a singular fit falls
    back to the conservative default q = 10.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    if q_max <= 0:
        return 0
    scale = h.std(axis=0)
    live = scale > 1e-12 * np.maximum(np.abs(h).max(axis=0), 1e-300)
    if not np.any(live):
        return 0
    z = (h[:, live] - h[:, live].mean(axis=0)) / scale[live]
    if len(z) <= 2 * q_max + 2:
        raise ValueError("series too short for the requested q_max")
    try:
        aics = [_var_aic(z, q, q_max) for q in range(q_max + 1)]
    except np.linalg.LinAlgError:
        warnings.warn("singular VAR design in lag selection; using q=10", RuntimeWarning)
        return min(DEFAULT_Q, len(h) - 1)
    return int(np.argmin(aics))


def delta_method_se(var_h: np.ndarray, h_bar: np.ndarray) -> float:
    """Standard error of log(h1_bar) + log(h2_bar)."""
    h_bar = np.asarray(h_bar, dtype=float).ravel()
    if np.any(h_bar <= 0) or not np.all(np.isfinite(h_bar)):
        raise ValueError("h_bar must be strictly positive")
    grad = 1.0 / h_bar
    return float(math.sqrt(max(float(grad @ np.asarray(var_h) @ grad), 0.0)))


@dataclass(frozen=True)
class ChibEstimate:
    log_ml: float
    se: float
    components: Dict[str, float]
    g1: int
    g2: int
    q: int = 0


@dataclass
class HSeries:
    """Per-draw log ordinates: h1 from the full run, h2 from the reduced run."""

    log_h1: np.ndarray
    log_h2: np.ndarray

    @property
    def h1(self) -> np.ndarray:
        return np.exp(self.log_h1)

    @property
    def h2(self) -> np.ndarray:
        return np.exp(self.log_h2)

    def scaled(self) -> Tuple[np.ndarray, np.ndarray]:
        """(G, 2) array of ordinates divided by their column maxima, and the log offsets.

        The delta-method standard error is invariant to this rescaling.
        """
        n = min(len(self.log_h1), len(self.log_h2))
        logs = np.column_stack([self.log_h1[:n], self.log_h2[:n]])
        offset = logs.max(axis=0)
        return np.exp(logs - offset), offset


def default_q_max(n: int) -> int:
    return int(min(20, max(0, n // 25)))


def standard_error(series: HSeries, q: Optional[int] = None) -> Tuple[float, int]:
    """Newey-West / delta-method standard error of the summed log ordinates."""
    h, _ = series.scaled()
    if len(h) < 2:
        return float("inf"), 0
    if q is None:
        q = select_q(h, default_q_max(len(h)))
    q = min(q, len(h) - 1)
    var_h = nw_variance(h, q)
    return delta_method_se(var_h, h.mean(axis=0)), q


def _log_mean(log_h: np.ndarray) -> float:
    return float(logsumexp(log_h) - math.log(len(log_h)))


def _checked(value: float, what: str, index: Optional[int] = None) -> float:
    if not math.isfinite(value):
        raise ChibError(f"{what} evaluated to {value}", index)
    return float(value)


def _assemble(
    model: ThreeBlockModel, theta_star: State, log_exact: float, series: HSeries, g1: int, g2: int, q: Optional[int]
) -> ChibEstimate:
    log_lik = _checked(model.log_likelihood(theta_star), "log-likelihood at theta*")
    log_prior = _checked(model.log_prior(theta_star), "log-prior at theta*")
    log_b2 = _log_mean(series.log_h1)
    log_b1 = _log_mean(series.log_h2)
    se, q_used = standard_error(series, q)
    components = {
        "log_lik": log_lik,
        "log_prior": log_prior,
        "log_post_block1": log_exact,
        "log_post_block2": log_b1,
        "log_post_block3": log_b2,
    }
    log_ml = log_lik + log_prior - (log_exact + log_b1 + log_b2)
    return ChibEstimate(log_ml, se, components, g1, g2, q_used)


def _ordinates(model: ThreeBlockModel, k: int, value: Any, draws: Sequence[State], start: int = 0) -> np.ndarray:
    out = np.empty(len(draws))
    for i, d in enumerate(draws):
        out[i] = _checked(model.log_conditional(k, value, d), f"block-{k} conditional ordinate", start + i)
    return out


def chib_logml(
    model: ThreeBlockModel,
    g1: int,
    g2: int,
    burn: int,
    rng: np.random.Generator,
    q: Optional[int] = None,
) -> Tuple[ChibEstimate, HSeries]:
    """One-shot Chib estimate from a full run of ``g1`` and a reduced run of ``g2`` iterations.

    ``q=None`` selects the Newey-West lag by AIC.
    """
    full = run_full_gibbs(model, g1, burn, rng)
    theta_star = select_theta_star(full)
    log_exact = _checked(model.log_conditional(0, theta_star[0], theta_star), "block-0 conditional at theta*")
    log_h1 = _ordinates(model, 2, theta_star[2], full.draws)
    reduced = run_reduced_gibbs(model, theta_star[2], g2, burn, rng, start=theta_star)
    log_h2 = _ordinates(model, 1, theta_star[1], reduced.draws)
    series = HSeries(log_h1, log_h2)
    return _assemble(model, theta_star, log_exact, series, g1, g2, q), series


class ChibEstimator:
    """Incremental Chib estimate usable as a precision-controllable objective.

    The first ``extend`` call runs the full chain (burn-in included), fixes
    theta* at the mean of the retained draws and starts the reduced chain
    for the same number of iterations. Later calls advance both chains in
    lockstep; theta* is never revised. ``draws_used`` counts iterations of
    the full chain.
    """

    def __init__(self, model: ThreeBlockModel, burn: int, q: Optional[int] = None):
        if burn < 0:
            raise ValueError("burn must be non-negative")
        self.model = model
        self.burn = burn
        self.q = q
        self.theta_star: Optional[State] = None
        self._full: Optional[GibbsChain] = None
        self._reduced: Optional[GibbsChain] = None
        self._log_h1: List[float] = []
        self._log_h2: List[float] = []
        self._log_exact = 0.0
        self.estimate: Optional[ChibEstimate] = None

    def draws_used(self) -> int:
        return 0 if self._full is None else self._full.iterations

    @property
    def series(self) -> HSeries:
        return HSeries(np.array(self._log_h1), np.array(self._log_h2))

    def _start(self, n: int, rng: np.random.Generator):
        if n <= self.burn + 1:
            raise ValueError(f"first extension ({n}) must exceed burn-in ({self.burn}) by at least 2")
        self._full = GibbsChain(self.model)
        retained = self._full.run(n, rng, self.burn)
        self.theta_star = select_theta_star(retained)
        ts = self.theta_star
        self._log_exact = _checked(self.model.log_conditional(0, ts[0], ts), "block-0 conditional at theta*")
        self._log_h1.extend(_ordinates(self.model, 2, ts[2], retained.draws))
        self._reduced = GibbsChain(self.model, list(ts), fixed=2)
        reduced = self._reduced.run(n, rng, self.burn)
        self._log_h2.extend(_ordinates(self.model, 1, ts[1], reduced.draws))

    def _advance(self, n: int, rng: np.random.Generator):
        ts = self.theta_star
        for _ in range(n):
            d = self._full.sweep(rng)
            self._log_h1.append(
                _checked(self.model.log_conditional(2, ts[2], d), "block-2 conditional ordinate", len(self._log_h1))
            )
        for _ in range(n):
            d = self._reduced.sweep(rng)
            self._log_h2.append(
                _checked(self.model.log_conditional(1, ts[1], d), "block-1 conditional ordinate", len(self._log_h2))
            )

    def extend(self, n: int, rng: np.random.Generator) -> Tuple[float, float]:
        if n < 1:
            raise ValueError("n must be positive")
        if self._full is None:
            self._start(n, rng)
        else:
            self._advance(n, rng)
        self.estimate = _assemble(
            self.model,
            self.theta_star,
            self._log_exact,
            self.series,
            self._full.iterations,
            self._reduced.iterations,
            self.q,
        )
        return self.estimate.log_ml, self.estimate.se
