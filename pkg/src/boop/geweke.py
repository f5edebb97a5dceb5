"""Joint-distribution ("getting it right") check for the steady-state BVAR Gibbs sampler.

Two simulators of p(theta, y) are compared on a handful of test functions:

* marginal-conditional: theta ~ prior, then y ~ p(y | theta);
* successive-conditional: alternate y ~ p(y | theta) and one Gibbs sweep.

If the sweep leaves the posterior invariant both produce the same joint
law, so the z-scores of the differences in means should look standard
normal. Data are simulated with the first p observations held fixed,
matching the conditional likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from .bvar import BvarData, BvarState, ShrinkageParams, SteadyStatePrior, SteadyStateBvar, simulate_steady_state_var

TestFunction = Callable[[BvarState], float]

DEFAULT_FUNCTIONS: Dict[str, TestFunction] = {
    "pi11": lambda s: float(s.pi[0, 0]),
    "pi11^2": lambda s: float(s.pi[0, 0] ** 2),
    "sigma11": lambda s: float(s.sigma[0, 0]),
    "sigma11^2": lambda s: float(s.sigma[0, 0] ** 2),
    "psi1": lambda s: float(s.psi[0, 0]),
    "psi1^2": lambda s: float(s.psi[0, 0] ** 2),
}


@dataclass(frozen=True)
class GewekeResult:
    z: Dict[str, float]
    marginal_mean: Dict[str, float]
    successive_mean: Dict[str, float]

    def max_abs_z(self) -> float:
        return max(abs(v) for v in self.z.values())


def _batch_means_var(x: np.ndarray, n_batches: int = 50) -> float:
    """Variance of the sample mean of an autocorrelated series via batch means."""
    size = len(x) // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.var(ddof=1) / n_batches)


def geweke_test(
    y_init: np.ndarray,
    T: int,
    prior: SteadyStatePrior,
    lam: ShrinkageParams,
    series_sd,
    n_draws: int,
    rng: np.random.Generator,
    functions: Optional[Dict[str, TestFunction]] = None,
    sweep: Optional[Callable[[SteadyStateBvar, BvarState, np.random.Generator], BvarState]] = None,
) -> GewekeResult:
    """z-scores comparing the two simulators; needs a proper Sigma prior.

    ``sweep`` replaces the Gibbs update, which lets tests confirm the check
    catches a broken sampler.
    """
    functions = DEFAULT_FUNCTIONS if functions is None else functions
    y_init = np.atleast_2d(np.asarray(y_init, dtype=float))
    p, n = y_init.shape
    template = BvarData(np.vstack([y_init, np.zeros((T - p, n))]) + 0.0, p)
    base = SteadyStateBvar(template, prior, lam, series_sd)
    sweep = sweep or (lambda model, state, r: model.sweep(state, r))

    def simulate(state: BvarState) -> BvarData:
        y = simulate_steady_state_var(state.pi, state.sigma, state.psi, T, rng, y_init=y_init)
        return BvarData(y, p)

    names = list(functions)
    mc = np.empty((n_draws, len(names)))
    for i in range(n_draws):
        state = base.sample_prior(rng)
        mc[i] = [functions[k](state) for k in names]

    sc = np.empty((n_draws, len(names)))
    state = base.sample_prior(rng)
    for i in range(n_draws):
        model = SteadyStateBvar(simulate(state), prior, lam, series_sd)
        state = sweep(model, state, rng)
        sc[i] = [functions[k](state) for k in names]

    z = {}
    for j, k in enumerate(names):
        var = mc[:, j].var(ddof=1) / n_draws + _batch_means_var(sc[:, j])
        z[k] = float((mc[:, j].mean() - sc[:, j].mean()) / math.sqrt(var))
    return GewekeResult(
        z,
        {k: float(mc[:, j].mean()) for j, k in enumerate(names)},
        {k: float(sc[:, j].mean()) for j, k in enumerate(names)},
    )
