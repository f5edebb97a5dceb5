"""Synthetic objectives with simulated MCMC noise, for comparing strategies cheaply.

An evaluation at x runs an AR(1) chain whose stationary mean is the true
function value. The estimate is the running mean and the reported standard
error is the exact asymptotic one, sd * sqrt(iact / G).

The standard bench objective lives on [0, 1]^2::

    f(x) = -3100 + 30 * ridge(x) + 21 * bump(x)
    ridge(x) = exp(-(x1 - 0.7)^2 / (2 * 0.05^2) - (x2 - 0.3)^2 / (2 * 0.35^2))
    bump(x)  = exp(-((x1 - 0.2)^2 + (x2 - 0.8)^2) / (2 * 0.1^2))

The ridge gives the global maximum (about -3070 at (0.7, 0.3)) and is flat
along x2; the bump is a lower local maximum. Draw noise has sd 20 and the
integrated autocorrelation time grows from 1 at the peak to 10 in the
low-lying regions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, TextIO, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

from .driver import BoopConfig, OptimizationTrace, bo_ei_optimize, boop_optimize, fmt


@dataclass(frozen=True)
class SyntheticObjective:
    true_function: Callable[[np.ndarray], float]
    noise_sd_at_unit_G: float
    iact_profile: Callable[[np.ndarray], float]
    bounds: Tuple[Tuple[float, float], ...]
    x_start: Tuple[float, ...]
    name: str = "synthetic"

    def __post_init__(self):
        if self.noise_sd_at_unit_G < 0:
            raise ValueError("noise sd must be non-negative")

    def iact(self, x) -> float:
        v = float(self.iact_profile(np.asarray(x, dtype=float)))
        if not v >= 1:
            raise ValueError(f"IACT must be at least 1, got {v}")
        return v

    def optimum(self, starts: int = 16, seed: int = 0) -> Tuple[np.ndarray, float]:
        """Numerical global maximum over the box (multistart L-BFGS-B)."""
        box = np.asarray(self.bounds)
        rng = np.random.default_rng(seed)
        best_x, best_f = None, -math.inf
        for x0 in box[:, 0] + rng.random((starts, len(box))) * (box[:, 1] - box[:, 0]):
            res = minimize(lambda x: -self.true_function(x), x0, method="L-BFGS-B", bounds=box)
            if -res.fun > best_f:
                best_x, best_f = res.x, -float(res.fun)
        return best_x, best_f

    @property
    def f_start(self) -> float:
        return float(self.true_function(np.asarray(self.x_start)))


class SimulatedMcmcEstimator:
    """Running mean of a stationary AR(1) chain; ``extend`` appends draws."""

    def __init__(self, mean: float, sd: float, iact: float):
        if iact < 1:
            raise ValueError("IACT must be at least 1")
        self.mean = float(mean)
        self.sd = float(sd)
        self.iact = float(iact)
        self.rho = (iact - 1.0) / (iact + 1.0)
        self._n = 0
        self._sum = 0.0
        self._last = 0.0  # deviation from the mean

    def draws_used(self) -> int:
        return self._n

    def extend(self, n: int, rng: np.random.Generator) -> Tuple[float, float]:
        if n < 1:
            raise ValueError("n must be positive")
        eps = rng.standard_normal(n)
        if self.sd == 0:
            dev = np.zeros(n)
        else:
            if self._n == 0:
                # stationary start
                first = self.sd * eps[0]
            else:
                first = self.rho * self._last + self.sd * math.sqrt(1.0 - self.rho**2) * eps[0]
            innov = self.sd * math.sqrt(1.0 - self.rho**2) * eps
            innov[0] = first
            dev = lfilter([1.0], [1.0, -self.rho], innov)
        self._last = float(dev[-1])
        self._sum += float(np.sum(dev))
        self._n += n
        f_hat = self.mean + self._sum / self._n
        return f_hat, self.sd * math.sqrt(self.iact / self._n)


def simulated_mcmc_estimator(obj: SyntheticObjective, x, rng=None) -> SimulatedMcmcEstimator:
    """Estimator for ``obj`` at ``x``; randomness is supplied to ``extend``."""
    x = np.asarray(x, dtype=float)
    return SimulatedMcmcEstimator(obj.true_function(x), obj.noise_sd_at_unit_G, obj.iact(x))


def _ridge(x):
    return math.exp(-((x[0] - 0.7) ** 2) / (2 * 0.05**2) - (x[1] - 0.3) ** 2 / (2 * 0.35**2))


def _bump(x):
    return math.exp(-((x[0] - 0.2) ** 2 + (x[1] - 0.8) ** 2) / (2 * 0.1**2))


def _standard_f(x) -> float:
    x = np.asarray(x, dtype=float)
    return -3100.0 + 30.0 * _ridge(x) + 21.0 * _bump(x)


def _standard_iact(x) -> float:
    level = (_standard_f(x) + 3100.0) / 30.0
    return 1.0 + 9.0 * (1.0 - min(max(level, 0.0), 1.0))


def standard_objective() -> SyntheticObjective:
    return SyntheticObjective(
        _standard_f, 20.0, _standard_iact, ((0.0, 1.0), (0.0, 1.0)), (0.5, 0.5), name="ridge-bump"
    )


def one_dimensional_objective(noise_sd: float = 0.5) -> SyntheticObjective:
    """f(x) = -(x - 0.3)^2 on [0, 1] with iid draw noise."""
    return SyntheticObjective(
        lambda x: -float((np.asarray(x).ravel()[0] - 0.3) ** 2), noise_sd, lambda x: 1.0, ((0.0, 1.0),), (1.0,),
        name="quadratic-1d",
    )


# strategy comparison

STRATEGIES = {"boop": boop_optimize, "bo-ei": bo_ei_optimize}


def incumbent_curve(trace: OptimizationTrace, obj: SyntheticObjective) -> List[Tuple[int, float]]:
    """(cumulative draws, true f at the current incumbent) after each evaluation."""
    out = []
    best_f_hat, best_x = -math.inf, None
    for r in trace.records:
        if r.ok and r.f_hat > best_f_hat:
            best_f_hat, best_x = r.f_hat, r.x
        if best_x is not None:
            out.append((r.cum_draws, float(obj.true_function(best_x))))
    return out


def draws_to_gap(curve: Sequence[Tuple[int, float]], f_start: float, f_opt: float, fraction: float = 0.9) -> float:
    """Cumulative draws when the incumbent first closes ``fraction`` of the gap; inf if never."""
    target = f_start + fraction * (f_opt - f_start)
    for draws, f in curve:
        if f >= target:
            return float(draws)
    return math.inf


@dataclass
class RunSummary:
    strategy: str
    seed: int
    total_draws: int
    draws_to_90: float
    final_true: float
    final_f_hat: float
    curve: List[Tuple[int, float]] = field(repr=False, default_factory=list)


@dataclass
class BenchReport:
    objective: str
    f_opt: float
    f_start: float
    runs: List[RunSummary]

    def by_strategy(self) -> Dict[str, List[RunSummary]]:
        out: Dict[str, List[RunSummary]] = {}
        for r in self.runs:
            out.setdefault(r.strategy, []).append(r)
        return out

    def median_draws_to_90(self, strategy: str) -> float:
        return float(np.median([r.draws_to_90 for r in self.by_strategy()[strategy]]))

    def median_final(self, strategy: str) -> float:
        return float(np.median([r.final_true for r in self.by_strategy()[strategy]]))

    def write_csv(self, out: TextIO) -> None:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["strategy", "seed", "total_draws", "draws_to_90", "final_true", "final_f_hat", "f_opt", "f_start"])
        for r in self.runs:
            w.writerow([r.strategy, r.seed, r.total_draws, fmt(r.draws_to_90), fmt(r.final_true),
                        fmt(r.final_f_hat), fmt(self.f_opt), fmt(self.f_start)])

    def write_curves(self, out: TextIO) -> None:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["strategy", "seed", "cum_draws", "incumbent_true"])
        for r in self.runs:
            for draws, f in r.curve:
                w.writerow([r.strategy, r.seed, draws, fmt(f)])


def compare_strategies(
    obj: SyntheticObjective,
    cfgs: Dict[str, BoopConfig],
    seeds: Sequence[int],
) -> BenchReport:
    """Run every strategy in ``cfgs`` (keys from STRATEGIES) once per seed, paired by seed."""
    if len(cfgs) < 1:
        raise ValueError("need at least one strategy")
    _, f_opt = obj.optimum()
    f_start = obj.f_start
    runs = []
    for name, cfg in cfgs.items():
        optimize = STRATEGIES[name]
        for seed in seeds:
            run_cfg = BoopConfig(**{**cfg.__dict__, "seed": int(seed)})
            _, f_hat, trace = optimize(lambda x: simulated_mcmc_estimator(obj, x), run_cfg)
            curve = incumbent_curve(trace, obj)
            runs.append(
                RunSummary(name, int(seed), trace.total_draws, draws_to_gap(curve, f_start, f_opt),
                           curve[-1][1], f_hat, curve)
            )
    return BenchReport(obj.name, f_opt, f_start, runs)
