"""Outer optimization loops: BOOP, plain BO-EI, and exhaustive grid search.

The surrogate works on the unit cube; the search box given in the
configuration is mapped onto it. Every random choice is seeded from
``(seed, iteration)`` so a rerun with the same seed reproduces the trace
exactly.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .acquisition import AcquisitionContext, log_boop_acquisition, log_expected_improvement, optimize_acquisition
from .effort import EffortColdStart, EffortRecord, covariate_matrix, effort_fit
from .evaluator import (
    EarlyStoppingConfig,
    EstimatorFailure,
    EvaluationOutcome,
    PrecisionEstimator,
    evaluate_full,
    evaluate_with_early_stopping,
)
from .gp import GpModel, GpNumericalError, KernelFamily, TrainingSet, fit_gp

logger = logging.getLogger(__name__)

ObjectiveFactory = Callable[[np.ndarray], PrecisionEstimator]

FLAG_INIT = "init"
FLAG_ACQ = "acq"
FLAG_RETRY = "retry"
FLAG_FAILED = "failed"


def fmt(v) -> str:
    """Float formatting used by every output table (17 significant digits)."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


@dataclass(frozen=True)
class BoopConfig:
    bounds: Tuple[Tuple[float, float], ...]
    alpha: float = 0.001
    g_min: int = 3000
    burn: int = 2500
    batch: int = 200
    g_max: int = 10000
    iterations: int = 150
    j0: int = 2
    seed: int = 0
    acq_restarts: int = 32
    kernel: KernelFamily = KernelFamily.MATERN52

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not box:
            raise ValueError("bounds must have at least one dimension")
        for lo, hi in box:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"invalid bound ({lo}, {hi})")
        object.__setattr__(self, "bounds", box)
        object.__setattr__(self, "kernel", KernelFamily(self.kernel))
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.j0 < 2:
            raise ValueError("j0 must be at least 2")
        if self.iterations < self.j0:
            raise ValueError("iterations (total evaluations) must be at least j0")
        if not 0 <= self.burn < self.g_min:
            raise ValueError("burn must be smaller than g_min")
        EarlyStoppingConfig(self.alpha, self.g_min, self.batch, self.g_max)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def stopping(self) -> EarlyStoppingConfig:
        return EarlyStoppingConfig(self.alpha, self.g_min, self.batch, self.g_max)

    def to_unit(self, x) -> np.ndarray:
        box = np.asarray(self.bounds)
        return (np.asarray(x, dtype=float) - box[:, 0]) / (box[:, 1] - box[:, 0])

    def from_unit(self, u) -> np.ndarray:
        box = np.asarray(self.bounds)
        return box[:, 0] + np.asarray(u, dtype=float) * (box[:, 1] - box[:, 0])


@dataclass(frozen=True)
class EvaluationRecord:
    iteration: int
    x: np.ndarray
    f_hat: float
    se: float
    g_used: int
    stopped_early: bool
    f_max: float
    cum_draws: int
    flag: str = FLAG_ACQ
    predicted_g: float = math.nan

    @property
    def ok(self) -> bool:
        return self.flag != FLAG_FAILED


@dataclass
class OptimizationTrace:
    dim: int
    records: List[EvaluationRecord] = field(default_factory=list)

    @property
    def total_draws(self) -> int:
        return sum(r.g_used for r in self.records)

    @property
    def incumbent_path(self) -> List[Tuple[int, float]]:
        return [(r.iteration, r.f_max) for r in self.records if math.isfinite(r.f_max)]

    @property
    def f_max(self) -> float:
        return self.records[-1].f_max if self.records else -math.inf

    def best(self) -> EvaluationRecord:
        good = [r for r in self.records if r.ok]
        if not good:
            raise RuntimeError("no successful evaluation in the trace")
        # first occurrence wins ties
        return max(good, key=lambda r: (r.f_hat, -r.iteration))

    def header(self) -> List[str]:
        xs = [f"x{i + 1}" for i in range(self.dim)]
        return ["iter", *xs, "f_hat", "se", "g_used", "stopped_early", "f_max", "cum_draws", "flag"]

    def write_csv(self, out: TextIO) -> None:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(self.header())
        for r in self.records:
            w.writerow(
                [r.iteration, *(fmt(v) for v in r.x), fmt(r.f_hat), fmt(r.se), r.g_used,
                 fmt(r.stopped_early), fmt(r.f_max), r.cum_draws, r.flag]
            )

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, src: TextIO) -> "OptimizationTrace":
        rows = list(csv.reader(src))
        if not rows:
            raise ValueError("empty trace file")
        head = rows[0]
        dim = sum(1 for h in head if h.startswith("x") and h[1:].isdigit())
        trace = cls(dim)
        for row in rows[1:]:
            rec = dict(zip(head, row))
            trace.records.append(
                EvaluationRecord(
                    int(rec["iter"]),
                    np.array([float(rec[f"x{i + 1}"]) for i in range(dim)]),
                    float(rec["f_hat"]),
                    float(rec["se"]),
                    int(rec["g_used"]),
                    rec["stopped_early"] == "1",
                    float(rec["f_max"]),
                    int(rec["cum_draws"]),
                    rec.get("flag", FLAG_ACQ),
                )
            )
        return trace


def incumbent_update(trace: OptimizationTrace, outcome: EvaluationOutcome) -> float:
    """New f_max after ``outcome``: the largest point estimate seen so far.

    Early-stopped evaluations only move the incumbent when their estimate
    beats it, which is the same rule applied to every evaluation.
    """
    f_max = trace.f_max
    if not math.isfinite(outcome.f_hat):
        return f_max
    return max(f_max, outcome.f_hat)


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


class _Loop:
    """Shared state of one BOOP or BO-EI run."""

    def __init__(self, factory: ObjectiveFactory, cfg: BoopConfig, early_stopping: bool, seed: int):
        self.factory = factory
        self.cfg = cfg
        self.early_stopping = early_stopping
        self.seed = seed
        self.trace = OptimizationTrace(cfg.dim)
        self.units: List[np.ndarray] = []
        self.values: List[float] = []
        self.variances: List[float] = []
        self.effort: List[EffortRecord] = []

    def training_set(self) -> TrainingSet:
        return TrainingSet(np.array(self.units), np.array(self.values), np.array(self.variances))

    def incumbent_unit(self) -> Optional[np.ndarray]:
        if not self.values:
            return None
        return self.units[int(np.argmax(self.values))]

    def _effort_predictor(self, f_max: float, j: int):
        if not self.early_stopping:
            return None
        try:
            model = effort_fit(self.effort, self.cfg.g_min, self.cfg.g_max, seed=j)
        except EffortColdStart:
            return None
        except (GpNumericalError, np.linalg.LinAlgError, ValueError) as exc:
            logger.warning("effort model fit failed at iteration %d (%s); using EI / g_min", j, exc)
            return None
        return lambda x, m, s: model.predict(covariate_matrix(x, m, s, f_max))

    def propose(self, j: int):
        """(unit x, surrogate, f_max, covariates, predicted G) for iteration j."""
        cfg = self.cfg
        surrogate = fit_gp(self.training_set(), cfg.kernel, seed=j)
        f_max = float(max(self.values))
        predictor = self._effort_predictor(f_max, j)
        ctx = AcquisitionContext(f_max, surrogate, predictor, cfg.g_min, cfg.g_max)
        if self.early_stopping:
            acq = lambda u: log_boop_acquisition(u, ctx)  # noqa: E731
        else:
            acq = lambda u: log_expected_improvement(*surrogate.predict(u), f_max)  # noqa: E731
        unit_box = [(0.0, 1.0)] * cfg.dim
        u = optimize_acquisition(
            acq, unit_box, cfg.acq_restarts, _rng(self.seed, j, 1), extra_starts=[self.incumbent_unit()]
        )
        m, s = surrogate.predict(u[None, :])
        z = covariate_matrix(u[None, :], m, s, f_max)[0]
        g_hat = float(predictor(u[None, :], m, s)[0]) if predictor is not None else math.nan
        return u, surrogate, f_max, z, g_hat

    def evaluate(self, j: int, u: np.ndarray, surrogate: Optional[GpModel], f_max: float, flag: str, z, g_hat):
        cfg = self.cfg
        rng = _rng(self.seed, j)
        x = cfg.from_unit(u)
        estimator = self.factory(x)
        try:
            if self.early_stopping and surrogate is not None:
                out = evaluate_with_early_stopping(estimator, u, surrogate, f_max, cfg.stopping, rng)
            else:
                out = evaluate_full(estimator, u, cfg.g_max, rng)
        except EstimatorFailure as exc:
            logger.warning("evaluation failed at x=%s: %s", x, exc)
            prev = self.trace.records[-1].cum_draws if self.trace.records else 0
            self.trace.records.append(
                EvaluationRecord(j, x, math.nan, math.nan, exc.draws_used, False, self.trace.f_max,
                                 prev + exc.draws_used, FLAG_FAILED, g_hat)
            )
            return
        new_f_max = incumbent_update(self.trace, out)
        prev = self.trace.records[-1].cum_draws if self.trace.records else 0
        self.trace.records.append(
            EvaluationRecord(j, x, out.f_hat, out.se, out.g_used, out.stopped_early, new_f_max,
                             prev + out.g_used, flag, g_hat)
        )
        self.units.append(np.asarray(u, dtype=float))
        self.values.append(out.f_hat)
        self.variances.append(out.se**2)
        if z is not None and self.early_stopping and surrogate is not None:
            self.effort.append(EffortRecord(z, math.log(out.g_used)))

    def run(self) -> OptimizationTrace:
        cfg = self.cfg
        for j in range(cfg.iterations):
            if j < cfg.j0 or len(self.values) < 1:
                u = _rng(self.seed, j, 2).random(cfg.dim)
                self.evaluate(j, u, None, math.nan, FLAG_INIT, None, math.nan)
                continue
            try:
                u, surrogate, f_max, z, g_hat = self.propose(j)
            except (GpNumericalError, np.linalg.LinAlgError, ValueError) as exc:
                logger.warning("proposal failed at iteration %d (%s); evaluating a random point", j, exc)
                u = _rng(self.seed, j, 2).random(cfg.dim)
                self.evaluate(j, u, None, math.nan, FLAG_RETRY, None, math.nan)
                continue
            self.evaluate(j, u, surrogate, f_max, FLAG_ACQ, z, g_hat)
        return self.trace


def _seed(cfg: BoopConfig, rng: Optional[np.random.Generator]) -> int:
    return cfg.seed if rng is None else int(rng.integers(2**62))


def _result(trace: OptimizationTrace):
    best = trace.best()
    return best.x, best.f_hat, trace


def boop_optimize(factory: ObjectiveFactory, cfg: BoopConfig, rng: Optional[np.random.Generator] = None):
    """Precision-aware BO: maximize EI per predicted draw, evaluate with early stopping.

    ``factory(x)`` must return a fresh estimator for the point ``x``.
    Returns (best x, best estimate, trace).
    """
    return _result(_Loop(factory, cfg, True, _seed(cfg, rng)).run())


def bo_ei_optimize(factory: ObjectiveFactory, cfg: BoopConfig, rng: Optional[np.random.Generator] = None):
    """Plain EI baseline; every evaluation spends the full ``g_max`` draws."""
    return _result(_Loop(factory, cfg, False, _seed(cfg, rng)).run())


# grid search


def grid_axis(lo: float, hi: float, step: float) -> np.ndarray:
    """lo + k * step for k = 1, 2, ... while <= hi (the lower end is an open bound)."""
    if step <= 0 or hi <= lo:
        raise ValueError("grid axis needs step > 0 and hi > lo")
    count = int(math.floor((hi - lo) / step + 1e-9))
    if count < 1:
        raise ValueError(f"step {step} is wider than the interval ({lo}, {hi}]")
    return lo + step * np.arange(1, count + 1)


@dataclass
class SurfaceTable:
    names: Tuple[str, ...]
    points: np.ndarray
    f_hat: np.ndarray
    se: np.ndarray

    def __len__(self) -> int:
        return len(self.f_hat)

    def argmax(self) -> int:
        finite = np.isfinite(self.f_hat)
        if not np.any(finite):
            raise RuntimeError("no finite grid value")
        return int(np.argmax(np.where(finite, self.f_hat, -np.inf)))

    def write_csv(self, out: TextIO, value_names: Tuple[str, str] = ("f_hat", "se")) -> None:
        w = csv.writer(out, lineterminator="\n")
        w.writerow([*self.names, *value_names])
        for x, f, s in zip(self.points, self.f_hat, self.se):
            w.writerow([*(fmt(v) for v in x), fmt(f), fmt(s)])


def grid_search(
    objective: Callable[[np.ndarray, int], Tuple[float, float]],
    axes: Sequence[np.ndarray],
    names: Optional[Sequence[str]] = None,
) -> SurfaceTable:
    """Evaluate ``objective(x, index)`` on the Cartesian product of ``axes``.

    Failures are recorded as NaN rows. ``index`` is the row number, handy
    for seeding.
    """
    if not axes or any(len(a) == 0 for a in axes):
        raise ValueError("grid must be non-empty")
    points = np.array(list(itertools.product(*[np.asarray(a, dtype=float) for a in axes])))
    f = np.full(len(points), math.nan)
    s = np.full(len(points), math.nan)
    for i, x in enumerate(points):
        try:
            f[i], s[i] = objective(x, i)
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            logger.warning("grid point %s failed: %s", x, exc)
    names = tuple(names) if names is not None else tuple(f"x{i + 1}" for i in range(len(axes)))
    return SurfaceTable(names, points, f, s)


def surrogate_from_trace(trace: OptimizationTrace, cfg: BoopConfig, seed: int = 0) -> GpModel:
    """Refit the objective surrogate on every successful record of a trace."""
    good = [r for r in trace.records if r.ok]
    if len(good) < 2:
        raise ValueError("need at least two successful evaluations")
    train = TrainingSet(
        np.array([cfg.to_unit(r.x) for r in good]),
        np.array([r.f_hat for r in good]),
        np.array([r.se**2 for r in good]),
    )
    return fit_gp(train, cfg.kernel, seed=seed)


def surface_from_trace(
    trace: OptimizationTrace,
    cfg: BoopConfig,
    axes: Sequence[np.ndarray],
    fixed: Iterable[Tuple[int, float]] = (),
    names: Optional[Sequence[str]] = None,
    seed: int = 0,
) -> SurfaceTable:
    """Surrogate posterior mean and sd over a grid of the free dimensions.

    ``fixed`` pins the remaining dimensions, e.g. ``[(2, 1.0)]`` for lambda3 = 1.
    """
    fixed = dict(fixed)
    free = [k for k in range(cfg.dim) if k not in fixed]
    if len(free) != len(axes):
        raise ValueError("one axis per free dimension is required")
    gp = surrogate_from_trace(trace, cfg, seed)
    combos = np.array(list(itertools.product(*[np.asarray(a, dtype=float) for a in axes])))
    pts = np.empty((len(combos), cfg.dim))
    for col, k in enumerate(free):
        pts[:, k] = combos[:, col]
    for k, v in fixed.items():
        pts[:, k] = v
    mean, sd = gp.predict(cfg.to_unit(pts))
    names = tuple(names) if names is not None else tuple(f"x{i + 1}" for i in range(cfg.dim))
    return SurfaceTable(names, pts, mean, sd)
