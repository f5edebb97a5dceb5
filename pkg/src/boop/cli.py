"""Command-line entry point.

Commands: optimize, grid, benchmark, chib-validate, surface-export. Each
writes its tables, a ``summary.json`` and a ``manifest.json`` into the
output directory. Passing a manifest back as ``--config`` reruns the same
command with the same resolved settings.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
import scipy
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import __version__
from .bench import compare_strategies, simulated_mcmc_estimator, standard_objective
from .bvar import (
    BvarData,
    BvarNumericalError,
    ConjugateVar,
    ShrinkageParams,
    SteadyStatePrior,
    first_lag_pi_mean,
    marginal_likelihood_estimator,
    minnesota_mniw_prior,
    series_scales,
    simulate_steady_state_var,
)
from .chib import ChibError, GibbsError, chib_logml
from .driver import (
    BoopConfig,
    OptimizationTrace,
    bo_ei_optimize,
    boop_optimize,
    fmt,
    grid_axis,
    grid_search,
    surface_from_trace,
)
from .evaluator import EstimatorFailure
from .gp import GpNumericalError
from .series import DataError, Frequency, Transform, align_series, ingest_csv, monthly_to_quarterly, transform_series
from .toy import make_toy

logger = logging.getLogger("boop")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_DATA = 0, 2, 3, 4
MANIFEST_VERSION = 1
LAMBDA_NAMES = ("lambda1", "lambda2", "lambda3")
STANDARD_LAMBDA = (0.1, 0.5, 1.0)
NUMERICAL_ERRORS = (GpNumericalError, BvarNumericalError, GibbsError, ChibError, EstimatorFailure,
                    np.linalg.LinAlgError, FloatingPointError)


class ConfigError(ValueError):
    pass


# configuration schema


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OptimizerSection(_Strict):
    alpha: float = Field(0.001, gt=0, lt=1)
    g_min: int = Field(3000, ge=1)
    burn: int = Field(2500, ge=0)
    batch: int = Field(200, ge=1)
    g_max: int = Field(10000, ge=1)
    iterations: int = Field(150, ge=2, description="total evaluations, initial design included")
    j0: int = Field(2, ge=2)
    acq_restarts: int = Field(32, ge=1)

    @model_validator(mode="after")
    def _consistent(self):
        if self.g_max < self.g_min:
            raise ValueError("g_max must be at least g_min")
        if self.burn >= self.g_min:
            raise ValueError("burn must be smaller than g_min")
        if self.iterations < self.j0:
            raise ValueError("iterations must be at least j0")
        return self


class BoundsSection(_Strict):
    lambda1: Tuple[float, float] = (0.001, 5.0)
    lambda2: Tuple[float, float] = (0.001, 1.0)
    lambda3: Tuple[float, float] = (0.001, 5.0)

    @model_validator(mode="after")
    def _inside_box(self):
        limits = {"lambda1": 5.0, "lambda2": 1.0, "lambda3": 5.0}
        for name, top in limits.items():
            lo, hi = getattr(self, name)
            if not 0 < lo < hi <= top:
                raise ValueError(f"{name} bounds must satisfy 0 < lo < hi <= {top}")
        return self

    def box(self):
        return (self.lambda1, self.lambda2, self.lambda3)


class DataFile(_Strict):
    path: str
    frequency: Frequency = Frequency.QUARTERLY
    columns: Optional[Dict[str, Transform]] = None
    index_column: Optional[str] = "date"


class DataSection(_Strict):
    files: List[DataFile] = Field(default_factory=list)


class ModelSection(_Strict):
    p: int = Field(4, ge=1)
    psi_mean: Optional[List[float]] = None
    psi_sd: Optional[List[float]] = None
    pi_mean: Optional[List[float]] = None
    own_first_lag: float = 0.0
    scaled_own_lag: bool = False

    @field_validator("psi_sd")
    @classmethod
    def _positive(cls, v):
        if v is not None and any(s <= 0 for s in v):
            raise ValueError("psi_sd entries must be positive")
        return v


class GridSection(_Strict):
    axes: Optional[List[Tuple[float, float, float]]] = None
    draws: Optional[int] = Field(None, ge=2)


class SurfaceSection(_Strict):
    trace: Optional[str] = None
    axes: List[Tuple[float, float, float]] = Field(default_factory=lambda: [(0.0, 5.0, 0.05), (0.0, 1.0, 0.05)])
    fixed_dim: int = 2
    fixed_value: float = 1.0


class BenchmarkSection(_Strict):
    seeds: List[int] = Field(default_factory=lambda: list(range(10)))
    strategies: List[Literal["boop", "bo-ei"]] = Field(default_factory=lambda: ["boop", "bo-ei"])
    iterations: int = Field(50, ge=2)


class ChibValidateSection(_Strict):
    seeds: List[int] = Field(default_factory=lambda: list(range(20)))
    draws: int = Field(5000, ge=10)
    burn: int = Field(500, ge=0)
    T: int = Field(60, ge=10)
    include_toy: bool = True
    include_conjugate: bool = True


class RunConfig(_Strict):
    seed: int = 0
    objective: Literal["bvar", "bench"] = "bvar"
    strategy: Literal["boop", "bo-ei"] = "boop"
    compare_standard: bool = True
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    bounds: BoundsSection = Field(default_factory=BoundsSection)
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    grid: GridSection = Field(default_factory=GridSection)
    surface: SurfaceSection = Field(default_factory=SurfaceSection)
    benchmark: BenchmarkSection = Field(default_factory=BenchmarkSection)
    chib_validate: ChibValidateSection = Field(default_factory=ChibValidateSection)


def _resolve_paths(raw: Dict[str, Any], base: Path) -> None:
    for f in (raw.get("data") or {}).get("files") or []:
        if isinstance(f, dict) and "path" in f:
            f["path"] = str((base / f["path"]).resolve())
    surface = raw.get("surface") or {}
    if surface.get("trace"):
        surface["trace"] = str((base / surface["trace"]).resolve())


def load_config(path: Optional[str]) -> Tuple[Dict[str, Any], Optional[str]]:
    """Raw config mapping (and the command, for manifests) from YAML or a manifest JSON."""
    if path is None:
        return {}, None
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc
    try:
        raw = yaml.safe_load(text)  # YAML is a superset of JSON
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError(f"config {p} must be a mapping")
    if "manifest_version" in raw:
        if "config" not in raw:
            raise ConfigError(f"manifest {p} has no embedded config")
        return dict(raw["config"]), raw.get("command")
    _resolve_paths(raw, p.parent)
    return raw, None


def build_config(args: argparse.Namespace) -> RunConfig:
    raw, _ = load_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.strategy is not None:
        raw["strategy"] = args.strategy
    if getattr(args, "objective", None) is not None:
        raw["objective"] = args.objective
    if args.iterations is not None:
        opt = dict(raw.get("optimizer") or {})
        j0 = int(opt.get("j0", 2))
        opt["iterations"] = args.iterations + j0
        raw["optimizer"] = opt
    if args.data is not None:
        files = list((raw.get("data") or {}).get("files") or [])
        data_path = str(Path(args.data).resolve())
        if len(files) > 1:
            raise ConfigError("--data is ambiguous when the config lists several data files")
        files = [{**(files[0] if files else {}), "path": data_path}]
        raw["data"] = {"files": files}
    if getattr(args, "trace", None) is not None:
        raw["surface"] = {**(raw.get("surface") or {}), "trace": str(Path(args.trace).resolve())}
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration:\n{exc}") from exc


# data and objectives


def load_data(cfg: RunConfig) -> Tuple[np.ndarray, List[str], Dict[str, str]]:
    """Quarterly data matrix, series names and file hashes."""
    if not cfg.data.files:
        raise DataError("no data file given (use --data or data.files in the config)")
    columns, names, hashes = [], [], {}
    for f in cfg.data.files:
        cols = None if f.columns is None else list(f.columns)
        table = ingest_csv(f.path, cols, f.frequency, f.index_column)
        hashes[f.path] = hashlib.sha256(Path(f.path).read_bytes()).hexdigest()
        for name, series in table.items():
            kind = Transform.NONE if f.columns is None else f.columns[name]
            values = series.values
            if f.frequency is Frequency.MONTHLY:
                values = monthly_to_quarterly(values)
            columns.append(transform_series(values, kind))
            names.append(name)
    return align_series(columns), names, hashes


def build_bvar(cfg: RunConfig, y: np.ndarray):
    n = y.shape[1]
    p = cfg.model.p
    try:
        data = BvarData(y, p)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    m = cfg.model
    psi_mean = np.mean(y, axis=0) if m.psi_mean is None else np.asarray(m.psi_mean)
    psi_sd = 2.0 * np.std(y, axis=0) if m.psi_sd is None else np.asarray(m.psi_sd)
    pi_mean = first_lag_pi_mean(n, p, m.own_first_lag) if m.pi_mean is None else np.asarray(m.pi_mean)
    if len(psi_mean) != n or len(psi_sd) != n:
        raise ConfigError(f"psi_mean and psi_sd need {n} entries, one per series")
    if len(pi_mean) != n * n * p:
        raise ConfigError(f"pi_mean needs n*n*p = {n * n * p} entries")
    if np.any(psi_sd <= 0):
        raise DataError("a series is constant; cannot build a default steady-state prior")
    prior = SteadyStatePrior(psi_mean, psi_sd, pi_mean)
    try:
        scales = series_scales(y, p)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    return data, prior, scales


def boop_config(cfg: RunConfig, bounds) -> BoopConfig:
    o = cfg.optimizer
    return BoopConfig(
        bounds=tuple(bounds), alpha=o.alpha, g_min=o.g_min, burn=o.burn, batch=o.batch, g_max=o.g_max,
        iterations=o.iterations, j0=o.j0, seed=cfg.seed, acq_restarts=o.acq_restarts,
    )


class Objective:
    """Estimator factory plus metadata for the configured objective."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.hashes: Dict[str, str] = {}
        if cfg.objective == "bench":
            self.bench = standard_objective()
            self.bounds = self.bench.bounds
            self.names = tuple(f"x{i + 1}" for i in range(len(self.bounds)))
        else:
            y, self.series_names, self.hashes = load_data(cfg)
            self.data, self.prior, self.scales = build_bvar(cfg, y)
            self.bounds = cfg.bounds.box()
            self.names = LAMBDA_NAMES

    def factory(self, x):
        if self.cfg.objective == "bench":
            return simulated_mcmc_estimator(self.bench, x)
        lam = ShrinkageParams(*(float(v) for v in x))
        return marginal_likelihood_estimator(
            self.data, self.prior, lam, self.cfg.optimizer.burn, self.scales
        )

    def evaluate(self, x, draws: int, rng: np.random.Generator) -> Tuple[float, float]:
        return self.factory(np.asarray(x, dtype=float)).extend(draws, rng)


# outputs


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _clean(v):
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else str(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.ndarray):
        return [_clean(a) for a in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_clean(a) for a in v]
    if isinstance(v, dict):
        return {k: _clean(a) for k, a in v.items()}
    return v


def write_manifest(out: Path, command: str, cfg: RunConfig, outputs: List[str], hashes: Dict[str, str]):
    config = cfg.model_dump(mode="json")
    config_text = json.dumps(config, sort_keys=True)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "config": config,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "seed": cfg.seed,
        "strategy": cfg.strategy,
        "monthly_aggregation": "mean",
        "data_sha256": hashes,
        "outputs": sorted(outputs + ["summary.json"]),
        "versions": {
            "boop": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    (out / "manifest.json").write_text(_json(manifest))


def _write_summary(out: Path, summary: Dict[str, Any]) -> None:
    (out / "summary.json").write_text(_json(_clean(summary)))


# commands


def cmd_optimize(cfg: RunConfig, out: Path):
    obj = Objective(cfg)
    bcfg = boop_config(cfg, obj.bounds)
    optimize = boop_optimize if cfg.strategy == "boop" else bo_ei_optimize
    best_x, best_f, trace = optimize(obj.factory, bcfg)
    with (out / "trace.csv").open("w", newline="") as fh:
        trace.write_csv(fh)
    best = trace.best()
    summary = {
        "strategy": cfg.strategy,
        "objective": cfg.objective,
        "names": list(obj.names),
        "best_x": best_x,
        "best_f_hat": best_f,
        "best_se": best.se,
        "best_iteration": best.iteration,
        "evaluations": len(trace.records),
        "total_draws": trace.total_draws,
    }
    if cfg.objective == "bvar" and cfg.compare_standard:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1_000_003]))
        f_std, se_std = obj.evaluate(STANDARD_LAMBDA, cfg.optimizer.g_max, rng)
        summary.update(standard_lambda=list(STANDARD_LAMBDA), standard_log_ml=f_std, standard_se=se_std)
    _write_summary(out, summary)
    return ["trace.csv"], obj.hashes


def _grid_axes(cfg: RunConfig, obj: Objective):
    if cfg.grid.axes is not None:
        spec = cfg.grid.axes
    elif cfg.objective == "bvar":
        spec = [(0.0, 5.0, 0.05), (0.0, 1.0, 0.05), (0.0, 5.0, 0.1)]
    else:
        spec = [(lo, hi, (hi - lo) / 20.0) for lo, hi in obj.bounds]
    if len(spec) != len(obj.bounds):
        raise ConfigError(f"grid.axes needs {len(obj.bounds)} entries")
    try:
        return [grid_axis(lo, hi, step) for lo, hi, step in spec]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_grid(cfg: RunConfig, out: Path):
    obj = Objective(cfg)
    axes = _grid_axes(cfg, obj)
    draws = cfg.grid.draws or cfg.optimizer.g_max

    def evaluate(x, i):
        return obj.evaluate(x, draws, np.random.default_rng(np.random.SeedSequence([cfg.seed, i])))

    table = grid_search(evaluate, axes, obj.names)
    with (out / "surface.csv").open("w", newline="") as fh:
        table.write_csv(fh)
    k = table.argmax()
    _write_summary(out, {
        "names": list(obj.names),
        "points": len(table),
        "failed": int(np.sum(~np.isfinite(table.f_hat))),
        "argmax_x": table.points[k],
        "argmax_f_hat": table.f_hat[k],
        "argmax_se": table.se[k],
        "draws_per_point": draws,
    })
    return ["surface.csv"], obj.hashes


def cmd_benchmark(cfg: RunConfig, out: Path):
    obj = standard_objective()
    base = boop_config(cfg.model_copy(update={
        "optimizer": cfg.optimizer.model_copy(update={"iterations": cfg.benchmark.iterations})
    }), obj.bounds)
    report = compare_strategies(obj, {s: base for s in cfg.benchmark.strategies}, cfg.benchmark.seeds)
    with (out / "benchmark.csv").open("w", newline="") as fh:
        report.write_csv(fh)
    with (out / "curves.csv").open("w", newline="") as fh:
        report.write_curves(fh)
    summary = {"objective": report.objective, "f_opt": report.f_opt, "f_start": report.f_start, "strategies": {}}
    for s in cfg.benchmark.strategies:
        runs = report.by_strategy()[s]
        summary["strategies"][s] = {
            "median_draws_to_90": report.median_draws_to_90(s),
            "median_final_true": report.median_final(s),
            "median_total_draws": float(np.median([r.total_draws for r in runs])),
        }
    _write_summary(out, summary)
    return ["benchmark.csv", "curves.csv"], {}


def conjugate_case(seed: int, T: int):
    """Simulated bivariate VAR(1) with a proper Minnesota MNIW prior."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    pi = np.array([[0.5, 0.1], [0.2, 0.3]])
    sigma = np.array([[1.0, 0.3], [0.3, 0.5]])
    y = simulate_steady_state_var(pi, sigma, np.array([1.0, -0.5]), T + 1, rng)
    data = BvarData(y, 1)
    return ConjugateVar.from_data(data, minnesota_mniw_prior(data, ShrinkageParams(0.3, 1.0, 1.0)))


def cmd_chib_validate(cfg: RunConfig, out: Path):
    cv = cfg.chib_validate
    if cv.burn >= cv.draws:
        raise ConfigError("chib_validate.burn must be smaller than chib_validate.draws")
    rows = []
    cases = []
    if cv.include_toy:
        cases.append(("toy", lambda s: make_toy(seed=s)))
    if cv.include_conjugate:
        cases.append(("conjugate_var", lambda s: conjugate_case(s, cv.T)))
    for name, make in cases:
        for s in cv.seeds:
            model = make(s)
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, s, 11]))
            est, _ = chib_logml(model, cv.draws, cv.draws, cv.burn, rng)
            truth = model.log_marginal_likelihood()
            delta = est.log_ml - truth
            rows.append((name, s, est.log_ml, est.se, truth, delta, abs(delta) <= 3 * est.se))
    with (out / "chib_validate.csv").open("w", newline="") as fh:
        fh.write("case,seed,log_ml,se,truth,delta,within_3se\n")
        for r in rows:
            fh.write(",".join([r[0], str(r[1]), *(fmt(v) for v in r[2:6]), fmt(r[6])]) + "\n")
    summary = {}
    for name, _ in cases:
        hits = [r[6] for r in rows if r[0] == name]
        summary[name] = {"runs": len(hits), "within_3se": int(sum(hits))}
    _write_summary(out, summary)
    return ["chib_validate.csv"], {}


def cmd_surface_export(cfg: RunConfig, out: Path):
    sc = cfg.surface
    if sc.trace is None:
        raise ConfigError("surface-export needs a trace file (--trace or surface.trace)")
    try:
        with open(sc.trace, newline="") as fh:
            trace = OptimizationTrace.read_csv(fh)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read trace {sc.trace}: {exc}") from exc
    if cfg.objective == "bench":
        bounds, names = standard_objective().bounds, ("x1", "x2")
    else:
        bounds, names = cfg.bounds.box(), LAMBDA_NAMES
    if trace.dim != len(bounds):
        raise DataError(f"trace has {trace.dim} inputs but the objective has {len(bounds)}")
    if not 0 <= sc.fixed_dim < len(bounds) or len(sc.axes) != len(bounds) - 1:
        raise ConfigError("surface axes must cover every dimension except fixed_dim")
    try:
        axes = [grid_axis(lo, hi, step) for lo, hi, step in sc.axes]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    bcfg = boop_config(cfg, bounds)
    table = surface_from_trace(trace, bcfg, axes, [(sc.fixed_dim, sc.fixed_value)], names, seed=cfg.seed)
    with (out / "surface.csv").open("w", newline="") as fh:
        table.write_csv(fh, ("mean", "sd"))
    k = table.argmax()
    _write_summary(out, {"names": list(names), "points": len(table), "argmax_x": table.points[k],
                         "argmax_mean": table.f_hat[k], "trace_rows": len(trace.records)})
    trace_hash = hashlib.sha256(Path(sc.trace).read_bytes()).hexdigest()
    return ["surface.csv"], {sc.trace: trace_hash}


COMMANDS = {
    "optimize": cmd_optimize,
    "grid": cmd_grid,
    "benchmark": cmd_benchmark,
    "chib-validate": cmd_chib_validate,
    "surface-export": cmd_surface_export,
}


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="boop", description="Precision-aware Bayesian optimization of MCMC objectives")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="YAML config or a manifest.json from an earlier run")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--strategy", choices=["boop", "bo-ei"])
    ap.add_argument("--out", default="out", help="output directory (default: ./out)")
    ap.add_argument("--data", help="quarterly CSV with one column per series")
    ap.add_argument("--objective", choices=["bvar", "bench"])
    ap.add_argument("--iterations", type=int, help="BO iterations after the initial design")
    ap.add_argument("--trace", help="trace.csv for surface-export")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv: Optional[List[str]] = None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _, manifest_command = load_config(args.config)
        if manifest_command is not None and manifest_command != args.command:
            raise ConfigError(f"manifest was written by '{manifest_command}', not '{args.command}'")
        if args.iterations is not None and args.iterations < 0:
            raise ConfigError("--iterations must be non-negative")
        cfg = build_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        np.seterr(over="ignore", under="ignore")
        outputs, hashes = COMMANDS[args.command](cfg, out)
        write_manifest(out, args.command, cfg, outputs, hashes)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
