"""End-to-end acceptance checks; each prints one ACCEPTANCE line."""

import itertools
import json
import math
import time

import mpmath
import numpy as np
import pytest

from boop import cli
from boop.acquisition import expected_improvement
from boop.bench import STRATEGIES, compare_strategies, standard_objective
from boop.bvar import ShrinkageParams, SteadyStatePrior, first_lag_pi_mean, simulate_steady_state_var
from boop.chib import chib_logml, nw_variance
from boop.driver import BoopConfig
from boop.evaluator import EarlyStoppingConfig, evaluate_with_early_stopping
from boop.geweke import geweke_test
from boop.gp import GpModel, KernelFamily, KernelSpec, TrainingSet, gp_posterior
from boop.toy import make_toy

from conftest import record_acceptance

pytestmark = pytest.mark.acceptance


# 1: GP posterior vs partitioned-MVN conditioning in extended precision

def _mp_kernel(family, sigma_f, ell, a, b):
    r = mpmath.sqrt(sum((mpmath.mpf(float(u)) - mpmath.mpf(float(v))) ** 2 for u, v in zip(a, b)))
    var = mpmath.mpf(sigma_f) ** 2
    if family is KernelFamily.SQUARED_EXPONENTIAL:
        return var * mpmath.exp(-(r / ell) ** 2 / 2)
    t = mpmath.sqrt(5) * r / ell
    return var * (1 + t + t * t / 3) * mpmath.exp(-t)


def _mvn_oracle(family, sigma_f, ell, mu, x, y, noise, x_star):
    """Condition the joint Gaussian of (y, f(x*)) on y, all in 40-digit arithmetic."""
    n = len(y)
    pts = list(x) + [x_star]
    joint = mpmath.matrix(n + 1, n + 1)
    for i in range(n + 1):
        for j in range(n + 1):
            joint[i, j] = _mp_kernel(family, sigma_f, ell, pts[i], pts[j])
    for i in range(n):
        joint[i, i] += mpmath.mpf(float(noise[i]))
    s11 = joint[:n, :n]
    s12 = joint[:n, n]
    resid = mpmath.matrix([mpmath.mpf(float(v)) - mpmath.mpf(mu) for v in y])
    w = mpmath.lu_solve(s11, resid)
    u = mpmath.lu_solve(s11, s12)
    mean = mpmath.mpf(mu) + sum(s12[i] * w[i] for i in range(n))
    var = joint[n, n] - sum(s12[i] * u[i] for i in range(n))
    return float(mean), float(mpmath.sqrt(var))


def test_acceptance_1_gp_posterior():
    mpmath.mp.dps = 40
    rng = np.random.default_rng(101)
    cases = []
    for _ in range(200):
        n, d = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        family = KernelFamily.MATERN52 if rng.random() < 0.5 else KernelFamily.SQUARED_EXPONENTIAL
        spec = KernelSpec(family, float(rng.uniform(0.5, 3.0)), float(rng.uniform(0.1, 1.5)))
        mu = float(rng.uniform(5, 15))
        x = rng.random((n, d))
        y = mu + spec.sigma_f * rng.standard_normal(n)
        noise = spec.sigma_f**2 * rng.uniform(1e-3, 0.5, n)
        cases.append((spec, mu, TrainingSet(x, y, noise), rng.random(d)))

    start = time.perf_counter()
    got = [gp_posterior(train, spec, mu, xs) for spec, mu, train, xs in cases]
    elapsed = time.perf_counter() - start

    worst = 0.0
    for (spec, mu, train, xs), post in zip(cases, got):
        m, s = _mvn_oracle(spec.family, spec.sigma_f, spec.ell, mu, train.inputs, train.observations,
                           train.noise_variances, xs)
        worst = max(worst, abs(post.mean - m) / abs(m), abs(post.sd - s) / s)
    passed = worst <= 1e-8 and elapsed < 5
    record_acceptance(1, passed, f"max rel err {worst:.2e} over 200 instances, {elapsed:.3f}s")
    assert passed


# 2: EI vs Monte Carlo

def test_acceptance_2_ei_monte_carlo():
    rng = np.random.default_rng(202)
    draws, chunk = 10**7, 10**6
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        m, s = rng.normal(0, 2), rng.uniform(0.1, 3)
        f_max = m + s * rng.uniform(-2, 2)
        total = total_sq = 0.0
        for _ in range(draws // chunk):
            imp = np.maximum(m + s * rng.standard_normal(chunk) - f_max, 0.0)
            total += imp.sum()
            total_sq += imp @ imp
        mc = total / draws
        mc_se = math.sqrt((total_sq / draws - mc * mc) / (draws - 1))
        worst = max(worst, abs(expected_improvement(m, s, f_max) - mc) / mc_se)
    elapsed = time.perf_counter() - start
    passed = worst <= 3 and elapsed < 30
    record_acceptance(2, passed, f"max |EI - MC| = {worst:.2f} MC se over 50 triples, {elapsed:.1f}s")
    assert passed


# 3: Chib vs the conjugate closed form

def test_acceptance_3_chib_conjugate():
    start = time.perf_counter()
    hits, deltas = 0, []
    for seed in range(20):
        model = cli.conjugate_case(seed, 60)
        est, _ = chib_logml(model, 5000, 5000, 500, np.random.default_rng(np.random.SeedSequence([seed, 3])))
        delta = est.log_ml - model.log_marginal_likelihood()
        deltas.append(delta / est.se)
        hits += abs(delta) <= 3 * est.se
    elapsed = time.perf_counter() - start
    passed = hits >= 18 and elapsed < 120
    record_acceptance(3, passed, f"{hits}/20 seeds within 3 se (max |z| {max(map(abs, deltas)):.2f}), {elapsed:.1f}s")
    assert passed


# 4: near-unbiasedness at short chains

def test_acceptance_4_toy_unbiased():
    model = make_toy(seed=4)
    truth = model.log_marginal_likelihood()
    start = time.perf_counter()
    estimates, ses = [], []
    for rep in range(50):
        est, _ = chib_logml(model, 500, 500, 50, np.random.default_rng(np.random.SeedSequence([rep, 4])))
        estimates.append(est.log_ml)
        ses.append(est.se)
    elapsed = time.perf_counter() - start
    pooled = math.sqrt(sum(s * s for s in ses)) / len(ses)
    gap = abs(np.mean(estimates) - truth)
    passed = gap <= 2 * pooled and elapsed < 60
    record_acceptance(4, passed, f"|mean - truth| = {gap:.4f}, 2 pooled se = {2 * pooled:.4f}, {elapsed:.1f}s")
    assert passed


# 5: Newey-West

def test_acceptance_5_newey_west():
    rng = np.random.default_rng(505)
    h = rng.standard_normal((400, 3)) @ np.array([[1, 0.5, 0], [0, 1, 0.3], [0, 0, 2.0]])
    v0 = nw_variance(h, 0)
    ref = np.cov(h, rowvar=False, bias=True) / len(h)
    err0 = float(np.max(np.abs(v0 - ref)) / np.max(np.abs(ref)))

    scales = np.array([1.0, 2.0, 0.5])
    iid = rng.standard_normal((10_000, 3)) * scales
    v10 = np.diag(nw_variance(iid, 10))
    truth = scales**2 / len(iid)
    rel10 = float(np.max(np.abs(v10 / truth - 1)))
    passed = err0 <= 1e-14 and rel10 <= 0.2
    record_acceptance(5, passed, f"q=0 rel err {err0:.1e}; q=10 iid diagonal max rel dev {rel10:.3f}")
    assert passed


# 6: early-stopping mechanics

class _Scripted:
    """Estimator whose running estimate follows ``path(draws)`` with se = scale / sqrt(draws)."""

    def __init__(self, path, scale):
        self.path, self.scale, self.n = path, scale, 0

    def draws_used(self):
        return self.n

    def extend(self, n, rng):
        self.n += n
        return self.path(self.n, rng), self.scale / math.sqrt(self.n)


ESTIMATORS = {
    "hopeless": lambda: _Scripted(lambda g, r: -1000.0, 10.0),
    "dominant": lambda: _Scripted(lambda g, r: 1000.0, 10.0),
    "noisy": lambda: _Scripted(lambda g, r: r.normal(0.0, 2.0), 50.0),
    "fading": lambda: _Scripted(lambda g, r: 2.0 - g / 500.0, 30.0),
}
ALPHAS = [0.0, 0.001, 0.01, 0.1, 0.3]
BUDGETS = [(100, 50, 400), (3000, 200, 10000), (200, 70, 500), (10, 10, 10), (50, 1, 80)]


def test_acceptance_6_early_stopping_grid():
    spec = KernelSpec(KernelFamily.MATERN52, 2.0, 0.3)
    surrogate = GpModel(TrainingSet(np.array([[0.1], [0.5], [0.9]]), np.array([0.0, 0.5, -0.2]),
                                    np.full(3, 0.01)), spec)
    f_max = 0.5
    failures = []
    start = time.perf_counter()
    cases = list(itertools.product(ALPHAS, ESTIMATORS, BUDGETS))
    for alpha, kind, (g_min, batch, g_max) in cases:
        cfg = EarlyStoppingConfig(alpha, g_min, batch, g_max)
        out = evaluate_with_early_stopping(ESTIMATORS[kind](), [0.3], surrogate, f_max, cfg,
                                           np.random.default_rng(6))
        allowed = {g_max} | {g_min + k * batch for k in range((g_max - g_min) // batch + 1)}
        ok = out.g_used in allowed and out.g_used <= g_max
        if alpha == 0:
            ok &= out.g_used == g_max
        if kind == "hopeless" and alpha > 0:
            ok &= out.g_used == g_min and out.stopped_early
        if not ok:
            failures.append((alpha, kind, g_min, batch, g_max, out.g_used, out.stopped_early))
    elapsed = time.perf_counter() - start
    passed = len(cases) == 100 and not failures and elapsed < 10
    record_acceptance(6, passed, f"{100 - len(failures)}/{len(cases)} cases consistent, {elapsed:.2f}s")
    assert passed, failures


# 7: BOOP vs BO-EI on the bench objective

@pytest.mark.slow
def test_acceptance_7_bench_efficiency():
    obj = standard_objective()
    cfg = BoopConfig(bounds=obj.bounds, iterations=50)
    start = time.perf_counter()
    report = compare_strategies(obj, {name: cfg for name in STRATEGIES}, range(10))
    elapsed = time.perf_counter() - start
    eps = 0.05 * (report.f_opt - report.f_start)
    d_boop, d_ei = report.median_draws_to_90("boop"), report.median_draws_to_90("bo-ei")
    f_boop, f_ei = report.median_final("boop"), report.median_final("bo-ei")
    passed = d_boop <= d_ei and f_boop >= f_ei - eps and elapsed < 300
    record_acceptance(
        7, passed,
        f"median draws to 90%: boop {d_boop:.0f} vs bo-ei {d_ei:.0f}; "
        f"median final true f: boop {f_boop:.2f} vs bo-ei {f_ei:.2f} (eps {eps:.2f}); {elapsed:.0f}s",
    )
    assert passed


# 8: Geweke joint-distribution test

@pytest.mark.slow
def test_acceptance_8_geweke():
    prior = SteadyStatePrior([1.0, -1.0], [0.5, 0.5], first_lag_pi_mean(2, 1, 0.5),
                             sigma_scale=9.0 * np.eye(2), sigma_df=12.0)
    start = time.perf_counter()
    res = geweke_test(np.array([[1.0, -1.0]]), 40, prior, ShrinkageParams(0.2, 0.5, 1.0), [1.0, 1.0],
                      5000, np.random.default_rng(808))
    elapsed = time.perf_counter() - start
    passed = res.max_abs_z() < 4 and elapsed < 120
    zs = ", ".join(f"{k} {v:+.2f}" for k, v in res.z.items())
    record_acceptance(8, passed, f"max |z| {res.max_abs_z():.2f} ({zs}), {elapsed:.1f}s")
    assert passed


# 9 and 10: CLI formats, direction check and determinism

def _write_data(path, T=80, seed=5):
    y = simulate_steady_state_var(np.array([[0.9, 0.2], [-0.1, 0.7]]), np.array([[1.0, 0.3], [0.3, 0.6]]),
                                  np.array([2.0, 1.0]), T, np.random.default_rng(seed))
    path.write_text("date,gdp,infl\n" + "".join(f"{i},{float(a)!r},{float(b)!r}\n" for i, (a, b) in enumerate(y)))


CONFIG = """\
seed: 3
model: {p: 1}
optimizer: {g_min: 600, burn: 200, batch: 200, g_max: 1500, iterations: 10}
grid: {axes: [[0, 1, 0.5], [0, 1, 0.5], [0, 2, 1]], draws: 600}
surface: {axes: [[0, 5, 1], [0, 1, 0.25]], fixed_dim: 2, fixed_value: 1.0}
chib_validate: {seeds: [0, 1], draws: 1500, burn: 100}
benchmark: {seeds: [0, 1], iterations: 6}
data:
  files:
    - {path: data.csv, columns: {gdp: none, infl: none}}
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    _write_data(root / "data.csv")
    (root / "cfg.yaml").write_text(CONFIG)
    return root


@pytest.mark.slow
def test_acceptance_9_formats_and_direction(workspace):
    cfg = str(workspace / "cfg.yaml")
    assert cli.run(["optimize", "--config", cfg, "--out", str(workspace / "opt")]) == 0
    assert cli.run(["grid", "--config", cfg, "--out", str(workspace / "grid")]) == 0
    assert cli.run(["surface-export", "--config", cfg, "--trace", str(workspace / "opt" / "trace.csv"),
                    "--out", str(workspace / "surf")]) == 0

    grid = (workspace / "grid" / "surface.csv").read_text().splitlines()
    grid_ok = grid[0] == "lambda1,lambda2,lambda3,f_hat,se" and len(grid) == 9
    points = [tuple(float(v) for v in line.split(",")[:3]) for line in grid[1:]]
    grid_ok &= sorted(points) == sorted(itertools.product([0.5, 1.0], [0.5, 1.0], [1.0, 2.0]))

    surf = (workspace / "surf" / "surface.csv").read_text().splitlines()
    surf_ok = surf[0] == "lambda1,lambda2,lambda3,mean,sd" and len(surf) == 1 + 5 * 4
    surf_ok &= all(line.split(",")[2] == "1" and float(line.split(",")[4]) >= 0 for line in surf[1:])

    summary = json.loads((workspace / "opt" / "summary.json").read_text())
    gain = summary["best_f_hat"] - summary["standard_log_ml"]
    passed = grid_ok and surf_ok and gain > 0
    record_acceptance(
        9, passed,
        f"grid {len(grid) - 1} rows, surface {len(surf) - 1} rows; optimized log ML {summary['best_f_hat']:.2f} "
        f"vs standard {summary['standard_log_ml']:.2f}",
    )
    assert passed


COMMANDS = {
    "optimize": ["optimize"],
    "optimize-bo-ei": ["optimize", "--strategy", "bo-ei"],
    "optimize-bench": ["optimize", "--objective", "bench", "--iterations", "4"],
    "grid": ["grid"],
    "benchmark": ["benchmark"],
    "chib-validate": ["chib-validate"],
}


@pytest.mark.slow
def test_acceptance_10_determinism(workspace):
    cfg = str(workspace / "cfg.yaml")
    mismatched = []
    runs = dict(COMMANDS)
    for name, argv in runs.items():
        first = workspace / "det" / name / "a"
        assert cli.run(argv + ["--config", cfg, "--out", str(first)]) == 0
    runs["surface-export"] = ["surface-export", "--trace", str(workspace / "det" / "optimize" / "a" / "trace.csv")]
    assert cli.run(runs["surface-export"] + ["--config", cfg, "--out", str(workspace / "det" / "surface-export" / "a")]) == 0
    for name in runs:
        first = workspace / "det" / name / "a"
        manifest = json.loads((first / "manifest.json").read_text())
        second = workspace / "det" / name / "b"
        assert cli.run([manifest["command"], "--config", str(first / "manifest.json"), "--out", str(second)]) == 0
        for fname in manifest["outputs"] + ["manifest.json"]:
            if (first / fname).read_bytes() != (second / fname).read_bytes():
                mismatched.append(f"{name}/{fname}")
    passed = not mismatched
    record_acceptance(10, passed, f"{len(runs)} commands rerun from manifests, mismatched files: {mismatched or 'none'}")
    assert passed
