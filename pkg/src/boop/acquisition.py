"""Improvement-based acquisition functions and their maximization over a box."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erfcx, ndtr

from .gp import GpModel

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT_HALF_PI = math.sqrt(0.5 * math.pi)
_TAIL_Z = -8.0
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("acquisition inputs must be finite")


def prob_improvement(m, s, f_max):
    """P(f > f_max) for f ~ N(m, s^2). Requires s > 0."""
    m, s = np.asarray(m, dtype=float), np.asarray(s, dtype=float)
    _check_finite(m, s, f_max)
    if np.any(s <= 0):
        raise ValueError("prob_improvement needs s > 0; handle the deterministic limit explicitly")
    out = ndtr((m - f_max) / s)
    return float(out) if out.ndim == 0 else out


def log_expected_improvement(m, s, f_max):
    """log EI, accurate far into the lower tail.

    For z = (m - f_max)/s below -8 the closed form cancels badly, so we use
    EI = s * phi(z) * (1 + z * Phi(z)/phi(z)) with the Mills ratio from erfcx.
    Returns -inf where EI is exactly zero (s == 0 and m <= f_max).
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    m, s = np.broadcast_arrays(m, s)
    _check_finite(m, s, f_max)
    if np.any(s < 0):
        raise ValueError("standard deviation must be non-negative")
    out = np.full(m.shape, -np.inf)
    d = m - f_max
    zero_sd = s == 0
    pos = zero_sd & (d > 0)
    out[pos] = np.log(d[pos])
    live = ~zero_sd
    z = np.where(live, d / np.where(live, s, 1.0), 0.0)
    body = live & (z >= _TAIL_Z)
    if np.any(body):
        zb = z[body]
        ei = s[body] * (zb * ndtr(zb) + np.exp(-0.5 * zb * zb - _LOG_SQRT_2PI))
        with np.errstate(divide="ignore"):
            out[body] = np.log(ei)
    tail = live & (z < _TAIL_Z)
    if np.any(tail):
        zt = z[tail]
        log_phi = -0.5 * zt * zt - _LOG_SQRT_2PI
        mills = _SQRT_HALF_PI * erfcx(-zt / math.sqrt(2.0))
        out[tail] = np.log(s[tail]) + log_phi + np.log1p(zt * mills)
    return out


def expected_improvement(m, s, f_max):
    """(m - f_max) Phi(z) + s phi(z) with z = (m - f_max)/s; max(m - f_max, 0) at s = 0."""
    scalar = np.ndim(m) == 0 and np.ndim(s) == 0
    out = np.exp(log_expected_improvement(m, s, f_max))
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class AcquisitionContext:
    """Everything an acquisition needs at one BO iteration.

    ``effort_predictor`` maps candidate points (rows, in surrogate
    coordinates) to predicted draw counts; ``None`` means the effort model
    is not fitted yet.
    """

    f_max: float
    surrogate: GpModel
    effort_predictor: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None
    g_min: float = 1.0
    g_max: float = math.inf

    def __post_init__(self):
        if not math.isfinite(self.f_max):
            raise ValueError("f_max must be finite")
        if len(self.surrogate) < 1:
            raise ValueError("surrogate must be fitted on at least one point")


def _ei_at(x, ctx: AcquisitionContext):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m, s = ctx.surrogate.predict(x)
    return x, m, s, log_expected_improvement(m, s, ctx.f_max)


def predicted_effort(x, m, s, ctx: AcquisitionContext):
    """Clamped effort prediction, or ``None`` while the effort model is cold."""
    if ctx.effort_predictor is None:
        return None
    g = np.asarray(ctx.effort_predictor(x, m, s), dtype=float)
    return np.clip(g, ctx.g_min, ctx.g_max)


def log_boop_acquisition(x, ctx: AcquisitionContext):
    """log(EI(x) / G_hat(x)); EI / G_min while the effort model is cold."""
    x, m, s, log_ei = _ei_at(x, ctx)
    g = predicted_effort(x, m, s, ctx)
    if g is None:
        return log_ei - math.log(ctx.g_min)
    return log_ei - np.log(g)


def boop_acquisition(x, ctx: AcquisitionContext):
    """Expected improvement per predicted MCMC draw."""
    out = np.exp(log_boop_acquisition(x, ctx))
    return float(out[0]) if np.ndim(x) == 1 else out


def eis_acquisition(x, ctx: AcquisitionContext, duration_model: Callable[[np.ndarray], np.ndarray]):
    """Expected improvement per unit of a fixed, known evaluation cost."""
    x, _, _, log_ei = _ei_at(x, ctx)
    c = np.asarray(duration_model(x), dtype=float).reshape(-1)
    if np.any(c <= 0):
        raise ValueError("duration model must be positive")
    out = np.exp(log_ei) / c
    return float(out[0]) if np.ndim(x) == 1 else out


def _golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float):
    """Maximize a 1-D function on [lo, hi]; returns every (t, f(t)) evaluated."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    seen = [(c, fc), (d, fd)]
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
            seen.append((c, fc))
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
            seen.append((d, fd))
    seen.extend((t, f(t)) for t in (lo, hi))
    return seen


def optimize_acquisition(
    acq: Callable[[np.ndarray], np.ndarray],
    bounds,
    restarts: int = 32,
    rng: Optional[np.random.Generator] = None,
    extra_starts: Sequence[Sequence[float]] = (),
    n_refine: int = 4,
    sweeps: int = 3,
    tol: float = 1e-5,
) -> np.ndarray:
    """Maximize a batched acquisition ``acq(X) -> (n,)`` over the box ``bounds``.

    Uniform seeds (plus ``extra_starts``, e.g. the incumbent) are scored in
    one batch; the best ``n_refine`` are then polished by cyclic
    coordinate-wise golden-section search. The best point evaluated anywhere
    is returned.
    """
    box = np.asarray(bounds, dtype=float).reshape(-1, 2)
    lo, hi = box[:, 0], box[:, 1]
    if np.any(hi <= lo):
        raise ValueError("acquisition bounds must be non-degenerate")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    dim = len(box)
    seeds = lo + rng.random((restarts, dim)) * (hi - lo)
    if len(extra_starts):
        extra = np.clip(np.asarray(extra_starts, dtype=float).reshape(-1, dim), lo, hi)
        seeds = np.vstack([seeds, extra])
    values = np.asarray(acq(seeds), dtype=float).reshape(-1)
    finite = np.isfinite(values)
    if not np.any(finite):
        raise ValueError("acquisition is non-finite at every start point")
    scores = np.where(finite, values, -np.inf)
    best_i = int(np.argmax(scores))
    best_x, best_v = seeds[best_i].copy(), scores[best_i]

    order = np.argsort(-scores, kind="stable")[:n_refine]
    for i in order:
        if not np.isfinite(scores[i]):
            continue
        x = seeds[i].copy()
        fx = scores[i]
        for _ in range(sweeps):
            start_fx = fx
            for k in range(dim):
                def line(t, k=k, x=x):
                    y = x.copy()
                    y[k] = t
                    v = float(np.asarray(acq(y[None, :])).reshape(-1)[0])
                    return v if math.isfinite(v) else -math.inf

                trials = _golden_section(line, lo[k], hi[k], tol * (hi[k] - lo[k]))
                t_best, v_best = max(trials, key=lambda tv: tv[1])
                if v_best > fx:
                    x[k], fx = t_best, v_best
            if fx <= start_fx:
                break
        if fx > best_v:
            best_x, best_v = x.copy(), fx
    return best_x
