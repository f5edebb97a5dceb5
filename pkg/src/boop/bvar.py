"""Steady-state BVAR: Minnesota-type shrinkage prior, three-block Gibbs sampler and densities.

Model, with x_t deterministic (an intercept by default)::

    Pi(L) (y_t - Psi x_t) = eps_t,   eps_t ~ N(0, Sigma)

Prior: vec(Pi) ~ N(theta_Pi, diag(omega)), vec(Psi) ~ N(theta_Psi, diag(psi_sd^2))
and p(Sigma) ∝ |Sigma|^{-(n+1)/2}, or optionally a proper inverse-Wishart.

Coefficient vectors are stored equation by equation: the coefficient of
lag l of variable j in the equation for variable r sits at index
``r * n * p + (l - 1) * n + j``. ``Pi`` itself is an n x (n p) matrix whose
row r is equation r, so ``vec`` here is ``Pi.ravel()``.

The likelihood conditions on the first p observations. A conjugate
normal-inverse-Wishart VAR with a closed-form marginal likelihood is
included as a test oracle for Chib's estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import multigammaln

from .chib import ChibEstimator, State, ThreeBlockModel

_LOG_2PI = math.log(2.0 * math.pi)
STANDARD_LAMBDAS = (0.1, 0.5, 1.0)


class BvarNumericalError(np.linalg.LinAlgError):
    pass


def _chol(a: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        sym = 0.5 * (a + a.T)
        eig = np.linalg.eigvalsh(sym)
        raise BvarNumericalError(
            f"{what} is not positive definite (eigenvalue range {eig.min():.3e}..{eig.max():.3e})"
        ) from exc


def _logdet_chol(l: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(l))))


@dataclass(frozen=True)
class BvarData:
    """Observations y (T x n), deterministic regressors x (T x m) and lag order p."""

    y: np.ndarray
    p: int
    x: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        x = np.ones((len(y), 1)) if self.x is None else np.array(self.x, dtype=float).reshape(len(y), -1)
        if self.p < 1:
            raise ValueError("lag order p must be at least 1")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError("data contain missing or non-finite values")
        T, n = y.shape
        if T <= n * self.p + x.shape[1]:
            raise ValueError(f"too few observations: T={T} for n={n}, p={self.p}, m={x.shape[1]}")
        y.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.shape[1]

    @property
    def m(self) -> int:
        return self.x.shape[1]

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def t_eff(self) -> int:
        return self.T - self.p


@dataclass(frozen=True)
class ShrinkageParams:
    lambda1: float
    lambda2: float
    lambda3: float

    def __post_init__(self):
        if not 0 < self.lambda1 <= 5:
            raise ValueError(f"lambda1 must lie in (0, 5], got {self.lambda1}")
        if not 0 < self.lambda2 <= 1:
            raise ValueError(f"lambda2 must lie in (0, 1], got {self.lambda2}")
        if not 0 < self.lambda3 <= 5:
            raise ValueError(f"lambda3 must lie in (0, 5], got {self.lambda3}")

    @classmethod
    def standard(cls) -> "ShrinkageParams":
        return cls(*STANDARD_LAMBDAS)


@dataclass(frozen=True)
class SteadyStatePrior:
    """Prior moments for Psi and Pi; ``sigma_scale``/``sigma_df`` make the Sigma prior a proper IW."""

    psi_mean: np.ndarray
    psi_sd: np.ndarray
    pi_mean: np.ndarray
    sigma_scale: Optional[np.ndarray] = None
    sigma_df: Optional[float] = None

    def __post_init__(self):
        for name in ("psi_mean", "psi_sd", "pi_mean"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if len(self.psi_mean) != len(self.psi_sd):
            raise ValueError("psi_mean and psi_sd must have the same length")
        if np.any(self.psi_sd <= 0):
            raise ValueError("psi_sd must be strictly positive")
        if (self.sigma_scale is None) != (self.sigma_df is None):
            raise ValueError("sigma_scale and sigma_df must be given together")
        if self.sigma_scale is not None:
            object.__setattr__(self, "sigma_scale", np.array(self.sigma_scale, dtype=float))

    @property
    def proper_sigma(self) -> bool:
        return self.sigma_scale is not None

    @classmethod
    def from_intervals(cls, lows, highs, pi_mean) -> "SteadyStatePrior":
        """Steady-state prior from (mean - sd; mean + sd) intervals."""
        lows, highs = np.asarray(lows, dtype=float), np.asarray(highs, dtype=float)
        return cls((lows + highs) / 2.0, (highs - lows) / 2.0, pi_mean)


def first_lag_pi_mean(n: int, p: int, own_first_lag) -> np.ndarray:
    """Prior mean vector with ``own_first_lag[r]`` on the first own lag of each equation."""
    out = np.zeros(n * n * p)
    own = np.broadcast_to(np.asarray(own_first_lag, dtype=float), (n,))
    for r in range(n):
        out[r * n * p + r] = own[r]
    return out


def series_scales(y: np.ndarray, p: int) -> np.ndarray:
    """Residual standard deviations of univariate AR(p) fits with intercept."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    T, n = y.shape
    out = np.empty(n)
    for j in range(n):
        target = y[p:, j]
        design = np.column_stack([np.ones(T - p)] + [y[p - l : T - l, j] for l in range(1, p + 1)])
        coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        resid = target - design @ coef
        out[j] = math.sqrt(resid @ resid / max(len(target) - design.shape[1], 1))
    if np.any(out <= 0):
        raise ValueError("a series has zero residual variance; cannot scale the prior")
    return out


def build_pi_prior_covariance(
    lam: ShrinkageParams, series_sd, n: int, p: int, scaled_own_lag: bool = False
) -> np.ndarray:
    """Diagonal of the prior covariance of vec(Pi).

    Own lag l: lambda1^2 / (l^lambda3)^2. Cross lag l of variable j in
    equation r: (lambda1 lambda2 s_r)^2 / (l^lambda3 s_j)^2.
    ``scaled_own_lag=True`` divides the own-lag variance by s_r^2 as well.
    """
    s = np.asarray(series_sd, dtype=float).ravel()
    if len(s) != n or np.any(s <= 0):
        raise ValueError("series_sd must be n positive numbers")
    out = np.empty(n * n * p)
    for r in range(n):
        for l in range(1, p + 1):
            decay = l ** (2.0 * lam.lambda3)
            for j in range(n):
                i = r * n * p + (l - 1) * n + j
                if j == r:
                    own = lam.lambda1**2 / decay
                    out[i] = own / s[r] ** 2 if scaled_own_lag else own
                else:
                    out[i] = (lam.lambda1 * lam.lambda2 * s[r]) ** 2 / (decay * s[j] ** 2)
    return out


@dataclass
class BvarState:
    pi: np.ndarray
    sigma: np.ndarray
    psi: np.ndarray

    def as_blocks(self) -> State:
        return [self.psi, self.sigma, self.pi]

    @classmethod
    def from_blocks(cls, blocks: State) -> "BvarState":
        psi, sigma, pi = blocks
        return cls(np.asarray(pi), np.asarray(sigma), np.asarray(psi))


# inverse-Wishart helpers


def sample_inv_wishart(scale: np.ndarray, df: float, rng: np.random.Generator) -> np.ndarray:
    """Sigma ~ IW(scale, df) via the Bartlett decomposition of Sigma^{-1}."""
    n = len(scale)
    ls = _chol(scale, "inverse-Wishart scale")
    a = np.zeros((n, n))
    a[np.diag_indices(n)] = np.sqrt(rng.chisquare(df - np.arange(n)))
    a[np.tril_indices(n, -1)] = rng.standard_normal(n * (n - 1) // 2)
    b = solve_triangular(a, ls.T, lower=True, check_finite=False)
    return b.T @ b


def log_inv_wishart(sigma: np.ndarray, scale: np.ndarray, df: float) -> float:
    n = len(sigma)
    l_sigma = _chol(sigma, "Sigma")
    l_scale = _chol(scale, "inverse-Wishart scale")
    trace = float(np.sum(solve_triangular(l_sigma, l_scale, lower=True, check_finite=False) ** 2))
    return (
        0.5 * df * _logdet_chol(l_scale)
        - 0.5 * df * n * math.log(2.0)
        - multigammaln(0.5 * df, n)
        - 0.5 * (df + n + 1) * _logdet_chol(l_sigma)
        - 0.5 * trace
    )


def _gaussian_from_precision(prec: np.ndarray, rhs: np.ndarray, what: str):
    l = _chol(prec, what)
    mean = cho_solve((l, True), rhs, check_finite=False)
    return mean, l


def _log_gaussian_precision(value: np.ndarray, mean: np.ndarray, l_prec: np.ndarray) -> float:
    dev = l_prec.T @ (value - mean)
    return float(-0.5 * len(mean) * _LOG_2PI + np.sum(np.log(np.diag(l_prec))) - 0.5 * dev @ dev)


def _draw_gaussian_precision(mean: np.ndarray, l_prec: np.ndarray, rng) -> np.ndarray:
    return mean + solve_triangular(l_prec.T, rng.standard_normal(len(mean)), lower=False, check_finite=False)


def _lags(u: np.ndarray, p: int) -> Tuple[np.ndarray, np.ndarray]:
    """(targets, regressors) with regressor row t = (u_{t-1}, ..., u_{t-p})."""
    T = len(u)
    z = np.hstack([u[p - l : T - l] for l in range(1, p + 1)])
    return u[p:], z


class SteadyStateBvar(ThreeBlockModel):
    """Blocks for Chib's estimator: 0 = Psi (exact), 1 = Sigma (reduced run), 2 = Pi (fixed in reduced run)."""

    sweep_order = (2, 1, 0)

    def __init__(
        self,
        data: BvarData,
        prior: SteadyStatePrior,
        lam: ShrinkageParams,
        series_sd=None,
        scaled_own_lag: bool = False,
    ):
        n, p, m = data.n, data.p, data.m
        if len(prior.psi_mean) != n * m:
            raise ValueError(f"psi prior must have n*m = {n * m} entries")
        if len(prior.pi_mean) != n * n * p:
            raise ValueError(f"pi_mean must have n*n*p = {n * n * p} entries")
        self.data = data
        self.prior = prior
        self.lam = lam
        self.series_sd = series_scales(data.y, p) if series_sd is None else np.asarray(series_sd, dtype=float)
        self.omega = build_pi_prior_covariance(lam, self.series_sd, n, p, scaled_own_lag)
        if not prior.proper_sigma and data.t_eff < n:
            raise ValueError("need T - p >= n for a proper Sigma posterior")

    # conditional moments

    def _demeaned(self, psi: np.ndarray) -> np.ndarray:
        return self.data.y - self.data.x @ np.asarray(psi).reshape(self.data.n, self.data.m).T

    def _pi_conditional(self, state: State):
        psi, sigma, _ = state
        targets, z = _lags(self._demeaned(psi), self.data.p)
        l_sigma = _chol(sigma, "Sigma")
        sigma_inv = cho_solve((l_sigma, True), np.eye(len(sigma)), check_finite=False)
        prec = np.kron(sigma_inv, z.T @ z)
        prec[np.diag_indices_from(prec)] += 1.0 / self.omega
        rhs = self.prior.pi_mean / self.omega + (z.T @ targets @ sigma_inv).T.ravel()
        return _gaussian_from_precision(prec, rhs, "Pi conditional precision")

    def _sigma_conditional(self, state: State):
        psi, _, pi = state
        targets, z = _lags(self._demeaned(psi), self.data.p)
        resid = targets - z @ np.asarray(pi).T
        scale = resid.T @ resid
        df = float(self.data.t_eff)
        if self.prior.proper_sigma:
            scale = scale + self.prior.sigma_scale
            df += self.prior.sigma_df
        return scale, df

    def _psi_conditional(self, state: State):
        _, sigma, pi = state
        d = self.data
        n, m, p, T = d.n, d.m, d.p, d.T
        pi = np.asarray(pi)
        pi_k = [pi[:, (k - 1) * n : k * n] for k in range(1, p + 1)]
        w = d.y[p:] - sum(d.y[p - k : T - k] @ pi_k[k - 1].T for k in range(1, p + 1))
        eye = np.eye(n)
        blocks = []
        for j in range(m):
            bj = d.x[p:, j][:, None, None] * eye
            for k in range(1, p + 1):
                bj = bj - d.x[p - k : T - k, j][:, None, None] * pi_k[k - 1]
            blocks.append(bj)
        design = np.concatenate(blocks, axis=2)  # (T - p, n, n m)
        l_sigma = _chol(sigma, "Sigma")
        sigma_inv = cho_solve((l_sigma, True), eye, check_finite=False)
        sd_ = np.einsum("tia,ij->tja", design, sigma_inv)
        prec = np.einsum("tja,tjb->ab", sd_, design)
        prec[np.diag_indices_from(prec)] += 1.0 / self.prior.psi_sd**2
        rhs = self.prior.psi_mean / self.prior.psi_sd**2 + np.einsum("tja,tj->a", sd_, w)
        return _gaussian_from_precision(prec, rhs, "Psi conditional precision")

    def _psi_matrix(self, v: np.ndarray) -> np.ndarray:
        return v.reshape(self.data.m, self.data.n).T

    # ThreeBlockModel

    def initial_state(self) -> State:
        n, p, m = self.data.n, self.data.p, self.data.m
        psi = self._psi_matrix(np.asarray(self.prior.psi_mean))
        pi = np.asarray(self.prior.pi_mean).reshape(n, n * p)
        targets, z = _lags(self._demeaned(psi), p)
        resid = targets - z @ pi.T
        sigma = resid.T @ resid / len(resid) + 1e-8 * np.eye(n)
        return [psi, sigma, pi]

    def sample_block(self, k: int, state: State, rng: np.random.Generator):
        n, p = self.data.n, self.data.p
        if k == 2:
            mean, l = self._pi_conditional(state)
            return _draw_gaussian_precision(mean, l, rng).reshape(n, n * p)
        if k == 1:
            scale, df = self._sigma_conditional(state)
            return sample_inv_wishart(scale, df, rng)
        if k == 0:
            mean, l = self._psi_conditional(state)
            return self._psi_matrix(_draw_gaussian_precision(mean, l, rng))
        raise IndexError(k)

    def log_conditional(self, k: int, value, state: State) -> float:
        if k == 2:
            mean, l = self._pi_conditional(state)
            return _log_gaussian_precision(np.asarray(value).ravel(), mean, l)
        if k == 1:
            scale, df = self._sigma_conditional(state)
            return log_inv_wishart(np.asarray(value), scale, df)
        if k == 0:
            mean, l = self._psi_conditional(state)
            return _log_gaussian_precision(np.asarray(value).T.ravel(), mean, l)
        raise IndexError(k)

    def log_likelihood(self, state: State) -> float:
        return log_likelihood(BvarState.from_blocks(state), self.data)

    def log_prior(self, state: State) -> float:
        return log_prior_density(BvarState.from_blocks(state), self.prior, self.omega)

    # helpers for simulation-based checks

    def sweep(self, state: BvarState, rng: np.random.Generator) -> BvarState:
        blocks = state.as_blocks()
        for k in self.sweep_order:
            blocks[k] = self.sample_block(k, blocks, rng)
        return BvarState.from_blocks(blocks)

    def sample_prior(self, rng: np.random.Generator) -> BvarState:
        if not self.prior.proper_sigma:
            raise ValueError("cannot sample from an improper Sigma prior")
        n, p = self.data.n, self.data.p
        pi = (self.prior.pi_mean + np.sqrt(self.omega) * rng.standard_normal(len(self.omega))).reshape(n, n * p)
        psi = self._psi_matrix(self.prior.psi_mean + self.prior.psi_sd * rng.standard_normal(len(self.prior.psi_sd)))
        sigma = sample_inv_wishart(self.prior.sigma_scale, self.prior.sigma_df, rng)
        return BvarState(pi, sigma, psi)


def gibbs_sweep(
    state: BvarState,
    data: BvarData,
    prior: SteadyStatePrior,
    lam: ShrinkageParams,
    rng: np.random.Generator,
    series_sd=None,
) -> BvarState:
    """One Gibbs cycle: Pi | Sigma, Psi; Sigma | Pi, Psi; Psi | Pi, Sigma."""
    return SteadyStateBvar(data, prior, lam, series_sd).sweep(state, rng)


def log_likelihood(state: BvarState, data: BvarData) -> float:
    """Gaussian log-likelihood of y_{p+1:T} given the first p observations."""
    n, m, p = data.n, data.m, data.p
    demeaned = data.y - data.x @ np.asarray(state.psi).reshape(n, m).T
    targets, z = _lags(demeaned, p)
    resid = targets - z @ np.asarray(state.pi).T
    l_sigma = _chol(np.asarray(state.sigma), "Sigma")
    white = solve_triangular(l_sigma, resid.T, lower=True, check_finite=False)
    t_eff = len(resid)
    return float(-0.5 * (t_eff * n * _LOG_2PI + t_eff * _logdet_chol(l_sigma) + np.sum(white**2)))


def log_prior_density(state: BvarState, prior: SteadyStatePrior, omega_pi_diag) -> float:
    """Independent Gaussian log densities for vec(Pi) and vec(Psi) plus the Sigma term.

    With the default improper prior the Sigma term is -(n+1)/2 log|Sigma|.
    """
    omega = np.asarray(omega_pi_diag, dtype=float)
    beta = np.asarray(state.pi).ravel()
    lp = float(np.sum(-0.5 * (_LOG_2PI + np.log(omega)) - 0.5 * (beta - prior.pi_mean) ** 2 / omega))
    psi = np.asarray(state.psi).T.ravel()
    var = prior.psi_sd**2
    lp += float(np.sum(-0.5 * (_LOG_2PI + np.log(var)) - 0.5 * (psi - prior.psi_mean) ** 2 / var))
    sigma = np.asarray(state.sigma)
    if prior.proper_sigma:
        return lp + log_inv_wishart(sigma, prior.sigma_scale, prior.sigma_df)
    n = len(sigma)
    return lp - 0.5 * (n + 1) * _logdet_chol(_chol(sigma, "Sigma"))


def simulate_steady_state_var(
    pi: np.ndarray,
    sigma: np.ndarray,
    psi: np.ndarray,
    T: int,
    rng: np.random.Generator,
    x: Optional[np.ndarray] = None,
    y_init: Optional[np.ndarray] = None,
    warmup: int = 200,
) -> np.ndarray:
    """Simulate y_1..y_T. With ``y_init`` the first p rows are fixed to it and no warm-up is used."""
    pi = np.asarray(pi, dtype=float)
    n = pi.shape[0]
    p = pi.shape[1] // n
    psi = np.asarray(psi, dtype=float).reshape(n, -1)
    x = np.ones((T, psi.shape[1])) if x is None else np.asarray(x, dtype=float)
    l_sigma = _chol(np.asarray(sigma, dtype=float), "Sigma")
    pi_k = [pi[:, (k - 1) * n : k * n] for k in range(1, p + 1)]
    if y_init is not None:
        y_init = np.asarray(y_init, dtype=float).reshape(p, n)
        u = np.zeros((T, n))
        u[:p] = y_init - x[:p] @ psi.T
        start, total = p, T
    else:
        warm = warmup + T
        u = np.zeros((warm, n))
        start, total = p, warm
    for t in range(start, total):
        u[t] = sum(pi_k[k - 1] @ u[t - k] for k in range(1, p + 1)) + l_sigma @ rng.standard_normal(n)
    if y_init is None:
        u = u[-T:]
    return u + x @ psi.T


# conjugate normal-inverse-Wishart VAR


@dataclass(frozen=True)
class MniwPrior:
    """Sigma ~ IW(scale, df), B | Sigma ~ MN(b_mean, omega, Sigma) for Y = X B + E."""

    b_mean: np.ndarray
    omega: np.ndarray
    scale: np.ndarray
    df: float

    def __post_init__(self):
        omega = np.array(self.omega, dtype=float)
        if omega.ndim == 1:
            omega = np.diag(omega)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "b_mean", np.array(self.b_mean, dtype=float))
        object.__setattr__(self, "scale", np.array(self.scale, dtype=float))
        n = self.scale.shape[0]
        if not self.df > n - 1:
            raise ValueError(f"improper prior: df={self.df} must exceed n - 1 = {n - 1}")
        if np.any(np.linalg.eigvalsh(omega) <= 0) or np.any(np.linalg.eigvalsh(self.scale) <= 0):
            raise ValueError("improper prior: omega and scale must be positive definite")


def var_design(data: BvarData) -> Tuple[np.ndarray, np.ndarray]:
    """(Y, X) for the standard VAR y_t = B' (x_t, y_{t-1}, ..., y_{t-p}) + e_t."""
    targets, z = _lags(data.y, data.p)
    return targets, np.hstack([data.x[data.p :], z])


def minnesota_mniw_prior(
    data: BvarData,
    lam: ShrinkageParams,
    series_sd=None,
    intercept_sd: float = 10.0,
    own_first_lag: float = 0.0,
) -> MniwPrior:
    """Conjugate Minnesota prior (no separate cross-lag shrinkage).

    Coefficient on lag l of variable j has variance Sigma_rr * lambda1^2 / (l^lambda3 s_j)^2,
    so for Sigma_rr ≈ s_r^2 the cross-lag variance matches the lambda2 = 1 case.
    """
    n, p, m = data.n, data.p, data.m
    s = series_scales(data.y, p) if series_sd is None else np.asarray(series_sd, dtype=float)
    om = [intercept_sd**2] * m
    for l in range(1, p + 1):
        for j in range(n):
            om.append(lam.lambda1**2 / (l ** (2.0 * lam.lambda3) * s[j] ** 2))
    b_mean = np.zeros((m + n * p, n))
    for r in range(n):
        b_mean[m + r, r] = own_first_lag
    df = n + 2.0
    return MniwPrior(b_mean, np.array(om), np.diag(s**2) * (df - n - 1), df)


def conjugate_logml_oracle(y: np.ndarray, X: np.ndarray, prior: MniwPrior) -> float:
    """Exact log p(Y) under the MNIW prior (matrix-variate t normalizing constants)."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    T, n = y.shape
    l_om = _chol(prior.omega, "prior omega")
    om_inv = cho_solve((l_om, True), np.eye(len(l_om)))
    post_prec = om_inv + X.T @ X
    l_post = _chol(post_prec, "posterior precision")
    b_post = cho_solve((l_post, True), om_inv @ prior.b_mean + X.T @ y, check_finite=False)
    scale_post = (
        prior.scale
        + y.T @ y
        + prior.b_mean.T @ om_inv @ prior.b_mean
        - b_post.T @ post_prec @ b_post
    )
    scale_post = 0.5 * (scale_post + scale_post.T)
    df_post = prior.df + T
    logdet_s = _logdet_chol(_chol(prior.scale, "prior scale"))
    logdet_s_post = _logdet_chol(_chol(scale_post, "posterior scale"))
    # |Omega_post| = 1 / |post_prec|
    return float(
        -0.5 * T * n * math.log(math.pi)
        + multigammaln(0.5 * df_post, n)
        - multigammaln(0.5 * prior.df, n)
        + 0.5 * prior.df * logdet_s
        - 0.5 * df_post * logdet_s_post
        - 0.5 * n * _logdet_chol(l_om)
        - 0.5 * n * _logdet_chol(l_post)
    )


def _log_matrix_normal(value, mean, l_row_prec, l_col) -> float:
    """log MN(value; mean, U, V) given chol of U^{-1} (row precision) and chol of V."""
    k, n = mean.shape
    dev = l_row_prec.T @ (value - mean)
    white = solve_triangular(l_col, dev.T, lower=True, check_finite=False)
    return float(
        -0.5 * k * n * _LOG_2PI
        + 0.5 * n * _logdet_chol(l_row_prec)
        - 0.5 * k * _logdet_chol(l_col)
        - 0.5 * np.sum(white**2)
    )


class ConjugateVar(ThreeBlockModel):
    """Standard VAR with MNIW prior split into three Gibbs blocks.

    Block 0 holds the first ``split`` rows of B (the deterministic terms),
    block 1 is Sigma and block 2 holds the lag coefficients. The joint
    posterior is known, so Chib estimates can be checked exactly.
    """

    def __init__(self, y: np.ndarray, X: np.ndarray, prior: MniwPrior, split: int = 1):
        self.y = np.asarray(y, dtype=float)
        self.X = np.asarray(X, dtype=float)
        self.prior = prior
        self.k = self.X.shape[1]
        if not 0 < split < self.k:
            raise ValueError("split must leave rows in both coefficient blocks")
        self.split = split
        l_om = _chol(prior.omega, "prior omega")
        self._l_om = l_om
        self._om_inv = cho_solve((l_om, True), np.eye(self.k), check_finite=False)
        self.post_prec = self._om_inv + self.X.T @ self.X
        self.b_post = np.linalg.solve(self.post_prec, self._om_inv @ prior.b_mean + self.X.T @ self.y)

    @classmethod
    def from_data(cls, data: BvarData, prior: MniwPrior) -> "ConjugateVar":
        y, X = var_design(data)
        return cls(y, X, prior, split=data.m)

    def _b(self, state: State) -> np.ndarray:
        return np.vstack([state[0], state[2]])

    def _block_conditional(self, k: int, state: State):
        a = slice(0, self.split) if k == 0 else slice(self.split, self.k)
        b = slice(self.split, self.k) if k == 0 else slice(0, self.split)
        other = state[2] if k == 0 else state[0]
        p_aa = self.post_prec[a, a]
        l_aa = _chol(p_aa, "coefficient block precision")
        shift = cho_solve((l_aa, True), self.post_prec[a, b] @ (other - self.b_post[b]), check_finite=False)
        mean = self.b_post[a] - shift
        return mean, l_aa

    def _sigma_conditional(self, state: State):
        B = self._b(state)
        resid = self.y - self.X @ B
        dev = B - self.prior.b_mean
        scale = self.prior.scale + resid.T @ resid + dev.T @ self._om_inv @ dev
        return 0.5 * (scale + scale.T), self.prior.df + len(self.y) + self.k

    def initial_state(self) -> State:
        B = self.b_post
        resid = self.y - self.X @ B
        sigma = (self.prior.scale + resid.T @ resid) / (self.prior.df + len(self.y))
        return [B[: self.split].copy(), sigma, B[self.split :].copy()]

    def sample_block(self, k: int, state: State, rng: np.random.Generator):
        if k == 1:
            return sample_inv_wishart(*self._sigma_conditional(state), rng)
        mean, l_aa = self._block_conditional(k, state)
        l_sigma = _chol(state[1], "Sigma")
        z = rng.standard_normal(mean.shape)
        return mean + solve_triangular(l_aa.T, z, lower=False, check_finite=False) @ l_sigma.T

    def log_conditional(self, k: int, value, state: State) -> float:
        if k == 1:
            return log_inv_wishart(np.asarray(value), *self._sigma_conditional(state))
        mean, l_aa = self._block_conditional(k, state)
        return _log_matrix_normal(np.asarray(value), mean, l_aa, _chol(state[1], "Sigma"))

    def log_likelihood(self, state: State) -> float:
        resid = self.y - self.X @ self._b(state)
        l_sigma = _chol(state[1], "Sigma")
        white = solve_triangular(l_sigma, resid.T, lower=True, check_finite=False)
        T, n = self.y.shape
        return float(-0.5 * (T * n * _LOG_2PI + T * _logdet_chol(l_sigma) + np.sum(white**2)))

    def log_prior(self, state: State) -> float:
        sigma = state[1]
        l_prec = _chol(self._om_inv, "prior precision")
        return log_inv_wishart(sigma, self.prior.scale, self.prior.df) + _log_matrix_normal(
            self._b(state), self.prior.b_mean, l_prec, _chol(sigma, "Sigma")
        )

    def log_marginal_likelihood(self) -> float:
        return conjugate_logml_oracle(self.y, self.X, self.prior)


def marginal_likelihood_estimator(
    data: BvarData,
    prior: SteadyStatePrior,
    lam: ShrinkageParams,
    burn: int = 2500,
    series_sd=None,
    q: Optional[int] = None,
) -> ChibEstimator:
    """Chib estimator of log p(y | lambda) for the steady-state BVAR, growable in batches."""
    return ChibEstimator(SteadyStateBvar(data, prior, lam, series_sd), burn, q)
