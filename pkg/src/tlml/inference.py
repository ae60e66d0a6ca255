"""Inference around local fits: information, sandwich covariance, intervals,
second-order bias, prediction and the long-run bridge to an OU process."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .estimator import TlmlFit, _window, tlml_fit, weighted_information
from .glim import RegressionFrame
from .weights import WeightScheme, WeightSums, cumulated_sums, kernel_shape, weight_vector

logger = logging.getLogger(__name__)


def j_hat(model, frame: RegressionFrame, scheme: WeightScheme, T: int, theta) -> np.ndarray:
    """Weighted information -sum_h w(h) Hessian_{T-h} / sum_h w(h)."""
    win = _window(model, frame, scheme, T)
    return weighted_information(model, win, np.asarray(theta, dtype=float))


def default_lag(T: int) -> int:
    """Truncation lag ceil(T^(1/3))."""
    return int(math.ceil(T ** (1.0 / 3.0) - 1e-12))


@dataclass
class ScoreAutocovariance:
    """Sample autocovariances at lags 0..L.

    ``I_h[h]`` estimates Cov(s_t, s_{t-h}) for the score vectors s_t, so that
    the lag -h matrix is ``I_h[h].T``. ``I2_h`` does the same for vectorised
    Hessians and ``gamma_h`` for the dated log-likelihood values.
    """

    lags: np.ndarray
    I_h: np.ndarray
    I2_h: np.ndarray
    gamma_h: np.ndarray
    n_obs: int

    @property
    def L(self) -> int:
        return int(self.lags[-1])


def _autocov(x: np.ndarray, L: int) -> np.ndarray:
    # x has shape (m, k); returns (L+1, k, k) with out[h] = mean x_t x_{t-h}'
    x = x - x.mean(axis=0)
    m = len(x)
    out = np.empty((L + 1, x.shape[1], x.shape[1]))
    for h in range(L + 1):
        out[h] = x[h:].T @ x[:m - h] / m
    return out


def score_autocov(model, frame: RegressionFrame, theta, L: int, T: int | None = None) -> ScoreAutocovariance:
    """Centered sample autocovariances of per-date scores, Hessians and log-likelihoods."""
    T = frame.T if T is None else T
    y, z = frame.window(T)
    keep = model.usable(y, z)
    y, z = y[keep], z[keep]
    if L < 0 or L >= len(y):
        raise ValueError(f"lag {L} must lie in [0, {len(y) - 1}] for {len(y)} observations")
    theta = np.asarray(theta, dtype=float)
    score, hess = model.score_hessian(y, z, theta)
    logl = np.asarray(model.logl(y, z, theta), dtype=float)
    I_h = _autocov(score, L)
    I_h[0] = 0.5 * (I_h[0] + I_h[0].T)
    I2_h = _autocov(hess.reshape(len(y), -1), L)
    gamma_h = _autocov(logl[:, None], L)[:, 0, 0]
    return ScoreAutocovariance(lags=np.arange(L + 1), I_h=I_h, I2_h=I2_h, gamma_h=gamma_h, n_obs=len(y))


def lag_weight_products(scheme: WeightScheme, T: int, L: int) -> np.ndarray:
    """c_j = sum_h w(h) w(h+j) for j = 0..L over lags 0..T-1."""
    w = weight_vector(scheme, T)
    return np.array([float(np.dot(w[:T - j], w[j:])) if j < T else 0.0 for j in range(L + 1)])


def bartlett(L: int) -> np.ndarray:
    return 1.0 - np.arange(L + 1) / (L + 1.0)


def long_run_sum(acov: np.ndarray, scheme: WeightScheme, T: int, taper: bool = True) -> np.ndarray:
    """sum_h sum_k w(h) w(k) kappa(|h-k|) Gamma_{h-k} from lag matrices ``acov[0..L]``."""
    L = len(acov) - 1
    c = lag_weight_products(scheme, T, L)
    kappa = bartlett(L) if taper else np.ones(L + 1)
    out = c[0] * acov[0]
    for j in range(1, L + 1):
        out = out + kappa[j] * c[j] * (acov[j] + acov[j].T)
    return out


def _adjugate(J):
    """Adjugate and determinant of a 1x1 or 2x2 matrix, as Python floats."""
    J = [[float(v) for v in row] for row in np.asarray(J)]
    if len(J) == 1:
        return [[1.0]], J[0][0]
    if len(J) != 2:
        raise ValueError("only 1x1 and 2x2 information matrices are supported")
    (a, b), (c, d) = J
    return [[d, -b], [-c, a]], a * d - b * c


def _matmul(A, B):
    # plain float arithmetic keeps small products free of fused rounding
    return [[sum(A[i][k] * B[k][j] for k in range(len(B))) for j in range(len(B[0]))]
            for i in range(len(A))]


def inverse_sandwich(J, M) -> np.ndarray:
    """J^{-1} M J^{-1} through the adjugate; exact cancellation when M == J."""
    adj, det = _adjugate(J)
    if det == 0.0 or not math.isfinite(det):
        raise np.linalg.LinAlgError("information matrix is singular")
    M = [[float(v) for v in row] for row in np.asarray(M)]
    out = _matmul(_matmul(adj, M), adj)
    return np.array(out) / det / det


def inverse(J) -> np.ndarray:
    adj, det = _adjugate(J)
    if det == 0.0 or not math.isfinite(det):
        raise np.linalg.LinAlgError("information matrix is singular")
    return np.array(adj) / det


@dataclass
class Interval:
    lower: np.ndarray
    upper: np.ndarray
    half_width: np.ndarray
    available: bool


def confidence_interval(fit: TlmlFit, sums: WeightSums, level_mult: float = 2.0) -> Interval:
    """theta_hat +/- level_mult * sqrt(W2)/W * sqrt(diag(J_hat^{-1})).

    A non positive definite J_hat (quasi-collinear regressors) gives an
    unavailable interval filled with NaN.
    """
    d = fit.theta_hat.size
    eig = np.linalg.eigvalsh(fit.J_hat)
    if not np.all(np.isfinite(eig)) or eig[0] <= 0.0:
        nan = np.full(d, np.nan)
        return Interval(lower=nan, upper=nan.copy(), half_width=nan.copy(), available=False)
    diag = np.diag(inverse(fit.J_hat))
    half = level_mult * math.sqrt(sums.W2_T) / sums.W_T * np.sqrt(diag)
    return Interval(lower=fit.theta_hat - half, upper=fit.theta_hat + half, half_width=half, available=True)


@dataclass
class SandwichInfo:
    J_hat: np.ndarray
    I_T_w: np.ndarray
    W_T: float
    W2_T: float
    asy_cov: np.ndarray


def sandwich_covariance(fit: TlmlFit, autocov: ScoreAutocovariance, scheme: WeightScheme, T: int,
                        taper: bool = True) -> SandwichInfo:
    """asy_cov = J^{-1} I_T(w) J^{-1} / W_T^2 with I_T(w) the weighted long-run score covariance.

    The lag truncation is that of ``autocov``; ``taper`` applies Bartlett
    weights to the nonzero lags.
    """
    sums = cumulated_sums(scheme, T)
    L = autocov.L
    c = lag_weight_products(scheme, T, L)
    kappa = bartlett(L) if taper else np.ones(L + 1)
    I_T = c[0] * autocov.I_h[0]
    # J^{-1} (.) J^{-1} is linear, so map each lag term separately; with no
    # lags beyond 0 this is c_0 J^{-1} I_0 J^{-1} without extra rounding
    asy = c[0] * inverse_sandwich(fit.J_hat, autocov.I_h[0])
    for j in range(1, L + 1):
        term = kappa[j] * c[j] * (autocov.I_h[j] + autocov.I_h[j].T)
        I_T = I_T + term
        asy = asy + inverse_sandwich(fit.J_hat, term)
    asy = asy / sums.W_T ** 2
    return SandwichInfo(J_hat=fit.J_hat, I_T_w=I_T, W_T=sums.W_T, W2_T=sums.W2_T,
                        asy_cov=0.5 * (asy + asy.T))


@dataclass
class BiasTerms:
    """Per-coordinate second-order bias pieces at date T."""

    X_T: np.ndarray
    Z_T: np.ndarray
    I_T_w: np.ndarray
    I2_T_w: np.ndarray
    J: np.ndarray
    EL3_hat: np.ndarray
    correction: np.ndarray


def pseudo_true(model, frame: RegressionFrame, opts=None) -> np.ndarray:
    """Uniform-weight fit on the whole frame, standing in for the pseudo-true value."""
    kwargs = {} if opts is None else {"opts": opts}
    return tlml_fit(model, frame, WeightScheme.uniform(), frame.T, **kwargs).theta_hat


def bias_terms(model, frame: RegressionFrame, scheme: WeightScheme, T: int, fit: TlmlFit | None = None,
               theta_star=None, L: int | None = None) -> BiasTerms:
    """Plug-in second-order bias of the date-T estimator, one coordinate at a time.

    For coordinate j, with L1, L2, L3 the first three own derivatives of the
    dated log-likelihood at ``theta_star``, J = -mean L2 and EL3 = mean L3
    over the whole frame, S1 = sum w L1 and S2 = sum w (L2 + J):

        correction = -S1 S2 / (W J)^2 - (EL3 / 2J) S1^2 / (W J)^2

    X_T and Z_T are S1 and S2 standardised by their weighted long-run
    variances. ``fit`` is accepted for interface symmetry and only used to
    default ``theta_star`` when no pseudo-true value is supplied.
    """
    if theta_star is None:
        theta_star = pseudo_true(model, frame)
    theta_star = np.asarray(theta_star, dtype=float)
    y_all, z_all = frame.window(frame.T)
    keep = model.usable(y_all, z_all)
    _, h_all, t_all = model.derivatives(y_all[keep], z_all[keep], theta_star)
    d = theta_star.size
    idx = np.arange(d)
    J = -h_all[:, idx, idx].mean(axis=0)
    EL3 = t_all[:, idx, idx, idx].mean(axis=0)
    if np.any(J == 0.0):
        raise ValueError("zero information in a coordinate; bias expansion undefined")

    win = _window(model, frame, scheme, T)
    s, h, _ = model.derivatives(win.y, win.z, theta_star)
    L1 = s
    L2c = h[:, idx, idx] + J
    S1 = win.w @ L1
    S2 = win.w @ L2c
    W = win.W

    L = default_lag(T) if L is None else L
    ac = score_autocov(model, frame, theta_star, min(L, max(win.y.size - 1, 0)), T=T)
    I_full = long_run_sum(ac.I_h, scheme, T)
    diag_pos = [i * d + i for i in range(d)]
    I2_full = long_run_sum(ac.I2_h[:, diag_pos][:, :, diag_pos], scheme, T)
    I_T = np.diag(I_full).copy()
    I2_T = np.diag(I2_full).copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        X = np.where(I_T > 0.0, S1 / np.sqrt(I_T), 0.0)
        Z = np.where(I2_T > 0.0, S2 / np.sqrt(I2_T), 0.0)
    scale = (W * J) ** 2
    correction = -S1 * S2 / scale - 0.5 * (EL3 / J) * S1 * S1 / scale + 0.0
    return BiasTerms(X_T=X, Z_T=Z, I_T_w=I_T, I2_T_w=I2_T, J=J, EL3_hat=EL3, correction=correction)


def reproductive_number(theta) -> float:
    """R0 = a + (1 - c) for theta = (a, 1 - c)."""
    return float(theta[0]) + float(theta[1])


@dataclass
class Prediction:
    t: int
    predicted: float
    observed: float
    residual: float


def predict_counts(frame: RegressionFrame, theta, t: int) -> Prediction:
    """One-step count prediction a(n - y)y/n + (1 - c)y from y = N2(t-1).

    ``theta`` is the estimate available at date t-1. The residual is NaN
    when N2(t) lies beyond the frame.
    """
    if frame.n is None:
        raise ValueError("count prediction needs a population size")
    prev = float(frame.y[t - 1])
    a, one_minus_c = float(theta[0]), float(theta[1])
    pred = a * (frame.n - prev) * prev / frame.n + one_minus_c * prev
    if t <= frame.T:
        obs = float(frame.y[t])
        return Prediction(t=t, predicted=pred, observed=obs, residual=obs - pred)
    return Prediction(t=t, predicted=pred, observed=math.nan, residual=math.nan)


def ulr_limit_functional(theta_path, kernel: str, c_frac: float) -> float:
    """Riemann approximation of int_0^c w(tau) theta(1 - tau) dtau / int_0^c w(tau) dtau.

    ``theta_path`` holds theta at equally spaced points s = 0, 1/M, ..., 1;
    point s contributes with lag tau = 1 - s.
    """
    if not 0.0 < c_frac <= 1.0:
        raise ValueError(f"c_frac must lie in (0, 1], got {c_frac}")
    path = np.asarray(theta_path, dtype=float)
    if len(path) < 100:
        raise ValueError("grid needs at least 100 points")
    M = len(path) - 1
    tau = np.arange(M, -1, -1) / M
    w = kernel_shape(kernel, tau)
    w[tau > c_frac + 1e-12] = 0.0
    return float(np.dot(w, path) / w.sum())


class OuFitError(RuntimeError):
    """The OU likelihood maximisation did not converge."""


@dataclass
class OuFit:
    mu: float
    k: float
    eta: float
    se: np.ndarray
    loglik: float
    converged: bool
    degenerate: bool = False


def _ou_negloglik(params, x, dt):
    mu, log_k, log_eta = params
    k = math.exp(log_k)
    eta = math.exp(log_eta)
    v = eta * eta / (2.0 * k)
    phi = np.exp(-k * dt)
    cond_var = v * -np.expm1(-2.0 * k * dt)
    if v <= 0.0 or np.any(cond_var <= 0.0):
        return np.inf
    r = x[1:] - mu - phi * (x[:-1] - mu)
    nll = 0.5 * (math.log(2 * math.pi * v) + (x[0] - mu) ** 2 / v)
    nll += 0.5 * float(np.sum(np.log(2 * math.pi * cond_var) + r * r / cond_var))
    return nll


def _ou_profile(k, x, dt):
    """Profile out (mu, v) for a given k; returns (nll, mu, v, d nll / d k).

    v is the stationary variance eta^2 / 2k. Given k the likelihood is a
    weighted least-squares problem in mu with a closed-form variance.
    """
    phi = np.exp(-k * dt)
    q = -np.expm1(-2.0 * k * dt)
    one_m_phi = 1.0 - phi
    mu = (x[0] + float(np.sum(one_m_phi * (x[1:] - phi * x[:-1]) / q))) / (1.0 + float(np.sum(one_m_phi ** 2 / q)))
    e0 = x[0] - mu
    r = x[1:] - mu - phi * (x[:-1] - mu)
    v = (e0 * e0 + float(np.sum(r * r / q))) / len(x)
    nll = 0.5 * len(x) * (math.log(2 * math.pi * v) + 1.0) + 0.5 * float(np.sum(np.log(q)))
    # envelope theorem: the k-derivative at the profiled (mu, v)
    dq = 2.0 * dt * phi * phi
    dr = dt * phi * (x[:-1] - mu)
    grad = 0.5 * float(np.sum(dq / q + (2.0 * r * dr * q - r * r * dq) / (v * q * q)))
    return nll, mu, v, grad


def _numeric_hessian(f, x, step):
    x = np.asarray(x, dtype=float)
    n = len(x)
    H = np.empty((n, n))
    e = np.diag(step)
    for i in range(n):
        for j in range(i, n):
            v = (f(x + e[i] + e[j]) - f(x + e[i] - e[j]) - f(x - e[i] + e[j]) + f(x - e[i] - e[j]))
            H[i, j] = H[j, i] = v / (4 * step[i] * step[j])
    return H


def ou_fit(c_grid, values) -> OuFit:
    """Exact-likelihood fit of an OU process observed at times ``c_grid``.

    The first value is drawn from the stationary law N(mu, eta^2 / 2k), each
    later one from the exact Gaussian transition over the actual spacing.
    mu and the stationary variance are profiled out in closed form and k
    solves the profile score equation, all on centred data, so a shift of
    the input moves only mu. Standard errors come from the numerical
    Hessian of the full likelihood in (mu, k, eta).
    """
    t = np.asarray(c_grid, dtype=float)
    x = np.asarray(values, dtype=float)
    if len(x) < 3 or len(t) != len(x):
        raise ValueError("need at least 3 matching (c, value) pairs")
    dt = np.diff(t)
    if np.any(dt <= 0.0):
        raise ValueError("c_grid must be strictly increasing")
    centre = float(x.mean())
    xc = x - centre
    if float(np.max(np.abs(xc))) <= 1e-14 * max(1.0, abs(centre)):
        logger.warning("constant input: OU volatility at its zero boundary")
        nan3 = np.full(3, np.nan)
        return OuFit(mu=centre, k=math.nan, eta=0.0, se=nan3, loglik=math.inf, converged=False, degenerate=True)

    # starting value from the lag-one autocorrelation at the mean spacing
    step = float(dt.mean())
    rho1 = float(np.dot(xc[1:], xc[:-1]) / np.dot(xc, xc))
    k0 = -math.log(min(max(rho1, 1e-3), 1.0 - 1e-6)) / step
    res = optimize.minimize_scalar(lambda lk: _ou_profile(math.exp(lk), xc, dt)[0],
                                   bounds=(math.log(k0) - 12.0, math.log(k0) + 12.0), method="bounded",
                                   options={"xatol": 1e-10})
    lk = float(res.x)
    grad = lambda u: _ou_profile(math.exp(u), xc, dt)[3]  # noqa: E731
    width = 1e-4
    while width < 1.0 and grad(lk - width) * grad(lk + width) > 0.0:
        width *= 4.0
    if grad(lk - width) * grad(lk + width) > 0.0:
        raise OuFitError("OU likelihood has no interior maximum in the mean-reversion rate")
    lk = optimize.brentq(grad, lk - width, lk + width, xtol=1e-15, rtol=1e-15, maxiter=200)
    k = math.exp(lk)
    nll, mu_c, v, _ = _ou_profile(k, xc, dt)
    eta = math.sqrt(2.0 * k * v)
    natural = lambda q: _ou_negloglik([q[0], math.log(q[1]), math.log(q[2])], xc, dt)  # noqa: E731
    q_hat = np.array([mu_c, k, eta])
    H = _numeric_hessian(natural, q_hat, 1e-4 * np.array([eta / math.sqrt(2.0 * k), k, eta]))
    try:
        se = np.sqrt(np.diag(np.linalg.inv(H)))
    except np.linalg.LinAlgError:
        se = np.full(3, np.nan)
    return OuFit(mu=centre + mu_c, k=k, eta=eta, se=se, loglik=-nll, converged=True)


@dataclass
class UlrBridge:
    c_grid: np.ndarray
    theta_at_c: np.ndarray
    ou_fit: OuFit | None


def ulr_bridge(model, frame: RegressionFrame, kernel: str, c_grid, T: int | None = None,
               coord: int = 0) -> UlrBridge:
    """Date-T fits under kernel weights with support fractions ``c_grid``, then an OU fit
    of the chosen coordinate across the grid (spacing taken as c_{k+1} - c_k).

    ``ou_fit`` is None for fewer than 3 grid points or when the OU likelihood
    has no interior maximum.
    """
    c_grid = np.asarray(c_grid, dtype=float)
    if np.any(np.diff(c_grid) <= 0.0) or c_grid[0] <= 0.0 or c_grid[-1] > 1.0:
        raise ValueError("c_grid must be strictly increasing inside (0, 1]")
    T = frame.T if T is None else T
    thetas = []
    init = None
    for c in c_grid:
        scheme = WeightScheme.kernel_scaled(kernel, float(c), T)
        fit = tlml_fit(model, frame, scheme, T, init=init)
        thetas.append(fit.theta_hat)
        init = fit.theta_hat
    thetas = np.array(thetas)
    fit_ou = None
    if len(c_grid) >= 3:
        try:
            fit_ou = ou_fit(c_grid, thetas[:, coord])
        except OuFitError as exc:
            logger.warning("OU bridge fit failed: %s", exc)
    return UlrBridge(c_grid=c_grid, theta_at_c=thetas, ou_fit=fit_ou)
