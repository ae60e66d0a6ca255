"""Temporally local maximum likelihood: weighted fits at a date and over time."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .glim import DomainError, RegressionFrame, get_model
from .weights import WeightScheme, weight_vector

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
# extra Newton steps allowed once the gradient test already passes
POLISH_STEPS = 10


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-8
    max_iter: int = 100
    # Box overrides; None uses the model's own bounds.
    lower: tuple | None = None
    upper: tuple | None = None


@dataclass
class TlmlFit:
    theta_hat: np.ndarray
    loglik: float
    converged: bool
    bound_hit: np.ndarray
    iterations: int
    foc_norm: float
    J_hat: np.ndarray
    eigenvalues: np.ndarray
    T: int
    fallback_steps: int = 0
    n_used: int = 0

    @property
    def any_bound_hit(self) -> bool:
        return bool(np.any(self.bound_hit))


@dataclass
class FunctionalEstimate:
    dates: np.ndarray
    fits: list
    scheme: WeightScheme
    model: str
    errors: dict = field(default_factory=dict)

    def theta(self) -> np.ndarray:
        """Per-date estimates with NaN rows for failed dates."""
        d = get_model(self.model).dim
        out = np.full((len(self.fits), d), np.nan)
        for i, f in enumerate(self.fits):
            if f is not None:
                out[i] = f.theta_hat
        return out


@dataclass
class _Window:
    y: np.ndarray
    z: np.ndarray
    w: np.ndarray
    W: float


def _window(model, frame: RegressionFrame, scheme: WeightScheme, T: int) -> _Window:
    y, z = frame.window(T)
    w = weight_vector(scheme, T)[::-1]  # oldest date first, w(T - t)
    keep = model.usable(y, z) & (w > 0.0)
    if z.shape[1] and np.any(~model.usable(y, z) & (y > 0)):
        raise DomainError("positive count following a zero count cannot be evaluated")
    y, z, w = y[keep], z[keep], w[keep]
    return _Window(y=y, z=z, w=w, W=float(w.sum()))


def _objective(model, win: _Window, theta) -> float:
    return float(np.dot(win.w, model.logl(win.y, win.z, theta))) / win.W


def _grad_hess(model, win: _Window, theta):
    score, hess = model.score_hessian(win.y, win.z, theta)
    g = win.w @ score / win.W
    H = np.einsum("t,tij->ij", win.w, hess) / win.W
    scale = float(win.w @ np.abs(score).max(axis=1)) / win.W if score.size else 0.0
    return g, 0.5 * (H + H.T), scale


def weighted_objective(model, frame: RegressionFrame, scheme: WeightScheme, T: int, theta) -> float:
    """Weighted average of dated log-likelihoods at date ``T``."""
    win = _window(model, frame, scheme, T)
    if win.W <= 0.0:
        raise DomainError(f"no usable observations up to date {T}")
    return _objective(model, win, np.asarray(theta, dtype=float))


def _bounds(model, opts: FitOptions):
    lo = model.lower if opts.lower is None else np.asarray(opts.lower, dtype=float)
    hi = model.upper if opts.upper is None else np.asarray(opts.upper, dtype=float)
    return lo, hi


def _active(theta, g, lo, hi):
    return ((theta <= lo) & (g <= 0.0)) | ((theta >= hi) & (g >= 0.0))


def _direction(g, H, free):
    """Newton direction on free coordinates.

    If the free block is not negative definite, curvature magnitudes are
    used instead (eigenvalues replaced by their floored absolute values),
    which still gives an ascent direction; the flag reports that fallback.
    """
    d = np.zeros_like(g)
    if not np.any(free):
        return d, False
    Hf = H[np.ix_(free, free)]
    gf = g[free]
    eig, vec = np.linalg.eigh(-Hf)
    top = max(float(np.max(np.abs(eig))), 1e-300)
    if eig[0] > 1e-14 * top:
        d[free] = np.linalg.solve(-Hf, gf)
        if np.dot(d[free], gf) > 0.0:
            return d, False
    if top <= 1e-300:
        d[free] = gf
        return d, True
    mag = np.maximum(np.abs(eig), 1e-10 * top)
    d[free] = vec @ ((vec.T @ gf) / mag)
    return d, True


def _projected_gradient(theta, g, lo, hi):
    pg = g.copy()
    pg[_active(theta, g, lo, hi)] = 0.0
    return pg


def _eps_active(theta, g, lo, hi):
    """Coordinates close to a bound whose gradient points out of the box."""
    width = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
    eps = min(1e-3, float(np.linalg.norm(theta - np.clip(theta + g, lo, hi))))
    near_lo = (theta - lo <= eps * width) & (g < 0.0)
    near_hi = (hi - theta <= eps * width) & (g > 0.0)
    return near_lo | near_hi | _active(theta, g, lo, hi)


def _face_candidate(g, H, theta, act, lo, hi):
    """Snap ``act`` onto its bounds and Newton-solve the rest on that face."""
    cand = theta.copy()
    cand[act] = np.where(g[act] > 0.0, hi[act], lo[act])
    free = ~act
    if np.any(free):
        shift = cand - theta
        g_face = g.copy()
        g_face[free] += H[np.ix_(free, act)] @ shift[act]
        d, _ = _direction(g_face, H, free)
        cand[free] = np.clip(theta[free] + d[free], lo[free], hi[free])
    return cand


def _pg_norm(model, win, theta, lo, hi) -> float:
    g, _, _ = _grad_hess(model, win, theta)
    return float(np.linalg.norm(_projected_gradient(theta, g, lo, hi)))


def _solve(model, win: _Window, init, opts: FitOptions):
    lo, hi = _bounds(model, opts)
    theta = np.clip(np.asarray(init, dtype=float), lo, hi)
    f = _objective(model, win, theta)
    fallbacks = 0
    polishing = 0
    it = 0
    for it in range(1, opts.max_iter + 1):
        g, H, scale = _grad_hess(model, win, theta)
        pg_norm = float(np.linalg.norm(_projected_gradient(theta, g, lo, hi)))
        d, used_fallback = _direction(g, H, ~_active(theta, g, lo, hi))
        # keep polishing past the gradient test until Newton steps vanish, so
        # weakly identified directions settle independently of the start
        polishing += pg_norm <= opts.tol * max(1.0, scale)
        settled = used_fallback or np.max(np.abs(d)) <= 1e-12 * (1.0 + np.max(np.abs(theta)))
        if polishing > POLISH_STEPS or (polishing and settled):
            break
        # float resolution of the objective; changes below it are noise
        noise = 1e-13 * max(1.0, abs(f))
        cand = None
        act = _eps_active(theta, g, lo, hi)
        if np.any(act & (theta > lo) & (theta < hi)):
            # a coordinate is about to reach its bound: jump onto the face,
            # otherwise backtracking only creeps towards it geometrically
            trial = _face_candidate(g, H, theta, act, lo, hi)
            fc = _objective(model, win, trial)
            if fc > f + noise:
                cand = trial
        if cand is None:
            fallbacks += used_fallback
            step = 1.0
            while step > 1e-16:
                trial = np.clip(theta + step * d, lo, hi)
                if not np.any(trial != theta):
                    break
                fc = _objective(model, win, trial)
                gain = float(np.dot(g, trial - theta))
                if fc >= f + ARMIJO * gain or (abs(gain) <= noise and fc >= f - noise):
                    cand = trial
                    break
                step *= 0.5
            if cand is None:
                # objective differences are at roundoff: judge by stationarity
                trial = np.clip(theta + d, lo, hi)
                if np.any(trial != theta) and _pg_norm(model, win, trial, lo, hi) < pg_norm:
                    cand, fc = trial, _objective(model, win, trial)
        if cand is None:
            break
        theta, f = cand, fc
    return theta, f, it, fallbacks


def weighted_information(model, win: _Window, theta) -> np.ndarray:
    """-sum w Hessian / sum w with exactly rounded sums (J = 1 exactly for a unit Gaussian)."""
    _, hess = model.score_hessian(win.y, win.z, theta)
    flat = hess.reshape(len(win.y), -1)
    W = math.fsum(win.w)
    J = np.array([-math.fsum(win.w * flat[:, k]) / W for k in range(flat.shape[1])])
    J = J.reshape(hess.shape[1:])
    return 0.5 * (J + J.T)


def _finish(model, win: _Window, theta, f, iterations, fallbacks, T, opts: FitOptions) -> TlmlFit:
    lo, hi = _bounds(model, opts)
    g, _, scale = _grad_hess(model, win, theta)
    J = weighted_information(model, win, theta)
    eig = np.sort(np.linalg.eigvalsh(J))[::-1]
    bound_hit = _active(theta, g, lo, hi)
    pg = _projected_gradient(theta, g, lo, hi)
    converged = float(np.linalg.norm(pg)) <= opts.tol * max(1.0, scale) and len(win.y) >= 2
    return TlmlFit(theta_hat=theta, loglik=f, converged=bool(converged), bound_hit=bound_hit,
                   iterations=iterations, foc_norm=float(np.linalg.norm(g)), J_hat=J,
                   eigenvalues=eig, T=T, fallback_steps=fallbacks, n_used=len(win.y))


def tlml_fit(model, frame: RegressionFrame, scheme: WeightScheme, T: int, init=None,
             opts: FitOptions = FitOptions()) -> TlmlFit:
    """Maximise the date-``T`` weighted log-likelihood over the parameter box.

    Projected Newton with an active set and backtracking on the objective.
    Windows with fewer than two usable observations are still solved but
    reported as not converged. A date whose own observation is unusable
    (the chain already absorbed at zero) raises DomainError.
    """
    win = _window(model, frame, scheme, T)
    if len(win.y) == 0:
        raise DomainError(f"no usable observations up to date {T}")
    y_T, z_T = frame.window(T)
    if not model.usable(y_T[-1:], z_T[-1:])[0]:
        raise DomainError(f"date {T} carries no information (chain absorbed at zero)")
    if init is None:
        init = np.full(model.dim, 0.5) if model.dim == 2 else np.zeros(model.dim)
    theta, f, it, fb = _solve(model, win, init, opts)
    if fb:
        logger.debug("date %d: %d gradient fallback steps", T, fb)
    return _finish(model, win, theta, f, it, fb, T, opts)


def ilml_step(model, frame: RegressionFrame, scheme: WeightScheme, T: int, theta_prev,
              opts: FitOptions = FitOptions()) -> np.ndarray:
    """One projected Newton-Raphson step on the date-T objective from ``theta_prev``."""
    win = _window(model, frame, scheme, T)
    lo, hi = _bounds(model, opts)
    theta = np.asarray(theta_prev, dtype=float)
    g, H, _ = _grad_hess(model, win, theta)
    free = ~_active(theta, g, lo, hi)
    d, _ = _direction(g, H, free)
    return np.clip(theta + d, lo, hi)


def functional_estimate(model, frame: RegressionFrame, scheme: WeightScheme, t_min: int,
                        T: int | None = None, warm_start: bool = True,
                        opts: FitOptions = FitOptions(), init=None) -> FunctionalEstimate:
    """Fits at every date t_min..T, each using observations up to its own date.

    Dates whose fit raises are recorded in ``errors`` and hold ``None``.
    """
    if t_min < 2:
        raise ValueError("t_min must be at least 2")
    T = frame.T if T is None else T
    dates = np.arange(t_min, T + 1)
    fits = []
    errors = {}
    start = init
    for t in dates:
        try:
            fit = tlml_fit(model, frame, scheme, int(t), init=start, opts=opts)
        except (DomainError, np.linalg.LinAlgError, FloatingPointError) as exc:
            errors[int(t)] = str(exc)
            fits.append(None)
            continue
        fits.append(fit)
        if warm_start:
            start = fit.theta_hat
    return FunctionalEstimate(dates=dates, fits=fits, scheme=scheme, model=model.name, errors=errors)


def gaussian_closed_form(y, scheme: WeightScheme, T: int | None = None) -> float:
    """Weighted average sum_h w(h) y_{T-h} / sum_h w(h); ``y`` holds y_1..y_T."""
    y = np.asarray(y, dtype=float)
    T = len(y) if T is None else T
    w = weight_vector(scheme, T)[::-1]
    return float(np.dot(w, y[:T]) / w.sum())


@dataclass
class OlsFit:
    theta: np.ndarray
    singular: bool
    n_obs: int


def rolling_ols_fit(frame: RegressionFrame, H: int, T: int) -> OlsFit:
    """No-intercept least squares of y_t on z_{t-1} over the last ``H`` dates."""
    start = max(1, T - H + 1)
    y = frame.y[start:T + 1]
    z = frame.z[start:T + 1]
    if len(y) < 2:
        raise ValueError("rolling window needs at least two observations")
    theta, _, rank, _ = np.linalg.lstsq(z, y, rcond=None)
    singular = rank < z.shape[1]
    if singular:
        theta = np.linalg.pinv(z) @ y
    return OlsFit(theta=theta, singular=bool(singular), n_obs=len(y))
