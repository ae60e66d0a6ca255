"""Discrete-time stochastic SIS chain and its parameter dynamics.

Counts follow the convention ``N1(t) + N2(t) = n`` with ``N2`` the
infected. Date 0 carries the initial state; transition ``t-1 -> t`` uses
the parameters ``(a[t], c[t])``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

PARAM_FLOOR = 1e-6
PARAM_CEIL = 1.0 - 1e-6
LAWS = ("binomial", "poisson", "poisson_positive")


class SimulationError(ValueError):
    """Raised for transition probabilities outside [0, 1] and similar."""


def make_rng(master_seed: int, index: int = 0, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for (master seed, replication, sub-stream)."""
    ss = np.random.SeedSequence([int(master_seed), int(index), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SisParams:
    a: float
    c: float
    n: int

    def __post_init__(self):
        if not (0.0 < self.a < 1.0 and 0.0 < self.c < 1.0):
            raise ValueError("a and c must lie in (0, 1)")
        if self.n < 1:
            raise ValueError("population must be positive")

    @property
    def alpha(self) -> float:
        return 1.0 - self.c / self.a

    @property
    def stationary(self) -> bool:
        return 0.0 < self.alpha < 1.0


@dataclass(frozen=True)
class Constant:
    a: float
    c: float


@dataclass(frozen=True)
class LogAR1:
    """log a_t - log a* = rho (log a_{t-1} - log a*) + sigma u_t."""

    a_star: float
    rho: float
    sigma: float
    c: float
    a0: float = 0.2


@dataclass(frozen=True)
class UlrOU:
    """a_t = theta(t / T) for a stationary OU process with the given (mu, k, eta).

    ``a0=None`` draws the starting value from the stationary law.
    """

    mu: float
    k: float
    eta: float
    T: int
    c: float
    a0: float | None = None


ParamDynamics = Union[Constant, LogAR1, UlrOU]


@dataclass
class ParamPath:
    """Parameter values for dates 0..T (entry 0 is the initial value)."""

    a: np.ndarray
    c: np.ndarray
    clip_events: int = 0

    @property
    def T(self) -> int:
        return len(self.a) - 1


@dataclass
class EpidemicPath:
    """Counts for dates 0..T; migration counts at date 0 are zero."""

    N1: np.ndarray
    N2: np.ndarray
    N21: np.ndarray
    N12: np.ndarray
    n: int
    seed: tuple = ()
    law: str = "binomial"
    cap_events: int = 0

    @property
    def T(self) -> int:
        return len(self.N2) - 1


def _validate_dynamics(dyn: ParamDynamics) -> None:
    if isinstance(dyn, Constant):
        if not (0.0 <= dyn.a <= 1.0 and 0.0 <= dyn.c <= 1.0):
            raise ValueError("constant a and c must lie in [0, 1]")
    elif isinstance(dyn, LogAR1):
        if not -1.0 < dyn.rho < 1.0:
            raise ValueError(f"LogAR1 rho must lie in (-1, 1), got {dyn.rho}")
        if dyn.sigma < 0.0:
            raise ValueError("LogAR1 sigma must be nonnegative")
        if dyn.a_star <= 0.0 or dyn.a0 <= 0.0:
            raise ValueError("LogAR1 a_star and a0 must be positive")
    elif isinstance(dyn, UlrOU):
        if dyn.k <= 0.0:
            raise ValueError("UlrOU k must be positive")
        if dyn.eta <= 0.0:
            raise ValueError("UlrOU eta must be positive")
        if dyn.T < 1:
            raise ValueError("UlrOU horizon must be positive")
    else:
        raise TypeError(f"unknown dynamics {type(dyn).__name__}")


def simulate_param_path(dyn: ParamDynamics, T: int, seed=0) -> ParamPath:
    """Draw a_t for t = 0..T; c_t is held constant.

    ``seed`` is an integer or a ``numpy.random.Generator``. Stochastic
    variants are clipped into [1e-6, 1 - 1e-6] and clip events counted;
    constant paths are returned as given.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    _validate_dynamics(dyn)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, 0, 0)
    c = np.full(T + 1, float(dyn.c))
    if isinstance(dyn, Constant):
        return ParamPath(a=np.full(T + 1, float(dyn.a)), c=c)
    if isinstance(dyn, LogAR1):
        u = rng.standard_normal(T)
        x = np.empty(T + 1)
        x[0] = math.log(dyn.a0 / dyn.a_star)
        for t in range(1, T + 1):
            x[t] = dyn.rho * x[t - 1] + dyn.sigma * u[t - 1]
        # a* exp(x) keeps a_t == a* bit-exact when x == 0
        a = dyn.a_star * np.exp(x)
    else:
        phi = math.exp(-dyn.k / dyn.T)
        stat_var = dyn.eta ** 2 / (2.0 * dyn.k)
        step_sd = math.sqrt(stat_var * -math.expm1(-2.0 * dyn.k / dyn.T))
        u = rng.standard_normal(T + 1)
        a = np.empty(T + 1)
        a[0] = dyn.mu + math.sqrt(stat_var) * u[0] if dyn.a0 is None else dyn.a0
        for t in range(1, T + 1):
            a[t] = dyn.mu + phi * (a[t - 1] - dyn.mu) + step_sd * u[t]
    clipped = (a < PARAM_FLOOR) | (a > PARAM_CEIL)
    a = np.clip(a, PARAM_FLOOR, PARAM_CEIL)
    return ParamPath(a=a, c=c, clip_events=int(clipped.sum()))


def logistic_solution(p2_0: float, a: float, alpha: float, t):
    """Closed-form solution of dp/dt = a p (alpha - p) started at p2_0."""
    if not 0.0 < p2_0 < 1.0:
        raise ValueError("p2_0 must lie in (0, 1)")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return alpha / (1.0 + (alpha - p2_0) / p2_0 * np.exp(-a * alpha * np.asarray(t, dtype=float)))


def binomial_step(N2_prev: int, a_t: float, c_t: float, n: int, rng: np.random.Generator):
    """Draw (N21, N22): new infections and infected who stay infected."""
    if not 0 <= N2_prev <= n:
        raise SimulationError(f"N2_prev={N2_prev} outside [0, {n}]")
    p_inf = a_t * N2_prev / n
    p_stay = 1.0 - c_t
    if not 0.0 <= p_inf <= 1.0:
        raise SimulationError(f"infection probability a*N2/n = {p_inf} outside [0, 1]")
    if not 0.0 <= p_stay <= 1.0:
        raise SimulationError(f"retention probability 1-c = {p_stay} outside [0, 1]")
    N21 = int(rng.binomial(n - N2_prev, p_inf))
    N22 = int(rng.binomial(N2_prev, p_stay))
    return N21, N22


def poisson_intensity(N2_prev, a_t, c_t, n):
    return a_t * (n - N2_prev) * N2_prev / n + (1.0 - c_t) * N2_prev


def poisson_step(N2_prev: int, a_t: float, c_t: float, n: int, rng: np.random.Generator,
                 restrict_positive: bool = False) -> int:
    """Draw N2(t) from the Poisson approximation of the binomial convolution.

    With ``restrict_positive`` and a positive previous count, zero draws are
    rejected, which samples the zero-truncated Poisson law.
    """
    lam = poisson_intensity(N2_prev, a_t, c_t, n)
    if lam <= 0.0:
        return 0
    draw = int(rng.poisson(lam))
    if restrict_positive and N2_prev > 0:
        while draw == 0:
            draw = int(rng.poisson(lam))
    return draw


def simulate_epidemic(dyn: ParamDynamics, n: int, N2_0: int, T: int, law: str = "binomial",
                      seed=0, replication: int = 0, params: ParamPath | None = None):
    """Simulate the count path; returns ``(EpidemicPath, ParamPath)``.

    The parameter path and the counts use separate sub-streams of the
    (seed, replication) generator, so changing the parameter noise does not
    shift the count draws. Under the Poisson laws, migration counts are the
    net flows and N2 is capped at n (cap events are counted).
    """
    if not 0 < N2_0 < n:
        raise ValueError("N2_0 must lie strictly between 0 and n")
    if law not in LAWS:
        raise ValueError(f"law must be one of {LAWS}, got {law!r}")
    if params is None:
        params = simulate_param_path(dyn, T, make_rng(seed, replication, 0))
    elif params.T != T:
        raise ValueError("parameter path length does not match T")
    rng = make_rng(seed, replication, 1)
    N2 = np.zeros(T + 1, dtype=np.int64)
    N21 = np.zeros(T + 1, dtype=np.int64)
    N12 = np.zeros(T + 1, dtype=np.int64)
    N2[0] = N2_0
    caps = 0
    for t in range(1, T + 1):
        prev = int(N2[t - 1])
        a_t, c_t = float(params.a[t]), float(params.c[t])
        if law == "binomial":
            new_inf, stay = binomial_step(prev, a_t, c_t, n, rng)
            N21[t] = new_inf
            N12[t] = prev - stay
            N2[t] = new_inf + stay
        else:
            cur = poisson_step(prev, a_t, c_t, n, rng, restrict_positive=(law == "poisson_positive"))
            if cur > n:
                cur = n
                caps += 1
            N2[t] = cur
            N21[t] = max(cur - prev, 0)
            N12[t] = max(prev - cur, 0)
    path = EpidemicPath(N1=n - N2, N2=N2, N21=N21, N12=N12, n=n,
                        seed=(int(seed), int(replication)), law=law, cap_events=caps)
    return path, params


def check_path(path: EpidemicPath) -> list[str]:
    """Return a list of violated conservation identities (empty when clean)."""
    problems = []
    N1, N2, N21, N12 = path.N1, path.N2, path.N21, path.N12
    if np.any(N1 + N2 != path.n):
        problems.append("N1 + N2 != n")
    if np.any(N2[1:] != N2[:-1] + N21[1:] - N12[1:]):
        problems.append("N2(t) != N2(t-1) + N21(t) - N12(t)")
    if np.any(N21[1:] < 0) or np.any(N21[1:] > N1[:-1]):
        problems.append("N21 outside [0, N1(t-1)]")
    if np.any(N12[1:] < 0) or np.any(N12[1:] > N2[:-1]):
        problems.append("N12 outside [0, N2(t-1)]")
    if path.law != "poisson_positive":
        dead = np.flatnonzero(N2[:-1] == 0)
        if dead.size and np.any(N2[dead + 1] != 0):
            problems.append("escape from absorbing state 0")
    return problems
