"""One-sided weight schemes w(h) and their cumulated sums.

Lag ``h = 0`` is the current date, larger ``h`` reaches further into the
past. All schemes are nonnegative and nonincreasing in ``h``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

KINDS = ("uniform", "rolling", "geometric", "hyperbolic", "kernel")
KERNEL_SHAPES = ("uniform", "triangular", "epanechnikov")

# Above this horizon W2_T(r) switches from the direct double sum to the
# O(T) cross-term recursion.
DIRECT_SUM_MAX_T = 10_000


@dataclass(frozen=True)
class WeightScheme:
    """Tagged description of a weight sequence.

    Build instances through the classmethods rather than the constructor;
    only the fields relevant to ``kind`` are set.
    """

    kind: str
    H: Optional[int] = None
    rho: Optional[float] = None
    c_exp: Optional[float] = None
    kernel: Optional[str] = None
    c_frac: Optional[float] = None
    T_ref: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown weight scheme {self.kind!r}")
        if self.kind == "rolling" and (self.H is None or int(self.H) != self.H or self.H < 1):
            raise ValueError("rolling window H must be a positive integer")
        if self.kind == "geometric" and not (self.rho is not None and 0.0 < self.rho < 1.0):
            raise ValueError(f"geometric rho must lie in (0, 1), got {self.rho}")
        if self.kind == "hyperbolic" and not (self.c_exp is not None and self.c_exp > 0.0):
            raise ValueError(f"hyperbolic exponent must be positive, got {self.c_exp}")
        if self.kind == "kernel":
            if self.kernel not in KERNEL_SHAPES:
                raise ValueError(f"kernel shape must be one of {KERNEL_SHAPES}, got {self.kernel!r}")
            if not (self.c_frac is not None and 0.0 < self.c_frac <= 1.0):
                raise ValueError(f"kernel c_frac must lie in (0, 1], got {self.c_frac}")
            if self.T_ref is None or int(self.T_ref) != self.T_ref or self.T_ref < 1:
                raise ValueError("kernel T_ref must be a positive integer")

    @classmethod
    def uniform(cls) -> "WeightScheme":
        return cls("uniform")

    @classmethod
    def rolling(cls, H: int) -> "WeightScheme":
        return cls("rolling", H=H)

    @classmethod
    def geometric(cls, rho: float) -> "WeightScheme":
        return cls("geometric", rho=float(rho))

    @classmethod
    def hyperbolic(cls, c_exp: float) -> "WeightScheme":
        return cls("hyperbolic", c_exp=float(c_exp))

    @classmethod
    def kernel_scaled(cls, kernel: str, c_frac: float, T_ref: int) -> "WeightScheme":
        return cls("kernel", kernel=kernel, c_frac=float(c_frac), T_ref=int(T_ref))

    @property
    def label(self) -> str:
        """Short filesystem-safe name, e.g. ``geometric_0.9``."""
        if self.kind == "uniform":
            return "uniform"
        if self.kind == "rolling":
            return f"rolling_{self.H}"
        if self.kind == "geometric":
            return f"geometric_{self.rho!r}"
        if self.kind == "hyperbolic":
            return f"hyperbolic_{self.c_exp!r}"
        return f"kernel_{self.kernel}_{self.c_frac!r}_{self.T_ref}"

    def to_dict(self) -> dict:
        out = {"type": self.kind}
        for key in ("H", "rho", "c_exp", "kernel", "c_frac", "T_ref"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "WeightScheme":
        doc = dict(doc)
        kind = doc.pop("type", None)
        if kind == "kernel_scaled":
            kind = "kernel"
        allowed = {
            "uniform": set(),
            "rolling": {"H"},
            "geometric": {"rho"},
            "hyperbolic": {"c_exp"},
            "kernel": {"kernel", "c_frac", "T_ref"},
        }
        if kind not in allowed:
            raise ValueError(f"unknown weight scheme type {kind!r}")
        extra = set(doc) - allowed[kind]
        if extra:
            raise ValueError(f"unknown key(s) for {kind} scheme: {sorted(extra)}")
        missing = allowed[kind] - set(doc)
        if missing:
            raise ValueError(f"missing key(s) for {kind} scheme: {sorted(missing)}")
        return cls(kind, **doc)


def kernel_shape(name: str, u):
    """Evaluate a one-sided kernel profile on ``u >= 0`` (zero beyond 1)."""
    u = np.asarray(u, dtype=float)
    inside = u <= 1.0
    if name == "uniform":
        out = np.ones_like(u)
    elif name == "triangular":
        out = 1.0 - u
    elif name == "epanechnikov":
        out = 1.0 - u * u
    else:
        raise ValueError(f"unknown kernel shape {name!r}")
    return np.where(inside, out, 0.0)


def weight(scheme: WeightScheme, h: int) -> float:
    """Return w(h) for a single lag ``h >= 0``."""
    if h < 0:
        raise ValueError("lag must be nonnegative")
    return float(weight_vector(scheme, h + 1)[h])


def weight_vector(scheme: WeightScheme, T: int) -> np.ndarray:
    """Return ``[w(0), ..., w(T-1)]``."""
    h = np.arange(T, dtype=float)
    kind = scheme.kind
    if kind == "uniform":
        return np.ones(T)
    if kind == "rolling":
        return (h < scheme.H).astype(float)
    if kind == "geometric":
        return scheme.rho ** h
    if kind == "hyperbolic":
        out = np.ones(T)
        # w(0) = 1 by convention; (1/h)^c is undefined at h = 0
        out[1:] = h[1:] ** (-scheme.c_exp)
        return out
    cutoff = math.floor(scheme.c_frac * scheme.T_ref)
    out = kernel_shape(scheme.kernel, h / scheme.T_ref)
    out[h > cutoff] = 0.0
    return out


@dataclass(frozen=True)
class WeightSums:
    W_T: float
    W2_T: float
    W2_T_r: float
    T: int
    r: float


def mixing_double_sum(w: np.ndarray, r: float, method: str = "auto") -> float:
    """Compute sum_h sum_k w(h) w(k) r^|h-k|.

    ``method`` is ``"direct"`` (row-by-row double sum), ``"recursive"``
    (cross terms accumulated as A_h = r (A_{h-1} + w_{h-1})) or ``"auto"``.
    """
    w = np.asarray(w, dtype=float)
    if r == 0.0:
        return float(np.sum(w * w))
    T = len(w)
    if method == "auto":
        method = "direct" if T <= DIRECT_SUM_MAX_T else "recursive"
    if method == "direct":
        idx = np.arange(T)
        total = 0.0
        for h in range(T):
            total += w[h] * float(np.dot(w, r ** np.abs(idx - h)))
        return total
    if method != "recursive":
        raise ValueError(f"unknown method {method!r}")
    cross = 0.0
    acc = 0.0
    for h in range(1, T):
        acc = r * (acc + w[h - 1])
        cross += w[h] * acc
    return float(np.sum(w * w) + 2.0 * cross)


def cumulated_sums(scheme: WeightScheme, T: int, r: float = 0.0) -> WeightSums:
    """W_T, W2_T and the mixing-adjusted W2_T(r) over lags 0..T-1."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if not 0.0 <= r < 1.0:
        raise ValueError("mixing rate r must lie in [0, 1)")
    w = weight_vector(scheme, T)
    W2 = float(np.sum(w * w))
    W2r = W2 if r == 0.0 else mixing_double_sum(w, r)
    return WeightSums(W_T=float(np.sum(w)), W2_T=W2, W2_T_r=W2r, T=T, r=r)


def consistency_ratio(scheme: WeightScheme, T: int, r: float = 0.0) -> float:
    """W2_T(r) / W_T^2; tends to zero in the consistent (global) regime."""
    sums = cumulated_sums(scheme, T, r)
    if sums.W_T <= 0.0:
        raise ValueError("weights sum to zero")
    return sums.W2_T_r / sums.W_T ** 2
