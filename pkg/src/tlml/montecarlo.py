"""Scenario harness: simulate designs, estimate across weight schemes and
summarise deviations from the true parameter path."""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .estimator import FitOptions, FunctionalEstimate, functional_estimate
from .glim import RegressionFrame, get_model
from .sis import LAWS, Constant, EpidemicPath, LogAR1, ParamPath, UlrOU, simulate_epidemic
from .weights import WeightScheme

logger = logging.getLogger(__name__)

DESIGNS = ("constant", "log_ar1", "ulr_ou")
TARGETS = ("a", "R0")
DENSITY_POINTS = 512


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation design with its estimation settings.

    ``c=None`` means 0.98 a_star. ``rho_a``/``sigma`` drive the log-AR(1)
    contagion path, ``ou_k``/``ou_eta`` the long-run OU path (centred on
    a_star).
    """

    design: str = "constant"
    n: int = 5000
    N2_0: int = 85
    T: int = 600
    a_star: float = 0.2
    c: float | None = None
    rho_a: float = 0.99
    sigma: float = 0.01
    ou_k: float = 10.0
    ou_eta: float = 0.1
    schemes: tuple = (WeightScheme.geometric(0.1), WeightScheme.geometric(0.5), WeightScheme.geometric(0.9))
    law: str = "binomial"
    model: str = "poisson"
    t_min: int = 100
    replications: int = 1
    seed: int = 0
    workers: int = 1
    acf_max_lag: int = 20
    trim: tuple = (0.005, 0.995)

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValueError(f"design must be one of {DESIGNS}, got {self.design!r}")
        if self.law not in LAWS:
            raise ValueError(f"law must be one of {LAWS}, got {self.law!r}")
        get_model(self.model)
        if not 0 < self.N2_0 < self.n:
            raise ValueError("N2_0 must lie strictly between 0 and n")
        if not 2 <= self.t_min <= self.T:
            raise ValueError("t_min must lie in [2, T]")
        if self.replications < 1 or self.workers < 1:
            raise ValueError("replications and workers must be positive")
        if not 0.0 < self.a_star < 1.0:
            raise ValueError("a_star must lie in (0, 1)")
        alpha = 1.0 - self.c_value / self.a_star
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha = 1 - c/a_star = {alpha} must lie in (0, 1)")
        if not self.schemes:
            raise ValueError("at least one weight scheme is required")
        lo, hi = self.trim
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError("trim quantiles must satisfy 0 <= lo < hi <= 1")

    @property
    def c_value(self) -> float:
        return 0.98 * self.a_star if self.c is None else float(self.c)

    def dynamics(self):
        c = self.c_value
        if self.design == "constant":
            return Constant(self.a_star, c)
        if self.design == "log_ar1":
            return LogAR1(a_star=self.a_star, rho=self.rho_a, sigma=self.sigma, c=c, a0=self.a_star)
        return UlrOU(mu=self.a_star, k=self.ou_k, eta=self.ou_eta, T=self.T, c=c, a0=self.a_star)


@dataclass
class ReplicationResult:
    replication: int
    path: EpidemicPath
    params: ParamPath
    estimates: dict
    dates: np.ndarray
    deviations: dict = field(default_factory=dict)
    bound_hit: dict = field(default_factory=dict)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    replications: list


def _deviations(fe: FunctionalEstimate, params: ParamPath):
    dates = fe.dates
    theta = fe.theta()
    a_true = params.a[dates]
    R0_true = params.a[dates] + 1.0 - params.c[dates]
    hit = np.array([f is not None and f.any_bound_hit for f in fe.fits])
    devs = {"a": theta[:, 0] - a_true, "R0": theta[:, 0] + theta[:, 1] - R0_true}
    return devs, hit


def run_replication(config: ScenarioConfig, replication: int) -> ReplicationResult:
    """Simulate one path and estimate it under every scheme."""
    path, params = simulate_epidemic(config.dynamics(), config.n, config.N2_0, config.T, law=config.law,
                                     seed=config.seed, replication=replication)
    frame = RegressionFrame.from_counts(path.N2, config.n)
    model = get_model(config.model)
    out = ReplicationResult(replication=replication, path=path, params=params, estimates={},
                            dates=np.arange(config.t_min, config.T + 1))
    for scheme in config.schemes:
        fe = functional_estimate(model, frame, scheme, config.t_min, config.T, opts=FitOptions())
        if fe.errors:
            logger.info("replication %d, %s: %d failed dates", replication, scheme.label, len(fe.errors))
        out.estimates[scheme.label] = fe
        out.deviations[scheme.label], out.bound_hit[scheme.label] = _deviations(fe, params)
    return out


def _run_one(args):
    return run_replication(*args)


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    """All replications; results come back in replication order for any worker count."""
    jobs = [(config, r) for r in range(config.replications)]
    if config.workers == 1 or config.replications == 1:
        reps = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            reps = list(pool.map(_run_one, jobs))
    return ScenarioResult(config=config, replications=reps)


class InsufficientDataError(ValueError):
    """Too few points survive trimming to form statistics."""


@dataclass
class DeviationStats:
    mean: float
    sd: float
    skew: float
    kurt: float
    count: int
    retained: int
    trimmed: int
    failed: int
    total: int
    degenerate: bool = False


def deviation_stats(series, bound_hit=None, trim=(0.005, 0.995), min_points: int = 10) -> DeviationStats:
    """Moments of a deviation series after trimming.

    NaN entries count as failed dates. Dates flagged in ``bound_hit`` and
    values outside the ``trim`` sample quantiles are dropped. sd is the
    population standard deviation, skewness m3/m2^1.5 and kurtosis the raw
    m4/m2^2; both are NaN for a constant sample, flagged as degenerate.
    """
    x = np.asarray(series, dtype=float)
    total = len(x)
    ok = np.isfinite(x)
    failed = int(total - ok.sum())
    keep = ok.copy()
    if bound_hit is not None:
        keep &= ~np.asarray(bound_hit, dtype=bool)
    vals = x[keep]
    if len(vals):
        lo, hi = np.quantile(vals, trim)
        vals = vals[(vals >= lo) & (vals <= hi)]
    retained = len(vals)
    if retained < min_points:
        raise InsufficientDataError(f"only {retained} points retained, need {min_points}")
    mean = float(vals.mean())
    dev = vals - mean
    scale = float(np.max(np.abs(dev)))
    if scale == 0.0 or np.ptp(vals) == 0.0:
        return DeviationStats(mean=mean, sd=0.0, skew=math.nan, kurt=math.nan, count=retained,
                              retained=retained, trimmed=total - failed - retained, failed=failed,
                              total=total, degenerate=True)
    # moments of the rescaled deviations avoid underflow for tiny spreads
    u = dev / scale
    m2 = float(np.mean(u ** 2))
    skew = float(np.mean(u ** 3)) / m2 ** 1.5
    kurt = float(np.mean(u ** 4)) / m2 ** 2
    return DeviationStats(mean=mean, sd=scale * math.sqrt(m2), skew=skew, kurt=kurt, count=retained,
                          retained=retained, trimmed=total - failed - retained, failed=failed, total=total)


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    return 1.06 * float(np.std(x, ddof=1)) * len(x) ** -0.2


def kernel_density(series, bandwidth: float | None = None, points: int = DENSITY_POINTS):
    """Gaussian kernel density on an even grid spanning the data range +/- 3 bandwidths."""
    x = np.asarray(series, dtype=float)
    x = x[np.isfinite(x)]
    if len(x) < 10:
        raise InsufficientDataError("kernel density needs at least 10 points")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0.0:
        raise ValueError("zero variance: density bandwidth vanishes")
    grid = np.linspace(x.min() - 3.0 * h, x.max() + 3.0 * h, points)
    dens = np.empty(points)
    chunk = max(1, 2_000_000 // len(x))
    for i in range(0, points, chunk):
        u = (grid[i:i + chunk, None] - x[None, :]) / h
        dens[i:i + chunk] = np.exp(-0.5 * u * u).sum(axis=1)
    dens /= len(x) * h * math.sqrt(2.0 * math.pi)
    return grid, dens


@dataclass
class AcfResult:
    lags: np.ndarray
    acf_x: np.ndarray
    acf_y: np.ndarray
    cross_lags: np.ndarray
    cross: np.ndarray


def _corr_at(xd, yd, h, denom):
    # corr(x_{t+h}, y_t) with the full-sample variances in the denominator
    m = len(xd)
    if h >= 0:
        return float(np.dot(xd[h:], yd[:m - h])) / denom
    return float(np.dot(xd[:m + h], yd[-h:])) / denom


def acf_cross(x, y, max_lag: int) -> AcfResult:
    """Sample autocorrelations of x and y at lags 0..L and corr(x_{t+h}, y_t) for h = -L..L."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("series must have equal length")
    if len(x) <= max_lag + 10:
        raise ValueError("series too short for the requested lags")
    m = len(x)
    xd = x - x.mean()
    yd = y - y.mean()
    vx = float(np.dot(xd, xd)) / m
    vy = float(np.dot(yd, yd)) / m
    if vx <= 0.0 or vy <= 0.0:
        raise ValueError("degenerate variance")
    lags = np.arange(max_lag + 1)
    acf_x = np.array([_corr_at(xd, xd, h, m * vx) for h in lags])
    acf_y = np.array([_corr_at(yd, yd, h, m * vy) for h in lags])
    acf_x[0] = acf_y[0] = 1.0
    cl = np.arange(-max_lag, max_lag + 1)
    cross = np.array([_corr_at(xd, yd, h, m * math.sqrt(vx * vy)) for h in cl])
    return AcfResult(lags=lags, acf_x=acf_x, acf_y=acf_y, cross_lags=cl, cross=cross)


def sym_eig2(J) -> tuple:
    """Closed-form eigenvalues of a symmetric 2x2 matrix, largest first."""
    a, b, d = float(J[0][0]), 0.5 * (float(J[0][1]) + float(J[1][0])), float(J[1][1])
    mid = 0.5 * (a + d)
    rad = math.hypot(0.5 * (a - d), b)
    return mid + rad, mid - rad


def eigen_diagnostics(fits) -> np.ndarray:
    """Per-fit sorted eigenvalue pairs of J_hat; NaN rows for missing fits."""
    out = np.full((len(fits), 2), np.nan)
    for i, f in enumerate(fits):
        if f is None:
            continue
        J = f.J_hat if hasattr(f, "J_hat") else f
        out[i] = sym_eig2(J)
    return out


def loglik_trace(fits) -> np.ndarray:
    return np.array([math.nan if f is None else f.loglik for f in fits])


# ---- CSV output ---------------------------------------------------------

def fmt(v) -> str:
    """Shortest round-trip text for numbers; booleans as 0/1."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


PATH_HEADER = ["t", "N1", "N2", "N21", "N12", "a_t", "c_t"]
ESTIMATE_HEADER = ["t", "a_hat", "c_hat", "R0_hat", "loglik", "converged", "bound_hit", "eig1", "eig2", "foc_norm"]
STATS_HEADER = ["scheme", "target", "mean", "sd", "skew", "kurt", "count", "retained", "trimmed", "failed", "total"]


def write_path(path: EpidemicPath, params: ParamPath | None, filename) -> None:
    rows = []
    for t in range(path.T + 1):
        a_t = params.a[t] if params is not None else math.nan
        c_t = params.c[t] if params is not None else math.nan
        rows.append([t, path.N1[t], path.N2[t], path.N21[t], path.N12[t], a_t, c_t])
    write_csv(filename, PATH_HEADER, rows)


def read_path(filename):
    """Read a path CSV; returns (N2, n, a_t, c_t) with t = 0..T."""
    with open(filename, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{filename}: empty file")
    if rows[0] != PATH_HEADER:
        raise ValueError(f"{filename}: expected header {','.join(PATH_HEADER)}")
    body = rows[1:]
    if len(body) < 2:
        raise ValueError(f"{filename}: need at least two dated rows")
    try:
        t = np.array([int(r[0]) for r in body])
        N1 = np.array([int(r[1]) for r in body])
        N2 = np.array([int(r[2]) for r in body])
        a = np.array([float(r[5]) for r in body])
        c = np.array([float(r[6]) for r in body])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{filename}: malformed row ({exc})") from None
    if np.any(t != np.arange(len(t))):
        raise ValueError(f"{filename}: dates must run 0..T in order")
    n = N1 + N2
    if np.any(n != n[0]):
        raise ValueError(f"{filename}: N1 + N2 is not constant")
    return N2, int(n[0]), a, c


def estimate_rows(fe: FunctionalEstimate):
    eig = eigen_diagnostics(fe.fits)
    for i, (t, f) in enumerate(zip(fe.dates, fe.fits)):
        if f is None:
            yield [t] + [math.nan] * 4 + [False, False] + [math.nan] * 3
            continue
        a_hat, one_m_c = float(f.theta_hat[0]), float(f.theta_hat[1])
        yield [t, a_hat, 1.0 - one_m_c, a_hat + one_m_c, f.loglik, f.converged, f.any_bound_hit,
               eig[i, 0], eig[i, 1], f.foc_norm]


def write_estimates(fe: FunctionalEstimate, filename) -> None:
    write_csv(filename, ESTIMATE_HEADER, estimate_rows(fe))


def _stats_or_nan(series, hit, trim):
    try:
        return deviation_stats(series, bound_hit=hit, trim=trim)
    except InsufficientDataError:
        x = np.asarray(series, dtype=float)
        failed = int((~np.isfinite(x)).sum())
        return DeviationStats(mean=math.nan, sd=math.nan, skew=math.nan, kurt=math.nan, count=0, retained=0,
                              trimmed=len(x) - failed, failed=failed, total=len(x), degenerate=True)


def replication_stats(rep: ReplicationResult, config: ScenarioConfig) -> dict:
    """{(scheme label, target): DeviationStats}."""
    out = {}
    for label, devs in rep.deviations.items():
        for target in TARGETS:
            out[(label, target)] = _stats_or_nan(devs[target], rep.bound_hit[label], config.trim)
    return out


def _stats_row(label, target, st: DeviationStats):
    return [label, target, st.mean, st.sd, st.skew, st.kurt, st.count, st.retained, st.trimmed, st.failed, st.total]


def _retained_values(series, hit, trim):
    x = np.asarray(series, dtype=float)
    keep = np.isfinite(x) & ~np.asarray(hit, dtype=bool)
    vals = x[keep]
    if len(vals):
        lo, hi = np.quantile(vals, trim)
        vals = vals[(vals >= lo) & (vals <= hi)]
    return vals


def write_replication(rep: ReplicationResult, config: ScenarioConfig, outdir) -> dict:
    os.makedirs(outdir, exist_ok=True)
    write_path(rep.path, rep.params, os.path.join(outdir, "path.csv"))
    stats = replication_stats(rep, config)
    loglik_cols = []
    for scheme in config.schemes:
        label = scheme.label
        fe = rep.estimates[label]
        write_estimates(fe, os.path.join(outdir, f"estimates_{label}.csv"))
        devs, hit = rep.deviations[label], rep.bound_hit[label]
        write_csv(os.path.join(outdir, f"deviations_{label}.csv"), ["t", "dev_a", "dev_R0", "bound_hit", "failed"],
                  ([t, devs["a"][i], devs["R0"][i], hit[i], fe.fits[i] is None] for i, t in enumerate(fe.dates)))
        for target in TARGETS:
            vals = _retained_values(devs[target], hit, config.trim)
            try:
                grid, dens = kernel_density(vals)
                rows = zip(grid, dens)
            except ValueError:
                rows = []
            write_csv(os.path.join(outdir, f"density_{label}_{target}.csv"), ["x", "density"], rows)
        ok = np.isfinite(devs["a"]) & np.isfinite(devs["R0"])
        for target, other in (("a", "R0"), ("R0", "a")):
            rows = []
            try:
                res = acf_cross(devs[target][ok], devs[other][ok], config.acf_max_lag)
                for j, h in enumerate(res.cross_lags):
                    rows.append([h, res.acf_x[abs(h)], res.cross[j]])
            except ValueError:
                pass
            write_csv(os.path.join(outdir, f"acf_{label}_{target}.csv"), ["lag", "acf", f"cross_{other}"], rows)
        eig = eigen_diagnostics(fe.fits)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = eig[:, 1] / eig[:, 0]
        write_csv(os.path.join(outdir, f"eigen_{label}.csv"), ["t", "eig1", "eig2", "ratio"],
                  ([t, eig[i, 0], eig[i, 1], ratio[i]] for i, t in enumerate(fe.dates)))
        loglik_cols.append(loglik_trace(fe.fits))
    labels = [s.label for s in config.schemes]
    write_csv(os.path.join(outdir, "loglik.csv"), ["t"] + labels,
              ([t] + [col[i] for col in loglik_cols] for i, t in enumerate(rep.dates)))
    write_csv(os.path.join(outdir, "stats.csv"), STATS_HEADER,
              (_stats_row(label, target, stats[(label, target)]) for label in labels for target in TARGETS))
    return stats


def average_stats(per_rep: list, labels) -> dict:
    """Average the per-replication statistics (NaN-aware); counts are summed."""
    out = {}
    for label in labels:
        for target in TARGETS:
            items = [s[(label, target)] for s in per_rep]

            def avg(name):
                vals = np.array([getattr(s, name) for s in items], dtype=float)
                vals = vals[np.isfinite(vals)]
                return float(vals.mean()) if len(vals) else math.nan

            out[(label, target)] = DeviationStats(
                mean=avg("mean"), sd=avg("sd"), skew=avg("skew"), kurt=avg("kurt"),
                count=sum(s.count for s in items), retained=sum(s.retained for s in items),
                trimmed=sum(s.trimmed for s in items), failed=sum(s.failed for s in items),
                total=sum(s.total for s in items))
    return out


def write_scenario(result: ScenarioResult, outdir) -> dict:
    """Write the scenario CSV bundle; returns the (averaged) statistics."""
    config = result.config
    os.makedirs(outdir, exist_ok=True)
    labels = [s.label for s in config.schemes]
    if len(result.replications) == 1:
        return write_replication(result.replications[0], config, outdir)
    per_rep = []
    rows = []
    for rep in result.replications:
        st = write_replication(rep, config, os.path.join(outdir, f"rep_{rep.replication:03d}"))
        per_rep.append(st)
        for label in labels:
            for target in TARGETS:
                rows.append([rep.replication] + _stats_row(label, target, st[(label, target)]))
    write_csv(os.path.join(outdir, "stats_replications.csv"), ["replication"] + STATS_HEADER, rows)
    avg = average_stats(per_rep, labels)
    write_csv(os.path.join(outdir, "stats.csv"), STATS_HEADER,
              (_stats_row(label, target, avg[(label, target)]) for label in labels for target in TARGETS))
    return avg
