"""Kolmogorov-Smirnov distance to a centred normal, moment summaries and
log-log order fits."""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import ContractViolation

KS_QUANTILE_99 = 1.63


@dataclass(frozen=True)
class KsReport:
    statistic: float
    n: int
    reference_variance: float
    pass_threshold: float
    slack: float = 2.0

    @property
    def passed(self):
        return self.statistic < self.pass_threshold

    def as_dict(self):
        return {"statistic": self.statistic, "n": self.n,
                "reference_variance": self.reference_variance,
                "pass_threshold": self.pass_threshold, "slack": self.slack,
                "passed": self.passed}


def ks_to_normal(samples, variance, threshold=None, slack=2.0):
    """sup_x |F_n(x) - Phi(x / sqrt(variance))|, evaluated exactly at the samples.

    The default pass threshold is ``slack * 1.63 / sqrt(n)`` (99% Kolmogorov
    quantile times a slack for simulation bias).  No p-value is reported.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.size
    if n == 0:
        raise ContractViolation("ks_to_normal needs at least one sample")
    if threshold is None:
        threshold = slack * KS_QUANTILE_99 / np.sqrt(n)
    if not variance > 0:
        if variance == 0 and np.all(x == 0):
            return KsReport(0.0, n, 0.0, float(threshold), slack)
        raise ContractViolation(f"variance must be positive for non-degenerate samples, got {variance}")
    cdf = ndtr(x / np.sqrt(variance))
    ranks = np.arange(1, n + 1)
    d_plus = np.max(ranks / n - cdf)
    d_minus = np.max(cdf - (ranks - 1) / n)
    return KsReport(float(max(d_plus, d_minus)), n, float(variance), float(threshold), slack)


@dataclass(frozen=True)
class OrderFit:
    slope: float
    intercept: float
    r_squared: float
    points: list = field(default_factory=list)

    def as_dict(self):
        return {"slope": self.slope, "intercept": self.intercept,
                "r_squared": self.r_squared, "points": [list(p) for p in self.points]}


def fit_order(points):
    """Least-squares line through ``(log tau, log error)``."""
    pts = [(float(t), float(e)) for t, e in points]
    if len(pts) < 3:
        raise ContractViolation(f"fit_order needs at least 3 points, got {len(pts)}")
    if any(t <= 0 or e <= 0 for t, e in pts):
        raise ContractViolation("fit_order needs positive step sizes and errors; floor errors "
                                "at the Monte-Carlo noise level and report inconclusive instead")
    lx = np.log([t for t, _ in pts])
    ly = np.log([e for _, e in pts])
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else 1.0 - np.sum(resid ** 2) / ss_tot
    r2 = float(min(1.0, max(0.0, r2)))
    return OrderFit(float(slope), float(intercept), r2,
                    [(float(a), float(b)) for a, b in zip(lx, ly)])


def batch_means_stderr(values, n_batches=30):
    """Standard error of the mean of a (possibly correlated) series by batch means."""
    v = np.asarray(values, dtype=np.float64).ravel()
    n = v.size
    k = min(n_batches, n)
    if k < 2:
        return 0.0
    size = n // k
    means = v[: size * k].reshape(k, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(k))


def summarize(samples, p_list=(2, 4, 8), n_batches=30):
    """``{p: (mean |x|^p, batch-means stderr)}`` for each even ``p``."""
    x = np.abs(np.asarray(samples, dtype=np.float64).ravel())
    if x.size == 0:
        raise ContractViolation("summarize needs at least one sample")
    out = {}
    for p in p_list:
        vals = x ** p
        out[int(p)] = (float(vals.mean()), batch_means_stderr(vals, n_batches))
    return out


def mean_and_stderr(values):
    """Sample mean and its standard error.

    The spread is computed on values rescaled by their largest magnitude so
    that squaring tiny (e.g. 1e-200) samples cannot underflow to zero.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        return float(v.mean()), 0.0
    scale = float(np.max(np.abs(v)))
    if scale == 0 or not np.isfinite(scale):
        return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))
    return float(v.mean()), float(scale * (v / scale).std(ddof=1) / np.sqrt(v.size))


@dataclass(frozen=True)
class PlateauReport:
    sup_second_quarter: float
    sup_last_half: float
    slope_last_half: float
    rel_tol: float
    slope_tol: float

    @property
    def passed(self):
        gap_ok = abs(self.sup_last_half - self.sup_second_quarter) <= self.rel_tol * self.sup_second_quarter
        return bool(gap_ok and abs(self.slope_last_half) <= self.slope_tol)

    def as_dict(self):
        return {"sup_second_quarter": self.sup_second_quarter,
                "sup_last_half": self.sup_last_half, "slope_last_half": self.slope_last_half,
                "rel_tol": self.rel_tol, "slope_tol": self.slope_tol, "passed": self.passed}


def plateau_check(curve, rel_tol=0.25, slope_tol=1e-6):
    """Stationarity of a running moment ``curve[n]``, n = 0..N.

    Compares the sup over ``[N/2, N]`` with the sup over ``[N/4, N/2]`` and
    fits a straight line in ``n`` over the last half.
    """
    c = np.asarray(curve, dtype=np.float64)
    N = c.size - 1
    if N < 8:
        raise ContractViolation("plateau_check needs at least 9 points")
    q, h = N // 4, N // 2
    last = c[h:]
    slope = float(np.polyfit(np.arange(h, N + 1, dtype=np.float64), last, 1)[0])
    return PlateauReport(float(c[q:h + 1].max()), float(last.max()), slope, rel_tol, slope_tol)
