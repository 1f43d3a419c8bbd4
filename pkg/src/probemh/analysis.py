"""Post-processing of sampler output: histograms, correlations, ESS, distances."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConfigurationError, DomainError

__all__ = [
    "Histogram",
    "empirical_pdf",
    "empirical_autocorr",
    "l1_density_distance",
    "effective_sample_size",
    "ks_statistic",
    "ks_critical_value",
]


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    n_outside: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def normalized_density(self) -> np.ndarray:
        if self.total == 0:
            return np.zeros_like(self.widths)
        return self.counts / (self.total * self.widths)


def empirical_pdf(samples, n_bins: int, range) -> Histogram:
    """Density-normalised histogram over ``range`` with ``n_bins`` equal bins.

    Samples outside the range are excluded from the normalisation and reported
    in ``n_outside``.
    """
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if samples.size == 0:
        raise ConfigurationError("no samples")
    if n_bins < 1:
        raise ConfigurationError("n_bins must be >= 1")
    lo, hi = float(range[0]), float(range[1])
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ConfigurationError("range must be finite with lo < hi")
    edges = np.linspace(lo, hi, n_bins + 1)
    inside = (samples >= lo) & (samples <= hi)
    n_outside = int(samples.size - inside.sum())
    if n_outside == samples.size:
        raise ConfigurationError(f"all {n_outside} samples fall outside [{lo}, {hi}]")
    counts, _ = np.histogram(samples[inside], bins=edges)
    return Histogram(edges, counts.astype(np.int64), n_outside)


def empirical_autocorr(paths, s_index: int, t_index: int) -> float:
    """Sample correlation of ``X_s`` and ``X_t`` across an ensemble of paths."""
    paths = np.asarray(paths, dtype=float)
    if paths.ndim != 2 or paths.shape[0] < 2:
        raise ConfigurationError("need at least two paths")
    xs = paths[:, s_index]
    xt = paths[:, t_index]
    ds = xs - xs.mean()
    dt = xt - xt.mean()
    vs = float(ds @ ds)
    vt = float(dt @ dt)
    if vs == 0.0 or vt == 0.0:
        raise DomainError("zero variance at one of the time indices")
    r = float(ds @ dt) / math.sqrt(vs * vt)
    return max(-1.0, min(1.0, r))


def l1_density_distance(hist: Histogram, analytic) -> float:
    """``sum_b |density_b - f(mid_b)| * width_b``."""
    f = np.asarray(analytic(hist.midpoints), dtype=float)
    return float(np.sum(np.abs(hist.normalized_density - f) * hist.widths))


def _autocorrelation(trace):
    x = trace - trace.mean()
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(x, size)
    acov = np.fft.irfft(spec * np.conjugate(spec), size)[:n] / n
    return acov / acov[0]


def effective_sample_size(trace, return_flag: bool = False):
    """Initial positive sequence estimate of the effective sample size.

    Sums autocorrelation pairs ``rho_{2k} + rho_{2k+1}`` while they stay
    positive. The estimate is capped at the trace length; with
    ``return_flag=True`` the return value is ``(ess, capped)``.
    """
    trace = np.asarray(trace, dtype=float).reshape(-1)
    n = trace.size
    if n < 10:
        raise ConfigurationError("trace must have at least 10 values")
    if np.all(trace == trace[0]):
        raise DomainError("constant trace; autocorrelation undefined")
    rho = _autocorrelation(trace)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    capped = tau <= 1.0
    ess = float(n) if capped else n / tau
    return (ess, capped) if return_flag else ess


def ks_statistic(samples, cdf) -> float:
    """One-sample Kolmogorov-Smirnov distance to ``cdf``."""
    return float(stats.kstest(np.asarray(samples, dtype=float).reshape(-1), cdf).statistic)


def ks_critical_value(n: float, level: float = 0.01) -> float:
    """Critical KS distance at significance ``level`` for ``n`` samples."""
    n_int = np.maximum(1, np.floor(np.asarray(n, dtype=float))).astype(np.int64)
    out = stats.kstwo.isf(level, n_int)
    return float(out) if np.ndim(out) == 0 else out
