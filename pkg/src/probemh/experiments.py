"""Checks shared by the command line and the acceptance suite."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
from scipy import stats

from .analysis import (
    effective_sample_size,
    empirical_autocorr,
    empirical_pdf,
    ks_critical_value,
    l1_density_distance,
)
from .errors import ConfigurationError
from .sde import PathEnsemble, gbm_analytic_pdf, gbm_normalized_autocorr

__all__ = [
    "FULL_GBM",
    "DESK_GBM",
    "pooled_ess",
    "KsReport",
    "ks_per_coordinate",
    "mean_abs_correlation",
    "GbmReport",
    "gbm_report",
    "check_gbm",
]

# mu, sigma, x0, t_end, n_steps, rho, half-width, total, burn-in, thinning
FULL_GBM = dict(mu=1.0, sigma=0.5, x0=1.0, t_end=1.0, n_steps=100, rho=2.0,
                 proposal_half_width=0.2, total_steps=5_100_000, burn_in=100_000, thinning=50)
DESK_GBM = dict(FULL_GBM, total_steps=600_000)


def pooled_ess(traces) -> float:
    """Sum of per-chain ESS for a ``(chains, samples)`` array."""
    traces = np.atleast_2d(np.asarray(traces, dtype=float))
    return float(sum(effective_sample_size(t) for t in traces))


@dataclass
class KsReport:
    statistic: np.ndarray
    ess: np.ndarray
    critical_each: np.ndarray  # per-coordinate test at ``level``
    critical_family: np.ndarray  # Bonferroni, ``level / n_coords``
    level: float

    @property
    def fails_each(self) -> int:
        return int(np.sum(self.statistic >= self.critical_each))

    @property
    def fails_family(self) -> int:
        return int(np.sum(self.statistic >= self.critical_family))

    @property
    def passed(self) -> bool:
        return self.fails_family == 0


def ks_per_coordinate(samples, cdf, level: float = 0.01) -> KsReport:
    """One KS test per coordinate of ``(chains, samples, coords)`` draws.

    Critical values use the pooled ESS of each coordinate instead of the raw
    sample count, since chain output is autocorrelated. ``passed`` holds
    the whole family to ``level`` (Bonferroni): with ``d`` independent
    coordinates each tested at ``level`` a perfect sampler would still fail
    some test with probability ``1 - (1 - level)**d``.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 2:
        samples = samples[None]
    c, k, d = samples.shape
    flat = samples.reshape(c * k, d)
    stat = np.array([stats.kstest(flat[:, j], cdf).statistic for j in range(d)])
    ess = np.array([pooled_ess(samples[:, :, j]) for j in range(d)])
    return KsReport(stat, ess, ks_critical_value(ess, level), ks_critical_value(ess, level / d), level)


def mean_abs_correlation(samples) -> float:
    """Mean of ``|corr|`` over distinct coordinate pairs of a ``(rows, coords)`` array."""
    c = np.corrcoef(np.asarray(samples, dtype=float).T)
    iu = np.triu_indices(c.shape[0], 1)
    return float(np.mean(np.abs(c[iu])))


@dataclass
class GbmReport:
    metrics: Dict[str, float] = field(default_factory=dict)
    pdf_tables: Dict[float, np.ndarray] = field(default_factory=dict)  # (bins, 4)
    analytic_pdf: Dict[float, np.ndarray] = field(default_factory=dict)  # (points, 2)
    autocorr_tables: Dict[float, np.ndarray] = field(default_factory=dict)  # (N, 3)
    l1: Dict[float, float] = field(default_factory=dict)
    autocorr_dev: Dict[float, float] = field(default_factory=dict)
    ks: KsReport = None
    mean_abs_corr: float = math.nan


def _grid_index(model, t):
    i = int(round(t / model.dt))
    if not 1 <= i <= model.n_steps or abs(i * model.dt - t) > 1e-9 * max(1.0, t):
        raise ConfigurationError(f"time {t} is not a positive point of the time grid")
    return i


def gbm_report(ens: PathEnsemble, mu: float, sigma: float, times: Sequence[float] = (0.1, 0.5, 1.0),
               fixed_s: Sequence[float] = (0.1, 0.5, 1.0), n_bins: int = 60,
               pdf_range=(0.0, 8.0), ks_level: float = 0.01, analytic_points: int = 801) -> GbmReport:
    """Compare a GBM path ensemble with the closed-form marginals and correlations."""
    model = ens.model
    rep = GbmReport()
    paths = ens.paths()
    flat = paths.reshape(-1, paths.shape[-1])
    m = rep.metrics
    diag = ens.diagnostics
    m["samples"] = flat.shape[0]
    m["acceptance_rate"] = diag.acceptance_rate
    m["rejected_out_of_support"] = diag.rejected_out_of_support
    m["rejected_singular"] = diag.rejected_singular

    xs = np.linspace(pdf_range[0], pdf_range[1], analytic_points)[1:]
    for t in times:
        i = _grid_index(model, t)
        hist = empirical_pdf(flat[:, i], n_bins, pdf_range)
        f = lambda x, t=t: gbm_analytic_pdf(mu, sigma, model.x0, t, x)
        rep.l1[t] = l1_density_distance(hist, f)
        rep.pdf_tables[t] = np.column_stack([hist.edges[:-1], hist.edges[1:], hist.midpoints,
                                             hist.normalized_density])
        rep.analytic_pdf[t] = np.column_stack([xs, f(xs)])
        m[f"l1_pdf_t{t:g}"] = rep.l1[t]
        m[f"outside_range_t{t:g}"] = hist.n_outside
        m[f"ess_x_t{t:g}"] = pooled_ess(paths[:, :, i])

    grid = np.arange(1, model.n_steps + 1)
    for s in fixed_s:
        si = _grid_index(model, s)
        emp = np.array([empirical_autocorr(flat, si, j) for j in grid])
        ana = gbm_normalized_autocorr(mu, sigma, s, grid * model.dt)
        rep.autocorr_tables[s] = np.column_stack([grid * model.dt, emp, ana])
        rep.autocorr_dev[s] = float(np.max(np.abs(emp - ana)))
        m[f"autocorr_max_dev_s{s:g}"] = rep.autocorr_dev[s]

    innov = ens.innovations().reshape(ens.n_chains, -1, model.n_steps)
    rep.ks = ks_per_coordinate(innov, stats.norm(0.0, math.sqrt(model.dt)).cdf, ks_level)
    rep.mean_abs_corr = mean_abs_correlation(innov.reshape(-1, model.n_steps))
    m["ks_max"] = float(rep.ks.statistic.max())
    m["ks_min_ess"] = float(rep.ks.ess.min())
    m["ks_fails_per_coordinate"] = rep.ks.fails_each
    m["ks_fails_familywise"] = rep.ks.fails_family
    m["innovation_mean_abs_corr"] = rep.mean_abs_corr
    return rep


def check_gbm(rep: GbmReport, l1_threshold: float, autocorr_threshold: float = 0.08,
              corr_threshold: float = 0.03) -> List[str]:
    """Names of the failed checks (empty when everything passes)."""
    failed = [f"l1_pdf_t{t:g}" for t, v in rep.l1.items() if not v < l1_threshold]
    failed += [f"autocorr_s{s:g}" for s, v in rep.autocorr_dev.items() if not v <= autocorr_threshold]
    if not rep.ks.passed:
        failed.append("innovation_ks")
    if not rep.mean_abs_corr < corr_threshold:
        failed.append("innovation_corr")
    return failed
