"""Probing densities: the law of ``h(U)`` for ``U`` uniform on an input box.

When no closed form is available the density is estimated by pushing
uniform draws through the model and fitting a Gaussian product-kernel
density estimate. For Euler-discretised SDEs the closed form is
:func:`sde_uniform_density`.
"""

from __future__ import annotations

import math
import subprocess
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import _kernels
from ._accel import use_numba
from .core import ForwardModel, LogDensity, make_rng
from .errors import ConfigurationError, ExternalModelError, SingularDiffusionError
from .io import read_matrix_csv, write_matrix_csv

__all__ = [
    "InputBox",
    "ProbeResult",
    "KdeModel",
    "uniform_probe",
    "kde_fit",
    "silverman_bandwidth",
    "sde_uniform_density",
    "command_model",
    "infer_output_dim",
    "save_probes",
    "load_probes",
]


@dataclass(frozen=True)
class InputBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigurationError("box bounds must be vectors of equal length")
        if not np.all(np.isfinite(lo) & np.isfinite(hi)) or np.any(lo >= hi):
            raise ConfigurationError("box needs finite lower < upper in every coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def sample(self, rng, count) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.random((count, self.dim))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= self.lower) & (x <= self.upper)))


@dataclass
class ProbeResult:
    outputs: np.ndarray
    n_requested: int
    n_dropped: int
    dropped_inputs: np.ndarray

    def summary(self) -> dict:
        out = {"count": self.outputs.shape[0], "dropped": self.n_dropped}
        for d in range(self.outputs.shape[1]):
            col = self.outputs[:, d]
            out[f"y{d + 1}_mean"] = float(col.mean())
            out[f"y{d + 1}_sd"] = float(col.std(ddof=1)) if col.size > 1 else 0.0
            out[f"y{d + 1}_min"] = float(col.min())
            out[f"y{d + 1}_max"] = float(col.max())
        return out


def uniform_probe(model: ForwardModel, box: InputBox, count: int, seed: int,
                  jobs: int = 1, shard_size: int = 4096) -> ProbeResult:
    """Push ``count`` uniform draws from ``box`` through ``model``.

    All inputs are drawn up front from one generator, so the result does not
    depend on ``jobs``. Rows with non-finite outputs are dropped and counted.
    """
    if count < 1:
        raise ConfigurationError("probe count must be positive")
    if box.dim != model.input_dim:
        raise ConfigurationError(f"box has dimension {box.dim}, model expects {model.input_dim}")
    inputs = box.sample(make_rng(seed), int(count))
    shards = [inputs[i:i + shard_size] for i in range(0, count, shard_size)]

    def run(i):
        try:
            return model.batch(shards[i])
        except ExternalModelError as exc:
            # report the line number within the whole probe run
            if exc.line is not None:
                raise ExternalModelError(exc.detail, line=exc.line + i * shard_size) from None
            raise

    if jobs > 1 and len(shards) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run, range(len(shards))))
    else:
        parts = [run(i) for i in range(len(shards))]
    outputs = np.concatenate(parts, axis=0)
    good = np.all(np.isfinite(outputs), axis=1)
    dropped = inputs[~good]
    if dropped.shape[0]:
        warnings.warn(f"{dropped.shape[0]} probe inputs gave non-finite outputs; first: {dropped[0].tolist()}")
    return ProbeResult(outputs[good], int(count), int(dropped.shape[0]), dropped)


def _run_command(argv, xs, first_line=1):
    text = "".join(" ".join(map(repr, row)) + "\n" for row in xs.tolist())
    try:
        proc = subprocess.run(argv, input=text, capture_output=True, text=True, check=False)
    except OSError as exc:
        raise ExternalModelError(f"cannot start {argv[0]!r}: {exc}") from None
    if proc.returncode != 0:
        raise ExternalModelError(
            f"{argv[0]!r} exited with status {proc.returncode}: {proc.stderr.strip()[:200]}")
    lines = proc.stdout.splitlines()
    if len(lines) != xs.shape[0]:
        raise ExternalModelError(
            f"{argv[0]!r} wrote {len(lines)} lines for {xs.shape[0]} inputs",
            line=first_line + min(len(lines), xs.shape[0]))
    rows = []
    width = None
    for i, line in enumerate(lines):
        lineno = first_line + i
        try:
            row = [float(v) for v in line.split()]
        except ValueError:
            raise ExternalModelError(f"not numeric: {line[:80]!r}", line=lineno) from None
        if width is None:
            width = len(row)
        if not row or len(row) != width:
            raise ExternalModelError(f"expected {width} values, got {len(row)}", line=lineno)
        rows.append(row)
    return np.array(rows, dtype=float)


def command_model(argv, input_dim: int, output_dim: int) -> ForwardModel:
    """Forward model backed by a child process.

    The child reads one whitespace-separated input vector per line on stdin
    and writes one output vector per line on stdout. A batch costs one
    process launch. Failures raise :class:`ExternalModelError` naming the
    offending output line.
    """
    argv = list(argv)
    if not argv:
        raise ConfigurationError("empty command")

    def batch(xs):
        return _run_command(argv, np.atleast_2d(xs))

    return ForwardModel(input_dim, output_dim, lambda x: batch(x[None, :])[0], batch, name=argv[0])


def infer_output_dim(argv, point) -> int:
    """Number of values the command writes for a single input line."""
    return _run_command(list(argv), np.atleast_2d(np.asarray(point, dtype=float))).shape[1]


def silverman_bandwidth(probes) -> np.ndarray:
    """``1.06 * sd * M**(-1/5)`` per column."""
    probes = np.asarray(probes, dtype=float)
    return 1.06 * probes.std(axis=0, ddof=1) * probes.shape[0] ** -0.2


class KdeModel:
    """Gaussian product-kernel density estimate.

    ``log_eval(y)`` is
    ``log[(1/M) sum_j prod_d phi((y_d - p_jd) / b_d) / b_d]``.
    """

    def __init__(self, points, bandwidth, floored_dims: Tuple[int, ...] = ()):
        self.points = np.ascontiguousarray(points, dtype=float)
        self.bandwidth = np.ascontiguousarray(bandwidth, dtype=float)
        self.floored_dims = tuple(floored_dims)
        if self.points.ndim != 2 or self.points.shape[0] < 2:
            raise ConfigurationError("KDE needs at least two probe points")
        if self.bandwidth.shape != (self.points.shape[1],) or np.any(self.bandwidth <= 0):
            raise ConfigurationError("bandwidth must be positive, one per output dimension")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def logpdf(self, queries) -> np.ndarray:
        q = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype=float)))
        if q.shape[1] != self.dim:
            q = q.reshape(-1, self.dim)
        if use_numba():
            return _kernels.kde_logpdf_numba(self.points, self.bandwidth, q)
        return _kernels.kde_logpdf_numpy(self.points, self.bandwidth, q)

    def log_eval(self, y) -> float:
        return float(self.logpdf(np.reshape(y, (1, self.dim)))[0])

    def pdf(self, queries) -> np.ndarray:
        return np.exp(self.logpdf(queries))

    def grad_log_eval(self, y) -> np.ndarray:
        """Analytic gradient of :meth:`log_eval`."""
        y = np.asarray(y, dtype=float).reshape(self.dim)
        r = (y - self.points) / self.bandwidth
        e = -0.5 * np.sum(r * r, axis=1)
        w = np.exp(e - e.max())
        w /= w.sum()
        return -(w @ r) / self.bandwidth

    def as_log_density(self) -> LogDensity:
        return LogDensity(self.dim, self.log_eval, name="kde")

    def tabulated(self, lower, upper, n_grid: int = 4097) -> LogDensity:
        """Log-density interpolated linearly on a regular grid over ``[lower, upper]``.

        Exact KDE evaluation costs ``O(M)`` per point, too slow for long
        chains with many probes. Points outside the grid fall back to the exact
        evaluation.
        """
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != (self.dim,) or upper.shape != (self.dim,) or np.any(lower >= upper):
            raise ConfigurationError("grid bounds must satisfy lower < upper per dimension")
        if n_grid < 2:
            raise ConfigurationError("n_grid must be at least 2")
        axes = [np.linspace(lo, hi, n_grid) for lo, hi in zip(lower, upper)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        values = self.logpdf(mesh)

        if self.dim == 1:
            grid, vals = axes[0], values
            lo, hi = float(lower[0]), float(upper[0])

            def log_eval(y):
                v = float(np.reshape(y, -1)[0])
                if lo <= v <= hi:
                    return float(np.interp(v, grid, vals))
                return self.log_eval(y)
        else:
            interp = RegularGridInterpolator(axes, values.reshape([n_grid] * self.dim))

            def log_eval(y):
                y = np.asarray(y, dtype=float).reshape(self.dim)
                if np.all((y >= lower) & (y <= upper)):
                    return float(interp(y[None, :])[0])
                return self.log_eval(y)

        return LogDensity(self.dim, log_eval, name="kde_tabulated")


def kde_fit(probes, bandwidth=None, floor: float = 1e-8) -> KdeModel:
    """Fit a Gaussian product-kernel KDE with Silverman bandwidths.

    ``bandwidth`` overrides the rule (scalar or per dimension). A column with
    zero spread gets the bandwidth ``floor * max(1, |mean|)`` and a warning.
    """
    probes = np.asarray(probes, dtype=float)
    if probes.ndim == 1:
        probes = probes[:, None]
    if probes.ndim != 2 or probes.shape[0] < 2:
        raise ConfigurationError("KDE needs at least two probe points")
    if not np.all(np.isfinite(probes)):
        raise ConfigurationError("probe matrix contains non-finite values")
    m = probes.shape[1]
    if bandwidth is not None:
        bw = np.broadcast_to(np.asarray(bandwidth, dtype=float), (m,)).copy()
        return KdeModel(probes, bw)
    bw = silverman_bandwidth(probes)
    floored = tuple(int(d) for d in np.flatnonzero(~(bw > 0)))
    if floored:
        scale = np.maximum(1.0, np.abs(probes.mean(axis=0)))
        bw[list(floored)] = floor * scale[list(floored)]
        warnings.warn(f"zero probe variance in output dimensions {floored}; bandwidth floored")
    return KdeModel(probes, bw, floored)


def sde_uniform_density(modelspec, increments) -> float:
    """Log probing density of the Euler innovation map, up to a constant.

    ``sum_i log|a(x_i, t_i)|`` along the path built from ``increments`` when
    every ``|dx_i| <= rho``, else ``-inf``.
    """
    inc = np.asarray(increments, dtype=float)
    if inc.shape != (modelspec.n_steps,):
        raise ConfigurationError(f"expected {modelspec.n_steps} increments, got shape {inc.shape}")
    if np.any(np.abs(inc) > modelspec.rho) or not np.all(np.isfinite(inc)):
        return -math.inf
    path = np.cumsum(np.concatenate(([modelspec.x0], inc)))
    t = np.arange(modelspec.n_steps) * modelspec.dt
    a = np.broadcast_to(np.asarray(modelspec.diffusion(path[:-1], t), dtype=float), inc.shape)
    zero = np.flatnonzero(np.abs(a) < _kernels.SINGULAR_TOL)
    if zero.size:
        raise SingularDiffusionError(f"diffusion vanishes at step {int(zero[0])}", step=int(zero[0]))
    return float(np.sum(np.log(np.abs(a))))


def save_probes(path, outputs):
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    header = [f"y{d + 1}" for d in range(outputs.shape[1])]
    return write_matrix_csv(path, header, outputs)


def load_probes(path) -> np.ndarray:
    header, data = read_matrix_csv(path)
    expected = [f"y{d + 1}" for d in range(len(header))]
    if header != expected:
        raise ConfigurationError(f"{path}: probe header must be {','.join(expected)}")
    return data
