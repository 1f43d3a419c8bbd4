"""Sampling solution paths of a scalar Ito SDE through its Euler innovations.

A path is parametrised by its increment vector ``dx = (x_1 - x_0, ...,
x_N - x_{N-1})``. The forward model maps increments to innovations

    y_i = (dx_i - b(x_{i-1}, t_{i-1}) dt) / a(x_{i-1}, t_{i-1}),

which for a true Euler path are i.i.d. ``N(0, dt)``. Sampling increments
with the probing-corrected Metropolis rule and a Gaussian target on the
innovations therefore produces Euler solution paths.
"""

from __future__ import annotations

import functools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import _kernels
from ._accel import is_jitted, njit, use_numba
from .core import ChainConfig, ChainDiagnostics, ForwardModel, LogDensity, make_rng
from .errors import ConfigurationError, DomainError, InvalidStateError, SingularDiffusionError

__all__ = [
    "SdePathModel",
    "PathSample",
    "PathEnsemble",
    "coefficient",
    "gbm_model",
    "constant_coefficient_model",
    "increments_to_path",
    "path_to_innovations",
    "innovations_to_increments",
    "gaussian_innovation_target",
    "default_initial_increments",
    "sde_forward_model",
    "sde_probe_log_density",
    "sde_accept_log_ratio",
    "sample_paths",
    "gbm_analytic_pdf",
    "gbm_analytic_autocorr",
    "gbm_normalized_autocorr",
]


def coefficient(fn):
    """Compile a drift or diffusion function ``f(x, t)`` for the fast sampler.

    The function must also work elementwise on numpy arrays, which is what the
    numpy backend passes it.
    """
    return njit(cache=False, nogil=True)(fn)


@dataclass(frozen=True)
class SdePathModel:
    """``dX = b(X, t) dt + a(X, t) dW`` on ``[0, t_end]`` with ``X_0 = x0``.

    ``rho`` bounds every increment of a sampled path: ``|dx_i| <= rho``.
    """

    drift: Callable
    diffusion: Callable
    x0: float
    t_end: float
    n_steps: int
    rho: float
    name: str = "sde"

    def __post_init__(self):
        if not self.t_end > 0:
            raise ConfigurationError("t_end must be positive")
        if int(self.n_steps) < 1:
            raise ConfigurationError("n_steps must be positive")
        if not self.rho > 0:
            raise ConfigurationError("rho must be positive")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "x0", float(self.x0))

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def jitted(self) -> bool:
        return is_jitted(self.drift) and is_jitted(self.diffusion)


@functools.lru_cache(maxsize=None)
def _gbm_coefficients(mu, sigma):
    @coefficient
    def drift(x, t):
        return mu * x

    @coefficient
    def diffusion(x, t):
        return sigma * x

    return drift, diffusion


@functools.lru_cache(maxsize=None)
def _constant_coefficients(b, a):
    @coefficient
    def drift(x, t):
        return 0.0 * x + b

    @coefficient
    def diffusion(x, t):
        return 0.0 * x + a

    return drift, diffusion


def gbm_model(mu=1.0, sigma=0.5, x0=1.0, t_end=1.0, n_steps=100, rho=2.0) -> SdePathModel:
    """Geometric Brownian motion ``dX = mu X dt + sigma X dW``."""
    drift, diffusion = _gbm_coefficients(float(mu), float(sigma))
    return SdePathModel(drift, diffusion, x0, t_end, n_steps, rho, name=f"gbm(mu={mu}, sigma={sigma})")


def constant_coefficient_model(drift=0.0, diffusion=1.0, x0=0.0, t_end=1.0, n_steps=10, rho=10.0) -> SdePathModel:
    """``dX = b dt + a dW`` with constant ``b`` and ``a``."""
    b, a = _constant_coefficients(float(drift), float(diffusion))
    return SdePathModel(b, a, x0, t_end, n_steps, rho, name=f"constant(b={drift}, a={diffusion})")


def _as_increments(model, increments):
    inc = np.asarray(increments, dtype=float)
    if inc.shape != (model.n_steps,):
        raise ConfigurationError(f"expected {model.n_steps} increments, got shape {inc.shape}")
    return inc


def _coef(fn, x, t):
    return np.broadcast_to(np.asarray(fn(x, t), dtype=float), np.shape(x))


def increments_to_path(model: SdePathModel, increments) -> np.ndarray:
    """``x_0 = x0``, ``x_i = x_{i-1} + dx_i``."""
    inc = _as_increments(model, increments)
    return np.cumsum(np.concatenate(([model.x0], inc)))


def path_to_innovations(model: SdePathModel, increments) -> np.ndarray:
    """Euler innovations of the path with the given increments."""
    inc = _as_increments(model, increments)
    xprev = increments_to_path(model, inc)[:-1]
    t = model.times[:-1]
    a = _coef(model.diffusion, xprev, t)
    small = np.flatnonzero(np.abs(a) < _kernels.SINGULAR_TOL)
    if small.size:
        i = int(small[0])
        raise SingularDiffusionError(f"diffusion vanishes at step {i} (x={xprev[i]!r}, t={t[i]!r})", step=i)
    b = _coef(model.drift, xprev, t)
    return (inc - b * model.dt) / a


def innovations_to_increments(model: SdePathModel, innovations) -> np.ndarray:
    """Inverse of :func:`path_to_innovations`, solved forward in time."""
    y = _as_increments(model, innovations)
    inc = np.empty_like(y)
    x = model.x0
    dt = model.dt
    for i in range(model.n_steps):
        t = i * dt
        a = float(model.diffusion(x, t))
        if abs(a) < _kernels.SINGULAR_TOL:
            raise SingularDiffusionError(f"diffusion vanishes at step {i}", step=i)
        inc[i] = float(model.drift(x, t)) * dt + a * y[i]
        x = x + inc[i]
    return inc


def default_initial_increments(model: SdePathModel, kind: str = "alternating") -> np.ndarray:
    """Starting increments for a path chain.

    ``"alternating"`` is the Euler path driven by innovations
    ``+sqrt(dt), -sqrt(dt), ...``: its innovations already have the typical
    size. ``"zero"`` is the flat path ``x_i = x0``; for state-dependent
    diffusion it lets the chain shrink the path level at no cost in the
    innovation term, and a GBM chain started there can collapse towards
    ``x = 0`` and stop moving.
    """
    if kind == "zero":
        return np.zeros(model.n_steps)
    if kind != "alternating":
        raise ConfigurationError(f"unknown initial path {kind!r}")
    y = math.sqrt(model.dt) * np.where(np.arange(model.n_steps) % 2 == 0, 1.0, -1.0)
    return innovations_to_increments(model, y)


def gaussian_innovation_target(delta_t: float, dim: int = 1) -> LogDensity:
    """``log f(y) = -|y|^2 / (2 dt)``: i.i.d. ``N(0, dt)`` up to a constant."""
    if not delta_t > 0:
        raise ConfigurationError("delta_t must be positive")
    two_dt = 2.0 * float(delta_t)

    def log_eval(y):
        y = np.asarray(y, dtype=float)
        return -float(y @ y) / two_dt

    return LogDensity(dim, log_eval, name="gaussian_innovations")


def sde_forward_model(model: SdePathModel) -> ForwardModel:
    """The innovation map as a black-box :class:`ForwardModel`.

    A path on which the diffusion vanishes maps to ``nan`` so that samplers
    reject it instead of stopping.
    """

    def evaluate(inc):
        try:
            return path_to_innovations(model, inc)
        except SingularDiffusionError:
            return np.full(model.n_steps, np.nan)

    return ForwardModel(model.n_steps, model.n_steps, evaluate, name=f"innovations[{model.name}]")


def sde_probe_log_density(model: SdePathModel) -> LogDensity:
    """Probing density of the innovation map as a function of the innovations.

    The increments are recovered from ``y`` and passed to
    :func:`probemh.probing.sde_uniform_density`.
    """
    from .probing import sde_uniform_density

    def log_eval(y):
        try:
            inc = innovations_to_increments(model, y)
        except SingularDiffusionError:
            return -math.inf
        return sde_uniform_density(model, inc)

    return LogDensity(model.n_steps, log_eval, name="sde_probe")


def sde_accept_log_ratio(model: SdePathModel, current_increments, proposed_increments, delta_t=None) -> float:
    """Log of the probing-corrected acceptance ratio between two increment vectors.

    Returns ``-inf`` when the proposal leaves the support; raises
    :class:`InvalidStateError` when the current vector is outside it.
    """
    from .probing import sde_uniform_density

    dt = model.dt if delta_t is None else float(delta_t)
    target = gaussian_innovation_target(dt, model.n_steps)
    lp_cur = sde_uniform_density(model, current_increments)
    if lp_cur == -math.inf:
        raise InvalidStateError("current increments are outside the support")
    lp_new = sde_uniform_density(model, proposed_increments)
    if lp_new == -math.inf:
        return -math.inf
    lt_cur = target(path_to_innovations(model, current_increments))
    lt_new = target(path_to_innovations(model, proposed_increments))
    return (lt_new - lt_cur) + (lp_cur - lp_new)


@dataclass
class PathSample:
    increments: np.ndarray
    path: np.ndarray
    innovations: np.ndarray

    @classmethod
    def from_increments(cls, model: SdePathModel, increments) -> "PathSample":
        inc = _as_increments(model, increments).copy()
        return cls(inc, increments_to_path(model, inc), path_to_innovations(model, inc))


@dataclass
class PathEnsemble:
    """Retained samples of ``n_chains`` independent chains."""

    model: SdePathModel
    increments: np.ndarray  # (chains, retained, N)
    steps: np.ndarray  # (chains, retained)
    chain_diagnostics: List[ChainDiagnostics]
    backend: str = "numpy"
    seeds: List[int] = field(default_factory=list)
    update: str = "sweep"

    @property
    def diagnostics(self) -> ChainDiagnostics:
        return ChainDiagnostics.merge(self.chain_diagnostics)

    @property
    def n_chains(self) -> int:
        return self.increments.shape[0]

    def paths(self) -> np.ndarray:
        """``(chains, retained, N + 1)`` paths including ``x_0``."""
        c, k, n = self.increments.shape
        start = np.full((c, k, 1), self.model.x0)
        return np.cumsum(np.concatenate([start, self.increments], axis=2), axis=2)

    def flat_paths(self) -> np.ndarray:
        p = self.paths()
        return p.reshape(-1, p.shape[-1])

    def innovations(self) -> np.ndarray:
        """``(chains * retained, N)`` innovations of every retained sample."""
        flat = self.increments.reshape(-1, self.model.n_steps)
        return np.array([path_to_innovations(self.model, inc) for inc in flat]).reshape(flat.shape)

    def sample(self, chain: int, index: int) -> PathSample:
        return PathSample.from_increments(self.model, self.increments[chain, index])


def _pick_backend(model, backend):
    if backend is None:
        return "numba" if (use_numba() and model.jitted) else "numpy"
    if backend not in ("numba", "numpy"):
        raise ConfigurationError(f"unknown backend {backend!r}")
    if backend == "numba" and not (use_numba() and model.jitted):
        raise ConfigurationError("numba backend needs numba and jitted coefficients")
    return backend


_MODES = {"all": _kernels.MODE_ALL, "single": _kernels.MODE_SINGLE, "sweep": _kernels.MODE_SWEEP}


def _run_single_chain(model, config, seed, half_width, mode, backend, initial):
    n = model.n_steps
    dx = np.array(initial, dtype=float)
    if np.any(np.abs(dx) > model.rho):
        raise InvalidStateError("initial increments are outside [-rho, rho]")
    k = config.n_retained
    out = np.empty((k, n))
    out_step = np.empty(k, dtype=np.int64)
    meta = np.zeros(2, dtype=np.int64)
    counters = np.zeros(4, dtype=np.int64)

    if backend == "numba":
        xp = np.empty(n + 1)
        pss = np.empty(n + 1)
        pla = np.empty(n + 1)
        if not _kernels.init_state_numba(model.drift, model.diffusion, model.x0, model.dt, dx, xp, pss, pla):
            raise InvalidStateError("diffusion vanishes along the initial path")

        def advance(buf, max_steps):
            return _kernels.sde_chain_numba(
                model.drift, model.diffusion, model.dt, float(model.rho), float(half_width), mode,
                dx, xp, pss, pla, buf, 0, max_steps, int(config.burn_in), int(config.thinning),
                out, out_step, meta, counters)
    else:
        ss, la, ok = _kernels.path_terms_numpy(model.drift, model.diffusion, model.x0, model.dt, dx)
        if not ok:
            raise InvalidStateError("diffusion vanishes along the initial path")
        tot = np.array([ss, la])

        def advance(buf, max_steps):
            return _kernels.sde_chain_numpy(
                model.drift, model.diffusion, model.x0, model.dt, float(model.rho), float(half_width), mode,
                dx, tot, buf, 0, max_steps, int(config.burn_in), int(config.thinning),
                out, out_step, meta, counters)

    rng = make_rng(seed)
    chunk = max(_kernels.draws_per_step(mode, n) * 2048, 1 << 18)
    buf = np.empty(0)
    pos = 0
    while meta[_kernels.STEP] < config.total_steps:
        # carry unused draws over so the stream is consumed strictly in order
        buf = np.concatenate([buf[pos:], rng.random(chunk)])
        pos = advance(buf, int(config.total_steps - meta[_kernels.STEP]))
    diag = ChainDiagnostics(
        steps_taken=int(counters[_kernels.PROPOSALS]),
        accepted=int(counters[_kernels.ACCEPTED]),
        rejected_out_of_support=int(counters[_kernels.OUT_OF_SUPPORT]),
        rejected_singular=int(counters[_kernels.SINGULAR]),
        iterations=int(meta[_kernels.STEP]),
    )
    return out, out_step, diag


def sample_paths(model: SdePathModel, config: ChainConfig, n_chains: int = 1,
                 proposal_half_width: float = 0.2, update: str = "sweep",
                 jobs: Optional[int] = None, backend: Optional[str] = None,
                 initial: str = "alternating") -> PathEnsemble:
    """Run ``n_chains`` independent probing-corrected chains over increment vectors.

    Chain ``i`` is seeded with ``config.seed + i``. One iteration is, by
    ``update``:

    ``"sweep"``
        every increment in turn gets its own ``U[-w, w]`` proposal and
        accept-reject decision (``N`` proposals per iteration);
    ``"single"``
        one uniformly chosen increment is perturbed;
    ``"all"``
        the whole vector is perturbed at once and accepted or rejected as a
        unit. With ``N = 100`` and ``w = 0.2`` this practically never accepts.

    The start is ``config.initial_point`` or, if that is ``None``, the path
    named by ``initial`` (see :func:`default_initial_increments`).
    """
    if n_chains < 1:
        raise ConfigurationError("n_chains must be positive")
    if update not in _MODES:
        raise ConfigurationError(f"update must be one of {sorted(_MODES)}")
    if not proposal_half_width > 0:
        raise ConfigurationError("proposal_half_width must be positive")
    start = default_initial_increments(model, initial) if config.initial_point is None else config.initial_point
    if start.shape != (model.n_steps,):
        raise ConfigurationError(f"initial point must have {model.n_steps} increments")
    if config.seed + n_chains - 1 >= 2**64:
        raise ConfigurationError("seed range overflows 64 bits")
    chosen = _pick_backend(model, backend)
    mode = _MODES[update]
    seeds = [config.seed + i for i in range(n_chains)]

    def one(seed):
        return _run_single_chain(model, config, seed, proposal_half_width, mode, chosen, start)

    workers = min(n_chains, jobs or os.cpu_count() or 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    return PathEnsemble(
        model=model,
        increments=np.stack([r[0] for r in results]),
        steps=np.stack([r[1] for r in results]),
        chain_diagnostics=[r[2] for r in results],
        backend=chosen,
        seeds=seeds,
        update=update,
    )


# ---------------------------------------------------------------------------
# Geometric Brownian motion, closed form
# ---------------------------------------------------------------------------


def gbm_analytic_pdf(mu, sigma, x0, t, x):
    """Lognormal density of ``X_t`` for ``dX = mu X dt + sigma X dW``, ``X_0 = x0``."""
    x = np.asarray(x, dtype=float)
    if not t > 0:
        raise DomainError("t must be positive")
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    if not x0 > 0:
        raise DomainError("x0 must be positive")
    if np.any(x <= 0):
        raise DomainError("the lognormal density is defined for x > 0 only")
    drift = (mu - 0.5 * sigma**2) * t
    z = np.log(x) - math.log(x0) - drift
    out = np.exp(-z * z / (2.0 * sigma**2 * t)) / (sigma * x * math.sqrt(2.0 * math.pi * t))
    return float(out) if out.ndim == 0 else out


def gbm_analytic_autocorr(mu, sigma, s, t):
    """``R(s, t) = exp(mu (s + t)) (exp(sigma^2 min(s, t)) - 1)`` for ``X_0 = 1``.

    This is the covariance of ``X_s`` and ``X_t``; it scales with ``x0**2``
    for other starting values.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise DomainError("times must be non-negative")
    out = np.exp(mu * (s + t)) * np.expm1(sigma**2 * np.minimum(s, t))
    return float(out) if out.ndim == 0 else out


def gbm_normalized_autocorr(mu, sigma, s, t):
    """``R(s, t) / sqrt(R(s, s) R(t, t))``, i.e. the correlation of ``X_s`` and ``X_t``."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s <= 0) or np.any(t <= 0):
        raise DomainError("normalized autocorrelation is undefined at time 0")
    num = gbm_analytic_autocorr(mu, sigma, s, t)
    den = np.sqrt(gbm_analytic_autocorr(mu, sigma, s, s) * gbm_analytic_autocorr(mu, sigma, t, t))
    out = np.asarray(num / den)
    return float(out) if out.ndim == 0 else out
