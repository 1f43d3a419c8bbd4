"""Metropolis-Hastings over the input space of a black-box forward model.

Two accept-reject rules are provided:

* :func:`mh_step` evaluates the target density on the model *output*
  ``h(x)``. This is the naive scheme; when ``h`` is many-to-one or distorts
  volume the output law of the chain is not the target.
* :func:`modified_mh_step` divides the target by the probing density, the
  law of ``h(U)`` for ``U`` uniform on a bounded input box, which makes the
  output law of the chain equal to the target.

All densities are handled in log space. ``-inf`` marks zero density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, InvalidStateError, NumericalError

__all__ = [
    "ForwardModel",
    "LogDensity",
    "ProposalKernel",
    "ChainState",
    "ChainConfig",
    "ChainDiagnostics",
    "ChainResult",
    "MetropolisStep",
    "ModifiedMetropolisStep",
    "make_rng",
    "mh_step",
    "modified_mh_step",
    "run_chain",
    "random_walk_proposal",
    "single_site_proposal",
    "acceptance_probability",
]


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator used for every chain and probe run."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class ForwardModel:
    """Deterministic map ``h: R^n -> R^m`` treated as a black box.

    ``evaluate`` takes a length-``input_dim`` vector. ``evaluate_batch`` is an
    optional vectorised version over rows, used by probing when present.
    """

    input_dim: int
    output_dim: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    evaluate_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "model"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigurationError("model dimensions must be positive")

    def __call__(self, x) -> np.ndarray:
        y = np.asarray(self.evaluate(np.asarray(x, dtype=float)), dtype=float).reshape(-1)
        if y.shape[0] != self.output_dim:
            raise ConfigurationError(
                f"{self.name} returned {y.shape[0]} outputs, expected {self.output_dim}"
            )
        return y

    def batch(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if self.evaluate_batch is not None:
            ys = np.asarray(self.evaluate_batch(xs), dtype=float).reshape(xs.shape[0], -1)
            if ys.shape[1] != self.output_dim:
                raise ConfigurationError(
                    f"{self.name} returned {ys.shape[1]} outputs, expected {self.output_dim}"
                )
            return ys
        return np.array([self(x) for x in xs]).reshape(xs.shape[0], self.output_dim)


class LogDensity:
    """Unnormalised log-density on ``R^dim``.

    Calling the object returns a float that is finite or ``-inf``; ``nan`` and
    ``+inf`` from the wrapped function raise :class:`NumericalError`.
    """

    def __init__(self, dim: int, log_eval: Callable[[np.ndarray], float], name: str = "density"):
        if dim < 1:
            raise ConfigurationError("density dimension must be positive")
        self.dim = int(dim)
        self.log_eval = log_eval
        self.name = name

    def __call__(self, y) -> float:
        v = float(self.log_eval(y))
        if math.isnan(v) or v == math.inf:
            raise NumericalError(f"{self.name} returned {v}")
        return v

    def __repr__(self):
        return f"LogDensity(dim={self.dim}, name={self.name!r})"

    @classmethod
    def constant(cls, dim: int) -> "LogDensity":
        return cls(dim, lambda y: 0.0, name="constant")

    @classmethod
    def uniform_box(cls, lower, upper) -> "LogDensity":
        """Indicator of the box ``[lower, upper]`` (unnormalised)."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))

        def f(y):
            y = np.asarray(y, dtype=float)
            return 0.0 if np.all((y >= lower) & (y <= upper)) else -math.inf

        return cls(lower.shape[0], f, name="uniform_box")


@dataclass(frozen=True)
class ProposalKernel:
    """Proposal density ``p(x, x')``.

    ``log_ratio(x, x_new)`` is ``log p(x_new, x) - log p(x, x_new)``; leave it
    as ``None`` for a symmetric kernel.
    """

    sample_from: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    log_ratio: Optional[Callable[[np.ndarray, np.ndarray], float]] = None
    # parameters the accelerated SDE kernel needs to reproduce this proposal
    half_width: Optional[np.ndarray] = None
    single_site: bool = False

    def ratio(self, x, x_new) -> float:
        return 0.0 if self.log_ratio is None else float(self.log_ratio(x, x_new))


def _check_half_width(half_width):
    hw = np.asarray(half_width, dtype=float)
    if hw.ndim > 1 or hw.size == 0 or not np.all(np.isfinite(hw)) or np.any(hw <= 0):
        raise ConfigurationError(f"half_width must be positive, got {half_width!r}")
    return hw


def random_walk_proposal(half_width) -> ProposalKernel:
    """``x' = x + dx`` with every ``dx_i`` uniform on ``[-w_i, w_i]``.

    ``half_width`` is a scalar or one value per coordinate.
    """
    hw = _check_half_width(half_width)

    def sample_from(x, rng):
        x = np.asarray(x, dtype=float)
        return x + rng.uniform(-hw, hw, size=x.shape)

    return ProposalKernel(sample_from=sample_from, half_width=hw)


def single_site_proposal(half_width) -> ProposalKernel:
    """Random-scan update: perturb one uniformly chosen coordinate by ``U[-w, w]``."""
    hw = _check_half_width(half_width)
    if hw.ndim != 0:
        raise ConfigurationError("single-site proposal takes a scalar half_width")
    w = float(hw)

    def sample_from(x, rng):
        x = np.array(x, dtype=float)
        k = min(int(rng.random() * x.shape[0]), x.shape[0] - 1)
        x[k] = x[k] + rng.uniform(-w, w)
        return x

    return ProposalKernel(sample_from=sample_from, half_width=hw, single_site=True)


@dataclass(frozen=True, eq=False)
class ChainState:
    x: np.ndarray
    y: np.ndarray
    log_target: float
    log_probe: float = 0.0

    def __eq__(self, other):
        if not isinstance(other, ChainState):
            return NotImplemented
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and self.log_target == other.log_target
            and self.log_probe == other.log_probe
        )

    __hash__ = None


@dataclass
class ChainDiagnostics:
    """Counts over individual Metropolis proposals.

    ``iterations`` counts chain iterations; it equals ``steps_taken`` except
    for samplers that make several proposals per iteration (SDE sweeps).
    """

    steps_taken: int = 0
    accepted: int = 0
    rejected_out_of_support: int = 0
    rejected_singular: int = 0
    iterations: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.steps_taken if self.steps_taken else 0.0

    @classmethod
    def merge(cls, parts) -> "ChainDiagnostics":
        out = cls()
        for p in parts:
            out.steps_taken += p.steps_taken
            out.accepted += p.accepted
            out.rejected_out_of_support += p.rejected_out_of_support
            out.rejected_singular += p.rejected_singular
            out.iterations += p.iterations
        return out


@dataclass(frozen=True)
class ChainConfig:
    """Run-length settings. ``initial_point`` may be left ``None`` where the
    sampler has a natural default (the SDE path sampler does)."""

    initial_point: Optional[np.ndarray]
    total_steps: int
    burn_in: int = 0
    thinning: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.initial_point is not None:
            object.__setattr__(self, "initial_point", np.atleast_1d(np.asarray(self.initial_point, dtype=float)))
        if self.total_steps < 1:
            raise ConfigurationError("total_steps must be positive")
        if not 0 <= self.burn_in < self.total_steps:
            raise ConfigurationError("need 0 <= burn_in < total_steps")
        if self.thinning < 1:
            raise ConfigurationError("thinning must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")

    @property
    def n_retained(self) -> int:
        return -(-(self.total_steps - self.burn_in) // self.thinning)


def acceptance_probability(log_ratio_sum: float) -> float:
    """``min(1, exp(s))`` computed as ``exp(min(0, s))``."""
    return math.exp(min(0.0, log_ratio_sum))


def _accept(log_alpha: float, rng) -> bool:
    u = rng.random()
    # u can be exactly 0; never accept a zero-density move because of it
    return log_alpha > -math.inf and u <= acceptance_probability(log_alpha)


def _draw_proposal(state, proposal, model, rng):
    x_new = np.asarray(proposal.sample_from(state.x, rng), dtype=float)
    if x_new.shape != state.x.shape or x_new.shape[0] != model.input_dim:
        raise ConfigurationError(
            f"proposal has shape {x_new.shape}, model expects ({model.input_dim},)"
        )
    return x_new


def _reject(state, diagnostics):
    if diagnostics is not None:
        diagnostics.steps_taken += 1
        diagnostics.iterations += 1
        diagnostics.rejected_out_of_support += 1
    return state


def _finish(state, new_state, accepted, diagnostics):
    if diagnostics is not None:
        diagnostics.steps_taken += 1
        diagnostics.iterations += 1
        diagnostics.accepted += int(accepted)
    return new_state if accepted else state


def mh_step(state: ChainState, proposal: ProposalKernel, target: LogDensity,
            model: ForwardModel, rng: np.random.Generator,
            diagnostics: Optional[ChainDiagnostics] = None) -> ChainState:
    """One standard Metropolis-Hastings step with the target read on ``h(x)``.

    Proposals with zero target density are rejected without a uniform draw.
    """
    if target.dim != model.output_dim:
        raise ConfigurationError("target dimension must equal model output dimension")
    x_new = _draw_proposal(state, proposal, model, rng)
    if not np.all(np.isfinite(x_new)):
        return _reject(state, diagnostics)
    y_new = model(x_new)
    if not np.all(np.isfinite(y_new)):
        return _reject(state, diagnostics)
    lt_new = target(y_new)
    if lt_new == -math.inf:
        return _reject(state, diagnostics)
    log_alpha = (lt_new - state.log_target) + proposal.ratio(state.x, x_new)
    accepted = _accept(log_alpha, rng)
    return _finish(state, ChainState(x_new, y_new, lt_new, 0.0), accepted, diagnostics)


def modified_mh_step(state: ChainState, proposal: ProposalKernel, target: LogDensity,
                     probe: LogDensity, model: ForwardModel, rng: np.random.Generator,
                     diagnostics: Optional[ChainDiagnostics] = None) -> ChainState:
    """One MH step targeting ``f_target(h(x)) / f_probe(h(x))`` on inputs.

    A proposal whose output has zero target or zero probing density is
    rejected without drawing the acceptance uniform.
    """
    if target.dim != model.output_dim or probe.dim != model.output_dim:
        raise ConfigurationError("target and probe dimensions must equal model output dimension")
    if not math.isfinite(state.log_probe):
        raise InvalidStateError("probing density is zero at the current state")
    x_new = _draw_proposal(state, proposal, model, rng)
    if not np.all(np.isfinite(x_new)):
        return _reject(state, diagnostics)
    y_new = model(x_new)
    if not np.all(np.isfinite(y_new)):
        return _reject(state, diagnostics)
    # zero target density needs no probe evaluation, which may be the costly part
    lt_new = target(y_new)
    if lt_new == -math.inf:
        return _reject(state, diagnostics)
    lp_new = probe(y_new)
    if lp_new == -math.inf:
        return _reject(state, diagnostics)
    log_alpha = (lt_new - state.log_target) + proposal.ratio(state.x, x_new) + (state.log_probe - lp_new)
    accepted = _accept(log_alpha, rng)
    return _finish(state, ChainState(x_new, y_new, lt_new, lp_new), accepted, diagnostics)


class MetropolisStep:
    """:func:`mh_step` with model, target and proposal bound."""

    def __init__(self, model: ForwardModel, target: LogDensity, proposal: ProposalKernel):
        if target.dim != model.output_dim:
            raise ConfigurationError("target dimension must equal model output dimension")
        self.model = model
        self.target = target
        self.proposal = proposal

    def init_state(self, x) -> ChainState:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.model.input_dim,):
            raise ConfigurationError(f"initial point must have shape ({self.model.input_dim},)")
        y = self.model(x)
        lt = self.target(y) if np.all(np.isfinite(y)) else -math.inf
        if not math.isfinite(lt):
            raise InvalidStateError("target density is zero at the initial point")
        return ChainState(x, y, lt, 0.0)

    def __call__(self, state, rng, diagnostics=None):
        return mh_step(state, self.proposal, self.target, self.model, rng, diagnostics)


class ModifiedMetropolisStep(MetropolisStep):
    """:func:`modified_mh_step` with model, target, probe and proposal bound."""

    def __init__(self, model, target, probe: LogDensity, proposal):
        super().__init__(model, target, proposal)
        if probe.dim != model.output_dim:
            raise ConfigurationError("probe dimension must equal model output dimension")
        self.probe = probe

    def init_state(self, x) -> ChainState:
        state = super().init_state(x)
        lp = self.probe(state.y)
        if not math.isfinite(lp):
            raise InvalidStateError("probing density is zero at the initial point")
        return ChainState(state.x, state.y, state.log_target, lp)

    def __call__(self, state, rng, diagnostics=None):
        return modified_mh_step(state, self.proposal, self.target, self.probe, self.model, rng, diagnostics)


@dataclass
class ChainResult:
    samples: np.ndarray  # (K, n) retained inputs
    outputs: np.ndarray  # (K, m) cached h(x) of the retained inputs
    steps: np.ndarray  # (K,) 1-based step index each sample was taken after
    diagnostics: ChainDiagnostics
    final_state: ChainState = field(repr=False)


def run_chain(config: ChainConfig, step_fn: MetropolisStep) -> ChainResult:
    """Run ``config.total_steps`` steps; keep every ``thinning``-th state after burn-in."""
    if config.initial_point is None:
        raise ConfigurationError("run_chain needs an initial point")
    state = step_fn.init_state(config.initial_point)
    rng = make_rng(config.seed)
    diagnostics = ChainDiagnostics()
    k = config.n_retained
    samples = np.empty((k, state.x.shape[0]))
    outputs = np.empty((k, state.y.shape[0]))
    steps = np.empty(k, dtype=np.int64)
    row = 0
    for step in range(1, config.total_steps + 1):
        state = step_fn(state, rng, diagnostics)
        if step > config.burn_in and (step - config.burn_in - 1) % config.thinning == 0:
            samples[row] = state.x
            outputs[row] = state.y
            steps[row] = step
            row += 1
    return ChainResult(samples, outputs, steps, diagnostics, state)
