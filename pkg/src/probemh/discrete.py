"""Exact finite-state Metropolis chains.

On a finite input space everything the continuous sampler estimates can be
computed exactly: the transition matrix of the naive and the probing-corrected
rule, its stationary law and the law it induces on outputs. This module is
the reference those samplers are tested against.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import _kernels
from ._accel import use_numba
from .core import make_rng
from .errors import ConfigurationError, ConstructionError, NonUniqueStationaryError, NumericalError

__all__ = [
    "DiscreteChain",
    "DiscreteSpec",
    "toy_spec",
    "random_spec",
    "build_naive_chain",
    "build_modified_chain",
    "probe_distribution",
    "stationary_distribution",
    "pushforward",
    "detailed_balance_residual",
    "simulate",
]

_ROW_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteChain:
    transition: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ConfigurationError("transition matrix must be square")
        if np.any(t < 0) or np.any(t > 1):
            raise ConfigurationError("transition entries must lie in [0, 1]")
        if np.max(np.abs(t.sum(axis=1) - 1.0)) > _ROW_TOL:
            raise ConfigurationError("transition rows must sum to 1")
        object.__setattr__(self, "transition", t)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]


@dataclass(frozen=True)
class DiscreteSpec:
    """Map from states to output labels, target law on labels, proposal matrix.

    ``output_of[i]`` is the output label index of state ``i``;
    ``target[k]`` is the desired probability of label ``k``.
    """

    output_of: np.ndarray
    target: np.ndarray
    proposal: np.ndarray

    def __post_init__(self):
        out = np.asarray(self.output_of, dtype=np.int64)
        tgt = np.asarray(self.target, dtype=float)
        prop = np.asarray(self.proposal, dtype=float)
        n = out.shape[0]
        if out.ndim != 1 or n < 1:
            raise ConfigurationError("output_of must be a non-empty vector")
        if np.any(out < 0) or np.any(out >= tgt.shape[0]):
            raise ConfigurationError("output_of refers to an unknown output label")
        if np.any(tgt < 0) or abs(tgt.sum() - 1.0) > 1e-12:
            raise ConfigurationError("target must be a probability vector")
        if prop.shape != (n, n):
            raise ConfigurationError("proposal must be n_states x n_states")
        if np.any(prop < 0) or np.any(np.diag(prop) != 0):
            raise ConfigurationError("proposal must be non-negative with zero diagonal")
        if np.max(np.abs(prop - prop.T)) > 1e-15 or np.max(np.abs(prop.sum(axis=1) - 1)) > _ROW_TOL:
            raise ConfigurationError("proposal must be symmetric and row-stochastic")
        object.__setattr__(self, "output_of", out)
        object.__setattr__(self, "target", tgt)
        object.__setattr__(self, "proposal", prop)

    @property
    def n_states(self) -> int:
        return self.output_of.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.target.shape[0]


def toy_spec() -> DiscreteSpec:
    """Three inputs, ``h(X1) = Y1``, ``h(X2) = h(X3) = Y2``, target (0.9, 0.1)."""
    proposal = np.full((3, 3), 0.5)
    np.fill_diagonal(proposal, 0.0)
    return DiscreteSpec(output_of=np.array([0, 1, 1]), target=np.array([0.9, 0.1]), proposal=proposal)


def random_spec(rng: np.random.Generator, n_states=(3, 8), n_outputs=(2, 4)) -> DiscreteSpec:
    """Random valid spec with every output label reachable.

    The proposal is a random convex combination of the uniform
    off-diagonal matrix and symmetrised derangement matrices, which keeps it
    symmetric, row-stochastic, zero-diagonal and irreducible.
    """
    n = int(rng.integers(n_states[0], n_states[1] + 1))
    m = int(rng.integers(n_outputs[0], min(n_outputs[1], n) + 1))
    labels = np.concatenate([np.arange(m), rng.integers(0, m, size=n - m)])
    rng.shuffle(labels)
    target = rng.uniform(0.05, 1.0, size=m)
    target /= target.sum()

    prop = np.full((n, n), 1.0 / (n - 1))
    np.fill_diagonal(prop, 0.0)
    weights = rng.dirichlet(np.ones(4))
    prop *= weights[0]
    for w in weights[1:]:
        while True:
            perm = rng.permutation(n)
            if np.all(perm != np.arange(n)):
                break
        mat = np.zeros((n, n))
        mat[np.arange(n), perm] = 0.5
        mat[perm, np.arange(n)] += 0.5
        prop += w * mat
    prop = 0.5 * (prop + prop.T)
    # snap rows to 1 exactly enough for validation
    prop /= prop.sum(axis=1, keepdims=True)
    prop = 0.5 * (prop + prop.T)
    return DiscreteSpec(output_of=labels, target=target, proposal=prop)


def probe_distribution(spec: DiscreteSpec) -> np.ndarray:
    """Law of ``h(U)`` for ``U`` uniform on the states, by preimage counting."""
    counts = np.bincount(spec.output_of, minlength=spec.n_outputs)
    return counts / spec.n_states


def _metropolis_matrix(proposal, weight) -> np.ndarray:
    n = proposal.shape[0]
    t = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and proposal[i, j] > 0:
                t[i, j] = proposal[i, j] * min(1.0, weight[j] / weight[i])
        # rounding can push the remainder a hair below zero
        t[i, i] = max(0.0, 1.0 - (t[i].sum() - t[i, i]))
    return t


def _state_weights(spec, modified):
    f_target = spec.target[spec.output_of]
    if np.any(f_target <= 0):
        bad = int(np.flatnonzero(f_target <= 0)[0])
        raise ConstructionError(f"target probability is zero at state {bad}; acceptance ratio undefined")
    if not modified:
        return f_target
    return f_target / probe_distribution(spec)[spec.output_of]


def build_naive_chain(spec: DiscreteSpec) -> DiscreteChain:
    """``T(i, j) = P(i, j) min(1, f(h(j)) / f(h(i)))`` off the diagonal."""
    return DiscreteChain(_metropolis_matrix(spec.proposal, _state_weights(spec, False)))


def build_modified_chain(spec: DiscreteSpec) -> DiscreteChain:
    """Same as the naive chain with each state weighted by ``f(h(i)) / f_Q(h(i))``."""
    return DiscreteChain(_metropolis_matrix(spec.proposal, _state_weights(spec, True)))


def stationary_distribution(chain: DiscreteChain, tol: float = 1e-12) -> np.ndarray:
    """Left eigenvector of ``T`` for eigenvalue 1, normalised to sum 1.

    Solves ``pi (T - I) = 0`` together with ``sum(pi) = 1`` directly.
    A reducible chain (eigenvalue 1 with multiplicity > 1) raises
    :class:`NonUniqueStationaryError`.
    """
    t = chain.transition
    n = chain.n_states
    a = t.T - np.eye(n)
    sv = np.linalg.svd(a, compute_uv=False)
    if n > 1 and sv[-2] <= 1e-10 * max(1.0, sv[0]):
        raise NonUniqueStationaryError("stationary distribution is not unique (reducible chain)")
    lhs = np.vstack([a, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    pi = np.where(np.abs(pi) < 1e-300, 0.0, pi)
    residual = float(np.max(np.abs(pi @ t - pi)))
    if np.any(pi < -tol) or residual >= tol:
        raise NumericalError(f"stationary solve did not converge (residual {residual:.3e})", residual)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def pushforward(dist, spec: DiscreteSpec) -> np.ndarray:
    """Output law induced by a law on states: sum over each preimage."""
    dist = np.asarray(dist, dtype=float)
    if dist.shape != (spec.n_states,):
        raise ConfigurationError("distribution length must equal n_states")
    return np.bincount(spec.output_of, weights=dist, minlength=spec.n_outputs)


def detailed_balance_residual(chain: DiscreteChain, dist) -> float:
    """``max_ij |pi_i T_ij - pi_j T_ji|``."""
    dist = np.asarray(dist, dtype=float)
    if dist.shape != (chain.n_states,):
        raise ConfigurationError("distribution length must equal n_states")
    flow = dist[:, None] * chain.transition
    return float(np.max(np.abs(flow - flow.T)))


def exact_fraction_matrix(spec: DiscreteSpec, modified: bool):
    """Transition matrix in exact rational arithmetic, for testing only."""
    n = spec.n_states
    prop = [[Fraction(p).limit_denominator(10**9) for p in row] for row in spec.proposal]
    tgt = [Fraction(p).limit_denominator(10**9) for p in spec.target]
    counts = np.bincount(spec.output_of, minlength=spec.n_outputs)
    w = []
    for i in range(n):
        k = spec.output_of[i]
        w.append(tgt[k] / Fraction(int(counts[k]), n) if modified else tgt[k])
    t = [[Fraction(0)] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j:
                t[i][j] = prop[i][j] * min(Fraction(1), w[j] / w[i])
        t[i][i] = 1 - sum(t[i][j] for j in range(n) if j != i)
    return t


def simulate(spec: DiscreteSpec, n_steps: int, seed: int, modified: bool = True, start: int = 0) -> np.ndarray:
    """Run the MH mechanism itself (propose, then accept) and return visit frequencies.

    This does not use the transition matrix, so it is an independent check of
    the matrix construction.
    """
    if n_steps < 1:
        raise ConfigurationError("n_steps must be positive")
    log_w = np.log(_state_weights(spec, modified))
    cdf = np.cumsum(spec.proposal, axis=1)
    cdf[:, -1] = 1.0
    rng = make_rng(seed)
    visits = np.zeros(spec.n_states, dtype=np.int64)
    kernel = _kernels.discrete_mh_numba if use_numba() else _kernels.discrete_mh_numpy
    state = int(start)
    block = 1 << 20
    remaining = int(n_steps)
    while remaining:
        k = min(block, remaining)
        state = kernel(cdf, log_w, state, rng.random(2 * k), visits)
        remaining -= k
    return visits / visits.sum()
