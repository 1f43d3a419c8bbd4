"""Sampling inputs of black-box models so their outputs follow a prescribed law."""

from ._accel import HAVE_NUMBA
from .core import (
    ChainConfig,
    ChainDiagnostics,
    ChainResult,
    ChainState,
    ForwardModel,
    LogDensity,
    MetropolisStep,
    ModifiedMetropolisStep,
    ProposalKernel,
    make_rng,
    mh_step,
    modified_mh_step,
    random_walk_proposal,
    run_chain,
    single_site_proposal,
)
from .errors import (
    ConfigurationError,
    ConstructionError,
    DomainError,
    InvalidStateError,
    NonUniqueStationaryError,
    NumericalError,
    ProbeMHError,
    SingularDiffusionError,
)

__version__ = "0.1.0"
