"""Sequential Bayesian inference for nonlinear structural dynamics.

Filters share one interface: ``predict(p)`` advances the belief with the
input of the elapsed interval, ``update(y, p)`` conditions it on a
measurement, and ``mean`` / ``std`` / ``cov`` report the current estimate.
"""

from .benchmark import (
    ForceSpec,
    MeasurementSetup,
    SimulationRecord,
    ThreeDofParams,
    augmented_benchmark,
    benchmark_model,
    scenario,
    simulate,
)
from .dkf import DualKalmanUnscentedFilter, InputKfModel
from .errors import (
    ConfigError,
    ContractError,
    DegenerateLikelihoodError,
    DivergenceError,
    FilterError,
    NumericalError,
)
from .gaussian import GaussianBelief
from .gmsppf import EmConfig, GaussianMixture, GaussianMixtureSigmaPointParticleFilter, GmsppfConfig
from .model import (
    AugmentedModel,
    ContinuousDynamics,
    ParametricModel,
    StateSpaceModel,
    augment_with_parameters,
    linear_model,
    rk4_discretize,
)
from .mpf import MutationConfig, MutationParticleFilter
from .particles import ParticleFilter, ParticleSet, ResamplingPolicy
from .rbpf import RaoBlackwellisedParticleFilter
from .runner import EstimateTrajectory, Metrics, build_filter, run, run_experiment, score
from .sppf import SigmaPointParticleFilter
from .ukf import UnscentedKalmanFilter, UtConfig

__all__ = [
    "AugmentedModel",
    "ConfigError",
    "ContinuousDynamics",
    "ContractError",
    "DegenerateLikelihoodError",
    "DivergenceError",
    "DualKalmanUnscentedFilter",
    "EmConfig",
    "EstimateTrajectory",
    "FilterError",
    "ForceSpec",
    "GaussianBelief",
    "GaussianMixture",
    "GaussianMixtureSigmaPointParticleFilter",
    "GmsppfConfig",
    "InputKfModel",
    "MeasurementSetup",
    "Metrics",
    "MutationConfig",
    "MutationParticleFilter",
    "NumericalError",
    "ParametricModel",
    "ParticleFilter",
    "ParticleSet",
    "RaoBlackwellisedParticleFilter",
    "ResamplingPolicy",
    "SigmaPointParticleFilter",
    "SimulationRecord",
    "StateSpaceModel",
    "ThreeDofParams",
    "UnscentedKalmanFilter",
    "UtConfig",
    "augment_with_parameters",
    "augmented_benchmark",
    "benchmark_model",
    "build_filter",
    "linear_model",
    "rk4_discretize",
    "run",
    "run_experiment",
    "scenario",
    "score",
    "simulate",
]
