"""Decentralized primal-dual policy evaluation for multi-agent MDPs."""
from ._backend import BACKEND
from .env import (Policy, SampleSet, TabularMdp, generate_random_mdp, random_policy,
                  sample_trajectory, split_reward, stationary_distribution)
from .errors import (CertificateError, DivergenceError, NumericalError, ParameterError,
                     PDDistIAGError, RankDeficiencyError, TopologyError)
from .moments import (FeatureMap, Moments, SaddlePoint, beta_of, build_moments, mspbe,
                      mspbe_agent, population_moments, random_features, solve_saddle_point)
from .network import MixingMatrix, build_mixing, lambda_of
from .solver import Schedule, SolverState, init_state, next_index, run, step

__version__ = "0.1.0"
