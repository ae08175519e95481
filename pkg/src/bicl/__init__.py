"""Bi-level coordination learning for multi-robot route and graph tasks.

Robots learn move policies by reinforcement while a one-step exhaustive
solver picks guard actions during training; local guard policies imitate
the solver so execution stays decentralized.
"""

from .assignment import (AssignmentResult, GuardCandidateSpace,
                         mismatch_penalty, solve_env_guards,
                         solve_guard_assignment)
from .baseline import FullGraphBundle, FullRouteBundle, train_full_action
from .core import (JointState, ObservationTopology, build_topology, observe,
                   observe_batch)
from .envs import (Adversary, GraphEnv, GraphEnvConfig, RouteEnv,
                   RouteEnvConfig, graph_config_from_json,
                   graph_config_to_json, random_graph_config,
                   route_config_from_json, route_config_to_json)
from .errors import (ConfigError, ContractViolation, InsufficientData,
                     NumericalError, TopologyError)
from .learners import (GraphPolicyBundle, ReplayBuffer, RoutePolicyBundle,
                       load_bundle, save_bundle)
from .nets import BACKEND, Adam, Mlp, gradient_check, load_net, save_net
from .training import (MetricsRecord, PenaltySchedule, TrainConfig,
                       TrainResult, ck_at, convergence_episode, evaluate,
                       r_gap, train_bicl)

__version__ = "0.1.0"

__all__ = [
    "Adam", "Adversary", "AssignmentResult", "BACKEND", "ConfigError",
    "ContractViolation", "FullGraphBundle", "FullRouteBundle", "GraphEnv",
    "GraphEnvConfig", "GraphPolicyBundle", "GuardCandidateSpace",
    "InsufficientData", "JointState", "MetricsRecord", "Mlp",
    "NumericalError", "ObservationTopology", "PenaltySchedule",
    "ReplayBuffer", "RouteEnv", "RouteEnvConfig", "RoutePolicyBundle",
    "TopologyError", "TrainConfig", "TrainResult", "build_topology", "ck_at",
    "convergence_episode", "evaluate", "gradient_check",
    "graph_config_from_json", "graph_config_to_json", "load_bundle",
    "load_net", "mismatch_penalty", "observe", "observe_batch", "r_gap",
    "random_graph_config", "route_config_from_json", "route_config_to_json",
    "save_bundle", "save_net", "solve_env_guards", "solve_guard_assignment",
    "train_bicl", "train_full_action",
]
