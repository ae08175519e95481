"""Coordination environments: a continuous route and a graph traversal task."""

from .graph import (
    GraphEnv,
    GraphEnvConfig,
    graph_config_from_json,
    graph_config_to_json,
    graph_reset,
    graph_step,
    graph_team_reward,
    legal_guards,
    legal_moves,
    random_graph_config,
)
from .route import (
    Adversary,
    RouteEnv,
    RouteEnvConfig,
    base_cost,
    guard_discount,
    in_area,
    route_config_from_json,
    route_config_to_json,
    route_reset,
    route_step,
    route_team_reward,
)

__all__ = [
    "Adversary",
    "GraphEnv",
    "GraphEnvConfig",
    "RouteEnv",
    "RouteEnvConfig",
    "base_cost",
    "graph_config_from_json",
    "graph_config_to_json",
    "graph_reset",
    "graph_step",
    "graph_team_reward",
    "guard_discount",
    "in_area",
    "legal_guards",
    "legal_moves",
    "random_graph_config",
    "route_config_from_json",
    "route_config_to_json",
    "route_reset",
    "route_step",
    "route_team_reward",
]
