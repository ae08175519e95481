import numpy as np
import pytest

from bicl.envs.graph import GraphEnv, GraphEnvConfig
from bicl.envs.route import Adversary, RouteEnv, RouteEnvConfig


@pytest.fixture
def route2():
    """Two robots, one adversary straddling the middle of a short route."""
    return RouteEnv(RouteEnvConfig(
        n=2, route_length=20.0, v_max=3.0, horizon=10,
        adversaries=(Adversary(10.0, 4.0, 2.0),),
        guard_beta=0.6, time_penalty=0.1, arrival_bonus=100.0,
        start_positions=(8.0, 12.0)))


@pytest.fixture
def route3():
    """Three robots, two overlapping adversary areas."""
    return RouteEnv(RouteEnvConfig(
        n=3, route_length=30.0, v_max=3.0, horizon=15,
        adversaries=(Adversary(10.0, 5.0, 2.0), Adversary(16.0, 5.0, 3.0)),
        guard_beta=0.6, time_penalty=0.1, arrival_bonus=100.0,
        start_positions=(8.0, 12.0, 18.0)))


@pytest.fixture
def diamond():
    """Four-node diamond: two routes from node 0 to node 3, both guardable
    from node 0, plus a cheap detour edge."""
    return GraphEnv(GraphEnvConfig(
        num_nodes=4, n=2,
        adjacency=((1, 2), (0, 3), (0, 3), (1, 2)),
        edge_costs=((0, 1, 4.0), (1, 0, 4.0), (0, 2, 1.0), (2, 0, 1.0),
                    (1, 3, 2.0), (3, 1, 2.0), (2, 3, 5.0), (3, 2, 5.0)),
        guard_sets=(((0, 1), (0, 2)), (), ((2, 3),), ()),
        alpha_star=0.5, time_penalty=0.1, arrival_bonus=100.0,
        horizon=8, start_nodes=(0, 0), target_node=3))


def random_route_instance(rng):
    """Small random route env plus a random in-episode state."""
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 4))
    length = float(rng.uniform(15.0, 40.0))
    advs = tuple(Adversary(center=float(rng.uniform(2.0, length - 2.0)),
                           radius=float(rng.uniform(2.0, 8.0)),
                           intensity=float(rng.uniform(0.5, 4.0)))
                 for _ in range(m))
    config = RouteEnvConfig(
        n=n, route_length=length, v_max=float(rng.uniform(1.0, 4.0)),
        adversaries=advs, guard_beta=float(rng.uniform(0.1, 1.0)),
        time_penalty=float(rng.uniform(0.0, 0.5)),
        horizon=int(rng.integers(3, 20)),
        start_positions=tuple(float(rng.uniform(0.0, length * 0.9))
                              for _ in range(n)))
    from bicl.core import JointState
    positions = tuple(float(rng.uniform(0.0, length * 0.95)) for _ in range(n))
    state = JointState(positions, int(rng.integers(0, config.horizon)),
                       (False,) * n)
    env = RouteEnv(config)
    moves = rng.uniform(-config.v_max, config.v_max, n)
    return env, state, moves


def random_guard_policies(rng, option_lists):
    """One random probability vector per robot, aligned with its options."""
    out = []
    for opts in option_lists:
        raw = rng.uniform(0.05, 1.0, len(opts))
        out.append(raw / raw.sum())
    return out
