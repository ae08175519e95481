import numpy as np
import pytest

from bicl.core import JointState
from bicl.envs.graph import (GraphEnv, GraphEnvConfig, graph_config_from_json,
                             graph_config_to_json, graph_reset, graph_step,
                             graph_team_reward, legal_guards, legal_moves,
                             random_graph_config)
from bicl.errors import ConfigError, ContractViolation


def line_config(**overrides):
    """0 -- 1 -- 2 with cost-4 and cost-2 edges; edge (0,1) guardable from 0."""
    kwargs = dict(
        num_nodes=3, n=1,
        adjacency=((1,), (0, 2), (1,)),
        edge_costs=((0, 1, 4.0), (1, 0, 4.0), (1, 2, 2.0), (2, 1, 2.0)),
        guard_sets=(((0, 1),), (), ()),
        alpha_star=0.5, time_penalty=0.1, arrival_bonus=100.0,
        horizon=6, start_nodes=(0,), target_node=2)
    kwargs.update(overrides)
    return GraphEnvConfig(**kwargs)


class TestConfigValidation:
    def test_cost_for_missing_edge(self):
        with pytest.raises(ConfigError):
            line_config(edge_costs=((0, 2, 1.0),))

    def test_missing_cost(self):
        with pytest.raises(ConfigError):
            line_config(edge_costs=((0, 1, 4.0), (1, 0, 4.0), (1, 2, 2.0)))

    def test_guardable_edge_not_in_graph(self):
        with pytest.raises(ConfigError):
            line_config(guard_sets=(((0, 2),), (), ()))

    def test_unreachable_target(self):
        with pytest.raises(ConfigError):
            line_config(adjacency=((1,), (0,), (1,)),
                        edge_costs=((0, 1, 4.0), (1, 0, 4.0), (2, 1, 2.0)))

    def test_bad_alpha(self):
        with pytest.raises(ConfigError):
            line_config(alpha_star=0.0)

    def test_self_loop_rejected(self):
        with pytest.raises(ConfigError):
            line_config(adjacency=((0, 1), (0, 2), (1,)))

    def test_edge_cost_lookup(self):
        config = line_config()
        assert config.edge_cost(0, 1) == 4.0
        assert config.edge_cost(1, 1) == 0.0
        with pytest.raises(ContractViolation):
            config.edge_cost(0, 2)


class TestLegality:
    def test_moves_include_stay_and_neighbors(self):
        config = line_config()
        state = JointState((1,), 0, (False,))
        assert legal_moves(state, 0, config) == (0, 1, 2)

    def test_moves_for_leaf_node(self):
        config = line_config()
        state = JointState((0,), 0, (False,))
        assert legal_moves(state, 0, config) == (0, 1)

    def test_arrived_robot_stays_at_target(self):
        config = line_config()
        state = JointState((2,), 1, (True,))
        assert legal_moves(state, 0, config) == (2,)

    def test_guards_none_plus_sorted_edges(self):
        config = line_config()
        assert legal_guards(0, config) == (None, (0, 1))
        assert legal_guards(1, config) == (None,)

    def test_guard_sets_subset_of_edges(self):
        config = random_graph_config(6, 2, "dense", seed=3)
        edges = {(u, v) for u, v, _ in config.edge_costs}
        for node_edges in config.guard_sets:
            for e in node_edges:
                assert e in edges


class TestTeamReward:
    def test_unguarded_crossing(self):
        config = line_config()
        state = JointState((0,), 0, (False,))
        reward = graph_team_reward(state, (1,), (None,), config)
        assert reward == pytest.approx(-4.1)

    def test_guarded_crossing(self):
        # Robot 1 stays on node 0 guarding (0,1); robot 0 crosses it.
        config = line_config(n=2, start_nodes=(0, 0))
        state = JointState((0, 0), 0, (False, False))
        reward = graph_team_reward(state, (1, 0), (None, (0, 1)), config)
        assert reward == pytest.approx(-(0.5 * 4.0) - 0.1)

    def test_double_guard_stacks(self):
        config = line_config(n=3, start_nodes=(0, 0, 0))
        state = JointState((0, 0, 0), 0, (False,) * 3)
        reward = graph_team_reward(state, (1, 0, 0), (None, (0, 1), (0, 1)),
                                   config)
        assert reward == pytest.approx(-(0.25 * 4.0) - 0.1)

    def test_staying_is_free(self):
        config = line_config()
        state = JointState((1,), 0, (False,))
        assert graph_team_reward(state, (1,), (None,), config) == pytest.approx(-0.1)

    def test_illegal_move_rejected(self):
        config = line_config()
        state = JointState((0,), 0, (False,))
        with pytest.raises(ContractViolation):
            graph_team_reward(state, (2,), (None,), config)

    def test_illegal_guard_rejected(self):
        config = line_config()
        state = JointState((0,), 0, (False,))
        with pytest.raises(ContractViolation):
            graph_team_reward(state, (1,), ((0, 1),), config)

    def test_arrived_robot_cannot_guard(self):
        config = line_config(n=2, start_nodes=(0, 0))
        state = JointState((0, 2), 1, (False, True))
        with pytest.raises(ContractViolation):
            graph_team_reward(state, (1, 2), (None, (0, 1)), config)

    def test_self_guarding_own_edge_allowed(self):
        # Guard legality is evaluated at the post-move node.
        config = line_config(guard_sets=((), ((0, 1),), ()))
        state = JointState((0,), 0, (False,))
        reward = graph_team_reward(state, (1,), ((0, 1),), config)
        assert reward == pytest.approx(-2.1)


class TestStep:
    def test_transition_is_move(self):
        config = line_config()
        state = JointState((0,), 0, (False,))
        nxt, _, _ = graph_step(state, (1,), (None,), config)
        assert nxt.positions == (1,)
        assert nxt.step_index == 1

    def test_bonus_on_last_arrival(self):
        config = line_config(n=2, start_nodes=(1, 2))
        state = graph_reset(config)
        assert state.arrived_flags == (False, True)
        nxt, reward, done = graph_step(state, (2, 2), (None, None), config)
        assert reward == pytest.approx(100.0 - 2.0 - 0.1)
        assert done and nxt.all_arrived

    def test_transition_guard_independence_randomized(self):
        rng = np.random.default_rng(11)
        configs = [random_graph_config(5, 2, "dense", seed=s) for s in range(4)]
        for _ in range(10_000):
            config = configs[int(rng.integers(len(configs)))]
            nodes = tuple(int(rng.integers(config.num_nodes))
                          for _ in range(config.n))
            state = JointState(nodes, 0,
                               tuple(p == config.target_node for p in nodes))
            moves = tuple(
                legal_moves(state, i, config)[
                    int(rng.integers(len(legal_moves(state, i, config))))]
                for i in range(config.n))
            env = GraphEnv(config)
            options = env.guard_options(state, moves)
            g1 = tuple(o[int(rng.integers(len(o)))] for o in options)
            g2 = tuple(o[int(rng.integers(len(o)))] for o in options)
            s1, _, d1 = graph_step(state, moves, g1, config)
            s2, _, d2 = graph_step(state, moves, g2, config)
            assert s1 == s2 and d1 == d2

    def test_alpha_one_makes_guards_irrelevant(self):
        config = line_config(n=2, start_nodes=(0, 0), alpha_star=1.0)
        state = JointState((0, 0), 0, (False, False))
        unguarded = graph_team_reward(state, (1, 0), (None, None), config)
        guarded = graph_team_reward(state, (1, 0), (None, (0, 1)), config)
        assert guarded == unguarded

    def test_guarding_never_harmful_randomized(self):
        rng = np.random.default_rng(13)
        configs = [random_graph_config(5, 3, "dense", seed=s) for s in range(4)]
        checked = 0
        while checked < 2_000:
            config = configs[int(rng.integers(len(configs)))]
            env = GraphEnv(config)
            nodes = tuple(int(rng.integers(config.num_nodes))
                          for _ in range(config.n))
            state = JointState(nodes, 0,
                               tuple(p == config.target_node for p in nodes))
            moves = tuple(
                legal_moves(state, i, config)[
                    int(rng.integers(len(legal_moves(state, i, config))))]
                for i in range(config.n))
            options = env.guard_options(state, moves)
            guards = tuple(o[int(rng.integers(len(o)))] for o in options)
            if all(g is None for g in guards):
                continue
            base = graph_team_reward(state, moves, (None,) * config.n, config)
            guarded = graph_team_reward(state, moves, guards, config)
            assert guarded >= base - 1e-12
            checked += 1


class TestReset:
    def test_fixed_starts(self):
        config = line_config()
        assert graph_reset(config).positions == (0,)

    def test_random_start_seeded(self):
        config = line_config(random_start=True)
        a = graph_reset(config, seed=3)
        b = graph_reset(config, seed=3)
        assert a == b
        states = {graph_reset(config, seed=s).positions for s in range(10)}
        assert len(states) > 1


class TestGenerator:
    def test_deterministic(self):
        a = random_graph_config(6, 3, "sparse", seed=9)
        b = random_graph_config(6, 3, "sparse", seed=9)
        assert a == b

    def test_valid_and_symmetric_costs(self):
        config = random_graph_config(7, 2, "sparse", seed=5)
        cost = {(u, v): c for u, v, c in config.edge_costs}
        for (u, v), c in cost.items():
            assert cost[(v, u)] == c
        assert config.target_node == 6
        assert all(s != 6 for s in config.start_nodes)

    def test_density_affects_edge_count(self):
        sparse = sum(len(a) for a in
                     random_graph_config(10, 2, "sparse", seed=1).adjacency)
        dense = sum(len(a) for a in
                    random_graph_config(10, 2, "dense", seed=1).adjacency)
        assert dense > sparse

    def test_unknown_density(self):
        with pytest.raises(ConfigError):
            random_graph_config(5, 2, "medium", seed=0)


class TestGuardInterface:
    def test_options_follow_post_move_node(self, diamond):
        state = diamond.reset()
        options = diamond.guard_options(state, (1, 0))
        assert options[0] == (None,)
        assert options[1] == (None, (0, 1), (0, 2))

    def test_arrived_only_none(self, diamond):
        state = JointState((0, 3), 1, (False, True))
        assert diamond.guard_options(state, (1, 3))[1] == (None,)

    def test_slot_vector_uses_edge_rank(self, diamond):
        state = diamond.reset()
        moves = (0, 0)
        slots = diamond.guard_slot_vector(state, moves, ((0, 2), None))
        np.testing.assert_array_equal(slots, [2, 0])

    def test_move_mask(self, diamond):
        state = diamond.reset()
        mask = diamond.move_mask(state)
        np.testing.assert_array_equal(mask[0], [True, True, True, False])

    def test_wrapper_surface(self, diamond):
        assert diamond.kind == "graph"
        assert diamond.n == 2
        assert diamond.num_nodes == 4
        assert diamond.guard_head_dim == 3
        assert diamond.scale == 4.0
        assert not diamond.stochastic_reset


class TestJsonRoundtrip:
    def test_roundtrip(self, diamond):
        data = graph_config_to_json(diamond.config)
        assert graph_config_from_json(data) == diamond.config

    def test_unknown_key_rejected(self):
        data = graph_config_to_json(line_config())
        data["weights"] = []
        with pytest.raises(ConfigError):
            graph_config_from_json(data)

    def test_generated_instance_roundtrips(self):
        config = random_graph_config(6, 2, "dense", seed=21)
        assert graph_config_from_json(graph_config_to_json(config)) == config
