"""Graph traversal environment.

Robots sit on nodes and each step either stay put (free) or cross an edge,
paying that edge's cost.  Some nodes let an occupant guard specific ordered
edges: every guarded crossing is discounted by alpha_star once per guard.
The team is rewarded once when the last robot reaches the target node.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, fields

import numpy as np

from ..core import JointState
from ..errors import ConfigError, ContractViolation


@dataclass(frozen=True)
class GraphEnvConfig:
    """Static description of one graph instance.

    adjacency[u] lists the nodes reachable from u (no self entries; staying
    put is always legal and free).  edge_costs holds (u, v, cost) triples for
    every directed adjacency pair.  guard_sets[u] lists the ordered edges a
    robot standing on u may guard.
    """

    num_nodes: int
    n: int
    adjacency: tuple
    edge_costs: tuple
    guard_sets: tuple
    alpha_star: float = 0.5
    time_penalty: float = 0.1
    arrival_bonus: float = 100.0
    horizon: int = 25
    start_nodes: tuple = ()
    target_node: int = 0
    random_start: bool = False

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ConfigError("need at least one node")
        if self.n < 1:
            raise ConfigError("need at least one robot")
        if not 0.0 < self.alpha_star <= 1.0:
            raise ConfigError("alpha_star must lie in (0, 1]")
        if self.time_penalty < 0 or self.arrival_bonus < 0:
            raise ConfigError("time penalty and arrival bonus must be non-negative")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if len(self.adjacency) != self.num_nodes:
            raise ConfigError("adjacency must list every node")
        adj = []
        for u, nbrs in enumerate(self.adjacency):
            nbrs = tuple(sorted(int(v) for v in nbrs))
            for v in nbrs:
                if not 0 <= v < self.num_nodes or v == u:
                    raise ConfigError(f"bad neighbor {v} for node {u}")
            if len(set(nbrs)) != len(nbrs):
                raise ConfigError(f"duplicate neighbors for node {u}")
            adj.append(nbrs)
        object.__setattr__(self, "adjacency", tuple(adj))
        cost_map = {}
        for u, v, c in self.edge_costs:
            u, v, c = int(u), int(v), float(c)
            if v not in self.adjacency[u]:
                raise ConfigError(f"cost given for non-edge ({u}, {v})")
            if (u, v) in cost_map:
                raise ConfigError(f"duplicate cost for edge ({u}, {v})")
            if c < 0:
                raise ConfigError("edge costs must be non-negative")
            cost_map[(u, v)] = c
        for u, nbrs in enumerate(self.adjacency):
            for v in nbrs:
                if (u, v) not in cost_map:
                    raise ConfigError(f"missing cost for edge ({u}, {v})")
        object.__setattr__(self, "edge_costs",
                           tuple(sorted((u, v, c) for (u, v), c in cost_map.items())))
        object.__setattr__(self, "_cost_map", cost_map)
        if len(self.guard_sets) != self.num_nodes:
            raise ConfigError("guard_sets must list every node")
        guards = []
        for u, edges in enumerate(self.guard_sets):
            cleaned = tuple(sorted((int(a), int(b)) for a, b in edges))
            for a, b in cleaned:
                if (a, b) not in cost_map:
                    raise ConfigError(f"guardable edge ({a}, {b}) is not in the graph")
            if len(set(cleaned)) != len(cleaned):
                raise ConfigError(f"duplicate guardable edges for node {u}")
            guards.append(cleaned)
        object.__setattr__(self, "guard_sets", tuple(guards))
        if not 0 <= self.target_node < self.num_nodes:
            raise ConfigError("target_node out of range")
        starts = tuple(int(s) for s in self.start_nodes)
        if len(starts) != self.n:
            raise ConfigError("start_nodes length must equal n")
        for s in starts:
            if not 0 <= s < self.num_nodes:
                raise ConfigError(f"start node {s} out of range")
        object.__setattr__(self, "start_nodes", starts)
        reachable = self._reaches_target()
        for s in starts:
            if not reachable[s]:
                raise ConfigError(f"target unreachable from start node {s}")
        if self.random_start and not all(
                reachable[u] for u in range(self.num_nodes) if u != self.target_node):
            raise ConfigError("random_start needs the target reachable from every node")

    def _reaches_target(self):
        """Nodes from which the target can be reached along directed edges."""
        rev = [[] for _ in range(self.num_nodes)]
        for u, nbrs in enumerate(self.adjacency):
            for v in nbrs:
                rev[v].append(u)
        seen = [False] * self.num_nodes
        seen[self.target_node] = True
        queue = deque([self.target_node])
        while queue:
            v = queue.popleft()
            for u in rev[v]:
                if not seen[u]:
                    seen[u] = True
                    queue.append(u)
        return seen

    def edge_cost(self, u: int, v: int) -> float:
        if u == v:
            return 0.0
        try:
            return self._cost_map[(u, v)]
        except KeyError:
            raise ContractViolation(f"({u}, {v}) is not an edge") from None

    @property
    def max_guard_options(self) -> int:
        return max((len(g) for g in self.guard_sets), default=0)


def graph_config_to_json(config: GraphEnvConfig) -> dict:
    data = {}
    for f in fields(config):
        if f.name.startswith("_"):
            continue
        data[f.name] = getattr(config, f.name)
    data["adjacency"] = [list(nbrs) for nbrs in config.adjacency]
    data["edge_costs"] = [[u, v, c] for u, v, c in config.edge_costs]
    data["guard_sets"] = [[[a, b] for a, b in edges] for edges in config.guard_sets]
    data["start_nodes"] = list(config.start_nodes)
    return data


def graph_config_from_json(data: dict) -> GraphEnvConfig:
    known = {f.name for f in fields(GraphEnvConfig) if not f.name.startswith("_")}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown graph config fields: {sorted(extra)}")
    kwargs = dict(data)
    kwargs["adjacency"] = tuple(tuple(nbrs) for nbrs in kwargs["adjacency"])
    kwargs["edge_costs"] = tuple((u, v, c) for u, v, c in kwargs["edge_costs"])
    kwargs["guard_sets"] = tuple(tuple((a, b) for a, b in edges)
                                 for edges in kwargs["guard_sets"])
    kwargs["start_nodes"] = tuple(kwargs.get("start_nodes", ()))
    return GraphEnvConfig(**kwargs)


def legal_moves(state: JointState, i: int, config: GraphEnvConfig) -> tuple:
    """Destination nodes robot i may pick: stay or any neighbor, sorted.
    Arrived robots may only stay at the target."""
    if state.arrived_flags[i]:
        return (config.target_node,)
    u = state.positions[i]
    return tuple(sorted({u, *config.adjacency[u]}))


def legal_guards(node: int, config: GraphEnvConfig) -> tuple:
    """Guard tokens available from a (post-move) node: None first, then the
    node's guardable edges in sorted order."""
    return (None,) + config.guard_sets[node]


def _check_actions(state, moves, guards, config: GraphEnvConfig) -> None:
    if state.n != config.n:
        raise ContractViolation("state size does not match the config")
    if len(moves) != config.n or len(guards) != config.n:
        raise ContractViolation("moves and guards must have one entry per robot")
    for i in range(config.n):
        x = int(moves[i])
        if x not in legal_moves(state, i, config):
            raise ContractViolation(
                f"robot {i} cannot move from {state.positions[i]} to {x}")
        y = guards[i]
        if y is None:
            continue
        if state.arrived_flags[i]:
            raise ContractViolation(f"arrived robot {i} cannot guard")
        y = (int(y[0]), int(y[1]))
        if y not in config.guard_sets[x]:
            raise ContractViolation(f"robot {i} cannot guard {y} from node {x}")


def graph_team_reward(state: JointState, moves, guards,
                      config: GraphEnvConfig) -> float:
    """One-step team reward: guarded traversal costs plus the time penalty,
    negated.  Staying put is free; excludes the arrival bonus."""
    _check_actions(state, moves, guards, config)
    reward = -config.time_penalty
    norm_guards = [None if y is None else (int(y[0]), int(y[1])) for y in guards]
    for i in range(config.n):
        if state.arrived_flags[i]:
            continue
        u, x = state.positions[i], int(moves[i])
        if u == x:
            continue
        cost = config.edge_cost(u, x)
        if cost == 0.0:
            continue
        factor = 1.0
        for k in range(config.n):
            if not state.arrived_flags[k] and norm_guards[k] == (u, x):
                factor *= config.alpha_star
        reward -= factor * cost
    return reward


def graph_step(state: JointState, moves, guards, config: GraphEnvConfig):
    """Advance one step.  Returns (next_state, reward, done).

    Guards affect only the reward; the transition is position := move.  The
    arrival bonus is paid on the step the last robot reaches the target.
    """
    reward = graph_team_reward(state, moves, guards, config)
    new_positions = tuple(int(x) for x in moves)
    new_arrived = tuple(a or p == config.target_node
                        for a, p in zip(state.arrived_flags, new_positions))
    if all(new_arrived) and not state.all_arrived:
        reward += config.arrival_bonus
    nxt = JointState(new_positions, state.step_index + 1, new_arrived)
    done = nxt.all_arrived or nxt.step_index >= config.horizon
    return nxt, reward, done


def graph_reset(config: GraphEnvConfig, seed=None) -> JointState:
    """Initial state at the configured starts, or uniform non-target nodes
    when random_start is set."""
    if config.random_start:
        rng = np.random.default_rng(seed)
        pool = [u for u in range(config.num_nodes) if u != config.target_node]
        if not pool:
            raise ConfigError("random_start needs at least one non-target node")
        positions = tuple(int(rng.choice(pool)) for _ in range(config.n))
    else:
        positions = config.start_nodes
    arrived = tuple(p == config.target_node for p in positions)
    return JointState(positions, 0, arrived)


def random_graph_config(num_nodes: int, n_robots: int, density: str = "sparse",
                        seed=0, horizon: int | None = None) -> GraphEnvConfig:
    """Generate a connected instance.

    A random attachment tree keeps the graph connected; each remaining node
    pair becomes an extra (undirected) edge with probability 0.2 for
    "sparse" or 0.5 for "dense".  Each directed edge is guardable with
    probability 0.3 / 0.6, assigned to a node adjacent to the edge.
    """
    if density == "sparse":
        extra_p, guard_frac = 0.2, 0.3
    elif density == "dense":
        extra_p, guard_frac = 0.5, 0.6
    else:
        raise ConfigError(f"unknown density {density!r}")
    if num_nodes < 2:
        raise ConfigError("need at least two nodes")
    rng = np.random.default_rng(seed)
    und = set()
    for v in range(1, num_nodes):
        u = int(rng.integers(0, v))
        und.add((u, v))
    for u in range(num_nodes):
        for v in range(u + 1, num_nodes):
            if (u, v) not in und and rng.random() < extra_p:
                und.add((u, v))
    adjacency = [set() for _ in range(num_nodes)]
    costs = []
    for u, v in sorted(und):
        c = float(np.round(rng.uniform(1.0, 8.0), 3))
        adjacency[u].add(v)
        adjacency[v].add(u)
        costs.append((u, v, c))
        costs.append((v, u, c))
    guard_sets = [set() for _ in range(num_nodes)]
    for u, v, _ in sorted(costs):
        if rng.random() >= guard_frac:
            continue
        nearby = sorted({u, v} | adjacency[u] | adjacency[v])
        watcher = int(nearby[int(rng.integers(len(nearby)))])
        guard_sets[watcher].add((u, v))
    target = num_nodes - 1
    pool = np.array([u for u in range(num_nodes) if u != target])
    replace = n_robots > len(pool)
    starts = tuple(int(s) for s in rng.choice(pool, size=n_robots, replace=replace))
    return GraphEnvConfig(
        num_nodes=num_nodes,
        n=n_robots,
        adjacency=tuple(tuple(sorted(a)) for a in adjacency),
        edge_costs=tuple(costs),
        guard_sets=tuple(tuple(sorted(g)) for g in guard_sets),
        horizon=horizon if horizon is not None else 4 * num_nodes,
        start_nodes=starts,
        target_node=target,
    )


class GraphEnv:
    """Object wrapper binding the graph functions to one config."""

    kind = "graph"

    def __init__(self, config: GraphEnvConfig):
        self.config = config

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def horizon(self) -> int:
        return self.config.horizon

    @property
    def scale(self) -> float:
        """Divisor that maps node indices into [0, 1] for observations."""
        return float(self.config.num_nodes)

    @property
    def stochastic_reset(self) -> bool:
        return self.config.random_start

    @property
    def guard_head_dim(self) -> int:
        """Guard-policy output width: slot 0 is no-guard, slot 1+r is the
        r-th guardable edge (sorted) of the robot's post-move node."""
        return self.config.max_guard_options + 1

    @property
    def num_nodes(self) -> int:
        return self.config.num_nodes

    def reset(self, seed=None) -> JointState:
        return graph_reset(self.config, seed)

    def step(self, state, moves, guards):
        return graph_step(state, moves, guards, self.config)

    def team_reward(self, state, moves, guards) -> float:
        return graph_team_reward(state, moves, guards, self.config)

    def legal_moves(self, state, i) -> tuple:
        return legal_moves(state, i, self.config)

    def move_mask(self, state: JointState) -> np.ndarray:
        """(n, num_nodes) legality mask over destination nodes."""
        mask = np.zeros((self.n, self.config.num_nodes), dtype=bool)
        for i in range(self.n):
            mask[i, list(legal_moves(state, i, self.config))] = True
        return mask

    def guard_options(self, state: JointState, moves) -> tuple:
        """Per-robot legal guard tokens given the chosen moves (guarding is
        evaluated at the post-move node).  Arrived robots only get None."""
        out = []
        for i in range(self.n):
            if state.arrived_flags[i]:
                out.append((None,))
            else:
                out.append(legal_guards(int(moves[i]), self.config))
        return tuple(out)

    def option_slots(self, options) -> tuple:
        """Head slot index for each option list entry (None -> 0, then the
        post-move node's sorted guard list order)."""
        return tuple(tuple(range(len(opts))) for opts in options)

    def guard_mask(self, state: JointState, moves) -> np.ndarray:
        """(n, guard_head_dim) legality mask aligned with the policy head."""
        mask = np.zeros((self.n, self.guard_head_dim), dtype=bool)
        for i, opts in enumerate(self.guard_options(state, moves)):
            mask[i, :len(opts)] = True
        return mask

    def guard_slot_vector(self, state, moves, guards) -> np.ndarray:
        """Head slot of each robot's chosen guard token."""
        out = np.zeros(self.n, dtype=np.int64)
        for i, y in enumerate(guards):
            if y is None:
                continue
            edges = self.config.guard_sets[int(moves[i])]
            out[i] = edges.index((int(y[0]), int(y[1]))) + 1
        return out

    def move_scale(self) -> float:
        """Divisor mapping node indices into [0, 1] for net inputs."""
        return float(self.config.num_nodes)
