"""Replay storage, policy bundles, and the per-network update rules.

The route bundle is an actor-critic pair per the usual centralized-critic
recipe: per-robot tanh move actors, a centralized state-move critic with
soft-updated targets, and per-robot guard policies trained by imitation.
The graph bundle swaps the actors and critic for per-robot move Q-nets whose
sum is trained as a joint value (value decomposition); guard policies are
imitation-trained the same way.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ContractViolation, InsufficientData
from .nets import Adam, Mlp, load_net, save_net


class ReplayBuffer:
    """Fixed-capacity FIFO ring over named fixed-shape array fields.

    Sampling is uniform with replacement over the stored rows.
    """

    def __init__(self, capacity: int, fields: dict):
        if capacity < 1:
            raise ContractViolation("capacity must be at least 1")
        self.capacity = capacity
        self._data = {name: np.zeros((capacity, *shape), dtype=dtype)
                      for name, (shape, dtype) in fields.items()}
        self.size = 0
        self.cursor = 0

    def push(self, **values) -> None:
        if set(values) != set(self._data):
            raise ContractViolation("pushed fields do not match the buffer schema")
        for name, value in values.items():
            self._data[name][self.cursor] = value
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if batch_size < 1:
            raise ContractViolation("batch_size must be at least 1")
        if self.size < batch_size:
            raise InsufficientData(
                f"buffer holds {self.size} rows, wanted {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return {name: arr[idx] for name, arr in self._data.items()}

    def column(self, name: str) -> np.ndarray:
        """Stored rows of one field (ring order, oldest not necessarily first)."""
        return self._data[name][:self.size]


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the unmasked entries; masked entries get 0.

    Every row must keep at least one legal entry.
    """
    z = np.where(mask, logits, -np.inf)
    peak = z.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(peak)):
        raise ContractViolation("every row needs at least one unmasked entry")
    e = np.exp(z - peak)
    return e / e.sum(axis=1, keepdims=True)


def masked_argmax(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise argmax restricted to the mask; first index wins ties."""
    return np.argmax(np.where(mask, values, -np.inf), axis=1)


def one_hot(indices: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(indices), width))
    out[np.arange(len(indices)), indices] = 1.0
    return out


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, elementwise in place."""
    if not 0.0 < tau <= 1.0:
        raise ContractViolation("tau must lie in (0, 1]")
    for tp, op in zip(target.param_arrays(), online.param_arrays()):
        tp *= 1.0 - tau
        tp += tau * op


def _child_seeds(seed, count: int) -> list:
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(count)]


class RoutePolicyBundle:
    """Nets and optimizers for the route task.

    Per robot: a tanh move actor over the local observation, and a guard
    policy scoring [no-guard] + each adversary from (observation, own move).
    One centralized critic scores (joint state, joint move).
    """

    kind = "route"
    arch = "route-bicl"

    def __init__(self, config, topology, hidden=(64, 64), seed=0,
                 actor_lr=1e-4, critic_lr=1e-3, il_lr=1e-4, tau=0.01):
        self.config = config
        self.topology = topology
        self.tau = float(tau)
        self.hidden = tuple(int(h) for h in hidden)
        n = config.n
        obs_dim = topology.k + 2
        head = config.m + 1
        seeds = _child_seeds(seed, 2 * n + 1)
        self.actors = [Mlp((obs_dim, *self.hidden, 1), "tanh", seeds[i])
                       for i in range(n)]
        self.guard_nets = [Mlp((obs_dim + 1, *self.hidden, head), "identity",
                               seeds[n + i]) for i in range(n)]
        self.critic = Mlp((3 * n + 1, *self.hidden, 1), "identity", seeds[2 * n])
        self.target_actors = [a.copy() for a in self.actors]
        self.target_critic = self.critic.copy()
        self.actor_opts = [Adam(a, actor_lr) for a in self.actors]
        self.guard_opts = [Adam(g, il_lr) for g in self.guard_nets]
        self.critic_opt = Adam(self.critic, critic_lr)

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def action_dim(self) -> int:
        """Per-robot width of the reinforcement-learned output."""
        return 1

    @property
    def move_scale(self) -> float:
        return self.config.v_max

    def refresh_targets(self) -> None:
        self.target_actors = [a.copy() for a in self.actors]
        self.target_critic = self.critic.copy()

    def greedy_moves(self, obs_rows) -> np.ndarray:
        """Noise-free moves, one per robot, from the per-robot observations."""
        return np.array([self.config.v_max * float(self.actors[i].forward(obs_rows[i])[0])
                         for i in range(self.n)])

    def guard_logits(self, i: int, obs, move) -> np.ndarray:
        x = np.concatenate([obs, [float(move) / self.move_scale]])
        return self.guard_nets[i].forward(x)

    def guard_probs_for_options(self, env, state, obs_rows, moves):
        """(options, probs) per robot, aligned, for the guard solver."""
        options = env.guard_options(state, moves)
        slots = env.option_slots(options)
        probs = []
        for i in range(self.n):
            logits = self.guard_logits(i, obs_rows[i], moves[i])
            mask = np.zeros(logits.size, dtype=bool)
            mask[list(slots[i])] = True
            full = masked_softmax(logits[None, :], mask[None, :])[0]
            probs.append(full[list(slots[i])])
        return options, probs

    def greedy_guards(self, env, state, obs_rows, moves) -> tuple:
        """Each robot's own argmax guard choice (decentralized execution)."""
        options, probs = self.guard_probs_for_options(env, state, obs_rows, moves)
        return tuple(options[i][int(np.argmax(probs[i]))] for i in range(self.n))


class GraphPolicyBundle:
    """Nets and optimizers for the graph task.

    Per robot: a move Q-net over destination nodes (the joint value is the
    sum of the chosen entries) and a guard policy over [no-guard] + the
    post-move node's guardable edges.
    """

    kind = "graph"
    arch = "graph-bicl"

    def __init__(self, config, topology, hidden=(64, 64), seed=0,
                 actor_lr=1e-4, critic_lr=1e-3, il_lr=1e-4, tau=0.01):
        self.config = config
        self.topology = topology
        self.tau = float(tau)
        self.hidden = tuple(int(h) for h in hidden)
        n = config.n
        obs_dim = topology.k + 2
        guard_head = config.max_guard_options + 1
        seeds = _child_seeds(seed, 2 * n)
        self.move_nets = [Mlp((obs_dim, *self.hidden, config.num_nodes),
                              "identity", seeds[i]) for i in range(n)]
        self.guard_nets = [Mlp((obs_dim + 1, *self.hidden, guard_head),
                               "identity", seeds[n + i]) for i in range(n)]
        self.target_move_nets = [m.copy() for m in self.move_nets]
        self.move_opts = [Adam(m, critic_lr) for m in self.move_nets]
        self.guard_opts = [Adam(g, il_lr) for g in self.guard_nets]

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def action_dim(self) -> int:
        """Per-robot width of the reinforcement-learned output."""
        return self.config.num_nodes

    @property
    def move_scale(self) -> float:
        return float(self.config.num_nodes)

    def refresh_targets(self) -> None:
        self.target_move_nets = [m.copy() for m in self.move_nets]

    def greedy_moves(self, obs_rows, move_mask) -> np.ndarray:
        """Per-robot legal argmax over move Q-values."""
        moves = np.zeros(self.n, dtype=np.int64)
        for i in range(self.n):
            q = self.move_nets[i].forward(obs_rows[i])
            moves[i] = masked_argmax(q[None, :], move_mask[i][None, :])[0]
        return moves

    def guard_logits(self, i: int, obs, move) -> np.ndarray:
        x = np.concatenate([obs, [float(move) / self.move_scale]])
        return self.guard_nets[i].forward(x)

    def guard_probs_for_options(self, env, state, obs_rows, moves):
        options = env.guard_options(state, moves)
        probs = []
        for i in range(self.n):
            logits = self.guard_logits(i, obs_rows[i], moves[i])
            mask = np.zeros(logits.size, dtype=bool)
            mask[:len(options[i])] = True
            full = masked_softmax(logits[None, :], mask[None, :])[0]
            probs.append(full[:len(options[i])])
        return options, probs

    def greedy_guards(self, env, state, obs_rows, moves) -> tuple:
        options, probs = self.guard_probs_for_options(env, state, obs_rows, moves)
        return tuple(options[i][int(np.argmax(probs[i]))] for i in range(self.n))


# update rules ---------------------------------------------------------------


def route_core_state(state, config) -> np.ndarray:
    """(2n+1,) critic state: scaled positions, arrived flags, step fraction."""
    return np.concatenate([
        np.asarray(state.positions, dtype=np.float64) / config.route_length,
        np.asarray(state.arrived_flags, dtype=np.float64),
        [state.step_index / config.horizon],
    ])


def route_critic_input(cstate: np.ndarray, moves: np.ndarray, v_max: float) -> np.ndarray:
    """Critic input rows: [positions/L, arrived flags, step fraction] ++ moves/v_max."""
    return np.concatenate([cstate, moves / v_max], axis=1)


def critic_update(bundle: RoutePolicyBundle, batch: dict, gamma: float) -> float:
    """One TD regression step on the centralized critic, then soft-update
    every target net.  Returns the scalar loss."""
    n = bundle.n
    v_max = bundle.config.v_max
    B = len(batch["reward"])
    next_moves = np.empty((B, n))
    for i in range(n):
        out = bundle.target_actors[i].forward_batch(batch["next_obs"][:, i, :])
        next_moves[:, i] = v_max * out[:, 0]
    q_next = bundle.target_critic.forward_batch(
        route_critic_input(batch["next_cstate"], next_moves, v_max))[:, 0]
    z = batch["reward"] + gamma * np.where(batch["done"], 0.0, q_next)
    acts = bundle.critic.forward_cached(
        route_critic_input(batch["cstate"], batch["moves"], v_max))
    diff = acts[-1][:, 0] - z
    loss = float(np.mean(diff * diff))
    grads, _ = bundle.critic.backward_batch(acts, (2.0 / B) * diff[:, None])
    bundle.critic_opt.step(bundle.critic, grads)
    soft_update(bundle.target_critic, bundle.critic, bundle.tau)
    for i in range(n):
        soft_update(bundle.target_actors[i], bundle.actors[i], bundle.tau)
    return loss


def actor_update(bundle: RoutePolicyBundle, i: int, batch: dict) -> float:
    """Ascend robot i's actor along the critic's move gradient.

    Returns the L2 norm of the actor's parameter gradient.
    """
    n = bundle.n
    B = len(batch["reward"])
    obs_i = batch["obs"][:, i, :]
    acts_a = bundle.actors[i].forward_cached(obs_i)
    moves = np.array(batch["moves"], copy=True)
    moves[:, i] = bundle.config.v_max * acts_a[-1][:, 0]
    acts_c = bundle.critic.forward_cached(
        route_critic_input(batch["cstate"], moves, bundle.config.v_max))
    _, dx = bundle.critic.backward_batch(
        acts_c, np.full((B, 1), 1.0 / B), want_dx=True, want_params=False)
    # The critic consumes moves/v_max and the actor emits moves = v_max*tanh,
    # so the two scale factors cancel in the chain rule.
    upstream = -dx[:, 2 * n + 1 + i][:, None]
    grads, _ = bundle.actors[i].backward_batch(acts_a, upstream)
    norm = float(np.sqrt(sum(float((dw * dw).sum() + (db * db).sum())
                             for dw, db in grads)))
    bundle.actor_opts[i].step(bundle.actors[i], grads)
    return norm


def il_update(bundle, i: int, batch: dict) -> float:
    """One imitation step on robot i's guard policy.

    Loss is the batch mean of the squared distance between the masked
    softmax output and the one-hot solver label, identical by construction
    to the solver's mismatch penalty.  Returns the scalar loss.
    """
    B = len(batch["reward"])
    net = bundle.guard_nets[i]
    x = np.concatenate([batch["obs"][:, i, :],
                        (batch["moves"][:, i] / bundle.move_scale)[:, None]], axis=1)
    acts = net.forward_cached(x)
    mask = batch["gmask"][:, i, :]
    probs = masked_softmax(acts[-1], mask)
    diff = probs - one_hot(batch["slots"][:, i], probs.shape[1])
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    gp = (2.0 / B) * diff
    # Softmax jacobian; masked entries carry zero probability and zero grad.
    gz = probs * (gp - np.sum(gp * probs, axis=1, keepdims=True))
    grads, _ = net.backward_batch(acts, gz, from_logits=True)
    bundle.guard_opts[i].step(net, grads)
    return loss


def vdn_update(bundle: GraphPolicyBundle, batch: dict, gamma: float) -> float:
    """One TD step on the additive joint move value, then soft-update the
    target nets.  Returns the scalar loss."""
    n = bundle.n
    B = len(batch["reward"])
    rows = np.arange(B)
    q_next_tot = np.zeros(B)
    for i in range(n):
        qn = bundle.target_move_nets[i].forward_batch(batch["next_obs"][:, i, :])
        q_next_tot += np.where(batch["next_move_mask"][:, i, :], qn, -np.inf).max(axis=1)
    z = batch["reward"] + gamma * np.where(batch["done"], 0.0, q_next_tot)
    caches = []
    q_tot = np.zeros(B)
    for i in range(n):
        acts = bundle.move_nets[i].forward_cached(batch["obs"][:, i, :])
        caches.append(acts)
        q_tot += acts[-1][rows, batch["moves"][:, i]]
    diff = q_tot - z
    loss = float(np.mean(diff * diff))
    for i in range(n):
        g = np.zeros((B, bundle.config.num_nodes))
        g[rows, batch["moves"][:, i]] = (2.0 / B) * diff
        grads, _ = bundle.move_nets[i].backward_batch(caches[i], g)
        bundle.move_opts[i].step(bundle.move_nets[i], grads)
        soft_update(bundle.target_move_nets[i], bundle.move_nets[i], bundle.tau)
    return loss


# bundle snapshots ------------------------------------------------------------


def _net_table(bundle) -> dict:
    arch = bundle.arch
    if arch == "route-bicl":
        table = {f"actor_{i}": net for i, net in enumerate(bundle.actors)}
        table["critic"] = bundle.critic
    elif arch == "graph-bicl":
        table = {f"move_{i}": net for i, net in enumerate(bundle.move_nets)}
    elif arch == "route-full":
        table = {f"actor_{i}": net for i, net in enumerate(bundle.actors)}
        table["critic"] = bundle.critic
    elif arch == "graph-full":
        table = {f"pair_{i}": net for i, net in enumerate(bundle.pair_nets)}
    else:
        raise ContractViolation(f"unknown bundle arch {arch!r}")
    for i, net in enumerate(getattr(bundle, "guard_nets", ())):
        table[f"guard_{i}"] = net
    return table


def save_bundle(bundle, dirpath) -> None:
    """Write every net plus a manifest describing how to rebuild the bundle."""
    os.makedirs(dirpath, exist_ok=True)
    nets = {}
    for name, net in _net_table(bundle).items():
        filename = f"{name}.net"
        save_net(net, os.path.join(dirpath, filename))
        nets[name] = {"file": filename, "head": net.head}
    manifest = {
        "arch": bundle.arch,
        "topology_mode": bundle.topology.mode,
        "topology_k": bundle.topology.k,
        "hidden": list(bundle.hidden),
        "tau": bundle.tau,
        "nets": nets,
    }
    with open(os.path.join(dirpath, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _bundle_class(arch: str):
    if arch == "route-bicl":
        return RoutePolicyBundle
    if arch == "graph-bicl":
        return GraphPolicyBundle
    from . import baseline

    if arch == "route-full":
        return baseline.FullRouteBundle
    if arch == "graph-full":
        return baseline.FullGraphBundle
    raise ContractViolation(f"unknown bundle arch {arch!r}")


def load_bundle(dirpath, env_config):
    """Rebuild a bundle from save_bundle output; optimizer state starts fresh."""
    from .core import build_topology

    with open(os.path.join(dirpath, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    topology = build_topology(env_config.n, manifest["topology_mode"],
                              manifest["topology_k"])
    bundle = _bundle_class(manifest["arch"])(
        env_config, topology, hidden=manifest["hidden"], tau=manifest["tau"])
    table = _net_table(bundle)
    if set(table) != set(manifest["nets"]):
        raise ContractViolation("manifest nets do not match the bundle layout")
    for name, entry in manifest["nets"].items():
        net = load_net(os.path.join(dirpath, entry["file"]), head=entry["head"])
        target = table[name]
        if net.sizes != target.sizes:
            raise ContractViolation(f"net {name} has sizes {net.sizes}, "
                                    f"wanted {target.sizes}")
        target.weights = net.weights
        target.biases = net.biases
    bundle.refresh_targets()
    return bundle
