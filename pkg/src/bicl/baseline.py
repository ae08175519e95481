"""Full-action-space learners: each robot's policy covers move and guard
jointly, with no lower-level solver and no imitation step.

The loop, evaluation protocol, and metrics schema are shared with the
bi-level trainer, so episode counts compare directly.  Because guards come
from the policy itself, the oracle-guard reward equals the policy-guard
reward and the reported gap is zero by construction.
"""

from __future__ import annotations

import numpy as np

from .assignment import solve_env_guards
from .core import build_topology
from .envs.graph import legal_guards, legal_moves
from .errors import ContractViolation
from .learners import (Adam, Mlp, _child_seeds, masked_argmax, masked_softmax,
                       route_core_state, soft_update)
from .training import TrainConfig, TrainResult, check_backend, run_training


class FullRouteBundle:
    """Route learner over the joint action: one identity-head actor emits a
    move pre-activation plus guard logits; the centralized critic scores
    (joint state, joint move, joint guard one-hots)."""

    kind = "route"
    arch = "route-full"

    def __init__(self, config, topology, hidden=(64, 64), seed=0,
                 actor_lr=1e-4, critic_lr=1e-3, tau=0.01):
        self.config = config
        self.topology = topology
        self.tau = float(tau)
        self.hidden = tuple(int(h) for h in hidden)
        n = config.n
        obs_dim = topology.k + 2
        self.guard_head_dim = config.m + 1
        seeds = _child_seeds(seed, n + 1)
        self.actors = [Mlp((obs_dim, *self.hidden, 1 + self.guard_head_dim),
                           "identity", seeds[i]) for i in range(n)]
        self.critic = Mlp((3 * n + 1 + n * self.guard_head_dim,
                           *self.hidden, 1), "identity", seeds[n])
        self.target_actors = [a.copy() for a in self.actors]
        self.target_critic = self.critic.copy()
        self.actor_opts = [Adam(a, actor_lr) for a in self.actors]
        self.critic_opt = Adam(self.critic, critic_lr)

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def action_dim(self) -> int:
        return 1 + self.guard_head_dim

    @property
    def move_scale(self) -> float:
        return self.config.v_max

    def refresh_targets(self) -> None:
        self.target_actors = [a.copy() for a in self.actors]
        self.target_critic = self.critic.copy()

    def greedy_moves(self, obs_rows) -> np.ndarray:
        v_max = self.config.v_max
        return np.array([v_max * np.tanh(float(self.actors[i].forward(obs_rows[i])[0]))
                         for i in range(self.n)])

    def guard_probs_for_options(self, env, state, obs_rows, moves):
        options = env.guard_options(state, moves)
        slots = env.option_slots(options)
        probs = []
        for i in range(self.n):
            logits = self.actors[i].forward(obs_rows[i])[1:]
            mask = np.zeros(logits.size, dtype=bool)
            mask[list(slots[i])] = True
            full = masked_softmax(logits[None, :], mask[None, :])[0]
            probs.append(full[list(slots[i])])
        return options, probs

    def greedy_guards(self, env, state, obs_rows, moves) -> tuple:
        options, probs = self.guard_probs_for_options(env, state, obs_rows, moves)
        return tuple(options[i][int(np.argmax(probs[i]))] for i in range(self.n))

    def greedy_actions(self, env, state, obs_rows, mode, penalty_weight):
        moves = self.greedy_moves(obs_rows)
        if mode == "rl-reward":
            _, probs = self.guard_probs_for_options(env, state, obs_rows, moves)
            guards = solve_env_guards(env, state, moves, probs,
                                      penalty_weight).guards
        else:
            guards = self.greedy_guards(env, state, obs_rows, moves)
        return moves, guards


class FullGraphBundle:
    """Graph learner over joint (destination, guard-slot) pairs: one Q-net
    per robot scores every pair; the joint value is the sum of chosen
    entries."""

    kind = "graph"
    arch = "graph-full"

    def __init__(self, config, topology, hidden=(64, 64), seed=0,
                 actor_lr=1e-4, critic_lr=1e-3, tau=0.01):
        self.config = config
        self.topology = topology
        self.tau = float(tau)
        self.hidden = tuple(int(h) for h in hidden)
        n = config.n
        obs_dim = topology.k + 2
        self.guard_head_dim = config.max_guard_options + 1
        self.pair_width = config.num_nodes * self.guard_head_dim
        seeds = _child_seeds(seed, n)
        self.pair_nets = [Mlp((obs_dim, *self.hidden, self.pair_width),
                              "identity", seeds[i]) for i in range(n)]
        self.target_pair_nets = [m.copy() for m in self.pair_nets]
        self.pair_opts = [Adam(m, critic_lr) for m in self.pair_nets]

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def action_dim(self) -> int:
        return self.pair_width

    def refresh_targets(self) -> None:
        self.target_pair_nets = [m.copy() for m in self.pair_nets]

    def pair_mask(self, state) -> np.ndarray:
        """(n, pair_width) legality over (destination, guard-slot) pairs."""
        cfg = self.config
        ghd = self.guard_head_dim
        mask = np.zeros((self.n, self.pair_width), dtype=bool)
        for i in range(self.n):
            if state.arrived_flags[i]:
                mask[i, cfg.target_node * ghd] = True
                continue
            for node in legal_moves(state, i, cfg):
                count = len(legal_guards(node, cfg))
                mask[i, node * ghd:node * ghd + count] = True
        return mask

    def decode_pairs(self, pairs) -> tuple:
        """(moves, guards) from flat pair indices."""
        ghd = self.guard_head_dim
        moves = np.asarray(pairs, dtype=np.int64) // ghd
        guards = []
        for i, p in enumerate(pairs):
            slot = int(p) % ghd
            guards.append(None if slot == 0
                          else self.config.guard_sets[int(moves[i])][slot - 1])
        return moves, tuple(guards)

    def greedy_pairs(self, obs_rows, pmask) -> np.ndarray:
        pairs = np.zeros(self.n, dtype=np.int64)
        for i in range(self.n):
            q = self.pair_nets[i].forward(obs_rows[i])
            pairs[i] = masked_argmax(q[None, :], pmask[i][None, :])[0]
        return pairs

    def guard_probs_for_options(self, env, state, obs_rows, moves):
        """Guard distribution conditioned on the given moves: softmax over
        the chosen destination's legal pair values."""
        options = env.guard_options(state, moves)
        ghd = self.guard_head_dim
        probs = []
        for i in range(self.n):
            q = self.pair_nets[i].forward(obs_rows[i])
            row = q[int(moves[i]) * ghd:(int(moves[i]) + 1) * ghd]
            mask = np.zeros(ghd, dtype=bool)
            mask[:len(options[i])] = True
            full = masked_softmax(row[None, :], mask[None, :])[0]
            probs.append(full[:len(options[i])])
        return options, probs

    def greedy_actions(self, env, state, obs_rows, mode, penalty_weight):
        pairs = self.greedy_pairs(obs_rows, self.pair_mask(state))
        moves, guards = self.decode_pairs(pairs)
        if mode == "rl-reward":
            _, probs = self.guard_probs_for_options(env, state, obs_rows, moves)
            guards = solve_env_guards(env, state, moves, probs,
                                      penalty_weight).guards
        return moves, guards


# route updates ---------------------------------------------------------------


def _full_critic_input(cstate, moves, guard_onehots, v_max) -> np.ndarray:
    B = len(cstate)
    return np.concatenate(
        [cstate, moves / v_max, guard_onehots.reshape(B, -1)], axis=1)


def full_route_critic_update(bundle: FullRouteBundle, batch: dict,
                             gamma: float) -> float:
    n = bundle.n
    ghd = bundle.guard_head_dim
    v_max = bundle.config.v_max
    B = len(batch["reward"])
    rows = np.arange(B)
    next_moves = np.empty((B, n))
    next_onehots = np.zeros((B, n, ghd))
    for i in range(n):
        out = bundle.target_actors[i].forward_batch(batch["next_obs"][:, i, :])
        next_moves[:, i] = v_max * np.tanh(out[:, 0])
        slot = masked_argmax(out[:, 1:], batch["next_gmask"][:, i, :])
        next_onehots[rows, i, slot] = 1.0
    q_next = bundle.target_critic.forward_batch(
        _full_critic_input(batch["next_cstate"], next_moves, next_onehots,
                           v_max))[:, 0]
    z = batch["reward"] + gamma * np.where(batch["done"], 0.0, q_next)
    exec_onehots = np.zeros((B, n, ghd))
    for i in range(n):
        exec_onehots[rows, i, batch["slots"][:, i]] = 1.0
    acts = bundle.critic.forward_cached(
        _full_critic_input(batch["cstate"], batch["moves"], exec_onehots, v_max))
    diff = acts[-1][:, 0] - z
    loss = float(np.mean(diff * diff))
    grads, _ = bundle.critic.backward_batch(acts, (2.0 / B) * diff[:, None])
    bundle.critic_opt.step(bundle.critic, grads)
    soft_update(bundle.target_critic, bundle.critic, bundle.tau)
    for i in range(n):
        soft_update(bundle.target_actors[i], bundle.actors[i], bundle.tau)
    return loss


def full_route_actor_update(bundle: FullRouteBundle, i: int, batch: dict) -> float:
    """Ascend robot i's joint head along the critic: executed actions for the
    other robots, robot i's own move relaxed through tanh and its guard
    one-hot relaxed to masked softmax probabilities."""
    n = bundle.n
    ghd = bundle.guard_head_dim
    v_max = bundle.config.v_max
    B = len(batch["reward"])
    rows = np.arange(B)
    acts_a = bundle.actors[i].forward_cached(batch["obs"][:, i, :])
    out = acts_a[-1]
    t = np.tanh(out[:, 0])
    probs = masked_softmax(out[:, 1:], batch["gmask"][:, i, :])
    moves = np.array(batch["moves"], copy=True)
    moves[:, i] = v_max * t
    onehots = np.zeros((B, n, ghd))
    for j in range(n):
        onehots[rows, j, batch["slots"][:, j]] = 1.0
    onehots[:, i, :] = probs
    acts_c = bundle.critic.forward_cached(
        _full_critic_input(batch["cstate"], moves, onehots, v_max))
    _, dx = bundle.critic.backward_batch(
        acts_c, np.full((B, 1), 1.0 / B), want_dx=True, want_params=False)
    upstream = np.zeros((B, 1 + ghd))
    # Move column: the critic reads moves/v_max = tanh(out0), so only the
    # tanh derivative survives.
    upstream[:, 0] = -dx[:, 2 * n + 1 + i] * (1.0 - t * t)
    block = -dx[:, 3 * n + 1 + i * ghd:3 * n + 1 + (i + 1) * ghd]
    upstream[:, 1:] = probs * (block - np.sum(block * probs, axis=1,
                                              keepdims=True))
    grads, _ = bundle.actors[i].backward_batch(acts_a, upstream)
    norm = float(np.sqrt(sum(float((dw * dw).sum() + (db * db).sum())
                             for dw, db in grads)))
    bundle.actor_opts[i].step(bundle.actors[i], grads)
    return norm


def full_graph_update(bundle: FullGraphBundle, batch: dict, gamma: float) -> float:
    """One TD step on the additive joint pair value."""
    n = bundle.n
    B = len(batch["reward"])
    rows = np.arange(B)
    q_next_tot = np.zeros(B)
    for i in range(n):
        qn = bundle.target_pair_nets[i].forward_batch(batch["next_obs"][:, i, :])
        q_next_tot += np.where(batch["next_pair_mask"][:, i, :], qn,
                               -np.inf).max(axis=1)
    z = batch["reward"] + gamma * np.where(batch["done"], 0.0, q_next_tot)
    caches = []
    q_tot = np.zeros(B)
    for i in range(n):
        acts = bundle.pair_nets[i].forward_cached(batch["obs"][:, i, :])
        caches.append(acts)
        q_tot += acts[-1][rows, batch["pairs"][:, i]]
    diff = q_tot - z
    loss = float(np.mean(diff * diff))
    for i in range(n):
        g = np.zeros((B, bundle.pair_width))
        g[rows, batch["pairs"][:, i]] = (2.0 / B) * diff
        grads, _ = bundle.pair_nets[i].backward_batch(caches[i], g)
        bundle.pair_opts[i].step(bundle.pair_nets[i], grads)
        soft_update(bundle.target_pair_nets[i], bundle.pair_nets[i], bundle.tau)
    return loss


# agents ----------------------------------------------------------------------


class _FullRouteAgent:
    rl_eval_mode = "t-reward"

    def __init__(self, env, config: TrainConfig, bundle: FullRouteBundle):
        self.env = env
        self.config = config
        self.bundle = bundle

    def buffer_fields(self) -> dict:
        n = self.env.n
        obs_dim = self.bundle.topology.k + 2
        ghd = self.bundle.guard_head_dim
        return {
            "obs": ((n, obs_dim), np.float64),
            "next_obs": ((n, obs_dim), np.float64),
            "cstate": ((2 * n + 1,), np.float64),
            "next_cstate": ((2 * n + 1,), np.float64),
            "moves": ((n,), np.float64),
            "slots": ((n,), np.int64),
            "gmask": ((n, ghd), np.bool_),
            "next_gmask": ((n, ghd), np.bool_),
            "reward": ((), np.float64),
            "done": ((), np.bool_),
        }

    def act(self, state, obs, frac: float, c_k: float, rng):
        cfg = self.config
        v_max = self.env.config.v_max
        sigma = cfg.sigma_start + (cfg.sigma_end - cfg.sigma_start) * frac
        ghd = self.bundle.guard_head_dim
        n = self.env.n
        moves = np.empty(n)
        logits = np.empty((n, ghd))
        for i in range(n):
            out = self.bundle.actors[i].forward(obs[i])
            moves[i] = v_max * np.tanh(out[0])
            logits[i] = out[1:]
        moves = np.clip(moves + sigma * v_max * rng.standard_normal(n),
                        -v_max, v_max)
        gmask = self.env.guard_mask(state, moves)
        slots = np.zeros(n, dtype=np.int64)
        guards = []
        for i in range(n):
            probs = masked_softmax(logits[i][None, :], gmask[i][None, :])[0]
            slot = int(rng.choice(ghd, p=probs))
            slots[i] = slot
            guards.append(None if slot == 0 else slot - 1)
        extra = {
            "cstate": route_core_state(state, self.env.config),
            "slots": slots,
            "gmask": gmask,
        }
        return moves, tuple(guards), extra

    def transition(self, obs, moves, extra, reward, done, next_state, next_obs):
        return {
            "obs": obs, "next_obs": next_obs,
            "cstate": extra["cstate"],
            "next_cstate": route_core_state(next_state, self.env.config),
            "moves": moves, "slots": extra["slots"], "gmask": extra["gmask"],
            "next_gmask": self.env.guard_mask(next_state, None),
            "reward": reward, "done": done,
        }

    def update(self, batch: dict):
        value_loss = full_route_critic_update(self.bundle, batch,
                                              self.config.gamma)
        for i in range(self.env.n):
            full_route_actor_update(self.bundle, i, batch)
        return value_loss, 0.0


class _FullGraphAgent:
    rl_eval_mode = "t-reward"

    def __init__(self, env, config: TrainConfig, bundle: FullGraphBundle):
        self.env = env
        self.config = config
        self.bundle = bundle

    def buffer_fields(self) -> dict:
        n = self.env.n
        obs_dim = self.bundle.topology.k + 2
        return {
            "obs": ((n, obs_dim), np.float64),
            "next_obs": ((n, obs_dim), np.float64),
            "pairs": ((n,), np.int64),
            "next_pair_mask": ((n, self.bundle.pair_width), np.bool_),
            "reward": ((), np.float64),
            "done": ((), np.bool_),
        }

    def act(self, state, obs, frac: float, c_k: float, rng):
        cfg = self.config
        eps = cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
        pmask = self.bundle.pair_mask(state)
        pairs = self.bundle.greedy_pairs(obs, pmask)
        for i in range(self.env.n):
            if rng.random() < eps:
                legal = np.flatnonzero(pmask[i])
                pairs[i] = int(legal[rng.integers(len(legal))])
        moves, guards = self.bundle.decode_pairs(pairs)
        return moves, guards, {"pairs": pairs}

    def transition(self, obs, moves, extra, reward, done, next_state, next_obs):
        return {
            "obs": obs, "next_obs": next_obs, "pairs": extra["pairs"],
            "next_pair_mask": self.bundle.pair_mask(next_state),
            "reward": reward, "done": done,
        }

    def update(self, batch: dict):
        return full_graph_update(self.bundle, batch, self.config.gamma), 0.0


def reduced_action_dim(env) -> int:
    """Per-robot output width the bi-level learner would use on this env."""
    return 1 if env.kind == "route" else env.config.num_nodes


def train_full_action(env, config: TrainConfig) -> TrainResult:
    """Train the joint-action learner; same loop and metrics as train_bicl,
    with rl_reward mirroring t_reward and a zero gap."""
    check_backend(env, config)
    topology = build_topology(env.n, config.topology_mode, config.topology_k)
    if env.kind == "route":
        bundle = FullRouteBundle(
            env.config, topology, hidden=config.hidden, seed=config.seed,
            actor_lr=config.actor_lr, critic_lr=config.critic_lr,
            tau=config.tau)
        agent = _FullRouteAgent(env, config, bundle)
    else:
        bundle = FullGraphBundle(
            env.config, topology, hidden=config.hidden, seed=config.seed,
            actor_lr=config.actor_lr, critic_lr=config.critic_lr,
            tau=config.tau)
        agent = _FullGraphAgent(env, config, bundle)
    if bundle.action_dim <= reduced_action_dim(env):
        raise ContractViolation("joint action head must be strictly wider "
                                "than the move-only head")
    return run_training(env, config, agent)
