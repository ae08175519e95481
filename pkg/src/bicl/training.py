"""Penalty schedule, the bi-level training loop, evaluation, convergence.

Training is centralized: each step the executed guards come from the
exhaustive lower-level solver (penalized by the current schedule weight),
and those choices double as imitation labels for the local guard policies.
Evaluation is decentralized for t-reward (guards from the local policies)
and centralized for rl-reward (guards from the solver).
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .assignment import solve_env_guards
from .core import build_topology, observe
from .errors import ConfigError
from .learners import (GraphPolicyBundle, ReplayBuffer, RoutePolicyBundle,
                       actor_update, critic_update, il_update, route_core_state,
                       vdn_update)

BACKEND_TAGS = ("route-actor-critic", "graph-vdn")


@dataclass(frozen=True)
class PenaltySchedule:
    """Logistic ramp c_k = c / (1 + exp(-beta_sched (k - h)))."""

    c: float = 10.0
    beta_sched: float = 2e-3
    h: float = 3000.0

    def __post_init__(self):
        if not np.isfinite(self.c) or self.c < 0:
            raise ConfigError("schedule amplitude c must be finite and >= 0")
        if not self.beta_sched > 0:
            raise ConfigError("schedule beta_sched must be positive")
        if self.h < 0:
            raise ConfigError("schedule midpoint h must be >= 0")


def ck_at(schedule: PenaltySchedule, k: float) -> float:
    """Penalty weight at episode k; exactly c/2 at k = h."""
    return float(schedule.c * expit(schedule.beta_sched * (k - schedule.h)))


@dataclass(frozen=True)
class TrainConfig:
    backend: str = "route-actor-critic"
    episodes: int = 5000
    steps_per_episode: int = 50
    gamma: float = 0.99
    batch_size: int = 128
    buffer_capacity: int = 100_000
    warmup: int = 1000
    eval_every: int = 50
    eval_rollouts: int = 30
    seed: int = 0
    hidden: tuple = (64, 64)
    topology_mode: str = "window"
    topology_k: int = 2
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    il_lr: float = 1e-3
    tau: float = 0.01
    sigma_start: float = 0.5
    sigma_end: float = 0.05
    eps_start: float = 0.9
    eps_end: float = 0.05
    schedule: PenaltySchedule = field(default_factory=PenaltySchedule)
    measure_time: bool = False

    def __post_init__(self):
        if self.backend not in BACKEND_TAGS:
            raise ConfigError(f"backend must be one of {BACKEND_TAGS}")
        for name in ("episodes", "steps_per_episode", "batch_size",
                     "buffer_capacity", "eval_every", "eval_rollouts"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.warmup < 0:
            raise ConfigError("warmup must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.buffer_capacity < self.batch_size:
            raise ConfigError("buffer_capacity must hold at least one batch")
        hidden = tuple(int(h) for h in self.hidden)
        if not hidden or any(h < 1 for h in hidden):
            raise ConfigError("hidden must be a nonempty tuple of widths >= 1")
        object.__setattr__(self, "hidden", hidden)
        for name in ("actor_lr", "critic_lr", "il_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.tau <= 1:
            raise ConfigError("tau must lie in (0, 1]")
        for name in ("sigma_start", "sigma_end", "eps_start", "eps_end"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.topology_mode not in ("window", "ring"):
            raise ConfigError("topology_mode must be 'window' or 'ring'")
        if self.topology_k < 1:
            raise ConfigError("topology_k must be at least 1")


_SCHEDULE_KEYS = {"c", "beta", "h"}


def train_config_from_json(data: dict) -> TrainConfig:
    if not isinstance(data, dict):
        raise ConfigError("train section must be an object")
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown train keys: {sorted(unknown)}")
    kwargs = dict(data)
    if "schedule" in kwargs:
        sched = kwargs["schedule"]
        if not isinstance(sched, dict) or set(sched) - _SCHEDULE_KEYS:
            raise ConfigError("schedule must be an object with keys c, beta, h")
        kwargs["schedule"] = PenaltySchedule(
            c=sched.get("c", 10.0), beta_sched=sched.get("beta", 2e-3),
            h=sched.get("h", 3000.0))
    if "hidden" in kwargs:
        kwargs["hidden"] = tuple(kwargs["hidden"])
    try:
        return TrainConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad train section: {exc}") from exc


def train_config_to_json(config: TrainConfig) -> dict:
    data = dataclasses.asdict(config)
    data["hidden"] = list(config.hidden)
    data["schedule"] = {"c": config.schedule.c, "beta": config.schedule.beta_sched,
                        "h": config.schedule.h}
    return data


@dataclass(frozen=True)
class MetricsRecord:
    episode: int
    c_k: float
    train_return: float
    rl_reward: float
    t_reward: float
    r_gap: float
    il_loss: float
    value_loss: float
    wall_ms: float


@dataclass
class TrainResult:
    bundle: object
    records: list
    config: TrainConfig


def r_gap(rl: float, t: float) -> float:
    return rl - t


def convergence_episode(returns):
    """First eval index whose trailing 10 deltas all stay within 1% of the
    previous value (absolute floor 1); None if the series never settles."""
    r = [float(v) for v in returns]
    if not r:
        raise ConfigError("returns series must be nonempty")
    for e in range(10, len(r)):
        if all(abs(r[j] - r[j - 1]) <= 0.01 * max(1.0, abs(r[j - 1]))
               for j in range(e - 9, e + 1)):
            return e
    return None


def observation_rows(env, topology, state) -> np.ndarray:
    """(n, k+2) stacked per-robot observations."""
    return np.stack([observe(topology, state, i, env.scale, env.horizon)
                     for i in range(env.n)])


# evaluation ------------------------------------------------------------------


def _greedy_actions(bundle, env, state, obs, mode: str, penalty_weight: float):
    if hasattr(bundle, "greedy_actions"):
        # Joint-action learners pick (move, guard) together.
        return bundle.greedy_actions(env, state, obs, mode, penalty_weight)
    if bundle.kind == "route":
        moves = bundle.greedy_moves(obs)
    else:
        moves = bundle.greedy_moves(obs, env.move_mask(state))
    if mode == "t-reward":
        guards = bundle.greedy_guards(env, state, obs, moves)
    else:
        _, probs = bundle.guard_probs_for_options(env, state, obs, moves)
        guards = solve_env_guards(env, state, moves, probs, penalty_weight).guards
    return moves, guards


def _rollout(bundle, env, topology, mode: str, penalty_weight: float,
             reset_seed) -> float:
    state = env.reset(reset_seed)
    total = 0.0
    done = False
    while not done:
        obs = observation_rows(env, topology, state)
        moves, guards = _greedy_actions(bundle, env, state, obs, mode,
                                        penalty_weight)
        state, reward, done = env.step(state, moves, guards)
        total += reward
    return total


def evaluate(bundle, env, rollouts: int, mode: str, seed=0,
             penalty_weight: float = 0.0) -> float:
    """Mean noise-free episode return.

    t-reward executes each robot's own argmax guard; rl-reward executes the
    centralized solver's guards at the given penalty weight.  Deterministic
    environments collapse to a single rollout (all repeats are identical).
    """
    if mode not in ("t-reward", "rl-reward"):
        raise ConfigError(f"unknown evaluation mode {mode!r}")
    if rollouts < 1:
        raise ConfigError("rollouts must be at least 1")
    topology = bundle.topology
    if not env.stochastic_reset:
        return _rollout(bundle, env, topology, mode, penalty_weight, None)
    total = 0.0
    for r in range(rollouts):
        reset_seed = int(np.random.SeedSequence((seed, r)).generate_state(1)[0])
        total += _rollout(bundle, env, topology, mode, penalty_weight, reset_seed)
    return total / rollouts


# bi-level agents -------------------------------------------------------------


class _BiclRouteAgent:
    """Route step policy for the shared training loop: noisy actor moves,
    solver guards, actor-critic plus imitation updates."""

    rl_eval_mode = "rl-reward"

    def __init__(self, env, config: TrainConfig, bundle: RoutePolicyBundle):
        self.env = env
        self.config = config
        self.bundle = bundle

    def buffer_fields(self) -> dict:
        n = self.env.n
        obs_dim = self.bundle.topology.k + 2
        return {
            "obs": ((n, obs_dim), np.float64),
            "next_obs": ((n, obs_dim), np.float64),
            "cstate": ((2 * n + 1,), np.float64),
            "next_cstate": ((2 * n + 1,), np.float64),
            "moves": ((n,), np.float64),
            "slots": ((n,), np.int64),
            "gmask": ((n, self.env.guard_head_dim), np.bool_),
            "reward": ((), np.float64),
            "done": ((), np.bool_),
        }

    def act(self, state, obs, frac: float, c_k: float, rng):
        cfg = self.config
        v_max = self.env.config.v_max
        sigma = cfg.sigma_start + (cfg.sigma_end - cfg.sigma_start) * frac
        moves = self.bundle.greedy_moves(obs)
        moves = np.clip(moves + sigma * v_max * rng.standard_normal(len(moves)),
                        -v_max, v_max)
        _, probs = self.bundle.guard_probs_for_options(self.env, state, obs, moves)
        guards = solve_env_guards(self.env, state, moves, probs, c_k).guards
        extra = {
            "cstate": route_core_state(state, self.env.config),
            "slots": self.env.guard_slot_vector(state, moves, guards),
            "gmask": self.env.guard_mask(state, moves),
        }
        return moves, guards, extra

    def transition(self, obs, moves, extra, reward, done, next_state, next_obs):
        return {
            "obs": obs, "next_obs": next_obs,
            "cstate": extra["cstate"],
            "next_cstate": route_core_state(next_state, self.env.config),
            "moves": moves, "slots": extra["slots"], "gmask": extra["gmask"],
            "reward": reward, "done": done,
        }

    def update(self, batch: dict):
        value_loss = critic_update(self.bundle, batch, self.config.gamma)
        il_total = 0.0
        for i in range(self.env.n):
            il_total += il_update(self.bundle, i, batch)
            actor_update(self.bundle, i, batch)
        return value_loss, il_total / self.env.n


class _BiclGraphAgent:
    """Graph step policy for the shared training loop: epsilon-greedy moves
    over legal destinations, solver guards, joint-value plus imitation
    updates."""

    rl_eval_mode = "rl-reward"

    def __init__(self, env, config: TrainConfig, bundle: GraphPolicyBundle):
        self.env = env
        self.config = config
        self.bundle = bundle

    def buffer_fields(self) -> dict:
        n = self.env.n
        obs_dim = self.bundle.topology.k + 2
        return {
            "obs": ((n, obs_dim), np.float64),
            "next_obs": ((n, obs_dim), np.float64),
            "moves": ((n,), np.int64),
            "next_move_mask": ((n, self.env.num_nodes), np.bool_),
            "slots": ((n,), np.int64),
            "gmask": ((n, self.env.guard_head_dim), np.bool_),
            "reward": ((), np.float64),
            "done": ((), np.bool_),
        }

    def act(self, state, obs, frac: float, c_k: float, rng):
        cfg = self.config
        eps = cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
        mask = self.env.move_mask(state)
        moves = self.bundle.greedy_moves(obs, mask)
        for i in range(self.env.n):
            if rng.random() < eps:
                legal = np.flatnonzero(mask[i])
                moves[i] = int(legal[rng.integers(len(legal))])
        _, probs = self.bundle.guard_probs_for_options(self.env, state, obs, moves)
        guards = solve_env_guards(self.env, state, moves, probs, c_k).guards
        extra = {
            "slots": self.env.guard_slot_vector(state, moves, guards),
            "gmask": self.env.guard_mask(state, moves),
        }
        return moves, guards, extra

    def transition(self, obs, moves, extra, reward, done, next_state, next_obs):
        return {
            "obs": obs, "next_obs": next_obs, "moves": moves,
            "next_move_mask": self.env.move_mask(next_state),
            "slots": extra["slots"], "gmask": extra["gmask"],
            "reward": reward, "done": done,
        }

    def update(self, batch: dict):
        value_loss = vdn_update(self.bundle, batch, self.config.gamma)
        il_total = 0.0
        for i in range(self.env.n):
            il_total += il_update(self.bundle, i, batch)
        return value_loss, il_total / self.env.n


# the loop --------------------------------------------------------------------


def check_backend(env, config: TrainConfig) -> None:
    wanted = "route-actor-critic" if env.kind == "route" else "graph-vdn"
    if config.backend != wanted:
        raise ConfigError(
            f"{env.kind} env needs backend {wanted!r}, got {config.backend!r}")


def run_training(env, config: TrainConfig, agent) -> TrainResult:
    """Shared episode/step loop: explore, solve, store, update, evaluate."""
    rng = np.random.default_rng(config.seed)
    buffer = ReplayBuffer(config.buffer_capacity, agent.buffer_fields())
    topology = agent.bundle.topology
    min_fill = max(config.warmup, config.batch_size)
    records: list = []
    returns_acc: list = []
    il_sum = il_count = 0.0
    value_sum = value_count = 0.0
    mark = time.perf_counter()
    for k in range(config.episodes):
        c_k = ck_at(config.schedule, k)
        frac = k / max(config.episodes - 1, 1)
        reset_seed = int(rng.integers(2 ** 63)) if env.stochastic_reset else None
        state = env.reset(reset_seed)
        ep_return = 0.0
        for _ in range(config.steps_per_episode):
            obs = observation_rows(env, topology, state)
            moves, guards, extra = agent.act(state, obs, frac, c_k, rng)
            next_state, reward, done = env.step(state, moves, guards)
            next_obs = observation_rows(env, topology, next_state)
            buffer.push(**agent.transition(obs, moves, extra, reward, done,
                                           next_state, next_obs))
            ep_return += reward
            if buffer.size >= min_fill:
                batch = buffer.sample(config.batch_size, rng)
                value_loss, il_loss = agent.update(batch)
                value_sum += value_loss
                value_count += 1
                il_sum += il_loss
                il_count += 1
            state = next_state
            if done:
                break
        returns_acc.append(ep_return)
        if (k + 1) % config.eval_every == 0:
            t_rew = evaluate(agent.bundle, env, config.eval_rollouts, "t-reward",
                             seed=config.seed, penalty_weight=c_k)
            if agent.rl_eval_mode == "t-reward":
                rl_rew = t_rew
            else:
                rl_rew = evaluate(agent.bundle, env, config.eval_rollouts,
                                  agent.rl_eval_mode, seed=config.seed,
                                  penalty_weight=c_k)
            now = time.perf_counter()
            wall_ms = (now - mark) * 1000.0 if config.measure_time else 0.0
            mark = now
            records.append(MetricsRecord(
                episode=k,
                c_k=c_k,
                train_return=float(np.mean(returns_acc)),
                rl_reward=rl_rew,
                t_reward=t_rew,
                r_gap=r_gap(rl_rew, t_rew),
                il_loss=il_sum / il_count if il_count else 0.0,
                value_loss=value_sum / value_count if value_count else 0.0,
                wall_ms=wall_ms,
            ))
            returns_acc = []
            il_sum = il_count = 0.0
            value_sum = value_count = 0.0
    return TrainResult(agent.bundle, records, config)


def train_bicl(env, config: TrainConfig) -> TrainResult:
    """Train the bi-level learner on env; deterministic per (config, seed)."""
    check_backend(env, config)
    topology = build_topology(env.n, config.topology_mode, config.topology_k)
    if env.kind == "route":
        bundle = RoutePolicyBundle(
            env.config, topology, hidden=config.hidden, seed=config.seed,
            actor_lr=config.actor_lr, critic_lr=config.critic_lr,
            il_lr=config.il_lr, tau=config.tau)
        agent = _BiclRouteAgent(env, config, bundle)
    else:
        bundle = GraphPolicyBundle(
            env.config, topology, hidden=config.hidden, seed=config.seed,
            actor_lr=config.actor_lr, critic_lr=config.critic_lr,
            il_lr=config.il_lr, tau=config.tau)
        agent = _BiclGraphAgent(env, config, bundle)
    return run_training(env, config, agent)
