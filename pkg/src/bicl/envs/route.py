"""Continuous route environment.

Robots move along a segment [0, L] with bounded velocity and pay costs while
inside adversary impact areas.  A robot standing inside an area may guard it,
which multiplies every robot's cost from that area by a discount that gets
stronger the slower the guarding robot moves.  The team is rewarded once when
the last robot reaches the target.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..core import JointState
from ..errors import ConfigError, ContractViolation


@dataclass(frozen=True)
class Adversary:
    """Impact area: cost peaks at center and fades linearly to zero at radius."""

    center: float
    radius: float
    intensity: float


@dataclass(frozen=True)
class RouteEnvConfig:
    """Static description of one route instance.

    start_positions defaults to all zeros and target_position to the route
    end.  start_jitter > 0 makes resets draw starts uniformly from
    [start - jitter, start + jitter] (clipped to the route).
    """

    n: int
    route_length: float = 50.0
    v_max: float = 3.0
    adversaries: tuple = ()
    guard_beta: float = 0.6
    time_penalty: float = 0.1
    arrival_bonus: float = 100.0
    horizon: int = 50
    start_positions: tuple = None
    target_position: float = None
    start_jitter: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("need at least one robot")
        if self.route_length <= 0:
            raise ConfigError("route_length must be positive")
        if self.v_max <= 0:
            raise ConfigError("v_max must be positive")
        if not 0.0 < self.guard_beta <= 1.0:
            raise ConfigError("guard_beta must lie in (0, 1]")
        if self.time_penalty < 0 or self.arrival_bonus < 0 or self.start_jitter < 0:
            raise ConfigError("penalties, bonus and jitter must be non-negative")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        advs = tuple(a if isinstance(a, Adversary) else Adversary(*a)
                     for a in self.adversaries)
        for a in advs:
            if a.radius <= 0 or a.intensity <= 0:
                raise ConfigError("adversary radius and intensity must be positive")
            if not 0 <= a.center <= self.route_length:
                raise ConfigError("adversary center must lie on the route")
        object.__setattr__(self, "adversaries", advs)
        starts = self.start_positions
        if starts is None:
            starts = (0.0,) * self.n
        starts = tuple(float(p) for p in starts)
        if len(starts) != self.n:
            raise ConfigError("start_positions length must equal n")
        object.__setattr__(self, "start_positions", starts)
        target = self.target_position
        if target is None:
            target = self.route_length
        target = float(target)
        if not 0 < target <= self.route_length:
            raise ConfigError("target_position must lie in (0, route_length]")
        for p in starts:
            if not 0 <= p < target:
                raise ConfigError("start positions must lie in [0, target)")
        object.__setattr__(self, "target_position", target)

    @property
    def m(self) -> int:
        return len(self.adversaries)

    @property
    def arrive_tol(self) -> float:
        return 1e-6 * self.route_length


def route_config_to_json(config: RouteEnvConfig) -> dict:
    """Plain-dict form with field names matching the dataclass."""
    data = {f.name: getattr(config, f.name) for f in fields(config)}
    data["adversaries"] = [
        {"center": a.center, "radius": a.radius, "intensity": a.intensity}
        for a in config.adversaries
    ]
    data["start_positions"] = list(config.start_positions)
    return data


def route_config_from_json(data: dict) -> RouteEnvConfig:
    known = {f.name for f in fields(RouteEnvConfig)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown route config fields: {sorted(extra)}")
    kwargs = dict(data)
    if "adversaries" in kwargs:
        advs = []
        for a in kwargs["adversaries"]:
            if isinstance(a, dict):
                advs.append(Adversary(a["center"], a["radius"], a["intensity"]))
            else:
                advs.append(Adversary(*a))
        kwargs["adversaries"] = tuple(advs)
    if kwargs.get("start_positions") is not None:
        kwargs["start_positions"] = tuple(kwargs["start_positions"])
    return RouteEnvConfig(**kwargs)


def in_area(position: float, adversary: Adversary) -> bool:
    """Strictly inside the impact area (cost is zero on the boundary)."""
    return abs(position - adversary.center) < adversary.radius


def base_cost(position: float, adversary: Adversary) -> float:
    """Unguarded cost one robot accrues from one adversary at a position."""
    gap = abs(position - adversary.center) / adversary.radius
    return adversary.intensity * max(0.0, 1.0 - gap)


def guard_discount(move: float, guard, adversary_index: int, position: float,
                   config: RouteEnvConfig) -> float:
    """Factor a robot applies to an adversary's costs this step.

    1 unless the robot guards that adversary from inside its impact area
    (positions are pre-move, matching cost accrual); guarding while moving
    slowly discounts harder, clamped at zero.  Guards aimed at areas the
    robot is not inside act as no guard rather than erroring.
    """
    if guard != adversary_index:
        return 1.0
    if not in_area(position, config.adversaries[adversary_index]):
        return 1.0
    raw = 1.0 - config.guard_beta * (config.v_max - move) / config.v_max
    return max(0.0, raw)


def _check_actions(state: JointState, moves, guards, config: RouteEnvConfig) -> None:
    if state.n != config.n:
        raise ContractViolation("state size does not match the config")
    if len(moves) != config.n or len(guards) != config.n:
        raise ContractViolation("moves and guards must have one entry per robot")
    for x in moves:
        if abs(x) > config.v_max + 1e-12:
            raise ContractViolation(f"move {x} exceeds v_max {config.v_max}")
    for y in guards:
        if y is None:
            continue
        if not isinstance(y, (int, np.integer)) or not 0 <= y < config.m:
            raise ContractViolation(f"guard token {y!r} is not an adversary index")


def route_team_reward(state: JointState, moves, guards,
                      config: RouteEnvConfig) -> float:
    """One-step team reward: guarded area costs at pre-move positions plus
    the time penalty, negated.  Excludes the arrival bonus."""
    _check_actions(state, moves, guards, config)
    reward = -config.time_penalty
    for j, adv in enumerate(config.adversaries):
        total = 0.0
        for i in range(config.n):
            if not state.arrived_flags[i]:
                total += base_cost(state.positions[i], adv)
        if total == 0.0:
            continue
        factor = 1.0
        for k in range(config.n):
            if state.arrived_flags[k] or guards[k] != j:
                continue
            factor *= guard_discount(moves[k], guards[k], j,
                                     state.positions[k], config)
        reward -= factor * total
    return reward


def route_step(state: JointState, moves, guards, config: RouteEnvConfig):
    """Advance one step.  Returns (next_state, reward, done).

    Rewards are computed at pre-move positions; guards affect only the
    reward, never the transition.  Arrived robots ignore their move entry
    and stay at the target.  The arrival bonus is paid on the step the last
    robot arrives; the episode ends when all have arrived or the horizon is
    reached.
    """
    reward = route_team_reward(state, moves, guards, config)
    target = config.target_position
    tol = config.arrive_tol
    new_positions = []
    new_arrived = []
    for i in range(config.n):
        if state.arrived_flags[i]:
            new_positions.append(target)
            new_arrived.append(True)
            continue
        p = min(max(state.positions[i] + float(moves[i]), 0.0), config.route_length)
        if abs(p - target) <= tol:
            p = target
            new_arrived.append(True)
        else:
            new_arrived.append(False)
        new_positions.append(p)
    if all(new_arrived) and not state.all_arrived:
        reward += config.arrival_bonus
    nxt = JointState(tuple(new_positions), state.step_index + 1, tuple(new_arrived))
    done = nxt.all_arrived or nxt.step_index >= config.horizon
    return nxt, reward, done


def route_reset(config: RouteEnvConfig, seed=None) -> JointState:
    """Initial state at the configured starts, jittered when enabled."""
    positions = list(config.start_positions)
    if config.start_jitter > 0:
        rng = np.random.default_rng(seed)
        for i in range(config.n):
            positions[i] = float(np.clip(
                positions[i] + rng.uniform(-config.start_jitter, config.start_jitter),
                0.0, config.route_length))
    tol = config.arrive_tol
    arrived = tuple(abs(p - config.target_position) <= tol for p in positions)
    positions = tuple(config.target_position if a else p
                      for p, a in zip(positions, arrived))
    return JointState(positions, 0, arrived)


class RouteEnv:
    """Object wrapper binding the route functions to one config."""

    kind = "route"

    def __init__(self, config: RouteEnvConfig):
        self.config = config

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def horizon(self) -> int:
        return self.config.horizon

    @property
    def scale(self) -> float:
        """Divisor that maps positions into [0, 1] for observations."""
        return self.config.route_length

    @property
    def stochastic_reset(self) -> bool:
        return self.config.start_jitter > 0

    @property
    def guard_head_dim(self) -> int:
        """Guard-policy output width: slot 0 is no-guard, slot 1+j is adversary j."""
        return self.config.m + 1

    def reset(self, seed=None) -> JointState:
        return route_reset(self.config, seed)

    def step(self, state, moves, guards):
        return route_step(state, moves, guards, self.config)

    def team_reward(self, state, moves, guards) -> float:
        return route_team_reward(state, moves, guards, self.config)

    def guard_options(self, state: JointState, moves=None) -> tuple:
        """Per-robot legal guard tokens at pre-move positions, None first
        then adversary indices ascending.  Arrived robots only get None."""
        out = []
        for i in range(self.n):
            if state.arrived_flags[i]:
                out.append((None,))
                continue
            opts = [None]
            for j, adv in enumerate(self.config.adversaries):
                if in_area(state.positions[i], adv):
                    opts.append(j)
            out.append(tuple(opts))
        return tuple(out)

    def option_slots(self, options) -> tuple:
        """Head slot index for each option list entry."""
        return tuple(tuple(0 if o is None else o + 1 for o in opts)
                     for opts in options)

    def guard_mask(self, state: JointState, moves=None) -> np.ndarray:
        """(n, m + 1) legality mask aligned with the guard-policy head."""
        mask = np.zeros((self.n, self.guard_head_dim), dtype=bool)
        for i, slots in enumerate(self.option_slots(self.guard_options(state))):
            for s in slots:
                mask[i, s] = True
        return mask

    def guard_slot_vector(self, state, moves, guards) -> np.ndarray:
        """Head slot of each robot's chosen guard token."""
        out = np.zeros(self.n, dtype=np.int64)
        for i, y in enumerate(guards):
            out[i] = 0 if y is None else int(y) + 1
        return out

    def move_scale(self) -> float:
        """Divisor mapping moves into [-1, 1] for net inputs."""
        return self.config.v_max
