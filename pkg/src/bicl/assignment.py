"""One-step joint guard selection.

Given the state and the moves every robot just committed to, pick the joint
guard vector maximizing the one-step team reward minus a weighted alignment
penalty that pulls the choice toward what the decentralized guard policies
would do.  `solve_guard_assignment` is the generic exhaustive form;
`solve_env_guards` evaluates the same objective vectorially for the two
built-in envs and is what the training loop calls.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, NumericalError


@dataclass(frozen=True)
class GuardCandidateSpace:
    """Per-robot legal guard option lists; each begins with None."""

    options: tuple

    def __post_init__(self):
        if len(self.options) < 1:
            raise ContractViolation("need options for at least one robot")
        for i, opts in enumerate(self.options):
            if len(opts) < 1:
                raise ContractViolation(f"robot {i} has an empty option list")

    @property
    def joint_size(self) -> int:
        return math.prod(len(o) for o in self.options)


@dataclass(frozen=True)
class AssignmentResult:
    """Chosen joint guard, its penalized objective, and how many joint
    candidates were evaluated (always the full product)."""

    guards: tuple
    objective: float
    evaluations: int


def mismatch_penalty(candidate_index: int, policy_probs) -> float:
    """Squared distance between a one-hot option choice and the policy
    distribution over the same option list.  Ranges over [0, 2]."""
    p = np.asarray(policy_probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ContractViolation("policy_probs must be a non-empty vector")
    if not 0 <= candidate_index < p.size:
        raise ContractViolation(
            f"candidate index {candidate_index} outside 0..{p.size - 1}")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-6 or p.min() < 0:
        raise ContractViolation("policy_probs must be a probability vector")
    diff = p.copy()
    diff[candidate_index] -= 1.0
    return float(np.sum(diff * diff))


def _penalty_tables(space: GuardCandidateSpace, policies) -> list:
    if len(policies) != len(space.options):
        raise ContractViolation("one policy vector per robot is required")
    tables = []
    for opts, probs in zip(space.options, policies):
        p = np.asarray(probs, dtype=np.float64)
        if p.shape != (len(opts),):
            raise ContractViolation("policy vector does not match the option list")
        tables.append(np.array([mismatch_penalty(ci, p) for ci in range(len(opts))]))
    return tables


def solve_guard_assignment(reward_fn, state, moves, space: GuardCandidateSpace,
                           policies, penalty_weight: float) -> AssignmentResult:
    """Exhaustively maximize reward_fn(state, moves, guards) minus
    penalty_weight times the summed per-robot mismatch penalties.

    Candidates are scanned in lexicographic option order (robot 0 slowest,
    None before other options), and ties keep the earliest candidate, so the
    result is deterministic.  reward_fn must return finite values.
    """
    if penalty_weight < 0:
        raise ContractViolation("penalty_weight must be non-negative")
    tables = _penalty_tables(space, policies)
    best_obj = -math.inf
    best = None
    count = 0
    for combo in itertools.product(*(range(len(o)) for o in space.options)):
        count += 1
        guards = tuple(space.options[i][ci] for i, ci in enumerate(combo))
        u = float(reward_fn(state, moves, guards))
        if not math.isfinite(u):
            raise NumericalError(f"reward is not finite for guards {guards!r}")
        obj = u - penalty_weight * sum(tables[i][ci] for i, ci in enumerate(combo))
        if obj > best_obj:
            best_obj = obj
            best = guards
    return AssignmentResult(best, best_obj, count)


def _candidate_grid(sizes) -> np.ndarray:
    """(prod(sizes), n) option indices in lexicographic order."""
    grids = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def _solve_route(env, state, moves, policies, penalty_weight) -> AssignmentResult:
    from .envs.route import base_cost, in_area

    config = env.config
    options = env.guard_options(state)
    space = GuardCandidateSpace(options)
    tables = _penalty_tables(space, policies)
    n = config.n
    # Guard discount depends only on the guard's own move; which adversary is
    # guarded selects where the factor applies.
    discount = np.array([
        max(0.0, 1.0 - config.guard_beta * (config.v_max - float(moves[k])) / config.v_max)
        for k in range(n)])
    area_total = np.zeros(config.m)
    for j, adv in enumerate(config.adversaries):
        for i in range(n):
            if not state.arrived_flags[i]:
                area_total[j] += base_cost(state.positions[i], adv)
    adv_ids = [np.array([-1 if o is None else o for o in opts]) for opts in options]
    cand = _candidate_grid([len(o) for o in options])
    chosen = np.stack([adv_ids[i][cand[:, i]] for i in range(n)], axis=1)
    cost = np.zeros(len(cand))
    for j in range(config.m):
        if area_total[j] == 0.0:
            continue
        factors = np.where(chosen == j, discount[None, :], 1.0).prod(axis=1)
        cost += factors * area_total[j]
    objective = -cost - config.time_penalty
    for i in range(n):
        objective -= penalty_weight * tables[i][cand[:, i]]
    b = int(np.argmax(objective))
    guards = tuple(options[i][cand[b, i]] for i in range(n))
    return AssignmentResult(guards, float(objective[b]), len(cand))


def _solve_graph(env, state, moves, policies, penalty_weight) -> AssignmentResult:
    config = env.config
    options = env.guard_options(state, moves)
    space = GuardCandidateSpace(options)
    tables = _penalty_tables(space, policies)
    n = config.n
    edge_ids: dict = {}

    def eid(edge) -> int:
        if edge not in edge_ids:
            edge_ids[edge] = len(edge_ids)
        return edge_ids[edge]

    crossings = []
    for i in range(n):
        if state.arrived_flags[i]:
            continue
        u, x = state.positions[i], int(moves[i])
        if u == x:
            continue
        cost = config.edge_cost(u, x)
        if cost > 0.0:
            crossings.append((eid((u, x)), cost))
    option_ids = [np.array([-1 if o is None else eid((int(o[0]), int(o[1])))
                            for o in opts]) for opts in options]
    cand = _candidate_grid([len(o) for o in options])
    chosen = np.stack([option_ids[i][cand[:, i]] for i in range(n)], axis=1)
    cost = np.zeros(len(cand))
    for edge_id, c in crossings:
        hits = (chosen == edge_id).sum(axis=1)
        cost += c * np.power(config.alpha_star, hits)
    objective = -cost - config.time_penalty
    for i in range(n):
        objective -= penalty_weight * tables[i][cand[:, i]]
    b = int(np.argmax(objective))
    guards = tuple(options[i][cand[b, i]] for i in range(n))
    return AssignmentResult(guards, float(objective[b]), len(cand))


def solve_env_guards(env, state, moves, policies, penalty_weight: float) -> AssignmentResult:
    """Vectorized equivalent of solve_guard_assignment over env.team_reward.

    Same candidate order, same tie-breaking, same evaluation count; used in
    the training hot loop.
    """
    if penalty_weight < 0:
        raise ContractViolation("penalty_weight must be non-negative")
    if env.kind == "route":
        return _solve_route(env, state, moves, policies, penalty_weight)
    if env.kind == "graph":
        return _solve_graph(env, state, moves, policies, penalty_weight)
    raise ContractViolation(f"unknown env kind {env.kind!r}")
