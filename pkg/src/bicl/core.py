"""Joint states, action containers, and local observation construction.

Robots are indexed 0..n-1.  A move vector holds one entry per robot (a
continuous velocity on the route, a destination node on the graph) and a
guard vector holds one entry per robot: None for "no guard" or an
env-specific token (an adversary index on the route, an ordered edge in the
graph).  Observations are fixed-length local views of the joint state built
from an ObservationTopology.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, TopologyError

# Plain tuples, one entry per robot.  Kept as aliases so signatures stay
# readable; the envs validate entries against their own legality rules.
MoveVector = tuple
GuardVector = tuple


@dataclass(frozen=True)
class JointState:
    """Immutable joint configuration of the team at one time step.

    arrived_flags are absorbing: once a robot arrives it stays arrived and
    the envs pin it to the target.
    """

    positions: tuple
    step_index: int
    arrived_flags: tuple

    def __post_init__(self) -> None:
        if len(self.positions) != len(self.arrived_flags):
            raise ContractViolation("positions and arrived_flags lengths differ")
        if self.step_index < 0:
            raise ContractViolation("step_index must be non-negative")

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def all_arrived(self) -> bool:
        return all(self.arrived_flags)


@dataclass(frozen=True)
class ObservationTopology:
    """Which robots each robot observes.

    neighbor_sets[i] is sorted ascending, always contains i, and always has
    exactly k members.
    """

    neighbor_sets: tuple[tuple[int, ...], ...]
    mode: str
    k: int

    def __post_init__(self) -> None:
        n = len(self.neighbor_sets)
        for i, members in enumerate(self.neighbor_sets):
            if len(members) != self.k:
                raise TopologyError(f"neighbor set {i} has {len(members)} members, wanted {self.k}")
            if i not in members:
                raise TopologyError(f"robot {i} missing from its own neighbor set")
            if tuple(sorted(members)) != tuple(members):
                raise TopologyError(f"neighbor set {i} is not sorted")
            if members[0] < 0 or members[-1] >= n:
                raise TopologyError(f"neighbor set {i} has out-of-range indices")

    @property
    def n(self) -> int:
        return len(self.neighbor_sets)


def build_topology(n: int, mode: str, k: int) -> ObservationTopology:
    """Construct the neighbor sets for n robots.

    mode "window": the k consecutive indices centered on i (biased low for
    even k), shifted to stay inside 0..n-1.  mode "ring": the k circularly
    nearest indices to i, preferring the lower side on ties.
    """
    if n < 1:
        raise TopologyError("need at least one robot")
    if k < 1 or k > n:
        raise TopologyError(f"k={k} outside 1..{n}")
    sets = []
    if mode == "window":
        for i in range(n):
            start = min(max(i - (k - 1) // 2, 0), n - k)
            sets.append(tuple(range(start, start + k)))
    elif mode == "ring":
        offsets = [0]
        d = 1
        while len(offsets) < k:
            offsets.append(-d)
            if len(offsets) < k:
                offsets.append(d)
            d += 1
        for i in range(n):
            sets.append(tuple(sorted((i + o) % n for o in offsets)))
    else:
        raise TopologyError(f"unknown topology mode {mode!r}")
    return ObservationTopology(tuple(sets), mode, k)


def observe(topology: ObservationTopology, state: JointState, i: int,
            scale: float, horizon: int) -> np.ndarray:
    """Local observation for robot i, length k + 2.

    Layout: neighbor positions (ascending robot index, own position among
    them) scaled by 1/scale, then the robot's own arrived flag, then the
    step fraction step_index/horizon.  The returned array is read-only.
    """
    if not 0 <= i < topology.n:
        raise ContractViolation(f"robot index {i} outside topology of size {topology.n}")
    if state.n != topology.n:
        raise ContractViolation("state and topology disagree on team size")
    if scale <= 0 or horizon <= 0:
        raise ContractViolation("scale and horizon must be positive")
    members = topology.neighbor_sets[i]
    out = np.empty(topology.k + 2)
    for slot, j in enumerate(members):
        out[slot] = state.positions[j] / scale
    out[topology.k] = 1.0 if state.arrived_flags[i] else 0.0
    out[topology.k + 1] = state.step_index / horizon
    out.flags.writeable = False
    return out


def observe_batch(topology: ObservationTopology, i: int, positions: np.ndarray,
                  arrived: np.ndarray, step_indices: np.ndarray,
                  scale: float, horizon: int) -> np.ndarray:
    """Vectorized observe() over rows of stored states.

    positions and arrived are (batch, n), step_indices is (batch,).  Returns
    (batch, k + 2) with the same layout as observe().
    """
    if scale <= 0 or horizon <= 0:
        raise ContractViolation("scale and horizon must be positive")
    members = list(topology.neighbor_sets[i])
    k = topology.k
    out = np.empty((positions.shape[0], k + 2))
    out[:, :k] = positions[:, members] / scale
    out[:, k] = arrived[:, i]
    out[:, k + 1] = step_indices / horizon
    return out
