"""Trajectory storage and reservoir-sampled replay buffers.

Each trajectory receives a uniform random *reservoir value* the first time it
is offered to any buffer.  A buffer always keeps the trajectories with the
largest reservoir values that fit in its frame capacity, which gives every
trajectory the same chance of being retained regardless of when it was
collected.  Merging two buffers re-offers trajectories with their original
reservoir values, so the result equals a buffer that had seen the union.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, EmptyBufferError, InvalidTrajectoryError


class Step(NamedTuple):
    observation: np.ndarray
    action: int
    behavior_probs: np.ndarray
    reward: float
    done: bool


@dataclass(eq=False)
class Trajectory:
    """One episode (or truncated episode) stored as stacked arrays.

    ``rewards`` are clipped to ``[-reward_clip, reward_clip]`` on construction;
    ``episode_return`` keeps the raw undiscounted sum.  A truncated trajectory
    must carry ``final_observation`` so its value can be bootstrapped.
    """
    observations: np.ndarray
    actions: np.ndarray
    behavior_probs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    trajectory_id: int
    final_observation: np.ndarray | None = None
    reservoir_value: float | None = None
    episode_return: float | None = None
    task_id: int = -1
    reward_clip: float | None = field(default=1.0, repr=False)

    def __post_init__(self):
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=np.float64))
        self.actions = np.asarray(self.actions, dtype=np.int64).ravel()
        self.behavior_probs = np.atleast_2d(np.asarray(self.behavior_probs, dtype=np.float64))
        raw = np.asarray(self.rewards, dtype=np.float64).ravel()
        self.dones = np.asarray(self.dones, dtype=bool).ravel()
        n = len(self.actions)
        if n == 0:
            raise InvalidTrajectoryError("trajectory has no steps")
        if not (len(self.observations) == len(self.behavior_probs) == len(raw) == len(self.dones) == n):
            raise InvalidTrajectoryError("per-step arrays have inconsistent lengths")
        bp = self.behavior_probs
        if bp.min() < 0 or np.abs(bp.sum(axis=1) - 1.0).max() > 1e-9:
            raise InvalidTrajectoryError("behavior probabilities must be a distribution")
        if not self.dones[-1] and self.final_observation is None:
            raise InvalidTrajectoryError("truncated trajectory needs final_observation")
        if n > 1 and self.dones[:-1].any():
            raise InvalidTrajectoryError("done flag before the last step")
        if self.final_observation is not None:
            self.final_observation = np.asarray(self.final_observation, dtype=np.float64)
        if self.episode_return is None:
            self.episode_return = float(raw.sum())
        self.rewards = np.clip(raw, -self.reward_clip, self.reward_clip) if self.reward_clip else raw

    @classmethod
    def from_steps(cls, steps: Iterable[Step], trajectory_id: int, **kwargs) -> "Trajectory":
        steps = list(steps)
        if not steps:
            raise InvalidTrajectoryError("trajectory has no steps")
        return cls(
            observations=np.stack([s.observation for s in steps]),
            actions=[s.action for s in steps],
            behavior_probs=np.stack([s.behavior_probs for s in steps]),
            rewards=[s.reward for s in steps],
            dones=[s.done for s in steps],
            trajectory_id=trajectory_id,
            **kwargs,
        )

    def __len__(self):
        return len(self.actions)

    @property
    def truncated(self) -> bool:
        return not bool(self.dones[-1])

    @property
    def steps(self) -> list[Step]:
        return [Step(self.observations[t], int(self.actions[t]), self.behavior_probs[t],
                     float(self.rewards[t]), bool(self.dones[t])) for t in range(len(self))]


def _retention_key(traj: Trajectory):
    # heap pops the smallest key first; ties on reservoir value evict the higher id
    return (traj.reservoir_value, -traj.trajectory_id)


class ReplayBuffer:
    """Frame-capacity buffer with whole-trajectory reservoir eviction."""

    def __init__(self, capacity_frames: int, rng: np.random.Generator | None = None):
        if capacity_frames < 1:
            raise ConfigError("capacity must be positive", "capacity_frames")
        self.capacity_frames = int(capacity_frames)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.frame_count = 0
        self._items: list[Trajectory] = []
        self._index: dict[int, int] = {}
        self._heap: list[tuple[float, int, Trajectory]] = []

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __contains__(self, trajectory_id):
        return trajectory_id in self._index

    @property
    def trajectories(self) -> list[Trajectory]:
        return list(self._items)

    def retained_ids(self) -> set[int]:
        return set(self._index)

    def insert(self, traj: Trajectory) -> bool:
        """Offer ``traj``; returns True if it is still held after eviction settles."""
        if len(traj) == 0:
            raise InvalidTrajectoryError("cannot insert an empty trajectory")
        if len(traj) > self.capacity_frames:
            raise InvalidTrajectoryError(
                f"trajectory of {len(traj)} frames exceeds capacity {self.capacity_frames}")
        if traj.trajectory_id in self._index:
            return True
        if traj.reservoir_value is None:
            traj.reservoir_value = float(self.rng.random())
        self._index[traj.trajectory_id] = len(self._items)
        self._items.append(traj)
        heapq.heappush(self._heap, (*_retention_key(traj), traj))
        self.frame_count += len(traj)
        while self.frame_count > self.capacity_frames:
            _, _, victim = heapq.heappop(self._heap)
            self._remove(victim)
        return traj.trajectory_id in self._index

    def _remove(self, traj: Trajectory):
        i = self._index.pop(traj.trajectory_id)
        last = self._items.pop()
        if last is not traj:
            self._items[i] = last
            self._index[last.trajectory_id] = i
        self.frame_count -= len(traj)

    def sample(self, n: int, rng: np.random.Generator) -> list[Trajectory]:
        """``n`` trajectories drawn uniformly with replacement."""
        if n <= 0:
            return []
        if not self._items:
            raise EmptyBufferError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self._items), size=n)
        return [self._items[i] for i in idx]

    def clear(self):
        self._items.clear()
        self._index.clear()
        self._heap.clear()
        self.frame_count = 0


def merge_buffers(keep: ReplayBuffer, drop: ReplayBuffer) -> ReplayBuffer:
    """Offer every trajectory of ``drop`` to ``keep`` with its original reservoir value."""
    if keep.capacity_frames != drop.capacity_frames:
        raise ConfigError(
            f"capacity mismatch ({keep.capacity_frames} vs {drop.capacity_frames})",
            "capacity_frames")
    for traj in sorted(drop, key=lambda t: t.trajectory_id):
        keep.insert(traj)
    return keep


class TrajectoryCounter:
    """Monotone source of unique trajectory ids."""

    def __init__(self, start: int = 0):
        self._it = itertools.count(start)
        self.next_value = start

    def __call__(self) -> int:
        value = next(self._it)
        self.next_value = value + 1
        return value
