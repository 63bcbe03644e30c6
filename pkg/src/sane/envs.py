"""Toy non-stationary environments and task sequences.

Both families emit flat observations in ``[0, 1]^d`` whose first
``context_dims`` entries are a (slightly noisy) one-hot task context, so the
first frame of an episode identifies the task.

* ``bandit`` -- one-step contextual bandit.  Reward is ``+1`` for the task's
  best arm and ``-0.1`` otherwise.
* ``chain`` -- corridor of ``length`` cells, start at cell 0, goal at the far
  end.  Each task permutes which action index means left / right / interact.
  Every step costs ``0.01``; reaching the goal pays ``+1``.  Episodes are cut
  at ``max_steps`` (truncation, not termination).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EpisodeFinishedError

CONTEXT_NOISE = 0.05
BANDIT_HIT, BANDIT_MISS = 1.0, -0.1
CHAIN_STEP_COST = 0.01
LEFT, RIGHT, INTERACT = 0, 1, 2


@dataclass(frozen=True)
class Task:
    task_id: int
    family: str
    steps: int
    context_dims: int
    params: dict = field(default_factory=dict, hash=False, compare=True)

    def make_env(self):
        if self.family == "bandit":
            return ContextualBandit(self)
        if self.family == "chain":
            return ChainWorld(self)
        raise ConfigError(f"unknown environment family {self.family!r}", "env.family")

    @property
    def n_actions(self) -> int:
        return self.params["n_arms"] if self.family == "bandit" else 3

    @property
    def obs_dim(self) -> int:
        extra = self.params.get("length", 0) if self.family == "chain" else 0
        return self.context_dims + extra + self.params.get("noise_dims", 0)


def _context(task: Task, rng: np.random.Generator) -> np.ndarray:
    onehot = np.zeros(task.context_dims)
    onehot[task.task_id] = 1.0
    jitter = rng.uniform(0.0, CONTEXT_NOISE, size=task.context_dims)
    # jitter always points into the unit interval
    return onehot + (1.0 - 2.0 * onehot) * jitter


class ContextualBandit:
    def __init__(self, task: Task):
        self.task = task
        self.n_arms = task.params["n_arms"]
        self.best_arm = task.params["best_arm"]
        self.noise_dims = task.params.get("noise_dims", 0)
        self.done = True
        self.truncated = False
        self._obs = None

    n_actions = property(lambda self: self.n_arms)
    obs_dim = property(lambda self: self.task.obs_dim)
    episode_over = property(lambda self: self.done)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._obs = np.concatenate([_context(self.task, rng), rng.uniform(size=self.noise_dims)])
        self.done = False
        self.truncated = False
        return self._obs.copy()

    def step(self, action: int):
        if self.done:
            raise EpisodeFinishedError("step() called on a finished episode")
        if not 0 <= action < self.n_arms:
            raise ValueError(f"action {action} out of range")
        self.done = True
        reward = BANDIT_HIT if action == self.best_arm else BANDIT_MISS
        return self._obs.copy(), reward, True

    def optimal_return(self) -> float:
        return BANDIT_HIT

    def expected_return(self, probs) -> float:
        """Exact expected return of a stochastic arm choice."""
        probs = np.asarray(probs, dtype=np.float64)
        return float(probs[self.best_arm] * BANDIT_HIT + (1 - probs[self.best_arm]) * BANDIT_MISS)


class ChainWorld:
    def __init__(self, task: Task):
        self.task = task
        self.length = task.params["length"]
        self.max_steps = task.params["max_steps"]
        self.perm = tuple(task.params["perm"])   # action index -> LEFT/RIGHT/INTERACT
        self.noise_dims = task.params.get("noise_dims", 0)
        self.done = True
        self.truncated = False

    n_actions = 3
    obs_dim = property(lambda self: self.task.obs_dim)

    def _observe(self):
        pos = np.zeros(self.length)
        pos[self.pos] = 1.0
        return np.concatenate([self._ctx, pos, self._noise])

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._ctx = _context(self.task, rng)
        self._noise = rng.uniform(size=self.noise_dims)
        self.pos = 0
        self.t = 0
        self.done = False
        self.truncated = False
        return self._observe()

    @property
    def episode_over(self) -> bool:
        return self.done or self.truncated

    def step(self, action: int):
        if self.episode_over:
            raise EpisodeFinishedError("step() called on a finished episode")
        if not 0 <= action < 3:
            raise ValueError(f"action {action} out of range")
        move = self.perm[action]
        if move == LEFT:
            self.pos = max(0, self.pos - 1)
        elif move == RIGHT:
            self.pos = min(self.length - 1, self.pos + 1)
        self.t += 1
        reward = -CHAIN_STEP_COST
        if self.pos == self.length - 1:
            reward += 1.0
            self.done = True
        elif self.t >= self.max_steps:
            self.truncated = True
        return self._observe(), reward, self.done

    def optimal_return(self) -> float:
        return 1.0 - CHAIN_STEP_COST * (self.length - 1)


@dataclass(frozen=True)
class TaskSequence:
    tasks: tuple[Task, ...]
    cycles: int = 1

    def __post_init__(self):
        if self.cycles < 1:
            raise ConfigError("cycles must be >= 1", "env.cycles")

    def __len__(self):
        return len(self.tasks)

    @property
    def total_steps(self) -> int:
        return self.cycles * sum(t.steps for t in self.tasks)

    def segments(self):
        """Yield ``(segment_index, cycle, task)`` in training order."""
        k = 0
        for c in range(self.cycles):
            for task in self.tasks:
                yield k, c, task
                k += 1

    @property
    def obs_dim(self) -> int:
        return self.tasks[0].obs_dim

    @property
    def n_actions(self) -> int:
        return self.tasks[0].n_actions


def make_sequence(family: str, n_tasks: int, cycles: int, step_budgets, seed: int,
                  n_arms: int = 4, context_dims: int | None = None, noise_dims: int | None = None,
                  length: int = 8, max_steps: int = 32) -> TaskSequence:
    """Build ``n_tasks`` tasks whose optimal policies pairwise conflict.

    ``step_budgets`` is one int applied to every task or a per-task list.
    """
    if n_tasks < 2:
        raise ConfigError("a task sequence needs at least two tasks", "env.n_tasks")
    budgets = [int(step_budgets)] * n_tasks if np.isscalar(step_budgets) else list(step_budgets)
    if len(budgets) != n_tasks or any(b < 1 for b in budgets):
        raise ConfigError("need one positive step budget per task", "env.steps_per_task")
    context_dims = max(4, n_tasks) if context_dims is None else context_dims
    if context_dims < n_tasks:
        raise ConfigError("context_dims must be >= n_tasks", "env.context_dims")
    rng = np.random.default_rng(seed)
    tasks = []
    if family == "bandit":
        if n_tasks > n_arms:
            raise ConfigError(f"bandit with {n_arms} arms supports at most {n_arms} "
                              "tasks with distinct best arms", "env.n_tasks")
        noise = 4 if noise_dims is None else noise_dims
        arms = rng.permutation(n_arms)[:n_tasks]
        for i, arm in enumerate(arms):
            tasks.append(Task(i, "bandit", budgets[i], context_dims,
                              {"n_arms": n_arms, "best_arm": int(arm), "noise_dims": noise}))
    elif family == "chain":
        if n_tasks > 3:
            raise ConfigError("chain supports at most 3 tasks with conflicting optimal "
                              "actions", "env.n_tasks")
        noise = 0 if noise_dims is None else noise_dims
        right_actions = rng.permutation(3)[:n_tasks]
        for i, r in enumerate(right_actions):
            others = [a for a in range(3) if a != r]
            rng.shuffle(others)
            perm = [0, 0, 0]
            perm[r] = RIGHT
            perm[others[0]] = LEFT
            perm[others[1]] = INTERACT
            tasks.append(Task(i, "chain", budgets[i], context_dims,
                              {"length": length, "max_steps": max_steps, "perm": tuple(perm),
                               "noise_dims": noise}))
    else:
        raise ConfigError(f"unknown environment family {family!r}", "env.family")
    return TaskSequence(tuple(tasks), cycles)


def chain_policy_return(task: Task, policy: tuple[int, ...]) -> float:
    """Return of a deterministic position-indexed policy on a chain task."""
    env = ChainWorld(task)
    env.reset(np.random.default_rng(0))
    total = 0.0
    while not env.episode_over:
        _, r, _ = env.step(policy[env.pos])
        total += r
    return total


def optimal_actions(task: Task) -> set:
    """Set of optimal deterministic policies found by exhaustive enumeration."""
    if task.family == "bandit":
        env = ContextualBandit(task)
        rets = {a: env.expected_return(np.eye(env.n_arms)[a]) for a in range(env.n_arms)}
        best = max(rets.values())
        return {(a,) for a, r in rets.items() if r == best}
    length = task.params["length"]
    policies = list(itertools.product(range(3), repeat=length - 1))
    rets = {p: chain_policy_return(task, p + (0,)) for p in policies}
    best = max(rets.values())
    return {p for p, r in rets.items() if r == best}
