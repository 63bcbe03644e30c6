"""Continual Evaluation and the Forgetting statistic."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NormalizationError
from .envs import Task

Selector = Callable[[np.ndarray, Task], int]


@dataclass
class TaskEval:
    task_id: int
    mean_return: float
    sem: float
    returns: list[float]


def sem(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(len(values)))


def continual_eval(e, tasks, episodes: int, rng: np.random.Generator,
                   selector: Selector | None = None, usage: Counter | None = None) -> list[TaskEval]:
    """Evaluate the frozen ensemble on every task.

    Each episode picks a module from its first observation (``selector``,
    defaulting to the side-effect-free UCB choice) and acts greedily.  Nothing
    inside ``e`` is mutated; per-module eval usage is tallied into ``usage``
    when given.
    """
    from .ensemble import select

    if selector is None:
        def selector(s0, task):
            return select(e, s0)
    out = []
    for task in tasks:
        env = task.make_env()
        rets = []
        for _ in range(episodes):
            obs = env.reset(rng)
            module = e.get(selector(obs, task))
            if usage is not None:
                usage[module.id] += 1
            total = 0.0
            while not env.episode_over:
                action = int(np.argmax(module.actor.forward(obs)))
                obs, r, _ = env.step(action)
                total += r
            rets.append(total)
        out.append(TaskEval(task.task_id, float(np.mean(rets)), sem(rets), rets))
    return out


@dataclass
class EvalReport:
    """``returns[i][j]``: mean return on task ``i`` at the end of training segment ``j``."""
    returns: np.ndarray
    eval_points: list[int] = field(default_factory=list)
    episodes_per_eval: int = 16

    @classmethod
    def empty(cls, n_tasks: int, episodes_per_eval: int = 16):
        return cls(np.zeros((n_tasks, 0)), [], episodes_per_eval)

    def add_column(self, step: int, column) -> None:
        col = np.asarray(column, dtype=np.float64).reshape(-1, 1)
        self.returns = np.hstack([self.returns, col])
        self.eval_points.append(step)


@dataclass
class ForgettingStat:
    per_task: dict[int, float]
    mean: float
    sem: float = 0.0


def forgetting_metric(report: EvalReport, first_cycle_tasks: int) -> ForgettingStat:
    """Forgetting over the first cycle, positive when performance drops.

    For each task ``i`` and later first-cycle segment ``j``::

        F_ij = -10 * (r[i, j] - r[i, j-1]) / |max_k r[i, k]|

    ``F_i`` averages ``F_ij`` over ``j``; the reported mean averages over the
    tasks that have at least one later segment.
    """
    r = np.asarray(report.returns, dtype=np.float64)
    n = first_cycle_tasks
    if r.shape[1] < n:
        raise ValueError(f"report has {r.shape[1]} segments, first cycle needs {n}")
    per_task = {}
    for i in range(n - 1):
        peak = np.abs(r[i].max())
        if peak == 0.0:
            raise NormalizationError(f"task {i} maximum return is zero")
        diffs = [-10.0 * (r[i, j] - r[i, j - 1]) / peak for j in range(i + 1, n)]
        per_task[i] = float(np.mean(diffs))
    return ForgettingStat(per_task, float(np.mean(list(per_task.values()))))


def aggregate_forgetting(stats: list[ForgettingStat]) -> ForgettingStat:
    """Mean and standard error of the per-seed Forgetting means."""
    means = [s.mean for s in stats]
    tasks = sorted(stats[0].per_task)
    per_task = {i: float(np.mean([s.per_task[i] for s in stats])) for i in tasks}
    return ForgettingStat(per_task, float(np.mean(means)), sem(means))
