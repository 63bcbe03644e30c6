"""Training loop shared by SANE and its baselines.

One *activation window*: reset, pick a module from the first observation,
collect ``episodes_per_window`` episodes in lockstep with that module's actor
on the current task, update the module in ``batch_size`` chunks, then (SANE
only) run the drift check and structure update.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ensemble import Ensemble, activate, select, structure_update
from .envs import TaskSequence
from .evaluation import EvalReport, continual_eval
from .losses import LossWeights, VTraceConfig
from .module import SaneModule, module_update
from .replay import Trajectory, TrajectoryCounter

METHODS = ("sane", "static_sane", "single", "oracle")


@dataclass(frozen=True)
class CollectionSchedule:
    episodes_per_window: int = 4
    batch_size: int = 2
    eval_every: int = 0          # steps between periodic evals; 0 = segment ends only
    eval_episodes: int = 16
    eval_at_start: bool = True


@dataclass(frozen=True)
class TrainSettings:
    method: str = "sane"
    t_cadence: int = 1000
    tau: float = 0.9
    k_merge: int = 32
    reward_clip: float = 1.0


@dataclass
class WindowInfo:
    step_start: int
    step_end: int
    segment: int
    task_id: int
    active_id: int
    verdict: str | None = None
    spawned_id: int | None = None
    merges: list = field(default_factory=list)


@dataclass
class RunLog:
    module_ids: list = field(default_factory=list)       # (step, module_id)
    critic_trace: list = field(default_factory=list)     # (step, observed, v, u, module_id)
    returns: list = field(default_factory=list)          # (step, task_id, mean, sem)
    report: EvalReport | None = None
    eval_usage: dict = field(default_factory=dict)
    steps: int = 0


def collect_window(module: SaneModule, envs, first_obs, env_rng, action_rng,
                   next_id: Callable[[], int], task_id: int = -1,
                   reward_clip: float = 1.0) -> list[Trajectory]:
    """Run one episode per env in lockstep under ``module``'s stochastic policy.

    ``envs[0]`` must already be reset and showing ``first_obs``; the others are
    reset here.  Trajectories are returned in env order.
    """
    k = len(envs)
    obs = [first_obs] + [env.reset(env_rng) for env in envs[1:]]
    bufs = [dict(o=[], a=[], p=[], r=[], d=[]) for _ in range(k)]
    alive = list(range(k))
    while alive:
        x = np.stack([obs[i] for i in alive])
        probs = module.policy(x)
        cum = np.cumsum(probs, axis=1)
        draws = action_rng.random(len(alive))
        actions = np.minimum((cum < draws[:, None] * cum[:, -1:]).sum(axis=1), probs.shape[1] - 1)
        still = []
        for row, i in enumerate(alive):
            a = int(actions[row])
            nxt, r, done = envs[i].step(a)
            b = bufs[i]
            b["o"].append(obs[i])
            b["a"].append(a)
            b["p"].append(probs[row])
            b["r"].append(r)
            b["d"].append(done)
            obs[i] = nxt
            if not envs[i].episode_over:
                still.append(i)
        alive = still
    out = []
    for i, b in enumerate(bufs):
        truncated = not b["d"][-1]
        out.append(Trajectory(
            observations=np.stack(b["o"]), actions=b["a"], behavior_probs=np.stack(b["p"]),
            rewards=b["r"], dones=b["d"], trajectory_id=next_id(),
            final_observation=obs[i] if truncated else None, task_id=task_id,
            reward_clip=reward_clip))
    return out


def _selector(e: Ensemble, method: str):
    if method == "oracle":
        return lambda s0, task: task.task_id
    return lambda s0, task: select(e, s0)


def run_training(e: Ensemble, seq: TaskSequence, schedule: CollectionSchedule,
                 w: LossWeights, cfg: VTraceConfig, settings: TrainSettings, streams: dict,
                 eval_rng_for: Callable[[int], np.random.Generator] | None = None,
                 on_window: Callable[[Ensemble, WindowInfo], None] | None = None,
                 traj_counter: TrajectoryCounter | None = None) -> RunLog:
    """Train ``e`` on ``seq`` and return per-window and evaluation records.

    ``eval_rng_for(step)`` supplies an evaluation generator per eval point so
    evaluations never consume training randomness.
    """
    method = settings.method
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    counter = traj_counter or TrajectoryCounter()
    if eval_rng_for is None:
        eval_rng = streams["eval"]
        eval_rng_for = lambda step: eval_rng  # noqa: E731
    log = RunLog(report=EvalReport.empty(len(seq), schedule.eval_episodes))
    usage_tally: dict[int, int] = {}
    selector = _selector(e, method)
    env_rng, action_rng, replay_rng = streams["env"], streams["action"], streams["replay"]

    def evaluate(step):
        from collections import Counter
        tally = Counter()
        res = continual_eval(e, seq.tasks, schedule.eval_episodes, eval_rng_for(step),
                             selector, tally)
        for k, v in tally.items():
            usage_tally[k] = usage_tally.get(k, 0) + v
        for r in res:
            log.returns.append((step, r.task_id, r.mean_return, r.sem))
        return res

    t = 0
    next_eval = schedule.eval_every if schedule.eval_every > 0 else None
    if schedule.eval_at_start:
        evaluate(0)
    for seg, _cycle, task in seq.segments():
        envs = [task.make_env() for _ in range(schedule.episodes_per_window)]
        seg_end = t + task.steps
        while t < seg_end:
            s0 = envs[0].reset(env_rng)
            if method == "oracle":
                mid = task.task_id
                e.get(mid).usage_count += 1
            elif method == "single":
                mid = e.modules[0].id
                e.modules[0].usage_count += 1
            else:
                mid = activate(e, s0)
            m = e.get(mid)
            n_eps = min(len(envs), seg_end - t) if task.family == "bandit" else len(envs)
            fresh = collect_window(m, envs[:max(1, n_eps)], s0, env_rng, action_rng, counter,
                                   task.task_id, settings.reward_clip)
            frames = sum(len(tr) for tr in fresh)
            info = WindowInfo(t, t + frames, seg, task.task_id, mid)
            log.module_ids.append((t, mid))

            stats = []
            for i in range(0, len(fresh), schedule.batch_size):
                st = module_update(m, fresh[i:i + schedule.batch_size], w, cfg,
                                   settings.t_cadence, settings.tau, replay_rng, e.opt)
                if st is not None:
                    stats.append(st)
            if stats:
                log.critic_trace.append((t, float(np.mean([s.observed_return for s in stats])),
                                         float(np.mean([s.predicted_v for s in stats])),
                                         float(np.mean([s.predicted_u for s in stats])), mid))
            t += frames
            if method == "sane":
                starts = np.stack([tr.observations[0] for tr in fresh])
                ds, spawned, merges = structure_update(
                    e, mid, starts, w, cfg, t, settings.t_cadence, settings.tau,
                    settings.k_merge, schedule.batch_size)
                info.verdict = ds.verdict.value
                info.spawned_id = spawned
                info.merges = merges
            if on_window is not None:
                on_window(e, info)
            if next_eval is not None and t >= next_eval and t < seg_end:
                evaluate(t)
                while next_eval <= t:
                    next_eval += schedule.eval_every
        res = evaluate(t)
        log.report.add_column(t, [r.mean_return for r in res])
        if next_eval is not None:
            while next_eval <= t:
                next_eval += schedule.eval_every
    log.eval_usage = usage_tally
    log.steps = t
    return log
