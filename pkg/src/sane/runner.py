"""End-to-end runs: build everything from a :class:`RunConfig`, train, write artifacts."""
from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import artifacts
from .checkpoint import load_ensemble, save_ensemble
from .config import RunConfig, apply_overrides, to_ini, validate
from .ensemble import Ensemble
from .envs import TaskSequence, make_sequence
from .errors import NormalizationError, NumericError
from .evaluation import ForgettingStat, TaskEval, aggregate_forgetting, continual_eval, \
    forgetting_metric, sem
from .losses import LossWeights, VTraceConfig
from .module import AlphaConfig, OptimizerConfig
from .seeding import seed_streams, stream_key
from .training import CollectionSchedule, RunLog, TrainSettings, run_training

SUMMARY_SCHEMA = 1
OUTPUT_ENV = "SANE_OUTPUT_DIR"


@dataclass
class RunResult:
    config: RunConfig
    output_dir: Path | None
    summary: dict
    log: RunLog
    ensemble: Ensemble
    initial_ids: list[int]


def build_sequence(cfg: RunConfig) -> TaskSequence:
    e = cfg.env
    seed = cfg.run.seed if e.task_seed is None else e.task_seed
    return make_sequence(e.family, e.n_tasks, e.cycles, e.steps_per_task, seed, n_arms=e.n_arms,
                         context_dims=e.context_dims, noise_dims=e.noise_dims, length=e.length,
                         max_steps=e.max_steps)


def loss_weights(cfg: RunConfig) -> LossWeights:
    lc = cfg.loss
    return LossWeights(lc.baseline_cost, lc.entropy_cost, lc.policy_cloning_cost,
                       lc.value_cloning_cost, lc.uncertainty_cost, lc.replay_ratio)


def vtrace_config(cfg: RunConfig) -> VTraceConfig:
    return VTraceConfig(cfg.loss.gamma, cfg.loss.rho_clip, cfg.loss.c_clip)


def optimizer_config(cfg: RunConfig) -> OptimizerConfig:
    o = cfg.optim
    return OptimizerConfig(o.learning_rate, o.rms_alpha, o.eps, o.momentum, o.grad_clip)


def schedule(cfg: RunConfig) -> CollectionSchedule:
    s = cfg.schedule
    return CollectionSchedule(s.episodes_per_window, s.batch_size, s.eval_every,
                              s.eval_episodes, s.eval_at_start)


def settings(cfg: RunConfig) -> TrainSettings:
    return TrainSettings(cfg.run.method, cfg.sane.t_cadence, cfg.sane.tau, cfg.sane.k_merge,
                         cfg.loss.reward_clip)


def module_counts(cfg: RunConfig) -> tuple[int, int]:
    """``(initial, budget)`` module counts for the configured method."""
    method, s = cfg.run.method, cfg.sane
    if method == "sane":
        return s.initial_modules, s.max_modules
    if method == "static_sane":
        return s.max_modules, s.max_modules
    if method == "single":
        return 1, 1
    return cfg.env.n_tasks, cfg.env.n_tasks


def build_ensemble(cfg: RunConfig, seq: TaskSequence, streams: dict) -> Ensemble:
    n0, budget = module_counts(cfg)
    s = cfg.sane
    return Ensemble.create(n0, budget, AlphaConfig(s.alpha_u_inf, s.alpha_u_create,
                                                   s.alpha_l_create),
                           seq.obs_dim, seq.n_actions, s.buffer_capacity, streams,
                           s.hidden_dims, optimizer_config(cfg))


def eval_rng_factory(seed: int):
    """Evaluation generator per eval step, independent of every training stream."""
    key = stream_key("eval")

    def make(step: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(int(seed), spawn_key=(key, int(step)))))
    return make


def default_output_dir(cfg: RunConfig) -> Path:
    if cfg.run.output_dir:
        return Path(cfg.run.output_dir)
    root = os.environ.get(OUTPUT_ENV, "runs")
    return Path(root) / f"{cfg.run.method}_seed{cfg.run.seed}"


def _forgetting(log: RunLog, n_tasks: int) -> ForgettingStat | None:
    try:
        return forgetting_metric(log.report, n_tasks)
    except (NormalizationError, ValueError):
        return None


def summarize(cfg: RunConfig, log: RunLog, e: Ensemble, initial_ids) -> dict:
    n = cfg.env.n_tasks
    r = log.report.returns
    f = _forgetting(log, n)
    final = r[:, -1] if r.shape[1] else np.zeros(n)
    post1 = r[:, n - 1] if r.shape[1] >= n else None
    return {
        "schema_version": SUMMARY_SCHEMA,
        "method": cfg.run.method,
        "seed": cfg.run.seed,
        "steps": log.steps,
        "n_tasks": n,
        "cycles": cfg.env.cycles,
        "report": {"eval_points": list(log.report.eval_points),
                   "returns": [[float(x) for x in row] for row in r]},
        "forgetting": None if f is None else {
            "per_task": {str(k): v for k, v in sorted(f.per_task.items())}, "mean": f.mean},
        "final_returns": [float(x) for x in final],
        "mean_final_return": float(np.mean(final)),
        "post_cycle1_returns": None if post1 is None else [float(x) for x in post1],
        "initial_ids": list(initial_ids),
        "live_ids": e.ids,
        "spawns": sum(ev.kind == "spawn" for ev in e.lineage),
        "merges": sum(ev.kind == "merge" for ev in e.lineage),
        "eval_usage": {str(k): v for k, v in sorted(log.eval_usage.items())},
    }


def run(cfg: RunConfig, output_dir: str | os.PathLike | None = None, write: bool = True,
        on_window=None) -> RunResult:
    """Train one (config, seed) and, when ``write``, emit all artifacts.

    A :class:`NumericError` mid-run dumps ``checkpoint_failure.bin`` next to the
    other artifacts before propagating.
    """
    validate(cfg)
    out = Path(output_dir) if output_dir is not None else default_output_dir(cfg)
    seq = build_sequence(cfg)
    streams = seed_streams(cfg.run.seed)
    e = build_ensemble(cfg, seq, streams)
    initial_ids = e.ids
    try:
        log = run_training(e, seq, schedule(cfg), loss_weights(cfg), vtrace_config(cfg),
                           settings(cfg), streams, eval_rng_for=eval_rng_factory(cfg.run.seed),
                           on_window=on_window)
    except NumericError:
        if write:
            save_ensemble(out / "checkpoint_failure.bin", e, {"config": to_ini(cfg)})
        raise
    summary = summarize(cfg, log, e, initial_ids)
    if write:
        if cfg.schedule.checkpoint:
            save_ensemble(out / "checkpoint.bin", e, {"config": to_ini(cfg)})
        artifacts.write_run_artifacts(out, log, e.lineage, e.ids, initial_ids, summary,
                                      to_ini(cfg))
    return RunResult(cfg, out if write else None, summary, log, e, initial_ids)


def _mean_sem(values) -> dict:
    return {"mean": float(np.mean(values)), "sem": sem(values)}


def aggregate(summaries: list[dict]) -> dict:
    """Across-seed aggregate of per-run summaries of one method."""
    finals = np.array([s["final_returns"] for s in summaries])
    out = {
        "schema_version": SUMMARY_SCHEMA,
        "method": summaries[0]["method"],
        "seeds": [s["seed"] for s in summaries],
        "final_returns": [_mean_sem(finals[:, i]) for i in range(finals.shape[1])],
        "mean_final_return": _mean_sem(finals.mean(axis=1)),
    }
    post = [s["post_cycle1_returns"] for s in summaries]
    if all(p is not None for p in post):
        post = np.array(post)
        out["post_cycle1_returns"] = [_mean_sem(post[:, i]) for i in range(post.shape[1])]
    stats = [s["forgetting"] for s in summaries]
    if all(st is not None for st in stats):
        agg = aggregate_forgetting([
            ForgettingStat({int(k): v for k, v in st["per_task"].items()}, st["mean"])
            for st in stats])
        out["forgetting"] = {"per_task": {str(k): v for k, v in agg.per_task.items()},
                             "mean": agg.mean, "sem": agg.sem,
                             "per_seed": [st["mean"] for st in stats]}
    else:
        out["forgetting"] = None
    return out


def sweep(cfg: RunConfig, seeds, output_dir: str | os.PathLike | None = None,
          write: bool = True) -> dict:
    """Run ``cfg`` once per seed (subdirectories ``seed_<n>``) and aggregate."""
    root = Path(output_dir) if output_dir is not None else (
        Path(cfg.run.output_dir) if cfg.run.output_dir else
        Path(os.environ.get(OUTPUT_ENV, "runs")) / f"{cfg.run.method}_sweep")
    summaries = []
    for seed in seeds:
        c = apply_overrides(cfg, {"run.seed": int(seed)})
        res = run(c, root / f"seed_{int(seed)}", write=write)
        summaries.append(res.summary)
    agg = aggregate(summaries)
    if write:
        artifacts.atomic_write_text(root / "summary.json", artifacts.json_text(agg))
    return agg


def evaluate_checkpoint(path, cfg: RunConfig, episodes: int | None = None,
                        seed: int | None = None) -> list[TaskEval]:
    """Re-run Continual Evaluation on a saved ensemble against ``cfg``'s tasks."""
    e, _ = load_ensemble(path)
    seq = build_sequence(cfg)
    selector = (lambda s0, task: task.task_id) if cfg.run.method == "oracle" else None
    master = cfg.run.seed if seed is None else seed
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(int(master), spawn_key=(stream_key("reeval"),))))
    return continual_eval(e, seq.tasks, episodes or cfg.schedule.eval_episodes, rng, selector,
                          Counter())
