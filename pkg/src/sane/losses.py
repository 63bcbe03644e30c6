"""Return targets and loss terms for a single actor-critic module.

The module loss is ``L_rl + mu * L_ue`` where ``L_rl`` is the IMPALA
policy-gradient / baseline / entropy loss computed from V-trace targets and
``L_ue`` regresses the critic's second head onto the absolute return error.
Replayed trajectories add CLEAR's policy-cloning (KL) and value-cloning terms.

Losses are summed over time steps.  The array-level helpers return gradients
with respect to network *outputs* (actor logits, critic ``(v, raw_u)``), which
callers push through :meth:`sane.nn.Network.backward`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBehaviorError, NumericError, ShapeError
from .nn import Network, log_softmax, sigmoid, softmax, softplus
from .replay import Trajectory


@dataclass(frozen=True)
class VTraceConfig:
    gamma: float = 0.99
    rho_clip: float = 1.0
    c_clip: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.rho_clip < 1.0 or self.c_clip < 1.0:
            raise ValueError("importance clips must be >= 1")
        if self.c_clip > self.rho_clip:
            raise ValueError("c_clip must not exceed rho_clip")


@dataclass(frozen=True)
class LossWeights:
    baseline_cost: float = 5.0
    entropy_cost: float = 0.01
    policy_cloning_cost: float = 0.1
    value_cloning_cost: float = 0.005
    uncertainty_cost: float = 1.0
    replay_ratio: int = 8

    def __post_init__(self):
        for name in ("baseline_cost", "entropy_cost", "policy_cloning_cost",
                     "value_cloning_cost", "uncertainty_cost"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.replay_ratio < 0:
            raise ValueError("replay_ratio must be >= 0")


@dataclass
class LossOutput:
    total: float
    terms: dict = field(default_factory=dict)
    grad_logits: np.ndarray | None = None
    grad_critic: np.ndarray | None = None


# ---------------------------------------------------------------------------
# V-trace

def vtrace_flat(rewards, values, next_values, discounts, ratios, segment_end,
                cfg: VTraceConfig):
    """V-trace over concatenated trajectories.

    ``next_values[t]`` is ``v(s_{t+1})`` inside a trajectory and the bootstrap
    value on its last step; ``discounts[t]`` is ``gamma * (1 - done_t)``;
    ``segment_end[t]`` marks the last step of each trajectory.
    """
    rho = np.minimum(cfg.rho_clip, ratios)
    c = np.minimum(cfg.c_clip, ratios)
    delta = rho * (rewards + discounts * next_values - values)
    if segment_end.all():
        diff = delta
    else:
        diff = np.empty_like(delta)
        acc = 0.0
        for t in range(len(delta) - 1, -1, -1):
            if segment_end[t]:
                acc = 0.0
            acc = delta[t] + discounts[t] * c[t] * acc
            diff[t] = acc
    vs = values + diff
    vs_next = next_values.copy()
    inner = ~segment_end
    vs_next[inner] = vs[1:][inner[:-1]]
    pg_adv = rho * (rewards + discounts * vs_next - values)
    return vs, pg_adv


def vtrace_targets(traj: Trajectory, values, target_probs, cfg: VTraceConfig):
    """V-trace value targets and policy-gradient advantages for one trajectory.

    Args:
        traj: the trajectory, carrying behavior probabilities and done flags.
        values: ``v(s_t)`` for every step followed by the bootstrap value
            (ignored when the last step is terminal).
        target_probs: probability of each taken action under the current policy.
        cfg: discount and clipping thresholds.

    Returns:
        ``(vs, pg_adv)``, each of length ``len(traj)``.
    """
    n = len(traj)
    values = np.asarray(values, dtype=np.float64)
    target_probs = np.asarray(target_probs, dtype=np.float64)
    if values.shape != (n + 1,) or target_probs.shape != (n,):
        raise ShapeError("values must have len(traj)+1 entries and target_probs len(traj)")
    behavior = traj.behavior_probs[np.arange(n), traj.actions]
    if np.any(behavior <= 0.0):
        raise DegenerateBehaviorError("behavior probability of a taken action is zero")
    if np.any(target_probs <= 0.0):
        raise DegenerateBehaviorError("target probability of a taken action is zero")
    discounts = cfg.gamma * (~traj.dones)
    next_values = values[1:].copy()
    end = np.zeros(n, dtype=bool)
    end[-1] = True
    return vtrace_flat(traj.rewards, values[:-1], next_values, discounts,
                       target_probs / behavior, end, cfg)


# ---------------------------------------------------------------------------
# loss terms on network outputs

def actor_critic_terms(logits, actions, v, raw_u, vs, pg_adv, w: LossWeights) -> LossOutput:
    """``L_rl + mu * L_ue`` with gradients w.r.t. logits and critic outputs.

    ``vs`` and ``pg_adv`` are treated as constants, and the uncertainty target
    ``|vs - v|`` does not propagate into ``v``.
    """
    n = len(actions)
    rows = np.arange(n)
    logp = log_softmax(logits)
    pi = np.exp(logp)
    onehot = np.zeros_like(pi)
    onehot[rows, actions] = 1.0
    entropy = -(pi * logp).sum(axis=1)
    u = softplus(raw_u)
    err = np.abs(vs - v)

    pg_loss = -float(np.dot(logp[rows, actions], pg_adv))
    baseline_loss = w.baseline_cost * float(np.dot(v - vs, v - vs))
    entropy_loss = -w.entropy_cost * float(entropy.sum())
    ue_loss = w.uncertainty_cost * float(np.dot(u - err, u - err))
    total = pg_loss + baseline_loss + entropy_loss + ue_loss
    if not math.isfinite(total):
        raise NumericError("non-finite actor-critic loss")

    g_logits = -pg_adv[:, None] * (onehot - pi)
    g_logits += w.entropy_cost * pi * (logp + entropy[:, None])
    g_critic = np.empty((n, 2))
    g_critic[:, 0] = 2.0 * w.baseline_cost * (v - vs)
    g_critic[:, 1] = 2.0 * w.uncertainty_cost * (u - err) * sigmoid(raw_u)
    terms = {"policy": pg_loss, "baseline": baseline_loss,
             "entropy": entropy_loss, "uncertainty": ue_loss}
    return LossOutput(total, terms, g_logits, g_critic)


def cloning_terms(logits, behavior_probs, v, vs, w: LossWeights) -> LossOutput:
    """CLEAR cloning: ``c_pc * KL(behavior || pi) + c_vc * (v - vs)^2`` summed over steps."""
    logp = log_softmax(logits)
    pi = np.exp(logp)
    b = behavior_probs
    with np.errstate(divide="ignore", invalid="ignore"):
        blogb = np.where(b > 0, b * np.log(np.where(b > 0, b, 1.0)), 0.0)
    kl = (blogb - b * logp).sum(axis=1)
    policy_loss = w.policy_cloning_cost * float(kl.sum())
    value_loss = w.value_cloning_cost * float(np.dot(v - vs, v - vs))
    total = policy_loss + value_loss
    if not math.isfinite(total):
        raise NumericError("non-finite cloning loss")
    g_logits = w.policy_cloning_cost * (pi - b)
    g_critic = np.zeros((len(v), 2))
    g_critic[:, 0] = 2.0 * w.value_cloning_cost * (v - vs)
    return LossOutput(total, {"policy_cloning": policy_loss, "value_cloning": value_loss},
                      g_logits, g_critic)


def actor_critic_loss(traj: Trajectory, actor_outputs, critic_outputs, vs, pg_adv,
                      w: LossWeights) -> LossOutput:
    """Module loss for one trajectory given actor logits ``(T, A)`` and critic outputs ``(T, 2)``."""
    actor_outputs = np.atleast_2d(np.asarray(actor_outputs, dtype=np.float64))
    critic_outputs = np.atleast_2d(np.asarray(critic_outputs, dtype=np.float64))
    n = len(traj)
    if actor_outputs.shape[0] != n or critic_outputs.shape != (n, 2):
        raise ShapeError("network outputs are not aligned with the trajectory")
    return actor_critic_terms(actor_outputs, traj.actions, critic_outputs[:, 0],
                              critic_outputs[:, 1], np.asarray(vs, dtype=np.float64),
                              np.asarray(pg_adv, dtype=np.float64), w)


# ---------------------------------------------------------------------------
# batching helpers shared with the module update

@dataclass
class Batch:
    """Concatenated steps of several trajectories plus bootstrap bookkeeping."""
    observations: np.ndarray
    actions: np.ndarray
    behavior_probs: np.ndarray
    rewards: np.ndarray
    discounts: np.ndarray
    segment_end: np.ndarray
    bootstrap_obs: np.ndarray     # final observations of truncated trajectories
    bootstrap_rows: np.ndarray    # step index (into the batch) each bootstrap belongs to
    starts: np.ndarray            # first step index of each trajectory

    def __len__(self):
        return len(self.actions)


def make_batch(trajs: list[Trajectory], gamma: float) -> Batch:
    lengths = [len(t) for t in trajs]
    n = sum(lengths)
    obs = np.concatenate([t.observations for t in trajs])
    actions = np.concatenate([t.actions for t in trajs])
    probs = np.concatenate([t.behavior_probs for t in trajs])
    rewards = np.concatenate([t.rewards for t in trajs])
    ends = np.cumsum(lengths) - 1
    segment_end = np.zeros(n, dtype=bool)
    segment_end[ends] = True
    if n == len(trajs):
        # every trajectory is a single step
        discounts = np.array([0.0 if t.dones[0] else gamma for t in trajs])
    else:
        discounts = gamma * ~np.concatenate([t.dones for t in trajs])
    boot = [(ends[i], t.final_observation) for i, t in enumerate(trajs) if not t.dones[-1]]
    if boot:
        rows = np.array([b[0] for b in boot])
        bobs = np.stack([b[1] for b in boot])
    else:
        rows = np.zeros(0, dtype=np.int64)
        bobs = np.zeros((0, obs.shape[1]))
    return Batch(obs, actions, probs, rewards, discounts, segment_end, bobs, rows,
                 ends - np.asarray(lengths) + 1)


def batch_vtrace(batch: Batch, logits, v, boot_v, cfg: VTraceConfig):
    """V-trace targets for a :class:`Batch` given current logits and values."""
    n = len(batch)
    rows = np.arange(n)
    pi = softmax(logits)
    target = pi[rows, batch.actions]
    behavior = batch.behavior_probs[rows, batch.actions]
    if np.any(behavior <= 0.0):
        raise DegenerateBehaviorError("behavior probability of a taken action is zero")
    next_v = np.zeros(n)
    next_v[:-1] = v[1:]
    next_v[batch.segment_end] = 0.0
    if len(batch.bootstrap_rows):
        next_v[batch.bootstrap_rows] = boot_v
    return vtrace_flat(batch.rewards, v, next_v, batch.discounts, target / behavior,
                       batch.segment_end, cfg)


def clear_cloning_loss(replayed: list[Trajectory], actor: Network, critic: Network,
                       w: LossWeights, cfg: VTraceConfig | None = None,
                       return_output: bool = False):
    """CLEAR cloning loss on replayed trajectories under the current networks.

    The value-cloning target is V-trace recomputed on the replayed data with the
    current policy and critic (held constant).
    """
    cfg = cfg or VTraceConfig()
    if not replayed:
        out = LossOutput(0.0, {"policy_cloning": 0.0, "value_cloning": 0.0})
        return out if return_output else 0.0
    batch = make_batch(replayed, cfg.gamma)
    logits = actor.forward(batch.observations)
    crit = critic.forward(batch.observations)
    boot_v = critic.forward(batch.bootstrap_obs)[:, 0] if len(batch.bootstrap_rows) else None
    vs, _ = batch_vtrace(batch, logits, crit[:, 0], boot_v, cfg)
    out = cloning_terms(logits, batch.behavior_probs, crit[:, 0], vs, w)
    return out if return_output else out.total
