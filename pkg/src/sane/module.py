"""A single self-activating module: actor, two-headed critic, EMA target
critic, frozen anchor critic and a private replay buffer.

The critic emits ``(v, raw_u)``; the uncertainty ``u`` is ``softplus(raw_u)``
so it is non-negative by construction.  Confidence bounds are always read
from the target critic, never the online one.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .losses import (LossWeights, VTraceConfig, actor_critic_terms, batch_vtrace,
                     cloning_terms, make_batch)
from .nn import (Network, NetworkSpec, OptimizerState, clip_by_global_norm, clone,
                 ema_update, rmsprop_step, softplus)
from .replay import ReplayBuffer, Trajectory


@dataclass(frozen=True)
class AlphaConfig:
    """Confidence-bound widths: ``u_inf`` for activation, the ``create`` pair for drift."""
    u_inf: float = 1.0
    u_create: float = 0.1
    l_create: float = 10.0

    def __post_init__(self):
        for name in ("u_inf", "u_create", "l_create"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"alpha {name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 4e-4
    alpha: float = 0.99
    eps: float = 0.01
    momentum: float = 0.0
    grad_clip: float = 40.0

    def new_state(self, net: Network) -> OptimizerState:
        return OptimizerState.for_network(net, self.learning_rate, self.alpha, self.eps,
                                          self.momentum)


@dataclass
class UpdateStats:
    loss: float
    terms: dict
    observed_return: float      # mean V-trace target at trajectory starts
    predicted_v: float          # mean online v at trajectory starts, before the step
    predicted_u: float


@dataclass(eq=False)
class SaneModule:
    id: int
    actor: Network
    critic: Network
    target_critic: Network
    anchor: Network
    buffer: ReplayBuffer
    actor_opt: OptimizerState
    critic_opt: OptimizerState
    usage_count: int = 0
    frames_since_target_update: int = 0
    created_at_step: int = 0
    total_frames: int = field(default=0)

    @classmethod
    def create(cls, module_id: int, obs_dim: int, n_actions: int, rng: np.random.Generator,
               buffer_capacity: int, buffer_rng: np.random.Generator,
               hidden_dims=(32, 32), opt: OptimizerConfig = OptimizerConfig(),
               step: int = 0) -> "SaneModule":
        actor = Network.init(NetworkSpec(obs_dim, tuple(hidden_dims), n_actions), rng)
        critic = Network.init(NetworkSpec(obs_dim, tuple(hidden_dims), 2), rng)
        return cls(
            id=module_id,
            actor=actor,
            critic=critic,
            target_critic=clone(critic),
            anchor=clone(critic, freeze=True),
            buffer=ReplayBuffer(buffer_capacity, buffer_rng),
            actor_opt=opt.new_state(actor),
            critic_opt=opt.new_state(critic),
            created_at_step=step,
        )

    @property
    def obs_dim(self) -> int:
        return self.actor.spec.input_dim

    @property
    def n_actions(self) -> int:
        return self.actor.spec.output_dim

    def policy(self, obs) -> np.ndarray:
        logits = self.actor.forward(obs)
        z = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for net in (self.actor, self.critic, self.target_critic, self.anchor):
            h.update(net.params.tobytes())
        return h.hexdigest()

    def state_hash(self) -> str:
        """Hash of everything a module owns: parameters, optimizer state, buffer, counters."""
        h = hashlib.sha256(self.param_hash().encode())
        h.update(self.actor_opt.accumulator.tobytes())
        h.update(self.critic_opt.accumulator.tobytes())
        for t in sorted(self.buffer, key=lambda t: t.trajectory_id):
            h.update(np.array([t.trajectory_id, t.reservoir_value]).tobytes())
        h.update(np.array([self.id, self.usage_count, self.frames_since_target_update,
                           self.buffer.frame_count, self.total_frames]).tobytes())
        return h.hexdigest()


def _target_heads(m: SaneModule, s):
    out = m.target_critic.forward(s)
    return out[..., 0], softplus(out[..., 1])


def ucb(m: SaneModule, s, alpha_u: float):
    """Optimistic value ``v_bar(s) + alpha_u * u_bar(s)`` from the target critic."""
    v, u = _target_heads(m, s)
    return v + alpha_u * u


def lcb(m: SaneModule, s, alpha_l: float):
    """Pessimistic value ``v_bar(s) - alpha_l * u_bar(s)`` from the target critic."""
    v, u = _target_heads(m, s)
    return v - alpha_l * u


def anchor_value(m: SaneModule, s):
    return m.anchor.forward(s)[..., 0]


def update_anchor(m: SaneModule) -> SaneModule:
    """Replace the anchor with a frozen clone of the current online critic."""
    m.anchor = clone(m.critic, freeze=True)
    return m


def _gradient_step(m: SaneModule, fresh: list[Trajectory], replay: list[Trajectory],
                   w: LossWeights, cfg: VTraceConfig, opt: OptimizerConfig) -> UpdateStats:
    trajs = fresh + replay
    batch = make_batch(trajs, cfg.gamma)
    n_fresh = sum(len(t) for t in fresh)
    logits, a_cache = m.actor.forward_cached(batch.observations)
    crit, c_cache = m.critic.forward_cached(batch.observations)
    v = crit[:, 0]
    raw_u = crit[:, 1]
    boot_v = m.critic.forward(batch.bootstrap_obs)[:, 0] if len(batch.bootstrap_rows) else None
    vs, pg_adv = batch_vtrace(batch, logits, v, boot_v, cfg)

    g_logits = np.zeros_like(logits)
    g_critic = np.zeros_like(crit)
    terms = {}
    total = 0.0
    f = slice(0, n_fresh)
    r = slice(n_fresh, len(batch))
    if n_fresh:
        out = actor_critic_terms(logits[f], batch.actions[f], v[f], raw_u[f], vs[f],
                                 pg_adv[f], w)
        g_logits[f] = out.grad_logits
        g_critic[f] = out.grad_critic
        terms.update(out.terms)
        total += out.total
    if len(batch) > n_fresh:
        out = cloning_terms(logits[r], batch.behavior_probs[r], v[r], vs[r], w)
        g_logits[r] = out.grad_logits
        g_critic[r] = out.grad_critic
        terms.update(out.terms)
        total += out.total

    actor_grads, _ = m.actor.backward(batch.observations, g_logits, cache=a_cache,
                                     need_input_grad=False)
    critic_grads, _ = m.critic.backward(batch.observations, g_critic, cache=c_cache,
                                       need_input_grad=False)
    if not (np.all(np.isfinite(actor_grads)) and np.all(np.isfinite(critic_grads))):
        raise NumericError("non-finite gradient in module update")
    actor_grads = clip_by_global_norm(actor_grads, opt.grad_clip)
    critic_grads = clip_by_global_norm(critic_grads, opt.grad_clip)
    rmsprop_step(m.actor, actor_grads, m.actor_opt)
    rmsprop_step(m.critic, critic_grads, m.critic_opt)

    starts = batch.starts[:len(fresh)] if fresh else batch.starts
    return UpdateStats(total, terms, float(vs[starts].mean()), float(v[starts].mean()),
                       float(softplus(raw_u[starts]).mean()))


def module_update(m: SaneModule, fresh: list[Trajectory], w: LossWeights, cfg: VTraceConfig,
                  t_cadence: int, tau: float, rng: np.random.Generator,
                  opt: OptimizerConfig = OptimizerConfig(),
                  replay_only: bool = False, n_replay: int | None = None) -> UpdateStats | None:
    """One gradient step for module ``m``.

    Fresh trajectories are inserted into the module's buffer, then a single step
    is taken on the actor-critic + uncertainty loss over ``fresh`` plus the
    cloning loss over ``w.replay_ratio`` sampled trajectories per fresh one
    (``n_replay`` overrides the count, e.g. for replay-only updates).
    With ``replay_only`` the fresh batch is empty and only cloning losses apply
    (used after a merge).  The target critic moves toward the online critic by
    ``tau`` each time ``t_cadence`` fresh frames have accumulated.

    Raises :class:`NumericError` (with parameters untouched) on NaN/Inf.
    """
    if not fresh and not replay_only:
        return None
    for traj in fresh:
        m.buffer.insert(traj)
    if n_replay is None:
        n_replay = w.replay_ratio * len(fresh)
    replay = m.buffer.sample(n_replay, rng) if len(m.buffer) and n_replay > 0 else []
    if not fresh and not replay:
        return None
    stats = _gradient_step(m, list(fresh), replay, w, cfg, opt)
    frames = sum(len(t) for t in fresh)
    m.total_frames += frames
    m.frames_since_target_update += frames
    if frames and m.frames_since_target_update >= t_cadence:
        ema_update(m.target_critic, m.critic, tau)
        m.frames_since_target_update = 0
    return stats
