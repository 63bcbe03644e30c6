"""Dynamic ensemble of self-activating modules.

Structure updates follow one fixed order after every activation window:

1. drift check on the active module (negative first, positive only otherwise);
2. negative drift spawns a clone of the active module with an empty buffer
   and a fresh anchor; positive drift refreshes the active module's anchor;
3. while the ensemble exceeds its budget, the two modules whose mean replay
   observations are closest are merged into the more-used one.
"""
from __future__ import annotations

import enum
import hashlib
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownModuleError
from .losses import LossWeights, VTraceConfig
from .module import (AlphaConfig, OptimizerConfig, SaneModule, anchor_value, lcb,
                     module_update, ucb, update_anchor)
from .nn import clone
from .replay import ReplayBuffer, merge_buffers


class DriftVerdict(enum.Enum):
    NONE = "none"
    NEGATIVE = "negative"
    POSITIVE = "positive"


@dataclass(frozen=True)
class LineageEvent:
    kind: str            # "spawn" or "merge"
    parent_id: int       # spawning parent, or merge survivor
    child_id: int        # spawned child, or module dropped by the merge
    step: int

    def to_json(self) -> dict:
        return {"kind": self.kind, "parent": self.parent_id, "child": self.child_id,
                "step": self.step}

    @classmethod
    def from_json(cls, d: dict) -> "LineageEvent":
        return cls(d["kind"], int(d["parent"]), int(d["child"]), int(d["step"]))


@dataclass
class MergeResult:
    keep_id: int
    drop_id: int
    distance: float


@dataclass(eq=False)
class Ensemble:
    modules: list[SaneModule]
    max_modules: int
    alphas: AlphaConfig
    obs_dim: int
    n_actions: int
    buffer_capacity: int
    rngs: dict = field(repr=False, default_factory=dict)
    hidden_dims: tuple = (32, 32)
    opt: OptimizerConfig = OptimizerConfig()
    next_id: int = 0
    lineage: list[LineageEvent] = field(default_factory=list)

    @classmethod
    def create(cls, n_modules: int, max_modules: int, alphas: AlphaConfig, obs_dim: int,
               n_actions: int, buffer_capacity: int, rngs: dict, hidden_dims=(32, 32),
               opt: OptimizerConfig = OptimizerConfig()) -> "Ensemble":
        """Ensemble with ``n_modules`` independently initialized modules (ids 0..n-1)."""
        e = cls([], max_modules, alphas, obs_dim, n_actions, buffer_capacity, rngs,
                tuple(hidden_dims), opt)
        for _ in range(n_modules):
            e.modules.append(SaneModule.create(
                e.next_id, obs_dim, n_actions, rngs["init"], buffer_capacity,
                rngs["reservoir"], hidden_dims, opt))
            e.next_id += 1
        return e

    def __len__(self):
        return len(self.modules)

    @property
    def ids(self) -> list[int]:
        return [m.id for m in self.modules]

    def get(self, module_id: int) -> SaneModule:
        for m in self.modules:
            if m.id == module_id:
                return m
        raise UnknownModuleError(module_id)

    def state_hash(self) -> str:
        h = hashlib.sha256()
        for m in sorted(self.modules, key=lambda m: m.id):
            h.update(m.state_hash().encode())
        h.update(str(self.next_id).encode())
        for ev in self.lineage:
            h.update(repr(ev).encode())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# activation

def activation_scores(e: Ensemble, s0) -> dict[int, float]:
    return {m.id: float(ucb(m, s0, e.alphas.u_inf)) for m in e.modules}


def select(e: Ensemble, s0) -> int:
    """Id of the module with the highest activation score; ties go to the lowest id.

    Side-effect free; use :func:`activate` during training.
    """
    scores = activation_scores(e, s0)
    return min(scores, key=lambda i: (-scores[i], i))


def activate(e: Ensemble, s0) -> int:
    mid = select(e, s0)
    e.get(mid).usage_count += 1
    return mid


# ---------------------------------------------------------------------------
# drift

@dataclass
class DriftStats:
    upper: float
    lower: float
    anchor: float
    verdict: DriftVerdict


def drift_stats(m: SaneModule, s_batch, alphas: AlphaConfig) -> DriftStats:
    s = np.atleast_2d(np.asarray(s_batch, dtype=np.float64))
    if len(s) == 0:
        raise ValueError("drift check needs at least one observation")
    upper = float(np.mean(ucb(m, s, alphas.u_create)))
    lower = float(np.mean(lcb(m, s, alphas.l_create)))
    anchor = float(np.mean(anchor_value(m, s)))
    if upper < anchor:
        verdict = DriftVerdict.NEGATIVE
    elif lower > anchor:
        verdict = DriftVerdict.POSITIVE
    else:
        verdict = DriftVerdict.NONE
    return DriftStats(upper, lower, anchor, verdict)


def detect_drift(m: SaneModule, s_batch, alphas: AlphaConfig) -> DriftVerdict:
    """Compare the target critic's confidence interval with the anchor's value,
    averaged over ``s_batch`` (the window's episode-start observations)."""
    return drift_stats(m, s_batch, alphas).verdict


# ---------------------------------------------------------------------------
# structure updates

def create_module(e: Ensemble, parent_id: int, step: int) -> int:
    """Spawn a clone of ``parent_id`` with an empty buffer and an anchor taken
    from the parent's current critic.  The parent is left untouched."""
    parent = e.get(parent_id)
    child = SaneModule(
        id=e.next_id,
        actor=clone(parent.actor),
        critic=clone(parent.critic),
        target_critic=clone(parent.target_critic),
        anchor=clone(parent.critic, freeze=True),
        buffer=ReplayBuffer(parent.buffer.capacity_frames, e.rngs["reservoir"]),
        actor_opt=e.opt.new_state(parent.actor),
        critic_opt=e.opt.new_state(parent.critic),
        created_at_step=step,
    )
    e.next_id += 1
    e.modules.append(child)
    e.lineage.append(LineageEvent("spawn", parent.id, child.id, step))
    return child.id


def mean_frame(m: SaneModule, k: int, rng: np.random.Generator) -> np.ndarray | None:
    """Mean observation over all steps of ``min(k, len(buffer))`` sampled trajectories.

    Returns ``None`` for an empty buffer (treated as infinitely far from everything).
    """
    n = len(m.buffer)
    if n == 0:
        return None
    trajs = m.buffer.trajectories
    if k < n:
        idx = np.sort(rng.choice(n, size=k, replace=False))
        trajs = [trajs[i] for i in idx]
    obs = np.concatenate([t.observations for t in trajs])
    return obs.mean(axis=0)


def closest_pair(frames: dict[int, np.ndarray | None]) -> tuple[int, int, float]:
    """Pair of ids minimizing the L2 distance between mean frames.

    Ties resolve to the lexicographically lowest ``(id_i, id_j)``.  Modules
    without a frame (empty buffer) are left out of the scan.  When fewer than
    two modules have frames, the newest frameless module is paired with the
    lowest other id at infinite distance, so the budget can still be met by
    discarding the most recent (and least trained) clone.
    """
    if len(frames) < 2:
        raise ValueError("need at least two modules to pick a merge pair")
    best = None
    with_frames = sorted(i for i, g in frames.items() if g is not None)
    for i, j in itertools.combinations(with_frames, 2):
        d = float(np.linalg.norm(frames[i] - frames[j]))
        if best is None or (d, i, j) < best:
            best = (d, i, j)
    if best is not None:
        return best[1], best[2], best[0]
    newest = max(i for i, g in frames.items() if g is None)
    other = min(i for i in frames if i != newest)
    return min(other, newest), max(other, newest), float("inf")


def merge_step(e: Ensemble, w: LossWeights, cfg: VTraceConfig, step: int,
               t_cadence: int, tau: float, k_merge: int = 32,
               batch_size: int = 2) -> list[MergeResult]:
    """Merge module pairs until the ensemble is within its budget.

    The survivor takes one replay-only update over ``replay_ratio * batch_size``
    trajectories drawn from the combined buffer.
    """
    merges = []
    while len(e.modules) > e.max_modules:
        frames = {m.id: mean_frame(m, k_merge, e.rngs["merge"]) for m in e.modules}
        i, j, dist = closest_pair(frames)
        mi, mj = e.get(i), e.get(j)
        keep, drop = (mi, mj) if (mi.usage_count, -mi.id) >= (mj.usage_count, -mj.id) else (mj, mi)
        merge_buffers(keep.buffer, drop.buffer)
        keep.usage_count += drop.usage_count
        module_update(keep, [], w, cfg, t_cadence, tau, e.rngs["replay"], e.opt,
                      replay_only=True, n_replay=w.replay_ratio * batch_size)
        e.lineage.append(LineageEvent("merge", keep.id, drop.id, step))
        e.modules = [m for m in e.modules if m.id != drop.id]
        merges.append(MergeResult(keep.id, drop.id, dist))
    return merges


def replay_lineage(events, initial_ids) -> set[int]:
    """Live module ids implied by applying ``events`` to ``initial_ids``."""
    live = set(initial_ids)
    for ev in events:
        if ev.kind == "spawn":
            live.add(ev.child_id)
        elif ev.kind == "merge":
            live.discard(ev.child_id)
        else:
            raise ValueError(f"unknown lineage event kind {ev.kind!r}")
    return live


def structure_update(e: Ensemble, active_id: int, s_batch, w: LossWeights, cfg: VTraceConfig,
                     step: int, t_cadence: int, tau: float, k_merge: int = 32,
                     batch_size: int = 2):
    """Drift dispatch followed by budget enforcement.

    Returns ``(drift_stats, spawned_id_or_None, merges)``.
    """
    m = e.get(active_id)
    stats = drift_stats(m, s_batch, e.alphas)
    spawned = None
    if stats.verdict is DriftVerdict.NEGATIVE:
        spawned = create_module(e, active_id, step)
    elif stats.verdict is DriftVerdict.POSITIVE:
        update_anchor(m)
    merges = merge_step(e, w, cfg, step, t_cadence, tau, k_merge, batch_size)
    return stats, spawned, merges
