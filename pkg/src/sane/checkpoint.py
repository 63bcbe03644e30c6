"""Versioned binary checkpoints for networks and whole ensembles.

Layout (all integers and reals little-endian)::

    magic        4 bytes   b"SANE"
    version      u16       FORMAT_VERSION
    kind         u8        1 = network, 2 = ensemble
    payload

Network record::

    n_dims u16, dims u32[n_dims], frozen u8, params f64[n_params]

Ensemble payload::

    meta_len u32, meta  (UTF-8 JSON: ensemble scalars, lineage, rng states,
                         per-module counters)
    n_modules u32, then per module (in ensemble order):
        actor, critic, target_critic, anchor     network records
        actor_opt, critic_opt                    n u32, steps u64, accumulator f64[n]
        buffer                                   capacity u64, n_traj u32, trajectories

Trajectory record::

    id i64, task_id i64, reservoir f64, episode_return f64,
    length u32, obs_dim u32, n_actions u32, has_final u8,
    observations f64[length*obs_dim], actions i64[length],
    behavior_probs f64[length*n_actions], rewards f64[length] (already clipped),
    dones u8[length], final_observation f64[obs_dim] (only if has_final)
"""
from __future__ import annotations

import io
import json
import os
import struct

import numpy as np

from .errors import FormatError
from .nn import Network, NetworkSpec, OptimizerState
from .replay import ReplayBuffer, Trajectory

MAGIC = b"SANE"
FORMAT_VERSION = 1
KIND_NETWORK = 1
KIND_ENSEMBLE = 2


class _Reader:
    def __init__(self, data: bytes):
        self.buf = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise FormatError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        width = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(width * count), dtype=dtype, count=count).copy()


def _header(out: io.BytesIO, kind: int):
    out.write(MAGIC)
    out.write(struct.pack("<HB", FORMAT_VERSION, kind))


def _read_header(r: _Reader, kind: int):
    if bytes(r.take(4)) != MAGIC:
        raise FormatError("not a checkpoint (bad magic bytes)")
    version, got = r.unpack("<HB")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if got != kind:
        raise FormatError(f"expected record kind {kind}, found {got}")


def _write_network(out: io.BytesIO, net: Network):
    dims = net.spec.dims
    out.write(struct.pack("<H", len(dims)))
    out.write(struct.pack(f"<{len(dims)}I", *dims))
    out.write(struct.pack("<B", int(net.frozen)))
    out.write(net.params.astype("<f8").tobytes())


def _read_network(r: _Reader) -> Network:
    (n,) = r.unpack("<H")
    if n < 2:
        raise FormatError("network record needs at least two dims")
    dims = r.unpack(f"<{n}I")
    (frozen,) = r.unpack("<B")
    spec = NetworkSpec(dims[0], tuple(dims[1:-1]), dims[-1])
    params = r.array("<f8", spec.n_params)
    return Network(spec, params, frozen=bool(frozen))


def network_to_bytes(net: Network) -> bytes:
    out = io.BytesIO()
    _header(out, KIND_NETWORK)
    _write_network(out, net)
    return out.getvalue()


def network_from_bytes(data: bytes) -> Network:
    r = _Reader(data)
    _read_header(r, KIND_NETWORK)
    net = _read_network(r)
    if r.pos != len(r.buf):
        raise FormatError("trailing bytes after network record")
    return net


def _write_opt(out: io.BytesIO, st: OptimizerState):
    out.write(struct.pack("<IQ", st.accumulator.size, st.steps))
    out.write(st.accumulator.astype("<f8").tobytes())


def _read_opt(r: _Reader, hyper: dict) -> OptimizerState:
    n, steps = r.unpack("<IQ")
    acc = r.array("<f8", n)
    return OptimizerState(acc, hyper["learning_rate"], hyper["alpha"], hyper["eps"],
                          hyper["momentum"], steps)


def _write_traj(out: io.BytesIO, t: Trajectory):
    n, d = t.observations.shape
    k = t.behavior_probs.shape[1]
    has_final = t.final_observation is not None
    out.write(struct.pack("<qqddIIIB", t.trajectory_id, t.task_id, t.reservoir_value,
                          t.episode_return, n, d, k, int(has_final)))
    out.write(t.observations.astype("<f8").tobytes())
    out.write(t.actions.astype("<i8").tobytes())
    out.write(t.behavior_probs.astype("<f8").tobytes())
    out.write(t.rewards.astype("<f8").tobytes())
    out.write(t.dones.astype("u1").tobytes())
    if has_final:
        out.write(t.final_observation.astype("<f8").tobytes())


def _read_traj(r: _Reader) -> Trajectory:
    tid, task_id, rv, ret, n, d, k, has_final = r.unpack("<qqddIIIB")
    obs = r.array("<f8", n * d).reshape(n, d)
    actions = r.array("<i8", n)
    probs = r.array("<f8", n * k).reshape(n, k)
    rewards = r.array("<f8", n)
    dones = r.array("u1", n).astype(bool)
    final = r.array("<f8", d) if has_final else None
    return Trajectory(obs, actions, probs, rewards, dones, int(tid), final_observation=final,
                      reservoir_value=float(rv), episode_return=float(ret),
                      task_id=int(task_id), reward_clip=None)


def _write_buffer(out: io.BytesIO, buf: ReplayBuffer):
    trajs = sorted(buf, key=lambda t: t.trajectory_id)
    out.write(struct.pack("<QI", buf.capacity_frames, len(trajs)))
    for t in trajs:
        _write_traj(out, t)


def _read_buffer(r: _Reader, rng) -> ReplayBuffer:
    capacity, n = r.unpack("<QI")
    buf = ReplayBuffer(int(capacity), rng)
    for _ in range(n):
        buf.insert(_read_traj(r))
    return buf


def _rng_state(g: np.random.Generator) -> dict:
    return g.bit_generator.state


def _rng_from_state(state: dict) -> np.random.Generator:
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)


def ensemble_to_bytes(e, extra: dict | None = None) -> bytes:
    """Serialize an :class:`~sane.ensemble.Ensemble` (and optional JSON ``extra``)."""
    meta = {
        "max_modules": e.max_modules,
        "alphas": [e.alphas.u_inf, e.alphas.u_create, e.alphas.l_create],
        "obs_dim": e.obs_dim,
        "n_actions": e.n_actions,
        "buffer_capacity": e.buffer_capacity,
        "hidden_dims": list(e.hidden_dims),
        "opt": {"learning_rate": e.opt.learning_rate, "alpha": e.opt.alpha, "eps": e.opt.eps,
                "momentum": e.opt.momentum, "grad_clip": e.opt.grad_clip},
        "next_id": e.next_id,
        "lineage": [ev.to_json() for ev in e.lineage],
        "rngs": {name: _rng_state(g) for name, g in sorted(e.rngs.items())},
        "modules": [{"id": m.id, "usage_count": m.usage_count,
                     "frames_since_target_update": m.frames_since_target_update,
                     "created_at_step": m.created_at_step, "total_frames": m.total_frames}
                    for m in e.modules],
        "extra": extra or {},
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    _header(out, KIND_ENSEMBLE)
    out.write(struct.pack("<I", len(blob)))
    out.write(blob)
    out.write(struct.pack("<I", len(e.modules)))
    for m in e.modules:
        for net in (m.actor, m.critic, m.target_critic, m.anchor):
            _write_network(out, net)
        _write_opt(out, m.actor_opt)
        _write_opt(out, m.critic_opt)
        _write_buffer(out, m.buffer)
    return out.getvalue()


def ensemble_from_bytes(data: bytes):
    """Inverse of :func:`ensemble_to_bytes`; returns ``(ensemble, extra)``."""
    from .ensemble import Ensemble, LineageEvent
    from .module import AlphaConfig, OptimizerConfig, SaneModule

    r = _Reader(data)
    _read_header(r, KIND_ENSEMBLE)
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(bytes(r.take(meta_len)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint metadata: {exc}") from None
    rngs = {name: _rng_from_state(state) for name, state in meta["rngs"].items()}
    opt = OptimizerConfig(**meta["opt"])
    e = Ensemble([], meta["max_modules"], AlphaConfig(*meta["alphas"]), meta["obs_dim"],
                 meta["n_actions"], meta["buffer_capacity"], rngs, tuple(meta["hidden_dims"]),
                 opt, meta["next_id"], [LineageEvent.from_json(d) for d in meta["lineage"]])
    (n_modules,) = r.unpack("<I")
    if n_modules != len(meta["modules"]):
        raise FormatError("module count disagrees with metadata")
    hyper = meta["opt"]
    buffer_rng = rngs.get("reservoir")
    for info in meta["modules"]:
        actor, critic, target, anchor = (_read_network(r) for _ in range(4))
        actor_opt = _read_opt(r, hyper)
        critic_opt = _read_opt(r, hyper)
        buf = _read_buffer(r, buffer_rng)
        e.modules.append(SaneModule(
            id=info["id"], actor=actor, critic=critic, target_critic=target, anchor=anchor,
            buffer=buf, actor_opt=actor_opt, critic_opt=critic_opt,
            usage_count=info["usage_count"],
            frames_since_target_update=info["frames_since_target_update"],
            created_at_step=info["created_at_step"], total_frames=info["total_frames"]))
    if r.pos != len(r.buf):
        raise FormatError("trailing bytes after ensemble record")
    return e, meta.get("extra", {})


def save_ensemble(path: str | os.PathLike, e, extra: dict | None = None) -> None:
    from .artifacts import atomic_write_bytes
    atomic_write_bytes(path, ensemble_to_bytes(e, extra))


def load_ensemble(path: str | os.PathLike):
    with open(path, "rb") as fh:
        return ensemble_from_bytes(fh.read())
