"""Run configuration: typed sections, INI round-trip and override precedence.

File format
-----------
A run config is an INI file (parsed with :mod:`configparser`).  Each section
maps to one dataclass below and each key to one field::

    [run]
    method = sane
    seed = 0

    [sane]
    t_cadence = 8
    hidden_dims = 32,32

Values are parsed by the field's declared type: ``int``, ``float``, ``bool``
(``true``/``false``), ``str``, comma-separated int tuples, and optional
values where the literal ``none`` means unset.  Unknown sections or keys are
rejected.  Precedence is command-line override > file > default.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import os
import typing
from dataclasses import dataclass, field

from .errors import ConfigError
from .training import METHODS

ENV_FAMILIES = ("bandit", "chain")


@dataclass(frozen=True)
class EnvConfig:
    family: str = "bandit"
    n_tasks: int = 3
    cycles: int = 2
    steps_per_task: int = 20000
    n_arms: int = 4
    context_dims: int | None = None
    noise_dims: int | None = None
    length: int = 8
    max_steps: int = 32
    task_seed: int | None = None      # defaults to the run seed


@dataclass(frozen=True)
class SaneConfig:
    max_modules: int = 8
    initial_modules: int = 1
    alpha_u_inf: float = 1.0
    alpha_u_create: float = 0.1
    alpha_l_create: float = 10.0
    t_cadence: int = 1000
    tau: float = 0.9
    k_merge: int = 32
    buffer_capacity: int = 50000
    hidden_dims: tuple[int, ...] = (32, 32)


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 0.99
    rho_clip: float = 1.0
    c_clip: float = 1.0
    baseline_cost: float = 5.0
    entropy_cost: float = 0.01
    policy_cloning_cost: float = 0.1
    value_cloning_cost: float = 0.005
    uncertainty_cost: float = 1.0
    replay_ratio: int = 8
    reward_clip: float = 1.0


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 4e-4
    rms_alpha: float = 0.99
    eps: float = 0.01
    momentum: float = 0.0
    grad_clip: float = 40.0


@dataclass(frozen=True)
class ScheduleConfig:
    episodes_per_window: int = 4
    batch_size: int = 2
    eval_every: int = 0
    eval_episodes: int = 16
    eval_at_start: bool = True
    checkpoint: bool = True


@dataclass(frozen=True)
class RunSection:
    method: str = "sane"
    seed: int = 0
    output_dir: str | None = None


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    env: EnvConfig = field(default_factory=EnvConfig)
    sane: SaneConfig = field(default_factory=SaneConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    @property
    def method(self) -> str:
        return self.run.method

    @property
    def seed(self) -> int:
        return self.run.seed

    def replace(self, **overrides) -> "RunConfig":
        """Copy with ``"section.key": value`` overrides (values may be strings)."""
        return apply_overrides(self, overrides)

    def validate(self) -> "RunConfig":
        validate(self)
        return self


SECTIONS = tuple(f.name for f in dataclasses.fields(RunConfig))


def _section_types(section: str) -> dict[str, typing.Any]:
    cls = typing.get_type_hints(RunConfig)[section]
    return typing.get_type_hints(cls)


def _parse_value(raw, tp, path: str):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if text.lower() == "none":
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _parse_value(text, inner, path)
    try:
        if tp is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text
        if origin is tuple:
            return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {getattr(tp, '__name__', tp)}", path) from None
    raise ConfigError(f"unsupported field type {tp}", path)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Apply ``{"section.key": value}`` overrides; string values are parsed by type."""
    by_section: dict[str, dict] = {}
    for path, value in overrides.items():
        if "." not in path:
            raise ConfigError("override keys must look like section.key", path)
        section, key = path.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r}", path)
        types = _section_types(section)
        if key not in types:
            raise ConfigError(f"unknown key {key!r}", path)
        by_section.setdefault(section, {})[key] = _parse_value(value, types[key], path)
    changes = {s: dataclasses.replace(getattr(cfg, s), **kv) for s, kv in by_section.items()}
    return dataclasses.replace(cfg, **changes)


def validate(cfg: RunConfig) -> None:
    """Raise :class:`ConfigError` naming the first offending field."""
    def need(cond, path, msg):
        if not cond:
            raise ConfigError(msg, path)

    need(cfg.run.method in METHODS, "run.method", f"must be one of {', '.join(METHODS)}")
    e = cfg.env
    need(e.family in ENV_FAMILIES, "env.family", f"must be one of {', '.join(ENV_FAMILIES)}")
    need(e.n_tasks >= 2, "env.n_tasks", "must be >= 2")
    need(e.cycles >= 1, "env.cycles", "must be >= 1")
    need(e.steps_per_task >= 1, "env.steps_per_task", "must be >= 1")
    need(e.n_arms >= 2, "env.n_arms", "must be >= 2")
    need(e.length >= 2, "env.length", "must be >= 2")
    need(e.max_steps >= 1, "env.max_steps", "must be >= 1")
    s = cfg.sane
    need(s.max_modules >= 1, "sane.max_modules", "must be >= 1")
    need(1 <= s.initial_modules <= s.max_modules, "sane.initial_modules",
         "must lie in [1, max_modules]")
    for name in ("alpha_u_inf", "alpha_u_create", "alpha_l_create"):
        need(getattr(s, name) >= 0, f"sane.{name}", "must be >= 0")
    need(s.t_cadence >= 1, "sane.t_cadence", "must be >= 1")
    need(0.0 <= s.tau <= 1.0, "sane.tau", "must lie in [0, 1]")
    need(s.k_merge >= 1, "sane.k_merge", "must be >= 1")
    need(s.buffer_capacity >= 1, "sane.buffer_capacity", "must be >= 1")
    need(len(s.hidden_dims) >= 1 and all(h >= 1 for h in s.hidden_dims),
         "sane.hidden_dims", "needs at least one positive width")
    lc = cfg.loss
    need(0.0 < lc.gamma <= 1.0, "loss.gamma", "must lie in (0, 1]")
    need(lc.rho_clip >= 1.0, "loss.rho_clip", "must be >= 1")
    need(1.0 <= lc.c_clip <= lc.rho_clip, "loss.c_clip", "must lie in [1, rho_clip]")
    for name in ("baseline_cost", "entropy_cost", "policy_cloning_cost",
                 "value_cloning_cost", "uncertainty_cost", "reward_clip"):
        need(getattr(lc, name) >= 0, f"loss.{name}", "must be >= 0")
    need(lc.replay_ratio >= 0, "loss.replay_ratio", "must be >= 0")
    o = cfg.optim
    need(o.learning_rate > 0, "optim.learning_rate", "must be > 0")
    need(0.0 <= o.rms_alpha < 1.0, "optim.rms_alpha", "must lie in [0, 1)")
    need(o.eps > 0, "optim.eps", "must be > 0")
    need(o.momentum == 0.0, "optim.momentum", "only momentum 0 is supported")
    need(o.grad_clip >= 0, "optim.grad_clip", "must be >= 0")
    sc = cfg.schedule
    need(sc.episodes_per_window >= 1, "schedule.episodes_per_window", "must be >= 1")
    need(sc.batch_size >= 1, "schedule.batch_size", "must be >= 1")
    need(sc.eval_every >= 0, "schedule.eval_every", "must be >= 0")
    need(sc.eval_episodes >= 1, "schedule.eval_episodes", "must be >= 1")


def to_ini(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for section in SECTIONS:
        obj = getattr(cfg, section)
        parser[section] = {f.name: _format_value(getattr(obj, f.name))
                           for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def from_ini(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse INI text on top of ``base`` (defaults when omitted)."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from None
    overrides = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r}", section)
        for key, value in parser[section].items():
            overrides[f"{section}.{key}"] = value
    return apply_overrides(base or RunConfig(), overrides)


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path`` (if any), then ``overrides``; validated."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}", str(path)) from None
        cfg = from_ini(text, cfg)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    validate(cfg)
    return cfg


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
