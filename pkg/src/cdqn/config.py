"""Run configuration: defaults, ``key = value`` files, and CLI overrides.

Keys are flat and dotted (``agent.gamma = 0.99``); CLI flags mirror the
dotted names.  Values given on the command line override the config file,
which overrides the built-in defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

from . import kvformat
from .agent import BinningRule, LossConfig, OUTCOME_RULES, PENALTY_MODES
from .cartpole import EnvSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # run protocol
    agent_kind: str = "dqn"
    seed: int = 0
    max_episodes: int = 1000
    stop_threshold: float = 200.0
    stop_window: int = 10
    eval_every: int = 10
    eval_episodes: int = 5
    out_dir: str = "out"
    # agent
    gamma: float = 0.99
    penalty_weight: float = 1.0
    penalty_floor: float = 1e-6
    penalty_mode: str = "differentiable"
    outcome_rule: str = "auto"
    batch_size: int = 64
    buffer_capacity: int = 10_000
    sync_every: int = 10
    train_every: int = 1
    epsilon_start: float = 1.0
    epsilon_end: float = 0.01
    epsilon_decay: float = 0.995
    bin_edges: tuple[tuple[float, ...], ...] = ((0.0,), (0.0,), (0.0,), (0.0,))
    # network / optimizer
    hidden: tuple[int, ...] = (64, 64)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    # environment
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    force_mag: float = 10.0
    tau: float = 0.02
    max_steps: int = 500
    position_limit: float = 2.4
    angle_limit_deg: float = 12.0


def _parse_bin_edges(text: str) -> tuple[tuple[float, ...], ...]:
    dims = text.split("|")
    return tuple(tuple(float(v) for v in kvformat.split_list(dim)) for dim in dims)


def _fmt_bin_edges(edges: tuple[tuple[float, ...], ...]) -> str:
    return " | ".join(", ".join(kvformat.fmt_float(v) for v in dim) for dim in edges)


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in kvformat.split_list(text))


@dataclass(frozen=True)
class _Key:
    attr: str
    parse: Callable[[str], object]
    fmt: Callable[[object], str]
    help: str


SCHEMA: dict[str, _Key] = {
    "run.agent": _Key("agent_kind", str, str, "agent kind: dqn or causal"),
    "run.seed": _Key("seed", int, str, "master seed for the whole run"),
    "run.max_episodes": _Key("max_episodes", int, str, "episode cap"),
    "run.stop_threshold": _Key("stop_threshold", float, kvformat.fmt_float, "early-stop reward threshold"),
    "run.stop_window": _Key("stop_window", int, str, "early-stop rolling window (episodes)"),
    "run.eval_every": _Key("eval_every", int, str, "greedy test cadence (episodes)"),
    "run.eval_episodes": _Key("eval_episodes", int, str, "episodes per greedy test"),
    "run.out": _Key("out_dir", str, str, "output directory"),
    "agent.gamma": _Key("gamma", float, kvformat.fmt_float, "discount factor"),
    "agent.penalty_weight": _Key("penalty_weight", float, kvformat.fmt_float, "causal penalty weight"),
    "agent.penalty_floor": _Key("penalty_floor", float, kvformat.fmt_float, "penalty denominator floor"),
    "agent.penalty_mode": _Key("penalty_mode", str, str, "scalar or differentiable"),
    "agent.outcome_rule": _Key("outcome_rule", str, str, "auto, td_target, or q_value"),
    "agent.batch_size": _Key("batch_size", int, str, "minibatch size"),
    "agent.buffer_capacity": _Key("buffer_capacity", int, str, "replay buffer capacity"),
    "agent.sync_every": _Key("sync_every", int, str, "target sync cadence (episodes)"),
    "agent.train_every": _Key("train_every", int, str, "environment steps per optimizer step"),
    "agent.epsilon_start": _Key("epsilon_start", float, kvformat.fmt_float, "initial exploration rate"),
    "agent.epsilon_end": _Key("epsilon_end", float, kvformat.fmt_float, "exploration floor"),
    "agent.epsilon_decay": _Key("epsilon_decay", float, kvformat.fmt_float, "per-episode epsilon multiplier"),
    "agent.bin_edges": _Key("bin_edges", _parse_bin_edges, _fmt_bin_edges, "stratum boundaries, dims split by |"),
    "net.hidden": _Key("hidden", _parse_int_list, lambda v: ", ".join(str(i) for i in v), "hidden layer sizes"),
    "net.learning_rate": _Key("learning_rate", float, kvformat.fmt_float, "optimizer learning rate"),
    "net.beta1": _Key("beta1", float, kvformat.fmt_float, "first-moment decay"),
    "net.beta2": _Key("beta2", float, kvformat.fmt_float, "second-moment decay"),
    "net.adam_epsilon": _Key("adam_epsilon", float, kvformat.fmt_float, "optimizer epsilon"),
    "env.gravity": _Key("gravity", float, kvformat.fmt_float, "gravity (m/s^2)"),
    "env.cart_mass": _Key("cart_mass", float, kvformat.fmt_float, "cart mass (kg)"),
    "env.pole_mass": _Key("pole_mass", float, kvformat.fmt_float, "pole mass (kg)"),
    "env.pole_half_length": _Key("pole_half_length", float, kvformat.fmt_float, "pole half-length (m)"),
    "env.force_mag": _Key("force_mag", float, kvformat.fmt_float, "push force magnitude (N)"),
    "env.tau": _Key("tau", float, kvformat.fmt_float, "integration timestep (s)"),
    "env.max_steps": _Key("max_steps", int, str, "episode step cap"),
    "env.position_limit": _Key("position_limit", float, kvformat.fmt_float, "cart position failure bound (m)"),
    "env.angle_limit_deg": _Key("angle_limit_deg", float, kvformat.fmt_float, "pole angle failure bound (deg)"),
}


def apply_pairs(cfg: RunConfig, pairs: dict[str, str], source: str = "config") -> RunConfig:
    """Overlay raw string pairs onto a config; unknown keys are errors."""
    updates = {}
    for key, raw in pairs.items():
        entry = SCHEMA.get(key)
        if entry is None:
            raise ConfigError(f"{source}: unknown config key {key!r}")
        try:
            updates[entry.attr] = entry.parse(raw)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key}: {raw!r} ({exc})") from None
    return replace(cfg, **updates)


def read_config_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    try:
        return kvformat.parse(text)
    except kvformat.KvError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """defaults -> config file -> overrides, then validate."""
    cfg = RunConfig()
    if path is not None:
        cfg = apply_pairs(cfg, read_config_file(path), source=str(path))
    if overrides:
        cfg = apply_pairs(cfg, overrides, source="command line")
    validate_config(cfg)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Config echo in the same file format; parses back to an equal config."""
    return kvformat.format_lines(
        {key: entry.fmt(getattr(cfg, entry.attr)) for key, entry in SCHEMA.items()}
    )


def validate_config(cfg: RunConfig) -> None:
    problems = []
    if cfg.agent_kind not in ("dqn", "causal"):
        problems.append(f"run.agent must be dqn or causal, got {cfg.agent_kind!r}")
    if cfg.max_episodes < 1:
        problems.append("run.max_episodes must be >= 1")
    if cfg.stop_window < 1:
        problems.append("run.stop_window must be >= 1")
    if not math.isfinite(cfg.stop_threshold):
        problems.append("run.stop_threshold must be finite")
    if cfg.eval_every < 1:
        problems.append("run.eval_every must be >= 1")
    if cfg.eval_episodes < 1:
        problems.append("run.eval_episodes must be >= 1")
    if not 0.0 <= cfg.gamma < 1.0:
        problems.append("agent.gamma must be in [0, 1)")
    if cfg.penalty_weight < 0.0:
        problems.append("agent.penalty_weight must be >= 0")
    if cfg.penalty_floor <= 0.0:
        problems.append("agent.penalty_floor must be > 0")
    if cfg.penalty_mode not in PENALTY_MODES:
        problems.append(f"agent.penalty_mode must be one of {PENALTY_MODES}")
    if cfg.outcome_rule not in ("auto",) + OUTCOME_RULES:
        problems.append(f"agent.outcome_rule must be auto or one of {OUTCOME_RULES}")
    if cfg.penalty_mode == "differentiable" and cfg.outcome_rule == "td_target":
        problems.append("agent.outcome_rule td_target needs agent.penalty_mode = scalar")
    if cfg.batch_size < 1:
        problems.append("agent.batch_size must be >= 1")
    if cfg.buffer_capacity < cfg.batch_size:
        problems.append("agent.buffer_capacity must be >= agent.batch_size")
    if cfg.sync_every < 1:
        problems.append("agent.sync_every must be >= 1")
    if cfg.train_every < 1:
        problems.append("agent.train_every must be >= 1")
    for name in ("epsilon_start", "epsilon_end"):
        if not 0.0 <= getattr(cfg, name) <= 1.0:
            problems.append(f"agent.{name} must be in [0, 1]")
    if not 0.0 < cfg.epsilon_decay <= 1.0:
        problems.append("agent.epsilon_decay must be in (0, 1]")
    if len(cfg.bin_edges) != 4:
        problems.append("agent.bin_edges must cover the 4 state dimensions")
    for d, edges in enumerate(cfg.bin_edges):
        if any(b <= a for a, b in zip(edges, edges[1:])):
            problems.append(f"agent.bin_edges dimension {d} not strictly increasing")
    if not cfg.hidden or any(h < 1 for h in cfg.hidden):
        problems.append("net.hidden must be a non-empty list of positive sizes")
    if cfg.learning_rate <= 0.0:
        problems.append("net.learning_rate must be > 0")
    for name in ("beta1", "beta2"):
        if not 0.0 <= getattr(cfg, name) < 1.0:
            problems.append(f"net.{name} must be in [0, 1)")
    if cfg.adam_epsilon <= 0.0:
        problems.append("net.adam_epsilon must be > 0")
    for name in ("gravity", "cart_mass", "pole_mass", "pole_half_length", "force_mag", "tau",
                 "position_limit", "angle_limit_deg"):
        if getattr(cfg, name) <= 0.0:
            problems.append(f"env.{name} must be > 0")
    if cfg.max_steps < 1:
        problems.append("env.max_steps must be >= 1")
    if problems:
        raise ConfigError("invalid config: " + "; ".join(problems))


def to_env_spec(cfg: RunConfig) -> EnvSpec:
    return EnvSpec(
        gravity=cfg.gravity,
        cart_mass=cfg.cart_mass,
        pole_mass=cfg.pole_mass,
        pole_half_length=cfg.pole_half_length,
        force_mag=cfg.force_mag,
        tau=cfg.tau,
        max_steps=cfg.max_steps,
        position_limit=cfg.position_limit,
        angle_limit=math.radians(cfg.angle_limit_deg),
    )


def to_loss_config(cfg: RunConfig) -> LossConfig:
    return LossConfig(
        binning=BinningRule(cfg.bin_edges),
        gamma=cfg.gamma,
        penalty_weight=cfg.penalty_weight,
        penalty_floor=cfg.penalty_floor,
        penalty_mode=cfg.penalty_mode,
        outcome_rule=None if cfg.outcome_rule == "auto" else cfg.outcome_rule,
    )


def layer_sizes(cfg: RunConfig) -> list[int]:
    # 4 state dimensions in, one value per discrete action out
    return [4, *cfg.hidden, 2]
