"""Flat ``key = value`` experiment configuration files."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from obstransfer.agent import AgentConfig
from obstransfer.transfer import BASELINES, NEEDS_CKPT, RunSpec

FACES = ("vector", "pixel", "stacked")
ENVS = ("gridmaze", "cartpole")
GOAL_MODES = ("resample", "fixed")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


class ConfigError(ValueError):
    """Invalid configuration; the message names the key and line."""


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    parts = [p for p in text.replace(",", " ").split() if p]
    return tuple(int(p) for p in parts)


def _opt_path(text: str) -> str | None:
    return text or None


_AGENT_TYPES = {f.name: f.type for f in fields(AgentConfig)}

# key -> (parser, attribute on ExperimentConfig)
KEYS = {
    "env.name": (str, "env_name"),
    "env.face": (str, "face"),
    "env.map_path": (_opt_path, "map_path"),
    "env.goal_mode": (str, "goal_mode"),
    "env.drop_features": (_int_list, "drop_features"),
    "env.stack_depth": (int, "stack_depth"),
    "run.baseline": (str, "baseline"),
    "run.total_steps": (int, "total_steps"),
    "run.eval_every": (int, "eval_every"),
    "run.eval_episodes": (int, "eval_episodes"),
    "run.seeds": (_int_list, "seeds"),
    "run.trajectory_every": (int, "trajectory_every"),
    "run.align_epochs": (int, "align_epochs"),
    "run.align_batch": (int, "align_batch"),
    "run.record_wallclock": (_bool, "record_wallclock"),
    "io.in_ckpt": (_opt_path, "in_ckpt"),
    "io.out_dir": (_opt_path, "out_dir"),
}
for _name, _typ in _AGENT_TYPES.items():
    KEYS[f"agent.{_name}"] = ({"int": int, "float": float}[str(_typ)], f"agent.{_name}")

REQUIRED = ("env.name",)


@dataclass
class ExperimentConfig:
    env_name: str = "gridmaze"
    face: str = "vector"
    map_path: str | None = None
    goal_mode: str = "resample"
    drop_features: tuple[int, ...] | None = None
    stack_depth: int | None = None
    baseline: str = "single"
    total_steps: int = 20000
    eval_every: int = 1000
    eval_episodes: int = 20
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    trajectory_every: int = 10
    align_epochs: int = 1000
    align_batch: int = 256
    record_wallclock: bool = False
    in_ckpt: str | None = None
    out_dir: str | None = None
    agent: AgentConfig = field(default_factory=AgentConfig)
    source_lines: dict[str, int] = field(default_factory=dict, repr=False)

    def run_spec(self, seed: int, baseline: str | None = None, out_dir: str | None = None,
                 in_ckpt: str | None = None) -> RunSpec:
        return RunSpec(
            env_name=self.env_name, face=self.face, baseline=baseline or self.baseline,
            agent=self.agent, total_steps=self.total_steps, eval_every=self.eval_every,
            eval_episodes=self.eval_episodes, seed=seed,
            in_ckpt=in_ckpt if in_ckpt is not None else self.in_ckpt,
            out_dir=out_dir, map_path=self.map_path, goal_mode=self.goal_mode,
            drop_features=self.drop_features, stack_depth=self.stack_depth,
            trajectory_every=self.trajectory_every, align_epochs=self.align_epochs,
            align_batch=self.align_batch, record_wallclock=self.record_wallclock)

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return replace(self, seeds=tuple(int(s) for s in seeds))


def _where(key: str, lines: dict[str, int]) -> str:
    return f"{key} (line {lines[key]})" if key in lines else key


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    lines = cfg.source_lines

    def fail(key: str, msg: str):
        raise ConfigError(f"{_where(key, lines)}: {msg}")

    if cfg.env_name not in ENVS:
        fail("env.name", f"unknown environment {cfg.env_name!r}; choose from {ENVS}")
    if cfg.face not in FACES:
        fail("env.face", f"unknown face {cfg.face!r}; choose from {FACES}")
    if cfg.goal_mode not in GOAL_MODES:
        fail("env.goal_mode", f"choose from {GOAL_MODES}")
    if cfg.baseline not in BASELINES:
        fail("run.baseline", f"unknown baseline {cfg.baseline!r}; choose from {BASELINES}")
    if not cfg.seeds:
        fail("run.seeds", "at least one seed is required")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        fail("run.seeds", "seeds must be distinct")
    for key in ("run.total_steps", "run.eval_every", "run.eval_episodes", "run.trajectory_every",
                "run.align_epochs", "run.align_batch"):
        if getattr(cfg, KEYS[key][1]) < 1:
            fail(key, "must be a positive integer")
    if cfg.stack_depth is not None and cfg.stack_depth < 1:
        fail("env.stack_depth", "must be a positive integer")
    if cfg.baseline in NEEDS_CKPT and not cfg.in_ckpt:
        fail("io.in_ckpt", f"required by run.baseline={cfg.baseline}")
    return cfg


def parse_config_text(text: str, base_dir: str | Path | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines; '#' starts a comment. Relative paths are
    resolved against ``base_dir``."""
    values: dict[str, tuple[object, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{key}: duplicate key on lines {values[key][1]} and {lineno}")
        parser = KEYS[key][0]
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{key} (line {lineno}): {exc}") from None
        values[key] = (parsed, lineno)
    for key in REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required key {key}")

    agent_kw = {}
    cfg_kw = {}
    for key, (val, _) in values.items():
        attr = KEYS[key][1]
        if attr.startswith("agent."):
            agent_kw[attr[len("agent."):]] = val
        else:
            cfg_kw[attr] = val
    lines = {k: ln for k, (_, ln) in values.items()}
    if base_dir is not None:
        for attr in ("map_path", "in_ckpt", "out_dir"):
            p = cfg_kw.get(attr)
            if p and not Path(p).is_absolute():
                cfg_kw[attr] = str(Path(base_dir) / p)
    try:
        agent = AgentConfig(**agent_kw)
    except ValueError as exc:
        keys = ", ".join(_where(f"agent.{k}", lines) for k in agent_kw) or "agent defaults"
        raise ConfigError(f"{exc} (check {keys})") from None
    return validate(ExperimentConfig(agent=agent, source_lines=lines, **cfg_kw))


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, base_dir=path.parent)


def format_config(cfg: ExperimentConfig) -> str:
    """Inverse of parse_config for the keys that differ from the defaults."""
    default = ExperimentConfig()
    out = []
    for key, (_, attr) in KEYS.items():
        if attr.startswith("agent."):
            val, ref = getattr(cfg.agent, attr[6:]), getattr(default.agent, attr[6:])
        else:
            val, ref = getattr(cfg, attr), getattr(default, attr)
        if key == "env.name" or val != ref:
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            elif isinstance(val, bool):
                val = str(val).lower()
            out.append(f"{key} = {'' if val is None else val}")
    return "\n".join(out) + "\n"
