"""Run configuration and the flat ``key = value`` config format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

ALGORITHMS = ("dave", "qmix", "vdn", "igmfree-qmix")


class ConfigError(ValueError):
    pass


@dataclass
class TrainerConfig:
    # optimisation
    learning_rate: float = 0.0005
    optimizer: str = "rmsprop"
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 0.00001
    target_update_episodes: int = 200
    grad_norm_clip: float = 10.0
    batch_size: int = 32
    buffer_size: int = 5000
    gamma: float = 0.99
    # DAVE
    sample_size: int = 100
    lambda_init: float = 0.5
    lambda_end: float = 0.0
    lambda_anneal_steps: int = 25000
    # baselines
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_anneal_steps: int = 50000
    # network sizes
    agent_embed_dim: int = 64
    agent_hidden_dim: int = 64
    mixer_embed_dim: int = 32
    ae_hidden_dim: int = 32
    ae_code_dim: int = 8
    # run
    algorithm: str = "dave"
    env: str = "matrix1"
    k: float = 0.0
    seed: int = 0
    t_max: int = 400
    updates_per_episode: int = 1
    eval_interval: int = 100
    eval_episodes: int = 32
    out_dir: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self):
        from .envs import ENVIRONMENTS

        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                f"unknown algorithm {self.algorithm!r}; choose one of {', '.join(ALGORITHMS)}"
            )
        if self.env not in ENVIRONMENTS:
            raise ConfigError(
                f"unknown environment {self.env!r}; choose one of {', '.join(sorted(ENVIRONMENTS))}"
            )
        if self.optimizer.lower() != "rmsprop":
            raise ConfigError(f"only the rmsprop optimizer is supported, got {self.optimizer!r}")
        if self.sample_size < 1:
            raise ConfigError("sample_size (M) must be >= 1")
        if not 0.0 <= self.lambda_end <= self.lambda_init <= 1.0:
            raise ConfigError("need 0 <= lambda_end <= lambda_init <= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ConfigError("need 0 <= epsilon_end <= epsilon_start <= 1")
        for name in ("batch_size", "buffer_size", "target_update_episodes", "t_max",
                     "updates_per_episode", "eval_interval", "eval_episodes",
                     "lambda_anneal_steps", "epsilon_anneal_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.batch_size > self.buffer_size:
            raise ConfigError("batch_size cannot exceed buffer_size")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(TrainerConfig)}


def _coerce(key, raw):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELDS[key].type
    kind = getattr(kind, "__name__", kind)
    raw = raw.strip()
    try:
        if kind == "int":
            value = float(raw)
            if not value.is_integer():
                raise ValueError
            return int(value)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_assignments(lines, source="<config>"):
    values = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = _coerce(key, raw)
    return values


def load_config(path, overrides=()):
    """Read a config file and apply ``key=value`` overrides on top."""
    with open(path) as fh:
        values = parse_assignments(fh.read().splitlines(), str(path))
    values.update(parse_assignments(overrides, "--set"))
    try:
        return TrainerConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: TrainerConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))
