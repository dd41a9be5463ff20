"""Run configuration stored as flat ``key=value`` text."""

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .brim import BrimConfig
from .ppo import PpoHyper
from .rim import RimConfig
from .world import EncoderConfig, WorldConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: str = "gridquest"
    n_envs: int = 8
    rollout: int = 128
    total_steps: int = 50_000
    seed: int = 0
    precision: str = "float32"
    # optimisation
    lr: float = 0.00025
    epochs: int = 4
    minibatches: int = 4
    clip: float = 0.1
    gamma: float = 0.99
    lam: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.001
    world_coef: float = 1.0
    max_grad_norm: float = 0.5
    intrinsic_coef: float = 1.0
    extrinsic_coef: float = 0.0
    # observation pipeline
    frameskip: int = 4
    frame_stack: int = 4
    frame_size: int = 84
    episode_cap: int = 4500
    # encoder
    encoder_channels: tuple = (16, 32, 32)
    encoder_kernels: tuple = (8, 4, 3)
    encoder_strides: tuple = (4, 2, 1)
    embedding: int = 128
    # module pools (one entry per layer, shared by the current and expected pools)
    pool_modules: tuple = (4,)
    pool_active: tuple = (2,)
    module_size: tuple = (32,)
    key_size: int = 32
    value_size: int = 64
    comm_key_size: int = 32
    policy_hidden: int = 64
    # bookkeeping
    eval_episodes: int = 10
    checkpoint_every: int = 10
    env_workers: int = 1

    def __post_init__(self):
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, not {self.precision!r}")
        depth = len(self.pool_modules)
        if not depth or len(self.pool_active) != depth or len(self.module_size) != depth:
            raise ConfigError("pool_modules, pool_active and module_size need one entry per layer")
        if self.total_steps <= 0 or self.n_envs <= 0 or self.rollout <= 0:
            raise ConfigError("total_steps, n_envs and rollout must be positive")
        try:
            self.ppo_hyper()
            self.world_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    @property
    def steps_per_update(self) -> int:
        return self.n_envs * self.rollout

    @property
    def n_updates(self) -> int:
        return -(-self.total_steps // self.steps_per_update)

    def ppo_hyper(self) -> PpoHyper:
        return PpoHyper(
            lr=self.lr,
            epochs=self.epochs,
            rollout=self.rollout,
            n_envs=self.n_envs,
            clip=self.clip,
            gamma=self.gamma,
            lam=self.lam,
            value_coef=self.value_coef,
            entropy_coef=self.entropy_coef,
            world_coef=self.world_coef,
            minibatches=self.minibatches,
            max_grad_norm=self.max_grad_norm,
            intrinsic_coef=self.intrinsic_coef,
            extrinsic_coef=self.extrinsic_coef,
        )

    def pool_config(self) -> BrimConfig:
        layers = []
        for l, (n, m, s) in enumerate(zip(self.pool_modules, self.pool_active, self.module_size)):
            layers.append(
                RimConfig(
                    n_modules=n,
                    n_active=m,
                    module_size=s,
                    input_dim=self.embedding if l == 0 else self.module_size[l - 1],
                    key_size=self.key_size,
                    value_size=self.value_size,
                    comm_key_size=self.comm_key_size,
                )
            )
        return BrimConfig(layers)

    def world_config(self) -> WorldConfig:
        enc = EncoderConfig(
            frames=self.frame_stack,
            size=self.frame_size,
            channels=tuple(self.encoder_channels),
            kernels=tuple(self.encoder_kernels),
            strides=tuple(self.encoder_strides),
            embedding=self.embedding,
        )
        return WorldConfig(encoder=enc, current=self.pool_config(), expected=self.pool_config())

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # ------------------------------------------------------------ text format

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            lines.append(f"{f.name}={val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        defaults = cls.__new__(cls)
        for f in fields(cls):
            setattr(defaults, f.name, f.default)
        values = {}
        known = {f.name for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(key, val, getattr(defaults, key))
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> str:
        text = self.to_text()
        Path(path).write_text(text)
        return config_hash(text)


def _coerce(key: str, val: str, default):
    try:
        if isinstance(default, bool):
            return val.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(val.replace("_", ""))
        if isinstance(default, float):
            return float(val)
        if isinstance(default, tuple):
            return tuple(int(v) for v in val.split(",") if v.strip())
        return val
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {val!r} as {type(default).__name__}") from None


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
