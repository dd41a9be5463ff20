"""Pixel environments, the observation pipeline and the external-env bridge."""

from __future__ import annotations

from .base import (
    Environment,
    EnvStream,
    EnvUsageError,
    EpisodeInfo,
    FrameStack,
    RandomPolicy,
    VectorEnv,
    episode_seed,
    eval_seed,
    frameskip_step,
    preprocess,
    vector_step,
)
from .dodge import DodgeEnv
from .external import EnvServer, ExternalEnv, ExternalEnvError
from .gridquest import GridQuestEnv

BUILTIN = {"gridquest": GridQuestEnv, "dodge": DodgeEnv}


def make_env(name: str, timeout: float = 10.0) -> Environment:
    """``gridquest``, ``dodge`` or ``external:<host:port | unix:/path>``."""
    if name.startswith("external:"):
        return ExternalEnv.open(name[len("external:") :], timeout)
    try:
        return BUILTIN[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(BUILTIN)} or external:<endpoint>") from None


def make_vector_env(
    name: str,
    n: int,
    run_seed: int = 0,
    frameskip: int = 4,
    stack: int = 4,
    size: int = 84,
    cap: int = 4500,
    workers: int = 1,
) -> VectorEnv:
    streams = [EnvStream(make_env(name), i, run_seed, frameskip, stack, size, cap) for i in range(n)]
    return VectorEnv(streams, workers)


__all__ = [
    "BUILTIN",
    "DodgeEnv",
    "EnvServer",
    "EnvStream",
    "EnvUsageError",
    "Environment",
    "EpisodeInfo",
    "ExternalEnv",
    "ExternalEnvError",
    "FrameStack",
    "GridQuestEnv",
    "RandomPolicy",
    "VectorEnv",
    "episode_seed",
    "eval_seed",
    "frameskip_step",
    "make_env",
    "make_vector_env",
    "preprocess",
    "vector_step",
]
