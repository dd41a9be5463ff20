"""Environment interface and the shared observation pipeline.

Raw frames are RGB uint8 arrays [H, W, 3]. The agent sees a stack of the last
four preprocessed frames (grayscale, 84x84, scaled to [0, 1]), newest last,
and every agent action is repeated for four raw frames.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Hashable

import numpy as np

from ..autodiff import ShapeError


class EnvUsageError(RuntimeError):
    """An environment was driven out of protocol (e.g. stepped after done)."""


class Environment:
    """Base class for deterministic pixel environments.

    Subclasses implement ``_reset(seed)`` and ``_step(action)``; this class
    enforces that a finished episode is reset before it is stepped again.
    """

    action_count: int = 0

    def __init__(self) -> None:
        self._live = False

    def reset(self, seed: int) -> np.ndarray:
        frame = self._reset(int(seed))
        self._live = True
        return frame

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if not self._live:
            raise EnvUsageError("step() called on a finished or never-reset episode; call reset() first")
        action = int(action)
        if not 0 <= action < self.action_count:
            raise ValueError(f"action {action} outside [0, {self.action_count})")
        frame, reward, done = self._step(action)
        if done:
            self._live = False
        return frame, float(reward), bool(done)

    def state_key(self) -> Hashable | None:
        """Discrete identifier of the current state, when the env can expose one."""
        return None

    def close(self) -> None:
        pass

    def _reset(self, seed: int) -> np.ndarray:
        raise NotImplementedError

    def _step(self, action: int) -> tuple[np.ndarray, float, bool]:
        raise NotImplementedError


# ---------------------------------------------------------------- preprocessing


@lru_cache(maxsize=32)
def area_weights(n_in: int, n_out: int) -> np.ndarray:
    """[n_out, n_in] matrix averaging each output cell over the input span it covers."""
    scale = n_in / n_out
    w = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            w[i, j] = min(hi, j + 1) - max(lo, j)
    w /= scale
    w.setflags(write=False)
    return w


_LUMA = np.array([299, 587, 114], dtype=np.float32)


def luminance(frame: np.ndarray) -> np.ndarray:
    """(299 R + 587 G + 114 B) / 1000, computed exactly.

    The weighted sum is an integer below 2**24, so float32 holds it without rounding.
    """
    return (frame.astype(np.float32) @ _LUMA).astype(np.float64) / 1000.0


def preprocess(frame: np.ndarray, size: int = 84) -> np.ndarray:
    """RGB [H, W, 3] uint8 -> grayscale [size, size] float32 in [0, 1] (area-average resize)."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ShapeError(f"preprocess: expected an RGB frame [H, W, 3], got {frame.shape}")
    H, W = frame.shape[:2]
    if H < 1 or W < 1:
        raise ShapeError("preprocess: empty frame")
    gray = luminance(frame)
    if H % size == 0 and W % size == 0:
        fh, fw = H // size, W // size
        if fh * fw > 1:
            gray = gray.reshape(size, fh, size, fw).mean(axis=(1, 3))
    else:
        gray = area_weights(H, size) @ gray @ area_weights(W, size).T
    return np.clip(gray / 255.0, 0.0, 1.0).astype(np.float32)


class FrameStack:
    def __init__(self, depth: int = 4):
        self.depth = depth
        self._frames: deque = deque(maxlen=depth)

    def reset(self, frame: np.ndarray) -> np.ndarray:
        self._frames.clear()
        for _ in range(self.depth):
            self._frames.append(frame)
        return self.array()

    def push(self, frame: np.ndarray) -> np.ndarray:
        self._frames.append(frame)
        return self.array()

    def array(self) -> np.ndarray:
        return np.stack(self._frames, axis=0)


def frameskip_step(env: Environment, action: int, k: int = 4) -> tuple[np.ndarray, float, bool]:
    """Repeat ``action`` up to ``k`` raw frames, stopping early at done; rewards are summed."""
    if k < 1:
        raise ValueError("frameskip must be >= 1")
    total = 0.0
    frame, done = None, False
    for _ in range(k):
        frame, reward, done = env.step(action)
        total += reward
        if done:
            break
    return frame, total, done


# ---------------------------------------------------------------- seeding

_TRAIN_MASK = 0x7FFF_FFFF
_EVAL_BIT = 0x8000_0000


def episode_seed(run_seed: int, stream: int, episode: int) -> int:
    """Training episode seeds live in [0, 2**31)."""
    return int(np.random.SeedSequence([run_seed, stream, episode]).generate_state(1)[0]) & _TRAIN_MASK


def eval_seed(run_seed: int, episode: int) -> int:
    """Evaluation seeds live in [2**31, 2**32), disjoint from every training seed."""
    return int(np.random.SeedSequence([run_seed, 0xE7A1, episode]).generate_state(1)[0]) | _EVAL_BIT


# ---------------------------------------------------------------- streams


@dataclass
class EpisodeInfo:
    stream: int
    score: float
    length: int


class EnvStream:
    """One environment plus its frame stack, step cap and per-episode reseeding."""

    def __init__(
        self,
        env: Environment,
        stream: int = 0,
        run_seed: int = 0,
        frameskip: int = 4,
        stack: int = 4,
        size: int = 84,
        cap: int = 4500,
        seed_fn: Callable[[int], int] | None = None,
    ):
        self.env = env
        self.stream = stream
        self.run_seed = run_seed
        self.frameskip = frameskip
        self.size = size
        self.cap = cap
        self.frames = FrameStack(stack)
        self.seed_fn = seed_fn or (lambda ep: episode_seed(run_seed, stream, ep))
        self.episode = 0
        self.length = 0
        self.score = 0.0
        self.last_key = None

    @property
    def action_count(self) -> int:
        return self.env.action_count

    def reset(self) -> np.ndarray:
        frame = self.env.reset(self.seed_fn(self.episode))
        self.last_key = self.env.state_key()
        self.length = 0
        self.score = 0.0
        return self.frames.reset(preprocess(frame, self.size))

    def step(self, action: int) -> tuple[np.ndarray, float, bool, EpisodeInfo | None]:
        """Advance one agent step; on done the returned stack already belongs to the next episode."""
        frame, reward, done = frameskip_step(self.env, action, self.frameskip)
        key = self.env.state_key()
        self.length += 1
        self.score += reward
        if self.length >= self.cap:
            done = True
        if not done:
            self.last_key = key
            return self.frames.push(preprocess(frame, self.size)), reward, False, None
        info = EpisodeInfo(self.stream, self.score, self.length)
        self.episode += 1
        obs = self.reset()
        self.last_key = key  # the terminal state counts as visited
        return obs, reward, True, info


class VectorEnv:
    """E streams stepped together; results are always gathered in stream order."""

    def __init__(self, streams: list[EnvStream], workers: int = 1):
        if not streams:
            raise ValueError("need at least one stream")
        counts = {s.action_count for s in streams}
        if len(counts) != 1:
            raise ValueError(f"streams disagree on action count: {counts}")
        self.streams = streams
        self.workers = workers
        self._pool = ThreadPoolExecutor(workers) if workers > 1 else None
        self.visited: set = set()

    @property
    def n(self) -> int:
        return len(self.streams)

    @property
    def action_count(self) -> int:
        return self.streams[0].action_count

    @property
    def unique_states(self) -> int | None:
        return len(self.visited) if self.visited else None

    def _track(self) -> None:
        for s in self.streams:
            if s.last_key is not None:
                self.visited.add(s.last_key)

    def reset(self) -> np.ndarray:
        obs = np.stack([s.reset() for s in self.streams])
        self._track()
        return obs

    def step(self, actions) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[EpisodeInfo]]:
        actions = np.asarray(actions)
        if actions.shape != (self.n,):
            raise ValueError(f"expected {self.n} actions, got shape {actions.shape}")
        if self._pool is None:
            results = [s.step(int(a)) for s, a in zip(self.streams, actions)]
        else:
            results = list(self._pool.map(lambda sa: sa[0].step(int(sa[1])), zip(self.streams, actions)))
        self._track()
        obs = np.stack([r[0] for r in results])
        rewards = np.array([r[1] for r in results])
        dones = np.array([r[2] for r in results], dtype=bool)
        infos = [r[3] for r in results if r[3] is not None]
        return obs, rewards, dones, infos

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
        for s in self.streams:
            s.env.close()


def vector_step(venv: VectorEnv, actions):
    return venv.step(actions)


class RandomPolicy:
    """Uniform-random reference policy."""

    def __init__(self, action_count: int, seed: int = 0):
        self.action_count = action_count
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA5E]))

    def __call__(self, n: int) -> np.ndarray:
        return self.rng.integers(0, self.action_count, size=n)
