"""Predictive world model and the intrinsic reward derived from it.

Two disjoint module pools share one pixel encoder. The current pool turns the
observation into the state representation ``h_p`` that the policy reads; the
expectation pool produces ``h_f``, its guess of what ``h_p`` will be one step
later. The intrinsic reward at time t is how badly the guess made at t-1 missed:
``mean((h_p[t] - h_f[t-1]) ** 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .brim import BrimConfig, BrimStack, StackState, detach_state, reset_rows, select_rows
from .nn import Conv2dParams, Linear, Module, conv_output_size
from .rim import RimConfig


@dataclass
class EncoderConfig:
    frames: int = 4
    size: int = 84
    channels: tuple[int, ...] = (16, 32, 32)
    kernels: tuple[int, ...] = (8, 4, 3)
    strides: tuple[int, ...] = (4, 2, 1)
    embedding: int = 128

    def __post_init__(self):
        if not len(self.channels) == len(self.kernels) == len(self.strides):
            raise ValueError("channels, kernels and strides must have equal length")


class Encoder(Module):
    """Convolutions with max(x, 0) after each, then one linear map to the embedding."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        convs = []
        c, hw = cfg.frames, cfg.size
        for oc, k, s in zip(cfg.channels, cfg.kernels, cfg.strides):
            convs.append(Conv2dParams(c, oc, k, s, rng, dtype))
            c, hw = oc, conv_output_size(hw, k, s)
            if hw < 1:
                raise ValueError(f"encoder collapses the {cfg.size}px input to nothing")
        self.convs = convs
        self.flat = c * hw * hw
        self.fc = Linear(self.flat, cfg.embedding, rng, dtype)

    def __call__(self, obs) -> Tensor:
        x = ad.as_tensor(obs)
        cfg = self.cfg
        expected = (cfg.frames, cfg.size, cfg.size)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"encoder: expected observations [N, {', '.join(map(str, expected))}], got {x.shape}")
        for conv in self.convs:
            x = ad.relu(conv(x))
        return self.fc(ad.reshape(x, (x.shape[0], self.flat)))


def default_pool() -> BrimConfig:
    return BrimConfig([RimConfig(n_modules=4, n_active=2, module_size=32, input_dim=128)])


@dataclass
class WorldConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    current: BrimConfig = field(default_factory=default_pool)
    expected: BrimConfig = field(default_factory=default_pool)

    def __post_init__(self):
        for pool in (self.current, self.expected):
            if pool.layers[0].input_dim != self.encoder.embedding:
                raise ValueError("pool input_dim must equal the encoder embedding width")
        cur = self.current.layers[-1]
        exp = self.expected.layers[-1]
        if cur.n_modules * cur.module_size != exp.n_modules * exp.module_size:
            raise ValueError("current and expected pools must expose equally wide states")


@dataclass
class WorldState:
    current: StackState
    expected: StackState
    prev_h_f: np.ndarray  # [B, n] expectation from the previous step
    first: np.ndarray  # [B] bool, no expectation exists yet


@dataclass
class WorldStep:
    x: Tensor  # [B, embedding]
    h_p: Tensor  # [B, n]
    h_f: Tensor  # [B, n]
    r_int: np.ndarray  # [B]


def intrinsic_reward(h_p, h_f_prev) -> np.ndarray | float:
    """Mean squared difference over the last axis; no normalisation or clipping."""
    a = np.asarray(h_p.data if isinstance(h_p, Tensor) else h_p, dtype=np.float64)
    b = np.asarray(h_f_prev.data if isinstance(h_f_prev, Tensor) else h_f_prev, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"intrinsic_reward: shapes differ {a.shape} vs {b.shape}")
    if a.shape[-1] == 0:
        raise ShapeError("intrinsic_reward: empty state vectors")
    r = np.mean((a - b) ** 2, axis=-1)
    return float(r) if r.ndim == 0 else r


def world_loss(h_p, h_f_prev, mask: np.ndarray | None = None) -> Tensor:
    """MSE between the earlier expectation and the realised state.

    ``h_p`` is a fixed target here: gradient reaches only ``h_f_prev``. With
    ``mask`` (one flag per leading index), only flagged rows are averaged.
    """
    h_p, h_f_prev = ad.as_tensor(h_p), ad.as_tensor(h_f_prev)
    if h_p.shape != h_f_prev.shape:
        raise ShapeError(f"world_loss: shapes differ {h_p.shape} vs {h_f_prev.shape}")
    diff = h_f_prev - ad.stop_gradient(h_p)
    if mask is None:
        return ad.mean(diff * diff)
    mask = np.asarray(mask, dtype=h_p.dtype)
    per_row = ad.mean(diff * diff, axis=-1)
    if mask.shape != per_row.shape:
        raise ShapeError(f"world_loss: mask {mask.shape} vs rows {per_row.shape}")
    count = max(float(mask.sum()), 1.0)
    return ad.tsum(per_row * Tensor._wrap(mask)) * (1.0 / count)


class WorldModel(Module):
    def __init__(self, cfg: WorldConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.dtype = dtype
        self.encoder = Encoder(cfg.encoder, rng, dtype)
        self.current = BrimStack(cfg.current, rng, dtype)
        self.expected = BrimStack(cfg.expected, rng, dtype)

    @property
    def state_size(self) -> int:
        return self.current.output_size()

    def initial_state(self, batch: int) -> WorldState:
        return WorldState(
            current=self.current.initial_state(batch),
            expected=self.expected.initial_state(batch),
            prev_h_f=np.zeros((batch, self.state_size), dtype=self.dtype),
            first=np.ones(batch, dtype=bool),
        )

    def encode(self, obs) -> Tensor:
        return self.encoder(obs)

    def step_embedding(self, state: WorldState, x: Tensor) -> tuple[WorldStep, WorldState]:
        cur = self.current.stack_step(state.current, x)
        exp = self.expected.stack_step(state.expected, x)
        h_p = self.current.read_concat(cur)
        h_f = self.expected.read_concat(exp)
        r = np.where(state.first, 0.0, intrinsic_reward(h_p, state.prev_h_f))
        new_state = WorldState(cur, exp, h_f.data.copy(), np.zeros_like(state.first))
        return WorldStep(x, h_p, h_f, r), new_state

    def world_step(self, state: WorldState, obs) -> tuple[WorldStep, WorldState]:
        """Encode ``obs`` ([B, frames, size, size]) and advance both pools one step."""
        return self.step_embedding(state, self.encode(obs))


def reset_world(state: WorldState, mask: np.ndarray) -> WorldState:
    """Episode boundary: zero both pools for the masked streams and forget their expectation."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return state
    return WorldState(
        current=reset_rows(state.current, mask),
        expected=reset_rows(state.expected, mask),
        prev_h_f=np.where(mask[:, None], 0.0, state.prev_h_f).astype(state.prev_h_f.dtype),
        first=state.first | mask,
    )


def detach_world(state: WorldState) -> WorldState:
    return WorldState(detach_state(state.current), detach_state(state.expected), state.prev_h_f.copy(), state.first.copy())


def select_world_rows(state: WorldState, rows: np.ndarray) -> WorldState:
    return WorldState(
        select_rows(state.current, rows),
        select_rows(state.expected, rows),
        state.prev_h_f[rows].copy(),
        state.first[rows].copy(),
    )
