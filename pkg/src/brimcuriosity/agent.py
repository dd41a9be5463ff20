"""The agent: world model plus policy heads reading the current-state representation."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Module
from .ppo import PolicyHeads
from .world import WorldConfig, WorldModel, WorldState, WorldStep, reset_world, world_loss


class Agent(Module):
    def __init__(self, world_cfg: WorldConfig, n_actions: int, rng: np.random.Generator, policy_hidden: int = 64, dtype=np.float64):
        self.world = WorldModel(world_cfg, rng, dtype)
        self.policy = PolicyHeads(self.world.state_size, n_actions, rng, policy_hidden, dtype)
        self.dtype = dtype

    @classmethod
    def from_config(cls, cfg, n_actions: int) -> "Agent":
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x1417]))
        return cls(cfg.world_config(), n_actions, rng, cfg.policy_hidden, cfg.dtype)

    @property
    def n_actions(self) -> int:
        return self.policy.n_actions

    def initial_state(self, batch: int) -> WorldState:
        return self.world.initial_state(batch)

    def observe(self, state: WorldState, obs: np.ndarray) -> tuple[WorldStep, WorldState]:
        """Rollout-time world step (nothing recorded)."""
        with ad.no_grad():
            return self.world.world_step(state, Tensor._wrap(np.asarray(obs, dtype=self.dtype)))

    def replay(self, init: WorldState, obs: np.ndarray, dones: np.ndarray) -> tuple[Tensor, Tensor]:
        """Re-run the world model over a stored [T, B] sequence on the active tape.

        Streams are reset before step t whenever ``dones[t-1]`` is set, exactly as
        during collection. Returns the current-state representations as
        [T * B, n] (time-major) and the world loss over every in-episode pair
        (h_p[t], h_f[t-1]).
        """
        T, B = dones.shape
        frames = np.asarray(obs, dtype=self.dtype).reshape((T * B,) + obs.shape[2:])
        x = self.world.encode(Tensor._wrap(frames))
        xs = ad.unstack(ad.reshape(x, (T, B, x.shape[1])), axis=0)
        state = init
        h_p, h_f = [], []
        for t in range(T):
            if t > 0:
                state = reset_world(state, dones[t - 1])
            step, state = self.world.step_embedding(state, xs[t])
            h_p.append(step.h_p)
            h_f.append(step.h_f)
        if T > 1:
            loss = world_loss(ad.stack(h_p[1:]), ad.stack(h_f[:-1]), mask=~dones[:-1])
        else:
            loss = Tensor._wrap(np.zeros((), dtype=self.dtype))
        hp = ad.stack(h_p)
        return ad.reshape(hp, (T * B, hp.shape[2])), loss
