"""Proximal policy optimisation on top of the recurrent world model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .nn import Adam, Linear, Module, clip_grad_norm
from .world import WorldState, select_world_rows


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value: float):
        super().__init__(f"non-finite {term} ({value}); update aborted")
        self.term = term
        self.value = value


@dataclass
class PpoHyper:
    lr: float = 0.00025
    epochs: int = 4
    rollout: int = 128
    n_envs: int = 8
    clip: float = 0.1
    gamma: float = 0.99
    lam: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.001
    world_coef: float = 1.0
    minibatches: int = 4
    max_grad_norm: float = 0.5
    intrinsic_coef: float = 1.0
    extrinsic_coef: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        for name in ("lr", "epochs", "rollout", "n_envs", "minibatches"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.minibatches > self.n_envs:
            raise ValueError("minibatches are whole environment sequences; need minibatches <= n_envs")


class PolicyHeads(Module):
    """Actor and critic MLPs over the current-state representation."""

    def __init__(self, state_size: int, n_actions: int, rng: np.random.Generator, hidden: int = 64, dtype=np.float64):
        self.actor_hidden = Linear(state_size, hidden, rng, dtype)
        self.actor_out = Linear(hidden, n_actions, rng, dtype)
        self.critic_hidden = Linear(state_size, hidden, rng, dtype)
        self.critic_out = Linear(hidden, 1, rng, dtype)

    @property
    def n_actions(self) -> int:
        return self.actor_out.out_features

    def __call__(self, h) -> tuple[Tensor, Tensor]:
        logits = self.actor_out(ad.tanh(self.actor_hidden(h)))
        value = self.critic_out(ad.tanh(self.critic_hidden(h)))
        return logits, ad.reshape(value, (value.shape[0],))


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row by inverse CDF."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0])
    idx = (u[:, None] * cdf[:, -1:] > cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def act(policy: PolicyHeads, h_p, rng: np.random.Generator, greedy: bool = False):
    """Pick actions for a batch of states; returns (actions, log-probs, values)."""
    with ad.no_grad():
        logits, value = policy(h_p)
    lp = ad.log_softmax(logits, axis=-1).data
    if greedy:
        actions = np.argmax(lp, axis=-1)
    else:
        actions = sample_categorical(np.exp(lp), rng)
    return actions, lp[np.arange(len(actions)), actions], value.data.copy()


def compute_gae(rewards, values, dones, last_value, gamma: float, lam: float):
    """Generalised advantage estimates over [T, E] arrays.

    ``dones[t]`` marks that the episode ended after step t, which cuts both
    the bootstrap and the advantage trace.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    nonterminal = 1.0 - np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    for t in range(T - 1, -1, -1):
        next_v = last_value if t == T - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_v * nonterminal[t] - values[t]
        running = delta + gamma * lam * nonterminal[t] * running
        adv[t] = running
    return adv, adv + values


def normalize_advantages(adv) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    centered = adv - adv.mean()
    std = adv.std()
    if std < 1e-8:
        return centered
    return centered / std


def surrogate_objective(logp, old_logp, advantages, clip: float) -> Tensor:
    """Clipped surrogate ``mean(min(r A, clip(r, 1-eps, 1+eps) A))`` with ``r = exp(logp - old)``."""
    logp = ad.as_tensor(logp)
    adv = Tensor._wrap(np.asarray(advantages, dtype=logp.dtype))
    ratio = ad.exp(logp - Tensor._wrap(np.asarray(old_logp, dtype=logp.dtype)))
    unclipped = ratio * adv
    clipped = ad.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    return ad.mean(ad.minimum(unclipped, clipped))


@dataclass
class RolloutBuffer:
    """Fixed-horizon trajectories for E streams; arrays are indexed [t, env]."""

    horizon: int
    n_envs: int
    obs_shape: tuple[int, ...]
    dtype: type = np.float32
    obs: np.ndarray = field(init=False)
    actions: np.ndarray = field(init=False)
    log_probs: np.ndarray = field(init=False)
    values: np.ndarray = field(init=False)
    rewards: np.ndarray = field(init=False)
    r_int: np.ndarray = field(init=False)
    r_ext: np.ndarray = field(init=False)
    dones: np.ndarray = field(init=False)
    init_state: WorldState | None = None
    last_value: np.ndarray | None = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __post_init__(self):
        T, E = self.horizon, self.n_envs
        self.obs = np.zeros((T, E) + tuple(self.obs_shape), dtype=self.dtype)
        self.actions = np.zeros((T, E), dtype=np.int64)
        self.log_probs = np.zeros((T, E))
        self.values = np.zeros((T, E))
        self.rewards = np.zeros((T, E))
        self.r_int = np.zeros((T, E))
        self.r_ext = np.zeros((T, E))
        self.dones = np.zeros((T, E), dtype=bool)
        self._filled = 0

    def add(self, t: int, obs, actions, log_probs, values, r_int, r_ext, dones, intrinsic_coef=1.0, extrinsic_coef=0.0):
        if t != self._filled:
            raise IndexError(f"rollout steps must be added in order (expected {self._filled}, got {t})")
        self.obs[t] = obs
        self.actions[t] = actions
        self.log_probs[t] = log_probs
        self.values[t] = values
        self.r_int[t] = r_int
        self.r_ext[t] = r_ext
        self.rewards[t] = intrinsic_coef * np.asarray(r_int) + extrinsic_coef * np.asarray(r_ext)
        self.dones[t] = dones
        self._filled += 1

    @property
    def full(self) -> bool:
        return self._filled == self.horizon

    def finish(self, last_value, gamma: float, lam: float) -> None:
        if not self.full:
            raise RuntimeError(f"rollout incomplete: {self._filled}/{self.horizon} steps")
        self.last_value = np.asarray(last_value, dtype=np.float64)
        self.advantages, self.returns = compute_gae(self.rewards, self.values, self.dones, self.last_value, gamma, lam)


def _check_finite(terms: dict[str, Tensor]) -> None:
    for name, t in terms.items():
        v = float(t.data)
        if not math.isfinite(v):
            raise NonFiniteLossError(name, v)


def ppo_losses(agent, buffer: RolloutBuffer, envs: np.ndarray, hyper: PpoHyper) -> dict[str, Tensor]:
    """Replay the streams ``envs`` from their stored initial state and build every loss term."""
    init = select_world_rows(buffer.init_state, envs)
    obs = buffer.obs[:, envs]
    dones = buffer.dones[:, envs]
    h_p, world = agent.replay(init, obs, dones)
    logits, values = agent.policy(h_p)
    logp_all = ad.log_softmax(logits, axis=-1)
    actions = buffer.actions[:, envs].reshape(-1)
    logp = ad.getitem(logp_all, (np.arange(actions.size), actions))
    entropy = -ad.mean(ad.tsum(ad.exp(logp_all) * logp_all, axis=-1))
    adv = normalize_advantages(buffer.advantages[:, envs].reshape(-1))
    surrogate = surrogate_objective(logp, buffer.log_probs[:, envs].reshape(-1), adv, hyper.clip)
    returns = Tensor._wrap(buffer.returns[:, envs].reshape(-1).astype(values.dtype))
    verr = values - returns
    value_loss = ad.mean(verr * verr)
    total = -surrogate - hyper.entropy_coef * entropy + hyper.value_coef * value_loss + hyper.world_coef * world
    return {
        "policy_loss": -surrogate,
        "value_loss": value_loss,
        "entropy": entropy,
        "world_loss": world,
        "total": total,
    }


def ppo_update(agent, optimizer: Adam, buffer: RolloutBuffer, hyper: PpoHyper, rng: np.random.Generator) -> dict[str, float]:
    """Several epochs of minibatch optimisation over whole-stream sequences.

    Each minibatch takes one optimizer step on every agent parameter (encoder,
    both pools, policy heads).
    """
    if buffer.advantages is None:
        raise RuntimeError("call buffer.finish() before ppo_update")
    sums: dict[str, float] = {}
    count = 0
    for _ in range(hyper.epochs):
        order = rng.permutation(buffer.n_envs)
        for envs in np.array_split(order, hyper.minibatches):
            envs = np.sort(envs)
            optimizer.zero_grad()
            with Tape() as tape:
                terms = ppo_losses(agent, buffer, envs, hyper)
            _check_finite(terms)
            tape.backward(terms["total"])
            grad_norm = clip_grad_norm(optimizer.params, hyper.max_grad_norm)
            if not math.isfinite(grad_norm):
                raise NonFiniteLossError("gradient norm", grad_norm)
            optimizer.step()
            for k, t in terms.items():
                sums[k] = sums.get(k, 0.0) + float(t.data)
            sums["grad_norm"] = sums.get("grad_norm", 0.0) + grad_norm
            count += 1
    return {k: v / count for k, v in sums.items()}
