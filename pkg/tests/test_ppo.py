import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from brimcuriosity import autodiff as ad
from brimcuriosity.agent import Agent
from brimcuriosity.autodiff import Tape, Tensor, gradcheck
from brimcuriosity.brim import BrimConfig
from brimcuriosity.nn import Adam
from brimcuriosity.ppo import (
    NonFiniteLossError,
    PolicyHeads,
    PpoHyper,
    RolloutBuffer,
    act,
    compute_gae,
    normalize_advantages,
    ppo_losses,
    ppo_update,
    sample_categorical,
    surrogate_objective,
)
from brimcuriosity.rim import RimConfig
from brimcuriosity.world import EncoderConfig, WorldConfig


def gae_oracle(r, v, d, last, gamma, lam):
    """Direct sum over future TD errors, stopping at the first episode end."""
    T = len(r)
    vals = list(v) + [last]
    deltas = [r[t] + gamma * vals[t + 1] * (1 - d[t]) - v[t] for t in range(T)]
    adv = []
    for t in range(T):
        acc, w = 0.0, 1.0
        for k in range(t, T):
            acc += w * deltas[k]
            if d[k]:
                break
            w *= gamma * lam
        adv.append(acc)
    return np.array(adv)


# ---------------------------------------------------------------- GAE


def test_gae_single_step():
    adv, ret = compute_gae(np.array([[1.0]]), np.array([[0.0]]), np.array([[False]]), np.array([0.0]), 0.99, 0.95)
    assert adv[0, 0] == 1.0 and ret[0, 0] == 1.0


def test_gae_terminal_cuts_bootstrap():
    adv, _ = compute_gae(np.array([[1.0]]), np.array([[0.5]]), np.array([[True]]), np.array([100.0]), 0.99, 0.95)
    assert adv[0, 0] == pytest.approx(0.5)


def test_gae_three_step_recursion():
    r = np.array([[1.0], [0.0], [2.0]])
    v = np.array([[0.5], [0.2], [0.1]])
    d = np.zeros((3, 1), dtype=bool)
    adv, ret = compute_gae(r, v, d, np.array([0.3]), 0.9, 0.8)
    d2 = 2.0 + 0.9 * 0.3 - 0.1
    d1 = 0.0 + 0.9 * 0.1 - 0.2 + 0.72 * d2
    d0 = 1.0 + 0.9 * 0.2 - 0.5 + 0.72 * d1
    np.testing.assert_allclose(adv[:, 0], [d0, d1, d2], rtol=1e-14)
    np.testing.assert_allclose(ret, adv + v, rtol=0, atol=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2**31))
def test_gae_matches_direct_sum(T, seed):
    rng = np.random.default_rng(seed)
    r, v = rng.standard_normal((T, 2)), rng.standard_normal((T, 2))
    d = rng.random((T, 2)) < 0.3
    last = rng.standard_normal(2)
    adv, _ = compute_gae(r, v, d, last, 0.99, 0.95)
    for e in range(2):
        np.testing.assert_allclose(adv[:, e], gae_oracle(r[:, e], v[:, e], d[:, e], last[e], 0.99, 0.95), rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------- advantage normalisation


def test_normalize_two_values():
    np.testing.assert_allclose(normalize_advantages([1.0, 3.0]), [-1.0, 1.0])


def test_normalize_constant_is_centered_only():
    np.testing.assert_array_equal(normalize_advantages([2.0, 2.0, 2.0]), [0.0, 0.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 64), elements=st.floats(-1e4, 1e4)))
def test_normalized_moments(a):
    if a.std() < 1e-3:
        return
    out = normalize_advantages(a)
    assert abs(out.mean()) <= 1e-6
    assert abs(out.std() - 1.0) <= 1e-6


# ---------------------------------------------------------------- clipped surrogate


def _surrogate_grad(logp, old, adv, clip=0.1):
    lp = ad.parameter(np.asarray(logp, dtype=float))
    with Tape():
        obj = surrogate_objective(lp, old, adv, clip)
    (g,) = ad.backward(obj, [lp])
    return float(obj.data), g


def test_ratio_one_gives_mean_advantage():
    old = np.log([0.2, 0.5, 0.3])
    adv = np.array([1.0, -2.0, 0.5])
    obj, g = _surrogate_grad(old, old, adv)
    assert obj == pytest.approx(adv.mean(), rel=1e-15)
    np.testing.assert_allclose(g, adv / 3, rtol=1e-15)


def test_clip_zero_gradient_zones():
    old = np.zeros(4)
    # ratio above 1+eps with A>0, and below 1-eps with A<0: gradient must vanish
    logp = np.log([1.5, 0.5, 1.05, 0.95])
    adv = np.array([1.0, -1.0, 1.0, -1.0])
    _, g = _surrogate_grad(logp, old, adv)
    assert g[0] == 0.0 and g[1] == 0.0
    assert g[2] != 0.0 and g[3] != 0.0
    # the pessimistic bound keeps gradient on the side that hurts
    _, g2 = _surrogate_grad(np.log([1.5, 0.5]), np.zeros(2), np.array([-1.0, 1.0]))
    assert g2[0] != 0.0 and g2[1] != 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(-3, 3).filter(lambda a: abs(a) > 1e-3))
def test_clip_zones_per_sample(log_ratio, a):
    ratio = math.exp(log_ratio)
    _, g = _surrogate_grad([log_ratio], [0.0], [a])
    outside = (a > 0 and ratio > 1.1) or (a < 0 and ratio < 0.9)
    if outside:
        assert g[0] == 0.0
    else:
        assert g[0] == pytest.approx(ratio * a, rel=1e-12)


# ---------------------------------------------------------------- sampling and acting


def test_sampling_frequencies():
    rng = np.random.default_rng(0)
    probs = np.tile([0.1, 0.6, 0.3], (100_000, 1))
    counts = np.bincount(sample_categorical(probs, rng), minlength=3) / 100_000
    np.testing.assert_allclose(counts, [0.1, 0.6, 0.3], atol=0.01)


def test_degenerate_distribution_always_sampled():
    rng = np.random.default_rng(1)
    probs = np.tile([0.0, 0.0, 1.0], (1000, 1))
    assert (sample_categorical(probs, rng) == 2).all()


def test_greedy_act_and_log_probs():
    policy = PolicyHeads(5, 3, np.random.default_rng(0))
    h = Tensor(np.random.default_rng(1).standard_normal((4, 5)))
    actions, logp, values = act(policy, h, np.random.default_rng(2), greedy=True)
    logits, v = policy(h)
    lp = ad.log_softmax(logits, -1).data
    np.testing.assert_array_equal(actions, lp.argmax(-1))
    np.testing.assert_allclose(logp, lp.max(-1), rtol=1e-15)
    np.testing.assert_allclose(values, v.data)


# ---------------------------------------------------------------- buffer


def test_buffer_order_and_finish():
    buf = RolloutBuffer(2, 3, (1,))
    with pytest.raises(IndexError):
        buf.add(1, np.zeros((3, 1)), [0] * 3, [0.0] * 3, [0.0] * 3, [0.0] * 3, [0.0] * 3, [False] * 3)
    with pytest.raises(RuntimeError):
        buf.finish(np.zeros(3), 0.99, 0.95)
    for t in range(2):
        buf.add(t, np.full((3, 1), t), [t] * 3, [0.0] * 3, [0.0] * 3, [1.0] * 3, [2.0] * 3, [False] * 3, 1.0, 0.5)
    np.testing.assert_array_equal(buf.rewards, 2.0)
    buf.finish(np.zeros(3), 0.99, 0.95)
    assert buf.advantages.shape == (2, 3)


def test_hyper_validation():
    with pytest.raises(ValueError):
        PpoHyper(clip=0.0)
    with pytest.raises(ValueError):
        PpoHyper(minibatches=9, n_envs=8)


# ---------------------------------------------------------------- composed loss and update


def tiny_agent(seed=0, dtype=np.float64):
    enc = EncoderConfig(frames=2, size=12, channels=(3,), kernels=(4,), strides=(2,), embedding=6)
    pool = lambda: BrimConfig([RimConfig(n_modules=3, n_active=2, module_size=4, input_dim=6, key_size=4, value_size=3, comm_key_size=3)])
    return Agent(WorldConfig(enc, pool(), pool()), 3, np.random.default_rng(seed), policy_hidden=5, dtype=dtype)


def filled_buffer(agent, T=4, E=2, seed=0):
    rng = np.random.default_rng(seed)
    buf = RolloutBuffer(T, E, (2, 12, 12), dtype=np.float64)
    state = agent.initial_state(E)
    buf.init_state = state
    for t in range(T):
        obs = rng.random((E, 2, 12, 12))
        step, state = agent.observe(state, obs)
        actions, logp, values = act(agent.policy, step.h_p, rng)
        # shift stored log-probs so some ratios leave the clip range
        buf.add(t, obs, actions, logp + rng.normal(0, 0.2, E), values, step.r_int, np.zeros(E), rng.random(E) < 0.2)
    buf.finish(rng.standard_normal(E), 0.99, 0.95)
    return buf


@pytest.mark.parametrize("seed", range(2))
def test_composed_loss_gradcheck(seed):
    agent = tiny_agent(seed)
    buf = filled_buffer(agent, seed=seed)
    hyper = PpoHyper(n_envs=2, minibatches=1, world_coef=0.0)
    params = [agent.policy.actor_out.weight, agent.policy.critic_hidden.weight, agent.world.encoder.fc.weight]
    assert gradcheck(lambda: ppo_losses(agent, buf, np.array([0, 1]), hyper)["total"], params) <= 1e-4


def test_update_reduces_loss_on_fixed_batch():
    agent = tiny_agent(3)
    buf = filled_buffer(agent, seed=3)
    hyper = PpoHyper(n_envs=2, minibatches=1, epochs=1, lr=1e-3)
    opt = Adam(agent.parameters(), lr=1e-3)
    envs = np.array([0, 1])
    with ad.no_grad():
        before = float(ppo_losses(agent, buf, envs, hyper)["total"].data)
    for _ in range(20):
        stats = ppo_update(agent, opt, buf, hyper, np.random.default_rng(0))
    with ad.no_grad():
        after = float(ppo_losses(agent, buf, envs, hyper)["total"].data)
    assert after < before
    assert set(stats) == {"policy_loss", "value_loss", "entropy", "world_loss", "total", "grad_norm"}


def test_update_requires_finished_buffer():
    agent = tiny_agent()
    with pytest.raises(RuntimeError):
        ppo_update(agent, Adam(agent.parameters()), RolloutBuffer(2, 2, (2, 12, 12)), PpoHyper(n_envs=2, minibatches=1), np.random.default_rng(0))


def test_non_finite_loss_aborts_without_step():
    agent = tiny_agent()
    buf = filled_buffer(agent)
    buf.returns[0, 0] = np.nan
    before = {k: v.copy() for k, v in agent.state_dict().items()}
    with pytest.raises(NonFiniteLossError) as err:
        ppo_update(agent, Adam(agent.parameters()), buf, PpoHyper(n_envs=2, minibatches=1), np.random.default_rng(0))
    assert err.value.term == "value_loss"
    for k, v in agent.state_dict().items():
        assert v.tobytes() == before[k].tobytes()
