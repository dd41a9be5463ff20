import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from brimcuriosity import autodiff as ad
from brimcuriosity.autodiff import ShapeError, Tape, Tensor, gradcheck
from brimcuriosity.brim import BrimConfig
from brimcuriosity.rim import RimConfig
from brimcuriosity.world import (
    EncoderConfig,
    WorldConfig,
    WorldModel,
    intrinsic_reward,
    reset_world,
    world_loss,
)


def tiny_config(layers=1):
    enc = EncoderConfig(frames=2, size=12, channels=(3, 4), kernels=(4, 3), strides=(2, 1), embedding=6)
    pool = lambda: BrimConfig(
        [RimConfig(n_modules=3, n_active=2, module_size=4, input_dim=6, key_size=4, value_size=3, comm_key_size=3)]
        + [RimConfig(n_modules=3, n_active=1, module_size=4, input_dim=4, key_size=4, value_size=3, comm_key_size=3)] * (layers - 1)
    )
    return WorldConfig(encoder=enc, current=pool(), expected=pool())


def loop_reward(a, b):
    acc = 0.0
    for x, y in zip(a, b):
        acc += (x - y) * (x - y)
    return acc / len(a)


# ---------------------------------------------------------------- intrinsic reward


def test_reward_for_constant_offset():
    assert intrinsic_reward(np.ones(5) + 1.0, np.ones(5)) == 1.0


def test_reward_two_component_example():
    assert intrinsic_reward(np.array([2.0, 0.0]), np.array([0.0, 0.0])) == 2.0


def test_reward_of_perfect_prediction_is_zero():
    h = np.random.default_rng(0).standard_normal(128)
    assert intrinsic_reward(h, h) == 0.0


def test_reward_is_batched_over_rows():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((4, 7)), rng.standard_normal((4, 7))
    r = intrinsic_reward(a, b)
    assert r.shape == (4,)
    for i in range(4):
        assert r[i] == pytest.approx(loop_reward(a[i], b[i]), rel=1e-13)


def test_reward_shape_mismatch():
    with pytest.raises(ShapeError):
        intrinsic_reward(np.zeros(3), np.zeros(4))


@settings(max_examples=80, deadline=None)
@given(
    arrays(np.float64, 16, elements=st.floats(-1e3, 1e3)),
    arrays(np.float64, 16, elements=st.floats(-1e3, 1e3)),
    st.floats(-20, 20),
)
def test_reward_properties(a, b, alpha):
    r = intrinsic_reward(a, b)
    assert r >= 0.0
    assert r == pytest.approx(loop_reward(a, b), rel=1e-12, abs=1e-12)
    assert intrinsic_reward(alpha * a, alpha * b) == pytest.approx(alpha**2 * r, rel=1e-10, abs=1e-10)


# ---------------------------------------------------------------- world loss


def test_world_loss_equals_mean_reward():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((5, 8)), rng.standard_normal((5, 8))
    assert float(world_loss(a, b).data) == pytest.approx(intrinsic_reward(a, b).mean(), rel=1e-13)


def test_world_loss_mask_averages_flagged_rows():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    mask = np.array([True, False, True, False])
    r = intrinsic_reward(a, b)
    assert float(world_loss(a, b, mask).data) == pytest.approx((r[0] + r[2]) / 2, rel=1e-13)


def test_world_loss_gradient_reaches_only_expectation():
    rng = np.random.default_rng(4)
    hp = ad.parameter(rng.standard_normal((3, 5)))
    hf = ad.parameter(rng.standard_normal((3, 5)))
    with Tape():
        loss = world_loss(hp, hf)
    g_p, g_f = ad.backward(loss, [hp, hf])
    assert not g_p.any()
    np.testing.assert_allclose(g_f, 2 * (hf.data - hp.data) / 15, atol=1e-15)


# ---------------------------------------------------------------- world model


def test_first_step_reward_is_zero_then_follows_oracle():
    model = WorldModel(tiny_config(), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    state = model.initial_state(3)
    step0, state = model.world_step(state, Tensor(rng.random((3, 2, 12, 12))))
    np.testing.assert_array_equal(step0.r_int, 0.0)
    step1, _ = model.world_step(state, Tensor(rng.random((3, 2, 12, 12))))
    for b in range(3):
        assert step1.r_int[b] == pytest.approx(loop_reward(step1.h_p.data[b], step0.h_f.data[b]), rel=1e-12)


def test_reset_restores_zero_first_reward():
    model = WorldModel(tiny_config(), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    state = model.initial_state(2)
    for _ in range(2):
        _, state = model.world_step(state, Tensor(rng.random((2, 2, 12, 12))))
    state = reset_world(state, np.array([True, False]))
    step, _ = model.world_step(state, Tensor(rng.random((2, 2, 12, 12))))
    assert step.r_int[0] == 0.0 and step.r_int[1] > 0.0


def test_state_size_and_shapes():
    model = WorldModel(tiny_config(), np.random.default_rng(0))
    step, _ = model.world_step(model.initial_state(2), Tensor(np.zeros((2, 2, 12, 12))))
    assert model.state_size == 12
    assert step.h_p.shape == step.h_f.shape == (2, 12)


def test_wrong_observation_shape():
    model = WorldModel(tiny_config(), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        model.world_step(model.initial_state(1), Tensor(np.zeros((1, 3, 12, 12))))


def test_default_encoder_output_width():
    cfg = WorldConfig()
    model = WorldModel(cfg, np.random.default_rng(0), dtype=np.float32)
    assert model.encoder.flat == 32 * 7 * 7
    x = model.encode(Tensor(np.zeros((1, 4, 84, 84), dtype=np.float32)))
    assert x.shape == (1, 128)
    assert model.state_size == 128


def test_pool_widths_must_match():
    with pytest.raises(ValueError):
        WorldConfig(
            encoder=EncoderConfig(embedding=128),
            current=BrimConfig([RimConfig(n_modules=4, n_active=2, module_size=32, input_dim=128)]),
            expected=BrimConfig([RimConfig(n_modules=4, n_active=2, module_size=16, input_dim=128)]),
        )


def _two_step_loss(model, obs):
    state = model.initial_state(obs.shape[1])
    s0, state = model.world_step(state, Tensor(obs[0]))
    s1, _ = model.world_step(state, Tensor(obs[1]))
    return s0, s1, world_loss(s1.h_p, s0.h_f)


def test_world_loss_gradients_skip_current_pool_lstm():
    model = WorldModel(tiny_config(), np.random.default_rng(5))
    obs = np.random.default_rng(6).random((2, 2, 2, 12, 12))
    for p in model.parameters():
        p.grad = None
    with Tape() as tape:
        _, _, loss = _two_step_loss(model, obs)
    tape.backward(loss)
    assert all(p.grad is None or not p.grad.any() for p in model.current.parameters())
    assert np.abs(model.encoder.convs[0].kernels.grad).sum() > 0
    assert np.abs(model.expected.layers[0].lstm.weight.grad).sum() > 0


def _expectation_loss(model, obs, targets):
    """World loss against fixed targets, so finite differences see the same function the tape does."""
    state = model.initial_state(obs.shape[1])
    terms = []
    for t in range(len(obs) - 1):
        step, state = model.world_step(state, Tensor(obs[t]))
        terms.append(world_loss(Tensor(targets[t + 1]), step.h_f))
    return ad.tsum(ad.stack(terms)) * (1.0 / len(terms))


@pytest.mark.parametrize("seed", range(3))
def test_world_loss_gradcheck(seed):
    model = WorldModel(tiny_config(layers=2), np.random.default_rng(seed))
    obs = np.random.default_rng(100 + seed).random((3, 2, 2, 12, 12))
    state, targets = model.initial_state(2), []
    with ad.no_grad():
        for frame in obs:
            step, state = model.world_step(state, Tensor(frame))
            targets.append(step.h_p.data.copy())
    params = [
        model.encoder.convs[0].kernels,
        model.encoder.fc.weight,
        model.expected.layers[0].lstm.weight,
        model.expected.layers[1].query.weight,
    ]
    assert gradcheck(lambda: _expectation_loss(model, obs, targets), params) <= 1e-4
