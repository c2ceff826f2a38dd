import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from yoeo.critic import (
    PessimisticCritic,
    ensemble_min,
    make_critic_optimizers,
    member_loss_and_grads,
    pessimistic_regularizer,
    sarsa_td_target,
    supervised_target,
    train_critic_step,
)
from yoeo.dataset import NStepBatch, SarsaBatch, TransitionDataset, sample_sarsa
from yoeo.errors import ConfigurationError, UsageError


class ConstantQuantiles:
    def __init__(self, value):
        self.value = value

    def quantile(self, states, tau, agg="mean"):
        return np.full(len(np.atleast_2d(states)), float(self.value))


def constant_critic(outputs, **kw):
    """Critic whose member m returns ``outputs[m]`` everywhere (targets too)."""
    critic = PessimisticCritic(1, 1, [-1.0], [1.0], n_members=len(outputs), hidden=8, rng=0, **kw)
    for net, tgt, c in zip(critic.members, critic.targets, outputs):
        for n in (net, tgt):
            n.weights[-1][:] = 0.0
            n.biases[-1][:] = c
    return critic


def nstep_batch(returns, steps, terminal):
    B = len(returns)
    return NStepBatch(np.arange(B), np.zeros((B, 1)), np.zeros((B, 1)), np.asarray(returns, float),
                      np.zeros((B, 1)), np.asarray(steps), np.asarray(terminal, bool))


def sarsa_batch(rewards, terminal):
    B = len(rewards)
    z = np.zeros((B, 1))
    return SarsaBatch(np.arange(B), z, z, np.asarray(rewards, float), z, z, np.asarray(terminal, bool))


@given(c=st.floats(-50, 50))
def test_regularizer_with_equal_inputs(c):
    q = np.full((1, 10), c)
    R, _, _ = pessimistic_regularizer(q, q, np.array([c]), np.array([c]))
    assert R[0] == pytest.approx(2 * (c + np.log(11)), rel=1e-12, abs=1e-12)


def test_regularizer_saturates_below_bounds():
    y1, y2 = np.array([5.0]), np.array([2.0])
    q = np.full((1, 10), -30.0)
    R, g1, g2 = pessimistic_regularizer(q, q, y1, y2)
    assert R[0] == pytest.approx(7.0, abs=1e-6)
    assert np.abs(g1).max() < 1e-8 and np.abs(g2).max() < 1e-8


@given(seed=st.integers(0, 9999), temp=st.sampled_from([0.1, 1.0, 15.0]))
def test_regularizer_dominates_its_inputs(seed, temp):
    rng = np.random.default_rng(seed)
    qa, qm = rng.normal(size=(4, 10)) * 100, rng.normal(size=(4, 10)) * 100
    y1, y2 = rng.normal(size=4) * 100, rng.normal(size=4) * 100
    R, g1, g2 = pessimistic_regularizer(qa, qm, y1, y2, temp)
    lower = np.maximum(qa.max(1), y1) + np.maximum(qm.max(1), y2)
    assert np.all(np.isfinite(R)) and np.all(R >= lower - 1e-9)
    assert np.all(g1.sum(1) <= 1 + 1e-12) and np.all(g1 >= 0)


def test_supervised_target_hand_values():
    batch = nstep_batch([sum(0.99**i for i in range(10)), 0.0], [10, 3], [False, True])
    y = supervised_target(batch, ConstantQuantiles(50.0), 0.99)
    # 9.5618 + 0.99**10 * 50
    assert y[0] == pytest.approx(54.781, abs=1e-3)
    assert y[1] == 0.0
    with pytest.raises(UsageError):
        supervised_target(batch, None, 0.99)


def test_sarsa_target_hand_values():
    critic = constant_critic([10.0, 12.0])
    y = sarsa_td_target(sarsa_batch([1.0, 1.0], [False, True]), critic, 0.99)
    assert y[0] == pytest.approx(10.9) and y[1] == 1.0
    assert sarsa_td_target(sarsa_batch([1.0], [False]), critic, 0.99, member=1)[0] == pytest.approx(12.88)


def test_ensemble_min():
    s, a = np.zeros((2, 1)), np.zeros((2, 1))
    np.testing.assert_allclose(ensemble_min(constant_critic([1.0, 2.0, 3.0]), s, a), [1.0, 1.0])
    single = PessimisticCritic(1, 1, [-1.0], [1.0], n_members=1, hidden=8, rng=3)
    np.testing.assert_array_equal(ensemble_min(single, s, a), single.values(s, a)[0])


def test_member_loss_by_hand():
    c, y, lam = 1.5, 0.5, 0.1
    critic = constant_critic([c], lam=lam)
    acts = np.zeros((1, 10, 1))
    yu, yl = np.array([2.0]), np.array([-1.0])
    loss, _, _ = member_loss_and_grads(critic, 0, np.zeros((1, 1)), np.zeros((1, 1)), np.array([y]),
                                       acts, acts, yu, yl)
    R = np.log(np.exp(2.0) + 10 * np.exp(c)) + np.log(np.exp(-1.0) + 10 * np.exp(c))
    assert loss == pytest.approx(0.5 * (c - y) ** 2 + lam * R, rel=1e-12)


def test_no_penalty_perfect_fit_leaves_parameters_unchanged():
    critic = constant_critic([2.0], lam=0.0)
    before = [p.copy() for p in critic.members[0].params]
    opts = make_critic_optimizers(critic, weight_decay=0.0)
    losses = train_critic_step(critic, ConstantQuantiles(0.0), None, nstep_batch([2.0] * 4, [1] * 4, [True] * 4),
                               None, 0.99, [np.random.default_rng(0)], opts)
    assert losses == [0.0]
    for a, b in zip(before, critic.members[0].params):
        np.testing.assert_array_equal(a, b)


def test_variant_validation():
    with pytest.raises(ConfigurationError):
        PessimisticCritic(1, 1, [-1.0], [1.0], variant="cql")
    assert PessimisticCritic(1, 1, [-1.0], [1.0], hidden=4, variant="no_reg", lam=3.0).lam == 0.0


def test_sarsa_fit_on_three_state_chain():
    # deterministic chain 0 -> 1 -> 2 -> end, reward 1 per step, gamma 0.9
    eye = np.eye(3)
    reps = 20
    states = np.tile(eye, (reps, 1))
    nexts = np.tile(np.vstack([eye[1:], eye[2:]]), (reps, 1))
    dones = np.tile([False, False, True], reps)
    ds = TransitionDataset(states, np.zeros((3 * reps, 1)), np.ones(3 * reps), nexts, dones, np.arange(0, 3 * reps, 3))
    critic = PessimisticCritic(3, 1, [-1.0], [1.0], n_members=1, hidden=32, variant="no_reg", target_decay=0.9,
                               rng=1)
    opts = make_critic_optimizers(critic, lr=3e-3)
    rng = np.random.default_rng(0)
    for _ in range(1500):
        train_critic_step(critic, None, None, None, sample_sarsa(ds, 32, rng), 0.9, [rng], opts)
    q = critic.values(eye, np.zeros((3, 1)))[0]
    np.testing.assert_allclose(q, [2.71, 1.9, 1.0], atol=0.05)
