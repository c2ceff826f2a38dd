import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from yoeo.dataset import (
    TransitionDataset,
    decode_dataset,
    encode_dataset,
    load_dataset,
    sample_nstep,
    sample_sarsa,
    save_dataset,
)
from yoeo.errors import LoadError, UsageError


def chain_dataset(lengths, reward=1.0, terminal_last=True, state_dim=2, seed=0):
    """Contiguous episodes of random states with a constant reward."""
    rng = np.random.default_rng(seed)
    states, nexts, dones, starts = [], [], [], []
    for L in lengths:
        starts.append(len(states))
        traj = rng.normal(size=(L + 1, state_dim))
        states.extend(traj[:-1])
        nexts.extend(traj[1:])
        dones.extend([False] * (L - 1) + [terminal_last])
    n = len(states)
    return TransitionDataset(np.array(states), rng.uniform(-1, 1, size=(n, 1)), np.full(n, reward),
                             np.array(nexts), np.array(dones), np.array(starts), {"env": "test"})


@given(lengths=st.lists(st.integers(1, 6), min_size=1, max_size=5), seed=st.integers(0, 99))
def test_file_roundtrip(tmp_path_factory, lengths, seed):
    ds = chain_dataset(lengths, seed=seed)
    path = tmp_path_factory.mktemp("d") / "data.yoed"
    save_dataset(ds, path)
    back = load_dataset(path)
    for name in ("states", "actions", "rewards", "next_states", "dones", "episode_starts"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))
    assert back.metadata == ds.metadata
    assert encode_dataset(back) == encode_dataset(ds)


def test_short_rewards_array_is_named():
    ds = chain_dataset([3, 2])
    with pytest.raises(LoadError, match="rewards"):
        TransitionDataset(ds.states, ds.actions, ds.rewards[:-1], ds.next_states, ds.dones, ds.episode_starts)


def test_truncated_file_and_bad_header():
    blob = encode_dataset(chain_dataset([3]))
    with pytest.raises(LoadError, match="length mismatch"):
        decode_dataset(blob[:-10])
    with pytest.raises(LoadError, match="malformed header"):
        decode_dataset(b"XXXX" + blob[4:])


def test_non_contiguous_episode_names_record():
    ds = chain_dataset([4])
    nxt = ds.next_states.copy()
    nxt[1] += 1.0
    with pytest.raises(LoadError, match="record 1"):
        TransitionDataset(ds.states, ds.actions, ds.rewards, nxt, ds.dones, ds.episode_starts)


def test_zero_rewards_give_zero_sums():
    ds = chain_dataset([20, 15], reward=0.0)
    batch = sample_nstep(ds, 64, 10, 0.99, 0)
    assert not batch.returns.any()


def test_constant_reward_geometric_sum():
    ds = chain_dataset([40], reward=1.0, terminal_last=False)
    batch = sample_nstep(ds, 200, 10, 0.99, 1)
    full = batch.steps == 10
    assert full.any()
    np.testing.assert_allclose(batch.returns[full], sum(0.99**i for i in range(10)), rtol=1e-12)
    assert batch.returns[full][0] == pytest.approx(9.5618, abs=1e-4)


def test_one_step_equals_reward_and_next_state():
    ds = chain_dataset([5, 3])
    ds.rewards[:] = np.arange(len(ds))  # distinct rewards
    batch = sample_nstep(ds, 50, 1, 0.99, 2)
    np.testing.assert_array_equal(batch.returns, ds.rewards[batch.indices])
    np.testing.assert_array_equal(batch.bootstrap_states, ds.next_states[batch.indices])


@given(lengths=st.lists(st.integers(1, 8), min_size=2, max_size=6), n=st.integers(1, 12), seed=st.integers(0, 999))
def test_windows_never_cross_episodes(lengths, n, seed):
    ds = chain_dataset(lengths, terminal_last=bool(seed % 2), seed=seed)
    batch = sample_nstep(ds, 40, n, 0.9, seed)
    ends = ds.episode_end[batch.indices]
    assert np.all(batch.indices + batch.steps <= ends)
    np.testing.assert_array_equal(batch.bootstrap_states, ds.next_states[batch.indices + batch.steps - 1])
    # terminal only when the window reached a true termination
    np.testing.assert_array_equal(batch.terminal, ds.dones[batch.indices + batch.steps - 1])


def test_two_step_episode_has_one_sarsa_row():
    ds = chain_dataset([2], terminal_last=False)
    batch = sample_sarsa(ds, 25, 0)
    assert set(batch.indices.tolist()) == {0}
    np.testing.assert_array_equal(batch.next_actions, np.repeat(ds.actions[1:2], 25, axis=0))


def test_terminal_sarsa_rows_have_zero_next_action():
    ds = chain_dataset([1])
    batch = sample_sarsa(ds, 5, 0)
    assert batch.terminal.all() and not batch.next_actions.any()


def test_empty_dataset_is_rejected():
    with pytest.raises(UsageError):
        sample_nstep(None, 4, 1, 0.9, 0)
