"""Offline transition datasets: file format, validation and batch sampling.

File layout (little-endian)::

    magic          4 bytes  b"YOED"
    version        u32      1
    dS, dA, N      3 * u64
    states         N*dS f64, column-major (all of column 0, then column 1, ...)
    actions        N*dA f64, column-major
    rewards        N f64
    next_states    N*dS f64, column-major
    done           N u8 (1 = true termination, 0 otherwise)
    episode_starts u64 count, then count * u64
    metadata       u64 byte length, then UTF-8 JSON object

An episode that ends with done = 0 was cut by the horizon (timeout): its last
next_state may still be bootstrapped from.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .checkpoint import atomic_write
from .errors import LoadError, UsageError
from .nn import as_generator

MAGIC = b"YOED"
VERSION = 1


@dataclass
class NStepBatch:
    indices: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    returns: np.ndarray
    bootstrap_states: np.ndarray
    steps: np.ndarray
    terminal: np.ndarray


@dataclass
class SarsaBatch:
    indices: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    next_actions: np.ndarray
    terminal: np.ndarray


@dataclass
class TransitionDataset:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    episode_starts: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.ascontiguousarray(self.states, dtype=np.float64)
        self.actions = np.ascontiguousarray(self.actions, dtype=np.float64)
        self.rewards = np.ascontiguousarray(self.rewards, dtype=np.float64)
        self.next_states = np.ascontiguousarray(self.next_states, dtype=np.float64)
        self.dones = np.ascontiguousarray(self.dones, dtype=bool)
        self.episode_starts = np.ascontiguousarray(self.episode_starts, dtype=np.int64)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
            self.next_states = self.next_states.reshape(-1, 1)
        if self.actions.ndim == 1:
            self.actions = self.actions[:, None]
        self.validate()
        self._episode_end = None
        self._sarsa_rows = None

    def __len__(self):
        return self.rewards.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    @property
    def num_episodes(self) -> int:
        return len(self.episode_starts)

    def validate(self):
        n = self.rewards.shape[0]
        if n < 1:
            raise LoadError("dataset is empty")
        for name in ("states", "actions", "next_states", "dones"):
            if getattr(self, name).shape[0] != n:
                raise LoadError(f"{name} has {getattr(self, name).shape[0]} rows, rewards has {n}")
        if self.next_states.shape[1] != self.states.shape[1]:
            raise LoadError("next_states width differs from states width")
        starts = self.episode_starts
        if starts.size == 0 or starts[0] != 0:
            raise LoadError("episode_starts must begin with 0")
        if np.any(np.diff(starts) <= 0) or starts[-1] >= n:
            raise LoadError("episode_starts must be strictly increasing and inside the dataset")
        ends = np.append(starts[1:], n)
        for s, e in zip(starts, ends):
            if self.dones[s : e - 1].any():
                t = s + int(np.flatnonzero(self.dones[s : e - 1])[0])
                raise LoadError(f"record {t}: terminal transition in the middle of an episode")
            mismatch = np.any(self.next_states[s : e - 1] != self.states[s + 1 : e], axis=1)
            if mismatch.any():
                t = s + int(np.flatnonzero(mismatch)[0])
                raise LoadError(f"record {t}: next_state does not match the following state (non-contiguous episode)")
        for name in ("states", "actions", "rewards", "next_states"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise LoadError(f"{name} contains non-finite values")

    @property
    def episode_end(self) -> np.ndarray:
        """Exclusive end index of the episode containing each transition."""
        if self._episode_end is None:
            n = len(self)
            ends = np.append(self.episode_starts[1:], n)
            lengths = ends - self.episode_starts
            self._episode_end = np.repeat(ends, lengths).astype(np.int64)
        return self._episode_end

    def episode_lengths(self) -> np.ndarray:
        return np.diff(np.append(self.episode_starts, len(self)))

    def episode_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_episodes), self.episode_lengths())

    @property
    def sarsa_rows(self) -> np.ndarray:
        """Rows that form a usable SARSA tuple.

        Every row except the last one of an episode cut by a timeout (no
        successor action is recorded and bootstrapping would be needed).
        """
        if self._sarsa_rows is None:
            last = self.episode_end - 1
            is_last = np.arange(len(self)) == last
            self._sarsa_rows = np.flatnonzero(~is_last | self.dones)
        return self._sarsa_rows

    def discounted_returns_to_go(self, gamma) -> np.ndarray:
        """Per-transition discounted return to the end of its episode."""
        out = np.zeros(len(self))
        acc = 0.0
        ends = set(int(e) for e in np.append(self.episode_starts[1:], len(self)))
        for t in range(len(self) - 1, -1, -1):
            if t + 1 in ends:
                acc = 0.0
            acc = self.rewards[t] + gamma * acc
            out[t] = acc
        return out


def _col_major(arr):
    return np.asfortranarray(arr, dtype="<f8").tobytes(order="F")


def encode_dataset(ds: TransitionDataset) -> bytes:
    n, ds_, da = len(ds), ds.state_dim, ds.action_dim
    meta = json.dumps(ds.metadata, sort_keys=True).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<I3Q", VERSION, ds_, da, n),
        _col_major(ds.states),
        _col_major(ds.actions),
        np.ascontiguousarray(ds.rewards, dtype="<f8").tobytes(),
        _col_major(ds.next_states),
        ds.dones.astype(np.uint8).tobytes(),
        struct.pack("<Q", len(ds.episode_starts)),
        np.ascontiguousarray(ds.episode_starts, dtype="<u8").tobytes(),
        struct.pack("<Q", len(meta)),
        meta,
    ]
    return b"".join(parts)


def decode_dataset(blob: bytes) -> TransitionDataset:
    if blob[:4] != MAGIC:
        raise LoadError("malformed header: bad magic, expected b'YOED'")
    if len(blob) < 32:
        raise LoadError("malformed header: file too short")
    version, ds_, da, n = struct.unpack_from("<I3Q", blob, 4)
    if version != VERSION:
        raise LoadError(f"malformed header: unsupported version {version}")
    off = 32

    def take(name, count, dtype, itemsize):
        nonlocal off
        need = count * itemsize
        if off + need > len(blob):
            raise LoadError(f"length mismatch: {name} needs {count} values but the file ends early")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).copy()
        off += need
        return arr

    states = take("states", n * ds_, "<f8", 8).reshape((n, ds_), order="F")
    actions = take("actions", n * da, "<f8", 8).reshape((n, da), order="F")
    rewards = take("rewards", n, "<f8", 8)
    next_states = take("next_states", n * ds_, "<f8", 8).reshape((n, ds_), order="F")
    done = take("done", n, "u1", 1)
    if np.any(done > 1):
        raise LoadError("done flags must be 0 or 1")
    (count,) = take("episode_starts count", 1, "<u8", 8)
    starts = take("episode_starts", int(count), "<u8", 8).astype(np.int64)
    (mlen,) = take("metadata length", 1, "<u8", 8)
    raw = take("metadata", int(mlen), "u1", 1).tobytes()
    if off != len(blob):
        raise LoadError(f"length mismatch: {len(blob) - off} trailing bytes after metadata")
    try:
        metadata = json.loads(raw.decode("utf-8")) if raw else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LoadError(f"metadata is not valid UTF-8 JSON: {exc}") from None
    return TransitionDataset(states, actions, rewards, next_states, done.astype(bool), starts, metadata)


def save_dataset(ds: TransitionDataset, path):
    atomic_write(path, encode_dataset(ds))


def load_dataset(path) -> TransitionDataset:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from None
    return decode_dataset(blob)


def sample_nstep(dataset: TransitionDataset, batch_size: int, n: int, gamma: float, rng) -> NStepBatch:
    """Uniformly sample n-step tuples ``(s_t, a_t, sum_i gamma^i r_{t+i}, s_{t+k})``.

    Windows are truncated at episode ends. ``terminal`` marks windows that hit
    a true termination (bootstrap must be zeroed); a timeout truncation keeps
    ``terminal`` false and bootstraps from the last recorded next state.
    """
    if dataset is None or len(dataset) == 0:
        raise UsageError("cannot sample from an empty dataset")
    if n < 1 or batch_size < 1:
        raise UsageError("n and batch_size must be >= 1")
    gen = as_generator(rng)
    idx = gen.integers(0, len(dataset), size=batch_size)
    sums, k, terminal = kernels.nstep_returns(
        dataset.rewards, dataset.dones, dataset.episode_end, idx, int(n), float(gamma)
    )
    boot = dataset.next_states[idx + k - 1]
    return NStepBatch(
        indices=idx,
        states=dataset.states[idx],
        actions=dataset.actions[idx],
        returns=sums,
        bootstrap_states=boot,
        steps=k,
        terminal=terminal,
    )


def sample_sarsa(dataset: TransitionDataset, batch_size: int, rng) -> SarsaBatch:
    """Uniformly sample ``(s, a, r, s', a', terminal)`` over usable rows.

    ``a'`` is the dataset action at t + 1; terminal rows carry zeros there.
    """
    if dataset is None or len(dataset) == 0:
        raise UsageError("cannot sample from an empty dataset")
    if batch_size < 1:
        raise UsageError("batch_size must be >= 1")
    rows = dataset.sarsa_rows
    if rows.size == 0:
        raise UsageError("dataset has no usable SARSA rows")
    gen = as_generator(rng)
    idx = rows[gen.integers(0, rows.size, size=batch_size)]
    terminal = dataset.dones[idx]
    succ = np.where(terminal, idx, np.minimum(idx + 1, len(dataset) - 1))
    next_actions = np.where(terminal[:, None], 0.0, dataset.actions[succ])
    return SarsaBatch(
        indices=idx,
        states=dataset.states[idx],
        actions=dataset.actions[idx],
        rewards=dataset.rewards[idx],
        next_states=dataset.next_states[idx],
        next_actions=next_actions,
        terminal=terminal,
    )
