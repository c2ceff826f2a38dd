"""Policies extracted from a trained critic.

``ActorPolicy`` is the deterministic squashed actor that both supplies the
active penalty samples and serves as a final policy. ``KnnPolicy`` picks, for
a query state, the best dataset action among the K nearest dataset states.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .checkpoint import load_mlp_tensors, mlp_tensors
from .errors import ConfigurationError, TrainingError, UsageError
from .nn import AdamW, Mlp, as_generator


class ActorPolicy:
    """Swish MLP whose output is tanh-squashed into ``[low, high]``."""

    def __init__(self, state_dim, action_low, action_high, hidden=256, sigma=0.3, noise_clip=0.5,
                 rng=None, zero_output=False):
        self.low = np.atleast_1d(np.asarray(action_low, dtype=np.float64))
        self.high = np.atleast_1d(np.asarray(action_high, dtype=np.float64))
        if self.low.shape != self.high.shape or np.any(self.high <= self.low):
            raise ConfigurationError("action bounds must satisfy low < high elementwise")
        if sigma < 0 or noise_clip < 0:
            raise ConfigurationError("noise sigma and clip must be non-negative")
        gen = as_generator(rng if rng is not None else 0)
        self.net = Mlp.build([state_dim, hidden, hidden, self.low.size], "swish", "identity", gen,
                             zero_last=zero_output)
        self.sigma = float(sigma)
        self.noise_clip = float(noise_clip)

    @property
    def state_dim(self):
        return self.net.input_dim

    @property
    def action_dim(self):
        return self.low.size

    @property
    def center(self):
        return 0.5 * (self.high + self.low)

    @property
    def half_range(self):
        return 0.5 * (self.high - self.low)

    def forward(self, states):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if states.shape[1] != self.state_dim:
            raise ConfigurationError(f"state dim {states.shape[1]} != actor state dim {self.state_dim}")
        z, cache = self.net.forward(states)
        squashed = np.tanh(z)
        action = self.center + self.half_range * squashed
        # float rounding near saturation can step just past a bound
        return np.clip(action, self.low, self.high), (cache, squashed)

    def __call__(self, states, rng=None):
        return self.forward(states)[0]

    def tensors(self, prefix="actor."):
        return mlp_tensors(self.net, prefix)

    def load_tensors(self, tensors, prefix="actor."):
        load_mlp_tensors(self.net, tensors, prefix)


def actor_forward(actor: ActorPolicy, states):
    return actor(states)


def sample_noisy_action(actor: ActorPolicy, states, sigma=None, noise_clip=None, rng=None):
    """``clip_bounds(actor(s) + clip(eps, -c, c))`` with ``eps ~ N(0, sigma^2)``."""
    sigma = actor.sigma if sigma is None else float(sigma)
    noise_clip = actor.noise_clip if noise_clip is None else float(noise_clip)
    if sigma < 0:
        raise ConfigurationError("sigma must be non-negative")
    base = actor(states)
    if sigma == 0.0:
        return base
    eps = np.clip(as_generator(rng).normal(0.0, sigma, size=base.shape), -noise_clip, noise_clip)
    return np.clip(base + eps, actor.low, actor.high)


def make_actor_optimizer(actor, lr=3e-4):
    return AdamW(actor.net.params, lr=lr, weight_decay=0.0, maximize=True)


def actor_update_step(actor: ActorPolicy, critic, states, optimizer) -> float:
    """One ascent step on ``mean_s Q(s, actor(s))``.

    ``critic`` needs ``min_value_and_action_grad(states, actions)`` returning the
    value and its action gradient (the ensemble min for a critic ensemble).
    """
    if critic is None:
        raise UsageError("actor update needs a critic")
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions, (cache, squashed) = actor.forward(states)
    q, dq_da = critic.min_value_and_action_grad(states, actions)
    objective = float(np.mean(q))
    if not np.isfinite(objective):
        raise TrainingError(f"non-finite actor objective at step {optimizer.step_count + 1}")
    dz = dq_da * actor.half_range * (1.0 - squashed**2) / len(states)
    grads, _ = actor.net.backward(cache, dz)
    optimizer.step(grads, name="actor")
    return objective


class KnnActionIndex:
    """Exact Euclidean neighbor index over raw dataset states."""

    def __init__(self, states, actions, k=100):
        self.states = np.ascontiguousarray(np.atleast_2d(np.asarray(states, dtype=np.float64)))
        if self.states.shape[0] == 0 or np.size(actions) == 0:
            raise UsageError("k-NN index needs at least one dataset state")
        self.actions = np.asarray(actions, dtype=np.float64).reshape(len(self.states), -1)
        if k < 1:
            raise ConfigurationError("K must be at least 1")
        self.k = int(k)

    @classmethod
    def from_dataset(cls, dataset, k=100):
        return cls(dataset.states, dataset.actions, k)

    def __len__(self):
        return len(self.states)

    def query(self, state):
        """min(K, N) dataset indices ordered by (distance, index)."""
        state = np.asarray(state, dtype=np.float64).reshape(-1)
        if state.size != self.states.shape[1]:
            raise ConfigurationError("query dim does not match the index")
        return kernels.knn_indices(self.states, state, self.k)


def knn_policy(index: KnnActionIndex, critic, state):
    """Best action (by ensemble-min value) among the K nearest states' actions."""
    return knn_policy_batch(index, critic, np.atleast_2d(state))[0]


def knn_policy_batch(index: KnnActionIndex, critic, states):
    if index is None or len(index) == 0:
        raise UsageError("k-NN policy needs a built index")
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    neigh = [index.query(s) for s in states]
    sizes = [len(n) for n in neigh]
    flat = np.concatenate(neigh)
    cand = index.actions[flat]
    q = _min_values(critic, np.repeat(states, sizes, axis=0), cand)
    out = np.empty((len(states), index.actions.shape[1]))
    start = 0
    for i, size in enumerate(sizes):
        # equal values resolve to the lowest dataset index
        block = q[start : start + size]
        best = np.flatnonzero(block == block.max())
        out[i] = cand[start + best[np.argmin(flat[start + best])]]
        start += size
    return out


def _min_values(critic, states, actions):
    if hasattr(critic, "values"):
        return critic.values(states, actions).min(axis=0)
    return critic(states, actions)


class KnnPolicy:
    """Callable wrapper so the k-NN policy can drive env rollouts."""

    def __init__(self, index, critic):
        self.index = index
        self.critic = critic

    def __call__(self, states, rng=None):
        return knn_policy_batch(self.index, self.critic, states)
