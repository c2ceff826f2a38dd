"""Small batched MLP engine with hand-written reverse mode, AdamW and EMA.

Only dense layers with relu / swish / identity activations are supported;
that covers every network in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, TrainingError, UsageError

ACTIVATIONS = ("relu", "swish", "identity")


def sigmoid(x):
    # tanh form never overflows and avoids masked indexing
    return 0.5 + 0.5 * np.tanh(0.5 * np.asarray(x, dtype=np.float64))


def swish(x):
    return x * sigmoid(x)


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "swish":
        return z * sigmoid(z)
    return z


def _activation_grad(kind, z, upstream, sig=None):
    if kind == "relu":
        # subgradient at 0 is 0
        return upstream * (z > 0.0)
    if kind == "swish":
        s = sigmoid(z) if sig is None else sig
        return upstream * (s * (1.0 + z * (1.0 - s)))
    return upstream


class RngStream:
    """Reproducible random stream identified by (seed, stream id).

    Thin wrapper over ``numpy.random.Generator`` seeded through a
    ``SeedSequence`` whose spawn key is the stream id, so distinct ids give
    statistically independent streams.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "RngStream":
        return RngStream(self.seed, self.stream * 1_000_003 + 1 + int(stream))

    def __getattr__(self, name):
        return getattr(self.generator, name)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


class Mlp:
    """Fully-connected network ``x -> act(W x + b) -> ...``.

    Weights are stored as (out, in) matrices. Inputs are batched along the
    first axis; a 1-D input is treated as a batch of one and the output is
    squeezed back.
    """

    def __init__(self, weights, biases, activations):
        if not (len(weights) == len(biases) == len(activations)) or not weights:
            raise ConfigurationError("weights, biases and activations must have equal nonzero length")
        for i, (w, b, a) in enumerate(zip(weights, biases, activations)):
            if a not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {a!r} at layer {i}")
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigurationError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[1] != weights[i - 1].shape[0]:
                raise ConfigurationError(
                    f"layer {i} expects {w.shape[1]} inputs but layer {i - 1} emits {weights[i - 1].shape[0]}"
                )
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.activations = list(activations)

    @classmethod
    def build(cls, sizes, hidden="relu", output="identity", rng=None, zero_last=False):
        """Uniform fan-in initialisation, +-1/sqrt(fan_in) for weights and biases."""
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ConfigurationError(f"invalid layer sizes {sizes}")
        gen = as_generator(rng if rng is not None else 0)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(gen.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(gen.uniform(-bound, bound, size=fan_out))
        if zero_last:
            weights[-1][:] = 0.0
            biases[-1][:] = 0.0
        acts = [hidden] * (len(sizes) - 2) + [output]
        return cls(weights, biases, acts)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def param_names(self, prefix=""):
        names = []
        for i in range(len(self.weights)):
            names.extend((f"{prefix}layer{i}.weight", f"{prefix}layer{i}.bias"))
        return names

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activations)

    def forward(self, x):
        """Return ``(y, cache)``; the cache feeds :meth:`backward`."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[-1] != self.input_dim:
            raise ConfigurationError(f"expected input dim {self.input_dim}, got {x.shape[-1]}")
        inputs, pre, sigs = [], [], []
        h = x
        for w, b, act in zip(self.weights, self.biases, self.activations):
            inputs.append(h)
            z = h @ w.T + b
            pre.append(z)
            if act == "swish":
                # keep the sigmoid for the backward pass
                s = sigmoid(z)
                sigs.append(s)
                h = z * s
            else:
                sigs.append(None)
                h = _activate(act, z)
        cache = {"inputs": inputs, "pre": pre, "sig": sigs, "squeeze": squeeze}
        return (h[0] if squeeze else h), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, upstream):
        """Gradients of ``sum(upstream * forward(x))``.

        Returns ``(param_grads, input_grad)`` with ``param_grads`` aligned to
        :attr:`params`.
        """
        if cache is None or "inputs" not in cache:
            raise UsageError("backward needs the cache from a prior forward call")
        g = np.asarray(upstream, dtype=np.float64)
        if cache["squeeze"]:
            g = g[None, :]
        if g.shape[-1] != self.output_dim:
            raise ConfigurationError(f"upstream has dim {g.shape[-1]}, network outputs {self.output_dim}")
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            g = _activation_grad(self.activations[i], cache["pre"][i], g, cache["sig"][i])
            grads[2 * i] = g.T @ cache["inputs"][i]
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i]
        return grads, (g[0] if cache["squeeze"] else g)


def mlp_forward(net: Mlp, x):
    return net(x)


def mlp_grad(net: Mlp, upstream, cache):
    return net.backward(cache, upstream)


@dataclass
class AdamW:
    """AdamW with decoupled weight decay.

    ``step`` updates the parameter arrays in place:
    ``p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)``.
    """

    params: list
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    maximize: bool = False
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0 or self.eps <= 0:
            raise ConfigurationError("lr, weight_decay must be >= 0 and eps > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError("betas must lie in [0, 1)")
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params]
            self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads, name="parameters"):
        if len(grads) != len(self.params):
            raise ConfigurationError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g.shape != p.shape:
                raise ConfigurationError(f"gradient {i} has shape {g.shape}, parameter {p.shape}")
            if not np.all(np.isfinite(g)):
                bad = int(np.size(g) - np.isfinite(g).sum())
                raise TrainingError(
                    f"non-finite gradient for {name} tensor {i} at step {self.step_count + 1} "
                    f"({bad} bad entries)"
                )
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if self.maximize:
                g = -g
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p -= self.lr * self.weight_decay * p
            p -= self.lr * update

    def state_arrays(self, prefix):
        out = {f"{prefix}step": np.array([float(self.step_count)])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}m{i}"] = m
            out[f"{prefix}v{i}"] = v
        return out

    def load_state_arrays(self, arrays, prefix):
        self.step_count = int(arrays[f"{prefix}step"][0])
        for i in range(len(self.params)):
            self.m[i][...] = arrays[f"{prefix}m{i}"]
            self.v[i][...] = arrays[f"{prefix}v{i}"]


def ema_update(target, online, decay):
    """In-place ``target <- decay * target + (1 - decay) * online``."""
    if not 0.0 <= decay <= 1.0:
        raise ConfigurationError(f"EMA decay must lie in [0, 1], got {decay}")
    if len(target) != len(online):
        raise ConfigurationError("target and online parameter lists differ in length")
    for t, o in zip(target, online):
        if t.shape != o.shape:
            raise ConfigurationError(f"EMA shape mismatch {t.shape} vs {o.shape}")
        t *= decay
        t += (1.0 - decay) * o
    return target
