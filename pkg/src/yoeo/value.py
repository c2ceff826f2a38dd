"""State-value distribution of the behavior policy (implicit quantile network).

``Y(s; tau) = F(E(s) * T(cos(pi * i * tau)))`` with a 64-term cosine basis,
trained by n-step distributional TD with the quantile-Huber loss and an
exponential-moving-average target network.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .checkpoint import load_mlp_tensors, mlp_tensors
from .dataset import sample_nstep
from .errors import ConfigurationError, TrainingError, UsageError
from .nn import AdamW, Mlp, as_generator, ema_update

N_COS = 64


def cosine_basis(taus):
    """``[cos(pi * i * tau)]_{i=0..63}`` along a new trailing axis."""
    return kernels.cosine_basis(np.asarray(taus, dtype=np.float64), N_COS)


def _check_taus(taus):
    taus = np.asarray(taus, dtype=np.float64)
    if np.any(taus <= 0.0) or np.any(taus >= 1.0):
        raise UsageError("quantile levels must lie strictly inside (0, 1)")
    return taus


def quantile_huber_loss(predicted, targets, taus, kappa=1.0):
    """Quantile-Huber loss for one state (1-D inputs) or a batch (2-D inputs).

    Sums over predicted quantiles, averages over target samples (and over the
    batch). Returns ``(loss, d loss / d predicted)``.
    """
    if kappa <= 0:
        raise ConfigurationError("kappa must be positive")
    predicted = np.asarray(predicted, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    taus = _check_taus(taus)
    if predicted.size == 0 or targets.size == 0:
        raise UsageError("quantile-Huber loss needs at least one prediction and one target")
    single = predicted.ndim == 1
    if single:
        predicted, targets, taus = predicted[None], targets[None], taus[None]
    loss, grad = kernels.quantile_huber(predicted, targets, np.broadcast_to(taus, predicted.shape), float(kappa))
    return loss, (grad[0] if single else grad)


class QuantileValueModel:
    """IQN over states with an EMA target copy.

    Parameters are ordered E, T, F (each as in :attr:`Mlp.params`).
    """

    def __init__(self, state_dim, feature_dim=64, hidden=256, rng=None, kappa=1.0,
                 n_quantiles=16, n_target_quantiles=16, ema_decay=0.995, zero_output=False):
        gen = as_generator(rng if rng is not None else 0)
        self.embed = Mlp.build([state_dim, hidden, hidden, feature_dim], "relu", "identity", gen)
        self.tau_embed = Mlp.build([N_COS, feature_dim], "relu", "relu", gen)
        self.head = Mlp.build([feature_dim, hidden, hidden, 1], "relu", "identity", gen, zero_last=zero_output)
        self.target_nets = [self.embed.copy(), self.tau_embed.copy(), self.head.copy()]
        self.kappa = float(kappa)
        self.n_quantiles = int(n_quantiles)
        self.n_target_quantiles = int(n_target_quantiles)
        self.ema_decay = float(ema_decay)
        if self.kappa <= 0 or self.n_quantiles < 1 or self.n_target_quantiles < 1:
            raise ConfigurationError("kappa > 0 and N, N' >= 1 required")

    @property
    def state_dim(self):
        return self.embed.input_dim

    @property
    def nets(self):
        return [self.embed, self.tau_embed, self.head]

    @property
    def params(self):
        return [p for net in self.nets for p in net.params]

    @property
    def target_params(self):
        return [p for net in self.target_nets for p in net.params]

    def forward(self, states, taus, target=False):
        """Values of shape (B, N) plus a cache for :meth:`backward`.

        ``taus`` is (B, N) or (N,) shared across the batch.
        """
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            states = states[None]
        if states.shape[1] != self.state_dim:
            raise ConfigurationError(f"state dim {states.shape[1]} != model state dim {self.state_dim}")
        taus = _check_taus(taus)
        B = states.shape[0]
        taus = np.broadcast_to(taus, (B, taus.shape[-1])) if taus.ndim == 1 else taus
        N = taus.shape[1]
        E, T, Fn = self.target_nets if target else self.nets
        e, ce = E.forward(states)
        t, ct = T.forward(cosine_basis(taus).reshape(B * N, N_COS))
        t = t.reshape(B, N, -1)
        prod = (e[:, None, :] * t).reshape(B * N, -1)
        y, cf = Fn.forward(prod)
        cache = (ce, ct, cf, e, t, B, N)
        return y.reshape(B, N), cache

    def __call__(self, states, taus, target=False):
        return self.forward(states, taus, target)[0]

    def backward(self, cache, upstream):
        ce, ct, cf, e, t, B, N = cache
        g_f, g_prod = self.head.backward(cf, np.asarray(upstream).reshape(B * N, 1))
        g_prod = g_prod.reshape(B, N, -1)
        g_t, _ = self.tau_embed.backward(ct, (g_prod * e[:, None, :]).reshape(B * N, -1))
        g_e, _ = self.embed.backward(ce, (g_prod * t).sum(axis=1))
        return g_e + g_t + g_f

    def update_target(self, decay=None):
        ema_update(self.target_params, self.params, self.ema_decay if decay is None else decay)

    def tensors(self, prefix):
        out = {}
        for tag, net in zip(("E", "T", "F"), self.nets):
            out.update(mlp_tensors(net, f"{prefix}{tag}."))
        for tag, net in zip(("E", "T", "F"), self.target_nets):
            out.update(mlp_tensors(net, f"{prefix}target.{tag}."))
        return out

    def load_tensors(self, tensors, prefix):
        for tag, net in zip(("E", "T", "F"), self.nets):
            load_mlp_tensors(net, tensors, f"{prefix}{tag}.")
        for tag, net in zip(("E", "T", "F"), self.target_nets):
            load_mlp_tensors(net, tensors, f"{prefix}target.{tag}.")


def iqn_forward(model: QuantileValueModel, state, tau) -> float:
    if not 0.0 < tau < 1.0:
        raise UsageError(f"tau must lie in (0, 1), got {tau}")
    return float(model(np.atleast_2d(state), np.array([tau]))[0, 0])


def quantile_query(model, states, tau, target=False):
    """Y(s; tau) for a batch of states at one quantile level."""
    return model(np.atleast_2d(states), np.array([float(tau)]), target=target)[:, 0]


def expected_value(model, states, n_grid=32):
    """E_tau[Y(s; tau)] by the midpoint rule on ``n_grid`` levels."""
    grid = (np.arange(n_grid) + 0.5) / n_grid
    return model(np.atleast_2d(states), grid).mean(axis=1)


def make_value_optimizer(model, lr=1e-4, weight_decay=0.0):
    return AdamW(model.params, lr=lr, weight_decay=weight_decay)


def train_value_step(model, dataset, batch_size, n, gamma, rng, optimizer):
    """One distributional n-step TD update followed by the EMA target update."""
    if dataset.state_dim != model.state_dim:
        raise ConfigurationError(f"dataset state dim {dataset.state_dim} != model state dim {model.state_dim}")
    gen = as_generator(rng)
    batch = sample_nstep(dataset, batch_size, n, gamma, gen)
    taus = gen.uniform(0.0, 1.0, size=(batch_size, model.n_quantiles))
    taus_t = gen.uniform(0.0, 1.0, size=(batch_size, model.n_target_quantiles))
    # uniform draws of exactly 0 are possible in principle
    taus = np.clip(taus, 1e-6, 1 - 1e-6)
    taus_t = np.clip(taus_t, 1e-6, 1 - 1e-6)
    boot = model(batch.bootstrap_states, taus_t, target=True)
    scale = np.where(batch.terminal, 0.0, gamma ** batch.steps.astype(np.float64))
    targets = batch.returns[:, None] + scale[:, None] * boot
    pred, cache = model.forward(batch.states, taus)
    loss, dpred = quantile_huber_loss(pred, targets, taus, model.kappa)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite value loss at step {optimizer.step_count + 1}")
    optimizer.step(model.backward(cache, dpred), name="value model")
    model.update_target()
    return loss


class ValueEnsemble:
    """Independently trained value distributions queried jointly.

    ``agg="mean"`` feeds supervised targets; ``agg="min"`` feeds the
    pessimistic bound.
    """

    def __init__(self, members):
        if not members:
            raise ConfigurationError("value ensemble needs at least one member")
        self.members = list(members)

    def __len__(self):
        return len(self.members)

    @property
    def state_dim(self):
        return self.members[0].state_dim

    def quantile(self, states, tau, agg="mean"):
        vals = np.stack([quantile_query(m, states, tau) for m in self.members])
        if agg == "mean":
            return vals.mean(axis=0)
        if agg == "min":
            return vals.min(axis=0)
        if agg == "none":
            return vals
        raise ConfigurationError(f"unknown aggregation {agg!r}")

    def expected(self, states, n_grid=32, agg="mean"):
        vals = np.stack([expected_value(m, states, n_grid) for m in self.members])
        return vals.mean(axis=0) if agg == "mean" else vals.min(axis=0)

    def tensors(self):
        out = {}
        for i, m in enumerate(self.members):
            out.update(m.tensors(f"value{i}."))
        return out
