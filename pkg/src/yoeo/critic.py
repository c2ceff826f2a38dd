"""Pessimistically regularized action-value ensemble.

Each member fits the supervised target ``r + gamma^k Y(s'; 0.5)`` on dataset
pairs while a log-sum-exp penalty keeps its values on sampled actions below
the upper quantiles of the state-value distribution::

    R(s) = log[exp Y(s; tau1) + sum_{a ~ actor} exp Q(s, a)]
         + log[exp Y(s; tau2) + sum_{b ~ uniform} exp Q(s, b)]

Variants: ``full``; ``no_mu`` drops the uniform-sample term; ``no_reg`` drops
the penalty and fits the SARSA TD target instead; ``sarsa_target`` keeps the
penalty but swaps the supervised target for the SARSA TD target.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .checkpoint import load_mlp_tensors, mlp_tensors
from .errors import ConfigurationError, TrainingError, UsageError
from .nn import AdamW, Mlp, as_generator, ema_update

VARIANTS = ("full", "no_reg", "no_mu", "sarsa_target")


class UniformActionSampler:
    """The static sampling distribution for the passive penalty term."""

    def __init__(self, low, high):
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        if np.any(self.high <= self.low):
            raise ConfigurationError("action bounds must satisfy low < high")

    def sample(self, n_states, n_samples, rng):
        gen = as_generator(rng)
        return gen.uniform(self.low, self.high, size=(n_states, n_samples, self.low.size))


class PessimisticCritic:
    def __init__(self, state_dim, action_dim, action_low, action_high, n_members=5, hidden=256,
                 lam=0.1, tau1=0.9, tau2=0.1, n_samples=10, variant="full", temperature=1.0,
                 target_decay=0.995, rng=None):
        if variant not in VARIANTS:
            raise ConfigurationError(f"unknown critic variant {variant!r}; choose from {VARIANTS}")
        if n_members < 1 or lam < 0 or n_samples < 1 or temperature <= 0:
            raise ConfigurationError("need n_members >= 1, lam >= 0, n_samples >= 1, temperature > 0")
        if not (0.0 < tau1 < 1.0 and 0.0 < tau2 < 1.0):
            raise ConfigurationError("tau1 and tau2 must lie in (0, 1)")
        gen = as_generator(rng if rng is not None else 0)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.members = [
            Mlp.build([state_dim + action_dim, hidden, hidden, 1], "swish", "identity", gen)
            for _ in range(n_members)
        ]
        self.targets = [m.copy() for m in self.members]
        self.mu = UniformActionSampler(action_low, action_high)
        self.lam = 0.0 if variant == "no_reg" else float(lam)
        self.tau1 = float(tau1)
        self.tau2 = float(tau2)
        self.n_samples = int(n_samples)
        self.variant = variant
        self.temperature = float(temperature)
        self.target_decay = float(target_decay)

    def __len__(self):
        return len(self.members)

    @property
    def uses_sarsa(self):
        return self.variant in ("no_reg", "sarsa_target")

    @property
    def uses_mu(self):
        return self.variant in ("full", "sarsa_target")

    def _inputs(self, states, actions):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.asarray(actions, dtype=np.float64).reshape(len(states), -1)
        if states.shape[1] != self.state_dim or actions.shape[1] != self.action_dim:
            raise ConfigurationError("state/action dims do not match the critic")
        return np.concatenate([states, actions], axis=1)

    def values(self, states, actions, target=False):
        """(M, B) member predictions."""
        x = self._inputs(states, actions)
        nets = self.targets if target else self.members
        return np.stack([net(x)[:, 0] for net in nets])

    def min_value_and_action_grad(self, states, actions):
        """Ensemble-min value and its gradient w.r.t. the action.

        The gradient is taken through whichever member attains the minimum.
        """
        x = self._inputs(states, actions)
        outs = [net.forward(x) for net in self.members]
        q = np.stack([o[0][:, 0] for o in outs])
        arg = np.argmin(q, axis=0)
        grad = np.zeros((x.shape[0], self.action_dim))
        for m, (net, (_, cache)) in enumerate(zip(self.members, outs)):
            sel = (arg == m).astype(np.float64)[:, None]
            if sel.any():
                _, gx = net.backward(cache, sel)
                grad += gx[:, self.state_dim:]
        return q[arg, np.arange(x.shape[0])], grad

    def update_targets(self):
        for net, tgt in zip(self.members, self.targets):
            ema_update(tgt.params, net.params, self.target_decay)

    def tensors(self):
        out = {}
        for i, (net, tgt) in enumerate(zip(self.members, self.targets)):
            out.update(mlp_tensors(net, f"critic{i}."))
            out.update(mlp_tensors(tgt, f"critic{i}.target."))
        return out

    def load_tensors(self, tensors):
        for i, (net, tgt) in enumerate(zip(self.members, self.targets)):
            load_mlp_tensors(net, tensors, f"critic{i}.")
            load_mlp_tensors(tgt, tensors, f"critic{i}.target.")


def ensemble_min(critic, states, actions):
    return critic.values(states, actions).min(axis=0)


def supervised_target(batch, value_model, gamma, median=True, n_avg=16):
    """n-step target ``sum_i gamma^i r_i + gamma^k Y(s_{t+k}; 0.5)``.

    ``value_model`` is a :class:`~yoeo.value.ValueEnsemble` (member mean) or
    anything with a ``quantile(states, tau)`` method. With ``median=False``
    the bootstrap is the mean over ``n_avg`` evenly spaced quantile levels.
    """
    if value_model is None:
        raise UsageError("the value distribution must be trained before fitting the critic")
    if median:
        boot = value_model.quantile(batch.bootstrap_states, 0.5)
    else:
        levels = (np.arange(n_avg) + 0.5) / n_avg
        boot = np.mean([value_model.quantile(batch.bootstrap_states, t) for t in levels], axis=0)
    scale = np.where(batch.terminal, 0.0, gamma ** np.asarray(batch.steps, dtype=np.float64))
    return np.asarray(batch.returns) + scale * boot


def sarsa_td_target(batch, critic, gamma, member=None):
    """``r + gamma * Q_target(s', a')`` with zero bootstrap on terminal rows.

    ``member`` selects one target network; ``None`` uses the ensemble min.
    """
    if member is None:
        boot = critic.values(batch.next_states, batch.next_actions, target=True).min(axis=0)
    else:
        x = critic._inputs(batch.next_states, batch.next_actions)
        boot = critic.targets[member](x)[:, 0]
    return np.asarray(batch.rewards) + gamma * np.where(batch.terminal, 0.0, boot)


def _lse_term(bound, q, temperature):
    """``T * log(exp(bound / T) + sum_k exp(q_k / T))`` per row and d/dq."""
    x = np.concatenate([np.asarray(bound)[:, None], q], axis=1) / temperature
    lse, w = kernels.logsumexp_weights(x)
    return temperature * lse, w[:, 1:]


def pessimistic_regularizer(q_actor, q_mu, y_upper, y_lower, temperature=1.0):
    """Penalty per state from sampled values.

    q_actor, q_mu: (B, n_b) member values on actor and uniform samples
    (``q_mu=None`` drops the second term). Returns (R, dR/dq_actor, dR/dq_mu).
    """
    q_actor = np.atleast_2d(np.asarray(q_actor, dtype=np.float64))
    r1, g1 = _lse_term(y_upper, q_actor, temperature)
    if q_mu is None:
        return r1, g1, None
    q_mu = np.atleast_2d(np.asarray(q_mu, dtype=np.float64))
    r2, g2 = _lse_term(y_lower, q_mu, temperature)
    return r1 + r2, g1, g2


def member_loss_and_grads(critic, m, states, actions, targets, actor_actions, mu_actions, y_upper, y_lower):
    """Loss ``mean(0.5 (Q - y)^2 + lam R)`` for member ``m`` and its parameter gradients."""
    net = critic.members[m]
    B = len(states)
    use_reg = critic.lam > 0
    blocks = [critic._inputs(states, actions)]
    if use_reg:
        nb = actor_actions.shape[1]
        s_rep = np.repeat(states, nb, axis=0)
        blocks.append(critic._inputs(s_rep, actor_actions.reshape(B * nb, -1)))
        if critic.uses_mu:
            blocks.append(critic._inputs(s_rep, mu_actions.reshape(B * nb, -1)))
    x = np.concatenate(blocks, axis=0)
    out, cache = net.forward(x)
    out = out[:, 0]
    q = out[:B]
    resid = q - targets
    loss = 0.5 * np.mean(resid**2)
    up = np.zeros_like(out)
    up[:B] = resid / B
    reg = 0.0
    if use_reg:
        q_pi = out[B : B + B * nb].reshape(B, nb)
        q_mu = out[B + B * nb :].reshape(B, nb) if critic.uses_mu else None
        R, g_pi, g_mu = pessimistic_regularizer(
            q_pi, q_mu, y_upper, y_lower if critic.uses_mu else None, critic.temperature
        )
        reg = float(np.mean(R))
        up[B : B + B * nb] = critic.lam * g_pi.ravel() / B
        if q_mu is not None:
            up[B + B * nb :] = critic.lam * g_mu.ravel() / B
        loss += critic.lam * reg
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss for critic member {m}")
    grads, _ = net.backward(cache, up[:, None])
    return loss, grads, reg


def critic_loss(critic, m, states, actions, targets, actor_actions, mu_actions, y_upper, y_lower):
    return member_loss_and_grads(critic, m, states, actions, targets, actor_actions, mu_actions, y_upper, y_lower)[0]


def make_critic_optimizers(critic, lr=1e-3, weight_decay=1e-8):
    return [AdamW(net.params, lr=lr, weight_decay=weight_decay) for net in critic.members]


def train_critic_step(critic, value_model, actor, nstep_batch, sarsa_batch, gamma, rngs, optimizers,
                      sigma=0.3, noise_clip=0.5, median=True):
    """One AdamW step per member on its own loss.

    Members share the batch; each draws its own actor and uniform samples
    from ``rngs[m]``. Returns the per-member losses.
    """
    from .policies import sample_noisy_action

    if critic.uses_sarsa:
        if sarsa_batch is None:
            raise UsageError(f"variant {critic.variant} needs a SARSA batch")
        states, actions = sarsa_batch.states, sarsa_batch.actions
    else:
        if value_model is None:
            raise UsageError("the value distribution must be trained before fitting the critic")
        states, actions = nstep_batch.states, nstep_batch.actions
        shared_target = supervised_target(nstep_batch, value_model, gamma, median=median)
    B = len(states)
    y_upper = y_lower = None
    if critic.lam > 0:
        if value_model is None:
            raise UsageError("the penalty needs a trained value distribution")
        y_upper = value_model.quantile(states, critic.tau1, agg="min")
        y_lower = value_model.quantile(states, critic.tau2, agg="min")
    losses = []
    nb = critic.n_samples
    for m in range(len(critic)):
        gen = as_generator(rngs[m])
        actor_actions = mu_actions = None
        if critic.lam > 0:
            s_rep = np.repeat(states, nb, axis=0)
            actor_actions = sample_noisy_action(actor, s_rep, sigma, noise_clip, gen).reshape(B, nb, -1)
            if critic.uses_mu:
                mu_actions = critic.mu.sample(B, nb, gen)
        targets = sarsa_td_target(sarsa_batch, critic, gamma, member=m) if critic.uses_sarsa else shared_target
        loss, grads, _ = member_loss_and_grads(
            critic, m, states, actions, targets, actor_actions, mu_actions, y_upper, y_lower
        )
        optimizers[m].step(grads, name=f"critic member {m}")
        losses.append(loss)
    critic.update_targets()
    return losses
