"""Two-stage training pipeline.

Stage 1 fits the ensemble of state-value distributions of the behavior
policy. Stage 2 freezes it and alternates critic-ensemble and actor updates.
Artifacts in the output directory::

    config.ini          canonical run configuration
    value.ckpt          value ensemble (online and target networks)
    critic.ckpt         critic ensemble and actor
    value_metrics.csv   step, member, loss
    critic_metrics.csv  step, mean critic loss, per-member losses, actor objective
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_tensors, save_tensors
from .config import RunConfig, save_config
from .critic import PessimisticCritic, make_critic_optimizers, train_critic_step
from .dataset import sample_nstep, sample_sarsa
from .errors import LoadError, TrainingError
from .nn import RngStream
from .policies import ActorPolicy, KnnActionIndex, KnnPolicy, actor_update_step, make_actor_optimizer
from .value import QuantileValueModel, ValueEnsemble, make_value_optimizer, train_value_step

# stream ids for RngStream(seed, id)
_VALUE_INIT, _VALUE_TRAIN, _CRITIC_INIT, _CRITIC_SAMPLES, _BATCHES, _ACTOR_INIT = 100, 200, 300, 400, 500, 600


def action_bounds(dataset, env=None):
    if env is not None:
        return env.action_low, env.action_high
    return np.full(dataset.action_dim, -1.0), np.full(dataset.action_dim, 1.0)


def build_value_ensemble(cfg: RunConfig, state_dim) -> ValueEnsemble:
    return ValueEnsemble([
        QuantileValueModel(state_dim, feature_dim=cfg.feature_dim, hidden=cfg.value_hidden,
                           rng=RngStream(cfg.seed, _VALUE_INIT + i), kappa=cfg.kappa,
                           n_quantiles=cfg.n_quantiles, n_target_quantiles=cfg.n_target_quantiles,
                           ema_decay=cfg.ema_decay)
        for i in range(cfg.n_value)
    ])


def build_critic(cfg: RunConfig, state_dim, low, high) -> PessimisticCritic:
    return PessimisticCritic(state_dim, len(low), low, high, n_members=cfg.n_critics, hidden=cfg.critic_hidden,
                             lam=cfg.lam, tau1=cfg.tau1, tau2=cfg.tau2, n_samples=cfg.n_samples,
                             variant=cfg.variant, temperature=cfg.temperature, target_decay=cfg.ema_decay,
                             rng=RngStream(cfg.seed, _CRITIC_INIT))


def build_actor(cfg: RunConfig, state_dim, low, high) -> ActorPolicy:
    return ActorPolicy(state_dim, low, high, hidden=cfg.actor_hidden, sigma=cfg.sigma,
                       noise_clip=cfg.noise_clip, rng=RngStream(cfg.seed, _ACTOR_INIT))


def train_stage1(dataset, cfg: RunConfig, log=None) -> ValueEnsemble:
    """Fit every value-ensemble member on its own random stream."""
    values = build_value_ensemble(cfg, dataset.state_dim)
    for i, model in enumerate(values.members):
        rng = RngStream(cfg.seed, _VALUE_TRAIN + i)
        opt = make_value_optimizer(model, lr=cfg.value_lr, weight_decay=cfg.value_weight_decay)
        for step in range(1, cfg.value_steps + 1):
            loss = train_value_step(model, dataset, cfg.batch_size, cfg.nstep, cfg.gamma, rng, opt)
            if log is not None and (step % cfg.log_every == 0 or step == cfg.value_steps):
                log(step, i, loss)
    return values


def train_stage2(dataset, values, cfg: RunConfig, env=None, log=None):
    """Alternate one critic-ensemble step and one actor step per iteration."""
    low, high = action_bounds(dataset, env)
    critic = build_critic(cfg, dataset.state_dim, low, high)
    actor = build_actor(cfg, dataset.state_dim, low, high)
    critic_opts = make_critic_optimizers(critic, lr=cfg.critic_lr, weight_decay=cfg.critic_weight_decay)
    actor_opt = make_actor_optimizer(actor, lr=cfg.actor_lr)
    member_rngs = [RngStream(cfg.seed, _CRITIC_SAMPLES + m) for m in range(cfg.n_critics)]
    batch_rng = RngStream(cfg.seed, _BATCHES)
    for step in range(1, cfg.critic_steps + 1):
        if critic.uses_sarsa:
            nb, sb = None, sample_sarsa(dataset, cfg.batch_size, batch_rng)
            states = sb.states
        else:
            nb, sb = sample_nstep(dataset, cfg.batch_size, cfg.nstep, cfg.gamma, batch_rng), None
            states = nb.states
        losses = train_critic_step(critic, values, actor, nb, sb, cfg.gamma, member_rngs, critic_opts,
                                   sigma=cfg.sigma, noise_clip=cfg.noise_clip, median=cfg.median_target)
        objective = actor_update_step(actor, critic, states, actor_opt)
        if log is not None and (step % cfg.log_every == 0 or step == cfg.critic_steps):
            log(step, losses, objective)
    return critic, actor


@dataclass
class TrainedArtifacts:
    values: ValueEnsemble
    critic: PessimisticCritic
    actor: ActorPolicy

    def knn_policy(self, dataset, k=100):
        return KnnPolicy(KnnActionIndex.from_dataset(dataset, k), self.critic)


class _CsvLog:
    def __init__(self, path, header):
        self.path = path
        self.tmp = path + ".part"
        self.fh = open(self.tmp, "w", newline="", encoding="utf-8")
        self.writer = csv.writer(self.fh)
        self.writer.writerow(header)

    def row(self, *values):
        self.writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in values])

    def close(self, keep=True):
        self.fh.close()
        if keep:
            os.replace(self.tmp, self.path)


def value_path(out_dir):
    return os.path.join(out_dir, "value.ckpt")


def critic_path(out_dir):
    return os.path.join(out_dir, "critic.ckpt")


def load_values(cfg: RunConfig, state_dim, out_dir) -> ValueEnsemble:
    values = build_value_ensemble(cfg, state_dim)
    tensors = load_tensors(value_path(out_dir))
    for i, m in enumerate(values.members):
        m.load_tensors(tensors, f"value{i}.")
    return values


def load_policy_artifacts(cfg: RunConfig, dataset, out_dir, env=None):
    low, high = action_bounds(dataset, env)
    critic = build_critic(cfg, dataset.state_dim, low, high)
    actor = build_actor(cfg, dataset.state_dim, low, high)
    tensors = load_tensors(critic_path(out_dir))
    critic.load_tensors(tensors)
    actor.load_tensors(tensors)
    return critic, actor


def run_training(dataset, cfg: RunConfig, out_dir, stage="all", env=None) -> TrainedArtifacts:
    """Train and write checkpoints. ``stage`` is ``"1"``, ``"2"`` or ``"all"``.

    Stage 2 alone reloads the stage-1 checkpoint. A checkpoint is only
    replaced once its stage finishes, so a diverged run keeps the last good one.
    """
    os.makedirs(out_dir, exist_ok=True)
    save_config(cfg, os.path.join(out_dir, "config.ini"))
    if stage in ("1", "all"):
        log = _CsvLog(os.path.join(out_dir, "value_metrics.csv"), ["step", "member", "loss"])
        try:
            values = train_stage1(dataset, cfg, log=log.row)
        except TrainingError:
            log.close(keep=True)
            raise
        log.close()
        save_tensors(value_path(out_dir), values.tensors())
        if stage == "1":
            return TrainedArtifacts(values, None, None)
    else:
        try:
            values = load_values(cfg, dataset.state_dim, out_dir)
        except LoadError as exc:
            raise LoadError(f"stage 2 needs a stage-1 checkpoint: {exc}") from None
    header = ["step", "critic_loss"] + [f"member{m}" for m in range(cfg.n_critics)] + ["actor_objective"]
    log = _CsvLog(os.path.join(out_dir, "critic_metrics.csv"), header)

    def write(step, losses, objective):
        log.row(step, float(np.mean(losses)), *[float(x) for x in losses], float(objective))

    try:
        critic, actor = train_stage2(dataset, values, cfg, env=env, log=write)
    except TrainingError:
        log.close(keep=True)
        raise
    log.close()
    tensors = critic.tensors()
    tensors.update(actor.tensors())
    save_tensors(critic_path(out_dir), tensors)
    return TrainedArtifacts(values, critic, actor)
