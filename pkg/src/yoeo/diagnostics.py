"""Calibration reports, ablation grids and Monte-Carlo consistency checks.

CSV headers
-----------
calibration pairs:      row, dataset_index, mc, <variant>...
calibration histograms: state, dataset_index, action_index, action..., mc_state, <variant>...
ablation grid:          variant, dataset, seed, score, raw_return, status
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .envs import behavior_spec, evaluate_policy, generate_dataset, make_env, monte_carlo_value, normalized_score
from .errors import TrainingError, UsageError
from .nn import RngStream, as_generator
from .policies import KnnActionIndex, KnnPolicy
from .train import train_stage1, train_stage2


def value_range(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    span = float(values.max() - values.min()) if values.size else 0.0
    # a flat value profile still needs a usable scale
    return span if span > 1e-12 else max(1.0, float(np.abs(values).max(initial=0.0)))


def behavior_policy(env, dataset):
    """Markov behavior to roll out from arbitrary states (first mixture component
    when the tag is an episode-level mixture)."""
    spec = behavior_spec(env, dataset.metadata["behavior"])
    if len(spec.components) != 1:
        raise UsageError(f"behavior {spec.tag!r} mixes whole episodes and is not Markov; "
                         "MC values from arbitrary states are undefined")
    return spec.components[0]


@dataclass
class CalibrationReport:
    variants: list
    pair_indices: np.ndarray
    pair_mc: np.ndarray
    pair_pred: dict
    hist_indices: np.ndarray
    hist_actions: np.ndarray
    hist_mc_state: np.ndarray
    hist_pred: dict
    rmse: dict = field(default_factory=dict)
    discrimination: dict = field(default_factory=dict)

    def discrimination_ratio(self, num="full", den="no_reg"):
        return self.discrimination[num] / max(self.discrimination[den], 1e-12)

    def pairs_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["row", "dataset_index", "mc", *self.variants])
        for r, (i, mc) in enumerate(zip(self.pair_indices, self.pair_mc)):
            w.writerow([r, int(i), f"{mc:.10g}", *[f"{self.pair_pred[v][r]:.10g}" for v in self.variants]])
        return out.getvalue()

    def histogram_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        dA = self.hist_actions.shape[-1]
        w.writerow(["state", "dataset_index", "action_index", *[f"action{d}" for d in range(dA)],
                    "mc_state", *self.variants])
        for s, idx in enumerate(self.hist_indices):
            for j, a in enumerate(self.hist_actions[s]):
                w.writerow([s, int(idx), j, *[f"{x:.10g}" for x in a], f"{self.hist_mc_state[s]:.10g}",
                            *[f"{self.hist_pred[v][s, j]:.10g}" for v in self.variants]])
        return out.getvalue()


def calibration_report(critics: dict, dataset, env, rng, n_pairs=10_000, n_states=4, n_actions=100,
                       n_rollouts=100, behavior=None) -> CalibrationReport:
    """Compare critic variants with Monte-Carlo values of the behavior.

    ``critics`` maps a variant name to a trained critic. On-policy pairs are
    dataset rows; histogram actions are uniform over the action box.
    """
    if not critics or any(c is None for c in critics.values()):
        raise UsageError("calibration needs a trained critic for every requested variant")
    gen = as_generator(rng)
    behavior = behavior_policy(env, dataset) if behavior is None else behavior
    names = list(critics)
    n_pairs = min(int(n_pairs), len(dataset))
    idx = np.sort(gen.choice(len(dataset), size=n_pairs, replace=False))
    s, a = dataset.states[idx], dataset.actions[idx]
    mc = monte_carlo_value(env, behavior, s, gen, n_rollouts, actions=a).mean
    pair_pred = {v: critics[v].values(s, a).min(axis=0) for v in names}
    h_idx = np.sort(gen.choice(len(dataset), size=min(n_states, len(dataset)), replace=False))
    h_states = dataset.states[h_idx]
    h_actions = gen.uniform(env.action_low, env.action_high, size=(len(h_idx), n_actions, env.action_dim))
    mc_state = monte_carlo_value(env, behavior, h_states, gen, n_rollouts).mean
    s_rep = np.repeat(h_states, n_actions, axis=0)
    flat_a = h_actions.reshape(-1, env.action_dim)
    hist_pred = {v: critics[v].values(s_rep, flat_a).min(axis=0).reshape(len(h_idx), n_actions) for v in names}
    report = CalibrationReport(names, idx, mc, pair_pred, h_idx, h_actions, mc_state, hist_pred)
    for v in names:
        report.rmse[v] = float(np.sqrt(np.mean((pair_pred[v] - mc) ** 2)))
        report.discrimination[v] = float(np.mean(hist_pred[v].std(axis=1)))
    return report


@dataclass
class ConsistencyReport:
    passed: bool
    flagged: np.ndarray
    mc: np.ndarray
    predicted: np.ndarray
    tolerance: float

    @property
    def flagged_fraction(self):
        return float(self.flagged.mean()) if self.flagged.size else 0.0


def mc_consistency_check(values, env, behavior, states, rng, critic=None, actions=None, tolerance=None,
                         rel_tolerance=0.1, n_rollouts=200) -> ConsistencyReport:
    """Flag states whose predicted value strays from the Monte-Carlo return.

    Checks ``E_tau[Y(s; tau)]`` by default, or the critic's ensemble min at
    ``actions`` when a critic is given. ``tolerance`` defaults to
    ``rel_tolerance`` times the spread of the MC values.
    """
    gen = as_generator(rng)
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if critic is not None:
        if actions is None:
            raise UsageError("checking a critic needs the actions to evaluate")
        mc = monte_carlo_value(env, behavior, states, gen, n_rollouts, actions=actions).mean
        pred = critic.values(states, actions).min(axis=0)
    else:
        mc = monte_carlo_value(env, behavior, states, gen, n_rollouts).mean
        pred = values.expected(states) if hasattr(values, "expected") else np.asarray(values(states))
    tol = rel_tolerance * value_range(mc) if tolerance is None else float(tolerance)
    flagged = np.abs(pred - mc) > tol
    return ConsistencyReport(not flagged.any(), flagged, mc, pred, tol)


ABLATION_VARIANTS = ("full", "no_reg", "no_mu", "ens1", "ens3", "sarsa_target")


def variant_config(cfg: RunConfig, variant: str) -> RunConfig:
    if variant == "ens1":
        return cfg.replace(variant="full", n_critics=1)
    if variant == "ens3":
        return cfg.replace(variant="full", n_critics=3)
    if variant not in ABLATION_VARIANTS:
        raise UsageError(f"unknown ablation variant {variant!r}; choose from {ABLATION_VARIANTS}")
    return cfg.replace(variant=variant)


@dataclass
class AblationConfig:
    variants: list
    datasets: list  # (env name, behavior tag) pairs
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    base: RunConfig = field(default_factory=RunConfig)
    episodes: int | dict = 100  # or {(env name, behavior tag): count}
    eval_episodes: int = 100
    policy: str = "actor"

    def episodes_for(self, env_name, tag):
        if isinstance(self.episodes, dict):
            return self.episodes[(env_name, tag)]
        return self.episodes


@dataclass
class AblationGrid:
    cells: dict  # (variant, dataset label, seed) -> (normalized score, raw return, status)

    def score(self, variant, dataset, seed):
        return self.cells[(variant, dataset, seed)][0]

    def mean_score(self, variant, dataset):
        vals = [c[0] for k, c in self.cells.items() if k[0] == variant and k[1] == dataset and c[2] == "ok"]
        return float(np.mean(vals)) if vals else float("nan")

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["variant", "dataset", "seed", "score", "raw_return", "status"])
        for (v, d, s), (score, raw, status) in self.cells.items():
            w.writerow([v, d, s, f"{score:.10g}", f"{raw:.10g}", status])
        return out.getvalue()


def dataset_label(env_name, tag):
    return f"{env_name}-{tag}"


def run_ablation(config: AblationConfig, artifacts=None) -> AblationGrid:
    """Train and score every (variant, dataset, seed) cell.

    Stage 1 depends only on the dataset and seed, so it is shared by the
    variants of a cell row. A training error marks the cell failed and the
    grid carries on. ``artifacts`` (optional dict) collects the trained
    objects ``(data, values, critic, actor)`` keyed like the cells; entries
    already present are reused instead of retrained, so they must come from
    the same base config.
    """
    for variant in config.variants:
        variant_config(config.base, variant)
    artifacts = {} if artifacts is None else artifacts
    cells = {}
    for env_name, tag in config.datasets:
        env = make_env(env_name)
        label = dataset_label(env_name, tag)
        for seed in config.seeds:
            cfg = config.base.replace(env=env_name, seed=seed)
            done = [a for k, a in artifacts.items() if k[1:] == (label, seed)]
            if done:
                data, values = done[0][:2]
            else:
                data = generate_dataset(env, tag, config.episodes_for(env_name, tag), RngStream(seed, 1))
                values = train_stage1(data, cfg)
            for variant in config.variants:
                key = (variant, label, seed)
                if key in artifacts:
                    critic, actor = artifacts[key][2:]
                else:
                    try:
                        critic, actor = train_stage2(data, values, variant_config(cfg, variant), env=env)
                    except TrainingError:
                        cells[key] = (float("nan"), float("nan"), "failed")
                        continue
                    artifacts[key] = (data, values, critic, actor)
                if config.policy == "knn":
                    policy = KnnPolicy(KnnActionIndex.from_dataset(data, cfg.knn_k), critic)
                else:
                    policy = actor
                raw = evaluate_policy(env, policy, RngStream(seed, 2), config.eval_episodes)[0]
                cells[key] = (float(normalized_score(raw, data.metadata)), raw, "ok")
    return AblationGrid(cells)
