"""Command-line entry point: ``yoeo {gen-data,train,eval,diagnose,ablate}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
``YOEO_SEED`` supplies the seed when ``--seed`` is not given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .checkpoint import atomic_write
from .config import RunConfig, apply_overrides, load_config
from .dataset import load_dataset, save_dataset
from .diagnostics import (
    AblationConfig,
    behavior_policy,
    calibration_report,
    mc_consistency_check,
    run_ablation,
)
from .envs import evaluate_policy, generate_dataset, make_env, normalized_score
from .errors import ConfigurationError, UsageError, YoeoError
from .nn import RngStream
from .policies import KnnActionIndex, KnnPolicy
from .train import load_policy_artifacts, load_values, run_training

VARIANT_FLAGS = {"full": "full", "no-reg": "no_reg", "no-mu": "no_mu", "sarsa-target": "sarsa_target"}


def resolve_seed(seed):
    if seed is not None:
        return seed
    raw = os.environ.get("YOEO_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"YOEO_SEED must be an integer, got {raw!r}") from None


def _parse_overrides(items):
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def build_config(args) -> RunConfig:
    """Config file, then ``--set`` overrides, then dedicated flags (flags win)."""
    overrides = _parse_overrides(args.set)
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = apply_overrides(cfg, overrides)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    elif "seed" not in overrides and not args.config:
        changes["seed"] = resolve_seed(None)
    if args.steps is not None:
        changes["value_steps"] = changes["critic_steps"] = args.steps
    if args.variant is not None:
        changes["variant"] = VARIANT_FLAGS[args.variant]
    if args.lam is not None:
        changes["lam"] = args.lam
    return cfg.replace(**changes)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    env = make_env(args.env)
    seed = resolve_seed(args.seed)
    data = generate_dataset(env, args.behavior, args.episodes, RngStream(seed, 1), horizon=args.horizon)
    save_dataset(data, args.out)
    sidecar = dict(data.metadata)
    sidecar.pop("episode_components", None)
    sidecar.update(seed=seed, episodes=args.episodes, transitions=len(data))
    atomic_write(args.out + ".json", (json.dumps(sidecar, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    print(f"wrote {len(data)} transitions from {args.episodes} episodes to {args.out}")
    return 0


def _env_for(data, cfg):
    return make_env(data.metadata.get("env", cfg.env))


def cmd_train(args):
    cfg = build_config(args)
    data = load_dataset(args.dataset)
    env = _env_for(data, cfg)
    cfg = cfg.replace(env=env.name, dataset=os.path.abspath(args.dataset), output_dir=args.out)
    run_training(data, cfg, args.out, stage=args.stage, env=env)
    print(f"training stage {args.stage} finished; artifacts in {args.out}")
    return 0


def _load_run(run_dir, dataset_path=None):
    path = os.path.join(run_dir, "config.ini")
    if not os.path.exists(path):
        raise UsageError(f"{run_dir} has no config.ini; train first")
    cfg = load_config(path)
    data = load_dataset(dataset_path or cfg.dataset)
    return cfg, data, _env_for(data, cfg)


def cmd_eval(args):
    cfg, data, env = _load_run(args.run, args.dataset)
    critic, actor = load_policy_artifacts(cfg, data, args.run, env=env)
    if args.policy == "knn":
        policy = KnnPolicy(KnnActionIndex.from_dataset(data, cfg.knn_k), critic)
    else:
        policy = actor
    seed = resolve_seed(args.seed)
    mean, std, totals = evaluate_policy(env, policy, RngStream(seed, 2), args.trajectories)
    scores = normalized_score(totals, data.metadata)
    print(f"policy={args.policy} trajectories={args.trajectories}")
    print(f"return mean={mean:.4f} std={std:.4f}")
    print(f"normalized mean={scores.mean():.2f} std={scores.std():.2f}")
    return 0


def cmd_diagnose(args):
    cfg, data, env = _load_run(args.run, args.dataset)
    seed = resolve_seed(args.seed)
    values = load_values(cfg, data.state_dim, args.run)
    beh = behavior_policy(env, data)
    gen = RngStream(seed, 3)
    idx = gen.choice(len(data), size=min(args.states_checked, len(data)), replace=False)
    check = mc_consistency_check(values, env, beh, data.states[idx], gen, n_rollouts=args.rollouts)
    print(f"value check: {int(check.flagged.sum())}/{check.flagged.size} states flagged "
          f"(tolerance {check.tolerance:.4f})")
    critics = {cfg.variant: load_policy_artifacts(cfg, data, args.run, env=env)[0]}
    for other in args.compare or []:
        ocfg, _, _ = _load_run(other, args.dataset)
        critics[ocfg.variant] = load_policy_artifacts(ocfg, data, other, env=env)[0]
    report = calibration_report(critics, data, env, gen, n_pairs=args.pairs, n_states=args.hist_states,
                                n_actions=args.actions, n_rollouts=args.rollouts, behavior=beh)
    os.makedirs(args.out, exist_ok=True)
    atomic_write(os.path.join(args.out, "calibration_pairs.csv"), report.pairs_csv().encode("utf-8"))
    atomic_write(os.path.join(args.out, "calibration_hist.csv"), report.histogram_csv().encode("utf-8"))
    for v in report.variants:
        print(f"{v}: on-policy rmse={report.rmse[v]:.4f} discrimination std={report.discrimination[v]:.4f}")
    return 0 if check.passed or not args.strict else 1


def _parse_datasets(text):
    out = []
    for item in text.split(","):
        env_name, sep, tag = item.partition(":")
        if not sep:
            raise ConfigurationError(f"datasets are env:behavior pairs, got {item!r}")
        out.append((env_name.strip(), tag.strip()))
    return out


def cmd_ablate(args):
    cfg = build_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    ab = AblationConfig(variants=args.variants.split(","), datasets=_parse_datasets(args.datasets), seeds=seeds,
                        base=cfg, episodes=args.episodes, eval_episodes=args.trajectories, policy=args.policy)
    grid = run_ablation(ab)
    atomic_write(args.out, grid.to_csv().encode("utf-8"))
    for env_name, tag in ab.datasets:
        label = f"{env_name}-{tag}"
        means = ", ".join(f"{v}={grid.mean_score(v, label):.2f}" for v in ab.variants)
        print(f"{label}: {means}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="yoeo", description="One-shot behavior evaluation for offline RL.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="roll out a behavior policy into a dataset file")
    g.add_argument("--env", required=True)
    g.add_argument("--behavior", required=True)
    g.add_argument("--episodes", type=int, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--horizon", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    def common(sp):
        sp.add_argument("--config", help="sectioned key = value file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--steps", type=int, help="override both stage step counts")
        sp.add_argument("--variant", choices=sorted(VARIANT_FLAGS))
        sp.add_argument("--lambda", dest="lam", type=float)

    t = sub.add_parser("train", help="two-stage training")
    common(t)
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--stage", choices=["1", "2", "all"], default="all")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a trained policy")
    e.add_argument("--run", required=True)
    e.add_argument("--dataset")
    e.add_argument("--policy", choices=["actor", "knn"], default="actor")
    e.add_argument("--trajectories", type=int, default=100)
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("diagnose", help="Monte-Carlo calibration of a trained run")
    d.add_argument("--run", required=True)
    d.add_argument("--compare", action="append", help="another run directory (e.g. a no-reg variant)")
    d.add_argument("--dataset")
    d.add_argument("--out", required=True)
    d.add_argument("--pairs", type=int, default=10_000)
    d.add_argument("--hist-states", type=int, default=4)
    d.add_argument("--actions", type=int, default=100)
    d.add_argument("--rollouts", type=int, default=100)
    d.add_argument("--states-checked", type=int, default=200)
    d.add_argument("--strict", action="store_true", help="exit 1 when the value check flags a state")
    d.add_argument("--seed", type=int)
    d.set_defaults(func=cmd_diagnose)

    a = sub.add_parser("ablate", help="variant x dataset x seed score grid")
    common(a)
    a.add_argument("--variants", default="full,no_reg,no_mu,ens1,ens3")
    a.add_argument("--datasets", default="pointmass1d:medium,pointmass1d:medium_replay_mix,mixture:mixture")
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--episodes", type=int, default=100)
    a.add_argument("--trajectories", type=int, default=100)
    a.add_argument("--policy", choices=["actor", "knn"], default="actor")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "trajectories", 1) < 1 or getattr(args, "episodes", 1) < 1:
            raise UsageError("counts must be positive")
        return args.func(args)
    except (ConfigurationError, UsageError) as exc:
        print(f"yoeo: error: {exc}", file=sys.stderr)
        return 2
    except (YoeoError, OSError) as exc:
        print(f"yoeo: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
