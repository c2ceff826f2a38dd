import numpy as np
import pytest

from yoeo.config import RunConfig
from yoeo.diagnostics import (
    AblationConfig,
    behavior_policy,
    calibration_report,
    mc_consistency_check,
    run_ablation,
)
from yoeo.envs import generate_dataset, make_env, solve_dp, tabular_behavior
from yoeo.errors import UsageError
from yoeo.value import QuantileValueModel, ValueEnsemble


class OracleCritic:
    def __init__(self, env, sol):
        self.env, self.sol = env, sol

    def values(self, states, actions):
        return self.sol.q_of(self.env, states, actions)[None]


class OracleValues:
    def __init__(self, env, sol):
        self.env, self.sol = env, sol

    def expected(self, states):
        return self.sol.V[self.env.state_index(states)]


@pytest.fixture(scope="module")
def chain():
    env = make_env("chain5")
    data = generate_dataset(env, "mixture", 30, 0)
    return env, data, solve_dp(env, tabular_behavior(env, "mixture"))


def test_oracle_critic_has_zero_rmse(chain):
    env, data, sol = chain
    rep = calibration_report({"full": OracleCritic(env, sol)}, data, env, 0, n_pairs=50, n_rollouts=4000)
    scale = sol.V.max() - sol.V.min()
    assert rep.rmse["full"] < 0.02 * scale


def test_report_csv_is_deterministic(chain):
    env, data, sol = chain
    critics = {"full": OracleCritic(env, sol), "no_reg": OracleCritic(env, sol)}
    a = calibration_report(critics, data, env, 3, n_pairs=20, n_actions=5, n_rollouts=10)
    b = calibration_report(critics, data, env, 3, n_pairs=20, n_actions=5, n_rollouts=10)
    assert a.pairs_csv() == b.pairs_csv() and a.histogram_csv() == b.histogram_csv()
    assert a.histogram_csv().splitlines()[0] == "state,dataset_index,action_index,action0,mc_state,full,no_reg"


def test_missing_variant_is_rejected(chain):
    env, data, _ = chain
    with pytest.raises(UsageError):
        calibration_report({"full": None}, data, env, 0)


def test_oracle_values_pass_the_consistency_check():
    env = make_env("mixture")
    beh = tabular_behavior(env, "mixture")
    sol = solve_dp(env, beh)
    rep = mc_consistency_check(OracleValues(env, sol), env, beh, env.one_hot(np.arange(6)), 0, n_rollouts=4000)
    assert rep.passed and rep.flagged_fraction == 0.0


def test_untrained_values_are_flagged():
    env = make_env("pointmass1d")
    data = generate_dataset(env, "medium", 20, 0)
    values = ValueEnsemble([QuantileValueModel(2, feature_dim=8, hidden=16, rng=0, zero_output=True)])
    idx = np.random.default_rng(1).choice(len(data), size=60, replace=False)
    # restrict to states away from the goal, where the behavior value is clearly nonzero
    states = data.states[idx][np.abs(data.states[idx, 0]) > 0.3]
    beh = behavior_policy(env, data)
    rep = mc_consistency_check(values, env, beh, states, 2, n_rollouts=50)
    assert rep.flagged_fraction >= 0.9


def test_mixture_behavior_is_not_markov():
    env = make_env("pointmass1d")
    data = generate_dataset(env, "medium_expert_mix", 4, 0)
    with pytest.raises(UsageError):
        behavior_policy(env, data)


def test_ablation_grid_is_complete():
    base = RunConfig(value_hidden=8, critic_hidden=8, actor_hidden=8, feature_dim=4, n_value=1, n_critics=2,
                     value_steps=3, critic_steps=3, batch_size=8)
    cfg = AblationConfig(["full", "ens1"], [("mixture", "mixture")], seeds=[0, 1], base=base, episodes=3,
                         eval_episodes=2)
    grid = run_ablation(cfg)
    assert sorted(grid.cells) == sorted((v, "mixture-mixture", s) for v in ("full", "ens1") for s in (0, 1))
    assert all(c[2] == "ok" for c in grid.cells.values())
    lines = grid.to_csv().splitlines()
    assert lines[0] == "variant,dataset,seed,score,raw_return,status" and len(lines) == 5
    assert grid.to_csv() == run_ablation(cfg).to_csv()


def test_unknown_ablation_variant():
    with pytest.raises(UsageError):
        run_ablation(AblationConfig(["ens7"], [("chain5", "mixture")]))
