"""Desk-scale MDPs, behavior policies, dataset generation and exact oracles.

All environments are vectorised: ``reset`` returns a batch of states and
``step`` advances a batch. Tabular environments encode their state as a
one-hot vector and map the continuous action onto a finite set of bins, which
makes them solvable by dynamic programming while still exercising the
continuous-action machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import TransitionDataset
from .errors import ConfigurationError, UsageError
from .nn import as_generator


# --------------------------------------------------------------------------
# environments


class PointMass1D:
    """Point mass on a line, pushed by a bounded force toward ``goal``.

    state (x, v); v' = clip(v + 0.25 a, -1, 1); x' = clip(x + 0.25 v', -2, 2);
    reward -|x' - goal|. Episodes start at rest with |x - goal| in [0.8, 1]
    and terminate once |x' - goal| < ``goal_radius`` and |v'| < ``goal_speed``.
    """

    name = "pointmass1d"
    tabular = False
    state_dim = 2
    action_dim = 1

    def __init__(self, horizon=50, gamma=0.99, goal=0.0, goal_radius=0.1, goal_speed=0.1):
        self.horizon = int(horizon)
        self.gamma = float(gamma)
        self.goal = float(goal)
        self.goal_radius = float(goal_radius)
        self.goal_speed = float(goal_speed)
        self.action_low = np.array([-1.0])
        self.action_high = np.array([1.0])

    def reset(self, rng, n=1):
        gen = as_generator(rng)
        sign = gen.choice([-1.0, 1.0], size=n)
        x = self.goal + sign * gen.uniform(0.8, 1.0, size=n)
        return np.stack([x, np.zeros(n)], axis=1)

    def step(self, states, actions, rng=None):
        states = np.asarray(states, dtype=np.float64)
        a = np.clip(np.asarray(actions, dtype=np.float64).reshape(len(states), -1)[:, 0], -1.0, 1.0)
        v = np.clip(states[:, 1] + 0.25 * a, -1.0, 1.0)
        x = np.clip(states[:, 0] + 0.25 * v, -2.0, 2.0)
        nxt = np.stack([x, v], axis=1)
        dist = np.abs(x - self.goal)
        return nxt, -dist, (dist < self.goal_radius) & (np.abs(v) < self.goal_speed)

    def expert_action(self, states):
        states = np.asarray(states, dtype=np.float64)
        a = -2.0 * (states[:, 0] - self.goal) - 2.0 * states[:, 1]
        return np.clip(a, -1.0, 1.0)[:, None]


class TabularMdp:
    """Finite MDP with one-hot states and a binned scalar action.

    ``edges`` are ascending thresholds: bin ``j`` holds actions with
    ``edges[j-1] <= a < edges[j]``. For each (state, bin) the environment has
    a finite list of outcomes ``(probability, next_state, reward)`` where
    ``next_state == -1`` means termination.
    """

    tabular = True
    action_dim = 1

    def __init__(self, name, n_states, edges, outcomes, initial, horizon, gamma=0.99):
        self.name = name
        self.n_states = int(n_states)
        self.state_dim = self.n_states
        self.edges = np.asarray(edges, dtype=np.float64)
        self.n_bins = len(self.edges) + 1
        self.initial = np.asarray(initial, dtype=np.float64)
        self.horizon = int(horizon)
        self.gamma = float(gamma)
        self.action_low = np.array([-1.0])
        self.action_high = np.array([1.0])
        if self.initial.shape != (self.n_states,) or not np.isclose(self.initial.sum(), 1.0):
            raise ConfigurationError("initial distribution must be a probability vector over states")
        width = max(len(outcomes[s][b]) for s in range(self.n_states) for b in range(self.n_bins))
        self.prob = np.zeros((self.n_states, self.n_bins, width))
        self.next_state = np.full((self.n_states, self.n_bins, width), -1, dtype=np.int64)
        self.reward = np.zeros((self.n_states, self.n_bins, width))
        for s in range(self.n_states):
            for b in range(self.n_bins):
                for o, (p, ns, r) in enumerate(outcomes[s][b]):
                    self.prob[s, b, o] = p
                    self.next_state[s, b, o] = ns
                    self.reward[s, b, o] = r
        if not np.allclose(self.prob.sum(axis=2), 1.0):
            raise ConfigurationError("outcome probabilities must sum to one for every (state, bin)")
        self._cum = np.cumsum(self.prob, axis=2)

    def one_hot(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        out = np.zeros((idx.size, self.n_states))
        out[np.arange(idx.size), idx.ravel()] = 1.0
        return out

    def state_index(self, states):
        return np.argmax(np.asarray(states).reshape(-1, self.n_states), axis=1)

    def action_bin(self, actions):
        a = np.asarray(actions, dtype=np.float64).reshape(-1)
        return np.searchsorted(self.edges, a, side="right")

    def reset(self, rng, n=1):
        gen = as_generator(rng)
        return self.one_hot(gen.choice(self.n_states, size=n, p=self.initial))

    def step(self, states, actions, rng):
        gen = as_generator(rng)
        s = self.state_index(states)
        b = self.action_bin(actions)
        u = gen.random(len(s))
        o = (u[:, None] >= self._cum[s, b]).sum(axis=1)
        o = np.minimum(o, self.prob.shape[2] - 1)
        ns = self.next_state[s, b, o]
        r = self.reward[s, b, o]
        done = ns < 0
        # terminal transitions keep the current state as a placeholder successor
        nxt = self.one_hot(np.where(done, s, ns))
        return nxt, r, done


def make_chain5(step_reward=10.0, gamma=0.99, horizon=6):
    """Five-state chain. a >= 0 steps right earning ``step_reward``; a < 0 stays
    with reward 0. Stepping right from the last state terminates."""
    n = 5
    outcomes = []
    for s in range(n):
        stay = [(1.0, s, 0.0)]
        right = [(1.0, s + 1 if s + 1 < n else -1, step_reward)]
        outcomes.append([stay, right])
    initial = np.zeros(n)
    initial[0] = 1.0
    return TabularMdp("chain5", n, [0.0], outcomes, initial, horizon, gamma)


def make_bernoulli1(reward=10.0, p=0.5, gamma=0.99):
    """Single state; any action ends the episode with reward ``reward`` w.p. ``p``."""
    outcomes = [[[(p, -1, reward), (1.0 - p, -1, 0.0)]]]
    return TabularMdp("bernoulli1", 1, [], outcomes, [1.0], 1, gamma)


def make_mixture_recovery(n_states=6, gamma=0.99, horizon=30, p_end=1.0, slip=0.0, scale=10.0):
    """Line of states where forward progress pays and overshooting is punished.

    Action bins: a < -0.5 back, [-0.5, 0.5) idle, [0.5, 0.9) forward (slips
    in place w.p. ``slip``), a >= 0.9 overshoot (thrown back to state 0,
    reward -scale). Every step pays 2 * scale * s' / (n - 1) and ends the
    episode w.p. ``p_end``. Starts are uniform over states.

    The reward scale keeps atom gaps well above the unit Huber threshold of
    the quantile loss. The defaults make each episode a single decision, so
    returns carry no compounding behavior noise and the 0.9 quantile of the
    behavior return equals the best supported action value.
    """
    n = n_states
    top = n - 1

    def pay(ns):
        return 2.0 * scale * ns / top

    def branch(ns, reward, p):
        return [(p * (1.0 - p_end), ns, reward), (p * p_end, -1, reward)]

    outcomes = []
    for s in range(n):
        back = branch(max(s - 1, 0), pay(max(s - 1, 0)), 1.0)
        idle = branch(s, pay(s), 1.0)
        fwd_to = min(s + 1, top)
        forward = branch(fwd_to, pay(fwd_to), 1.0 - slip) + branch(s, pay(s), slip)
        overshoot = branch(0, -scale, 1.0)
        outcomes.append([back, idle, forward, overshoot])
    initial = np.full(n, 1.0 / n)
    return TabularMdp("mixture", n, [-0.5, 0.5, 0.9], outcomes, initial, horizon, gamma)


ENV_FACTORIES = {
    "pointmass1d": PointMass1D,
    "chain5": make_chain5,
    "bernoulli1": make_bernoulli1,
    "mixture": make_mixture_recovery,
}


def make_env(name, **kwargs):
    if name not in ENV_FACTORIES:
        raise ConfigurationError(f"unknown environment {name!r}; choose from {sorted(ENV_FACTORIES)}")
    return ENV_FACTORIES[name](**kwargs)


# --------------------------------------------------------------------------
# policies


class UniformPolicy:
    def __init__(self, low, high):
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)

    def __call__(self, states, rng):
        gen = as_generator(rng)
        return gen.uniform(self.low, self.high, size=(len(states), self.low.size))


class ConstantPolicy:
    def __init__(self, action):
        self.action = np.atleast_1d(np.asarray(action, dtype=np.float64))

    def __call__(self, states, rng=None):
        return np.tile(self.action, (len(states), 1))


class PdPolicy:
    """PointMass controller ``gain * expert(s) + N(0, noise^2)``, clipped to bounds."""

    def __init__(self, env, gain=1.0, noise=0.0):
        self.env = env
        self.gain = float(gain)
        self.noise = float(noise)

    def __call__(self, states, rng):
        a = self.gain * self.env.expert_action(states)
        if self.noise > 0:
            a = a + as_generator(rng).normal(0.0, self.noise, size=a.shape)
        return np.clip(a, self.env.action_low, self.env.action_high)


class DiscretePolicy:
    """State-dependent distribution over a finite set of scalar actions.

    ``probs`` has shape (n_states, len(actions)); used for tabular behaviors
    where dynamic programming needs the exact action support.
    """

    def __init__(self, env, actions, probs):
        self.env = env
        self.actions = np.asarray(actions, dtype=np.float64)
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim == 1:
            probs = np.tile(probs, (env.n_states, 1))
        if probs.shape != (env.n_states, self.actions.size) or not np.allclose(probs.sum(axis=1), 1.0):
            raise ConfigurationError("probs must be a row-stochastic (n_states, n_actions) matrix")
        self.probs = probs
        self._cum = np.cumsum(probs, axis=1)

    def __call__(self, states, rng):
        s = self.env.state_index(states)
        u = as_generator(rng).random(len(s))
        j = np.minimum((u[:, None] >= self._cum[s]).sum(axis=1), self.actions.size - 1)
        return self.actions[j][:, None]

    def bin_probs(self):
        """(n_states, n_bins) probability of each action bin."""
        out = np.zeros((self.env.n_states, self.env.n_bins))
        bins = self.env.action_bin(self.actions)
        for j, b in enumerate(bins):
            out[:, b] += self.probs[:, j]
        return out


class MixturePolicy:
    """Mixture of component policies.

    ``level="step"`` draws a component independently at every step (the
    mixture is itself Markov); ``level="episode"`` assigns one component per
    episode, which is how the episode generator uses it.
    """

    def __init__(self, components, weights, level="step"):
        self.components = list(components)
        self.weights = np.asarray(weights, dtype=np.float64)
        if len(self.components) != self.weights.size or not np.isclose(self.weights.sum(), 1.0):
            raise ConfigurationError("mixture weights must match components and sum to one")
        if level not in ("step", "episode"):
            raise ConfigurationError(f"unknown mixture level {level!r}")
        self.level = level

    def __call__(self, states, rng):
        gen = as_generator(rng)
        pick = gen.choice(len(self.components), size=len(states), p=self.weights)
        out = None
        for c, pol in enumerate(self.components):
            mask = pick == c
            if not mask.any():
                continue
            a = pol(states[mask], gen)
            if out is None:
                out = np.zeros((len(states), a.shape[1]))
            out[mask] = a
        return out


# --------------------------------------------------------------------------
# behavior specs


BEHAVIOR_TAGS = ("random", "expert", "medium", "medium_replay_mix", "medium_expert_mix", "mixture")


@dataclass
class BehaviorPolicySpec:
    """Which policies generated a dataset and how they are mixed.

    ``episode_components`` with ``weights`` form an episode-level mixture;
    ``schedule`` (used by medium-replay) instead fixes the component order
    with components getting equal consecutive blocks of episodes.
    """

    tag: str
    components: list
    weights: list
    schedule: bool = False
    names: list = field(default_factory=list)

    def __post_init__(self):
        if self.tag not in BEHAVIOR_TAGS:
            raise ConfigurationError(f"unknown behavior tag {self.tag!r}")
        if len(self.components) != len(self.weights) or not np.isclose(sum(self.weights), 1.0):
            raise ConfigurationError("behavior mixture weights must sum to 1")


def expert_policy(env):
    if isinstance(env, PointMass1D):
        return PdPolicy(env, 1.0, 0.0)
    if env.name == "mixture":
        return ConstantPolicy([0.7])
    if env.name == "chain5":
        return ConstantPolicy([0.5])
    return ConstantPolicy([0.0])


def random_policy(env):
    return UniformPolicy(env.action_low, env.action_high)


def behavior_spec(env, tag) -> BehaviorPolicySpec:
    """Construct the behavior for ``tag`` on ``env``.

    PointMass: ``medium`` is the expert with Gaussian action noise of
    0.3 * action range; ``medium_replay_mix`` runs noisy controllers of
    increasing gain in sequence; ``medium_expert_mix`` is a 50/50 episode
    mixture of medium and expert. Tabular envs: ``mixture`` is the step-level
    50/50 mixture of the expert action and its mirror image, which keeps the
    behavior Markov and therefore DP-solvable.
    """
    rand = random_policy(env)
    expert = expert_policy(env)
    if tag == "random":
        return BehaviorPolicySpec(tag, [rand], [1.0], names=["random"])
    if tag == "expert":
        return BehaviorPolicySpec(tag, [expert], [1.0], names=["expert"])
    if isinstance(env, PointMass1D):
        sigma = 0.3 * float(env.action_high[0] - env.action_low[0])
        medium = PdPolicy(env, 1.0, sigma)
        if tag == "medium":
            return BehaviorPolicySpec(tag, [medium], [1.0], names=["medium"])
        if tag == "medium_expert_mix":
            return BehaviorPolicySpec(tag, [medium, expert], [0.5, 0.5], names=["medium", "expert"])
        if tag == "medium_replay_mix":
            gains = [0.2, 0.4, 0.6, 0.8, 1.0]
            comps = [PdPolicy(env, g, sigma) for g in gains]
            return BehaviorPolicySpec(
                tag, comps, [1.0 / len(gains)] * len(gains), schedule=True, names=[f"gain{g}" for g in gains]
            )
    elif env.tabular:
        if tag in ("mixture", "medium_expert_mix"):
            a = float(expert.action[0])
            mix = DiscretePolicy(env, [a, -a], [0.5, 0.5])
            return BehaviorPolicySpec(tag, [mix], [1.0], names=["mixture"])
        if tag == "medium":
            return BehaviorPolicySpec(tag, [expert], [1.0], names=["expert"])
    raise ConfigurationError(f"behavior {tag!r} is not defined for env {env.name!r}")


def tabular_behavior(env, tag) -> DiscretePolicy:
    """The exact DiscretePolicy behind a tabular behavior tag."""
    spec = behavior_spec(env, tag)
    pol = spec.components[0]
    if isinstance(pol, DiscretePolicy):
        return pol
    if isinstance(pol, ConstantPolicy):
        return DiscretePolicy(env, pol.action, [1.0])
    if isinstance(pol, UniformPolicy):
        raise UsageError("uniform behavior has continuous support; use bin probabilities instead")
    raise UsageError(f"behavior {tag!r} has no tabular form")


# --------------------------------------------------------------------------
# rollouts


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.rewards)

    def discounted_return(self, gamma):
        return float(np.sum(self.rewards * gamma ** np.arange(len(self.rewards))))

    @property
    def total_return(self):
        return float(self.rewards.sum())


def _run(env, policies, rng, n, max_steps, start_states=None, first_actions=None):
    """Vectorised rollout of ``n`` episodes. ``policies`` is one callable or a
    list of ``n`` callables grouped per episode."""
    gen = as_generator(rng)
    states = env.reset(gen, n) if start_states is None else np.array(start_states, dtype=np.float64)
    if isinstance(policies, (list, tuple)):
        groups = {}
        for i, p in enumerate(policies):
            groups.setdefault(id(p), (p, []))[1].append(i)
        groups = [(p, np.array(ix)) for p, ix in groups.values()]
    else:
        groups = [(policies, np.arange(n))]
    alive = np.ones(n, dtype=bool)
    record = []
    for t in range(max_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        acts = np.zeros((n, env.action_dim))
        if t == 0 and first_actions is not None:
            acts[:] = first_actions
        else:
            for pol, members in groups:
                sel = members[alive[members]]
                if sel.size:
                    acts[sel] = pol(states[sel], gen)
        nxt, rew, done = env.step(states[idx], acts[idx], gen)
        record.append((idx, states[idx].copy(), acts[idx].copy(), rew, nxt, done))
        states = states.copy()
        states[idx] = nxt
        alive[idx[done]] = False
    return record


def rollout(env, policy, rng, max_steps=None, n_episodes=1, start_states=None):
    """Run ``n_episodes`` episodes and return a list of :class:`Trajectory`."""
    max_steps = env.horizon if max_steps is None else int(max_steps)
    record = _run(env, policy, rng, n_episodes, max_steps, start_states)
    buckets = [[] for _ in range(n_episodes)]
    for idx, s, a, r, ns, d in record:
        for j, e in enumerate(idx):
            buckets[e].append((s[j], a[j], r[j], ns[j], d[j]))
    trajs = []
    for rows in buckets:
        s, a, r, ns, d = zip(*rows)
        trajs.append(Trajectory(np.array(s), np.array(a), np.array(r), np.array(ns), np.array(d, dtype=bool)))
    return trajs


def evaluate_policy(env, policy, rng, n_episodes=100):
    """Mean and std of undiscounted returns over ``n_episodes`` horizon-length episodes."""
    record = _run(env, policy, rng, n_episodes, env.horizon)
    totals = np.zeros(n_episodes)
    for idx, _, _, r, _, _ in record:
        totals[idx] += r
    return float(totals.mean()), float(totals.std()), totals


# --------------------------------------------------------------------------
# datasets


def reference_scores(env, seed=12345, n_episodes=1000):
    """Undiscounted random and expert returns used for score normalization."""
    j_rand = evaluate_policy(env, random_policy(env), np.random.default_rng([seed, 0]), n_episodes)[0]
    j_exp = evaluate_policy(env, expert_policy(env), np.random.default_rng([seed, 1]), n_episodes)[0]
    return j_rand, j_exp


def generate_dataset(env, spec, episodes, rng, horizon=None) -> TransitionDataset:
    """Roll out ``spec`` for ``episodes`` episodes and pack them into a dataset.

    Metadata records the env, behavior tag, discount, per-episode component
    ids and the random/expert reference returns.
    """
    if episodes < 1:
        raise UsageError("episodes must be >= 1")
    gen = as_generator(rng)
    if isinstance(spec, str):
        spec = behavior_spec(env, spec)
    k = len(spec.components)
    if spec.schedule:
        comp = np.repeat(np.arange(k), int(np.ceil(episodes / k)))[:episodes]
    else:
        comp = gen.choice(k, size=episodes, p=np.asarray(spec.weights))
    policies = [spec.components[c] for c in comp]
    max_steps = env.horizon if horizon is None else int(horizon)
    record = _run(env, policies, gen, episodes, max_steps)
    buckets = [[] for _ in range(episodes)]
    for idx, s, a, r, ns, d in record:
        for j, e in enumerate(idx):
            buckets[e].append((s[j], a[j], r[j], ns[j], d[j]))
    cols = [[], [], [], [], []]
    starts = []
    pos = 0
    for rows in buckets:
        starts.append(pos)
        pos += len(rows)
        for c, vals in zip(cols, zip(*rows)):
            c.extend(vals)
    j_rand, j_exp = reference_scores(env)
    meta = {
        "env": env.name,
        "behavior": spec.tag,
        "gamma": env.gamma,
        "horizon": max_steps,
        "random_score": j_rand,
        "expert_score": j_exp,
        "episode_components": [int(c) for c in comp],
        "component_names": list(spec.names),
    }
    return TransitionDataset(
        np.array(cols[0]),
        np.array(cols[1]),
        np.array(cols[2]),
        np.array(cols[3]),
        np.array(cols[4], dtype=bool),
        np.array(starts),
        meta,
    )


def normalized_score(ret, metadata):
    """100 * (J - J_random) / (J_expert - J_random)."""
    jr = metadata.get("random_score")
    je = metadata.get("expert_score")
    if jr is None or je is None or not np.isfinite([jr, je]).all() or jr == je:
        raise UsageError("metadata needs distinct finite random_score and expert_score")
    return 100.0 * (np.asarray(ret, dtype=np.float64) - jr) / (je - jr)


# --------------------------------------------------------------------------
# exact oracles


@dataclass
class DpSolution:
    V: np.ndarray
    Q: np.ndarray
    support: np.ndarray
    support_q: np.ndarray
    beta_star: np.ndarray
    residual: float
    iterations: int

    def q_of(self, env, states, actions):
        return self.Q[env.state_index(states), env.action_bin(actions)]


def solve_dp(env, behavior, tol=1e-10, max_iter=1_000_000) -> DpSolution:
    """Policy evaluation of ``behavior`` by fixed-point iteration.

    Returns V^beta over states, Q^beta over (state, action bin), Q^beta on the
    behavior's own action support and the greedy behavioral action
    beta*(s) = argmax over supported actions (ties -> first listed action).
    """
    if not getattr(env, "tabular", False):
        raise UsageError(f"{env.name} is not tabular; dynamic programming needs a finite state set")
    if not isinstance(behavior, DiscretePolicy):
        raise UsageError("solve_dp needs a DiscretePolicy behavior with finite support")
    pb = behavior.bin_probs()
    cont = env.next_state >= 0
    ns = np.where(cont, env.next_state, 0)
    V = np.zeros(env.n_states)
    residual = np.inf
    it = 0
    while residual >= tol and it < max_iter:
        Q = (env.prob * (env.reward + env.gamma * cont * V[ns])).sum(axis=2)
        V_new = (pb * Q).sum(axis=1)
        residual = float(np.max(np.abs(V_new - V)))
        V = V_new
        it += 1
    Q = (env.prob * (env.reward + env.gamma * cont * V[ns])).sum(axis=2)
    residual = float(np.max(np.abs((pb * Q).sum(axis=1) - V)))
    sup_bins = env.action_bin(behavior.actions)
    support_q = Q[:, sup_bins]
    masked = np.where(behavior.probs > 0, support_q, -np.inf)
    beta_star = behavior.actions[np.argmax(masked, axis=1)]
    return DpSolution(V, Q, behavior.actions.copy(), support_q, beta_star, residual, it)


@dataclass
class MonteCarloResult:
    mean: np.ndarray
    std: np.ndarray
    stderr: np.ndarray
    quantiles: dict
    samples: np.ndarray | None = None


def monte_carlo_value(env, policy, states, rng, n_rollouts=10_000, actions=None, gamma=None,
                      tol=1e-4, max_steps=None, keep_samples=False, chunk=2_000_000):
    """Discounted-return statistics from ``states`` (optionally forcing the first action).

    Rollouts ignore the episode horizon and run until termination or until
    the discount falls below ``tol``, matching the infinite-horizon values the
    learners bootstrap toward.
    """
    if n_rollouts < 1:
        raise UsageError("n_rollouts must be >= 1")
    gen = as_generator(rng)
    gamma = env.gamma if gamma is None else float(gamma)
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if max_steps is None:
        max_steps = 1 if gamma == 0 else int(np.ceil(np.log(tol) / np.log(gamma))) + 1
    m = len(states)
    returns = np.zeros((m, n_rollouts))
    per_chunk = max(1, chunk // n_rollouts)
    for lo in range(0, m, per_chunk):
        hi = min(m, lo + per_chunk)
        st = np.repeat(states[lo:hi], n_rollouts, axis=0)
        fa = None if actions is None else np.repeat(np.atleast_2d(actions)[lo:hi], n_rollouts, axis=0)
        record = _run(env, policy, gen, len(st), max_steps, start_states=st, first_actions=fa)
        g = np.zeros(len(st))
        disc = 1.0
        for idx, _, _, r, _, _ in record:
            g[idx] += disc * r
            disc *= gamma
        returns[lo:hi] = g.reshape(hi - lo, n_rollouts)
    q = {p: np.quantile(returns, p, axis=1, method="inverted_cdf") for p in (0.1, 0.5, 0.9)}
    std = returns.std(axis=1, ddof=1) if n_rollouts > 1 else np.zeros(m)
    return MonteCarloResult(
        returns.mean(axis=1), std, std / np.sqrt(n_rollouts), q, returns if keep_samples else None
    )


def trajectory_log_prob(env, behavior, traj, method="sum"):
    """log p(trajectory) under ``behavior`` on a tabular env.

    ``method="sum"`` accumulates per-step log terms; ``"product"`` multiplies
    raw probabilities and takes one log at the end.
    """
    s_idx = env.state_index(traj.states)
    ns_idx = env.state_index(traj.next_states)
    terms = [env.initial[s_idx[0]]]
    for t in range(len(traj)):
        s = s_idx[t]
        a = traj.actions[t, 0]
        j = np.flatnonzero(np.isclose(behavior.actions, a))
        p_act = behavior.probs[s, j].sum() if j.size else 0.0
        b = env.action_bin([a])[0]
        target = -1 if traj.dones[t] else ns_idx[t]
        match = (env.next_state[s, b] == target) & np.isclose(env.reward[s, b], traj.rewards[t])
        p_trans = env.prob[s, b][match].sum()
        terms.extend((p_act, p_trans))
    terms = np.asarray(terms)
    if method == "sum":
        with np.errstate(divide="ignore"):
            return float(np.sum(np.log(terms)))
    return float(np.log(np.prod(terms)))
