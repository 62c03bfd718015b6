"""Environments, episodes, and reward-free generation.

The central contract of this module: generating an episode never calls the
reward function. Rewards are attached later by `evaluate_rewards`, which is
also the only place the RewardMeter budget counters move. Training code that
wants to stay inside a reward budget just has to control what it passes to
`evaluate_rewards`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ContractError

Array = np.ndarray


@dataclass
class StateActionPair:
    state: Array
    action: Array

    def as_vector(self) -> Array:
        return np.concatenate([np.atleast_1d(self.state),
                               np.atleast_1d(self.action)])


@dataclass
class Episode:
    """One trajectory. states (T, ds), actions (T, da), logprobs (T,).

    rewards/returns stay None until `evaluate_rewards` / `attach_returns`
    fill them; everything else is fixed at construction.
    """

    states: Array
    actions: Array
    logprobs: Array
    rewards: Optional[Array] = None
    returns: Optional[Array] = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.logprobs = np.asarray(self.logprobs, dtype=np.float64)
        T = self.states.shape[0]
        if T < 1:
            raise ConfigError("episode must contain at least one step")
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise ConfigError("states and actions must be 2-d arrays")
        if self.actions.shape[0] != T or self.logprobs.shape != (T,):
            raise ConfigError("states/actions/logprobs lengths differ")

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    def pair(self, t: int) -> StateActionPair:
        return StateActionPair(self.states[t], self.actions[t])

    def zs(self) -> Array:
        """(T, ds+da) stacked state-action vectors."""
        return np.concatenate([self.states, self.actions], axis=1)

    def total_reward(self) -> float:
        if self.rewards is None:
            raise ContractError("rewards not evaluated")
        return float(self.rewards.sum())


@dataclass
class RewardMeter:
    """Budget counters; only evaluate_rewards may increment them."""

    episodes_evaluated: int = 0
    steps_evaluated: int = 0


@dataclass
class Environment:
    """Desk-scale environment. Reward evaluation is separated from the
    dynamics on purpose; rollouts only ever touch dynamics, the initial
    sampler, and the termination predicate.

    The *_batch hooks are optional vectorized versions operating on (B, .)
    arrays; `rollout_batch` uses them when present.
    """

    name: str
    state_dim: int
    action_dim: int
    max_horizon: int
    dynamics: Callable
    initial_sampler: Callable
    reward_fn: Callable
    termination_fn: Callable
    dynamics_batch: Optional[Callable] = None
    initial_batch: Optional[Callable] = None
    reward_batch: Optional[Callable] = None

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1 or self.max_horizon < 1:
            raise ConfigError("environment dims and horizon must be positive")


def rollout(env: Environment, policy, rng) -> Episode:
    """Generate one reward-free episode.

    `policy` needs a sample(state, rng) -> (action, logprob) method.
    """
    s = np.asarray(env.initial_sampler(rng), dtype=np.float64)
    if s.shape != (env.state_dim,):
        raise ConfigError(f"initial state shape {s.shape} from {env.name}")
    states, actions, logps = [], [], []
    for _ in range(env.max_horizon):
        a, lp = policy.sample(s, rng)
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (env.action_dim,):
            raise ConfigError(f"policy action shape {a.shape} does not match "
                              f"{env.name} action dim {env.action_dim}")
        states.append(s)
        actions.append(a)
        logps.append(float(lp))
        s = np.asarray(env.dynamics(s, a, rng), dtype=np.float64)
        if env.termination_fn(s):
            break
    return Episode(np.array(states), np.array(actions), np.array(logps))


def rollout_batch(env: Environment, policy, count: int, rng) -> list[Episode]:
    """Generate `count` reward-free episodes.

    When the environment provides batch hooks the episodes advance in
    lockstep from a single generator (one (count, .) draw per step), which
    is the reproducible unit the harness relies on. Without hooks this
    falls back to independent single rollouts on spawned streams. The two
    paths draw differently, so a batch is not the concatenation of single
    rollouts; both are deterministic given the seed.
    """
    if count < 1:
        raise ConfigError("count must be positive")
    if env.dynamics_batch is None or env.initial_batch is None \
            or not hasattr(policy, "sample_batch"):
        return [rollout(env, policy, child) for child in rng.spawn(count)]

    S = np.asarray(env.initial_batch(count, rng), dtype=np.float64)
    if S.shape != (count, env.state_dim):
        raise ConfigError(f"initial_batch shape {S.shape} from {env.name}")
    lengths = np.zeros(count, dtype=int)
    alive = np.ones(count, dtype=bool)
    traj_s, traj_a, traj_lp = [], [], []
    for _ in range(env.max_horizon):
        A, LP = policy.sample_batch(S, rng)
        A = np.asarray(A, dtype=np.float64)
        if A.shape != (count, env.action_dim):
            raise ConfigError("policy action batch shape mismatch")
        traj_s.append(S.copy())
        traj_a.append(A)
        traj_lp.append(np.asarray(LP, dtype=np.float64))
        lengths[alive] += 1
        S = np.asarray(env.dynamics_batch(S, A, rng), dtype=np.float64)
        done = np.array([env.termination_fn(s) for s in S])
        alive &= ~done
        if not alive.any():
            break
    SS = np.stack(traj_s)  # (T, B, ds)
    AA = np.stack(traj_a)
    LL = np.stack(traj_lp)
    return [Episode(SS[:lengths[i], i], AA[:lengths[i], i], LL[:lengths[i], i])
            for i in range(count)]


def evaluate_rewards(env: Environment, episode: Episode,
                     meter: RewardMeter) -> Episode:
    """Fill episode.rewards and charge the meter. Evaluating the same
    episode twice is a contract violation (it would double-count budget)."""
    if episode.rewards is not None:
        raise ContractError("episode rewards already evaluated")
    if env.reward_batch is not None:
        r = np.asarray(env.reward_batch(episode.states, episode.actions),
                       dtype=np.float64)
    else:
        r = np.array([env.reward_fn(s, a)
                      for s, a in zip(episode.states, episode.actions)],
                     dtype=np.float64)
    if r.shape != (episode.horizon,):
        raise ConfigError("reward function returned a bad shape")
    episode.rewards = r
    meter.episodes_evaluated += 1
    meter.steps_evaluated += episode.horizon
    return episode


def discounted_returns(rewards, gamma: float) -> Array:
    """R_t = sum_{u>=t} gamma^(u-t) r_u by backward recursion."""
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.shape[0] < 1:
        raise ConfigError("rewards must be a nonempty 1-d array")
    out = np.empty_like(r)
    acc = 0.0
    for t in range(r.shape[0] - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


def attach_returns(episode: Episode, gamma: float) -> Episode:
    if episode.rewards is None:
        raise ContractError("evaluate rewards before computing returns")
    episode.returns = discounted_returns(episode.rewards, gamma)
    return episode


def dump_episodes(episodes, path) -> None:
    """Line-delimited JSON, one record per timestep, fields in order:
    episode_index, t, state, action, logprob, reward (omitted when the
    episode has no rewards)."""
    with open(path, "w") as fh:
        for i, ep in enumerate(episodes):
            for t in range(ep.horizon):
                rec = {"episode_index": i, "t": t,
                       "state": list(ep.states[t]),
                       "action": list(ep.actions[t]),
                       "logprob": float(ep.logprobs[t])}
                if ep.rewards is not None:
                    rec["reward"] = float(ep.rewards[t])
                fh.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# desk environments


def _never(_s) -> bool:
    return False


def _lqr1d() -> Environment:
    def dynamics(s, a, rng):
        return s + 0.1 * a + 0.05 * rng.standard_normal(1)

    def dynamics_batch(S, A, rng):
        return S + 0.1 * A + 0.05 * rng.standard_normal(S.shape)

    def reward_fn(s, a):
        return -(s[0] ** 2 + 0.01 * a[0] ** 2)

    def reward_batch(S, A):
        return -(S[:, 0] ** 2 + 0.01 * A[:, 0] ** 2)

    return Environment(
        name="lqr1d", state_dim=1, action_dim=1, max_horizon=50,
        dynamics=dynamics, initial_sampler=lambda rng: rng.standard_normal(1),
        reward_fn=reward_fn, termination_fn=_never,
        dynamics_batch=dynamics_batch,
        initial_batch=lambda n, rng: rng.standard_normal((n, 1)),
        reward_batch=reward_batch)


_PEND_G, _PEND_M, _PEND_L, _PEND_DT = 10.0, 1.0, 1.0, 0.05
_PEND_MAX_SPEED, _PEND_MAX_TORQUE = 8.0, 2.0


def _pendulum() -> Environment:
    """Torque-limited swing-up. State (cos th, sin th, omega); the torque
    clip lives inside dynamics and reward so the policy is unconstrained."""

    def step(th, om, u):
        u = np.clip(u, -_PEND_MAX_TORQUE, _PEND_MAX_TORQUE)
        acc = (3.0 * _PEND_G / (2.0 * _PEND_L) * np.sin(th)
               + 3.0 / (_PEND_M * _PEND_L ** 2) * u)
        om2 = np.clip(om + acc * _PEND_DT, -_PEND_MAX_SPEED, _PEND_MAX_SPEED)
        th2 = th + om2 * _PEND_DT
        return th2, om2

    def dynamics(s, a, rng):
        th = math.atan2(s[1], s[0])
        th2, om2 = step(th, s[2], a[0])
        return np.array([np.cos(th2), np.sin(th2), om2])

    def dynamics_batch(S, A, rng):
        th = np.arctan2(S[:, 1], S[:, 0])
        th2, om2 = step(th, S[:, 2], A[:, 0])
        return np.stack([np.cos(th2), np.sin(th2), om2], axis=1)

    def cost(th, om, u):
        u = np.clip(u, -_PEND_MAX_TORQUE, _PEND_MAX_TORQUE)
        return -(th ** 2 + 0.1 * om ** 2 + 0.001 * u ** 2)

    def reward_fn(s, a):
        return float(cost(math.atan2(s[1], s[0]), s[2], a[0]))

    def reward_batch(S, A):
        return cost(np.arctan2(S[:, 1], S[:, 0]), S[:, 2], A[:, 0])

    def initial_sampler(rng):
        th = rng.uniform(-np.pi, np.pi)
        om = rng.uniform(-1.0, 1.0)
        return np.array([np.cos(th), np.sin(th), om])

    def initial_batch(n, rng):
        th = rng.uniform(-np.pi, np.pi, size=n)
        om = rng.uniform(-1.0, 1.0, size=n)
        return np.stack([np.cos(th), np.sin(th), om], axis=1)

    return Environment(
        name="pendulum", state_dim=3, action_dim=1, max_horizon=200,
        dynamics=dynamics, initial_sampler=initial_sampler,
        reward_fn=reward_fn, termination_fn=_never,
        dynamics_batch=dynamics_batch, initial_batch=initial_batch,
        reward_batch=reward_batch)


def _chain() -> Environment:
    """10-position random walk with a continuous push action. P(step right)
    = sigmoid(clip(a, -4, 4)); reward 1 at the right end, 0.01 at the left."""

    def p_right(A):
        return 1.0 / (1.0 + np.exp(-np.clip(A, -4.0, 4.0)))

    def dynamics(s, a, rng):
        move = 1.0 if rng.uniform() < p_right(a[0]) else -1.0
        return np.clip(s + move, 0.0, 9.0)

    def dynamics_batch(S, A, rng):
        u = rng.uniform(size=S.shape[0])
        move = np.where(u < p_right(A[:, 0]), 1.0, -1.0)
        return np.clip(S + move[:, None], 0.0, 9.0)

    def reward_fn(s, a):
        if s[0] >= 8.5:
            return 1.0
        return 0.01 if s[0] <= 0.5 else 0.0

    def reward_batch(S, A):
        return np.where(S[:, 0] >= 8.5, 1.0, np.where(S[:, 0] <= 0.5, 0.01, 0.0))

    return Environment(
        name="chain", state_dim=1, action_dim=1, max_horizon=20,
        dynamics=dynamics, initial_sampler=lambda rng: np.zeros(1),
        reward_fn=reward_fn, termination_fn=_never,
        dynamics_batch=dynamics_batch,
        initial_batch=lambda n, rng: np.zeros((n, 1)),
        reward_batch=reward_batch)


_ENV_FACTORIES = {"lqr1d": _lqr1d, "pendulum": _pendulum, "chain": _chain}


def make_env(env_id: str) -> Environment:
    try:
        return _ENV_FACTORIES[env_id]()
    except KeyError:
        known = ", ".join(sorted(_ENV_FACTORIES))
        raise ConfigError(f"unknown environment {env_id!r} (known: {known})")
