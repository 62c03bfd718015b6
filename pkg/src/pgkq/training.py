"""Per-iteration training step for the four algorithm variants.

Modes (combined with a vpg or ppo base loss):

    plain  - generate n episodes, evaluate all of them, ordinary update
    large  - same but with the big batch of N episodes
    kq     - generate N, compress to n by kernel quadrature under the
             rewards-kind episode kernel, evaluate only the support, and
             use the two-term non-centered objective with the GP mean net
    kq-no-mean - same compression under the returns-kind kernel; the
             centered objective sees only the weighted support

Reward evaluations flow exclusively through evaluate_rewards against the
state's meter, which is what the budget acceptance checks read.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .episodes import (Environment, RewardMeter, attach_returns,
                       evaluate_rewards, rollout_batch)
from .errors import ConfigError
from .gp import GPModel, fake_returns, init_gp, update_gp
from .losses import (centered_quadrature_loss, noncentered_quadrature_loss,
                     ppo_loss, vpg_loss)
from .nets import AdamState, MlpParams, adam_step, mlp_backward, mlp_forward
from .policy import (Baseline, GaussianPolicy, advantages, init_baseline,
                     init_policy)
from .quadrature import QuadratureRule, build_gram, rule_from_gram, wce_squared

MODES = ("plain", "kq", "kq-no-mean", "large")


@dataclass
class AlgoVariant:
    base: str  # "vpg" | "ppo"
    mode: str
    clip_eps: float = 0.2
    ppo_epochs: int = 4
    advantage_kind: str = "default"

    def __post_init__(self):
        if self.base not in ("vpg", "ppo"):
            raise ConfigError(f"unknown base loss {self.base!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")

    @property
    def name(self) -> str:
        return f"{self.base}-{self.mode}"


def parse_algo(name: str) -> AlgoVariant:
    """vpg-plain, ppo-kq, vpg-kq-no-mean, ..."""
    base, _, mode = name.partition("-")
    return AlgoVariant(base, mode)


@dataclass
class TrainParams:
    big_batch: int = 64
    small_batch: int = 8
    gamma: float = 0.995
    lr: float = 3e-4
    gp_minibatch: int = 256
    kernel_loss_form: str = "nlml"

    def __post_init__(self):
        if not 1 <= self.small_batch <= self.big_batch:
            raise ConfigError("need 1 <= small_batch <= big_batch")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.lr < 0.0:
            raise ConfigError("learning rate must be nonnegative")


@dataclass
class IterationRecord:
    iteration: int
    env_steps: int
    reward_evals: int
    wce_sq: Optional[float] = None
    mean_total_reward: Optional[float] = None
    seed: Optional[int] = None


@dataclass
class TrainState:
    policy: GaussianPolicy
    baseline: Baseline
    policy_opt: AdamState
    baseline_opt: AdamState
    meter: RewardMeter = field(default_factory=RewardMeter)
    gp: Optional[GPModel] = None
    gp_kernel_opt: Optional[AdamState] = None
    gp_mean_opt: Optional[AdamState] = None
    env_steps: int = 0
    iteration: int = 0


def init_train_state(env: Environment, variant: AlgoVariant,
                     params: TrainParams, rng) -> TrainState:
    policy = init_policy(env.state_dim, env.action_dim, rng)
    baseline = init_baseline(env.state_dim, rng)
    state = TrainState(
        policy=policy, baseline=baseline,
        policy_opt=AdamState.for_arrays(policy.arrays()),
        baseline_opt=AdamState.for_arrays(baseline.value_net.arrays()))
    if variant.mode in ("kq", "kq-no-mean"):
        kind = "rewards" if variant.mode == "kq" else "returns"
        gp = init_gp(kind, env.state_dim + env.action_dim, params.gamma, rng)
        state.gp = gp
        state.gp_kernel_opt = AdamState.for_arrays(gp.kernel.arrays())
        if gp.mean_net is not None:
            state.gp_mean_opt = AdamState.for_arrays(gp.mean_net.arrays())
    return state


def _policy_update(state: TrainState, loss_fn, steps: int, lr: float):
    last = None
    for _ in range(steps):
        loss, grads = loss_fn()
        neg = [-g for g in grads.arrays()]
        state.policy = GaussianPolicy.from_arrays(
            adam_step(state.policy_opt, state.policy.arrays(), neg, lr))
        last = loss
    return last


def _baseline_update(state: TrainState, episodes, targets, weights,
                     lr: float) -> float:
    """One Adam step on the weighted mean of squared value residuals."""
    S = np.concatenate([ep.states for ep in episodes])
    y = np.concatenate(targets)
    w = np.concatenate([np.full(ep.horizon, wi)
                        for ep, wi in zip(episodes, weights)])
    denom = float(w.sum())
    if denom <= 0.0:
        raise ConfigError("baseline update needs positive total weight")
    v = mlp_forward(state.baseline.value_net, S)[:, 0]
    resid = v - y
    loss = float((w * resid * resid).sum() / denom)
    up = (2.0 * w * resid / denom)[:, None]
    grads, _ = mlp_backward(state.baseline.value_net, S, up)
    state.baseline = Baseline(MlpParams.from_arrays(adam_step(
        state.baseline_opt, state.baseline.value_net.arrays(), grads, lr)))
    return loss


def train_iteration(variant: AlgoVariant, params: TrainParams,
                    state: TrainState, env: Environment,
                    rng) -> IterationRecord:
    """One generate / compress / evaluate / update cycle. Mutates `state`
    and returns the iteration's record (probe reward left unfilled)."""
    mode = variant.mode
    count = params.small_batch if mode == "plain" else params.big_batch
    episodes = rollout_batch(env, state.policy, count, rng)
    state.env_steps += sum(ep.horizon for ep in episodes)

    wce_sq = None
    if mode in ("kq", "kq-no-mean"):
        gram = build_gram(state.gp.episode_kernel(), episodes)
        rule = rule_from_gram(gram, params.small_batch)
        wce_sq = wce_squared(rule, gram)
        support = [episodes[i] for i in rule.indices]
    else:
        rule = QuadratureRule.uniform(count)
        support = episodes

    for ep in support:
        evaluate_rewards(env, ep, state.meter)
        attach_returns(ep, params.gamma)

    steps = variant.ppo_epochs if variant.base == "ppo" else 1
    if mode == "kq":
        cache = [fake_returns(state.gp.mean_net, ep, params.gamma)
                 for ep in episodes]

        def loss_fn():
            return noncentered_quadrature_loss(
                variant.base, state.policy, rule, episodes, state.gp,
                state.baseline, variant.advantage_kind, variant.clip_eps,
                fake_return_cache=cache)
    else:
        def loss_fn():
            adv = [advantages(variant.advantage_kind, ep, state.baseline,
                              params.gamma) for ep in support]
            if mode == "kq-no-mean":
                return centered_quadrature_loss(
                    variant.base, state.policy, rule, support, adv,
                    params.gamma, variant.clip_eps)
            base = vpg_loss if variant.base == "vpg" else ppo_loss
            args = (state.policy, support, adv, rule.weights, params.gamma)
            return base(*args) if variant.base == "vpg" \
                else ppo_loss(*args, variant.clip_eps)

    _policy_update(state, loss_fn, steps, params.lr)

    if mode == "kq":
        # fit the value net to the modeled returns over the whole batch
        _baseline_update(state, episodes, cache,
                         np.full(count, 1.0 / count), params.lr)
    else:
        _baseline_update(state, support, [ep.returns for ep in support],
                         rule.weights, params.lr)

    if mode in ("kq", "kq-no-mean"):
        state.gp = update_gp(state.gp, rule.weights, support, state.baseline,
                             params.lr, params.gp_minibatch, rng,
                             kernel_opt=state.gp_kernel_opt,
                             mean_opt=state.gp_mean_opt,
                             form=params.kernel_loss_form)

    state.iteration += 1
    return IterationRecord(iteration=state.iteration,
                           env_steps=state.env_steps,
                           reward_evals=state.meter.episodes_evaluated,
                           wce_sq=wce_sq)
