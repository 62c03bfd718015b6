"""Policy objectives and their gradients.

All losses are objectives to *maximize*; the training loop feeds their
negated gradients to Adam. Advantages enter as fixed arrays (no gradient
flows through them), matching the score-function estimator

    L_vpg = sum_i w_i sum_t gamma^t A_t(e_i) log pi(a_t | s_t)

and its clipped-ratio variant

    L_ppo = sum_i w_i sum_t gamma^t min(q_t A_t, clip(q_t, 1-eps, 1+eps) A_t)

with q_t the probability ratio against the behavior policy that generated
the episodes (whose logprobs are stored on them).
"""
from __future__ import annotations

import numpy as np

from .episodes import Episode
from .errors import ConfigError, ContractError
from .gp import GPModel, fake_returns
from .policy import (Baseline, GaussianPolicy, PolicyGrads, baseline_values,
                     fake_advantages, logprob_batch, logprob_grads)
from .quadrature import QuadratureRule

BASE_LOSSES = ("vpg", "ppo")


def _stack(episodes, advantages, weights, gamma):
    if not (len(episodes) == len(advantages) == len(weights)):
        raise ConfigError("episodes, advantages and weights must align")
    S, A, C, OLD = [], [], [], []
    for ep, adv, w in zip(episodes, advantages, weights):
        adv = np.asarray(adv, dtype=np.float64)
        if adv.shape != (ep.horizon,):
            raise ConfigError("advantage length must match the episode")
        S.append(ep.states)
        A.append(ep.actions)
        OLD.append(ep.logprobs)
        C.append(w * gamma ** np.arange(ep.horizon) * adv)
    return (np.concatenate(S), np.concatenate(A), np.concatenate(C),
            np.concatenate(OLD))


def vpg_loss(policy: GaussianPolicy, episodes, advantages, weights,
             gamma: float):
    """Returns (loss, PolicyGrads)."""
    S, A, C, _ = _stack(episodes, advantages, weights, gamma)
    lp = logprob_batch(policy, S, A)
    loss = float(C @ lp)
    return loss, logprob_grads(policy, S, A, C)


def ppo_loss(policy: GaussianPolicy, episodes, advantages, weights,
             gamma: float, clip_eps: float):
    """Clipped-ratio objective; at the behavior policy itself every ratio
    is 1 and gradients coincide with vpg_loss."""
    if clip_eps <= 0.0:
        raise ConfigError("clip_eps must be positive")
    S, A, C, old = _stack(episodes, advantages, weights, gamma)
    lp = logprob_batch(policy, S, A)
    q = np.exp(lp - old)
    qc = np.clip(q, 1.0 - clip_eps, 1.0 + clip_eps)
    raw = C * q
    clipped = C * qc
    take_raw = raw <= clipped
    loss = float(np.where(take_raw, raw, clipped).sum())
    # d/dtheta of q is q * dlogpi; the clipped branch is flat
    coeff = np.where(take_raw, C * q,
                     np.where((q > 1.0 - clip_eps) & (q < 1.0 + clip_eps),
                              C * q, 0.0))
    return loss, logprob_grads(policy, S, A, coeff)


def _base_loss(base: str, policy, episodes, advantages, weights, gamma,
               clip_eps):
    if base == "vpg":
        return vpg_loss(policy, episodes, advantages, weights, gamma)
    if base == "ppo":
        return ppo_loss(policy, episodes, advantages, weights, gamma,
                        clip_eps)
    raise ConfigError(f"unknown base loss {base!r}")


def centered_quadrature_loss(base: str, policy: GaussianPolicy,
                             rule: QuadratureRule, support_episodes,
                             advantages, gamma: float,
                             clip_eps: float = 0.2):
    """Quadrature-weighted base loss over the support episodes only
    (aligned with rule.weights). Advantages come from evaluated rewards,
    so only support episodes ever need reward evaluation."""
    if len(support_episodes) != rule.size:
        raise ContractError("support episodes must align with the rule")
    for ep in support_episodes:
        if ep.returns is None:
            raise ContractError("support episode missing evaluated returns")
    return _base_loss(base, policy, support_episodes, advantages,
                      rule.weights, gamma, clip_eps)


def noncentered_quadrature_loss(base: str, policy: GaussianPolicy,
                                rule: QuadratureRule, episodes,
                                gp: GPModel, baseline: Baseline,
                                advantage_kind: str = "default",
                                clip_eps: float = 0.2,
                                fake_return_cache=None):
    """Two-term objective for the rewards-kind GP:

        sum_{i in support} w_i L_base[R - R_fake](e_i)
      + (1/N) sum_{all i}      L_base[A_fake](e_i)

    The first term sees true returns only on the support; the second term
    uses modeled returns everywhere and so needs no reward evaluations.
    `fake_return_cache` (list aligned with episodes) avoids recomputing
    the mean net when the caller already has the values.
    """
    if gp.kind != "rewards":
        raise ConfigError("non-centered loss needs a rewards-kind gp")
    N = len(episodes)
    if rule.batch_size != N:
        raise ContractError("rule was built for a different batch")
    gamma = gp.gamma
    if fake_return_cache is None:
        fake_return_cache = [fake_returns(gp.mean_net, ep, gamma)
                             for ep in episodes]
    support = [episodes[i] for i in rule.indices]
    adv_true = []
    for ep, i in zip(support, rule.indices):
        if ep.returns is None:
            raise ContractError("support episode missing evaluated returns")
        adv_true.append(ep.returns - fake_return_cache[i])
    loss1, grads = _base_loss(base, policy, support, adv_true, rule.weights,
                              gamma, clip_eps)
    adv_fake = [fake_advantages(advantage_kind, fake_return_cache[i],
                                baseline_values(baseline, ep.states), gamma)
                for i, ep in enumerate(episodes)]
    loss2, grads2 = _base_loss(base, policy, episodes, adv_fake,
                               np.full(N, 1.0 / N), gamma, clip_eps)
    return loss1 + loss2, grads.add_(grads2)
