"""Diagonal-Gaussian policy, value baseline, advantage estimators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episodes import Episode
from .errors import ConfigError, ContractError
from .nets import Arrays, MlpParams, init_mlp, mlp_backward, mlp_forward

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianPolicy:
    """a ~ N(mean_net(s), diag(exp(2 log_std))); log_std is state-independent
    and learned alongside the mean net."""

    mean_net: MlpParams
    log_std: np.ndarray

    def __post_init__(self):
        self.log_std = np.asarray(self.log_std, dtype=np.float64)
        if self.log_std.shape != (self.mean_net.out_dim,):
            raise ConfigError("log_std shape must match mean net output")

    @property
    def state_dim(self) -> int:
        return self.mean_net.in_dim

    @property
    def action_dim(self) -> int:
        return self.mean_net.out_dim

    def arrays(self) -> Arrays:
        return self.mean_net.arrays() + [self.log_std]

    @classmethod
    def from_arrays(cls, arrays: Arrays) -> "GaussianPolicy":
        return cls(MlpParams.from_arrays(arrays[:-1]), arrays[-1])

    def sample(self, state, rng):
        mu = mlp_forward(self.mean_net, state)
        a = mu + np.exp(self.log_std) * rng.standard_normal(self.action_dim)
        return a, logprob(self, state, a)

    def sample_batch(self, states, rng):
        mu = mlp_forward(self.mean_net, states)
        z = rng.standard_normal(mu.shape)
        a = mu + np.exp(self.log_std) * z
        return a, _logprob_from_mean(mu, a, self.log_std)


def init_policy(state_dim: int, action_dim: int, rng,
                hidden=(64, 64)) -> GaussianPolicy:
    net = init_mlp([state_dim, *hidden, action_dim], rng)
    return GaussianPolicy(net, np.zeros(action_dim))


def _logprob_from_mean(mu, a, log_std):
    diff = np.asarray(a, dtype=np.float64) - mu
    inv_var = np.exp(-2.0 * log_std)
    quad = (diff * diff * inv_var).sum(axis=-1)
    return -0.5 * quad - log_std.sum() - 0.5 * log_std.shape[0] * LOG_2PI


def logprob(policy: GaussianPolicy, state, action) -> float:
    return float(_logprob_from_mean(
        mlp_forward(policy.mean_net, state), action, policy.log_std))


def logprob_batch(policy: GaussianPolicy, states, actions) -> np.ndarray:
    return _logprob_from_mean(
        mlp_forward(policy.mean_net, states), actions, policy.log_std)


@dataclass
class PolicyGrads:
    """Gradient w.r.t. all policy parameters; mean is interleaved like
    MlpParams.arrays()."""

    mean: Arrays
    log_std: np.ndarray

    def arrays(self) -> Arrays:
        return self.mean + [self.log_std]

    @classmethod
    def zeros(cls, policy: GaussianPolicy) -> "PolicyGrads":
        return cls([np.zeros_like(a) for a in policy.mean_net.arrays()],
                   np.zeros_like(policy.log_std))

    def add_(self, other: "PolicyGrads") -> "PolicyGrads":
        for a, b in zip(self.mean, other.mean):
            a += b
        self.log_std += other.log_std
        return self


def logprob_grads(policy: GaussianPolicy, states, actions,
                  coeffs) -> PolicyGrads:
    """Gradient of sum_p coeffs_p * log pi(a_p | s_p).

    d/dmu = coeff * (a - mu) / sigma^2, routed through the mean net;
    d/dlog_std_d = coeff * ((a_d - mu_d)^2 / sigma_d^2 - 1).
    """
    S = np.asarray(states, dtype=np.float64)
    A = np.asarray(actions, dtype=np.float64)
    c = np.asarray(coeffs, dtype=np.float64)
    mu = mlp_forward(policy.mean_net, S)
    diff = A - mu
    inv_var = np.exp(-2.0 * policy.log_std)
    upstream = c[:, None] * diff * inv_var
    mean_grads, _ = mlp_backward(policy.mean_net, S, upstream)
    g_log_std = (c[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0)
    return PolicyGrads(mean_grads, g_log_std)


@dataclass
class Baseline:
    value_net: MlpParams

    def __post_init__(self):
        if self.value_net.out_dim != 1:
            raise ConfigError("baseline net must be scalar-valued")


def init_baseline(state_dim: int, rng, hidden=(64, 64)) -> Baseline:
    return Baseline(init_mlp([state_dim, *hidden, 1], rng))


def baseline_values(baseline: Baseline, states) -> np.ndarray:
    return mlp_forward(baseline.value_net, states)[..., 0]


ADVANTAGE_KINDS = ("default", "final_time")


def advantages(kind: str, episode: Episode, baseline: Baseline,
               gamma: float) -> np.ndarray:
    """Per-step advantage estimates from evaluated returns.

    default:    A_t = R_t - V(s_t)
    final_time: A'_t = A_t - gamma^(T-1-t) * A_{T-1}, which is exactly zero
                at the final step and removes the shared tail term.
    """
    if episode.returns is None:
        raise ContractError("episode has no returns; evaluate rewards first")
    base = episode.returns - baseline_values(baseline, episode.states)
    if kind == "default":
        return base
    if kind == "final_time":
        T = episode.horizon
        t0 = T - 1
        out = base - gamma ** (t0 - np.arange(T)) * base[t0]
        out[t0] = 0.0
        return out
    raise ConfigError(f"unknown advantage kind {kind!r}")


def fake_advantages(kind: str, fake_returns: np.ndarray, values: np.ndarray,
                    gamma: float) -> np.ndarray:
    """Same estimators built from model-based returns instead of evaluated
    ones; used by the non-centered loss on episodes without rewards."""
    base = fake_returns - values
    if kind == "default":
        return base
    if kind == "final_time":
        T = base.shape[0]
        t0 = T - 1
        out = base - gamma ** (t0 - np.arange(T)) * base[t0]
        out[t0] = 0.0
        return out
    raise ConfigError(f"unknown advantage kind {kind!r}")
