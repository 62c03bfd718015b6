"""Deep-kernel GP over state-action points and the kernels it induces on
whole episodes.

Base kernel on z = (s, a):

    k(z, z') = exp(log_scale - |f(z) - f(z')|^2 / divisor)
               + (1e-5 + exp(log_noise)) * [z is the same sample as z']

with f a small MLP embedding. The same-sample indicator is identity of the
sample, not value equality: it fires inside one episode at equal timesteps,
never across two episodes that merely contain equal numbers.

Two episode-level kernels follow by discounted double sums over timesteps:

    returns kernel:  K(e, e') = sum_{t,u} gamma^(t+u) k(z_t, z'_u)
    rewards kernel:  K(e, e') = sum_{t,u} (1+t)(1+u) gamma^(t+u) k(z_t, z'_u)

The rewards variant additionally carries a scalar mean net m(z); model-based
("fake") returns are R_t = sum_{u>=t} gamma^(u-t) m(z_u).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, cholesky

from .episodes import Episode, discounted_returns
from .errors import ConfigError, ContractError, NumericsError
from .nets import (AdamState, Arrays, MlpParams, adam_step, init_mlp,
                   mlp_backward, mlp_forward)

NOISE_FLOOR = 1e-5
JITTER_LADDER = (0.0, 1e-9, 1e-6, 1e-3)
KERNEL_LOSS_FORMS = ("nlml", "as_printed")


@dataclass
class DeepKernelParams:
    embedding: MlpParams
    log_scale: float = 0.0
    log_noise: float = 0.0
    sqdist_divisor: float = 20.0  # kept verbatim from the kernel definition

    def noise(self) -> float:
        return NOISE_FLOOR + float(np.exp(self.log_noise))

    def arrays(self) -> Arrays:
        return self.embedding.arrays() + [np.float64(self.log_scale),
                                          np.float64(self.log_noise)]

    @classmethod
    def from_arrays(cls, arrays: Arrays, divisor: float) -> "DeepKernelParams":
        return cls(MlpParams.from_arrays(arrays[:-2]),
                   float(arrays[-2]), float(arrays[-1]), divisor)


@dataclass
class DeepKernelGrads:
    embedding: Arrays
    log_scale: float
    log_noise: float

    def arrays(self) -> Arrays:
        return self.embedding + [np.float64(self.log_scale),
                                 np.float64(self.log_noise)]


def init_deep_kernel(point_dim: int, rng) -> DeepKernelParams:
    emb = init_mlp([point_dim, point_dim, point_dim, 10], rng)
    return DeepKernelParams(emb)


def init_mean_net(point_dim: int, rng) -> MlpParams:
    return init_mlp([point_dim, 200, 100, 1], rng)


def base_kernel(params: DeepKernelParams, z1, z2,
                same_point: bool = False) -> float:
    f1 = mlp_forward(params.embedding, np.asarray(z1, dtype=np.float64))
    f2 = mlp_forward(params.embedding, np.asarray(z2, dtype=np.float64))
    d2 = float(((f1 - f2) ** 2).sum())
    v = np.exp(params.log_scale - d2 / params.sqdist_divisor)
    if same_point:
        v += params.noise()
    return float(v)


class EpisodicKernel:
    """Callable K(e, e') for one of the two episode kernels, with a
    vectorized .gram() over a batch. Both go through the same pairwise
    block arithmetic, so Gram entries equal direct calls."""

    def __init__(self, params: DeepKernelParams, gamma: float,
                 time_weighted: bool):
        if not 0.0 < gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
        self.params = params
        self.gamma = gamma
        self.time_weighted = time_weighted

    def step_weights(self, horizon: int) -> np.ndarray:
        t = np.arange(horizon)
        c = self.gamma ** t
        return c * (1.0 + t) if self.time_weighted else c

    def embed(self, episode: Episode) -> np.ndarray:
        return mlp_forward(self.params.embedding, episode.zs())

    @staticmethod
    def _sqnorms(F) -> np.ndarray:
        return (F * F).sum(axis=1)

    def _pair(self, F1, sq1, c1, F2, sq2, c2) -> float:
        E = self._exp_block(F1, sq1, F2, sq2)
        return float(np.dot(c1 @ E, c2))

    def _exp_block(self, F1, sq1, F2, sq2) -> np.ndarray:
        d2 = sq1[:, None] + sq2[None, :] - 2.0 * (F1 @ F2.T)
        return np.exp(self.params.log_scale - d2 / self.params.sqdist_divisor)

    def __call__(self, e1: Episode, e2: Episode) -> float:
        F1, F2 = self.embed(e1), self.embed(e2)
        c1 = self.step_weights(e1.horizon)
        c2 = self.step_weights(e2.horizon)
        v = self._pair(F1, self._sqnorms(F1), c1, F2, self._sqnorms(F2), c2)
        if e1 is e2:
            v += self.params.noise() * float((c1 * c1).sum())
        return v

    def gram(self, episodes: list[Episode]) -> np.ndarray:
        """Embeddings are computed once per episode; every entry then goes
        through the identical _pair arithmetic a direct call uses, so
        G[i, j] == K(e_i, e_j) exactly for i <= j (and the matrix is made
        symmetric by mirroring)."""
        n = len(episodes)
        if n < 1:
            raise ConfigError("gram needs at least one episode")
        feats = [self.embed(e) for e in episodes]
        sqs = [self._sqnorms(F) for F in feats]
        cs = [self.step_weights(e.horizon) for e in episodes]
        G = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                G[i, j] = G[j, i] = self._pair(feats[i], sqs[i], cs[i],
                                               feats[j], sqs[j], cs[j])
        noise_diag = np.array([self.params.noise() * float((c * c).sum())
                               for c in cs])
        G[np.diag_indices(n)] += noise_diag
        if not np.all(np.isfinite(G)):
            raise NumericsError("non-finite Gram entries")
        return G


def episodic_kernel_returns(params: DeepKernelParams, e1: Episode,
                            e2: Episode, gamma: float) -> float:
    return EpisodicKernel(params, gamma, time_weighted=False)(e1, e2)


def episodic_kernel_rewards(params: DeepKernelParams, e1: Episode,
                            e2: Episode, gamma: float) -> float:
    return EpisodicKernel(params, gamma, time_weighted=True)(e1, e2)


def fake_returns(mean_net: MlpParams, episode: Episode,
                 gamma: float) -> np.ndarray:
    """Discounted tail sums of the modeled rewards m(z_t)."""
    m = mlp_forward(mean_net, episode.zs())[:, 0]
    return discounted_returns(m, gamma)


@dataclass
class GPModel:
    """kind "returns": GP directly on centered returns, no mean net.
    kind "rewards": scalar mean net on rewards plus a GP on the residuals,
    which is what the time-weighted episode kernel corresponds to."""

    kind: str
    kernel: DeepKernelParams
    gamma: float
    mean_net: Optional[MlpParams] = None

    def __post_init__(self):
        if self.kind not in ("returns", "rewards"):
            raise ConfigError(f"unknown gp kind {self.kind!r}")
        if self.kind == "rewards" and self.mean_net is None:
            raise ConfigError("rewards gp needs a mean net")
        if self.kind == "returns" and self.mean_net is not None:
            raise ConfigError("returns gp must not carry a mean net")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")

    def episode_kernel(self) -> EpisodicKernel:
        return EpisodicKernel(self.kernel, self.gamma,
                              time_weighted=self.kind == "rewards")


def init_gp(kind: str, point_dim: int, gamma: float, rng) -> GPModel:
    mean = init_mean_net(point_dim, rng) if kind == "rewards" else None
    return GPModel(kind, init_deep_kernel(point_dim, rng), gamma, mean)


def chol_with_jitter(K: np.ndarray):
    """Cholesky with an escalating diagonal jitter ladder; raises
    NumericsError when even the largest jitter fails."""
    for jit in JITTER_LADDER:
        try:
            L = cholesky(K + jit * np.eye(K.shape[0]), lower=True)
            return L, jit
        except np.linalg.LinAlgError:
            continue
        except ValueError:
            continue
    raise NumericsError("matrix not positive definite after jitter ladder")


def _point_gram(params: DeepKernelParams, Z: np.ndarray):
    F = mlp_forward(params.embedding, Z)
    sq = (F * F).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (F @ F.T)
    E = np.exp(params.log_scale - d2 / params.sqdist_divisor)
    K = E + params.noise() * np.eye(Z.shape[0])
    return K, E, F


def kernel_loss(params: DeepKernelParams, Z, y,
                form: str = "nlml") -> float:
    return _kernel_loss_impl(params, Z, y, form, want_grads=False)[0]


def kernel_loss_grads(params: DeepKernelParams, Z, y, form: str = "nlml"):
    return _kernel_loss_impl(params, Z, y, form, want_grads=True)


def _kernel_loss_impl(params, Z, y, form, want_grads):
    """nlml:       y^T K^{-1} y + logdet K   (marginal-likelihood fit)
    as_printed: y^T K y + logdet K           (legacy form, kept switchable)
    """
    if form not in KERNEL_LOSS_FORMS:
        raise ConfigError(f"unknown kernel loss form {form!r}")
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (Z.shape[0],):
        raise ConfigError("targets must align with points")
    K, E, F = _point_gram(params, Z)
    L, jit = chol_with_jitter(K)
    if jit:
        K = K + jit * np.eye(K.shape[0])
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    if form == "nlml":
        alpha = cho_solve((L, True), y)
        loss = float(y @ alpha) + logdet
    else:
        loss = float(y @ (K @ y)) + logdet
    if not np.isfinite(loss):
        raise NumericsError("kernel loss is not finite")
    if not want_grads:
        return loss, None

    Kinv = cho_solve((L, True), np.eye(K.shape[0]))
    if form == "nlml":
        alpha = cho_solve((L, True), y)
        S = Kinv - np.outer(alpha, alpha)
    else:
        S = np.outer(y, y) + Kinv
    W = S * E
    d_scale = float(W.sum())
    d_noise = float(np.exp(params.log_noise) * np.trace(S))
    # F_k enters d^2_ij through both indices of the symmetric W, hence 4
    rows = W.sum(axis=1)
    dF = (-4.0 / params.sqdist_divisor) * (rows[:, None] * F - W @ F)
    emb_grads, _ = mlp_backward(params.embedding, Z, dF)
    return loss, DeepKernelGrads(emb_grads, d_scale, d_noise)


def mean_loss(mean_net: MlpParams, weights, episodes, gamma: float) -> float:
    return _mean_loss_impl(mean_net, weights, episodes, gamma, False)[0]


def mean_loss_grads(mean_net: MlpParams, weights, episodes, gamma: float):
    return _mean_loss_impl(mean_net, weights, episodes, gamma, True)


def _mean_loss_impl(mean_net, weights, episodes, gamma, want_grads):
    """sum_i w_i sum_t (1+t) gamma^t (r_t - m(z_t))^2 over supported
    episodes; the (1+t) factor mirrors the rewards-kernel time weights."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(episodes),):
        raise ConfigError("weights must align with episodes")
    loss = 0.0
    per_ep = []
    for wi, ep in zip(w, episodes):
        if ep.rewards is None:
            raise ContractError("mean loss needs evaluated rewards")
        Z = ep.zs()
        m = mlp_forward(mean_net, Z)[:, 0]
        t = np.arange(ep.horizon)
        coeff = wi * (1.0 + t) * gamma ** t
        resid = ep.rewards - m
        loss += float((coeff * resid * resid).sum())
        if want_grads:
            per_ep.append((Z, -2.0 * coeff * resid))
    if not want_grads:
        return loss, None
    Zall = np.concatenate([z for z, _ in per_ep])
    up = np.concatenate([u for _, u in per_ep])[:, None]
    grads, _ = mlp_backward(mean_net, Zall, up)
    return loss, grads


def minibatch_slices(n: int, size: int, rng) -> list[np.ndarray]:
    """Shuffled index chunks covering 0..n-1 exactly once."""
    if size < 1:
        raise ConfigError("minibatch size must be positive")
    perm = rng.permutation(n)
    return [perm[i:i + size] for i in range(0, n, size)]


def update_gp(model: GPModel, weights, episodes, baseline, lr: float,
              minibatch: int, rng, kernel_opt: Optional[AdamState] = None,
              mean_opt: Optional[AdamState] = None,
              form: str = "nlml") -> GPModel:
    """One epoch of minibatched Adam on the GP parameters over the support
    episodes (aligned with `weights`).

    rewards kind: the mean net runs its epoch first on the time-weighted
    squared loss, then the kernel fits residual targets r(z) - m(z).
    returns kind: the kernel fits centered returns R_t - V(s_t).
    Optimizer states are created on demand and advanced in place.
    """
    from .policy import baseline_values  # cycle-free: policy does not import gp

    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(episodes),) or not episodes:
        raise ConfigError("weights must align with a nonempty episode list")
    for ep in episodes:
        if ep.rewards is None:
            raise ContractError("update_gp needs evaluated support episodes")

    kernel = model.kernel
    mean_net = model.mean_net
    Z = np.concatenate([ep.zs() for ep in episodes])
    P = Z.shape[0]

    if model.kind == "rewards":
        r = np.concatenate([ep.rewards for ep in episodes])
        coeff = np.concatenate([wi * (1.0 + np.arange(ep.horizon))
                                * model.gamma ** np.arange(ep.horizon)
                                for wi, ep in zip(w, episodes)])
        if mean_opt is None:
            mean_opt = AdamState.for_arrays(mean_net.arrays())
        for idx in minibatch_slices(P, minibatch, rng):
            m = mlp_forward(mean_net, Z[idx])[:, 0]
            up = (-2.0 * coeff[idx] * (r[idx] - m))[:, None]
            grads, _ = mlp_backward(mean_net, Z[idx], up)
            mean_net = MlpParams.from_arrays(
                adam_step(mean_opt, mean_net.arrays(), grads, lr))
        y = r - mlp_forward(mean_net, Z)[:, 0]
    else:
        for ep in episodes:
            if ep.returns is None:
                raise ContractError("returns gp needs attached returns")
        y = np.concatenate([ep.returns - baseline_values(baseline, ep.states)
                            for ep in episodes])

    if kernel_opt is None:
        kernel_opt = AdamState.for_arrays(kernel.arrays())
    for idx in minibatch_slices(P, minibatch, rng):
        _, grads = kernel_loss_grads(kernel, Z[idx], y[idx], form)
        kernel = DeepKernelParams.from_arrays(
            adam_step(kernel_opt, kernel.arrays(), grads.arrays(), lr),
            kernel.sqdist_divisor)

    return GPModel(model.kind, kernel, model.gamma, mean_net)
