"""Kernel quadrature over episode batches.

Given N generated episodes and an episode-level kernel K, pick n of them
with convex weights so that the weighted subset approximates the uniform
distribution over the batch in the kernel's RKHS. The pipeline is
Nystrom features from the Gram matrix followed by Caratheodory-style
recombination down to n points.

The quality measure is the squared worst-case error

    wce^2(w) = (w - u)^T G (w - u),  u = uniform weights,

with w the rule's weights scattered into batch positions. For a centered
GP with covariance K this equals E[(sum_i w_i f(x_i) - mean_j f(x_j))^2],
which `gp_sample_error` estimates by Monte Carlo as an independent check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericsError
from .gp import chol_with_jitter

WCE_CLAMP = -1e-10
EIG_DROP = 1e-12
RESIDUAL_TOL = 1e-8


@dataclass
class QuadratureRule:
    """Support indices into the originating batch plus convex weights."""

    indices: np.ndarray
    weights: np.ndarray
    batch_size: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.indices.shape != self.weights.shape or self.indices.ndim != 1:
            raise ConfigError("indices and weights must be aligned vectors")
        if self.indices.size < 1 or self.batch_size < 1:
            raise ConfigError("empty quadrature rule")
        if self.indices.min() < 0 or self.indices.max() >= self.batch_size:
            raise ConfigError("support index out of range")
        if len(set(self.indices.tolist())) != self.indices.size:
            raise ConfigError("duplicate support indices")
        if self.weights.min() < 0.0 or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ConfigError("weights must be convex")

    @property
    def size(self) -> int:
        return self.indices.size

    def full_weights(self) -> np.ndarray:
        w = np.zeros(self.batch_size)
        w[self.indices] = self.weights
        return w

    @classmethod
    def uniform(cls, batch_size: int) -> "QuadratureRule":
        return cls(np.arange(batch_size),
                   np.full(batch_size, 1.0 / batch_size), batch_size)


def build_gram(kernel, episodes) -> np.ndarray:
    """Symmetric kernel matrix over a batch. Kernels exposing a vectorized
    .gram (the episodic kernels do) run that path; entries still equal
    direct per-pair calls."""
    n = len(episodes)
    if n < 1:
        raise ConfigError("build_gram needs at least one episode")
    if hasattr(kernel, "gram"):
        return kernel.gram(episodes)
    G = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            G[i, j] = G[j, i] = kernel(episodes[i], episodes[j])
    if not np.all(np.isfinite(G)):
        raise NumericsError("non-finite Gram entries")
    return G


def wce_squared(rule: QuadratureRule, gram: np.ndarray) -> float:
    """(w - u)^T G (w - u) with tiny negative eigen-noise clamped to 0."""
    N = gram.shape[0]
    if gram.shape != (N, N) or rule.batch_size != N:
        raise ConfigError("rule and Gram sizes disagree")
    d = rule.full_weights() - 1.0 / N
    v = float(d @ gram @ d)
    if WCE_CLAMP <= v < 0.0:
        v = 0.0
    return v


def nystrom_features(gram: np.ndarray, m: int) -> np.ndarray:
    """Top-m spectral features F = U sqrt(lam), so F F^T is the best
    rank-m approximation of the Gram. Eigenvalues below 1e-12 * trace are
    dropped, so fewer than m columns may come back."""
    N = gram.shape[0]
    if m < 1:
        raise ConfigError("need at least one feature")
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1][:m]
    lam = evals[order]
    keep = lam > EIG_DROP * max(float(np.trace(gram)), 0.0)
    lam, vecs = lam[keep], evecs[:, order[keep]]
    if lam.size == 0:
        return np.zeros((N, 0))
    return vecs * np.sqrt(lam)


def moment_residual(weights_full: np.ndarray, features: np.ndarray) -> float:
    """Worst column-scaled mismatch between weighted and uniform feature
    means; the tolerance RESIDUAL_TOL applies to this scaled quantity."""
    if features.shape[1] == 0:
        return abs(float(weights_full.sum()) - 1.0)
    target = features.mean(axis=0)
    got = weights_full @ features
    scale = np.maximum(np.abs(features).max(axis=0), 1.0)
    return float(np.max(np.abs(got - target) / scale))


def recombine(features: np.ndarray, n: int) -> QuadratureRule:
    """Reduce the uniform rule over N points to at most n support points
    with convex weights matching all feature means exactly.

    Classic Caratheodory elimination: while the support exceeds n, take a
    null vector of the active moment matrix (constant row plus feature
    columns), walk to the boundary of the simplex along it, and drop the
    weight that hits zero. Requires n >= m+1 where m is the number of
    feature columns.
    """
    N, m = features.shape
    if n < 1:
        raise ConfigError("need at least one support point")
    if n < m + 1:
        raise ConfigError(f"n={n} cannot match {m} moments plus mass")
    scale = np.maximum(np.abs(features).max(axis=0), 1.0)
    A = np.vstack([np.ones(N), (features / scale).T])  # (m+1, N)
    w = np.full(N, 1.0 / N)
    active = list(range(N))
    while len(active) > n:
        Aact = A[:, active]
        _, _, Vh = np.linalg.svd(Aact)
        v = Vh[-1]
        if not (v > 0.0).any():
            v = -v
        wact = w[active]
        pos = v > 0.0
        ratios = np.where(pos, wact / np.where(pos, v, 1.0), np.inf)
        k = int(np.argmin(ratios))
        t = ratios[k]
        if not np.isfinite(t):
            raise NumericsError("recombination found no removable weight")
        wact = wact - t * v
        wact[k] = 0.0
        for idx, val in zip(active, wact):
            w[idx] = val
        active = [idx for idx, val in zip(active, wact) if val > 0.0]
        if not active:
            raise NumericsError("recombination emptied the support")
    w = np.where(w > WCE_CLAMP, np.maximum(w, 0.0), w)
    if w.min() < 0.0:
        raise NumericsError("recombination produced a negative weight")
    w = w / w.sum()
    resid = moment_residual(w, features)
    if resid > RESIDUAL_TOL:
        raise NumericsError(f"moment residual {resid:.3e} above tolerance")
    idx = np.array(sorted(active))
    return QuadratureRule(idx, w[idx], N)


def rule_from_gram(gram: np.ndarray, n: int) -> QuadratureRule:
    """Nystrom features with n-1 columns, then recombination to n points."""
    N = gram.shape[0]
    if n >= N:
        return QuadratureRule.uniform(N)
    spread = np.abs(gram - gram[0, 0]).max()
    if spread <= 1e-12 * max(1.0, abs(gram[0, 0])):
        # all episodes indistinguishable under the kernel
        return QuadratureRule(np.array([0]), np.array([1.0]), N)
    return recombine(nystrom_features(gram, n - 1), n)


def kquad(kernel, episodes, n: int) -> QuadratureRule:
    """Compress a batch to an n-point convex quadrature rule under the
    given episode kernel."""
    return rule_from_gram(build_gram(kernel, episodes), n)


def herding_baseline(kernel, episodes, n: int) -> QuadratureRule:
    """Greedy uniform-weight baseline: grow the support one episode at a
    time, each step picking the episode whose inclusion minimizes wce^2 of
    the uniform rule on the support. Ties break to the lowest index;
    points are never picked twice, so n = N returns a permutation."""
    N = len(episodes)
    if not 1 <= n <= N:
        raise ConfigError("herding needs 1 <= n <= N")
    G = build_gram(kernel, episodes)
    rowmean = G.mean(axis=1)
    gmean = float(G.mean())
    chosen: list[int] = []
    taken = np.zeros(N, dtype=bool)
    pair_sum = 0.0  # sum of G over chosen x chosen
    row_sum = 0.0  # sum of rowmean over chosen
    cross = np.zeros(N)  # sum_{j in chosen} G[., j]
    for k in range(1, n + 1):
        best, best_val = -1, np.inf
        for i in range(N):
            if taken[i]:
                continue
            # wce^2 of uniform weights over chosen + {i}
            val = ((pair_sum + 2.0 * cross[i] + G[i, i]) / k ** 2
                   - 2.0 * (row_sum + rowmean[i]) / k + gmean)
            if val < best_val - 1e-15:
                best, best_val = i, val
        chosen.append(best)
        taken[best] = True
        pair_sum += 2.0 * cross[best] + G[best, best]
        row_sum += rowmean[best]
        cross += G[:, best]
    return QuadratureRule(np.sort(chosen), np.full(n, 1.0 / n), N)


def gp_sample_error(rule: QuadratureRule, gram: np.ndarray,
                    num_samples: int, rng):
    """Monte Carlo estimate of E[(sum_i w_i f(x_i) - mean_j f(x_j))^2]
    for f drawn from the centered GP with covariance `gram`; returns the
    estimate and its standard error."""
    if num_samples < 2:
        raise ConfigError("need at least two samples")
    N = gram.shape[0]
    if rule.batch_size != N:
        raise ConfigError("rule and Gram sizes disagree")
    L, _ = chol_with_jitter(gram)
    d = rule.full_weights() - 1.0 / N
    proj = d @ L  # error functional applied to the factor
    errs = proj @ rng.standard_normal((N, num_samples))
    sq = errs * errs
    est = float(sq.mean())
    se = float(sq.std(ddof=1) / np.sqrt(num_samples))
    return est, se


def write_rule(path, rule: QuadratureRule, wce_sq: float) -> None:
    """Text dump: header with N, n, wce^2, then `index weight` lines."""
    with open(path, "w") as fh:
        fh.write(f"# N={rule.batch_size} n={rule.size} "
                 f"wce_sq={float(wce_sq)!r}\n")
        for i, w in zip(rule.indices, rule.weights):
            fh.write(f"{i} {float(w)!r}\n")
