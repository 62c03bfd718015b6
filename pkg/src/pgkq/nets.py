"""Dense MLP engine: forward pass, hand-derived backprop, Adam.

Everything is float64 numpy. There is no autodiff; `mlp_backward` returns
the gradient of sum_i <upstream_i, net(x_i)> with respect to every weight
and bias, which is all the losses in this package need.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericsError

Arrays = list[np.ndarray]


@dataclass
class MlpParams:
    """Fully connected net, x @ W + b per layer, ReLU on hidden layers,
    identity on the output layer."""

    weights: Arrays
    biases: Arrays

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("weights and biases must pair up")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.ndim != 1 or W.shape[1] != b.shape[0]:
                raise ConfigError(f"layer {l}: bad shapes {W.shape} {b.shape}")
            if l > 0 and self.weights[l - 1].shape[1] != W.shape[0]:
                raise ConfigError(f"layer {l}: input dim mismatch")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> Arrays:
        """Interleaved [W0, b0, W1, b1, ...]; the ordering every gradient
        list and optimizer state in this package follows."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.append(W)
            out.append(b)
        return out

    @classmethod
    def from_arrays(cls, arrays: Arrays) -> "MlpParams":
        return cls(weights=list(arrays[0::2]), biases=list(arrays[1::2]))

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights],
                         [b.copy() for b in self.biases])


def init_mlp(sizes, rng) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    if len(sizes) < 2:
        raise ConfigError("need at least input and output sizes")
    weights, biases = [], []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(rng.uniform(-bound, bound, size=(d_out,)))
    return MlpParams(weights, biases)


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.in_dim:
        raise ConfigError(f"input dim {x.shape[-1]} != net dim {params.in_dim}")
    h = x
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W + b
        if l < last:
            h = np.maximum(h, 0.0)
    return h


def mlp_backward(params: MlpParams, x, upstream):
    """Gradients of sum over the batch of <upstream, net(x)>.

    Returns (grads, input_grad) where grads is interleaved like
    MlpParams.arrays(). x may be a single point (d,) or a batch (B, d);
    upstream must match the corresponding output shape.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    G = np.asarray(upstream, dtype=np.float64)
    G = G[None, :] if single else G
    if X.shape[-1] != params.in_dim:
        raise ConfigError(f"input dim {X.shape[-1]} != net dim {params.in_dim}")
    if G.shape != (X.shape[0], params.out_dim):
        raise ConfigError(f"upstream shape {G.shape} does not match output")

    last = len(params.weights) - 1
    acts = [X]  # post-activation inputs to each layer
    pres = []
    h = X
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        pres.append(z)
        h = np.maximum(z, 0.0) if l < last else z
        acts.append(h)

    grads: Arrays = [None] * (2 * len(params.weights))  # type: ignore[list-item]
    delta = G
    for l in range(last, -1, -1):
        if l < last:
            delta = delta * (pres[l] > 0.0)
        grads[2 * l] = acts[l].T @ delta
        grads[2 * l + 1] = delta.sum(axis=0)
        delta = delta @ params.weights[l].T
    input_grad = delta[0] if single else delta
    return grads, input_grad


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: Arrays
    v: Arrays
    step: int = 0

    @classmethod
    def for_arrays(cls, arrays: Arrays) -> "AdamState":
        return cls(m=[np.zeros_like(a) for a in arrays],
                   v=[np.zeros_like(a) for a in arrays])


def adam_step(state: AdamState, arrays: Arrays, grads: Arrays, lr: float) -> Arrays:
    """One Adam update. Returns new parameter arrays; `state` is advanced
    in place. Gradients must be finite."""
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ConfigError("arrays / grads / state length mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericsError("non-finite gradient passed to adam_step")
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    out = []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        out.append(a - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS))
    return out


def save_mlp(path, params: MlpParams) -> None:
    """Text checkpoint: one line per array, `name d0 d1 v v v ...`
    row-major, full float64 precision."""
    with open(path, "w") as fh:
        fh.write(f"mlp {len(params.weights)}\n")
        for l, (W, b) in enumerate(zip(params.weights, params.biases)):
            _write_array(fh, f"W{l}", W)
            _write_array(fh, f"b{l}", b)


def load_mlp(path) -> MlpParams:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 2 or head[0] != "mlp":
            raise ConfigError(f"not an mlp checkpoint: {path}")
        n_layers = int(head[1])
        weights, biases = [], []
        for l in range(n_layers):
            weights.append(_read_array(fh, f"W{l}", 2))
            biases.append(_read_array(fh, f"b{l}", 1))
    return MlpParams(weights, biases)


def _write_array(fh, name, a):
    dims = " ".join(str(d) for d in a.shape)
    vals = " ".join(repr(float(v)) for v in a.ravel())
    fh.write(f"{name} {dims} {vals}\n")


def _read_array(fh, name, ndim):
    parts = fh.readline().split()
    if not parts or parts[0] != name:
        raise ConfigError(f"checkpoint corrupt: expected {name}")
    shape = tuple(int(s) for s in parts[1:1 + ndim])
    vals = np.array([float(v) for v in parts[1 + ndim:]], dtype=np.float64)
    return vals.reshape(shape)
