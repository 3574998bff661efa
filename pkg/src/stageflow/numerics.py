"""Deterministic numerical substrate.

Random streams, a small multilayer perceptron with a hand-written
reverse pass, a finite-difference gradient checker and Adam.

Random streams use numpy's PCG64 bit generator seeded from
``SeedSequence(seed, spawn_key=(stream_id,))``.  Two streams with the same
``(seed, stream_id)`` produce identical sequences; different stream ids
give statistically independent sequences, so parallel workers can each own
one without coordination.

All arrays are float64.  MLP functions accept either a single input vector
of shape ``(n_in,)`` or a batch of shape ``(batch, n_in)``; batched
gradients are sums over the batch rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericError, ShapeError

ACTIVATIONS = ("tanh", "relu")


class RngStream:
    """Seedable, splittable random stream."""

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise InvalidArgumentError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def normal(self, shape) -> np.ndarray:
        return self.generator.standard_normal(shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self.generator.uniform(low, high, shape)

    def integers(self, high: int, shape) -> np.ndarray:
        return self.generator.integers(0, high, shape)


def gaussian_sample(rng: RngStream, dim: int) -> np.ndarray:
    """Draw ``dim`` independent standard normals, advancing ``rng``."""
    if dim < 1:
        raise InvalidArgumentError(f"dim must be >= 1, got {dim}")
    return rng.normal(dim)


@dataclass
class Layer:
    weights: np.ndarray  # (n_out, n_in)
    biases: np.ndarray  # (n_out,)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class ParamStore:
    """Weights and biases of an MLP; hidden layers share one activation."""

    layers: list[Layer]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")
        if not self.layers:
            raise ShapeError("ParamStore needs at least one layer")
        for k, layer in enumerate(self.layers):
            if layer.weights.ndim != 2 or layer.biases.shape != (layer.n_out,):
                raise ShapeError(f"layer {k}: biases {layer.biases.shape} do not match weights {layer.weights.shape}")
            if k and layer.n_in != self.layers[k - 1].n_out:
                raise ShapeError(f"layer {k}: n_in {layer.n_in} != previous n_out {self.layers[k - 1].n_out}")

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    def arrays(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ParamStore":
        return ParamStore([Layer(fn(l.weights), fn(l.biases)) for l in self.layers], self.activation)

    def copy(self) -> "ParamStore":
        return self.map(np.array)

    def zeros_like(self) -> "ParamStore":
        return self.map(np.zeros_like)

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def same_shape(self, other: "ParamStore") -> bool:
        return len(self.layers) == len(other.layers) and all(
            a.shape == b.shape for a, b in zip(self.arrays(), other.arrays())
        )


def init_params(dims: Sequence[int], rng: RngStream, activation: str = "tanh") -> ParamStore:
    """Gaussian weights with variance 1/n_in (2/n_in for relu), zero biases."""
    if len(dims) < 2 or min(dims) < 1:
        raise InvalidArgumentError(f"invalid layer dims {list(dims)}")
    gain = 2.0 if activation == "relu" else 1.0
    layers = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        w = rng.normal((n_out, n_in)) * np.sqrt(gain / n_in)
        layers.append(Layer(w, np.zeros(n_out)))
    return ParamStore(layers, activation)


@dataclass
class ForwardCache:
    """Inputs to each layer and hidden post-activations, kept for the reverse pass."""

    layer_inputs: list[np.ndarray]
    param_id: int
    squeeze: bool
    dims: list[int] = field(default_factory=list)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _activation_grad(name: str, post: np.ndarray) -> np.ndarray:
    # expressed through the post-activation value, which is what the cache keeps
    if name == "tanh":
        return 1.0 - post * post
    return (post > 0.0).astype(post.dtype)


def mlp_forward(params: ParamStore, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Affine/activation chain with a linear output layer."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    a = x[None, :] if squeeze else x
    if a.ndim != 2 or a.shape[1] != params.layers[0].n_in:
        raise ShapeError(f"input shape {x.shape} does not match n_in={params.layers[0].n_in}")
    inputs = []
    last = len(params.layers) - 1
    for k, layer in enumerate(params.layers):
        inputs.append(a)
        z = a @ layer.weights.T + layer.biases
        a = z if k == last else _activate(params.activation, z)
    cache = ForwardCache(inputs, id(params), squeeze, params.dims)
    return (a[0] if squeeze else a), cache


def mlp_backward(
    params: ParamStore, cache: ForwardCache, output_gradient: np.ndarray
) -> tuple[ParamStore, np.ndarray]:
    """Reverse-mode gradients of ``sum(output * output_gradient)``.

    Returns parameter gradients (same layout as ``params``) and the gradient
    with respect to the input.
    """
    if cache.param_id != id(params) or cache.dims != params.dims:
        raise ShapeError("cache was not produced by mlp_forward with these params")
    g = np.asarray(output_gradient, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :] if g.ndim == 1 else g
    batch = cache.layer_inputs[0].shape[0]
    if g.shape != (batch, params.layers[-1].n_out):
        raise ShapeError(f"output_gradient shape {np.shape(output_gradient)} does not match output")
    grads: list[Layer] = [None] * len(params.layers)  # type: ignore[list-item]
    for k in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[k]
        a_in = cache.layer_inputs[k]
        grads[k] = Layer(g.T @ a_in, g.sum(axis=0))
        g = g @ layer.weights
        if k > 0:
            # a_in is the post-activation of hidden layer k-1
            g = g * _activation_grad(params.activation, a_in)
    input_grad = g[0] if cache.squeeze else g
    return ParamStore(grads, params.activation), input_grad


def finite_diff_check(
    loss_fn: Callable[[ParamStore], tuple[float, ParamStore]],
    params: ParamStore,
    eps: float = 1e-5,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must return ``(loss, grads)``.  Relative error is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not 1e-8 <= eps <= 1e-3:
        raise InvalidArgumentError(f"eps must lie in [1e-8, 1e-3], got {eps}")
    loss, analytic = loss_fn(params)
    if not np.isfinite(loss):
        raise NumericError(f"loss is not finite: {loss}")
    probe = params.copy()
    worst = 0.0
    for arr, grad in zip(probe.arrays(), analytic.arrays()):
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_fn(probe)[0]
            flat[i] = orig - eps
            lm = loss_fn(probe)[0]
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError("loss became non-finite under perturbation")
            numeric = (lp - lm) / (2.0 * eps)
            a = gflat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return float(worst)


@dataclass
class AdamState:
    first_moment: ParamStore
    second_moment: ParamStore
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamStore, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0, lr, **kw)


def adam_update(state: AdamState, params: ParamStore, grads: ParamStore) -> tuple[ParamStore, AdamState]:
    """One bias-corrected Adam step; inputs are left untouched."""
    if not (params.same_shape(grads) and params.same_shape(state.first_moment)):
        raise ShapeError("params, grads and optimizer moments must share one shape")
    if not grads.is_finite():
        raise NumericError("non-finite gradient passed to adam_update")
    step = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_layers, m_layers, v_layers = [], [], []
    for p, g, m, v in zip(params.layers, grads.layers, state.first_moment.layers, state.second_moment.layers):
        upd = []
        for pa, ga, ma, va in ((p.weights, g.weights, m.weights, v.weights), (p.biases, g.biases, m.biases, v.biases)):
            m_new = b1 * ma + (1.0 - b1) * ga
            v_new = b2 * va + (1.0 - b2) * ga * ga
            p_new = pa - state.lr * (m_new / c1) / (np.sqrt(v_new / c2) + state.eps)
            upd.append((p_new, m_new, v_new))
        new_layers.append(Layer(upd[0][0], upd[1][0]))
        m_layers.append(Layer(upd[0][1], upd[1][1]))
        v_layers.append(Layer(upd[0][2], upd[1][2]))
    new_state = AdamState(
        ParamStore(m_layers, params.activation),
        ParamStore(v_layers, params.activation),
        step,
        state.lr,
        b1,
        b2,
        state.eps,
    )
    return ParamStore(new_layers, params.activation), new_state
