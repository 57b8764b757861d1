"""Feed-forward network substrate: init, forward, analytic backward, softmax, Adam.

All arrays are float64. Inputs may be a single vector of shape ``(n_in,)`` or a
batch of row vectors ``(b, n_in)``; gradients of a batch are summed over rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MlpParams:
    """Weights and biases of a tanh MLP with an affine output layer.

    ``weights[l]`` has shape ``(layer_sizes[l + 1], layer_sizes[l])``.
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("number of weight/bias arrays does not match layer_sizes")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if w.shape != expected or b.shape != (expected[0],):
                raise ValueError(
                    f"layer {l}: expected weight {expected} and bias {(expected[0],)}, "
                    f"got {w.shape} and {b.shape}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self) -> list[np.ndarray]:
        """Weights and biases interleaved per layer: [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.layer_sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams(
            self.layer_sizes, [np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases]
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class ForwardTrace:
    """Cached per-layer quantities of one forward pass.

    ``activations[0]`` is the input; ``activations[l + 1]`` is the output of
    layer ``l`` (tanh for hidden layers, affine for the last one).
    """

    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]
    batched: bool

    @property
    def depth(self) -> int:
        return len(self.pre_activations)


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: MlpParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()], 0)


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_params(layer_sizes, seed: int) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        raise ValueError("layer_sizes needs at least an input and an output size")
    if any(int(n) != n or n < 1 for n in sizes):
        raise ValueError(f"layer sizes must be positive integers, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpParams(tuple(sizes), weights, biases)


def forward(params: MlpParams, x) -> tuple[np.ndarray, ForwardTrace]:
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != params.n_in:
        raise ValueError(f"input of shape {x.shape} does not match input size {params.n_in}")
    h = x if batched else x[None, :]
    pre, acts = [], [h]
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = np.tanh(z) if l < last else z
        pre.append(z)
        acts.append(h)
    out = h if batched else h[0]
    return out, ForwardTrace(pre, acts, batched)


def backward(params: MlpParams, trace: ForwardTrace, output_grad) -> tuple[MlpParams, np.ndarray]:
    """Gradients of ``sum(output * output_grad)`` w.r.t. parameters and input."""
    if trace.depth != params.n_layers:
        raise ValueError("trace depth does not match the number of layers")
    delta = np.asarray(output_grad, dtype=np.float64)
    if not trace.batched:
        delta = delta[None, :]
    if delta.shape != trace.activations[-1].shape:
        raise ValueError(f"output_grad shape {delta.shape} does not match output {trace.activations[-1].shape}")
    gw = [None] * params.n_layers
    gb = [None] * params.n_layers
    for l in range(params.n_layers - 1, -1, -1):
        a_in = trace.activations[l]
        if a_in.shape[1] != params.layer_sizes[l]:
            raise ValueError("trace was not produced by these parameters")
        gw[l] = delta.T @ a_in
        gb[l] = delta.sum(axis=0)
        delta = delta @ params.weights[l]
        if l > 0:
            delta = delta * (1.0 - a_in * a_in)
    input_grad = delta if trace.batched else delta[0]
    return MlpParams(params.layer_sizes, gw, gb), input_grad


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 1:
        raise ValueError("softmax needs at least one logit")
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input contains non-finite values")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits."""
    return probs * (grad_probs - np.sum(grad_probs * probs, axis=-1, keepdims=True))


def adam_step(
    params: MlpParams,
    grads: MlpParams,
    state: AdamState,
    lr: float = 3e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update, applied in place and returned."""
    if grads.layer_sizes != params.layer_sizes:
        raise ValueError("gradient shapes do not match parameters")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0) or lr <= 0:
        raise ValueError("invalid Adam hyperparameters")
    garrays = grads.arrays()
    if not all(np.all(np.isfinite(g)) for g in garrays):
        raise ValueError("non-finite gradient")
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for p, g, m, v in zip(params.arrays(), garrays, state.first_moment, state.second_moment):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


class Optimizer:
    """Adam over several parameter sets sharing one step counter.

    Parameters are moved into one contiguous buffer (the ``MlpParams`` arrays
    become views into it) so an update is a handful of vector operations.
    Numerically identical to calling :func:`adam_step` on every set.
    """

    def __init__(self, params: list[MlpParams], hyper: AdamHyper = AdamHyper()):
        self.params = params
        self.hyper = hyper
        arrays = [a for p in params for a in p.arrays()]
        self.flat = np.concatenate([a.ravel() for a in arrays])
        offset = 0
        for p in params:
            for l in range(p.n_layers):
                for store in (p.weights, p.biases):
                    a = store[l]
                    store[l] = self.flat[offset : offset + a.size].reshape(a.shape)
                    offset += a.size
        self.m = np.zeros_like(self.flat)
        self.v = np.zeros_like(self.flat)
        self.step_count = 0
        self._g = np.empty_like(self.flat)
        self._tmp = np.empty_like(self.flat)

    def step(self, grads: list[MlpParams]) -> None:
        h = self.hyper
        g = self._g
        offset = 0
        for gp in grads:
            for a in gp.arrays():
                g[offset : offset + a.size] = a.ravel()
                offset += a.size
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
        self.step_count += 1
        c1 = 1.0 - h.beta1**self.step_count
        c2 = 1.0 - h.beta2**self.step_count
        m, v, tmp = self.m, self.v, self._tmp
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - h.beta2
        v += tmp
        np.divide(v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += h.eps
        np.divide(m, tmp, out=tmp)
        tmp *= h.lr / c1
        self.flat -= tmp
