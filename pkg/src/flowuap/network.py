"""Fixed-shape Q-network (76-64-64-64-64-2 MLP) with hand-written backprop and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of shape
``(n, 76)`` maps through ``X @ W + b``.  Every function accepts a single
76-vector or a 2-D batch; gradients for a batch are per-row (rows never
interact), which is what the attack code relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ValidationError

LAYER_SIZES = (76, 64, 64, 64, 64, 2)
N_FEATURES = LAYER_SIZES[0]
N_HIDDEN = len(LAYER_SIZES) - 2


@dataclass
class QNetwork:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    rng_seed: int | None = None

    def __post_init__(self):
        if len(self.weights) != len(LAYER_SIZES) - 1 or len(self.biases) != len(self.weights):
            raise ConfigurationError("QNetwork needs exactly five affine layers")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (LAYER_SIZES[i], LAYER_SIZES[i + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise ConfigurationError(
                    f"layer {i + 1}: expected W{expect}, b({expect[1]},), "
                    f"got W{w.shape}, b{b.shape}"
                )

    @classmethod
    def initialize(cls, seed: int) -> "QNetwork":
        """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(LAYER_SIZES[:-1], LAYER_SIZES[1:]):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, rng_seed=seed)

    @classmethod
    def zeros(cls) -> "QNetwork":
        return cls(
            [np.zeros((a, b)) for a, b in zip(LAYER_SIZES[:-1], LAYER_SIZES[1:])],
            [np.zeros(b) for b in LAYER_SIZES[1:]],
        )

    def copy(self) -> "QNetwork":
        return QNetwork(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.rng_seed
        )

    def parameters(self) -> list[np.ndarray]:
        """Parameter tensors in the order W1, b1, W2, b2, ..., W5, b5."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.parameters())

    def qvalues(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return h @ self.weights[-1] + self.biases[-1]

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Greedy label(s); ties resolve to class 0 (Benign)."""
        return np.argmax(self.qvalues(x), axis=-1)


@dataclass(frozen=True)
class ForwardTrace:
    input: np.ndarray
    preacts: tuple  # affine outputs z1..z5
    hidden: tuple  # post-ReLU a1..a4
    qvalues: np.ndarray
    probs: np.ndarray

    def layer(self, index) -> np.ndarray:
        """Hidden layer 1..4, or ``"q"`` for the 2-wide output."""
        if index == "q":
            return self.qvalues
        if not 1 <= index <= N_HIDDEN:
            raise ConfigurationError(f"no hidden layer {index}")
        return self.hidden[index - 1]


def softmax(q: np.ndarray) -> np.ndarray:
    z = q - q.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net: QNetwork, x: np.ndarray) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != N_FEATURES:
        raise ValidationError(f"expected {N_FEATURES} features, got {x.shape[-1]}")
    if not np.isfinite(x).all():
        raise ValidationError("non-finite input to forward")
    preacts, hidden = [], []
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ w + b
        h = np.maximum(z, 0.0)
        preacts.append(z)
        hidden.append(h)
    q = h @ net.weights[-1] + net.biases[-1]
    preacts.append(q)
    return ForwardTrace(x, tuple(preacts), tuple(hidden), q, softmax(q))


def _backprop(net, trace, grad_q, grad_hidden):
    """Walk the trace backwards; yields (layer index, dL/dz) from layer 5 down to 1."""
    gz = grad_q
    for li in range(len(net.weights) - 1, -1, -1):
        yield li, gz
        if li == 0:
            return
        ga = gz @ net.weights[li].T
        extra = grad_hidden[li - 1] if grad_hidden is not None else None
        if extra is not None:
            ga = ga + extra
        # ReLU'(0) taken as 0
        gz = ga * (trace.preacts[li - 1] > 0)


def backward_input(
    net: QNetwork,
    trace: ForwardTrace,
    grad_q: np.ndarray | None = None,
    grad_hidden: list | None = None,
) -> np.ndarray:
    """dL/dx given upstream gradients at the Q output and/or at hidden activations.

    ``grad_hidden`` is a length-4 list aligned with ``trace.hidden``; entries
    may be ``None``.
    """
    if grad_q is None:
        grad_q = np.zeros_like(trace.qvalues)
    gz = None
    for _, gz in _backprop(net, trace, grad_q, grad_hidden):
        pass
    return gz @ net.weights[0].T


def td_loss(net: QNetwork, x: np.ndarray, action: int, td_target: float) -> float:
    q = net.qvalues(x)
    return float((td_target - q[action]) ** 2)


def weight_gradients(
    net: QNetwork, x: np.ndarray, action: int, td_target: float, trace: ForwardTrace | None = None
) -> list[np.ndarray]:
    """Gradients of ``(td_target - Q(x, action))**2``; the target is a constant."""
    if action not in (0, 1):
        raise ValidationError(f"action must be 0 or 1, got {action}")
    if not np.isfinite(td_target):
        raise ValidationError("non-finite TD target")
    if trace is None:
        trace = forward(net, x)
    grad_q = np.zeros(LAYER_SIZES[-1])
    grad_q[action] = -2.0 * (td_target - trace.qvalues[action])
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    for li, gz in _backprop(net, trace, grad_q, None):
        a_in = trace.input if li == 0 else trace.hidden[li - 1]
        grads[2 * li] = np.outer(a_in, gz)
        grads[2 * li + 1] = gz.copy()
    return grads


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @classmethod
    def for_network(cls, net: QNetwork, learning_rate: float = 1e-4, **kw) -> "AdamState":
        params = net.parameters()
        return cls(
            [np.zeros_like(p) for p in params],
            [np.zeros_like(p) for p in params],
            learning_rate=learning_rate,
            **kw,
        )


def adam_step(state: AdamState, net: QNetwork, grads: list[np.ndarray]) -> QNetwork:
    """One bias-corrected Adam update, applied to ``net`` in place."""
    params = net.parameters()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ConfigurationError("gradient shapes do not match network parameters")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    lr = state.learning_rate / corr1
    inv2 = 1.0 / corr2
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        # in-place throughout; this runs once per training step
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        tmp = np.multiply(g, g)
        tmp *= 1.0 - b2
        v += tmp
        np.multiply(v, inv2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps_hat
        np.divide(m, tmp, out=tmp)
        tmp *= lr
        p -= tmp
    return net
