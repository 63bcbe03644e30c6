"""Small feed-forward networks with hand-written gradients.

Every actor, critic, target critic and anchor is a :class:`Network`: a ReLU
MLP whose parameters live in one flat float64 vector.  Per-layer weight and
bias arrays are views into that vector, so optimizer steps, EMA updates,
hashing and serialization all operate on ``net.params`` directly.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import FrozenNetworkError, NumericError, ShapeError


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_dims: tuple[int, ...] = (32, 32)
    output_dim: int = 1
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = self.dims
        if any(int(d) < 1 for d in dims):
            raise ShapeError(f"all layer dimensions must be >= 1, got {dims}")
        if self.activation != "relu":
            raise ShapeError(f"unsupported activation {self.activation!r}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def n_params(self) -> int:
        d = self.dims
        return sum(d[i] * d[i + 1] + d[i + 1] for i in range(len(d) - 1))


class Network:
    """ReLU MLP ``x -> affine -> relu -> ... -> affine``.

    Inputs may be a single vector of shape ``(input_dim,)`` or a batch of shape
    ``(n, input_dim)``; outputs follow the same convention.  Gradients for a
    batch are summed over rows.
    """

    def __init__(self, spec: NetworkSpec, params: np.ndarray | None = None, frozen: bool = False):
        self.spec = spec
        if params is None:
            params = np.zeros(spec.n_params)
        params = np.array(params, dtype=np.float64).ravel()
        if params.size != spec.n_params:
            raise ShapeError(f"expected {spec.n_params} parameters, got {params.size}")
        self.params = params
        self.frozen = frozen
        self._layers = self._views(self.params)

    def _views(self, flat):
        views, off = [], 0
        d = self.spec.dims
        for fan_in, fan_out in zip(d[:-1], d[1:]):
            w = flat[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
            off += fan_in * fan_out
            b = flat[off:off + fan_out]
            off += fan_out
            views.append((w, b))
        return views


    @classmethod
    def init(cls, spec: NetworkSpec, rng: np.random.Generator) -> "Network":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases."""
        net = cls(spec)
        for w, b in net._layers:
            bound = 1.0 / np.sqrt(w.shape[0])
            w[...] = rng.uniform(-bound, bound, size=w.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)
        return net

    @property
    def layers(self):
        """List of ``(weight, bias)`` views, weight shaped ``(fan_in, fan_out)``."""
        return self._layers

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.spec.input_dim:
            raise ShapeError(
                f"input shape {x.shape} incompatible with input_dim={self.spec.input_dim}")
        return x

    def forward(self, x) -> np.ndarray:
        x = self._check_input(x)
        h = x
        last = len(self._layers) - 1
        for i, (w, b) in enumerate(self._layers):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    __call__ = forward

    def forward_cached(self, x):
        """Forward pass that also returns the per-layer inputs needed by backward."""
        x = self._check_input(x)
        inputs = []
        h = x
        last = len(self._layers) - 1
        for i, (w, b) in enumerate(self._layers):
            inputs.append(h)
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h, inputs

    def backward(self, x, upstream_grad, cache=None, need_input_grad=True):
        """Gradients of ``sum(upstream_grad * forward(x))``.

        Returns ``(param_grads, input_grad)``; ``param_grads`` is flat and
        aligned with ``self.params``.  ``input_grad`` is None when
        ``need_input_grad`` is False.
        """
        if self.frozen:
            raise FrozenNetworkError("gradients requested for a frozen network")
        if cache is None:
            _, cache = self.forward_cached(x)
        g = np.asarray(upstream_grad, dtype=np.float64)
        single = cache[0].ndim == 1
        if single:
            g = g.reshape(1, -1)
            cache = [c.reshape(1, -1) for c in cache]
        if g.shape != (cache[0].shape[0], self.spec.output_dim):
            raise ShapeError(f"upstream grad shape {g.shape} does not match output")
        parts = []
        for i in range(len(self._layers) - 1, -1, -1):
            w, _ = self._layers[i]
            h_in = cache[i]
            parts.append(g.sum(axis=0))
            parts.append((h_in.T @ g).ravel())
            if i > 0:
                g = g @ w.T
                # ReLU'(pre) == (post > 0); post activation is this layer's input
                g *= h_in > 0.0
            elif need_input_grad:
                g = g @ w.T
        grads = np.concatenate(parts[::-1])
        if not need_input_grad:
            return grads, None
        return grads, (g[0] if single else g)

    def param_hash(self) -> str:
        return hashlib.sha256(self.params.tobytes()).hexdigest()

    def __repr__(self):
        return f"Network(dims={self.spec.dims}, frozen={self.frozen})"


def clone(net: Network, freeze: bool = False) -> Network:
    """Parameter-identical deep copy; ``freeze`` sets the copy's frozen flag."""
    return Network(net.spec, net.params.copy(), frozen=freeze)


def ema_update(target: Network, online: Network, tau: float) -> None:
    """In place: ``target <- tau * online + (1 - tau) * target``."""
    if target.spec != online.spec:
        raise ShapeError("EMA between networks of different specs")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if target.frozen:
        raise FrozenNetworkError("EMA update on a frozen network")
    target.params *= 1.0 - tau
    target.params += tau * online.params


@dataclass
class OptimizerState:
    """RMSProp state (uncentered, no momentum)."""
    accumulator: np.ndarray
    learning_rate: float = 4e-4
    alpha: float = 0.99
    eps: float = 0.01
    momentum: float = 0.0
    steps: int = field(default=0)

    @classmethod
    def for_network(cls, net: Network, learning_rate=4e-4, alpha=0.99, eps=0.01, momentum=0.0):
        return cls(np.zeros(net.spec.n_params), learning_rate, alpha, eps, momentum)


def rmsprop_step(net: Network, grads: np.ndarray, state: OptimizerState) -> None:
    """One in-place RMSProp step: ``s <- a*s + (1-a)*g^2; theta -= lr*g/sqrt(s+eps)``.

    Non-finite gradients raise :class:`NumericError` and leave both the network
    and the optimizer state untouched.
    """
    if net.frozen:
        raise FrozenNetworkError("optimizer step on a frozen network")
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != net.params.shape:
        raise ShapeError(f"gradient length {grads.size} != parameter count {net.params.size}")
    if not np.isfinite(grads).all():
        raise NumericError("non-finite gradient component")
    if state.momentum != 0.0:
        raise NotImplementedError("momentum RMSProp is not supported")
    acc = state.accumulator
    acc *= state.alpha
    acc += (1.0 - state.alpha) * grads * grads
    net.params -= state.learning_rate * grads / np.sqrt(acc + state.eps)
    state.steps += 1


def clip_by_global_norm(grads: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.sqrt(np.dot(grads, grads)))
    if max_norm > 0 and norm > max_norm:
        return grads * (max_norm / norm)
    return grads


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
