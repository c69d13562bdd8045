"""Small fully-connected networks with hand-written reverse-mode gradients.

Generator and discriminators are both :class:`Mlp` instances. Everything here
is value-semantic: updates return new arrays and never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HIDDEN_ACTIVATIONS = ("leaky_relu", "relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "sigmoid")


class NonFiniteError(FloatingPointError):
    """Raised when a forward/backward pass or update meets NaN or inf."""


@dataclass
class Mlp:
    """Feed-forward network. ``weights[k]`` has shape (out, in)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "leaky_relu"
    output_activation: str = "identity"
    slope: float = 0.2

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(
                    f"layer {k} expects {w.shape[1]} inputs, previous layer gives "
                    f"{self.weights[k - 1].shape[0]}"
                )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.in_dim,) + tuple(w.shape[0] for w in self.weights)

    def copy(self) -> "Mlp":
        return Mlp(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
            self.output_activation,
            self.slope,
        )

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def digest(self) -> bytes:
        """Bytes uniquely identifying the parameter values (for equality checks)."""
        return b"".join(np.ascontiguousarray(p).tobytes() for p in self.params())


@dataclass
class Gradients:
    """Per-layer parameter gradients, shaped like the network they belong to."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: Mlp) -> "Gradients":
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    def scale(self, c: float) -> "Gradients":
        return Gradients([c * w for w in self.weights], [c * b for b in self.biases])

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())


def kaiming_init(
    shape: tuple[int, ...] | list[int],
    rng: np.random.Generator,
    hidden_activation: str = "leaky_relu",
    output_activation: str = "identity",
    slope: float = 0.2,
) -> Mlp:
    """Network with weights ~ N(0, 2 / fan_in) and zero biases.

    ``shape`` lists layer widths from input to output, e.g. ``(2, 64, 64, 1)``.
    """
    dims = [int(d) for d in shape]
    if len(dims) < 2:
        raise ValueError("shape needs at least an input and an output dimension")
    if any(d <= 0 for d in dims):
        raise ValueError(f"layer dimensions must be positive, got {dims}")
    weights = [rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
               for fan_in, fan_out in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(fan_out) for fan_out in dims[1:]]
    return Mlp(weights, biases, hidden_activation, output_activation, slope)


def _act(name: str, z: np.ndarray, slope: float) -> np.ndarray:
    if name == "leaky_relu":
        # valid for slope <= 1
        return np.maximum(z, slope * z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return sigmoid(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray, slope: float) -> np.ndarray:
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, slope)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_input(net: Mlp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] != net.in_dim:
        raise ValueError(f"expected a nonempty (B, {net.in_dim}) batch, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("input batch contains non-finite values")
    return x


def _forward_cache(net: Mlp, x: np.ndarray, logits: bool):
    """Forward pass keeping pre-activations ``zs`` and activations ``acts``."""
    acts = [x]
    zs = []
    n = len(net.weights)
    h = x
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        zs.append(z)
        if k < n - 1:
            h = _act(net.hidden_activation, z, net.slope)
        else:
            h = z if logits else _act(net.output_activation, z, net.slope)
        acts.append(h)
    return zs, acts


def forward(net: Mlp, x: np.ndarray, logits: bool = False) -> np.ndarray:
    """Network output for batch ``x``; ``logits=True`` skips the output activation."""
    x = _check_input(net, x)
    return _forward_cache(net, x, logits)[1][-1]


def forward_backward(
    net: Mlp, x: np.ndarray, upstream: np.ndarray, logits: bool = False
) -> tuple[np.ndarray, Gradients, np.ndarray]:
    """Outputs plus exact gradients of ``sum(outputs * upstream)``.

    Returns ``(outputs, parameter gradients, input gradients)``.
    """
    x = _check_input(net, x)
    zs, acts = _forward_cache(net, x, logits)
    grads, gx = _backward(net, zs, acts, upstream, logits)
    return acts[-1], grads, gx


def forward_then_backward(net: Mlp, x: np.ndarray, upstream_fn, logits: bool = False):
    """Like :func:`forward_backward` but the upstream gradient is computed from the outputs.

    ``upstream_fn(outputs) -> (value, upstream)``; returns ``(value, grads, input_grads)``.
    Saves a second forward pass when the loss depends on the outputs.
    """
    x = _check_input(net, x)
    zs, acts = _forward_cache(net, x, logits)
    value, upstream = upstream_fn(acts[-1])
    grads, gx = _backward(net, zs, acts, upstream, logits)
    return value, grads, gx


def _backward(net: Mlp, zs, acts, upstream, logits: bool) -> tuple[Gradients, np.ndarray]:
    out = acts[-1]
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != out.shape:
        raise ValueError(f"upstream gradient {upstream.shape} does not match output {out.shape}")
    n = len(net.weights)
    dws: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    out_act = "identity" if logits else net.output_activation
    delta = upstream * _act_grad(out_act, zs[-1], out, net.slope)
    for k in range(n - 1, -1, -1):
        dws[k] = delta.T @ acts[k]
        dbs[k] = delta.sum(axis=0)
        g = delta @ net.weights[k]
        if k > 0:
            delta = g * _act_grad(net.hidden_activation, zs[k - 1], acts[k], net.slope)
    return Gradients(dws, dbs), g


def input_gradient_penalty(net: Mlp, x: np.ndarray) -> tuple[float, Gradients]:
    """Mean of ``(||d score / d x|| - 1)^2`` over the batch and its parameter gradient.

    The score is the network's identity output. Needs a piecewise-linear hidden
    activation: the input-gradient is then a masked linear map of the weights,
    so its own parameter gradient is one backward pass through that map
    (forward-over-reverse with the activation masks held fixed).
    """
    if net.hidden_activation not in ("leaky_relu", "relu"):
        raise ValueError("gradient penalty requires a piecewise-linear hidden activation")
    if net.out_dim != 1:
        raise ValueError("gradient penalty requires a scalar-output network")
    x = _check_input(net, x)
    bsz = x.shape[0]
    zs, acts = _forward_cache(net, x, logits=True)
    n = len(net.weights)
    masks = [_act_grad(net.hidden_activation, z, None, net.slope) for z in zs[:-1]]

    # reverse pass for g = d score / d x, per sample
    delta = np.ones((bsz, 1))
    for k in range(n - 1, -1, -1):
        delta = delta @ net.weights[k]
        if k > 0:
            delta = delta * masks[k - 1]
    g = delta
    norms = np.sqrt(np.sum(g * g, axis=1))
    penalty = float(np.mean((norms - 1.0) ** 2))

    # d penalty / d theta = sum_i d(g_i . v_i)/d theta with v_i held fixed
    safe = np.where(norms > 0, norms, 1.0)
    v = (2.0 * (norms - 1.0) / safe / bsz)[:, None] * g
    # g_i . v_i is the tangent network output: t_0 = v, t_k = m_k * (W_k t_{k-1}), s = W_n t_{n-1}
    ts = [v]
    t = v
    for k in range(n):
        t = t @ net.weights[k].T
        if k < n - 1:
            t = t * masks[k]
        ts.append(t)
    dws: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    dbs = [np.zeros_like(b) for b in net.biases]
    d = np.ones((bsz, 1))
    for k in range(n - 1, -1, -1):
        dws[k] = d.T @ ts[k]
        d = d @ net.weights[k]
        if k > 0:
            d = d * masks[k - 1]
    return penalty, Gradients(dws, dbs)


@dataclass
class OptimizerState:
    """SGD or Adam state. Moment buffers are created lazily on the first step."""

    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def optimizer_step(net: Mlp, grads: Gradients, state: OptimizerState) -> tuple[Mlp, OptimizerState]:
    """One descent step. Returns a new network and a new state."""
    params = net.params()
    gs = grads.params()
    if len(params) != len(gs) or any(p.shape != g.shape for p, g in zip(params, gs)):
        raise ValueError("gradient shapes do not match the network")
    if not grads.is_finite():
        raise NonFiniteError(f"non-finite gradient at optimizer step {state.step + 1}")

    lr = state.learning_rate
    if state.kind == "sgd":
        new = [p - lr * g for p, g in zip(params, gs)]
        m, v = state.m, state.v
    else:
        m0 = state.m or [np.zeros_like(p) for p in params]
        v0 = state.v or [np.zeros_like(p) for p in params]
        if any(a.shape != p.shape for a, p in zip(m0, params)):
            raise ValueError("optimizer moments do not match the network")
        t = state.step + 1
        m = [state.beta1 * a + (1 - state.beta1) * g for a, g in zip(m0, gs)]
        v = [state.beta2 * a + (1 - state.beta2) * g * g for a, g in zip(v0, gs)]
        c1 = 1 - state.beta1**t
        c2 = 1 - state.beta2**t
        new = [p - lr * (a / c1) / (np.sqrt(b / c2) + state.eps) for p, a, b in zip(params, m, v)]
    n = len(net.weights)
    out = Mlp(new[:n], new[n:], net.hidden_activation, net.output_activation, net.slope)
    new_state = OptimizerState(
        state.kind, lr, state.beta1, state.beta2, state.eps, state.step + 1, m, v
    )
    return out, new_state
