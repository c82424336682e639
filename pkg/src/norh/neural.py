"""Dense-network engine: forward pass, exact backprop, Adam, training loop.

Everything is 64-bit and deterministic: initialization and per-epoch
shuffling draw from the package PRNG, never from global state.
"""

from dataclasses import dataclass, field

import numpy as np

from . import stochastic

_ACTIVATIONS = ("tanh", "relu", "identity")

CHECKPOINT_HEADER = "norh-mlp v1"


@dataclass
class MlpNetwork:
    """Fully connected network; hidden layers use `activation`, the output
    layer is affine."""

    layer_widths: list
    weights: list = field(repr=False)   # weights[l]: d_{l+1} x d_l
    biases: list = field(repr=False)
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        L = len(self.layer_widths) - 1
        if len(self.weights) != L or len(self.biases) != L:
            raise ValueError("parameter list length does not match layer_widths")
        for l in range(L):
            d_in, d_out = self.layer_widths[l], self.layer_widths[l + 1]
            if self.weights[l].shape != (d_out, d_in):
                raise ValueError(f"weight {l} has shape {self.weights[l].shape}, "
                                 f"expected {(d_out, d_in)}")
            if self.biases[l].shape != (d_out,):
                raise ValueError(f"bias {l} has shape {self.biases[l].shape}")

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def output_width(self) -> int:
        return self.layer_widths[-1]

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(list(self.layer_widths),
                          [w.copy() for w in self.weights],
                          [b.copy() for b in self.biases],
                          self.activation)


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=np.float64))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets must have equal row counts")
        if not (np.isfinite(self.inputs).all() and np.isfinite(self.targets).all()):
            raise ValueError("dataset contains non-finite entries")

    @property
    def rows(self) -> int:
        return self.inputs.shape[0]


def init_network(layer_widths, activation: str = "tanh", seed: int = 0) -> MlpNetwork:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    widths = [int(w) for w in layer_widths]
    if any(w < 1 for w in widths):
        raise ValueError("all layer widths must be positive")
    weights, biases = [], []
    for l in range(len(widths) - 1):
        d_in, d_out = widths[l], widths[l + 1]
        bound = np.sqrt(6.0 / (d_in + d_out))
        u = stochastic.uniform(d_out * d_in, seed, stream=l)
        weights.append(((2.0 * u - 1.0) * bound).reshape(d_out, d_in))
        biases.append(np.zeros(d_out))
    return MlpNetwork(widths, weights, biases, activation)


def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    return x


def _act_grad(name: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - y * y
    if name == "relu":
        return (x > 0.0).astype(np.float64)
    return np.ones_like(x)


def forward_batch(net: MlpNetwork, X: np.ndarray) -> np.ndarray:
    """Evaluate the network on rows of X (N x d_0 -> N x d_L)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != net.input_width:
        raise ValueError(f"expected input width {net.input_width}, got {X.shape[1]}")
    a = X
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W.T + b
        a = z if l == last else _act(net.activation, z)
    return a


def mlp_forward(net: MlpNetwork, x) -> np.ndarray:
    """Single-sample forward pass."""
    return forward_batch(net, np.asarray(x, dtype=np.float64).reshape(1, -1))[0]


def _forward_cache(net: MlpNetwork, X: np.ndarray):
    """Forward pass keeping pre- and post-activations for backprop."""
    acts = [X]
    pre = []
    a = X
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W.T + b
        pre.append(z)
        a = z if l == last else _act(net.activation, z)
        acts.append(a)
    return pre, acts


def backward_from_output_grad(net: MlpNetwork, pre, acts, dY: np.ndarray):
    """Exact gradients of a scalar loss given dLoss/dOutput for each row.

    Returns (weight grads, bias grads, dLoss/dInput).
    """
    L = len(net.weights)
    dW = [None] * L
    db = [None] * L
    delta = dY
    for l in range(L - 1, -1, -1):
        if l != L - 1:
            delta = delta * _act_grad(net.activation, pre[l], acts[l + 1])
        dW[l] = delta.T @ acts[l]
        db[l] = delta.sum(axis=0)
        delta = delta @ net.weights[l]
    return dW, db, delta


def mse_loss_and_gradients(net: MlpNetwork, batch: Dataset):
    """Mean over rows of the squared error summed over output dims, and its
    exact parameter gradients."""
    if batch.rows == 0:
        raise ValueError("batch must be nonempty")
    pre, acts = _forward_cache(net, batch.inputs)
    resid = acts[-1] - batch.targets
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    dY = 2.0 * resid / batch.rows
    dW, db, _ = backward_from_output_grad(net, pre, acts, dY)
    return loss, (dW, db)


@dataclass
class AdamState:
    m_weights: list = field(repr=False)
    v_weights: list = field(repr=False)
    m_biases: list = field(repr=False)
    v_biases: list = field(repr=False)
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8

    @classmethod
    def for_network(cls, net: MlpNetwork, learning_rate: float = 0.001) -> "AdamState":
        return cls(
            m_weights=[np.zeros_like(w) for w in net.weights],
            v_weights=[np.zeros_like(w) for w in net.weights],
            m_biases=[np.zeros_like(b) for b in net.biases],
            v_biases=[np.zeros_like(b) for b in net.biases],
            learning_rate=learning_rate,
        )


def _adam_update(theta, g, m, v, state: "AdamState", t: int):
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    theta -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon_hat)


def adam_step(net: MlpNetwork, state: AdamState, gradients):
    """One bias-corrected Adam update, in place; returns (net, state)."""
    dW, db = gradients
    if len(dW) != len(net.weights) or len(db) != len(net.biases):
        raise ValueError("gradient list length does not match network")
    for g, w in zip(dW, net.weights):
        if g.shape != w.shape:
            raise ValueError("weight gradient shape mismatch")
    for g, b in zip(db, net.biases):
        if g.shape != b.shape:
            raise ValueError("bias gradient shape mismatch")
    state.step_count += 1
    t = state.step_count
    for l in range(len(net.weights)):
        _adam_update(net.weights[l], dW[l], state.m_weights[l],
                     state.v_weights[l], state, t)
        _adam_update(net.biases[l], db[l], state.m_biases[l],
                     state.v_biases[l], state, t)
    return net, state


def shuffled_indices(rows: int, seed: int, stream: int) -> np.ndarray:
    """Deterministic permutation: argsort of one PRNG word per row."""
    keys = stochastic._raw_words(seed, stream, rows)
    return np.argsort(keys, kind="stable")


def train(net: MlpNetwork, data: Dataset, epochs: int, batch_size: int,
          lr: float, seed: int):
    """Mini-batch Adam training with per-epoch reshuffling.

    Returns (net, loss_history) where loss_history[e] is the row-weighted
    mean batch loss of epoch e.  Pure function of its arguments.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > data.rows:
        raise ValueError(f"batch_size {batch_size} exceeds dataset rows {data.rows}")
    state = AdamState.for_network(net, learning_rate=lr)
    history = []
    for epoch in range(epochs):
        order = shuffled_indices(data.rows, seed, stream=epoch)
        loss_sum = 0.0
        for start in range(0, data.rows, batch_size):
            idx = order[start:start + batch_size]
            batch = Dataset(data.inputs[idx], data.targets[idx])
            loss, grads = mse_loss_and_gradients(net, batch)
            adam_step(net, state, grads)
            loss_sum += loss * idx.size
        history.append(loss_sum / data.rows)
    return net, history


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def save_checkpoint(net: MlpNetwork, path) -> None:
    """Versioned text checkpoint; 17 significant digits round-trip float64
    exactly."""
    lines = [CHECKPOINT_HEADER,
             "widths: " + " ".join(str(w) for w in net.layer_widths),
             f"activation: {net.activation}"]
    for W, b in zip(net.weights, net.biases):
        for row in W:
            lines.append(" ".join(_fmt(v) for v in row))
        lines.append(" ".join(_fmt(v) for v in b))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> MlpNetwork:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    return _parse_checkpoint_lines(lines)


def _parse_checkpoint_lines(lines) -> MlpNetwork:
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ValueError(f"not a {CHECKPOINT_HEADER!r} checkpoint")
    if not lines[1].startswith("widths: "):
        raise ValueError("missing widths line")
    widths = [int(t) for t in lines[1][len("widths: "):].split()]
    if not lines[2].startswith("activation: "):
        raise ValueError("missing activation line")
    activation = lines[2][len("activation: "):]
    weights, biases = [], []
    pos = 3
    for l in range(len(widths) - 1):
        d_in, d_out = widths[l], widths[l + 1]
        W = np.array([[float(t) for t in lines[pos + r].split()]
                      for r in range(d_out)])
        pos += d_out
        b = np.array([float(t) for t in lines[pos].split()])
        pos += 1
        weights.append(W.reshape(d_out, d_in))
        biases.append(b)
    return MlpNetwork(widths, weights, biases, activation)
